fn main() {
    std::process::exit(gruschin_harnack::cli::run(std::env::args_os()));
}
