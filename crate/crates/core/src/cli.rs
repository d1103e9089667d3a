//! Command-line front end: config loading, overrides, dispatch and report files.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::bernstein::BernsteinFunction;
use crate::config::{is_input_error, ConfigError, ExperimentConfig};
use crate::coupling::entropy_estimate;
use crate::error::Error;
use crate::gruschin::{euler, Clocks};
use crate::harnack::{evaluate_inequality, fit_constant, scaling_study, sweep, HarnackSetup};
use crate::moments::{c_constant, gaussian_negative_moment, GaussianSpec};
use crate::parallel::map_paths;
use crate::rng::{tags, StreamFactory};
use crate::stats::{round_sig, Estimate};
use crate::subordinator::sample_path_with;

pub const VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FALSIFIED: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

const DEFAULT_CONFIG: &str = include_str!("../configs/default.json");

#[derive(Debug, Parser)]
#[command(name = "gruschin", version, about = "Monte Carlo checks of log-Harnack inequalities for subordinated Gruschin SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON experiment config (the built-in default if omitted).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of paths (for `moments`, number of samples).
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Time steps per horizon `T`.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Output directory for reports and tables.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Randomized QMC for semigroup estimates.
    #[arg(long, global = true)]
    pub qmc: bool,
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Subordinator paths on [0, T] as a long-format CSV.
    SampleSubordinator,
    /// Euler paths of the SDE from `points.x` on [0, T].
    Simulate,
    /// Coupling entropy E[R log R] for `points.x`, `points.y`.
    Couple,
    /// Both sides of the log-Harnack inequality, plus the sweep and fitted constant if configured.
    Harnack,
    /// Log-log slopes of the bound terms against T.
    ScalingStudy,
    /// Gaussian negative moments against their analytic bound.
    Moments,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SampleSubordinator => "sample-subordinator",
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::Harnack => "harnack",
            Command::ScalingStudy => "scaling-study",
            Command::Moments => "moments",
        }
    }
}

enum Failure {
    Config(ConfigError),
    Numeric(Error),
    Io(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if is_input_error(&e) {
            Failure::Config(ConfigError {
                path: "config".into(),
                message: e.to_string(),
            })
        } else {
            Failure::Numeric(e)
        }
    }
}

struct Outcome {
    result: Value,
    tables: Vec<(&'static str, String)>,
    falsified: bool,
    summary: String,
    warnings: Vec<String>,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Rounds every non-integer number to 12 significant digits.
fn round_numbers(v: &mut Value) {
    match v {
        Value::Number(n) if !(n.is_i64() || n.is_u64()) => {
            if let Some(x) = n.as_f64() {
                *v = json!(round_sig(x, 12));
            }
        }
        Value::Array(a) => a.iter_mut().for_each(round_numbers),
        Value::Object(o) => o.values_mut().for_each(round_numbers),
        _ => {}
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
        Err(Failure::Numeric(e)) => {
            eprintln!("numeric failure: {e}");
            EXIT_NUMERIC
        }
        Err(Failure::Io(e)) => {
            eprintln!("i/o error: {e}");
            EXIT_NUMERIC
        }
    }
}

/// Loads the config named on the command line and applies the flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::from_json(DEFAULT_CONFIG)?,
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = Some(s);
    }
    if let Some(n) = cli.paths {
        cfg.run.n_paths = n;
        if let (Command::Moments, Some(m)) = (cli.command, cfg.moments.as_mut()) {
            m.n_samples = n;
        }
    }
    if let Some(n) = cli.steps {
        cfg.run.n_steps = n;
    }
    if cli.qmc {
        cfg.run.qmc = true;
    }
    if let Some(o) = &cli.out {
        cfg.output.dir = o.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<i32, Failure> {
    let cfg = resolve_config(cli)?;
    let outcome = match cli.command {
        Command::SampleSubordinator => sample_subordinator(&cfg)?,
        Command::Simulate => simulate(&cfg)?,
        Command::Couple => couple(&cfg)?,
        Command::Harnack => harnack(&cfg)?,
        Command::ScalingStudy => scaling(&cfg)?,
        Command::Moments => moments(&cfg)?,
    };
    let dir = Path::new(&cfg.output.dir);
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    let mut report = json!({
        "version": VERSION,
        "command": cli.command.name(),
        "config": to_value(&cfg),
        "falsified": outcome.falsified,
        "warnings": outcome.warnings,
        "result": outcome.result,
    });
    round_numbers(&mut report);
    let text = serde_json::to_string_pretty(&report).expect("json") + "\n";
    let write = |name: &str, body: &str| {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Failure::Io(format!("{}: {e}", p.display())))
    };
    write(&format!("{}.json", cli.command.name()), &text)?;
    for (name, body) in &outcome.tables {
        write(name, body)?;
    }
    if !cli.quiet {
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
        println!("{}", outcome.summary);
        if outcome.falsified {
            println!("FALSIFIED: an inequality is violated beyond its 3 SE slack; see {}.json", cli.command.name());
        }
    }
    Ok(if outcome.falsified { EXIT_FALSIFIED } else { EXIT_OK })
}

fn base_streams(cfg: &ExperimentConfig) -> Result<StreamFactory, ConfigError> {
    Ok(StreamFactory::new(cfg.seed()?))
}

fn sample_subordinator(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let (phi, sampler): (BernsteinFunction, _) = match (&cfg.subordinator, &cfg.clocks(cfg.run.horizon)?) {
        (Some(s), _) => (
            s.phi.build().map_err(|e| ConfigError {
                path: "subordinator.phi".into(),
                message: e.to_string(),
            })?,
            s.sampler,
        ),
        (None, Clocks::Subordinated { phi1, sampler, .. }) => (phi1.clone(), *sampler),
        (None, Clocks::Deterministic { .. }) => {
            return Err(ConfigError {
                path: "subordinator".into(),
                message: "needed when the clocks are deterministic".into(),
            }
            .into())
        }
    };
    let r = &cfg.run;
    let streams = base_streams(cfg)?.derive(tags::SUBORDINATOR);
    let paths = map_paths(r.n_paths, |i| sample_path_with(&phi, r.horizon, r.n_steps, sampler, &mut streams.stream(i as u64)))?;
    let mut csv = String::from("path_id,t,S\n");
    for (i, p) in paths.iter().enumerate() {
        for (t, s) in p.times.iter().zip(&p.values) {
            csv.push_str(&format!("{i},{t},{s}\n"));
        }
    }
    let terminal = Estimate::from_samples(&paths.iter().map(|p| p.terminal()).collect::<Vec<_>>());
    let analytic = phi.mean_rate().map(|m| m * r.horizon);
    Ok(Outcome {
        result: json!({
            "subordinator": phi.label(),
            "terminal_mean": terminal,
            "analytic_mean": analytic,
        }),
        tables: vec![("subordinator.csv", csv)],
        falsified: false,
        summary: format!("{}: E S(T) = {:.6} ± {:.2e}", phi.label(), terminal.mean, terminal.std_error),
        warnings: vec![],
    })
}

fn simulate(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let model = cfg.model()?;
    let clocks = cfg.clocks(cfg.run.horizon)?;
    let r = &cfg.run;
    let x = &cfg.points.x;
    let streams = base_streams(cfg)?;
    let fixed = match &clocks {
        Clocks::Deterministic { .. } => Some(clocks.realize(r.horizon, r.n_steps, &mut streams.stream(0))?),
        Clocks::Subordinated { .. } => None,
    };
    let paths = map_paths(r.n_paths, |i| {
        let mut rng = streams.stream(i as u64);
        let inc = match &fixed {
            Some(inc) => inc.clone(),
            None => clocks.realize(r.horizon, r.n_steps, &mut rng)?,
        };
        let mut states = Vec::with_capacity(r.n_steps + 1);
        euler(&model, x, &inc, &mut rng, |_, s| states.push(s.flat()))?;
        Ok((inc.grid, states))
    })?;
    let (m, d) = (model.m(), model.d());
    let mut csv = String::from("path_id,t");
    (0..m).for_each(|j| csv.push_str(&format!(",x1_{j}")));
    (0..d).for_each(|j| csv.push_str(&format!(",x2_{j}")));
    csv.push('\n');
    for (i, (grid, states)) in paths.iter().enumerate() {
        for (t, s) in grid.iter().zip(states) {
            csv.push_str(&format!("{i},{t}"));
            s.iter().for_each(|v| csv.push_str(&format!(",{v}")));
            csv.push('\n');
        }
    }
    let terminal: Vec<Estimate> = (0..m + d)
        .map(|j| Estimate::from_samples(&paths.iter().map(|(_, s)| s.last().unwrap()[j]).collect::<Vec<_>>()))
        .collect();
    Ok(Outcome {
        summary: format!("simulated {} paths with {} steps", r.n_paths, r.n_steps),
        result: json!({ "terminal_mean": terminal }),
        tables: vec![("paths.csv", csv)],
        falsified: false,
        warnings: vec![],
    })
}

fn couple(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let model = cfg.model()?;
    let r = &cfg.run;
    let clocks = cfg.clocks(r.horizon)?;
    let rep = entropy_estimate(
        &model,
        &cfg.points.x,
        &cfg.points.y,
        &clocks,
        r.horizon,
        r.n_paths,
        r.n_steps,
        &cfg.coupling_options(),
        &base_streams(cfg)?.derive(tags::COUPLING),
    )?;
    Ok(Outcome {
        summary: format!(
            "E[R log R] = {:.6} ± {:.2e}, E R = {:.6} ± {:.2e}",
            rep.entropy.mean, rep.entropy.std_error, rep.er_mean.mean, rep.er_mean.std_error
        ),
        result: json!({
            "entropy": rep.entropy.mean,
            "std_error": rep.entropy.std_error,
            "er_mean": rep.er_mean,
            "tau1_max": rep.tau1_max,
            "tau2_max": rep.tau2_max,
            "clip_count": rep.clip_count,
            "details": rep,
        }),
        tables: vec![],
        falsified: false,
        warnings: rep.warnings.clone(),
    })
}

fn harnack(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let model = cfg.model()?;
    model.require_harnack_range().map_err(|e| ConfigError {
        path: "model.l".into(),
        message: e.to_string(),
    })?;
    let r = &cfg.run;
    let clocks = cfg.clocks(r.horizon)?;
    let f = cfg.test_function()?;
    let setup = HarnackSetup {
        model: &model,
        f: &f,
        clocks: &clocks,
        n_paths: r.n_paths,
        n_steps: r.n_steps,
        coupling: cfg.coupling_options(),
        qmc: r.qmc,
    };
    let streams = base_streams(cfg)?;
    let report = evaluate_inequality(&setup, &cfg.points.x, &cfg.points.y, r.horizon, &streams)?;
    let mut falsified = !report.coupling_bound_holds(3.0);
    let mut warnings = report.warnings.clone();
    let mut summary = format!(
        "lhs = {:.6}, rhs_log + entropy = {:.6}, margin = {:.3e} ± {:.2e}",
        report.lhs.mean,
        report.rhs_log.mean + report.entropy.mean,
        report.margin,
        report.margin_se
    );
    let (sweep_reports, fit) = match &cfg.sweep {
        Some(spec) => {
            let max_t = spec.horizons.iter().copied().fold(r.horizon, f64::max);
            let sweep_clocks = cfg.clocks(max_t)?;
            let sweep_setup = HarnackSetup {
                clocks: &sweep_clocks,
                ..setup.clone()
            };
            let reps = sweep(&sweep_setup, &cfg.points.x, spec, &streams)?;
            let fit = fit_constant(&reps)?;
            falsified |= reps.iter().any(|r| !r.coupling_bound_holds(3.0)) || !fit.falsifications.is_empty();
            for r in &reps {
                warnings.extend(r.warnings.iter().cloned());
            }
            summary.push_str(&format!("\nfitted C = {:.6e} over {} configurations", fit.fitted_c, reps.len()));
            (Some(reps), Some(fit))
        }
        None => (None, None),
    };
    Ok(Outcome {
        result: json!({ "report": report, "sweep": sweep_reports, "fit": fit }),
        tables: vec![],
        falsified,
        summary,
        warnings,
    })
}

fn scaling(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let sc = cfg.scaling.as_ref().ok_or_else(|| ConfigError {
        path: "scaling".into(),
        message: "block required for scaling-study".into(),
    })?;
    let rep = scaling_study(sc.example, &sc.params(), &sc.t_grid, cfg.run.n_paths, &base_streams(cfg)?.derive(tags::BOUND_TERMS))?;
    let summary = rep
        .slopes
        .iter()
        .map(|s| format!("{}: slope {:.4} ± {:.4} (predicted {:.4})", s.term, s.slope, s.slope_se, s.predicted))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Outcome {
        tables: vec![("scaling.csv", rep.to_csv())],
        result: to_value(&rep),
        falsified: false,
        summary,
        warnings: vec![],
    })
}

fn moments(cfg: &ExperimentConfig) -> Result<Outcome, Failure> {
    let mc = cfg.moments.as_ref().ok_or_else(|| ConfigError {
        path: "moments".into(),
        message: "block required for moments".into(),
    })?;
    let c = c_constant(mc.m, mc.theta)?;
    let analytic = c * mc.sigma2.powf(-mc.theta);
    let streams = base_streams(cfg)?.derive(tags::MOMENTS);
    let mut shifts = vec![vec![0.0; mc.m]];
    shifts.extend(mc.mu_grid.iter().filter(|mu| mu.iter().any(|&v| v != 0.0)).cloned());
    let mut rows = Vec::new();
    let mut falsified = false;
    let mut warnings = Vec::new();
    for (j, mu) in shifts.into_iter().enumerate() {
        let spec = GaussianSpec {
            m: mc.m,
            sigma2: mc.sigma2,
            mu,
        };
        let rep = gaussian_negative_moment(&spec, mc.theta, mc.n_samples, &streams.derive(j as u64))?;
        let violated = rep.mc.mean > rep.analytic_bound + 3.0 * rep.mc.std_error;
        falsified |= violated;
        warnings.extend(rep.warnings.iter().cloned());
        rows.push(json!({ "mu": spec.mu, "report": rep, "bound_violated": violated }));
    }
    warnings.dedup();
    let origin = &rows[0]["report"]["mc"];
    Ok(Outcome {
        summary: format!(
            "c(m, θ) σ^-θ = {analytic:.6}; MC at μ = 0: {:.6} ± {:.2e}",
            origin["mean"].as_f64().unwrap_or(f64::NAN),
            origin["std_error"].as_f64().unwrap_or(f64::NAN)
        ),
        result: json!({ "c_constant": c, "analytic": analytic, "rows": rows }),
        tables: vec![],
        falsified,
        warnings,
    })
}
