//! Adaptive Gauss–Kronrod quadrature and geometric-shell integration for
//! integrands with a power-law singularity at 0 or a slowly decaying tail.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 || (b - a).abs() < 1e-15 * a.abs().max(b.abs()).max(1e-300) {
        return (v, err);
    }
    let m = 0.5 * (a + b);
    let (l, el) = adapt(f, a, m, 0.5 * tol, depth - 1);
    let (r, er) = adapt(f, m, b, 0.5 * tol, depth - 1);
    (l + r, el + er)
}

/// Adaptive G7/K15 on a finite interval, to absolute tolerance `abs_tol`
/// or relative tolerance `rel_tol` (whichever is looser).
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (rough, _) = gk15(&f, a, b);
    let tol = abs_tol.max(rel_tol * rough.abs());
    adapt(&f, a, b, tol, 40).0
}

/// Outcome of a shell integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShellOutcome {
    Converged(f64),
    /// Shell contributions stopped decaying; carries the last shell boundary.
    Divergent(f64),
}

/// Integrates `f` over `(0, b]` by summing dyadic shells `[b 2^{-k-1}, b 2^{-k}]`.
/// A power-law tail of shells is summed geometrically once the shell ratio
/// has stabilized.
pub fn integrate_to_zero(f: impl Fn(f64) -> f64, b: f64, rel_tol: f64) -> ShellOutcome {
    shells(&f, b, 0.5, rel_tol)
}

/// Integrates `f` over `[a, ∞)` by summing shells `[a 2^k, a 2^{k+1}]`.
pub fn integrate_to_infinity(f: impl Fn(f64) -> f64, a: f64, rel_tol: f64) -> ShellOutcome {
    shells(&f, a, 2.0, rel_tol)
}

fn shells(f: &impl Fn(f64) -> f64, start: f64, factor: f64, rel_tol: f64) -> ShellOutcome {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    let mut prev_ratio: Option<f64> = None;
    let mut growing = 0;
    let mut edge = start;
    for k in 0..1000 {
        let next = edge * factor;
        if next == 0.0 || !next.is_finite() {
            break;
        }
        let (lo, hi) = if factor < 1.0 { (next, edge) } else { (edge, next) };
        let s = integrate(f, lo, hi, 1e-300, rel_tol * 1e-2);
        total += s;
        edge = next;
        if let Some(p) = prev {
            if s.abs() <= 1e-300 && p.abs() <= 1e-300 {
                return ShellOutcome::Converged(total);
            }
            let ratio = if p != 0.0 { s / p } else { f64::INFINITY };
            if k > 8 && ratio >= 0.999 {
                growing += 1;
                if growing >= 8 {
                    return ShellOutcome::Divergent(edge);
                }
            } else {
                growing = 0;
            }
            if let Some(pr) = prev_ratio {
                let stable = (ratio - pr).abs() <= 1e-3 * pr.abs().max(1e-12);
                if ratio < 0.999 && ratio >= 0.0 && (stable || ratio < 0.5) {
                    let tail = s * ratio / (1.0 - ratio);
                    if tail.abs() <= rel_tol * total.abs() || s.abs() <= 1e-300 {
                        return ShellOutcome::Converged(total + tail);
                    }
                }
            }
            prev_ratio = Some(ratio);
        }
        prev = Some(s);
    }
    if growing > 0 {
        ShellOutcome::Divergent(edge)
    } else {
        ShellOutcome::Converged(total)
    }
}
