//! Both sides of the log-Harnack inequality
//! `P_{2T} log f(y) <= log P_{2T} f(x) + cost(x, y, T)`, the bound terms that
//! make up the explicit cost, empirical fitting of its unknown constant, and
//! scaling studies of the bound terms in `T`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bernstein::BernsteinFunction;
use crate::coupling::{simulate_couplings, summarize, CouplingOptions};
use crate::error::{invalid, Error, Result};
use crate::gruschin::{endpoint_values, norm, semigroup_qmc, ClockIncrements, Clocks, GruschinModel, StatePoint};
use crate::parallel::map_paths;
use crate::rng::{tags, StreamFactory};
use crate::stats::{combined_se, linear_fit, Estimate};
use crate::subordinator;

/// Bounded test functions `f >= 1`.
#[derive(Clone)]
pub enum TestFunction {
    /// `f(z) = 1 + a exp(-|z - z0|² / w)`.
    Bump { a: f64, w: f64, z0: Vec<f64> },
    Constant(f64),
    Custom(Arc<dyn Fn(&StatePoint) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Bump { a, w, z0 } => write!(f, "Bump(a={a}, w={w}, z0={z0:?})"),
            Self::Constant(c) => write!(f, "Constant({c})"),
            Self::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl TestFunction {
    pub fn bump(a: f64, w: f64, z0: Vec<f64>) -> Result<Self> {
        if !(a > 0.0 && a <= 10.0) {
            return Err(invalid("a", format!("must lie in (0, 10], got {a}")));
        }
        if !(w > 0.0 && w.is_finite()) {
            return Err(invalid("w", format!("must be positive, got {w}")));
        }
        Ok(Self::Bump { a, w, z0 })
    }

    pub fn constant(c: f64) -> Result<Self> {
        if c >= 1.0 && c.is_finite() {
            Ok(Self::Constant(c))
        } else {
            Err(Error::TestFunctionBelowOne(c))
        }
    }

    pub fn eval(&self, z: &StatePoint) -> f64 {
        match self {
            Self::Bump { a, w, z0 } => {
                let d2: f64 = z.x1.iter().chain(&z.x2).zip(z0).map(|(p, q)| (p - q) * (p - q)).sum();
                1.0 + a * (-d2 / w).exp()
            }
            Self::Constant(c) => *c,
            Self::Custom(f) => f(z),
        }
    }

    fn check_dim(&self, model: &GruschinModel) -> Result<()> {
        if let Self::Bump { z0, .. } = self {
            if z0.len() != model.m() + model.d() {
                return Err(invalid("z0", format!("must have length m + d = {}", model.m() + model.d())));
            }
        }
        Ok(())
    }
}

/// Expectations entering the explicit cost, with `G1 = ∫_0^T λ^{-2} dℓ1`,
/// `H2 = ∫_T^{2T} e^{-2K(T,s)} dℓ2` and `N2 = ∫_0^T e^{-2K(0,s)} dℓ2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundTerms {
    /// `E G1^{-1}`
    pub term_w1: Estimate,
    /// `E G1^{-l}`
    pub term_l: Estimate,
    /// `E G1^{-(l ∧ 1)}`
    pub term_lw1: Estimate,
    /// `E H2^{-1}`
    pub term_s2inv: Estimate,
    /// `E [N2 / H2]`
    pub term_ratio: Estimate,
}

struct ClockFunctionals {
    g1: f64,
    h2: f64,
    n2: f64,
}

fn functionals(model: &GruschinModel, inc: &ClockIncrements, horizon: f64) -> ClockFunctionals {
    let n = inc.dl1.len() / 2;
    let grid = &inc.grid;
    let mut g1 = 0.0;
    let mut n2 = 0.0;
    let mut h2 = 0.0;
    for i in 0..n {
        g1 += model.lambda().at(grid[i + 1]).powi(-2) * inc.dl1[i];
        n2 += (-2.0 * model.big_k(0.0, grid[i + 1])).exp() * inc.dl2[i];
    }
    for i in n..2 * n {
        h2 += (-2.0 * model.big_k(horizon, grid[i + 1])).exp() * inc.dl2[i];
    }
    ClockFunctionals { g1, h2, n2 }
}

/// Monte Carlo (or exact, for deterministic clocks) bound terms. With constant
/// `λ` and `k ≡ 0` the functionals only need `S(T)` and `S(2T) - S(T)`, so one
/// cell per half-horizon is used regardless of `n_steps`.
pub fn bound_terms(
    model: &GruschinModel,
    clocks: &Clocks,
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    streams: &StreamFactory,
) -> Result<BoundTerms> {
    if let Clocks::Subordinated { phi1, phi2, .. } = clocks {
        for phi in [phi1, phi2] {
            if phi.has_atom_at_zero() {
                return Err(Error::UndefinedNegativeMoment(format!("{} has P(S(T) = 0) > 0", phi.label())));
            }
        }
    }
    let l = model.l();
    let lw1 = l.min(1.0);
    let coarse = model.lambda().is_constant() && model.k().values().iter().all(|&v| v == 0.0);
    let steps = match clocks {
        Clocks::Subordinated { eps: None, .. } if coarse => 1,
        _ => n_steps,
    };
    let samples = |f: &ClockFunctionals| -> Result<[f64; 5]> {
        if !(f.g1 > 0.0) || !(f.h2 > 0.0) {
            return Err(Error::UndefinedNegativeMoment(format!(
                "clock functional vanished (∫λ^-2 dℓ1 = {}, ∫e^-2K dℓ2 = {})",
                f.g1, f.h2
            )));
        }
        Ok([1.0 / f.g1, f.g1.powf(-l), f.g1.powf(-lw1), 1.0 / f.h2, f.n2 / f.h2])
    };
    let rows: Vec<[f64; 5]> = match clocks {
        Clocks::Deterministic { .. } => {
            let inc = clocks.realize(2.0 * horizon, 2 * steps, &mut streams.stream(0))?;
            let v = samples(&functionals(model, &inc, horizon))?;
            let e = |x: f64| Estimate {
                mean: x,
                std_error: 0.0,
                n: n_paths,
            };
            return Ok(BoundTerms {
                term_w1: e(v[0]),
                term_l: e(v[1]),
                term_lw1: e(v[2]),
                term_s2inv: e(v[3]),
                term_ratio: e(v[4]),
            });
        }
        Clocks::Subordinated { .. } => map_paths(n_paths, |i| {
            let inc = clocks.realize(2.0 * horizon, 2 * steps, &mut streams.stream(i as u64))?;
            samples(&functionals(model, &inc, horizon))
        })?,
    };
    let col = |j: usize| Estimate::from_samples(&rows.iter().map(|r| r[j]).collect::<Vec<_>>());
    Ok(BoundTerms {
        term_w1: col(0),
        term_l: col(1),
        term_lw1: col(2),
        term_s2inv: col(3),
        term_ratio: col(4),
    })
}

/// The explicit cost `term1 + C · bracket` for a pair of starting points:
/// `term1 = |x1 - y1|²/2 · E G1^{-1}` and
/// `bracket = e^{2K(0,T)} { |x2 - y2|² E G1^{-l} E H2^{-1}
///   + ([|x1|^{2(l-1)+} + |y1|^{2(l-1)+}] E G1^{-l} + E G1^{-(l∧1)}) |x1 - y1|^{2(l∧1)} E[N2/H2] }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExplicitCost {
    pub term1: Estimate,
    pub bracket: f64,
}

pub fn explicit_cost(model: &GruschinModel, x: &StatePoint, y: &StatePoint, horizon: f64, terms: &BoundTerms) -> ExplicitCost {
    let l = model.l();
    let d1 = norm(&x.x1.iter().zip(&y.x1).map(|(a, b)| a - b).collect::<Vec<_>>());
    let d2 = norm(&x.x2.iter().zip(&y.x2).map(|(a, b)| a - b).collect::<Vec<_>>());
    let pos = 2.0 * (l - 1.0).max(0.0);
    let pw = |v: &[f64]| if pos == 0.0 { 1.0 } else { norm(v).powf(pos) };
    let half = 0.5 * d1 * d1;
    let term1 = Estimate {
        mean: half * terms.term_w1.mean,
        std_error: half * terms.term_w1.std_error,
        n: terms.term_w1.n,
    };
    let first = d2 * d2 * terms.term_l.mean * terms.term_s2inv.mean;
    let second = ((pw(&x.x1) + pw(&y.x1)) * terms.term_l.mean + terms.term_lw1.mean)
        * d1.powf(2.0 * l.min(1.0))
        * terms.term_ratio.mean;
    ExplicitCost {
        term1,
        bracket: (2.0 * model.big_k(0.0, horizon)).exp() * (first + second),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarnackReport {
    pub x: StatePoint,
    pub y: StatePoint,
    /// Half-horizon `T`; the semigroups are evaluated at `2T`.
    pub horizon: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    /// `P_{2T} log f(y)`.
    pub lhs: Estimate,
    /// `log P_{2T} f(x)` (delta-method standard error).
    pub rhs_log: Estimate,
    /// `E[R log R]` from the coupling.
    pub entropy: Estimate,
    pub er_mean: Estimate,
    /// `rhs_log + entropy - lhs`; non-negative up to noise.
    pub margin: f64,
    pub margin_se: f64,
    pub bound_terms: BoundTerms,
    pub cost: ExplicitCost,
    pub tau1_max: f64,
    pub tau2_max: Option<f64>,
    pub clip_count: usize,
    pub clip_frequency: f64,
    pub warnings: Vec<String>,
}

impl HarnackReport {
    /// `lhs <= rhs_log + entropy` within `k` combined standard errors.
    pub fn coupling_bound_holds(&self, k: f64) -> bool {
        self.margin >= -k * self.margin_se
    }
}

/// Shared inputs of [`evaluate_inequality`].
#[derive(Debug, Clone)]
pub struct HarnackSetup<'a> {
    pub model: &'a GruschinModel,
    pub f: &'a TestFunction,
    pub clocks: &'a Clocks,
    pub n_paths: usize,
    /// Cells per half-horizon.
    pub n_steps: usize,
    pub coupling: CouplingOptions,
    /// Randomized QMC for the two semigroup estimates.
    pub qmc: bool,
}

fn semigroup_f(setup: &HarnackSetup<'_>, start: &StatePoint, horizon: f64, log: bool, streams: &StreamFactory) -> Result<Estimate> {
    let f = setup.f;
    let min_seen = std::sync::Mutex::new(f64::INFINITY);
    let g = |z: &StatePoint| {
        let v = f.eval(z);
        if v < 1.0 {
            let mut m = min_seen.lock().unwrap();
            *m = m.min(v);
        }
        if log {
            v.ln()
        } else {
            v
        }
    };
    let est = if setup.qmc {
        semigroup_qmc(setup.model, &g, 2.0 * horizon, start, setup.clocks, setup.n_paths, 2 * setup.n_steps, streams)?
    } else {
        Estimate::from_samples(&endpoint_values(setup.model, &g, 2.0 * horizon, start, setup.clocks, setup.n_paths, 2 * setup.n_steps, streams)?)
    };
    let low = *min_seen.lock().unwrap();
    if low < 1.0 {
        return Err(Error::TestFunctionBelowOne(low));
    }
    Ok(est)
}

/// Estimates both sides of the log-Harnack inequality at `(x, y, T)`, the
/// coupling entropy, and the bound terms. Each ingredient uses its own
/// independent family of random streams.
pub fn evaluate_inequality(setup: &HarnackSetup<'_>, x: &StatePoint, y: &StatePoint, horizon: f64, streams: &StreamFactory) -> Result<HarnackReport> {
    let model = setup.model;
    model.require_harnack_range()?;
    model.check_point(x)?;
    model.check_point(y)?;
    setup.f.check_dim(model)?;
    for p in [x, y] {
        let v = setup.f.eval(p);
        if v < 1.0 {
            return Err(Error::TestFunctionBelowOne(v));
        }
    }
    let (lhs, rhs_log) = match setup.f {
        TestFunction::Constant(c) => {
            let e = Estimate {
                mean: c.ln(),
                std_error: 0.0,
                n: setup.n_paths,
            };
            (e, e)
        }
        _ => (
            semigroup_f(setup, y, horizon, true, &streams.derive(tags::LHS))?,
            semigroup_f(setup, x, horizon, false, &streams.derive(tags::RHS))?.ln(),
        ),
    };
    let records = simulate_couplings(
        model,
        x,
        y,
        setup.clocks,
        horizon,
        setup.n_paths,
        setup.n_steps,
        &setup.coupling,
        &streams.derive(tags::COUPLING),
    )?;
    let summary = summarize(&records);
    let terms = bound_terms(model, setup.clocks, horizon, setup.n_paths, setup.n_steps, &streams.derive(tags::BOUND_TERMS))?;
    let cost = explicit_cost(model, x, y, horizon, &terms);
    let margin = rhs_log.mean + summary.entropy.mean - lhs.mean;
    let margin_se = combined_se(&[lhs.std_error, rhs_log.std_error, summary.entropy.std_error]);
    Ok(HarnackReport {
        x: x.clone(),
        y: y.clone(),
        horizon,
        n_paths: setup.n_paths,
        n_steps: setup.n_steps,
        lhs,
        rhs_log,
        entropy: summary.entropy,
        er_mean: summary.er_mean,
        margin,
        margin_se,
        bound_terms: terms,
        cost,
        tau1_max: summary.tau1_max,
        tau2_max: summary.tau2_max,
        clip_count: summary.clip_count,
        clip_frequency: summary.clip_frequency,
        warnings: summary.warnings,
    })
}

/// A report that no finite constant can explain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Falsification {
    pub index: usize,
    /// `lhs - rhs_log - term1 - 3 SE`, the excess the constant must absorb.
    pub need: f64,
    pub bracket: f64,
    pub report: HarnackReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantFit {
    pub fitted_c: f64,
    /// Report that determines `fitted_c` (`None` when every report is satisfied with `C = 0`).
    pub binding: Option<usize>,
    pub per_report: Vec<f64>,
    pub falsifications: Vec<Falsification>,
}

/// Smallest `C >= 0` with `lhs <= rhs_log + term1 + C · bracket + 3 SE` for every report.
pub fn fit_constant(reports: &[HarnackReport]) -> Result<ConstantFit> {
    if reports.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut per = Vec::with_capacity(reports.len());
    let mut falsifications = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let se = combined_se(&[r.lhs.std_error, r.rhs_log.std_error, r.cost.term1.std_error]);
        let need = r.lhs.mean - r.rhs_log.mean - r.cost.term1.mean - 3.0 * se;
        let c = if need <= 0.0 {
            0.0
        } else if r.cost.bracket > 0.0 && r.cost.bracket.is_finite() {
            need / r.cost.bracket
        } else {
            falsifications.push(Falsification {
                index: i,
                need,
                bracket: r.cost.bracket,
                report: r.clone(),
            });
            f64::INFINITY
        };
        per.push(c);
    }
    let (binding, fitted) = per
        .iter()
        .enumerate()
        .filter(|(_, c)| c.is_finite())
        .fold((None, 0.0), |(bi, bc), (i, &c)| if c > bc { (Some(i), c) } else { (bi, bc) });
    Ok(ConstantFit {
        fitted_c: if falsifications.is_empty() { fitted } else { f64::INFINITY },
        binding: if falsifications.is_empty() { binding } else { Some(falsifications[0].index) },
        per_report: per,
        falsifications,
    })
}

/// Displacements `y = x + r · direction` for each `r` in `radii`, at each `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub radii: Vec<f64>,
    pub horizons: Vec<f64>,
    /// Unit-normalized on use; length `m + d`.
    pub direction: Vec<f64>,
}

/// Evaluates the inequality over a `(|x - y|, T)` grid; requires at least five
/// distinct configurations.
pub fn sweep(setup: &HarnackSetup<'_>, x: &StatePoint, spec: &SweepSpec, streams: &StreamFactory) -> Result<Vec<HarnackReport>> {
    let m = setup.model.m();
    let d = setup.model.d();
    if spec.direction.len() != m + d {
        return Err(invalid("direction", format!("must have length m + d = {}", m + d)));
    }
    let len = norm(&spec.direction);
    if !(len > 0.0) {
        return Err(invalid("direction", "must be non-zero"));
    }
    let mut configs = Vec::new();
    for &t in &spec.horizons {
        for &r in &spec.radii {
            if !configs.contains(&(r.to_bits(), t.to_bits())) {
                configs.push((r.to_bits(), t.to_bits()));
            }
        }
    }
    if configs.len() < 5 {
        return Err(Error::TooFewSamples { got: configs.len(), need: 5 });
    }
    let base = streams.derive(tags::SWEEP);
    configs
        .iter()
        .enumerate()
        .map(|(i, &(rb, tb))| {
            let (r, t) = (f64::from_bits(rb), f64::from_bits(tb));
            let shift: Vec<f64> = spec.direction.iter().map(|v| r * v / len).collect();
            let y = StatePoint::new(
                x.x1.iter().zip(&shift[..m]).map(|(a, b)| a + b).collect(),
                x.x2.iter().zip(&shift[m..]).map(|(a, b)| a + b).collect(),
            );
            evaluate_inequality(setup, x, &y, t, &base.derive(i as u64))
        })
        .collect()
}

/// Which second subordinator a scaling study uses; the first is always stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingExample {
    /// Truncated stable second clock: bound of order `T^{-1/α}`, `E S2(T)^{-1} ≲ T^{-1}`.
    Truncated,
    /// Relativistic stable second clock: `E S2(T)^{-1} ≲ T^{-1/β} ∨ T^{-1}`.
    Relativistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingParams {
    pub alpha: f64,
    pub c1: f64,
    pub beta: f64,
    pub c2: f64,
    pub rho: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub horizon: f64,
    pub term: String,
    pub value: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeFit {
    pub term: String,
    pub slope: f64,
    pub slope_se: f64,
    /// Slope of the predicted power law regressed over the same `T` grid.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub example: ScalingExample,
    pub rows: Vec<ScalingRow>,
    pub slopes: Vec<SlopeFit>,
}

impl ScalingReport {
    pub fn slope(&self, term: &str) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.term == term)
    }

    /// Long-format CSV `example,T,term,value,std_error`.
    pub fn to_csv(&self) -> String {
        let name = match self.example {
            ScalingExample::Truncated => "truncated",
            ScalingExample::Relativistic => "relativistic",
        };
        let mut s = String::from("example,T,term,value,std_error\n");
        for r in &self.rows {
            s.push_str(&format!("{name},{},{},{},{}\n", r.horizon, r.term, r.value.mean, r.value.std_error));
        }
        s
    }
}

/// Log-log regressions of the bound terms (with `σ = I`, `λ ≡ 1`, `k ≡ 0` they
/// reduce to moments of `S1(T)` and `S2(T)`) against `T`.
pub fn scaling_study(
    example: ScalingExample,
    params: &ScalingParams,
    t_grid: &[f64],
    n_paths: usize,
    streams: &StreamFactory,
) -> Result<ScalingReport> {
    if t_grid.len() < 4 {
        return Err(Error::TooFewSamples { got: t_grid.len(), need: 4 });
    }
    if t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("T grid", "all horizons must be positive"));
    }
    let phi1 = BernsteinFunction::stable(params.alpha, params.c1)?;
    let phi2 = match example {
        ScalingExample::Truncated => BernsteinFunction::truncated_stable(params.beta, params.c2)?,
        ScalingExample::Relativistic => BernsteinFunction::relativistic_stable(params.beta, params.c2, params.rho)?,
    };
    if !(params.l > 0.0) {
        return Err(invalid("l", "must be positive"));
    }
    let (a, b, l) = (params.alpha, params.beta, params.l);
    let laws: Vec<(&str, Box<dyn Fn(f64) -> f64>)> = vec![
        ("term_w1", Box::new(move |t: f64| t.powf(-1.0 / a))),
        ("term_l", Box::new(move |t: f64| t.powf(-l / a))),
        ("term_lw1", Box::new(move |t: f64| t.powf(-l.min(1.0) / a))),
        (
            "term_s2inv",
            match example {
                ScalingExample::Truncated => Box::new(|t: f64| 1.0 / t),
                ScalingExample::Relativistic => Box::new(move |t: f64| t.powf(-1.0 / b).max(1.0 / t)),
            },
        ),
        ("s2_mean", Box::new(|t: f64| t)),
    ];
    let s1 = streams.derive(1);
    let s2 = streams.derive(2);
    let mut rows = Vec::new();
    for (j, &t) in t_grid.iter().enumerate() {
        let st1 = s1.derive(j as u64);
        let st2 = s2.derive(j as u64);
        let vals = [
            subordinator::negative_moment(&phi1, t, 1.0, n_paths, &st1)?,
            subordinator::negative_moment(&phi1, t, l, n_paths, &st1)?,
            subordinator::negative_moment(&phi1, t, l.min(1.0), n_paths, &st1)?,
            subordinator::negative_moment(&phi2, t, 1.0, n_paths, &st2)?,
            subordinator::mean(&phi2, t, n_paths, &st2)?,
        ];
        for ((name, _), v) in laws.iter().zip(vals) {
            rows.push(ScalingRow {
                horizon: t,
                term: name.to_string(),
                value: v,
            });
        }
    }
    let log_t: Vec<f64> = t_grid.iter().map(|t| t.ln()).collect();
    let slopes = laws
        .iter()
        .map(|(name, law)| {
            let ys: Vec<f64> = rows.iter().filter(|r| r.term == *name).map(|r| r.value.mean.ln()).collect();
            let fit = linear_fit(&log_t, &ys);
            let pred: Vec<f64> = t_grid.iter().map(|&t| law(t).ln()).collect();
            SlopeFit {
                term: name.to_string(),
                slope: fit.slope,
                slope_se: fit.slope_se,
                predicted: linear_fit(&log_t, &pred).slope,
            }
        })
        .collect();
    Ok(ScalingReport { example, rows, slopes })
}
