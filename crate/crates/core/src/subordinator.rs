//! Sampling subordinator increments and paths on uniform grids, and Monte
//! Carlo estimates of `E S(T)` and `E S(T)^{-κ}`.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::bernstein::{tempering_rate, BernsteinFunction, CustomLevy};
use crate::error::{invalid, Error, Result};
use crate::parallel::map_paths;
use crate::quad::{self, ShellOutcome};
use crate::rng::StreamFactory;
use crate::stats::Estimate;
use crate::timechange::{Interpolation, TimeChange};

/// Tuning knobs for the increment samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerOptions {
    /// Attempts allowed per tempered-stable rejection draw.
    pub rejection_cap: u64,
    /// Small-jump cutoff for compound-Poisson sampling. `None` picks the
    /// largest cutoff whose small-jump variance per step is below `1e-6`.
    pub small_jump_cutoff: Option<f64>,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        Self {
            rejection_cap: 1_000_000,
            small_jump_cutoff: None,
        }
    }
}

const SMALL_JUMP_VARIANCE: f64 = 1e-6;

/// A standard one-sided stable variable with `E e^{-sZ} = e^{-s^α}` (Kanter).
pub fn standard_one_sided_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u: f64 = PI * rng.sample::<f64, _>(Open01);
    let e: f64 = rng.sample(Exp1);
    let a = (alpha * u).sin() / u.sin().powf(1.0 / alpha);
    let b = (((1.0 - alpha) * u).sin() / e).powf((1.0 - alpha) / alpha);
    a * b
}

#[derive(Debug, Clone)]
enum Kind {
    Drift(f64),
    Stable {
        alpha: f64,
        scale: f64,
    },
    Tempered {
        beta: f64,
        sub_scale: f64,
        theta: f64,
        substeps: u64,
        cap: u64,
    },
    CompoundPoisson(CompoundPoisson),
}

/// Jumps above `delta` as a compound Poisson sum, jumps below replaced by
/// their mean (keeps paths non-decreasing, unlike a Gaussian correction).
#[derive(Debug, Clone)]
struct CompoundPoisson {
    deterministic: f64,
    poisson: Option<Poisson<f64>>,
    jumps: JumpLaw,
}

#[derive(Debug, Clone)]
enum JumpLaw {
    /// Density `∝ x^{-1-β}` on `(δ, 1)`, inverted in closed form.
    Power { beta: f64, lo_pow: f64 },
    /// Tabulated inverse CDF on a log grid.
    Table { log_x: Vec<f64>, cdf: Vec<f64> },
}

impl JumpLaw {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        match self {
            JumpLaw::Power { beta, lo_pow } => (lo_pow - u * (lo_pow - 1.0)).powf(-1.0 / beta),
            JumpLaw::Table { log_x, cdf } => {
                let j = cdf.partition_point(|&c| c < u).clamp(1, cdf.len() - 1);
                let (c0, c1) = (cdf[j - 1], cdf[j]);
                let w = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
                (log_x[j - 1] + w * (log_x[j] - log_x[j - 1])).exp()
            }
        }
    }
}

/// Draws `S(t + dt) - S(t)` for a fixed `dt`.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    dt: f64,
    kind: Kind,
}

impl IncrementSampler {
    pub fn new(phi: &BernsteinFunction, dt: f64) -> Result<Self> {
        Self::with_options(phi, dt, SamplerOptions::default())
    }

    pub fn with_options(phi: &BernsteinFunction, dt: f64, opts: SamplerOptions) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be positive, got {dt}")));
        }
        if let Some(d) = opts.small_jump_cutoff {
            if !(d > 0.0 && d <= 1.0) {
                return Err(invalid("small_jump_cutoff", format!("must lie in (0, 1], got {d}")));
            }
        }
        if opts.rejection_cap == 0 {
            return Err(invalid("rejection_cap", "must be >= 1"));
        }
        let kind = match phi {
            BernsteinFunction::PureDrift { theta } => Kind::Drift(theta * dt),
            BernsteinFunction::Stable { alpha, c } => Kind::Stable {
                alpha: *alpha,
                scale: (dt * c * gamma(1.0 - alpha) / alpha).powf(1.0 / alpha),
            },
            BernsteinFunction::RelativisticStable { beta, c, rho } => {
                let kappa = c * gamma(1.0 - beta) / beta;
                let theta = tempering_rate(*beta, *rho);
                // split so that each sub-draw is accepted with probability >= 1/2
                let substeps = (dt * kappa * theta.powf(*beta) / LN_2).ceil().max(1.0) as u64;
                let h = dt / substeps as f64;
                Kind::Tempered {
                    beta: *beta,
                    sub_scale: (h * kappa).powf(1.0 / beta),
                    theta,
                    substeps,
                    cap: opts.rejection_cap,
                }
            }
            BernsteinFunction::TruncatedStable { beta, c } => {
                let delta = opts.small_jump_cutoff.unwrap_or_else(|| {
                    (SMALL_JUMP_VARIANCE * (2.0 - beta) / (c * dt))
                        .powf(1.0 / (2.0 - beta))
                        .min(1.0)
                });
                let small_mean = dt * c * delta.powf(1.0 - beta) / (1.0 - beta);
                let lo_pow = delta.powf(-beta);
                let rate = dt * c * (lo_pow - 1.0) / beta;
                Kind::CompoundPoisson(CompoundPoisson {
                    deterministic: small_mean,
                    poisson: poisson(rate)?,
                    jumps: JumpLaw::Power { beta: *beta, lo_pow },
                })
            }
            BernsteinFunction::Custom(cl) => Kind::CompoundPoisson(custom_compound(cl, dt, opts)?),
        };
        Ok(Self { dt, kind })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match &self.kind {
            Kind::Drift(v) => Ok(*v),
            Kind::Stable { alpha, scale } => Ok(scale * standard_one_sided_stable(*alpha, rng)),
            Kind::Tempered {
                beta,
                sub_scale,
                theta,
                substeps,
                cap,
            } => {
                let mut total = 0.0;
                for _ in 0..*substeps {
                    let mut attempts = 0u64;
                    loop {
                        attempts += 1;
                        let x = sub_scale * standard_one_sided_stable(*beta, rng);
                        let u: f64 = rng.sample(Open01);
                        if u <= (-theta * x).exp() {
                            total += x;
                            break;
                        }
                        if attempts >= *cap {
                            return Err(Error::RejectionCap {
                                cap: *cap,
                                acceptance: 1.0 / attempts as f64,
                            });
                        }
                    }
                }
                Ok(total)
            }
            Kind::CompoundPoisson(cp) => {
                let mut total = cp.deterministic;
                if let Some(p) = &cp.poisson {
                    let n = p.sample(rng) as u64;
                    for _ in 0..n {
                        total += cp.jumps.sample(rng);
                    }
                }
                Ok(total)
            }
        }
    }
}

fn poisson(rate: f64) -> Result<Option<Poisson<f64>>> {
    if rate <= 0.0 {
        return Ok(None);
    }
    Poisson::new(rate)
        .map(Some)
        .map_err(|e| invalid("jump rate", format!("{e} (rate {rate})")))
}

fn custom_compound(cl: &CustomLevy, dt: f64, opts: SamplerOptions) -> Result<CompoundPoisson> {
    let dens = |x: f64| {
        if x > cl.lower && x < cl.upper {
            (cl.density)(x)
        } else {
            0.0
        }
    };
    let to_zero = |f: &dyn Fn(f64) -> f64, b: f64| match quad::integrate_to_zero(f, b, 1e-10) {
        ShellOutcome::Converged(v) => v,
        ShellOutcome::Divergent(_) => f64::INFINITY,
    };
    let delta = if cl.lower > 0.0 {
        cl.lower
    } else if let Some(d) = opts.small_jump_cutoff {
        d.min(cl.upper)
    } else {
        // largest δ (by bisection in log scale) with dt ∫_0^δ x² ν(dx) below the budget
        let var = |d: f64| dt * to_zero(&|x| x * x * dens(x), d);
        let mut hi = cl.upper.min(1.0);
        if var(hi) <= SMALL_JUMP_VARIANCE {
            hi
        } else {
            let mut lo = hi;
            while var(lo) > SMALL_JUMP_VARIANCE && lo > 1e-300 {
                lo *= 0.5;
            }
            for _ in 0..60 {
                let mid = (lo * hi).sqrt();
                if var(mid) <= SMALL_JUMP_VARIANCE {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        }
    };
    let small_mean = if cl.lower > 0.0 {
        0.0
    } else {
        dt * to_zero(&|x| x * dens(x), delta)
    };

    // far edge of the table: where the remaining tail mass is negligible
    let big_mass_to = |b: f64| quad::integrate(dens, delta, b, 0.0, 1e-12);
    let mut x_max = if cl.upper.is_finite() { cl.upper } else { (2.0 * delta).max(1.0) };
    if cl.upper.is_infinite() {
        let tail = |a: f64| match quad::integrate_to_infinity(dens, a, 1e-8) {
            ShellOutcome::Converged(v) => v,
            ShellOutcome::Divergent(_) => f64::INFINITY,
        };
        let total = big_mass_to(x_max) + tail(x_max);
        while tail(x_max) > 1e-12 * total && x_max < 1e300 {
            x_max *= 2.0;
        }
    }
    const TABLE: usize = 4096;
    let (l0, l1) = (delta.ln(), x_max.ln());
    let log_x: Vec<f64> = (0..=TABLE)
        .map(|i| l0 + (l1 - l0) * i as f64 / TABLE as f64)
        .collect();
    let mut cdf = vec![0.0; TABLE + 1];
    for i in 1..=TABLE {
        let (a, b) = (log_x[i - 1].exp(), log_x[i].exp());
        cdf[i] = cdf[i - 1] + quad::integrate(dens, a, b, 0.0, 1e-10);
    }
    let mass = cdf[TABLE];
    for c in &mut cdf {
        *c /= mass;
    }
    Ok(CompoundPoisson {
        deterministic: dt * cl.drift + small_mean,
        poisson: poisson(dt * mass)?,
        jumps: JumpLaw::Table { log_x, cdf },
    })
}

/// A sampled subordinator on the grid `t_i = T i / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubordinatorPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SubordinatorPath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("path has at least one point")
    }

    /// The path as a càdlàg clock (piecewise constant between grid points).
    pub fn to_time_change(&self) -> TimeChange {
        TimeChange::from_parts_unchecked(
            self.times.clone(),
            self.values.clone(),
            Interpolation::PiecewiseConstant,
        )
    }
}

/// `t_i = T i / n` for `i = 0..=n`.
pub fn uniform_grid(horizon: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps)
        .map(|i| horizon * i as f64 / n_steps as f64)
        .collect()
}

fn check_horizon(horizon: f64, n_steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("must be positive, got {horizon}")));
    }
    if n_steps == 0 {
        return Err(invalid("n_steps", "must be >= 1"));
    }
    Ok(())
}

pub fn sample_path<R: Rng + ?Sized>(
    phi: &BernsteinFunction,
    horizon: f64,
    n_steps: usize,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    sample_path_with(phi, horizon, n_steps, SamplerOptions::default(), rng)
}

pub fn sample_path_with<R: Rng + ?Sized>(
    phi: &BernsteinFunction,
    horizon: f64,
    n_steps: usize,
    opts: SamplerOptions,
    rng: &mut R,
) -> Result<SubordinatorPath> {
    check_horizon(horizon, n_steps)?;
    let times = uniform_grid(horizon, n_steps);
    if let BernsteinFunction::PureDrift { theta } = phi {
        let values = times.iter().map(|t| theta * t).collect();
        return Ok(SubordinatorPath { times, values });
    }
    let sampler = IncrementSampler::with_options(phi, horizon / n_steps as f64, opts)?;
    let mut values = Vec::with_capacity(n_steps + 1);
    values.push(0.0);
    let mut s = 0.0;
    for _ in 0..n_steps {
        s += sampler.sample(rng)?;
        values.push(s);
    }
    Ok(SubordinatorPath { times, values })
}

/// Samples of `S(T)`, one per stream index.
pub fn terminal_samples(
    phi: &BernsteinFunction,
    horizon: f64,
    n_paths: usize,
    streams: &StreamFactory,
) -> Result<Vec<f64>> {
    check_horizon(horizon, 1)?;
    let sampler = IncrementSampler::new(phi, horizon)?;
    map_paths(n_paths, |i| sampler.sample(&mut streams.stream(i as u64)))
}

/// Monte Carlo estimate of `E S(T)^{-κ}`.
pub fn negative_moment(
    phi: &BernsteinFunction,
    horizon: f64,
    kappa: f64,
    n_paths: usize,
    streams: &StreamFactory,
) -> Result<Estimate> {
    if !(kappa > 0.0) {
        return Err(invalid("kappa", format!("must be positive, got {kappa}")));
    }
    check_horizon(horizon, 1)?;
    if phi.has_atom_at_zero() {
        return Err(Error::UndefinedNegativeMoment(format!(
            "{} has P(S(T) = 0) > 0",
            phi.label()
        )));
    }
    if let BernsteinFunction::PureDrift { theta } = phi {
        return Ok(Estimate {
            mean: (theta * horizon).powf(-kappa),
            std_error: 0.0,
            n: n_paths,
        });
    }
    let samples = terminal_samples(phi, horizon, n_paths, streams)?;
    if samples.iter().any(|&s| s <= 0.0) {
        return Err(Error::UndefinedNegativeMoment(format!(
            "sampled S(T) = 0 for {} at T = {horizon}",
            phi.label()
        )));
    }
    let v: Vec<f64> = samples.iter().map(|s| s.powf(-kappa)).collect();
    Ok(Estimate::from_samples(&v))
}

/// Monte Carlo estimate of `E S(T)`.
pub fn mean(
    phi: &BernsteinFunction,
    horizon: f64,
    n_paths: usize,
    streams: &StreamFactory,
) -> Result<Estimate> {
    check_horizon(horizon, 1)?;
    if phi.mean_rate().is_none() {
        return Err(Error::InfiniteMean(phi.label()));
    }
    if let BernsteinFunction::PureDrift { theta } = phi {
        return Ok(Estimate {
            mean: theta * horizon,
            std_error: 0.0,
            n: n_paths,
        });
    }
    Ok(Estimate::from_samples(&terminal_samples(
        phi, horizon, n_paths, streams,
    )?))
}
