//! Bernstein functions (Laplace exponents) of subordinators.
//!
//! A subordinator with drift `θ` and Lévy measure `ν` has exponent
//! `φ(u) = θ u + ∫ (1 - e^{-ux}) ν(dx)` and `E e^{-u S(t)} = e^{-t φ(u)}`.
//! The stable and relativistic (tempered) stable kinds have closed forms;
//! everything else is integrated numerically, splitting at `x = 1/u`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::quad::{self, ShellOutcome};
use crate::rng::StreamFactory;
use crate::stats::Estimate;
use crate::subordinator::IncrementSampler;

const QUAD_REL_TOL: f64 = 1e-11;

/// Lévy density of a user-supplied subordinator.
pub type LevyDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A drift plus a Lévy density supported on `(lower, upper)`.
#[derive(Clone)]
pub struct CustomLevy {
    pub drift: f64,
    pub density: LevyDensity,
    pub lower: f64,
    pub upper: f64,
}

impl fmt::Debug for CustomLevy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLevy")
            .field("drift", &self.drift)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

/// Law of a subordinator, described by its drift and Lévy measure.
#[derive(Debug, Clone)]
pub enum BernsteinFunction {
    /// Lévy density `c x^{-1-α}` on `(0, ∞)`.
    Stable { alpha: f64, c: f64 },
    /// Lévy density `c x^{-1-β}` on `(0, 1)`.
    TruncatedStable { beta: f64, c: f64 },
    /// Lévy density `c e^{-ρ^{1/β} x} x^{-1-β}` on `(0, ∞)`, whose exponent is
    /// `c β^{-1} Γ(1-β) [(u + ρ^{1/β})^β - ρ]`.
    RelativisticStable { beta: f64, c: f64, rho: f64 },
    PureDrift { theta: f64 },
    Custom(CustomLevy),
}

fn check_index(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must lie in (0, 1), got {v}")))
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}

impl BernsteinFunction {
    pub fn stable(alpha: f64, c: f64) -> Result<Self> {
        check_index("alpha", alpha)?;
        check_positive("c", c)?;
        Ok(Self::Stable { alpha, c })
    }

    pub fn truncated_stable(beta: f64, c: f64) -> Result<Self> {
        check_index("beta", beta)?;
        check_positive("c", c)?;
        Ok(Self::TruncatedStable { beta, c })
    }

    pub fn relativistic_stable(beta: f64, c: f64, rho: f64) -> Result<Self> {
        check_index("beta", beta)?;
        check_positive("c", c)?;
        check_positive("rho", rho)?;
        Ok(Self::RelativisticStable { beta, c, rho })
    }

    pub fn pure_drift(theta: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid("theta", format!("must be >= 0, got {theta}")));
        }
        Ok(Self::PureDrift { theta })
    }

    /// Builds a custom subordinator after checking `∫ (1 ∧ x) ν(dx) < ∞`.
    pub fn custom(drift: f64, density: LevyDensity, lower: f64, upper: f64) -> Result<Self> {
        if !(drift >= 0.0 && drift.is_finite()) {
            return Err(invalid("drift", format!("must be >= 0, got {drift}")));
        }
        if !(lower >= 0.0 && upper > lower) {
            return Err(invalid(
                "support",
                format!("need 0 <= lower < upper, got ({lower}, {upper})"),
            ));
        }
        let custom = CustomLevy {
            drift,
            density,
            lower,
            upper,
        };
        check_custom_integrability(&custom)?;
        Ok(Self::Custom(custom))
    }

    /// Drift coefficient `θ`.
    pub fn drift(&self) -> f64 {
        match self {
            Self::PureDrift { theta } => *theta,
            Self::Custom(c) => c.drift,
            _ => 0.0,
        }
    }

    /// Lévy density at `x > 0`.
    pub fn levy_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Stable { alpha, c } => c * x.powf(-1.0 - alpha),
            Self::TruncatedStable { beta, c } => {
                if x < 1.0 {
                    c * x.powf(-1.0 - beta)
                } else {
                    0.0
                }
            }
            Self::RelativisticStable { beta, c, rho } => {
                c * (-tempering_rate(*beta, *rho) * x).exp() * x.powf(-1.0 - beta)
            }
            Self::PureDrift { .. } => 0.0,
            Self::Custom(cl) => {
                if x > cl.lower && x < cl.upper {
                    (cl.density)(x)
                } else {
                    0.0
                }
            }
        }
    }

    /// `φ(u)` for `u > 0`.
    pub fn evaluate(&self, u: f64) -> f64 {
        assert!(u > 0.0, "Bernstein function evaluated at u = {u} <= 0");
        match self {
            Self::Stable { alpha, c } => c * gamma(1.0 - alpha) / alpha * u.powf(*alpha),
            Self::RelativisticStable { beta, c, rho } => {
                let theta = tempering_rate(*beta, *rho);
                c / beta * gamma(1.0 - beta) * ((u + theta).powf(*beta) - rho)
            }
            Self::PureDrift { theta } => theta * u,
            Self::TruncatedStable { .. } => self.levy_part(u, 0.0, 1.0),
            Self::Custom(cl) => cl.drift * u + self.levy_part(u, cl.lower, cl.upper),
        }
    }

    /// `∫_{(lower, upper)} (1 - e^{-ux}) ν(dx)`, split at `x = 1/u`.
    fn levy_part(&self, u: f64, lower: f64, upper: f64) -> f64 {
        let g = |x: f64| -(-u * x).exp_m1() * self.levy_density(x);
        let split = (1.0 / u).clamp(lower, upper);
        let near = if split <= lower {
            0.0
        } else if lower == 0.0 {
            match quad::integrate_to_zero(g, split, QUAD_REL_TOL) {
                ShellOutcome::Converged(v) => v,
                ShellOutcome::Divergent(_) => f64::INFINITY,
            }
        } else {
            quad::integrate(g, lower, split, 0.0, QUAD_REL_TOL)
        };
        let far = if split >= upper {
            0.0
        } else if upper.is_infinite() {
            match quad::integrate_to_infinity(g, split, QUAD_REL_TOL) {
                ShellOutcome::Converged(v) => v,
                ShellOutcome::Divergent(_) => f64::INFINITY,
            }
        } else {
            quad::integrate(g, split, upper, 0.0, QUAD_REL_TOL)
        };
        near + far
    }

    /// `φ'(0+) = E S(1)`, or `None` when the first moment is infinite.
    pub fn mean_rate(&self) -> Option<f64> {
        match self {
            Self::Stable { .. } => None,
            Self::TruncatedStable { beta, c } => Some(c / (1.0 - beta)),
            Self::RelativisticStable { beta, c, rho } => {
                Some(c * gamma(1.0 - beta) * tempering_rate(*beta, *rho).powf(beta - 1.0))
            }
            Self::PureDrift { theta } => Some(*theta),
            Self::Custom(cl) => {
                let first = |x: f64| x * self.levy_density(x);
                let near = if cl.lower == 0.0 {
                    match quad::integrate_to_zero(first, cl.upper.min(1.0), QUAD_REL_TOL) {
                        ShellOutcome::Converged(v) => v,
                        ShellOutcome::Divergent(_) => return None,
                    }
                } else {
                    quad::integrate(first, cl.lower, cl.upper.min(1.0).max(cl.lower), 0.0, QUAD_REL_TOL)
                };
                let a = cl.lower.max(1.0);
                let far = if a >= cl.upper {
                    0.0
                } else if cl.upper.is_infinite() {
                    match quad::integrate_to_infinity(first, a, QUAD_REL_TOL) {
                        ShellOutcome::Converged(v) => v,
                        ShellOutcome::Divergent(_) => return None,
                    }
                } else {
                    quad::integrate(first, a, cl.upper, 0.0, QUAD_REL_TOL)
                };
                Some(cl.drift + near + far)
            }
        }
    }

    /// True when the law has no randomness (empty Lévy measure).
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Self::PureDrift { .. })
    }

    /// True when `P(S(t) = 0) > 0` for `t > 0`: zero drift and a finite Lévy measure.
    pub fn has_atom_at_zero(&self) -> bool {
        match self {
            Self::PureDrift { theta } => *theta == 0.0,
            Self::Custom(cl) => {
                if cl.drift > 0.0 {
                    return false;
                }
                if cl.lower > 0.0 {
                    return true;
                }
                let mass = |x: f64| self.levy_density(x);
                matches!(
                    quad::integrate_to_zero(mass, cl.upper.min(1.0), 1e-8),
                    ShellOutcome::Converged(_)
                )
            }
            _ => false,
        }
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match self {
            Self::Stable { alpha, c } => format!("stable(alpha={alpha}, c={c})"),
            Self::TruncatedStable { beta, c } => format!("truncated_stable(beta={beta}, c={c})"),
            Self::RelativisticStable { beta, c, rho } => {
                format!("relativistic_stable(beta={beta}, c={c}, rho={rho})")
            }
            Self::PureDrift { theta } => format!("pure_drift(theta={theta})"),
            Self::Custom(cl) => format!("custom(drift={}, support=({}, {}))", cl.drift, cl.lower, cl.upper),
        }
    }
}

/// Exponential tempering rate of the relativistic stable Lévy density.
pub(crate) fn tempering_rate(beta: f64, rho: f64) -> f64 {
    rho.powf(1.0 / beta)
}

fn check_custom_integrability(cl: &CustomLevy) -> Result<()> {
    let dens = |x: f64| {
        if x > cl.lower && x < cl.upper {
            (cl.density)(x)
        } else {
            0.0
        }
    };
    // spot-check sign and finiteness
    for k in -12..=12 {
        let x = 10f64.powi(k);
        if x > cl.lower && x < cl.upper {
            let v = dens(x);
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::NonIntegrableLevy(format!(
                    "density must be finite and non-negative, got {v} at x = {x:e}"
                )));
            }
        }
    }
    let split = 1.0f64.clamp(cl.lower, cl.upper);
    if cl.lower == 0.0 && split > 0.0 {
        if let ShellOutcome::Divergent(at) = quad::integrate_to_zero(|x| x * dens(x), split, 1e-8) {
            return Err(Error::NonIntegrableLevy(format!(
                "divergent near 0: ∫ x ν(dx) over (0, {split}] does not converge (shell contributions stop decaying below x = {at:e})"
            )));
        }
    }
    if cl.upper.is_infinite() {
        if let ShellOutcome::Divergent(at) = quad::integrate_to_infinity(dens, split.max(cl.lower), 1e-8) {
            return Err(Error::NonIntegrableLevy(format!(
                "divergent at infinity: ∫ ν(dx) over [{}, ∞) does not converge (shell contributions stop decaying above x = {at:e})",
                split.max(cl.lower)
            )));
        }
    }
    Ok(())
}

/// Outcome of comparing the empirical Laplace transform with `e^{-t φ(u)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LaplaceReport {
    pub empirical: Estimate,
    pub analytic: f64,
    pub z_score: f64,
}

/// Empirical `E e^{-u S(t)}` against `e^{-t φ(u)}`.
pub fn laplace_transform_check(
    phi: &BernsteinFunction,
    t: f64,
    u: f64,
    n_paths: usize,
    streams: &StreamFactory,
) -> Result<LaplaceReport> {
    if n_paths < 100 {
        return Err(Error::TooFewSamples {
            got: n_paths,
            need: 100,
        });
    }
    check_positive("t", t)?;
    check_positive("u", u)?;
    let analytic = (-t * phi.evaluate(u)).exp();
    if phi.is_deterministic() {
        return Ok(LaplaceReport {
            empirical: Estimate {
                mean: analytic,
                std_error: 0.0,
                n: n_paths,
            },
            analytic,
            z_score: 0.0,
        });
    }
    let sampler = IncrementSampler::new(phi, t)?;
    let values = crate::parallel::map_paths(n_paths, |i| {
        let mut rng = streams.stream(i as u64);
        sampler.sample(&mut rng).map(|s| (-u * s).exp())
    })?;
    let empirical = Estimate::from_samples(&values);
    Ok(LaplaceReport {
        empirical,
        analytic,
        z_score: empirical.z_score(analytic),
    })
}

/// JSON form of a subordinator law, e.g. `{"kind":"stable","alpha":0.7,"c":1.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BernsteinSpec {
    Stable {
        alpha: f64,
        #[serde(default = "one")]
        c: f64,
    },
    TruncatedStable {
        beta: f64,
        #[serde(default = "one")]
        c: f64,
    },
    RelativisticStable {
        beta: f64,
        #[serde(default = "one")]
        c: f64,
        #[serde(default = "one")]
        rho: f64,
    },
    PureDrift {
        theta: f64,
    },
    /// Drift plus the density `c e^{-tempering x} x^{-1-exponent}` on `(lower, upper)`.
    Custom {
        #[serde(default)]
        drift: f64,
        #[serde(default = "one")]
        c: f64,
        exponent: f64,
        #[serde(default)]
        tempering: f64,
        #[serde(default)]
        lower: f64,
        #[serde(default)]
        upper: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl BernsteinSpec {
    pub fn build(&self) -> Result<BernsteinFunction> {
        match *self {
            Self::Stable { alpha, c } => BernsteinFunction::stable(alpha, c),
            Self::TruncatedStable { beta, c } => BernsteinFunction::truncated_stable(beta, c),
            Self::RelativisticStable { beta, c, rho } => {
                BernsteinFunction::relativistic_stable(beta, c, rho)
            }
            Self::PureDrift { theta } => BernsteinFunction::pure_drift(theta),
            Self::Custom {
                drift,
                c,
                exponent,
                tempering,
                lower,
                upper,
            } => {
                check_positive("c", c)?;
                if tempering < 0.0 {
                    return Err(invalid("tempering", "must be >= 0"));
                }
                let density: LevyDensity =
                    Arc::new(move |x: f64| c * (-tempering * x).exp() * x.powf(-1.0 - exponent));
                BernsteinFunction::custom(drift, density, lower, upper.unwrap_or(f64::INFINITY))
            }
        }
    }
}
