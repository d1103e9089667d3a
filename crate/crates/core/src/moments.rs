//! Negative moments of Gaussian vectors and a BDG-type maximal inequality for
//! stochastic integrals against time-changed Brownian motion.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{invalid, Result};
use crate::parallel::map_paths;
use crate::rng::StreamFactory;
use crate::stats::Estimate;
use crate::timechange::TimeChange;

fn check_theta(m: usize, theta: f64) -> Result<()> {
    if m == 0 {
        return Err(invalid("m", "must be >= 1"));
    }
    if !(theta > 0.0 && theta < m as f64 / 2.0) {
        return Err(invalid(
            "theta",
            format!("must lie in (0, m/2) = (0, {}), got {theta}; the integral diverges otherwise", m as f64 / 2.0),
        ));
    }
    Ok(())
}

/// `c(m, θ) = 2^{-θ} Γ(m/2 - θ) / Γ(m/2) = E|Z|^{-2θ}` for standard normal `Z ∈ ℝ^m`.
pub fn c_constant(m: usize, theta: f64) -> Result<f64> {
    check_theta(m, theta)?;
    let h = m as f64 / 2.0;
    Ok((-theta * std::f64::consts::LN_2 + ln_gamma(h - theta) - ln_gamma(h)).exp())
}

/// `ξ ~ N(0, σ I_m)` shifted by `μ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub m: usize,
    pub sigma2: f64,
    pub mu: Vec<f64>,
}

impl GaussianSpec {
    pub fn centered(m: usize, sigma2: f64) -> Self {
        Self {
            m,
            sigma2,
            mu: vec![0.0; m],
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(invalid("sigma2", format!("must be positive, got {}", self.sigma2)));
        }
        if self.mu.len() != self.m {
            return Err(invalid("mu", format!("must have length m = {}, got {}", self.m, self.mu.len())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NegativeMomentReport {
    /// `(3^{2θ} + 1) c(m, θ) σ^{-θ}`, valid for every shift `μ`.
    pub analytic_bound: f64,
    /// `c(m, θ) σ^{-θ}`, returned when `μ = 0`.
    pub exact: Option<f64>,
    pub mc: Estimate,
    pub warnings: Vec<String>,
}

/// Antithetic Monte Carlo estimate of `E|ξ - μ|^{-2θ}` from `n_samples` draws
/// (`n_samples / 2` antithetic pairs). The sample size is scaled up when `θ`
/// approaches `m/2`, where the integrand is heavy-tailed at the origin.
pub fn gaussian_negative_moment(
    spec: &GaussianSpec,
    theta: f64,
    n_samples: usize,
    streams: &StreamFactory,
) -> Result<NegativeMomentReport> {
    check_theta(spec.m, theta)?;
    spec.validate()?;
    let c = c_constant(spec.m, theta)?;
    let scale = spec.sigma2.powf(-theta);
    let mut warnings = Vec::new();
    let mut n = n_samples.max(2);
    if theta > 0.45 * spec.m as f64 {
        let gap = spec.m as f64 / 2.0 - theta;
        let factor = (0.05 * spec.m as f64 / gap).ceil().clamp(1.0, 16.0) as usize;
        n *= factor;
        warnings.push(format!(
            "theta = {theta} is close to m/2 = {}: |ξ - μ|^(-2θ) is heavy-tailed, sample size scaled by {factor} to {n}",
            spec.m as f64 / 2.0
        ));
    }
    let pairs = n / 2;
    let sd = spec.sigma2.sqrt();
    let values = map_paths(pairs, |i| {
        let mut rng = streams.stream(i as u64);
        let (mut plus, mut minus) = (0.0, 0.0);
        for mu in &spec.mu {
            let z: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
            plus += (z - mu) * (z - mu);
            minus += (-z - mu) * (-z - mu);
        }
        Ok(0.5 * (plus.powf(-theta) + minus.powf(-theta)))
    })?;
    let pair_est = Estimate::from_samples(&values);
    let mc = Estimate {
        n: 2 * pairs,
        ..pair_est
    };
    let at_origin = spec.mu.iter().all(|&v| v == 0.0);
    Ok(NegativeMomentReport {
        analytic_bound: (9f64.powf(theta) + 1.0) * c * scale,
        exact: at_origin.then_some(c * scale),
        mc,
        warnings,
    })
}

/// BDG constant `C_p` for `E sup_{s<=t} |M_s|^p <= C_p ⟨M⟩_t^{p/2}` when the
/// quadratic variation `⟨M⟩` is deterministic: Doob's `(p/(p-1))^p` times the
/// Gaussian moment bound for `p >= 2`, Lenglart's `(4-p)/(2-p)` below.
pub fn bdg_constant(p: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(invalid("p", format!("must be positive, got {p}")));
    }
    if p >= 2.0 {
        let doob = (p / (p - 1.0)).powf(p);
        let gauss = 2f64.powf(p / 2.0) * gamma((p + 1.0) / 2.0) / std::f64::consts::PI.sqrt();
        Ok(doob * gauss)
    } else {
        Ok((4.0 - p) / (2.0 - p))
    }
}

/// Piecewise-constant matrix function; unlike the model's `σ` it may be singular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixTable {
    pub starts: Vec<f64>,
    pub matrices: Vec<Vec<Vec<f64>>>,
}

impl MatrixTable {
    pub fn constant(rows: Vec<Vec<f64>>) -> Self {
        Self {
            starts: vec![0.0],
            matrices: vec![rows],
        }
    }

    pub fn identity(m: usize) -> Self {
        Self::constant((0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect())
    }

    fn validate(&self) -> Result<usize> {
        if self.starts.is_empty() || self.starts.len() != self.matrices.len() || self.starts[0] != 0.0 {
            return Err(invalid("sigma table", "need one matrix per piece, first piece starting at 0"));
        }
        if self.starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("sigma table", "piece starts must increase"));
        }
        let rows = self.matrices[0].len();
        let cols = self.matrices[0].first().map_or(0, |r| r.len());
        if rows == 0 || cols == 0 {
            return Err(invalid("sigma table", "matrices must be non-empty"));
        }
        if self.matrices.iter().any(|mat| mat.len() != rows || mat.iter().any(|r| r.len() != cols)) {
            return Err(invalid("sigma table", "all pieces must share one shape"));
        }
        Ok(cols)
    }

    pub fn at(&self, t: f64) -> &[Vec<f64>] {
        &self.matrices[self.starts.partition_point(|&s| s <= t).max(1) - 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BdgReport {
    /// `E sup_{s<=t} |∫_0^s σ_r dW(ℓ(r))|^p`.
    pub empirical_sup_moment: Estimate,
    /// `C_p (∫_0^t ‖σ_r‖²_HS dℓ(r))^{p/2}`.
    pub bound: f64,
    pub constant: f64,
    /// `bound - empirical` in standard errors (negative means violated).
    pub slack_se: f64,
}

/// Simulates `M_s = ∫_0^s σ_r dW(ℓ(r))` on the knots of `ell` and `σ` in `[0, t]`
/// (left-point integrand, increments `N(0, Δℓ I)`), and compares the running
/// maximum's `p`-th moment with the BDG bound.
pub fn bdg_check(
    sigma: &MatrixTable,
    ell: &TimeChange,
    p: f64,
    t: f64,
    n_paths: usize,
    streams: &StreamFactory,
) -> Result<BdgReport> {
    let cols = sigma.validate()?;
    let constant = bdg_constant(p)?;
    if !(t > ell.start() && t <= ell.end()) {
        return Err(invalid("t", format!("must lie in ({}, {}], got {t}", ell.start(), ell.end())));
    }
    // σ must be constant on each cell, so that a jump of ℓ at the right end
    // sees σ's left limit
    let mut grid: Vec<f64> = ell
        .times()
        .iter()
        .chain(&sigma.starts)
        .copied()
        .filter(|&s| s >= ell.start() && s < t)
        .collect();
    grid.push(t);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let dl = ell.increments_on(&grid)?;
    let qv: f64 = grid
        .windows(2)
        .zip(&dl)
        .map(|(w, d)| sigma.at(w[0]).iter().flatten().map(|v| v * v).sum::<f64>() * d)
        .sum();
    let bound = constant * qv.powf(p / 2.0);
    let values = map_paths(n_paths, |i| {
        let mut rng = streams.stream(i as u64);
        let rows = sigma.matrices[0].len();
        let mut m = vec![0.0; rows];
        let mut z = vec![0.0; cols];
        let mut sup: f64 = 0.0;
        for (w, d) in grid.windows(2).zip(&dl) {
            let s = d.sqrt();
            z.iter_mut().for_each(|v| *v = rng.sample::<f64, _>(StandardNormal) * s);
            for (mi, row) in m.iter_mut().zip(sigma.at(w[0])) {
                *mi += row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
            }
            sup = sup.max(m.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
        Ok(sup.powf(p))
    })?;
    let empirical = Estimate::from_samples(&values);
    let slack_se = if empirical.std_error > 0.0 {
        (bound - empirical.mean) / empirical.std_error
    } else if bound >= empirical.mean {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    Ok(BdgReport {
        empirical_sup_moment: empirical,
        bound,
        constant,
        slack_se,
    })
}
