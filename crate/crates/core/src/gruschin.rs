//! The Gruschin-type system
//!
//! ```text
//! dX1 = σ_t dW1(ℓ1(t)),   dX2 = b(t, X2) dt + |X1|^l dW2(ℓ2(t))
//! ```
//!
//! with deterministic clocks `ℓ1, ℓ2` or independent subordinators, simulated
//! by an Euler scheme whose Brownian increments are drawn directly as
//! `N(0, Δℓ I)`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bernstein::BernsteinFunction;
use crate::error::{invalid, Error, Result};
use crate::parallel::map_paths;
use crate::rng::{tags, PathRng, StreamFactory};
use crate::stats::{compensated_sum, Estimate};
use crate::subordinator::{sample_path_with, uniform_grid, SamplerOptions};
use crate::timechange::TimeChange;

/// Right-continuous step function `t ↦ values[j]` on `[starts[j], starts[j+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    starts: Vec<f64>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn constant(v: f64) -> Self {
        Self {
            starts: vec![0.0],
            values: vec![v],
        }
    }

    pub fn new(starts: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if starts.is_empty() || starts.len() != values.len() {
            return Err(invalid("step function", "need matching, non-empty starts and values"));
        }
        if starts[0] != 0.0 {
            return Err(invalid("step function", "first piece must start at t = 0"));
        }
        if starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("step function", "piece starts must increase"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("step function", "values must be finite"));
        }
        Ok(Self { starts, values })
    }

    fn piece(&self, t: f64) -> usize {
        self.starts.partition_point(|&s| s <= t).max(1) - 1
    }

    pub fn at(&self, t: f64) -> f64 {
        self.values[self.piece(t)]
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    /// `∫_s^t f(r) dr` (negative when `t < s`).
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        if t < s {
            return -self.integral(t, s);
        }
        if self.starts.len() == 1 {
            return self.values[0] * (t - s);
        }
        let mut acc = 0.0;
        let mut a = s;
        let mut j = self.piece(s);
        while a < t {
            let end = self.starts.get(j + 1).copied().unwrap_or(f64::INFINITY).min(t);
            acc += self.values[j] * (end - a);
            a = end;
            j += 1;
        }
        acc
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

#[derive(Debug, Clone)]
struct SigmaPiece {
    mat: Vec<f64>,
    inv: Vec<f64>,
    inv_norm: f64,
    hs_sq: f64,
    identity: bool,
}

/// Piecewise-constant `m × m` diffusion matrix `σ_t`.
#[derive(Debug, Clone)]
pub struct Sigma {
    m: usize,
    starts: Vec<f64>,
    pieces: Vec<SigmaPiece>,
}

impl Sigma {
    pub fn identity(m: usize) -> Self {
        let mut mat = vec![0.0; m * m];
        for i in 0..m {
            mat[i * m + i] = 1.0;
        }
        Self {
            m,
            starts: vec![0.0],
            pieces: vec![SigmaPiece {
                inv: mat.clone(),
                mat,
                inv_norm: 1.0,
                hs_sq: m as f64,
                identity: true,
            }],
        }
    }

    pub fn constant(rows: &[Vec<f64>]) -> Result<Self> {
        Self::piecewise(vec![0.0], vec![rows.to_vec()])
    }

    /// `σ_t = matrices[j]` on `[starts[j], starts[j+1])`, given as row lists.
    pub fn piecewise(starts: Vec<f64>, matrices: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if starts.is_empty() || starts.len() != matrices.len() || starts[0] != 0.0 {
            return Err(invalid("sigma", "need one matrix per piece, first piece starting at 0"));
        }
        if starts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("sigma", "piece starts must increase"));
        }
        let m = matrices[0].len();
        let mut pieces = Vec::with_capacity(matrices.len());
        for (j, rows) in matrices.iter().enumerate() {
            if rows.len() != m || rows.iter().any(|r| r.len() != m) || m == 0 {
                return Err(invalid("sigma", format!("piece {j} is not {m} x {m}")));
            }
            let a = DMatrix::from_fn(m, m, |r, c| rows[r][c]);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(invalid("sigma", format!("piece {j} has non-finite entries")));
            }
            let sv = a.singular_values();
            let smin = sv.min();
            let smax = sv.max();
            if !(smin > 0.0) || smax / smin > 1e12 {
                return Err(invalid(
                    "sigma",
                    format!("piece {j} is singular or ill-conditioned (condition number {:e})", smax / smin),
                ));
            }
            let inv = a.clone().try_inverse().ok_or_else(|| invalid("sigma", format!("piece {j} not invertible")))?;
            let row_major = |x: &DMatrix<f64>| (0..m).flat_map(|r| (0..m).map(move |c| (r, c))).map(|(r, c)| x[(r, c)]).collect::<Vec<f64>>();
            pieces.push(SigmaPiece {
                mat: row_major(&a),
                inv: row_major(&inv),
                inv_norm: 1.0 / smin,
                hs_sq: a.iter().map(|v| v * v).sum(),
                identity: a == DMatrix::identity(m, m),
            });
        }
        Ok(Self { m, starts, pieces })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn starts(&self) -> &[f64] {
        &self.starts
    }

    fn piece(&self, t: f64) -> &SigmaPiece {
        &self.pieces[self.starts.partition_point(|&s| s <= t).max(1) - 1]
    }

    fn matvec(m: usize, a: &[f64], v: &[f64], out: &mut [f64]) {
        for r in 0..m {
            out[r] = (0..m).map(|c| a[r * m + c] * v[c]).sum();
        }
    }

    /// `out = σ_t v`.
    pub fn apply(&self, t: f64, v: &[f64], out: &mut [f64]) {
        let p = self.piece(t);
        if p.identity {
            out.copy_from_slice(v);
        } else {
            Self::matvec(self.m, &p.mat, v, out);
        }
    }

    /// `out = σ_t^{-1} v`.
    pub fn apply_inverse(&self, t: f64, v: &[f64], out: &mut [f64]) {
        let p = self.piece(t);
        if p.identity {
            out.copy_from_slice(v);
        } else {
            Self::matvec(self.m, &p.inv, v, out);
        }
    }

    /// Operator norm `‖σ_t^{-1}‖`.
    pub fn inverse_norm(&self, t: f64) -> f64 {
        self.piece(t).inv_norm
    }

    /// Squared Hilbert–Schmidt norm `‖σ_t‖²_HS`.
    pub fn hs_norm_sq(&self, t: f64) -> f64 {
        self.piece(t).hs_sq
    }

    /// `σ_t σ_tᵀ` as a row-major matrix.
    pub fn covariance(&self, t: f64) -> Vec<f64> {
        let p = self.piece(t);
        let m = self.m;
        let mut out = vec![0.0; m * m];
        for r in 0..m {
            for c in 0..m {
                out[r * m + c] = (0..m).map(|k| p.mat[r * m + k] * p.mat[c * m + k]).sum();
            }
        }
        out
    }
}

/// Function `b(t, z, out)` writing the drift at `z` into `out`.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Drift `b(t, ·)` of the second component.
#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `b(z) = A z`, `A` given row-major.
    Linear { matrix: Vec<f64> },
    /// `b(z) = a z - c |z|² z` with `c >= 0`.
    Cubic { linear: f64, cubic: f64 },
    Custom(DriftFn),
}

impl std::fmt::Debug for Drift {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Drift::Zero => write!(f, "Zero"),
            Drift::Linear { matrix } => write!(f, "Linear({matrix:?})"),
            Drift::Cubic { linear, cubic } => write!(f, "Cubic(a={linear}, c={cubic})"),
            Drift::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl Drift {
    pub fn is_zero(&self) -> bool {
        matches!(self, Drift::Zero)
    }

    pub fn apply(&self, t: f64, z: &[f64], out: &mut [f64]) {
        match self {
            Drift::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            Drift::Linear { matrix } => {
                let d = z.len();
                for r in 0..d {
                    out[r] = (0..d).map(|c| matrix[r * d + c] * z[c]).sum();
                }
            }
            Drift::Cubic { linear, cubic } => {
                let n2: f64 = z.iter().map(|v| v * v).sum();
                for (o, v) in out.iter_mut().zip(z) {
                    *o = (linear - cubic * n2) * v;
                }
            }
            Drift::Custom(f) => f(t, z, out),
        }
    }
}

/// A point `(x1, x2) ∈ ℝ^m × ℝ^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePoint {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl StatePoint {
    pub fn new(x1: Vec<f64>, x2: Vec<f64>) -> Self {
        Self { x1, x2 }
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            x1: vec![0.0; m],
            x2: vec![0.0; d],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x1.iter().chain(&self.x2).all(|v| v.is_finite())
    }

    /// All coordinates, `x1` first.
    pub fn flat(&self) -> Vec<f64> {
        self.x1.iter().chain(&self.x2).copied().collect()
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|v|^l`, with `0^l = 0`.
pub(crate) fn gruschin_factor(v: &[f64], l: f64) -> f64 {
    let n = norm(v);
    if n == 0.0 {
        0.0
    } else {
        n.powf(l)
    }
}

/// Model coefficients, validated against the structural hypotheses:
/// `‖σ_t^{-1}‖ <= λ_t` with `λ` non-decreasing, and the one-sided Lipschitz
/// bound `⟨b(t,x) - b(t,y), x - y⟩ <= k(t) |x - y|²`.
#[derive(Debug, Clone)]
pub struct GruschinModel {
    m: usize,
    d: usize,
    l: f64,
    sigma: Sigma,
    lambda: StepFunction,
    drift: Drift,
    k: StepFunction,
}

const H2_SEED: u64 = 0x6a09_e667_f3bc_c908;

impl GruschinModel {
    pub fn new(
        m: usize,
        d: usize,
        l: f64,
        sigma: Sigma,
        lambda: StepFunction,
        drift: Drift,
        k: StepFunction,
    ) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(invalid("dimensions", format!("m and d must be >= 1, got m = {m}, d = {d}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(invalid("l", format!("must be positive, got {l}")));
        }
        if sigma.dim() != m {
            return Err(invalid("sigma", format!("is {0} x {0}, expected {m} x {m}", sigma.dim())));
        }
        if let Drift::Linear { matrix } = &drift {
            if matrix.len() != d * d {
                return Err(invalid("drift", format!("linear drift needs {} entries, got {}", d * d, matrix.len())));
            }
        }
        if let Drift::Cubic { cubic, .. } = &drift {
            if *cubic < 0.0 {
                return Err(invalid("drift", "cubic coefficient must be >= 0"));
            }
        }
        let model = Self {
            m,
            d,
            l,
            sigma,
            lambda,
            drift,
            k,
        };
        model.check_h1()?;
        model.check_h2()?;
        Ok(model)
    }

    /// Identity `σ`, `λ ≡ 1`, `b = 0`, `k = 0`.
    pub fn standard(m: usize, d: usize, l: f64) -> Result<Self> {
        Self::new(
            m,
            d,
            l,
            Sigma::identity(m),
            StepFunction::constant(1.0),
            Drift::Zero,
            StepFunction::constant(0.0),
        )
    }

    fn check_h1(&self) -> Result<()> {
        if self.lambda.values().windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Hypothesis {
                hypothesis: "H1",
                detail: "lambda must be non-decreasing".into(),
            });
        }
        // both sides are right-continuous step functions, so the union of
        // their breakpoints covers every piece
        let mut points: Vec<f64> = self.sigma.starts().iter().chain(self.lambda.starts()).copied().collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        for t in points {
            let (inv, lam) = (self.sigma.inverse_norm(t), self.lambda.at(t));
            if inv > lam * (1.0 + 1e-12) {
                return Err(Error::Hypothesis {
                    hypothesis: "H1",
                    detail: format!("‖σ_t^-1‖ = {inv} exceeds λ_t = {lam} at t = {t}"),
                });
            }
        }
        Ok(())
    }

    fn check_h2(&self) -> Result<()> {
        if self.drift.is_zero() {
            if self.k.values().iter().any(|&v| v < 0.0) {
                return Err(Error::Hypothesis {
                    hypothesis: "H2",
                    detail: "b = 0 needs k(t) >= 0".into(),
                });
            }
            return Ok(());
        }
        let d = self.d;
        let t_max = self.k.starts().last().copied().unwrap_or(0.0) + 10.0;
        let mut rng = PathRng::seed_from_u64(H2_SEED);
        let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
        for trial in 0..2000 {
            let t = rng.random::<f64>() * t_max;
            let scale = [0.1, 1.0, 3.0, 10.0][trial % 4];
            let x: Vec<f64> = (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let y: Vec<f64> = if trial % 3 == 0 {
                x.iter().map(|v| v + 1e-3 * rng.sample::<f64, _>(StandardNormal)).collect()
            } else {
                (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
            };
            self.drift.apply(t, &x, &mut bx);
            self.drift.apply(t, &y, &mut by);
            let diff2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            let lhs: f64 = (0..d).map(|i| (bx[i] - by[i]) * (x[i] - y[i])).sum();
            let kt = self.k.at(t);
            let slack = 1e-9 * diff2.sqrt() * (norm(&bx) + norm(&by) + kt.abs() * diff2.sqrt()) + 1e-300;
            if lhs > kt * diff2 + slack {
                return Err(Error::Hypothesis {
                    hypothesis: "H2",
                    detail: format!(
                        "⟨b(t,x)-b(t,y), x-y⟩ = {lhs:e} > k(t)|x-y|² = {:e} at t = {t}, x = {x:?}, y = {y:?}",
                        kt * diff2
                    ),
                });
            }
        }
        Ok(())
    }

    /// Errors unless `l ∈ (0, m/2)`, the range the log-Harnack bound needs.
    pub fn require_harnack_range(&self) -> Result<()> {
        if self.l < self.m as f64 / 2.0 {
            Ok(())
        } else {
            Err(invalid("l", format!("must lie in (0, m/2) = (0, {}), got {}", self.m as f64 / 2.0, self.l)))
        }
    }

    /// Explicit-drift stability guard `sup |k| dt < 0.1`.
    pub fn check_step(&self, dt: f64) -> Result<()> {
        let kd = self.k.sup_abs() * dt;
        if kd < 0.1 {
            Ok(())
        } else {
            Err(invalid("n_steps", format!("sup|k|·dt = {kd} must be < 0.1; increase n_steps")))
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn l(&self) -> f64 {
        self.l
    }
    pub fn sigma(&self) -> &Sigma {
        &self.sigma
    }
    pub fn lambda(&self) -> &StepFunction {
        &self.lambda
    }
    pub fn drift(&self) -> &Drift {
        &self.drift
    }
    pub fn k(&self) -> &StepFunction {
        &self.k
    }

    /// `K(s, t) = ∫_s^t k(r) dr`.
    pub fn big_k(&self, s: f64, t: f64) -> f64 {
        self.k.integral(s, t)
    }

    pub fn check_point(&self, x: &StatePoint) -> Result<()> {
        if x.x1.len() != self.m || x.x2.len() != self.d {
            return Err(invalid(
                "point",
                format!("expected dimensions ({}, {}), got ({}, {})", self.m, self.d, x.x1.len(), x.x2.len()),
            ));
        }
        if !x.is_finite() {
            return Err(invalid("point", "coordinates must be finite"));
        }
        Ok(())
    }

    /// One Euler step from `t` to `t + dt`, given already-scaled increments
    /// `dw1 ~ N(0, Δℓ1 I_m)` and `dw2 ~ N(0, Δℓ2 I_d)`. All coefficients are
    /// taken at the left endpoint.
    pub fn step(&self, t: f64, dt: f64, state: &mut StatePoint, dw1: &[f64], dw2: &[f64], scratch: &mut Scratch) {
        let g = gruschin_factor(&state.x1, self.l);
        self.sigma.apply(t, dw1, &mut scratch.m);
        for (x, s) in state.x1.iter_mut().zip(&scratch.m) {
            *x += s;
        }
        if self.drift.is_zero() {
            for (x, w) in state.x2.iter_mut().zip(dw2) {
                *x += g * w;
            }
        } else {
            self.drift.apply(t, &state.x2, &mut scratch.d);
            for ((x, b), w) in state.x2.iter_mut().zip(&scratch.d).zip(dw2) {
                *x += b * dt + g * w;
            }
        }
    }
}

/// Work buffers for [`GruschinModel::step`].
#[derive(Debug, Clone)]
pub struct Scratch {
    pub m: Vec<f64>,
    pub d: Vec<f64>,
}

impl Scratch {
    pub fn new(model: &GruschinModel) -> Self {
        Self {
            m: vec![0.0; model.m],
            d: vec![0.0; model.d],
        }
    }
}

/// Source of standard normal variates for the Brownian increments.
pub trait NoiseSource {
    fn fill_normals(&mut self, out: &mut [f64]);
}

impl NoiseSource for PathRng {
    fn fill_normals(&mut self, out: &mut [f64]) {
        for o in out {
            *o = self.sample(StandardNormal);
        }
    }
}

/// One point of a randomly shifted rank-1 (Korobov) lattice, mapped to
/// normals through the inverse CDF, one coordinate per requested variate.
#[derive(Debug, Clone)]
pub struct LatticeNoise {
    n: u64,
    a: u64,
    index: u64,
    power: u64,
    dim: usize,
    shift: Arc<Vec<f64>>,
    normal: Normal,
}

impl LatticeNoise {
    /// Point `index` of an `n`-point lattice with Cranley–Patterson `shift`.
    pub fn new(n: u64, index: u64, shift: Arc<Vec<f64>>) -> Self {
        Self {
            n,
            a: korobov_generator(n),
            index,
            power: 1 % n.max(1),
            dim: 0,
            shift,
            normal: Normal::standard(),
        }
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn korobov_generator(n: u64) -> u64 {
    if n <= 2 {
        return 1;
    }
    let mut a = ((n as f64) * 0.618_033_988_749_894_9) as u64 | 1;
    while gcd(a, n) != 1 {
        a += 2;
    }
    a
}

impl NoiseSource for LatticeNoise {
    fn fill_normals(&mut self, out: &mut [f64]) {
        for o in out {
            let shift = self.shift.get(self.dim).copied().unwrap_or(0.5);
            let base = ((self.index as u128 * self.power as u128) % self.n as u128) as f64 / self.n as f64;
            let u = (base + shift).fract().clamp(1e-16, 1.0 - 1e-16);
            *o = self.normal.inverse_cdf(u);
            self.power = ((self.power as u128 * self.a as u128) % self.n as u128) as u64;
            self.dim += 1;
        }
    }
}

/// Clock increments on a uniform step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ClockIncrements {
    pub grid: Vec<f64>,
    pub dl1: Vec<f64>,
    pub dl2: Vec<f64>,
}

/// The pair of clocks driving the two components.
#[derive(Debug, Clone)]
pub enum Clocks {
    Deterministic { ell1: TimeChange, ell2: TimeChange },
    /// Independent subordinators, optionally regularized by the moving
    /// average `ℓ^ε` before use.
    Subordinated {
        phi1: BernsteinFunction,
        phi2: BernsteinFunction,
        eps: Option<f64>,
        sampler: SamplerOptions,
    },
}

impl Clocks {
    pub fn subordinated(phi1: BernsteinFunction, phi2: BernsteinFunction) -> Self {
        Self::Subordinated {
            phi1,
            phi2,
            eps: None,
            sampler: SamplerOptions::default(),
        }
    }

    pub fn identity(horizon: f64, n: usize) -> Self {
        Self::Deterministic {
            ell1: TimeChange::identity(horizon, n),
            ell2: TimeChange::identity(horizon, n),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Clocks::Subordinated { .. })
    }

    /// Clock increments on `t_i = horizon i / n_steps`. Subordinators are
    /// drawn from `rng` (first `S1`, then `S2`); deterministic clocks draw nothing.
    pub fn realize<R: Rng + ?Sized>(&self, horizon: f64, n_steps: usize, rng: &mut R) -> Result<ClockIncrements> {
        let grid = uniform_grid(horizon, n_steps);
        let (dl1, dl2) = match self {
            Clocks::Deterministic { ell1, ell2 } => (ell1.increments_on(&grid)?, ell2.increments_on(&grid)?),
            Clocks::Subordinated { phi1, phi2, eps, sampler } => {
                let draw = |phi: &BernsteinFunction, rng: &mut R| -> Result<Vec<f64>> {
                    match eps {
                        None => {
                            let p = sample_path_with(phi, horizon, n_steps, *sampler, rng)?;
                            Ok(p.values.windows(2).map(|w| w[1] - w[0]).collect())
                        }
                        Some(eps) => {
                            let dt = horizon / n_steps as f64;
                            let extra = (eps / dt - 1e-9).ceil().max(1.0) as usize;
                            let n_ext = n_steps + extra;
                            let p = sample_path_with(phi, dt * n_ext as f64, n_ext, *sampler, rng)?;
                            p.to_time_change().regularize(*eps, horizon)?.increments_on(&grid)
                        }
                    }
                };
                let a = draw(phi1, rng)?;
                let b = draw(phi2, rng)?;
                (a, b)
            }
        };
        Ok(ClockIncrements { grid, dl1, dl2 })
    }
}

/// A simulated trajectory on the step grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub states: Vec<StatePoint>,
}

impl SamplePath {
    pub fn terminal(&self) -> &StatePoint {
        self.states.last().expect("non-empty path")
    }

    /// `t,x1_0,..,x2_0,..` CSV.
    pub fn to_csv(&self) -> String {
        let (m, d) = (self.states[0].x1.len(), self.states[0].x2.len());
        let mut s = String::from("t");
        (0..m).for_each(|i| s.push_str(&format!(",x1_{i}")));
        (0..d).for_each(|i| s.push_str(&format!(",x2_{i}")));
        s.push('\n');
        for (t, x) in self.times.iter().zip(&self.states) {
            s.push_str(&t.to_string());
            for v in x.flat() {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Euler scheme along given clock increments; `observe(i, state)` sees every
/// grid state including the start. Draws `m` then `d` normals per step.
pub fn euler<N: NoiseSource>(
    model: &GruschinModel,
    x: &StatePoint,
    clocks: &ClockIncrements,
    noise: &mut N,
    mut observe: impl FnMut(usize, &StatePoint),
) -> Result<StatePoint> {
    model.check_point(x)?;
    let n = clocks.dl1.len();
    let mut state = x.clone();
    let mut scratch = Scratch::new(model);
    let mut dw1 = vec![0.0; model.m];
    let mut dw2 = vec![0.0; model.d];
    observe(0, &state);
    for i in 0..n {
        let t = clocks.grid[i];
        let dt = clocks.grid[i + 1] - t;
        noise.fill_normals(&mut dw1);
        noise.fill_normals(&mut dw2);
        let (s1, s2) = (clocks.dl1[i].sqrt(), clocks.dl2[i].sqrt());
        dw1.iter_mut().for_each(|w| *w *= s1);
        dw2.iter_mut().for_each(|w| *w *= s2);
        model.step(t, dt, &mut state, &dw1, &dw2, &mut scratch);
        if !state.is_finite() {
            return Err(Error::NonFinite { step: i + 1 });
        }
        observe(i + 1, &state);
    }
    Ok(state)
}

fn check_run(model: &GruschinModel, horizon: f64, n_steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("must be positive, got {horizon}")));
    }
    if n_steps == 0 {
        return Err(invalid("n_steps", "must be >= 1"));
    }
    model.check_step(horizon / n_steps as f64)
}

fn record_path<N: NoiseSource>(model: &GruschinModel, x: &StatePoint, inc: &ClockIncrements, noise: &mut N) -> Result<SamplePath> {
    let mut states = Vec::with_capacity(inc.grid.len());
    euler(model, x, inc, noise, |_, s| states.push(s.clone()))?;
    Ok(SamplePath {
        times: inc.grid.clone(),
        states,
    })
}

/// Euler path under deterministic clocks on `[0, T]`.
pub fn simulate_deterministic(
    model: &GruschinModel,
    x: &StatePoint,
    ell1: &TimeChange,
    ell2: &TimeChange,
    horizon: f64,
    n_steps: usize,
    rng: &mut PathRng,
) -> Result<SamplePath> {
    check_run(model, horizon, n_steps)?;
    let clocks = Clocks::Deterministic {
        ell1: ell1.clone(),
        ell2: ell2.clone(),
    };
    let inc = clocks.realize(horizon, n_steps, rng)?;
    record_path(model, x, &inc, rng)
}

/// Euler path under independent subordinator clocks: `S1`, `S2` are drawn
/// first from `rng`, then the Brownian increments.
pub fn simulate_subordinated(
    model: &GruschinModel,
    x: &StatePoint,
    phi1: &BernsteinFunction,
    phi2: &BernsteinFunction,
    horizon: f64,
    n_steps: usize,
    rng: &mut PathRng,
) -> Result<SamplePath> {
    check_run(model, horizon, n_steps)?;
    let inc = Clocks::subordinated(phi1.clone(), phi2.clone()).realize(horizon, n_steps, rng)?;
    record_path(model, x, &inc, rng)
}

/// A bounded test function on `ℝ^{m+d}`.
pub type TestFn<'a> = &'a (dyn Fn(&StatePoint) -> f64 + Sync);

/// Number of independent lattice shifts in randomized QMC estimates.
pub const QMC_REPLICATES: usize = 16;

/// Monte Carlo estimate of `P_t f(x) = E f(X_t(x))`, one stream per path.
#[allow(clippy::too_many_arguments)]
pub fn semigroup(
    model: &GruschinModel,
    f: TestFn<'_>,
    horizon: f64,
    x: &StatePoint,
    clocks: &Clocks,
    n_paths: usize,
    n_steps: usize,
    streams: &StreamFactory,
) -> Result<Estimate> {
    let v = endpoint_values(model, f, horizon, x, clocks, n_paths, n_steps, streams)?;
    Ok(Estimate::from_samples(&v))
}

/// `f(X_t(x))` for each path index.
#[allow(clippy::too_many_arguments)]
pub fn endpoint_values(
    model: &GruschinModel,
    f: TestFn<'_>,
    horizon: f64,
    x: &StatePoint,
    clocks: &Clocks,
    n_paths: usize,
    n_steps: usize,
    streams: &StreamFactory,
) -> Result<Vec<f64>> {
    check_run(model, horizon, n_steps)?;
    model.check_point(x)?;
    let fixed = match clocks {
        Clocks::Deterministic { .. } => Some(clocks.realize(horizon, n_steps, &mut streams.stream(0))?),
        Clocks::Subordinated { .. } => None,
    };
    map_paths(n_paths, |i| {
        let mut rng = streams.stream(i as u64);
        let inc = match &fixed {
            Some(inc) => inc.clone(),
            None => clocks.realize(horizon, n_steps, &mut rng)?,
        };
        let end = euler(model, x, &inc, &mut rng, |_, _| {})?;
        Ok(f(&end))
    })
}

/// Randomized-QMC estimate of `P_t f(x)`: `QMC_REPLICATES` independently
/// shifted lattices of `ceil(n_paths / QMC_REPLICATES)` points each; the
/// standard error comes from the spread of the replicate means. Subordinator
/// paths, if any, still use the per-path pseudo-random streams.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_qmc(
    model: &GruschinModel,
    f: TestFn<'_>,
    horizon: f64,
    x: &StatePoint,
    clocks: &Clocks,
    n_paths: usize,
    n_steps: usize,
    streams: &StreamFactory,
) -> Result<Estimate> {
    check_run(model, horizon, n_steps)?;
    model.check_point(x)?;
    let per = n_paths.div_ceil(QMC_REPLICATES).max(1);
    let dim = n_steps * (model.m + model.d);
    let shifts = streams.derive(tags::QMC_SHIFT);
    let mut means = Vec::with_capacity(QMC_REPLICATES);
    for r in 0..QMC_REPLICATES {
        let mut srng = shifts.stream(r as u64);
        let shift: Arc<Vec<f64>> = Arc::new((0..dim).map(|_| srng.random::<f64>()).collect());
        let vals = map_paths(per, |j| {
            let idx = (r * per + j) as u64;
            let inc = clocks.realize(horizon, n_steps, &mut streams.stream(idx))?;
            let mut noise = LatticeNoise::new(per as u64, j as u64, shift.clone());
            Ok(f(&euler(model, x, &inc, &mut noise, |_, _| {})?))
        })?;
        means.push(compensated_sum(vals) / per as f64);
    }
    let e = Estimate::from_samples(&means);
    Ok(Estimate {
        mean: e.mean,
        std_error: e.std_error,
        n: per * QMC_REPLICATES,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_function_integral() {
        let k = StepFunction::new(vec![0.0, 1.0, 2.0], vec![1.0, -2.0, 3.0]).unwrap();
        assert!((k.integral(0.5, 2.5) - (0.5 - 2.0 + 1.5)).abs() < 1e-15);
        assert!((k.integral(2.5, 0.5) + 0.0 - (-(0.5 - 2.0 + 1.5))).abs() < 1e-15);
        assert_eq!(k.at(1.0), -2.0);
    }

    #[test]
    fn h1_violation_rejected() {
        let sigma = Sigma::constant(&[vec![0.5, 0.0], vec![0.0, 1.0]]).unwrap();
        let err = GruschinModel::new(2, 1, 0.5, sigma, StepFunction::constant(1.5), Drift::Zero, StepFunction::constant(0.0)).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { hypothesis: "H1", .. }), "{err}");
    }

    #[test]
    fn h1_checked_at_every_piece() {
        let sigma = Sigma::piecewise(vec![0.0, 2.0], vec![vec![vec![1.0]], vec![vec![0.25]]]).unwrap();
        let lambda = StepFunction::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(GruschinModel::new(1, 1, 0.3, sigma, lambda, Drift::Zero, StepFunction::constant(0.0)).is_err());
    }

    #[test]
    fn h2_violation_rejected() {
        let drift = Drift::Linear { matrix: vec![2.0] };
        let err = GruschinModel::new(1, 1, 0.3, Sigma::identity(1), StepFunction::constant(1.0), drift, StepFunction::constant(1.0)).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { hypothesis: "H2", .. }), "{err}");
        let ok = Drift::Cubic { linear: 0.5, cubic: 1.0 };
        GruschinModel::new(1, 1, 0.3, Sigma::identity(1), StepFunction::constant(1.0), ok, StepFunction::constant(0.5)).unwrap();
    }

    #[test]
    fn singular_sigma_rejected() {
        assert!(Sigma::constant(&[vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_clocks_freeze_the_state() {
        let model = GruschinModel::standard(2, 1, 0.5).unwrap();
        let zero = TimeChange::linear(0.0, 1.0, 10);
        let x = StatePoint::new(vec![0.3, -1.0], vec![2.0]);
        let p = simulate_deterministic(&model, &x, &zero, &zero, 1.0, 10, &mut StreamFactory::new(1).stream(0)).unwrap();
        assert!(p.states.iter().all(|s| *s == x));
    }

    #[test]
    fn stiff_k_requires_small_steps() {
        let model = GruschinModel::new(1, 1, 0.3, Sigma::identity(1), StepFunction::constant(1.0), Drift::Linear { matrix: vec![-50.0] }, StepFunction::constant(-50.0)).unwrap();
        assert!(model.check_step(0.01).is_err());
        assert!(model.check_step(0.001).is_ok());
    }

    #[test]
    fn lattice_points_are_a_permutation() {
        let shift = Arc::new(vec![0.0; 2]);
        let n = 64u64;
        let mut firsts: Vec<f64> = (0..n)
            .map(|j| {
                let mut q = LatticeNoise::new(n, j, shift.clone());
                let mut o = [0.0];
                q.fill_normals(&mut o);
                o[0]
            })
            .collect();
        firsts.sort_by(f64::total_cmp);
        firsts.dedup();
        assert_eq!(firsts.len(), n as usize);
    }
}
