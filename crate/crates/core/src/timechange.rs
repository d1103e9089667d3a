//! Deterministic clocks `ℓ`, their moving-average regularizations `ℓ^ε`,
//! inverses, and right-endpoint Stieltjes sums against them.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Càdlàg step function: `ℓ(t) = ℓ(t_j)` on `[t_j, t_{j+1})`.
    PiecewiseConstant,
    PiecewiseLinear,
}

/// A non-decreasing function given by its values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChange {
    times: Vec<f64>,
    values: Vec<f64>,
    interp: Interpolation,
}

// grid lookups snap to a knot within this relative distance, so grids built
// by different but equivalent formulas agree
const SNAP: f64 = 1e-12;

impl TimeChange {
    /// Validates strictly increasing times and non-decreasing finite values.
    pub fn new(times: Vec<f64>, values: Vec<f64>, interp: Interpolation) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return Err(invalid(
                "time change",
                format!("need >= 2 matching knots, got {} times and {} values", times.len(), values.len()),
            ));
        }
        if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(invalid("time change", format!("grid times not increasing at index {}", i + 1)));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid("time change", format!("non-finite value at index {i}")));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(invalid("time change", format!("values decrease at index {}", i + 1)));
        }
        Ok(Self { times, values, interp })
    }

    pub(crate) fn from_parts_unchecked(times: Vec<f64>, values: Vec<f64>, interp: Interpolation) -> Self {
        debug_assert_eq!(times.len(), values.len());
        Self { times, values, interp }
    }

    /// `ℓ(t) = θ t` on a uniform grid with `n` cells.
    pub fn linear(theta: f64, horizon: f64, n: usize) -> Self {
        let times = crate::subordinator::uniform_grid(horizon, n);
        let values = times.iter().map(|t| theta * t).collect();
        Self::from_parts_unchecked(times, values, Interpolation::PiecewiseLinear)
    }

    pub fn identity(horizon: f64, n: usize) -> Self {
        Self::linear(1.0, horizon, n)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interp
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Index `j` with `t_j <= t < t_{j+1}` (or the last knot), after snapping.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (lo, hi) = (self.start(), self.end());
        let tol = SNAP * lo.abs().max(hi.abs()).max(1.0);
        if t < lo - tol || t > hi + tol || t.is_nan() {
            return Err(Error::OutOfDomain { value: t, lo, hi });
        }
        let j = self.times.partition_point(|&s| s <= t);
        // snap to a knot just above t
        if j < self.times.len() && self.times[j] - t <= tol {
            return Ok((j, self.times[j]));
        }
        Ok((j.max(1) - 1, t.max(lo).min(hi)))
    }

    /// `ℓ(t)` for `t` within the grid.
    pub fn eval(&self, t: f64) -> Result<f64> {
        let (j, t) = self.locate(t)?;
        Ok(self.eval_in_cell(j, t))
    }

    fn eval_in_cell(&self, j: usize, t: f64) -> f64 {
        if t == self.times[j] || j + 1 == self.times.len() {
            return self.values[j];
        }
        match self.interp {
            Interpolation::PiecewiseConstant => self.values[j],
            Interpolation::PiecewiseLinear => {
                let (t0, t1) = (self.times[j], self.times[j + 1]);
                let w = (t - t0) / (t1 - t0);
                self.values[j] + w * (self.values[j + 1] - self.values[j])
            }
        }
    }

    /// Exact `∫_a^b ℓ(s) ds`, summed cell by cell.
    fn window_integral(&self, a: f64, b: f64) -> Result<f64> {
        let (mut k, mut cur) = self.locate(a)?;
        let (_, b) = self.locate(b)?;
        let mut acc = 0.0;
        while cur < b {
            let next = if k + 1 < self.times.len() { self.times[k + 1].min(b) } else { b };
            acc += match self.interp {
                Interpolation::PiecewiseConstant => self.values[k] * (next - cur),
                Interpolation::PiecewiseLinear => {
                    0.5 * (self.eval_in_cell(k, cur) + self.eval_in_cell(k, next)) * (next - cur)
                }
            };
            if k + 1 >= self.times.len() {
                break;
            }
            cur = next;
            k += 1;
        }
        Ok(acc)
    }

    /// `ℓ^ε(t) = ε^{-1} ∫_t^{t+ε} ℓ(s) ds + ε t` at the knots in `[t_0, horizon]`,
    /// returned as a piecewise-linear clock. The moving average looks ahead,
    /// so `ℓ` must be known on `[t_0, horizon + ε]`.
    pub fn regularize(&self, eps: f64, horizon: f64) -> Result<TimeChange> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(invalid("eps", format!("must lie in (0, 1], got {eps}")));
        }
        let needed = horizon + eps;
        let tol = SNAP * needed.abs().max(1.0);
        if self.end() < needed - tol {
            return Err(Error::DomainExtension(format!(
                "regularizing with eps = {eps} on [{}, {horizon}] needs the clock on [{}, {needed}], but it ends at {}; extend it by {}",
                self.start(),
                self.start(),
                self.end(),
                needed - self.end()
            )));
        }
        let top = horizon + SNAP * horizon.abs().max(1.0);
        // ℓ^ε has kinks at the knots and at the knots shifted back by ε; with
        // both as knots the linear interpolant is exact for step clocks.
        let mut times: Vec<f64> = self
            .times
            .iter()
            .flat_map(|&t| [t, t - eps])
            .chain([self.start(), horizon])
            .filter(|&t| t >= self.start() && t <= top)
            .collect();
        times.sort_by(f64::total_cmp);
        let merge = SNAP * top.abs().max(1.0);
        times.dedup_by(|b, a| *b - *a <= merge);
        let mut values = Vec::with_capacity(times.len());
        for &t in &times {
            // integrate the window directly: differences of running integrals
            // lose everything to cancellation once eps is tiny
            // and divide by the window as rounded, not by eps
            let ahead = (t + eps).min(self.end());
            values.push(self.window_integral(t, ahead)? / (ahead - t) + eps * t);
        }
        TimeChange::new(times, values, Interpolation::PiecewiseLinear)
    }

    /// The inverse clock `γ` with `γ(ℓ(t)) = t`, as a piecewise-linear function
    /// on `[ℓ(t_0), ℓ(t_N)]`. Requires strictly increasing values.
    pub fn inverse(&self) -> Result<TimeChange> {
        if let Some(i) = self.values.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::NotStrictlyIncreasing { index: i + 1 });
        }
        Ok(TimeChange::from_parts_unchecked(
            self.values.clone(),
            self.times.clone(),
            Interpolation::PiecewiseLinear,
        ))
    }

    /// Right-endpoint sum `Σ g(s_{k+1}) (ℓ(s_{k+1}) - ℓ(s_k))` over the partition
    /// of `[a, b]` by the grid knots (plus `a` and `b` themselves).
    pub fn stieltjes(&self, g: impl Fn(f64) -> f64, a: f64, b: f64) -> Result<f64> {
        if a > b {
            return Err(invalid("stieltjes", format!("need a <= b, got [{a}, {b}]")));
        }
        let (ja, a) = self.locate(a)?;
        let (jb, b) = self.locate(b)?;
        let mut acc = 0.0;
        let mut prev_t = a;
        let mut prev_v = self.eval_in_cell(ja, a);
        for k in ja + 1..=jb {
            let t = self.times[k];
            if t <= prev_t {
                continue;
            }
            let v = self.values[k];
            acc += g(t) * (v - prev_v);
            prev_t = t;
            prev_v = v;
        }
        if b > prev_t {
            acc += g(b) * (self.eval_in_cell(jb, b) - prev_v);
        }
        Ok(acc)
    }

    /// Increments `ℓ(t_{i+1}) - ℓ(t_i)` along the grid.
    pub fn increments(&self) -> Vec<f64> {
        self.values.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Increments of `ℓ` over an arbitrary increasing grid inside the domain.
    pub fn increments_on(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let v = grid.iter().map(|&t| self.eval(t)).collect::<Result<Vec<_>>>()?;
        Ok(v.windows(2).map(|w| w[1] - w[0]).collect())
    }

    /// `t,ell` CSV for debugging.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,ell\n");
        for (t, v) in self.times.iter().zip(&self.values) {
            s.push_str(&format!("{t},{v}\n"));
        }
        s
    }
}
