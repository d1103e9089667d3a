//! Coupling by change of measure on `[0, 2T]`.
//!
//! The first components are coupled on `[0, T]` by a deterministic-rate drift
//! on `Y1`, after which `Y1 = X1`. The second components then share their
//! diffusion coefficient and are coupled on `[T, 2T]`. Girsanov log-weights
//! are accumulated so that `Y` under `R·P` has the law of the process started
//! at `y`.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::gruschin::{gruschin_factor, norm, ClockIncrements, Clocks, GruschinModel, NoiseSource, StatePoint};
use crate::parallel::map_paths;
use crate::rng::StreamFactory;
use crate::stats::{compensated_sum, Estimate};
use crate::subordinator::uniform_grid;
use crate::timechange::TimeChange;

/// Modulus below which the second components are declared coupled.
pub const COUPLED_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingOptions {
    /// Floor for `|Y1|` in the second-component Girsanov kernel.
    pub eps_floor: f64,
    /// Keep full state paths (memory heavy for large runs).
    pub record_paths: bool,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            eps_floor: 1e-8,
            record_paths: false,
        }
    }
}

/// First components `(X1, Y1)` on the whole grid of `[0, 2T]`.
#[derive(Debug, Clone)]
pub struct FirstPair {
    pub x1: Vec<Vec<f64>>,
    pub y1: Vec<Vec<f64>>,
    /// `|X1 - Y1|` recomputed from the simulated states.
    pub modulus: Vec<f64>,
    /// `(1 - G(t)/G(T)) |x1 - y1|` with `G(t) = ∫_0^t λ^{-2} dℓ1`.
    pub modulus_closed: Vec<f64>,
    pub log_r1: f64,
    pub tau1: f64,
    pub tau1_index: usize,
    /// `∫_0^T λ^{-2} dℓ1`.
    pub g_total: f64,
    /// Largest `|η1_s| - |x1 - y1| λ_s^{-1} / G(T)` over the steps (<= 0 expected).
    pub eta_bound_excess: f64,
    /// `Σ ½ |η1|² Δℓ1`, the exact conditional entropy of the first change of measure.
    pub entropy1: f64,
}

fn check_increments(inc: &ClockIncrements, horizon: f64) -> Result<usize> {
    let cells = inc.dl1.len();
    if cells == 0 || cells % 2 != 0 || inc.dl2.len() != cells || inc.grid.len() != cells + 1 {
        return Err(invalid("clock increments", "need an even number of cells covering [0, 2T]"));
    }
    let n = cells / 2;
    if (inc.grid[n] - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(invalid(
            "clock increments",
            format!("midpoint {} of the grid is not T = {horizon}", inc.grid[n]),
        ));
    }
    Ok(n)
}

/// Couples the first components; draws `m` normals per step on all `2n` steps.
pub fn couple_first<N: NoiseSource>(
    model: &GruschinModel,
    x1: &[f64],
    y1: &[f64],
    inc: &ClockIncrements,
    horizon: f64,
    noise: &mut N,
) -> Result<FirstPair> {
    let n = check_increments(inc, horizon)?;
    let m = model.m();
    if x1.len() != m || y1.len() != m {
        return Err(invalid("point", format!("first components must have dimension {m}")));
    }
    let sigma = model.sigma();
    let lambda = model.lambda();
    let grid = &inc.grid;

    let diff: Vec<f64> = x1.iter().zip(y1).map(|(a, b)| a - b).collect();
    let dist = norm(&diff);
    let u0: Vec<f64> = if dist > 0.0 { diff.iter().map(|v| v / dist).collect() } else { vec![0.0; m] };

    // G_i = Σ_{j<i} λ(t_{j+1})^{-2} Δℓ1_j on [0, T]
    let mut g = Vec::with_capacity(n + 1);
    g.push(0.0);
    for j in 0..n {
        g.push(g[j] + lambda.at(grid[j + 1]).powi(-2) * inc.dl1[j]);
    }
    let g_total = g[n];
    if dist > 0.0 && !(g_total > 0.0) {
        return Err(Error::DegenerateClock(format!(
            "∫_0^T λ^-2 dℓ1 = {g_total} with |x1 - y1| = {dist}"
        )));
    }
    let tau1_index = if dist == 0.0 { 0 } else { g.iter().position(|&gi| gi >= g_total).unwrap() };

    let cells = 2 * n;
    let mut xs = Vec::with_capacity(cells + 1);
    let mut ys = Vec::with_capacity(cells + 1);
    let mut modulus = Vec::with_capacity(cells + 1);
    let mut closed = Vec::with_capacity(cells + 1);
    let mut x = x1.to_vec();
    let mut r = dist;
    let mut log_r1 = 0.0;
    let mut entropy1 = 0.0;
    let mut eta_excess = f64::NEG_INFINITY;
    let (mut z, mut sz, mut eta) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);

    let closed_at = |i: usize| if i >= tau1_index { 0.0 } else { (dist * (1.0 - g[i] / g_total)).max(0.0) };
    let push = |xs: &mut Vec<Vec<f64>>, ys: &mut Vec<Vec<f64>>, modulus: &mut Vec<f64>, x: &[f64], r: f64| {
        let y: Vec<f64> = if r == 0.0 { x.to_vec() } else { x.iter().zip(&u0).map(|(a, u)| a - r * u).collect() };
        modulus.push(norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>()));
        xs.push(x.to_vec());
        ys.push(y);
    };
    push(&mut xs, &mut ys, &mut modulus, &x, r);
    closed.push(closed_at(0));

    for i in 0..cells {
        let t = grid[i];
        let dl = inc.dl1[i];
        noise.fill_normals(&mut z);
        let s = dl.sqrt();
        z.iter_mut().for_each(|w| *w *= s);
        if i < tau1_index {
            let lam_next = lambda.at(grid[i + 1]);
            let xi = dist * lam_next.powi(-2) / g_total;
            sigma.apply_inverse(t, &u0, &mut eta);
            eta.iter_mut().for_each(|e| *e *= xi);
            let eta_norm = norm(&eta);
            eta_excess = eta_excess.max(eta_norm - dist / lambda.at(t) / g_total);
            let inner: f64 = eta.iter().zip(&z).map(|(e, w)| e * w).sum();
            log_r1 += -inner - 0.5 * eta_norm * eta_norm * dl;
            entropy1 += 0.5 * eta_norm * eta_norm * dl;
            r = if i + 1 == tau1_index { 0.0 } else { r - xi * dl };
        }
        sigma.apply(t, &z, &mut sz);
        x.iter_mut().zip(&sz).for_each(|(a, b)| *a += b);
        if !x.iter().all(|v| v.is_finite()) || !log_r1.is_finite() {
            return Err(Error::NonFinite { step: i + 1 });
        }
        push(&mut xs, &mut ys, &mut modulus, &x, r);
        closed.push(closed_at(i + 1));
    }

    Ok(FirstPair {
        x1: xs,
        y1: ys,
        modulus,
        modulus_closed: closed,
        log_r1,
        tau1: grid[tau1_index],
        tau1_index,
        g_total,
        eta_bound_excess: if eta_excess.is_finite() { eta_excess } else { 0.0 },
        entropy1,
    })
}

/// Second components `(X2, Y2)` on `[0, 2T]`.
#[derive(Debug, Clone)]
pub struct SecondPair {
    pub x2: Vec<Vec<f64>>,
    pub y2: Vec<Vec<f64>>,
    pub x2_end: Vec<f64>,
    pub y2_end: Vec<f64>,
    pub log_r2: f64,
    /// First grid time from which `Y2 = X2`; `None` if the pair never closed.
    pub tau2: Option<f64>,
    /// `|X2 - Y2|` at `2T`.
    pub final_modulus: f64,
    /// `|X2_T - Y2_T|`.
    pub modulus_at_t: f64,
    /// `∫_T^{2T} e^{-2K(T,s)} dℓ2`.
    pub h_total: f64,
    pub clip_count: usize,
    pub drift_steps: usize,
    /// Largest `e^{-K(T,t)}|D_t| - |D_T| + Σ e^{-K(T,s)} (applied drift)`.
    pub supermartingale_excess: f64,
}

/// Couples the second components given the coupled first components; draws
/// `d` normals per step on all `2n` steps.
#[allow(clippy::too_many_arguments)]
pub fn couple_second<N: NoiseSource>(
    model: &GruschinModel,
    first: &FirstPair,
    x2: &[f64],
    y2: &[f64],
    inc: &ClockIncrements,
    horizon: f64,
    opts: &CouplingOptions,
    noise: &mut N,
) -> Result<SecondPair> {
    let n = check_increments(inc, horizon)?;
    let d = model.d();
    if x2.len() != d || y2.len() != d {
        return Err(invalid("point", format!("second components must have dimension {d}")));
    }
    if first.tau1_index > n {
        return Err(invalid("first pair", "first components not coupled by T"));
    }
    if !(opts.eps_floor > 0.0) {
        return Err(invalid("eps_floor", "must be positive"));
    }
    let l = model.l();
    let drift = model.drift();
    let grid = &inc.grid;
    let cells = 2 * n;
    let floor_factor = opts.eps_floor.powf(l);

    let mut x = x2.to_vec();
    let mut y = y2.to_vec();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    if opts.record_paths {
        xs.push(x.clone());
        ys.push(y.clone());
    }
    let same_start = first.tau1_index == 0 && x == y;
    let mut coupled = same_start;
    let mut tau2 = if same_start { Some(0.0) } else { None };
    let (mut z, mut bx, mut by) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut dpre = vec![0.0; d];
    let mut log_r2 = 0.0;
    let mut clip_count = 0;
    let mut drift_steps = 0;
    let mut modulus_at_t = 0.0;
    let mut h_total = 0.0;
    let mut scale = 0.0;
    let mut spent = 0.0;
    let mut excess: f64 = f64::NEG_INFINITY;

    for i in 0..cells {
        let t = grid[i];
        let dt = grid[i + 1] - t;
        let dl = inc.dl2[i];
        noise.fill_normals(&mut z);
        let s = dl.sqrt();
        z.iter_mut().for_each(|w| *w *= s);

        if i == n && !coupled {
            modulus_at_t = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
            if modulus_at_t < COUPLED_TOL {
                coupled = true;
                tau2 = Some(t);
                y.clone_from(&x);
            } else {
                h_total = (n..cells).map(|j| (-2.0 * model.big_k(horizon, grid[j + 1])).exp() * inc.dl2[j]).sum();
                if !(h_total > 0.0) {
                    return Err(Error::DegenerateClock(format!(
                        "∫_T^2T e^(-2K(T,s)) dℓ2 = {h_total} with |X2_T - Y2_T| = {modulus_at_t}"
                    )));
                }
                scale = modulus_at_t / h_total;
            }
        }

        let gx = gruschin_factor(&first.x1[i], l);
        if coupled {
            step_plain(drift, t, dt, gx, &mut x, &z, &mut bx);
            y.clone_from(&x);
        } else if i < n {
            let gy = gruschin_factor(&first.y1[i], l);
            step_plain(drift, t, dt, gx, &mut x, &z, &mut bx);
            step_plain(drift, t, dt, gy, &mut y, &z, &mut by);
        } else {
            // Y1 = X1 here, so both second components share the noise coefficient
            drift_steps += 1;
            drift.apply(t, &x, &mut bx);
            drift.apply(t, &y, &mut by);
            for j in 0..d {
                dpre[j] = (x[j] - y[j]) + (bx[j] - by[j]) * dt;
            }
            let dn = norm(&dpre);
            let k_next = (-model.big_k(horizon, grid[i + 1])).exp();
            let a = (scale * k_next * dl).min(dn);
            let gy = gruschin_factor(&first.y1[i], l);
            let denom = if gy < floor_factor {
                if a > 0.0 {
                    clip_count += 1;
                }
                floor_factor
            } else {
                gy
            };
            for j in 0..d {
                let unit = if dn > 0.0 { dpre[j] / dn } else { 0.0 };
                x[j] += bx[j] * dt + gx * z[j];
                y[j] += by[j] * dt + gx * z[j] + a * unit;
            }
            if a > 0.0 && dl > 0.0 {
                let eta = a / (dl * denom);
                let inner: f64 = (0..d).map(|j| if dn > 0.0 { dpre[j] / dn * z[j] } else { 0.0 }).sum();
                log_r2 += -eta * inner - 0.5 * eta * eta * dl;
            }
            spent += k_next * a;
            let mod_next = norm(&x.iter().zip(&y).map(|(p, q)| p - q).collect::<Vec<_>>());
            if mod_next < COUPLED_TOL {
                coupled = true;
                tau2 = Some(grid[i + 1]);
                y.clone_from(&x);
                excess = excess.max(spent - modulus_at_t);
            } else {
                excess = excess.max(k_next * mod_next - modulus_at_t + spent);
            }
        }
        if !x.iter().chain(&y).all(|v| v.is_finite()) || !log_r2.is_finite() {
            return Err(Error::NonFinite { step: i + 1 });
        }
        if opts.record_paths {
            xs.push(x.clone());
            ys.push(y.clone());
        }
    }
    let final_modulus = norm(&x.iter().zip(&y).map(|(p, q)| p - q).collect::<Vec<_>>());
    Ok(SecondPair {
        x2: xs,
        y2: ys,
        x2_end: x,
        y2_end: y,
        log_r2,
        tau2,
        final_modulus,
        modulus_at_t,
        h_total,
        clip_count,
        drift_steps,
        supermartingale_excess: if excess.is_finite() { excess } else { 0.0 },
    })
}

fn step_plain(drift: &crate::gruschin::Drift, t: f64, dt: f64, g: f64, x: &mut [f64], z: &[f64], b: &mut [f64]) {
    if drift.is_zero() {
        x.iter_mut().zip(z).for_each(|(a, w)| *a += g * w);
    } else {
        drift.apply(t, x, b);
        for j in 0..x.len() {
            x[j] += b[j] * dt + g * z[j];
        }
    }
}

/// A complete coupled run on `[0, 2T]`.
#[derive(Debug, Clone)]
pub struct CouplingRun {
    pub x: StatePoint,
    pub y: StatePoint,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// `(X_t, Y_t)` along the grid, when recorded.
    pub paths: Option<(Vec<StatePoint>, Vec<StatePoint>)>,
    pub x_end: StatePoint,
    pub y_end: StatePoint,
    pub first: FirstPair,
    pub second: SecondPair,
}

impl CouplingRun {
    pub fn tau1(&self) -> f64 {
        self.first.tau1
    }

    pub fn tau2(&self) -> Option<f64> {
        self.second.tau2
    }

    pub fn log_r1(&self) -> f64 {
        self.first.log_r1
    }

    pub fn log_r2(&self) -> f64 {
        self.second.log_r2
    }

    pub fn log_weight(&self) -> f64 {
        self.first.log_r1 + self.second.log_r2
    }

    pub fn weight(&self) -> f64 {
        self.log_weight().exp()
    }

    /// `R log R`.
    pub fn entropy_sample(&self) -> f64 {
        let l = self.log_weight();
        if l == 0.0 {
            0.0
        } else {
            l.exp() * l
        }
    }

    /// Largest `| |X1 - Y1| - closed form |` over the grid.
    pub fn modulus_error(&self) -> f64 {
        self.first
            .modulus
            .iter()
            .zip(&self.first.modulus_closed)
            .fold(0.0, |a, (m, c)| a.max((m - c).abs()))
    }
}

/// Couples both components along realized clock increments on `[0, 2T]`
/// (`2n` cells, `T` at the midpoint). All `W1` increments are drawn first,
/// then all `W2` increments.
pub fn run_coupling<N: NoiseSource>(
    model: &GruschinModel,
    x: &StatePoint,
    y: &StatePoint,
    inc: &ClockIncrements,
    horizon: f64,
    opts: &CouplingOptions,
    noise: &mut N,
) -> Result<CouplingRun> {
    model.check_point(x)?;
    model.check_point(y)?;
    let first = couple_first(model, &x.x1, &y.x1, inc, horizon, noise)?;
    let second = couple_second(model, &first, &x.x2, &y.x2, inc, horizon, opts, noise)?;
    let paths = opts.record_paths.then(|| {
        let xp = first.x1.iter().zip(&second.x2).map(|(a, b)| StatePoint::new(a.clone(), b.clone())).collect();
        let yp = first.y1.iter().zip(&second.y2).map(|(a, b)| StatePoint::new(a.clone(), b.clone())).collect();
        (xp, yp)
    });
    let x_end = StatePoint::new(first.x1.last().unwrap().clone(), second.x2_end.clone());
    let y_end = StatePoint::new(first.y1.last().unwrap().clone(), second.y2_end.clone());
    Ok(CouplingRun {
        x: x.clone(),
        y: y.clone(),
        horizon,
        times: inc.grid.clone(),
        paths,
        x_end,
        y_end,
        first,
        second,
    })
}

/// Coupled run under deterministic clocks, on the uniform grid with `n_steps`
/// cells per half-horizon.
#[allow(clippy::too_many_arguments)]
pub fn run_coupling_deterministic(
    model: &GruschinModel,
    x: &StatePoint,
    y: &StatePoint,
    ell1: &TimeChange,
    ell2: &TimeChange,
    horizon: f64,
    n_steps: usize,
    opts: &CouplingOptions,
    rng: &mut crate::rng::PathRng,
) -> Result<CouplingRun> {
    check_setup(model, horizon, n_steps)?;
    let grid = uniform_grid(2.0 * horizon, 2 * n_steps);
    let inc = ClockIncrements {
        dl1: ell1.increments_on(&grid)?,
        dl2: ell2.increments_on(&grid)?,
        grid,
    };
    run_coupling(model, x, y, &inc, horizon, opts, rng)
}

fn check_setup(model: &GruschinModel, horizon: f64, n_steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("must be positive, got {horizon}")));
    }
    if n_steps == 0 {
        return Err(invalid("n_steps", "must be >= 1"));
    }
    model.check_step(horizon / n_steps as f64)
}

/// Per-path summary kept by [`simulate_couplings`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRecord {
    pub log_r1: f64,
    pub log_r2: f64,
    pub tau1: f64,
    pub tau2: Option<f64>,
    pub horizon_end: f64,
    pub final_modulus: f64,
    pub x_end: StatePoint,
    pub y_end: StatePoint,
    pub clip_count: usize,
    pub drift_steps: usize,
    pub modulus_error: f64,
    pub eta_bound_excess: f64,
    pub supermartingale_excess: f64,
    /// `∫_0^T λ^{-2} dℓ1` and `∫_T^{2T} e^{-2K(T,s)} dℓ2` on this path's clocks.
    pub g_total: f64,
    pub h_total: f64,
    pub entropy1: f64,
}

impl CouplingRecord {
    pub fn log_weight(&self) -> f64 {
        self.log_r1 + self.log_r2
    }

    pub fn weight(&self) -> f64 {
        self.log_weight().exp()
    }

    pub fn entropy_sample(&self) -> f64 {
        let l = self.log_weight();
        if l == 0.0 {
            0.0
        } else {
            l.exp() * l
        }
    }
}

impl From<&CouplingRun> for CouplingRecord {
    fn from(r: &CouplingRun) -> Self {
        Self {
            log_r1: r.log_r1(),
            log_r2: r.log_r2(),
            tau1: r.tau1(),
            tau2: r.tau2(),
            horizon_end: *r.times.last().unwrap(),
            final_modulus: r.second.final_modulus,
            x_end: r.x_end.clone(),
            y_end: r.y_end.clone(),
            clip_count: r.second.clip_count,
            drift_steps: r.second.drift_steps,
            modulus_error: r.modulus_error(),
            eta_bound_excess: r.first.eta_bound_excess,
            supermartingale_excess: r.second.supermartingale_excess,
            g_total: r.first.g_total,
            h_total: r.second.h_total,
            entropy1: r.first.entropy1,
        }
    }
}

/// Runs `n_paths` independent couplings; path `i` uses stream `i` for its
/// clocks (if random) and its Brownian increments.
#[allow(clippy::too_many_arguments)]
pub fn simulate_couplings(
    model: &GruschinModel,
    x: &StatePoint,
    y: &StatePoint,
    clocks: &Clocks,
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    opts: &CouplingOptions,
    streams: &StreamFactory,
) -> Result<Vec<CouplingRecord>> {
    check_setup(model, horizon, n_steps)?;
    let fixed = match clocks {
        Clocks::Deterministic { .. } => Some(clocks.realize(2.0 * horizon, 2 * n_steps, &mut streams.stream(0))?),
        Clocks::Subordinated { .. } => None,
    };
    let light = CouplingOptions {
        record_paths: false,
        ..*opts
    };
    map_paths(n_paths, |i| {
        let mut rng = streams.stream(i as u64);
        let inc = match &fixed {
            Some(inc) => inc.clone(),
            None => clocks.realize(2.0 * horizon, 2 * n_steps, &mut rng)?,
        };
        let run = run_coupling(model, x, y, &inc, horizon, &light, &mut rng)?;
        Ok(CouplingRecord::from(&run))
    })
}

/// Aggregated coupling statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    /// `E[R log R]`.
    pub entropy: Estimate,
    /// `E R` (should be 1).
    pub er_mean: Estimate,
    pub tau1_max: f64,
    /// Largest `τ2`; `None` if some pair never coupled.
    pub tau2_max: Option<f64>,
    pub uncoupled_paths: usize,
    pub clip_count: usize,
    pub clip_frequency: f64,
    /// Share of `Σ R` carried by the largest 1% of weights.
    pub top_percent_mass: f64,
    pub warnings: Vec<String>,
}

/// Share of the total weight carried by the largest 1% of weights.
pub fn top_percent_mass(weights: &[f64]) -> f64 {
    if weights.is_empty() {
        return 0.0;
    }
    let mut w = weights.to_vec();
    w.sort_by(|a, b| b.total_cmp(a));
    let k = w.len().div_ceil(100);
    let total = compensated_sum(w.iter().copied());
    if total > 0.0 {
        compensated_sum(w[..k].iter().copied()) / total
    } else {
        0.0
    }
}

pub fn summarize(records: &[CouplingRecord]) -> EntropyReport {
    let weights: Vec<f64> = records.iter().map(|r| r.weight()).collect();
    let ent: Vec<f64> = records.iter().map(|r| r.entropy_sample()).collect();
    let clip_count: usize = records.iter().map(|r| r.clip_count).sum();
    let drift_steps: usize = records.iter().map(|r| r.drift_steps).sum();
    let uncoupled = records.iter().filter(|r| r.tau2.is_none()).count();
    let top = top_percent_mass(&weights);
    let mut warnings = Vec::new();
    if top > 0.5 {
        warnings.push(format!(
            "heavy-tailed weights: the top 1% of paths carry {:.1}% of the total weight; entropy standard errors are unreliable",
            100.0 * top
        ));
    }
    let clip_frequency = if drift_steps > 0 { clip_count as f64 / drift_steps as f64 } else { 0.0 };
    if clip_frequency >= 1e-3 {
        warnings.push(format!("|Y1| floor clipping on {:.3}% of coupling steps", 100.0 * clip_frequency));
    }
    EntropyReport {
        entropy: Estimate::from_samples(&ent),
        er_mean: Estimate::from_samples(&weights),
        tau1_max: records.iter().map(|r| r.tau1).fold(0.0, f64::max),
        tau2_max: if uncoupled > 0 {
            None
        } else {
            Some(records.iter().filter_map(|r| r.tau2).fold(0.0, f64::max))
        },
        uncoupled_paths: uncoupled,
        clip_count,
        clip_frequency,
        top_percent_mass: top,
        warnings,
    }
}

/// Monte Carlo estimate of `E[R log R]` with coupling diagnostics.
#[allow(clippy::too_many_arguments)]
pub fn entropy_estimate(
    model: &GruschinModel,
    x: &StatePoint,
    y: &StatePoint,
    clocks: &Clocks,
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    opts: &CouplingOptions,
    streams: &StreamFactory,
) -> Result<EntropyReport> {
    let recs = simulate_couplings(model, x, y, clocks, horizon, n_paths, n_steps, opts, streams)?;
    Ok(summarize(&recs))
}
