//! Monotone finite-volume solver for the CDF equation
//! `du = (−𝔅(u)_x + Σ(u)_xx + Γ(u)_xx) dt − G(u)_x dW`
//! on a truncated line with `u = 0` on the left and `u = 1` on the right.
//!
//! [`spde_step`] is the plain explicit step of the Itô form. [`solve`]
//! marches with [`Scheme::Split`] by default: per noise interval, an
//! Engquist–Osher transport step for the flux `𝔅Δt + (G − γ̄u)ΔW`, then
//! explicit diffusion of `Σ` alone, inside a frame translated by `γ̄W_t`.
//! The transport step with a linear-in-time noise converges to the
//! Stratonovich dynamics, whose correction is exactly the `Γ` term, so
//! no `Γ` diffusion is applied in that scheme. Bisecting a noise interval to
//! meet the CFL bound leaves the transport error of the unsplit scheme
//! unchanged per unit of `|ΔW|`, and that error does not vanish as the mesh
//! is refined. The split scheme keeps it proportional to `|γ − γ̄|`.

use thiserror::Error;

use crate::coefficients::{CoefficientSet, Transform};
use crate::measures::{GridFunction, InitialDistribution, MeasureError};
use crate::randomness::{bridge_value, refine_path, BrownianPath, RandomnessError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpdeError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("domain [{x_min}, {x_max}] does not cover the required [{need_lo}, {need_hi}]")]
    MarginTooSmall { x_min: f64, x_max: f64, need_lo: f64, need_hi: f64 },
    #[error("CFL number {number} exceeds {limit}")]
    CflViolated { number: f64, limit: f64 },
    #[error("noise interval ending at t = {t} needs more than {limit} substeps")]
    SubstepLimitExceeded { t: f64, limit: usize },
    #[error("snapshot time {0} outside [0, T]")]
    SnapshotOutOfRange(f64),
    #[error(transparent)]
    Randomness(#[from] RandomnessError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// CFL ceiling used by [`spde_step`]; the explicit update is monotone up to it.
pub const STEP_CFL_LIMIT: f64 = 1.0;
/// Values beyond `(threshold, 1 − threshold)` count as outside the initial support.
pub const SUPPORT_THRESHOLD: f64 = 1e-8;
/// Intervals of the cubic Hermite transform cache.
pub const CACHE_INTERVALS: usize = 2048;
pub const MIN_CELLS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    /// Transport in a moving frame, then `Σ` diffusion.
    Split,
    /// Joint explicit update with `Σ + Γ` diffusion, the frame folded into the flux.
    ItoUnsplit,
}

/// Speed `γ̄` of the translated frame `x ↦ x + γ̄W_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FrameSpeed {
    /// `(sup γ + inf γ) / 2`.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
    pub cfl_target: f64,
    /// Limit on transport leaves and on diffusion substeps per noise interval.
    pub max_substeps: usize,
    pub scheme: Scheme,
    pub frame: FrameSpeed,
}

impl SolverConfig {
    pub fn new(x_min: f64, x_max: f64, cells: usize) -> Self {
        Self { x_min, x_max, cells, cfl_target: 0.9, max_substeps: 1 << 16, scheme: Scheme::Split, frame: FrameSpeed::Auto }
    }

    /// Smallest domain holding `[lo, hi]` plus the required margin.
    pub fn covering(lo: f64, hi: f64, cs: &CoefficientSet, horizon: f64, cells: usize) -> Self {
        let m = required_margin(cs, horizon);
        Self::new(lo - m, hi + m, cells)
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.cells as f64
    }

    /// Cell averages of the initial law on this grid.
    pub fn initial_grid(&self, dist: &InitialDistribution) -> Result<GridFunction, MeasureError> {
        dist.grid_cell_averages(self.x_min, self.x_max, self.cells)
    }

    pub fn validate(&self) -> Result<(), SpdeError> {
        let bad = |m: String| Err(SpdeError::InvalidConfig(m));
        if !(self.x_min.is_finite() && self.x_max.is_finite() && self.x_min < self.x_max) {
            return bad(format!("x_min = {} must be below x_max = {}", self.x_min, self.x_max));
        }
        if self.cells < MIN_CELLS {
            return bad(format!("cells = {} below {MIN_CELLS}", self.cells));
        }
        if !(self.cfl_target > 0.0 && self.cfl_target < 1.0) {
            return bad(format!("cfl_target = {} outside (0, 1)", self.cfl_target));
        }
        if self.max_substeps == 0 {
            return bad("max_substeps must be positive".into());
        }
        if let FrameSpeed::Fixed(g) = self.frame {
            if !g.is_finite() {
                return bad(format!("frame speed {g}"));
            }
        }
        Ok(())
    }

    /// The domain must bracket `[lo, hi]` with [`required_margin`] on both sides,
    /// up to one cell of slack.
    pub fn check_margin(&self, lo: f64, hi: f64, cs: &CoefficientSet, horizon: f64) -> Result<(), SpdeError> {
        let m = required_margin(cs, horizon);
        let (need_lo, need_hi) = (lo - m, hi + m);
        let slack = self.dx() * (1.0 + 1e-9);
        if self.x_min > need_lo + slack || self.x_max < need_hi - slack {
            return Err(SpdeError::MarginTooSmall { x_min: self.x_min, x_max: self.x_max, need_lo, need_hi });
        }
        Ok(())
    }

    fn frame_speed(&self, cs: &CoefficientSet) -> f64 {
        match self.frame {
            FrameSpeed::Fixed(g) => g,
            FrameSpeed::Auto => {
                let g = &cs.samples().gamma;
                let (lo, hi) = g.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                0.5 * (lo + hi)
            }
        }
    }
}

/// `6·(sup|σ| + sup|γ|)·√T + T·sup|b|`.
pub fn required_margin(cs: &CoefficientSet, horizon: f64) -> f64 {
    let (b, s, g) = cs.sup_abs();
    6.0 * (s + g) * horizon.sqrt() + horizon * b
}

/// Region where the grid function is strictly between the support thresholds.
pub fn grid_support(u: &GridFunction) -> (f64, f64) {
    let lo = u.values.iter().position(|&v| v > SUPPORT_THRESHOLD);
    let hi = u.values.iter().rposition(|&v| v < 1.0 - SUPPORT_THRESHOLD);
    match (lo, hi) {
        (Some(l), Some(h)) => (u.center(l).min(u.center(h)), u.center(h).max(u.center(l))),
        (Some(l), None) => (u.center(l), u.center(l)),
        (None, Some(h)) => (u.center(h), u.center(h)),
        (None, None) => (u.x_min, u.x_max()),
    }
}

/// Transform evaluation, exact or cached.
trait Transforms {
    fn value(&self, which: Transform, r: f64) -> f64;
}

impl Transforms for CoefficientSet {
    #[inline]
    fn value(&self, which: Transform, r: f64) -> f64 {
        self.transform(which, r)
    }
}

/// Cubic Hermite interpolation of `𝔅, Σ, Γ, G` from table values and exact derivatives.
#[derive(Debug, Clone)]
struct TransformCache {
    m: usize,
    values: [Vec<f64>; 4],
    slopes: [Vec<f64>; 4],
}

const CACHED: [Transform; 4] = [Transform::B, Transform::Sigma, Transform::Gamma, Transform::G];

fn cache_slot(which: Transform) -> usize {
    match which {
        Transform::B => 0,
        Transform::Sigma => 1,
        Transform::Gamma => 2,
        Transform::G => 3,
        Transform::S => unreachable!("S is not cached"),
    }
}

impl TransformCache {
    fn new(cs: &CoefficientSet, m: usize) -> Self {
        let mut values: [Vec<f64>; 4] = Default::default();
        let mut slopes: [Vec<f64>; 4] = Default::default();
        for which in CACHED {
            let s = cache_slot(which);
            for k in 0..=m {
                let r = k as f64 / m as f64;
                values[s].push(cs.transform(which, r));
                slopes[s].push(match which {
                    Transform::B => cs.b.eval(r),
                    Transform::Sigma => 0.5 * cs.sigma.eval(r).powi(2),
                    Transform::Gamma => 0.5 * cs.gamma.eval(r).powi(2),
                    _ => cs.gamma.eval(r),
                });
            }
        }
        Self { m, values, slopes }
    }
}

impl Transforms for TransformCache {
    #[inline]
    fn value(&self, which: Transform, r: f64) -> f64 {
        let s = cache_slot(which);
        let pos = r.clamp(0.0, 1.0) * self.m as f64;
        let k = (pos as usize).min(self.m - 1);
        let t = pos - k as f64;
        let h = 1.0 / self.m as f64;
        let (v0, v1) = (self.values[s][k], self.values[s][k + 1]);
        let (d0, d1) = (self.slopes[s][k] * h, self.slopes[s][k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * v0 + (t3 - 2.0 * t2 + t) * d0 + (-2.0 * t3 + 3.0 * t2) * v1 + (t3 - t2) * d1
    }
}

/// Engquist–Osher splitting of `Ĥ(u) = dt·𝔅(u) + dw·(G(u) − γ̄u)`, whose
/// derivative is `h(ξ) = dt·b(ξ) + dw·(γ(ξ) − γ̄)`.
struct EoFlux<'a, T: Transforms> {
    tr: &'a T,
    dt: f64,
    dw: f64,
    frame: f64,
    /// `0 = r₀ < … < r_m = 1`, the sign changes of `h`.
    knots: Vec<f64>,
    positive: Vec<bool>,
    /// `Ĥ` and `H⁺` at the knots.
    h_at: Vec<f64>,
    plus_at: Vec<f64>,
}

impl<'a, T: Transforms> EoFlux<'a, T> {
    fn new(tr: &'a T, cs: &CoefficientSet, dt: f64, dw: f64, frame: f64) -> Self {
        let h = |b: f64, g: f64| dt * b + dw * (g - frame);
        let hx = |x: f64| h(cs.b.eval(x), cs.gamma.eval(x));
        let samples = cs.samples();
        let mut knots = vec![0.0];
        let mut prev = h(samples.b[0], samples.gamma[0]);
        for i in 1..samples.grid.len() {
            let cur = h(samples.b[i], samples.gamma[i]);
            if (prev >= 0.0) != (cur >= 0.0) {
                let (mut lo, mut hi) = (samples.grid[i - 1], samples.grid[i]);
                let lo_pos = prev >= 0.0;
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if (hx(mid) >= 0.0) == lo_pos {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let root = 0.5 * (lo + hi);
                if root > *knots.last().unwrap() && root < 1.0 {
                    knots.push(root);
                }
            }
            prev = cur;
        }
        knots.push(1.0);

        let mut flux = Self { tr, dt, dw, frame, positive: Vec::new(), h_at: Vec::new(), plus_at: Vec::new(), knots };
        let mut plus = 0.0;
        for k in 0..flux.knots.len() {
            let hk = flux.hat(flux.knots[k]);
            if k > 0 && flux.positive[k - 1] {
                plus += hk - flux.h_at[k - 1];
            }
            flux.h_at.push(hk);
            flux.plus_at.push(plus);
            if k + 1 < flux.knots.len() {
                flux.positive.push(hx(0.5 * (flux.knots[k] + flux.knots[k + 1])) >= 0.0);
            }
        }
        flux
    }

    #[inline]
    fn hat(&self, u: f64) -> f64 {
        let mut v = self.dt * self.tr.value(Transform::B, u) + self.dw * self.tr.value(Transform::G, u);
        if self.frame != 0.0 {
            v -= self.dw * self.frame * u;
        }
        v
    }

    /// `(H⁺(u), H⁻(u))`.
    #[inline]
    fn split(&self, u: f64) -> (f64, f64) {
        let hu = self.hat(u);
        let k = if self.knots.len() == 2 { 0 } else { (self.knots.partition_point(|&r| r <= u).max(1) - 1).min(self.positive.len() - 1) };
        let plus = if self.positive[k] { self.plus_at[k] + hu - self.h_at[k] } else { self.plus_at[k] };
        (plus, hu - plus)
    }

    #[inline]
    fn numerical_flux(&self, left: f64, right: f64) -> f64 {
        self.split(left).0 + self.split(right).1
    }
}

/// Explicit conservative update with ghost values `0` and `1`.
fn explicit_update<T: Transforms>(
    u: &[f64],
    dx: f64,
    flux: Option<&EoFlux<'_, T>>,
    diffusion: Option<(f64, &dyn Fn(f64) -> f64)>,
) -> Vec<f64> {
    let n = u.len();
    let at = |j: isize| -> f64 {
        if j < 0 {
            0.0
        } else if j as usize >= n {
            1.0
        } else {
            u[j as usize]
        }
    };
    let mut out = u.to_vec();
    if let Some(f) = flux {
        let splits: Vec<(f64, f64)> = (-1..=n as isize).map(|j| f.split(at(j))).collect();
        // Face j+½ sits between cells j and j+1; index shift by one for the left ghost.
        let face = |j: isize| splits[(j + 1) as usize].0 + splits[(j + 2) as usize].1;
        for j in 0..n as isize {
            out[j as usize] -= (face(j) - face(j - 1)) / dx;
        }
    }
    if let Some((dt, d)) = diffusion {
        let dv: Vec<f64> = (-1..=n as isize).map(|j| d(at(j))).collect();
        let lam = dt / (dx * dx);
        for j in 0..n {
            out[j] += lam * (dv[j + 2] - 2.0 * dv[j + 1] + dv[j]);
        }
    }
    out
}

/// `H⁺(u_left) + H⁻(u_right)` for the per-step flux `H = 𝔅·dt + G·dW`.
pub fn convective_flux(cs: &CoefficientSet, dt: f64, dw: f64, u_left: f64, u_right: f64) -> f64 {
    EoFlux::new(cs, cs, dt, dw, 0.0).numerical_flux(u_left, u_right)
}

fn diffusion_speed(cs: &CoefficientSet, frame: f64, with_gamma: bool) -> f64 {
    let s = cs.samples();
    s.sigma
        .iter()
        .zip(&s.gamma)
        .map(|(&sig, &g)| 0.5 * sig * sig + if with_gamma { 0.5 * (g - frame).powi(2) } else { 0.0 })
        .fold(0.0, f64::max)
}

/// CFL number `max|h|/dx + 2·sup(Σ′ + Γ′)·dt/dx²` of one explicit Itô step.
pub fn step_cfl_number(cs: &CoefficientSet, dx: f64, dt: f64, dw: f64) -> f64 {
    let s = cs.samples();
    let speed = s.b.iter().zip(&s.gamma).map(|(&b, &g)| (dt * b + dw * g).abs()).fold(0.0, f64::max);
    speed / dx + 2.0 * diffusion_speed(cs, 0.0, true) * dt / (dx * dx)
}

/// One explicit step of the Itô form: EO flux for `𝔅dt + GdW`, central `(Σ + Γ)` diffusion.
pub fn spde_step(u: &GridFunction, cs: &CoefficientSet, dt: f64, dw: f64) -> Result<GridFunction, SpdeError> {
    let number = step_cfl_number(cs, u.dx, dt, dw);
    if !(number <= STEP_CFL_LIMIT) {
        return Err(SpdeError::CflViolated { number, limit: STEP_CFL_LIMIT });
    }
    let flux = EoFlux::new(cs, cs, dt, dw, 0.0);
    let d = |v: f64| cs.transform(Transform::Sigma, v) + cs.transform(Transform::Gamma, v);
    let values = explicit_update(&u.values, u.dx, Some(&flux), Some((dt, &d)));
    Ok(GridFunction::from_parts_unchecked(u.x_min, u.dx, values))
}

/// Snapshots of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdeSolution {
    pub times: Vec<f64>,
    /// Each snapshot lives on its own translated grid when the frame moves.
    pub snapshots: Vec<GridFunction>,
    /// The driving path after snapshot insertion and CFL bisection.
    pub path: BrownianPath,
    pub frame_speed: f64,
    /// Transport steps taken.
    pub transport_steps: usize,
}

impl SpdeSolution {
    pub fn final_snapshot(&self) -> &GridFunction {
        self.snapshots.last().expect("solutions hold at least one snapshot")
    }

    pub fn snapshot_at(&self, t: f64) -> Option<&GridFunction> {
        self.times.iter().position(|&s| s == t).map(|k| &self.snapshots[k])
    }
}

struct Marcher<'a> {
    cs: &'a CoefficientSet,
    cache: TransformCache,
    config: &'a SolverConfig,
    frame: f64,
    dx: f64,
    diff_speed: f64,
    seed: u64,
    stream: u64,
}

impl Marcher<'_> {
    fn leaf_ok(&self, dt: f64, dw: f64) -> bool {
        let s = self.cs.samples();
        let speed = s.b.iter().zip(&s.gamma).map(|(&b, &g)| (dt * b + dw * (g - self.frame)).abs()).fold(0.0, f64::max);
        let number = match self.config.scheme {
            Scheme::Split => speed / self.dx,
            Scheme::ItoUnsplit => speed / self.dx + 2.0 * self.diff_speed * dt / (self.dx * self.dx),
        };
        number <= self.config.cfl_target
    }

    /// Bisects `[t0, t1]` with bridge midpoints until every leaf meets the CFL bound.
    fn leaves(&self, a: (f64, f64), b: (f64, f64), out: &mut Vec<(f64, f64)>, budget: &mut usize) -> bool {
        if self.leaf_ok(b.0 - a.0, b.1 - a.1) {
            if *budget == 0 {
                return false;
            }
            *budget -= 1;
            out.push(b);
            return true;
        }
        let mid_t = 0.5 * (a.0 + b.0);
        if mid_t <= a.0 || mid_t >= b.0 {
            return false;
        }
        let mid = (mid_t, bridge_value(self.seed, self.stream, a, b, mid_t));
        self.leaves(a, mid, out, budget) && self.leaves(mid, b, out, budget)
    }

    fn advance(&self, u: &mut Vec<f64>, offset: &mut f64, dt: f64, dw: f64) -> Result<(), SpdeError> {
        match self.config.scheme {
            Scheme::Split => {
                let flux = EoFlux::new(&self.cache, self.cs, dt, dw, self.frame);
                *u = explicit_update::<TransformCache>(u, self.dx, Some(&flux), None);
                if self.diff_speed > 0.0 {
                    let bound = self.config.cfl_target * self.dx * self.dx / (2.0 * self.diff_speed);
                    let m = (dt / bound).ceil().max(1.0);
                    if m > self.config.max_substeps as f64 {
                        return Err(SpdeError::SubstepLimitExceeded { t: 0.0, limit: self.config.max_substeps });
                    }
                    let sub = dt / m;
                    let d = |v: f64| self.cache.value(Transform::Sigma, v);
                    for _ in 0..m as usize {
                        *u = explicit_update::<TransformCache>(u, self.dx, None, Some((sub, &d)));
                    }
                }
            }
            Scheme::ItoUnsplit => {
                let flux = EoFlux::new(&self.cache, self.cs, dt, dw, self.frame);
                let g = self.frame;
                let d = |v: f64| {
                    self.cache.value(Transform::Sigma, v) + self.cache.value(Transform::Gamma, v)
                        - g * self.cache.value(Transform::G, v)
                        + 0.5 * g * g * v
                };
                *u = explicit_update(u, self.dx, Some(&flux), Some((dt, &d)));
            }
        }
        for v in u.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        *offset += self.frame * dw;
        Ok(())
    }
}

/// Marches `u0` along `path` and records snapshots at `snapshot_times`
/// (the horizon when empty). Marching stops at the last snapshot.
pub fn solve(
    u0: &GridFunction,
    cs: &CoefficientSet,
    path: &BrownianPath,
    config: &SolverConfig,
    snapshot_times: &[f64],
) -> Result<SpdeSolution, SpdeError> {
    config.validate()?;
    u0.check()?;
    if u0.cells() != config.cells || (u0.x_min - config.x_min).abs() > 1e-12 || (u0.x_max() - config.x_max).abs() > 1e-9 {
        return Err(SpdeError::InvalidConfig("initial grid does not match the configured domain".into()));
    }
    let horizon = path.horizon();
    let mut times: Vec<f64> = if snapshot_times.is_empty() { vec![horizon] } else { snapshot_times.to_vec() };
    for &t in &times {
        if !(t >= 0.0 && t <= horizon) {
            return Err(SpdeError::SnapshotOutOfRange(t));
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    let t_end = *times.last().unwrap();
    let (lo, hi) = grid_support(u0);
    config.check_margin(lo, hi, cs, t_end)?;

    let inserts: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0 && t < horizon && path.value_at(t).is_none()).collect();
    let refined = if inserts.is_empty() { path.clone() } else { refine_path(path, &inserts)? };

    let frame = config.frame_speed(cs);
    let with_gamma = config.scheme == Scheme::ItoUnsplit;
    let marcher = Marcher {
        cs,
        cache: TransformCache::new(cs, CACHE_INTERVALS),
        config,
        frame,
        dx: u0.dx,
        diff_speed: diffusion_speed(cs, frame, with_gamma),
        seed: path.seed,
        stream: path.stream_id,
    };

    let mut u = u0.values.clone();
    let mut offset = 0.0;
    let mut out_t = Vec::with_capacity(times.len());
    let mut out_u = Vec::with_capacity(times.len());
    let mut next_snapshot = 0;
    let mut consumed_t = vec![refined.t_grid[0]];
    let mut consumed_w = vec![refined.values[0]];
    let mut transport_steps = 0;
    let mut record = |t: f64, u: &[f64], offset: f64, next: &mut usize| {
        while *next < times.len() && times[*next] == t {
            out_t.push(t);
            out_u.push(GridFunction::from_parts_unchecked(u0.x_min + offset, u0.dx, u.to_vec()));
            *next += 1;
        }
    };
    record(0.0, &u, offset, &mut next_snapshot);

    let mut leaves = Vec::new();
    for k in 0..refined.steps() {
        if next_snapshot >= times.len() {
            break;
        }
        let a = (refined.t_grid[k], refined.values[k]);
        let b = (refined.t_grid[k + 1], refined.values[k + 1]);
        leaves.clear();
        let mut budget = config.max_substeps;
        if !marcher.leaves(a, b, &mut leaves, &mut budget) {
            return Err(SpdeError::SubstepLimitExceeded { t: b.0, limit: config.max_substeps });
        }
        let mut prev = a;
        for &leaf in &leaves {
            marcher.advance(&mut u, &mut offset, leaf.0 - prev.0, leaf.1 - prev.1).map_err(|e| match e {
                SpdeError::SubstepLimitExceeded { limit, .. } => SpdeError::SubstepLimitExceeded { t: b.0, limit },
                other => other,
            })?;
            consumed_t.push(leaf.0);
            consumed_w.push(leaf.1);
            prev = leaf;
        }
        transport_steps += leaves.len();
        record(b.0, &u, offset, &mut next_snapshot);
    }
    // Unmarched tail of the path is kept as given.
    let tail = consumed_t.len();
    if let Some(k) = refined.t_grid.iter().position(|&t| t == consumed_t[tail - 1]) {
        consumed_t.extend_from_slice(&refined.t_grid[k + 1..]);
        consumed_w.extend_from_slice(&refined.values[k + 1..]);
    }

    let consumed = BrownianPath { t_grid: consumed_t, values: consumed_w, seed: path.seed, stream_id: path.stream_id };
    Ok(SpdeSolution { times: out_t, snapshots: out_u, path: consumed, frame_speed: frame, transport_steps })
}

/// Closed-form solution for constant coefficients at one point:
/// `(u0 ⋆ N(0, σ₀²t))(x − b₀t − γ₀W_t)`.
pub fn analytic_constant_cdf(dist: &InitialDistribution, (b0, s0, g0): (f64, f64, f64), t: f64, w_t: f64, x: f64) -> f64 {
    dist.smoothed_cdf(x - b0 * t - g0 * w_t, s0 * s0 * t)
}

/// [`analytic_constant_cdf`] sampled at the cell centers of `grid`.
pub fn analytic_constant_solution(
    dist: &InitialDistribution,
    coefficients: (f64, f64, f64),
    t: f64,
    w_t: f64,
    grid: &GridFunction,
) -> GridFunction {
    let values = grid.centers().map(|x| analytic_constant_cdf(dist, coefficients, t, w_t, x)).collect();
    GridFunction::from_parts_unchecked(grid.x_min, grid.dx, values)
}

/// Exact `∫|u − v|` between two grid functions sharing cell centers.
pub fn l1_on_grid(u: &GridFunction, v: &GridFunction) -> f64 {
    crate::measures::w1(u, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::norm_cdf;
    use crate::randomness::sample_path;

    fn heaviside(x_min: f64, x_max: f64, cells: usize) -> GridFunction {
        InitialDistribution::point_mass(0.0).grid_cell_averages(x_min, x_max, cells).unwrap()
    }

    #[test]
    fn flux_examples() {
        let drift = CoefficientSet::constant(1.0, 0.0, 0.0);
        assert!((convective_flux(&drift, 0.3, 0.0, 0.4, 0.9) - 0.3 * 0.4).abs() < 1e-15);
        let common = CoefficientSet::constant(0.0, 0.0, 1.0);
        assert!((convective_flux(&common, 0.1, -0.2, 0.4, 0.9) - (-0.2 * 0.9)).abs() < 1e-15);
        let linear = CoefficientSet::from_sources("a - 0.5", "0", "0", 16).unwrap();
        assert!(convective_flux(&linear, 1.0, 0.0, 1.0, 1.0).abs() < 1e-14);
        assert!((convective_flux(&linear, 1.0, 0.0, 1.0, 0.0) - 0.125).abs() < 1e-14);
    }

    #[test]
    fn step_examples() {
        let u = heaviside(-1.0, 1.0, 16);
        let zero = CoefficientSet::constant(0.0, 0.0, 0.0);
        assert_eq!(spde_step(&u, &zero, 0.01, 0.3).unwrap(), u);

        let heat = CoefficientSet::constant(0.0, 2f64.sqrt(), 0.0);
        let u = GridFunction::sample(-1.0, 1.0, 16, |x| norm_cdf(3.0 * x)).unwrap();
        let dt = 0.004;
        let next = spde_step(&u, &heat, dt, 0.0).unwrap();
        let lam = dt / (u.dx * u.dx);
        for j in 0..16 {
            let l = if j == 0 { 0.0 } else { u.values[j - 1] };
            let r = if j == 15 { 1.0 } else { u.values[j + 1] };
            let want = u.values[j] + lam * (r - 2.0 * u.values[j] + l);
            assert!((next.values[j] - want).abs() < 1e-14);
        }
        assert!(matches!(spde_step(&u, &heat, 0.1, 0.0), Err(SpdeError::CflViolated { .. })));
    }

    #[test]
    fn cache_matches_tables() {
        let cs = CoefficientSet::from_sources("sin(3*a)", "1 + a^2", "0.5 + a", 64).unwrap();
        let cache = TransformCache::new(&cs, CACHE_INTERVALS);
        for k in 0..=200 {
            let r = k as f64 / 200.0 + 1e-3 * (k % 3) as f64;
            for which in CACHED {
                let d = (cache.value(which, r) - cs.transform(which, r.min(1.0))).abs();
                assert!(d < 1e-13, "{which:?} r={r} d={d}");
            }
        }
    }

    #[test]
    fn doubling_the_domain_leaves_the_solution_unchanged() {
        let cs = CoefficientSet::from_sources("a - 0.5", "1", "0.5*(1 + a)", 64).unwrap();
        let init = InitialDistribution::point_mass(0.0);
        let path = sample_path(8, 0, 1.0, 100).unwrap();
        let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, 128);
        let half = (cfg.x_max - cfg.x_min) / 2.0;
        let wide = SolverConfig { x_min: cfg.x_min - half, x_max: cfg.x_max + half, cells: 256, ..cfg.clone() };
        let a = solve(&cfg.initial_grid(&init).unwrap(), &cs, &path, &cfg, &[1.0]).unwrap();
        let b = solve(&wide.initial_grid(&init).unwrap(), &cs, &path, &wide, &[1.0]).unwrap();
        let (u, v) = (a.final_snapshot(), b.final_snapshot());
        for j in 0..128 {
            assert!((u.values[j] - v.values[j + 64]).abs() < 1e-8, "cell {j}");
        }
    }

    #[test]
    fn zero_horizon_snapshot_returns_initial() {
        let cs = CoefficientSet::constant(1.0, 1.0, 0.5);
        let path = sample_path(1, 0, 1.0, 10).unwrap();
        let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, 64);
        let u0 = heaviside(cfg.x_min, cfg.x_max, 64);
        let sol = solve(&u0, &cs, &path, &cfg, &[0.0]).unwrap();
        assert_eq!(sol.snapshots, vec![u0]);
    }

    #[test]
    fn margin_and_config_validation() {
        let cs = CoefficientSet::constant(1.0, 1.0, 0.5);
        let path = sample_path(1, 0, 1.0, 10).unwrap();
        let cfg = SolverConfig::new(-2.0, 2.0, 64);
        let u0 = heaviside(-2.0, 2.0, 64);
        assert!(matches!(solve(&u0, &cs, &path, &cfg, &[]), Err(SpdeError::MarginTooSmall { .. })));
        let mut bad = SolverConfig::covering(0.0, 0.0, &cs, 1.0, 4);
        assert!(matches!(bad.validate(), Err(SpdeError::InvalidConfig(_))));
        bad.cells = 64;
        bad.cfl_target = 1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn substep_limit_is_reported() {
        let cs = CoefficientSet::constant(0.0, 0.5, 3.0);
        let path = sample_path(3, 0, 1.0, 2).unwrap();
        let mut cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, 400);
        cfg.frame = FrameSpeed::Fixed(0.0);
        cfg.max_substeps = 2;
        let u0 = heaviside(cfg.x_min, cfg.x_max, 400);
        assert!(matches!(solve(&u0, &cs, &path, &cfg, &[]), Err(SpdeError::SubstepLimitExceeded { .. })));
    }

    #[test]
    fn pure_transport_follows_the_path() {
        // σ = 0, constant γ: the frame absorbs the noise exactly.
        let cs = CoefficientSet::build(
            crate::expr::CoefficientExpr::constant(0.0),
            crate::expr::CoefficientExpr::constant(0.0),
            crate::expr::CoefficientExpr::constant(0.7),
            16,
        )
        .unwrap();
        let path = sample_path(5, 0, 1.0, 50).unwrap();
        let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, 128);
        let u0 = heaviside(cfg.x_min, cfg.x_max, 128);
        let sol = solve(&u0, &cs, &path, &cfg, &[0.5, 1.0]).unwrap();
        let shift = 0.7 * path.values[50];
        let u = sol.final_snapshot();
        assert!((u.x_min - cfg.x_min - shift).abs() < 1e-12);
        for (a, b) in u.values.iter().zip(&u0.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_coefficients_converge_to_closed_form() {
        let (b0, s0, g0) = (1.0, 1.0, 0.5);
        let cs = CoefficientSet::constant(b0, s0, g0);
        let dist = InitialDistribution::point_mass(0.0);
        let path = sample_path(42, 0, 1.0, 400).unwrap();
        let mut errs = Vec::new();
        for cells in [128, 256] {
            let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, cells);
            let u0 = cfg.initial_grid(&dist).unwrap();
            let sol = solve(&u0, &cs, &path, &cfg, &[1.0]).unwrap();
            let u = sol.final_snapshot();
            let exact = analytic_constant_solution(&dist, (b0, s0, g0), 1.0, path.values[400], u);
            errs.push(l1_on_grid(u, &exact));
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 1.5 && ratio < 2.6, "errors {errs:?}");
    }
}
