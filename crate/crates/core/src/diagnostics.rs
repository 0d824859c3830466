//! Kinetic diagnostics on solver snapshots.
//!
//! Test functions are transported bumps
//! `ρ(ξ, t, x) = ρ⁰(x − y − b(ξ)t − γ(ξ)z_t, ξ − η)`. Velocity integrals use
//! 256-point Gauss–Legendre rules on the clipped bump window; space
//! integrals use the midpoint rule on cell centers.

use std::sync::OnceLock;

use thiserror::Error;

use crate::coefficients::{CoefficientSet, Transform};
use crate::measures::GridFunction;
use crate::quadrature::gl256;
use crate::spde::SpdeSolution;

/// Smallest velocity scale the 256-node rule resolves.
pub const MIN_XI_SCALE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticError {
    #[error("velocity scale {0} is below the resolvable minimum {MIN_XI_SCALE}")]
    ScaleTooSmall(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time {0} is not a snapshot time")]
    TimeNotOnGrid(f64),
}

/// Kinetic function: `1` on `0 < ξ < u`, `−1` on `u < ξ < 0`, else `0`.
pub fn chi(xi: f64, u: f64) -> f64 {
    if 0.0 < xi && xi < u {
        1.0
    } else if u < xi && xi < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn bump_mass() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| gl256().integrate(-1.0, 1.0, |s| (-1.0 / (1.0 - s * s)).exp()))
}

/// `exp(−1/(1 − s²))` on `|s| < 1` with its first two derivatives.
#[inline]
fn raw_bump(s: f64) -> (f64, f64, f64) {
    if s.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - s * s;
    let v = (-1.0 / q).exp();
    let g1 = -2.0 * s / (q * q);
    let g2 = -2.0 / (q * q) - 8.0 * s * s / (q * q * q);
    (v, v * g1, v * (g1 * g1 + g2))
}

/// Unit-mass smooth bump on `[center − radius, center + radius]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub center: f64,
    pub radius: f64,
}

impl Bump {
    pub fn new(center: f64, radius: f64) -> Self {
        assert!(radius > 0.0, "bump radius must be positive");
        Self { center, radius }
    }

    /// Value, first and second derivative at `x`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64, f64) {
        let (v, d1, d2) = raw_bump((x - self.center) / self.radius);
        let k = 1.0 / (bump_mass() * self.radius);
        (k * v, k * d1 / self.radius, k * d2 / (self.radius * self.radius))
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.radius, self.center + self.radius)
    }
}

/// Tensor bump `ρ⁰(x̃, ξ̃)` centered at `(y, η)` with scales `(r_x, r_ξ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpTestFunction {
    pub eta: f64,
    pub y: f64,
    pub r_xi: f64,
    pub r_x: f64,
}

/// `ρ` and the partial derivatives the diagnostics need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoValue {
    pub value: f64,
    pub dx: f64,
    pub dxx: f64,
    pub dxi: f64,
}

impl BumpTestFunction {
    pub fn new(eta: f64, y: f64, r_xi: f64, r_x: f64) -> Result<Self, DiagnosticError> {
        if !(r_xi >= MIN_XI_SCALE) {
            return Err(DiagnosticError::ScaleTooSmall(r_xi));
        }
        if !(r_x > 0.0 && r_x.is_finite() && eta.is_finite() && y.is_finite()) {
            return Err(DiagnosticError::InvalidArgument(format!("bad bump ({eta}, {y}, {r_xi}, {r_x})")));
        }
        Ok(Self { eta, y, r_xi, r_x })
    }

    fn x_part(&self) -> Bump {
        Bump::new(0.0, self.r_x)
    }

    fn xi_part(&self) -> Bump {
        Bump::new(0.0, self.r_xi)
    }

    /// Velocity window `[η − r_ξ, η + r_ξ] ∩ [0, 1]`, if nonempty.
    pub fn xi_window(&self) -> Option<(f64, f64)> {
        let lo = (self.eta - self.r_xi).max(0.0);
        let hi = (self.eta + self.r_xi).min(1.0);
        (lo < hi).then_some((lo, hi))
    }
}

/// Coefficients at one velocity, shared by every `x` evaluation.
#[derive(Debug, Clone, Copy)]
struct Velocity {
    xi: f64,
    b: f64,
    b_prime: f64,
    sigma: f64,
    gamma: f64,
    gamma_prime: f64,
}

impl Velocity {
    fn at(cs: &CoefficientSet, xi: f64) -> Self {
        Self {
            xi,
            b: cs.b.eval(xi),
            b_prime: cs.b_prime.eval(xi),
            sigma: cs.sigma.eval(xi),
            gamma: cs.gamma.eval(xi),
            gamma_prime: cs.gamma_prime.eval(xi),
        }
    }
}

#[inline]
fn rho_at(tf: &BumpTestFunction, v: &Velocity, t: f64, x: f64, z: f64) -> RhoValue {
    let xt = x - tf.y - v.b * t - v.gamma * z;
    let (a, a1, a2) = tf.x_part().eval(xt);
    if a == 0.0 && a1 == 0.0 {
        return RhoValue { value: 0.0, dx: 0.0, dxx: 0.0, dxi: 0.0 };
    }
    let (c, c1, _) = tf.xi_part().eval(v.xi - tf.eta);
    let dxt_dxi = -v.b_prime * t - v.gamma_prime * z;
    RhoValue { value: a * c, dx: a1 * c, dxx: a2 * c, dxi: a1 * dxt_dxi * c + a * c1 }
}

/// `ρ(ξ, t, x)` for the path value `z_t`, with `∂_x`, `∂_xx`, `∂_ξ`.
pub fn eval_rho(tf: &BumpTestFunction, cs: &CoefficientSet, xi: f64, t: f64, x: f64, z_t: f64) -> RhoValue {
    rho_at(tf, &Velocity::at(cs, xi), t, x, z_t)
}

/// Central differences inside, one-sided at both ends.
pub fn grid_derivative(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|j| {
            if j == 0 {
                (values[1] - values[0]) / dx
            } else if j == n - 1 {
                (values[n - 1] - values[n - 2]) / dx
            } else {
                (values[j + 1] - values[j - 1]) / (2.0 * dx)
            }
        })
        .collect()
}

/// `S(u)_x` on the grid.
pub fn s_derivative(u: &GridFunction, cs: &CoefficientSet) -> Vec<f64> {
    let s: Vec<f64> = u.values.iter().map(|&v| cs.transform(Transform::S, v)).collect();
    grid_derivative(&s, u.dx)
}

/// The three evaluations of the chain-rule pairing at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainRuleTerms {
    /// `∬ χ̄(ξ, u) σ(ξ) ρ_x dx dξ`, integrated cell by cell in `x`.
    pub kinetic: f64,
    /// `−∫ S(u)_x ρ(u, t, x) dx`.
    pub dissipative: f64,
    /// `−∫₀¹ σ(ξ) ρ(ξ, t, u⁻¹(ξ)) dξ`.
    pub quantile: f64,
}

impl ChainRuleTerms {
    pub fn residual(&self) -> f64 {
        (self.kinetic - self.dissipative).abs()
    }
}

pub fn chain_rule_terms(u: &GridFunction, cs: &CoefficientSet, tf: &BumpTestFunction, t: f64, w_t: f64) -> ChainRuleTerms {
    let Some((lo, hi)) = tf.xi_window() else {
        return ChainRuleTerms { kinetic: 0.0, dissipative: 0.0, quantile: 0.0 };
    };
    let mut kinetic = 0.0;
    let mut quantile = 0.0;
    for (xi, w) in gl256().mapped(lo, hi) {
        let v = Velocity::at(cs, xi);
        let rho = |x: f64| rho_at(tf, &v, t, x, w_t).value;
        kinetic += w * v.sigma * superlevel_integral(u, xi, rho);
        quantile -= w * v.sigma * rho(u.quantile(xi));
    }
    let sx = s_derivative(u, cs);
    let dissipative = -u
        .values
        .iter()
        .enumerate()
        .filter(|(_, &uj)| uj > lo && uj < hi)
        .map(|(j, &uj)| sx[j] * eval_rho(tf, cs, uj, t, u.center(j), w_t).value)
        .sum::<f64>()
        * u.dx;
    ChainRuleTerms { kinetic, dissipative, quantile }
}

/// `∫_{u(x) > ξ} ∂_x ρ dx`, summed segment by segment over the
/// piecewise-linear grid function, each piece integrated exactly.
fn superlevel_integral(u: &GridFunction, xi: f64, rho: impl Fn(f64) -> f64) -> f64 {
    let n = u.values.len();
    let mut total = 0.0;
    // Between the left edge and the first center the value is u₀.
    if u.values[0] > xi {
        total += rho(u.center(0)) - rho(u.x_min);
    }
    for j in 0..n - 1 {
        let (ua, ub) = (u.values[j], u.values[j + 1]);
        if ub <= xi {
            continue;
        }
        let (a, b) = (u.center(j), u.center(j + 1));
        let start = if ua > xi { a } else { a + (xi - ua) / (ub - ua) * (b - a) };
        total += rho(b) - rho(start);
    }
    if u.values[n - 1] > xi {
        total += rho(u.x_max()) - rho(u.center(n - 1));
    }
    // Right of the domain the function is one; the bump vanishes at infinity.
    total - rho(u.x_max())
}

/// `|∬ χ̄ σ ρ_x − (−∫ S(u)_x ρ(u, ·))|` at time `t` with path value `w_t`.
pub fn chain_rule_residual(u: &GridFunction, cs: &CoefficientSet, tf: &BumpTestFunction, t: f64, w_t: f64) -> f64 {
    chain_rule_terms(u, cs, tf, t, w_t).residual()
}

/// `|∫ g(x, u) γ(u) u_x dx − ∫₀¹ g(u⁻¹(ξ), ξ) γ(ξ) dξ|`.
pub fn coarea_check(u: &GridFunction, cs: &CoefficientSet, g: impl Fn(f64, f64) -> f64) -> f64 {
    let ux = grid_derivative(&u.values, u.dx);
    let left: f64 = u.values.iter().enumerate().map(|(j, &uj)| g(u.center(j), uj) * cs.gamma.eval(uj) * ux[j]).sum::<f64>() * u.dx;
    let right = gl256().integrate(0.0, 1.0, |xi| g(u.quantile(xi), xi) * cs.gamma.eval(xi));
    (left - right).abs()
}

/// One atom of the dissipation measure: mass at `(x, ξ = u(t, x), t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationAtom {
    pub step: usize,
    pub cell: usize,
    pub t: f64,
    pub x: f64,
    pub xi: f64,
    pub bin: usize,
    pub mass: f64,
}

/// Dissipation measure on (cell, velocity bin, time step); each
/// (cell, step) pair deposits its whole mass in one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct KineticMeasureEstimate {
    pub bin_edges: Vec<f64>,
    pub atoms: Vec<DissipationAtom>,
}

impl KineticMeasureEstimate {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    pub fn bin_masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.bin_edges.len() - 1];
        for a in &self.atoms {
            m[a.bin] += a.mass;
        }
        m
    }
}

/// Atoms `½(S(u)_x)²·dx·(t_k − t_{k−1})` placed at `ξ = u(t_k, x_j)`.
pub fn dissipation_measure(sol: &SpdeSolution, cs: &CoefficientSet, xi_bins: usize) -> Result<KineticMeasureEstimate, DiagnosticError> {
    if xi_bins == 0 {
        return Err(DiagnosticError::InvalidArgument("need at least one velocity bin".into()));
    }
    let bin_edges: Vec<f64> = (0..=xi_bins).map(|k| k as f64 / xi_bins as f64).collect();
    let mut atoms = Vec::new();
    for k in 1..sol.times.len() {
        let dt = sol.times[k] - sol.times[k - 1];
        let u = &sol.snapshots[k];
        for (j, sx) in s_derivative(u, cs).into_iter().enumerate() {
            let mass = 0.5 * sx * sx * u.dx * dt;
            if mass == 0.0 {
                continue;
            }
            let xi = u.values[j];
            let bin = ((xi * xi_bins as f64) as usize).min(xi_bins - 1);
            atoms.push(DissipationAtom { step: k, cell: j, t: sol.times[k], x: u.center(j), xi, bin, mass });
        }
    }
    Ok(KineticMeasureEstimate { bin_edges, atoms })
}

/// `½ Σ_k (t_k − t_{k−1}) Σ_j (S(u)_x)² dx`, summed independently of the atoms.
pub fn dissipation_l2(sol: &SpdeSolution, cs: &CoefficientSet) -> f64 {
    (1..sol.times.len())
        .map(|k| {
            let u = &sol.snapshots[k];
            let sq: f64 = s_derivative(u, cs).iter().map(|s| s * s).sum();
            0.5 * sq * u.dx * (sol.times[k] - sol.times[k - 1])
        })
        .sum()
}

fn snapshot_index(sol: &SpdeSolution, t: f64) -> Result<usize, DiagnosticError> {
    sol.times.iter().position(|&s| s == t).ok_or(DiagnosticError::TimeNotOnGrid(t))
}

fn path_value(sol: &SpdeSolution, t: f64) -> Result<f64, DiagnosticError> {
    sol.path.value_at(t).ok_or(DiagnosticError::TimeNotOnGrid(t))
}

/// `∬ χ̄(ξ, u) k(ρ) dξ dx` for `k` picking a component of `ρ` scaled by a coefficient.
fn kinetic_pairing(
    u: &GridFunction,
    cs: &CoefficientSet,
    tf: &BumpTestFunction,
    t: f64,
    z: f64,
    pick: impl Fn(&Velocity, &RhoValue) -> f64,
) -> f64 {
    let Some((lo, hi)) = tf.xi_window() else { return 0.0 };
    // Only cells whose x-range meets the transported bump contribute.
    let reach = gl256()
        .mapped(lo, hi)
        .map(|(xi, _)| {
            let v = Velocity::at(cs, xi);
            tf.y + v.b * t + v.gamma * z
        })
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(c), b.max(c)));
    let (x_lo, x_hi) = (reach.0 - tf.r_x - u.dx, reach.1 + tf.r_x + u.dx);
    let mut total = 0.0;
    for (j, &uj) in u.values.iter().enumerate() {
        let x = u.center(j);
        if x < x_lo || x > x_hi || uj <= lo {
            continue;
        }
        let top = uj.min(hi);
        total += gl256()
            .mapped(lo, top)
            .map(|(xi, w)| {
                let v = Velocity::at(cs, xi);
                w * pick(&v, &rho_at(tf, &v, t, x, z))
            })
            .sum::<f64>();
    }
    total * u.dx
}

/// Signed residual of the tested kinetic identity on `[s, t]`, the part
/// that the entropy defect measure would have to carry.
///
/// Boundary terms use the snapshots at `s` and `t`, the `σ²ρ_xx` time
/// integral the trapezoid rule, and the dissipation pairing the atoms of
/// [`dissipation_measure`] for steps ending in `(s, t]`.
pub fn entropy_identity_residual(sol: &SpdeSolution, cs: &CoefficientSet, tf: &BumpTestFunction, s: f64, t: f64) -> Result<f64, DiagnosticError> {
    if !(s < t) {
        return Err(DiagnosticError::InvalidArgument(format!("need s < t, got s = {s}, t = {t}")));
    }
    let ks = snapshot_index(sol, s)?;
    let kt = snapshot_index(sol, t)?;
    let value = |k: usize| -> Result<f64, DiagnosticError> {
        let r = sol.times[k];
        let z = path_value(sol, r)?;
        Ok(kinetic_pairing(&sol.snapshots[k], cs, tf, r, z, |_, rho| rho.value))
    };
    let boundary = -(value(kt)? - value(ks)?);

    let diffusive_at = |k: usize| -> Result<f64, DiagnosticError> {
        let r = sol.times[k];
        let z = path_value(sol, r)?;
        Ok(kinetic_pairing(&sol.snapshots[k], cs, tf, r, z, |v, rho| v.sigma * v.sigma * rho.dxx))
    };
    let mut diffusive = 0.0;
    let mut prev = diffusive_at(ks)?;
    for k in ks + 1..=kt {
        let cur = diffusive_at(k)?;
        diffusive += 0.5 * (sol.times[k] - sol.times[k - 1]) * (prev + cur);
        prev = cur;
    }
    let diffusive = 0.5 * diffusive;

    let mut dissipation = 0.0;
    let Some((lo, hi)) = tf.xi_window() else { return Ok(boundary + diffusive) };
    for k in ks + 1..=kt {
        let u = &sol.snapshots[k];
        let r = sol.times[k];
        let z = path_value(sol, r)?;
        let dt = r - sol.times[k - 1];
        for (j, sx) in s_derivative(u, cs).into_iter().enumerate() {
            let xi = u.values[j];
            if xi <= lo || xi >= hi {
                continue;
            }
            let mass = 0.5 * sx * sx * u.dx * dt;
            dissipation += mass * eval_rho(tf, cs, xi, r, u.center(j), z).dxi;
        }
    }
    Ok(boundary + diffusive - dissipation)
}

/// Itô weak-form residual against a smooth compactly supported `f`:
/// `|⟨u(t) − u(s), f⟩ − Σ [⟨𝔅(u), f′⟩ + ⟨(Σ + Γ)(u), f″⟩] Δt − Σ ⟨G(u), f′⟩ ΔW|`
/// with left-point sums over the snapshot grid.
pub fn weak_form_residual(sol: &SpdeSolution, cs: &CoefficientSet, f: &Bump, s: f64, t: f64) -> Result<f64, DiagnosticError> {
    if !(s < t) {
        return Err(DiagnosticError::InvalidArgument(format!("need s < t, got s = {s}, t = {t}")));
    }
    let ks = snapshot_index(sol, s)?;
    let kt = snapshot_index(sol, t)?;
    let pair = |u: &GridFunction, g: &dyn Fn(f64) -> f64, which: usize| -> f64 {
        u.values
            .iter()
            .enumerate()
            .map(|(j, &uj)| {
                let (f0, f1, f2) = f.eval(u.center(j));
                let w = [f0, f1, f2][which];
                if w == 0.0 {
                    0.0
                } else {
                    g(uj) * w
                }
            })
            .sum::<f64>()
            * u.dx
    };
    let ident = |v: f64| v;
    let lhs = pair(&sol.snapshots[kt], &ident, 0) - pair(&sol.snapshots[ks], &ident, 0);
    let drift = |v: f64| cs.transform(Transform::B, v);
    let diff = |v: f64| cs.transform(Transform::Sigma, v) + cs.transform(Transform::Gamma, v);
    let noise = |v: f64| cs.transform(Transform::G, v);
    let mut rhs = 0.0;
    for k in ks..kt {
        let u = &sol.snapshots[k];
        let dt = sol.times[k + 1] - sol.times[k];
        let dw = path_value(sol, sol.times[k + 1])? - path_value(sol, sol.times[k])?;
        rhs += (pair(u, &drift, 1) + pair(u, &diff, 2)) * dt + pair(u, &noise, 1) * dw;
    }
    Ok((lhs - rhs).abs())
}
