//! Euler–Maruyama simulation of rank-based particles with common noise.
//!
//! Particle `i` moves with `b(F) dt + σ(F) dBⁱ + γ(F) dW`, where `F` is its
//! rank fraction `#{j : X_j ≤ X_i} / n` at the start of the step.

use thiserror::Error;

use crate::coefficients::CoefficientSet;
use crate::measures::InitialDistribution;
use crate::randomness::{stream_id, NoiseBundle, StreamRole};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParticleError {
    #[error("particle {index} became non-finite at t = {t}")]
    NonFiniteState { index: usize, t: f64 },
    #[error("noise carries {got} idiosyncratic paths but there are {expected} particles")]
    NoiseMismatch { expected: usize, got: usize },
    #[error("snapshot time {0} is not on the step grid")]
    SnapshotOffGrid(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Positions at one time, with a cached sort permutation.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub t: f64,
    positions: Vec<f64>,
    order: Vec<usize>,
}

impl PartialEq for ParticleState {
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t && self.positions == other.positions
    }
}

impl ParticleState {
    pub fn new(t: f64, positions: Vec<f64>) -> Result<Self, ParticleError> {
        if positions.is_empty() {
            return Err(ParticleError::InvalidArgument("no particles".into()));
        }
        if let Some(index) = positions.iter().position(|x| !x.is_finite()) {
            return Err(ParticleError::NonFiniteState { index, t });
        }
        let mut s = Self { t, order: (0..positions.len()).collect(), positions };
        s.resort();
        Ok(s)
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn n(&self) -> usize {
        self.positions.len()
    }

    /// Indices ordered by position.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Positions in ascending order.
    pub fn sorted_positions(&self) -> Vec<f64> {
        self.order.iter().map(|&i| self.positions[i]).collect()
    }

    fn resort(&mut self) {
        // Stable sort of the previous permutation; nearly sorted input is cheap.
        let pos = &self.positions;
        self.order.sort_by(|&a, &b| pos[a].total_cmp(&pos[b]));
    }

    /// Rank counts `#{j : X_j ≤ X_i}` in `1..=n`.
    fn rank_counts(&self) -> Vec<usize> {
        let n = self.n();
        let mut ranks = vec![0; n];
        let mut p = n;
        while p > 0 {
            let top = p;
            let x = self.positions[self.order[p - 1]];
            while p > 0 && self.positions[self.order[p - 1]] == x {
                ranks[self.order[p - 1]] = top;
                p -= 1;
            }
        }
        ranks
    }
}

/// Entry `i` is `#{j : X_j ≤ X_i} / n`; tied particles share the value.
pub fn rank_fractions(state: &ParticleState) -> Vec<f64> {
    let n = state.n() as f64;
    state.rank_counts().into_iter().map(|r| r as f64 / n).collect()
}

/// `b`, `σ`, `γ` evaluated at `ℓ/n` for `ℓ = 1..=n` (index `ℓ − 1`).
#[derive(Debug, Clone)]
struct RankTable {
    b: Vec<f64>,
    sigma: Vec<f64>,
    gamma: Vec<f64>,
}

impl RankTable {
    fn new(cs: &CoefficientSet, n: usize) -> Self {
        let at = |e: &crate::expr::CoefficientExpr| (1..=n).map(|l| e.eval(l as f64 / n as f64)).collect();
        Self { b: at(&cs.b), sigma: at(&cs.sigma), gamma: at(&cs.gamma) }
    }
}

fn advance(
    state: &mut ParticleState,
    table: &RankTable,
    dt: f64,
    db: impl Fn(usize) -> f64,
    dw: f64,
    t_next: f64,
) -> Result<(), ParticleError> {
    let ranks = state.rank_counts();
    for (i, (x, r)) in state.positions.iter_mut().zip(ranks).enumerate() {
        let l = r - 1;
        *x += table.b[l] * dt + table.sigma[l] * db(i) + table.gamma[l] * dw;
        if !x.is_finite() {
            return Err(ParticleError::NonFiniteState { index: i, t: t_next });
        }
    }
    state.t = t_next;
    state.resort();
    Ok(())
}

/// One explicit step with ranks frozen at the step start.
pub fn em_step(state: &ParticleState, cs: &CoefficientSet, dt: f64, db: &[f64], dw: f64) -> Result<ParticleState, ParticleError> {
    if !(dt > 0.0) {
        return Err(ParticleError::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    if db.len() != state.n() {
        return Err(ParticleError::NoiseMismatch { expected: state.n(), got: db.len() });
    }
    let mut next = state.clone();
    advance(&mut next, &RankTable::new(cs, state.n()), dt, |i| db[i], dw, state.t + dt)?;
    Ok(next)
}

/// Snapshots of one simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<ParticleState>,
    /// Seed and replica of the noise bundle that drove the run.
    pub noise_seed: u64,
    pub replica: u32,
}

impl Trajectory {
    pub fn final_state(&self) -> &ParticleState {
        self.states.last().expect("trajectories hold at least the initial snapshot")
    }

    pub fn state_at(&self, t: f64) -> Option<&ParticleState> {
        self.times.iter().position(|&s| s == t).map(|k| &self.states[k])
    }
}

/// Draws `n` initial positions on the replica's initial-position stream.
pub fn initial_positions(dist: &InitialDistribution, n: usize, seed: u64, replica: u32) -> Vec<f64> {
    dist.sample(n, seed, stream_id(replica, StreamRole::InitialPositions))
}

/// Index of `t` on the grid `k·T/steps`, if it is a node (relative tolerance 1e-9).
pub(crate) fn grid_index(t: f64, horizon: f64, steps: usize) -> Option<usize> {
    if steps == 0 {
        return (t == 0.0).then_some(0);
    }
    let s = t / horizon * steps as f64;
    let k = s.round();
    ((s - k).abs() <= 1e-9 * steps as f64 && k >= 0.0 && k <= steps as f64).then_some(k as usize)
}

/// Marches `steps` uniform steps over `[0, T]`, driven by `noise`.
///
/// The noise paths must live on the same uniform grid. The initial state is
/// always captured; `snapshot_times` adds more.
pub fn simulate(
    initial: &[f64],
    cs: &CoefficientSet,
    horizon: f64,
    steps: usize,
    noise: &NoiseBundle,
    snapshot_times: &[f64],
) -> Result<Trajectory, ParticleError> {
    let n = initial.len();
    if noise.n() != n {
        return Err(ParticleError::NoiseMismatch { expected: n, got: noise.n() });
    }
    let mut state = ParticleState::new(0.0, initial.to_vec())?;
    let mut wanted = vec![false; steps + 1];
    for &t in snapshot_times {
        let k = grid_index(t, horizon, steps).ok_or(ParticleError::SnapshotOffGrid(t))?;
        wanted[k] = true;
    }
    let mut traj = Trajectory { times: vec![0.0], states: vec![state.clone()], noise_seed: noise.common.seed, replica: noise.replica };
    if steps == 0 {
        return Ok(traj);
    }
    if noise.common.steps() != steps || (noise.common.horizon() - horizon).abs() > 1e-12 * horizon {
        return Err(ParticleError::InvalidArgument(format!(
            "noise grid has {} steps over {}, expected {steps} over {horizon}",
            noise.common.steps(),
            noise.common.horizon()
        )));
    }
    let table = RankTable::new(cs, n);
    for k in 0..steps {
        let t0 = noise.common.t_grid[k];
        let t1 = noise.common.t_grid[k + 1];
        let dw = noise.common.increment(k);
        advance(&mut state, &table, t1 - t0, |i| noise.idiosyncratic[i].increment(k), dw, t1)?;
        if wanted[k + 1] {
            traj.times.push(t1);
            traj.states.push(state.clone());
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{empirical_cdf, w1};

    fn state(xs: &[f64]) -> ParticleState {
        ParticleState::new(0.0, xs.to_vec()).unwrap()
    }

    #[test]
    fn rank_fraction_examples() {
        assert_eq!(rank_fractions(&state(&[3.0, 1.0, 2.0])), vec![1.0, 1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(rank_fractions(&state(&[4.2])), vec![1.0]);
        assert_eq!(rank_fractions(&state(&[1.0, 0.0, 1.0, 1.0])), vec![1.0, 0.25, 1.0, 1.0]);
    }

    #[test]
    fn deterministic_shifts() {
        let s = state(&[0.0, 1.0, -2.0]);
        let drift = CoefficientSet::constant(1.0, 0.0, 0.0);
        let next = em_step(&s, &drift, 0.1, &[0.3, -0.2, 0.5], 0.7).unwrap();
        assert_eq!(next.positions(), &[0.1, 1.1, -1.9]);
        let common = CoefficientSet::constant(0.0, 0.0, 1.0);
        let next = em_step(&s, &common, 0.1, &[0.3, -0.2, 0.5], 0.7).unwrap();
        assert_eq!(next.positions(), &[0.7, 1.7, -1.3]);
    }

    #[test]
    fn single_particle_matches_hand_arithmetic() {
        let cs = CoefficientSet::constant(0.0, 1.0, 0.0);
        for seed in [1, 2, 3] {
            let noise = NoiseBundle::generate(seed, 0, 1, 1.0, 4).unwrap();
            let traj = simulate(&[0.5], &cs, 1.0, 4, &noise, &[1.0]).unwrap();
            let mut x = 0.5;
            for k in 0..4 {
                x += noise.idiosyncratic[0].increment(k);
            }
            assert_eq!(traj.final_state().positions()[0], x);
        }
    }

    #[test]
    fn errors() {
        let cs = CoefficientSet::constant(0.0, 1.0, 0.0);
        let s = state(&[0.0, 1.0]);
        assert!(matches!(em_step(&s, &cs, 0.1, &[0.0], 0.0), Err(ParticleError::NoiseMismatch { .. })));
        assert!(em_step(&s, &cs, 0.0, &[0.0, 0.0], 0.0).is_err());
        assert!(matches!(
            em_step(&s, &cs, 0.1, &[f64::INFINITY, 0.0], 0.0),
            Err(ParticleError::NonFiniteState { index: 0, .. })
        ));
        let noise = NoiseBundle::generate(1, 0, 2, 1.0, 10).unwrap();
        assert_eq!(simulate(&[0.0, 1.0], &cs, 1.0, 10, &noise, &[0.55]), Err(ParticleError::SnapshotOffGrid(0.55)));
    }

    #[test]
    fn zero_steps_returns_initial_snapshot() {
        let cs = CoefficientSet::constant(1.0, 1.0, 1.0);
        let noise = NoiseBundle::generate(1, 0, 3, 1.0, 1).unwrap();
        let traj = simulate(&[0.0, 1.0, 2.0], &cs, 1.0, 0, &noise, &[0.0]).unwrap();
        assert_eq!(traj.times, vec![0.0]);
        assert_eq!(traj.states.len(), 1);
    }

    #[test]
    fn constant_coefficients_are_integrated_exactly() {
        let cs = CoefficientSet::constant(1.0, 1.0, 0.5);
        let n = 50;
        let noise = NoiseBundle::generate(11, 0, n, 1.0, 64).unwrap();
        let x0: Vec<f64> = (0..n).map(|i| i as f64 * 0.1 - 2.0).collect();
        let traj = simulate(&x0, &cs, 1.0, 64, &noise, &[0.5, 1.0]).unwrap();
        assert_eq!(traj.times, vec![0.0, 0.5, 1.0]);
        let w_t = noise.common.values[64];
        for i in 0..n {
            let want = x0[i] + 1.0 + noise.idiosyncratic[i].values[64] + 0.5 * w_t;
            assert!((traj.final_state().positions()[i] - want).abs() < 1e-12);
        }
        // Recentred cloud equals the initial cloud plus idiosyncratic displacement.
        let recentred: Vec<f64> = traj.final_state().positions().iter().map(|x| x - 1.0 - 0.5 * w_t).collect();
        let reference: Vec<f64> = (0..n).map(|i| x0[i] + noise.idiosyncratic[i].values[64]).collect();
        let d = w1(&empirical_cdf(&recentred).unwrap(), &empirical_cdf(&reference).unwrap());
        assert!(d < 1e-12, "d={d}");
    }
}
