//! Browser bindings: solve the rank-based SPDE, simulate the coupled
//! particle system on the same common path, and measure the gap.

use rankflow::particles::{initial_positions, simulate};
use rankflow::randomness::{sample_path, stream_id, NoiseBundle, StreamRole};
use rankflow::measures::l1_cdf_distance;
use rankflow::{solve, CoefficientSet, GridFunction, InitialDistribution, SolverConfig, StepCdf};
use wasm_bindgen::prelude::*;

const RESOLUTION: usize = 64;

fn setup(b: &str, sigma: &str, gamma: &str, init: &str) -> Result<(CoefficientSet, InitialDistribution), String> {
    let cs = CoefficientSet::from_sources(b, sigma, gamma, RESOLUTION).map_err(|e| e.to_string())?;
    cs.validate(true).map_err(|e| e.to_string())?;
    let init = init.parse::<InitialDistribution>().map_err(|e| e.to_string())?;
    Ok((cs, init))
}

/// Cell centers followed by cell values at time `horizon`.
fn solve_impl(b: &str, sigma: &str, gamma: &str, init: &str, cells: usize, horizon: f64, steps: usize, seed: u64) -> Result<Vec<f64>, String> {
    let (cs, init) = setup(b, sigma, gamma, init)?;
    let (lo, hi) = init.effective_support();
    let cfg = SolverConfig::covering(lo, hi, &cs, horizon, cells);
    let path = sample_path(seed, stream_id(0, StreamRole::Common), horizon, steps).map_err(|e| e.to_string())?;
    let u0 = cfg.initial_grid(&init).map_err(|e| e.to_string())?;
    let sol = solve(&u0, &cs, &path, &cfg, &[horizon]).map_err(|e| e.to_string())?;
    let u = sol.final_snapshot();
    Ok(u.centers().chain(u.values.iter().copied()).collect())
}

/// Sorted particle positions at time `horizon`.
fn simulate_impl(b: &str, sigma: &str, gamma: &str, init: &str, n: usize, horizon: f64, steps: usize, seed: u64) -> Result<Vec<f64>, String> {
    let (cs, init) = setup(b, sigma, gamma, init)?;
    let noise = NoiseBundle::generate(seed, 0, n, horizon, steps).map_err(|e| e.to_string())?;
    let x0 = initial_positions(&init, n, seed, 0);
    let traj = simulate(&x0, &cs, horizon, steps, &noise, &[horizon]).map_err(|e| e.to_string())?;
    Ok(traj.final_state().sorted_positions())
}

fn gap_impl(grid: &[f64], particles: &[f64]) -> Result<f64, String> {
    let cells = grid.len() / 2;
    if cells < 2 || !grid.len().is_multiple_of(2) {
        return Err("grid must hold centers then values".into());
    }
    let dx = grid[1] - grid[0];
    let u = GridFunction::new(grid[0] - dx / 2.0, grid[cells - 1] + dx / 2.0, grid[cells..].to_vec()).map_err(|e| e.to_string())?;
    let f = StepCdf::new(particles.to_vec()).map_err(|e| e.to_string())?;
    Ok(l1_cdf_distance(&u, &f))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn solve_spde(b: &str, sigma: &str, gamma: &str, init: &str, cells: usize, horizon: f64, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    solve_impl(b, sigma, gamma, init, cells, horizon, steps, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn simulate_particles(b: &str, sigma: &str, gamma: &str, init: &str, n: usize, horizon: f64, steps: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    simulate_impl(b, sigma, gamma, init, n, horizon, steps, seed).map_err(|e| JsError::new(&e))
}

/// L1 distance between the solver CDF and the particles' empirical CDF.
#[wasm_bindgen]
pub fn cdf_gap(grid: &[f64], particles: &[f64]) -> Result<f64, JsError> {
    gap_impl(grid, particles).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const G: (&str, &str, &str) = ("a - 0.5", "1", "0.5*(1 + a)");

    #[test]
    fn particles_approach_the_solver_profile() {
        let grid = solve_impl(G.0, G.1, G.2, "point(0)", 256, 1.0, 100, 3).unwrap();
        let gaps: Vec<f64> = [64, 1024]
            .iter()
            .map(|&n| gap_impl(&grid, &simulate_impl(G.0, G.1, G.2, "point(0)", n, 1.0, 100, 3).unwrap()).unwrap())
            .collect();
        assert!(gaps[1] < gaps[0], "{gaps:?}");
    }

    #[test]
    fn bad_input_is_reported() {
        assert!(solve_impl("a +", "1", "0", "point(0)", 64, 1.0, 10, 1).is_err());
        assert!(gap_impl(&[0.0, 1.0, 0.5], &[0.0]).is_err());
    }
}
