//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rankflow::diagnostics::{
    chain_rule_residual, coarea_check, dissipation_l2, dissipation_measure, entropy_identity_residual, eval_rho,
    BumpTestFunction,
};
use rankflow::experiments::{
    convergence_study, default_martingale_suite, martingale_statistic, stability_experiment, ConvergenceParams,
    MartingaleParams, Reference,
};
use rankflow::measures::{norm_cdf, w1, w1_sorted_samples};
use rankflow::particles::rank_fractions;
use rankflow::randomness::{sample_path, CounterRng, Domain};
use rankflow::spde::{analytic_constant_solution, l1_on_grid, step_cfl_number};
use rankflow::*;

/// Pinned tolerances. Each carries where its value comes from.
mod tol {
    /// Refinement ratio band of a first-order monotone scheme.
    pub const FIRST_ORDER_RATIO: (f64, f64) = (1.5, 2.6);
    /// Least-squares order of the heat error over J = 128, 256, 512.
    pub const MIN_OBSERVED_ORDER: f64 = 0.9;
    /// Heat L1 error bound at J = 512: first-order extrapolation of the
    /// measured J = 256 error (2.03e-4 / 2), rounded up. Measured 6.6e-5.
    pub const HEAT_L1_AT_512: f64 = 1.0e-4;
    /// Constant-coefficient n = 100 to 1600 error ratio: √16 = 4 with a
    /// ±2 stderr band from a 20-replica pilot.
    pub const CLT_RATIO: (f64, f64) = (2.5, 6.5);
    /// Martingale bias constant: largest n·|shift| between n = 128 and
    /// n = 1024 pilot estimates over the six triples was 0.157.
    pub const MARTINGALE_C: f64 = 0.2;
    pub const MARTINGALE_Z: f64 = 3.0;
    /// Spread allowed among implied stability constants.
    pub const STABILITY_SPREAD: f64 = 3.0;
    /// Minimum log-log slope of residual against dx.
    pub const MIN_RESIDUAL_SLOPE: f64 = 1.0;
    pub const DISSIPATION_BOOKKEEPING: f64 = 1e-10;
    /// Relative gap to `1/√(2π)` for the heat dissipation mass at J = 256.
    pub const HEAT_DISSIPATION_REL: f64 = 0.05;
    pub const W1_ORACLE: f64 = 1e-12;
    pub const G_GAMMA_SLACK: f64 = 1e-12;
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn slope(dx: &[f64], r: &[f64]) -> f64 {
    let lx: Vec<f64> = dx.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = r.iter().map(|y| y.abs().ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn heaviside() -> InitialDistribution {
    InitialDistribution::point_mass(0.0)
}

fn general() -> CoefficientSet {
    CoefficientSet::from_sources("a - 0.5", "1", "0.5*(1 + a)", 64).unwrap()
}

fn heat() -> CoefficientSet {
    let cs = CoefficientSet::from_sources("0", "sqrt(2)", "0", 64).unwrap();
    cs.validate(true).unwrap();
    cs
}

fn constant_oracle() -> Outcome {
    let coeffs = (1.0, 1.0, 0.5);
    let cs = CoefficientSet::constant(coeffs.0, coeffs.1, coeffs.2);
    let path = sample_path(42, 0, 1.0, 400).unwrap();
    let mut errs = Vec::new();
    for cells in [128, 256] {
        let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, cells);
        let u0 = cfg.initial_grid(&heaviside()).map_err(|e| e.to_string())?;
        let sol = solve(&u0, &cs, &path, &cfg, &[1.0]).map_err(|e| e.to_string())?;
        let u = sol.final_snapshot();
        errs.push(l1_on_grid(u, &analytic_constant_solution(&heaviside(), coeffs, 1.0, path.values[400], u)));
    }
    let ratio = errs[0] / errs[1];
    let (lo, hi) = tol::FIRST_ORDER_RATIO;
    check(
        errs[1] < errs[0] && (lo..=hi).contains(&ratio),
        format!("L1 error J=128 {:.3e}, J=256 {:.3e}, ratio {ratio:.3} in [{lo}, {hi}]", errs[0], errs[1]),
    )
}

fn heat_oracle() -> Outcome {
    let cs = heat();
    let path = sample_path(1, 0, 1.0, 100).unwrap();
    let (mut dxs, mut errs) = (Vec::new(), Vec::new());
    for cells in [128, 256, 512] {
        let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, cells);
        let u0 = cfg.initial_grid(&heaviside()).map_err(|e| e.to_string())?;
        let sol = solve(&u0, &cs, &path, &cfg, &[1.0]).map_err(|e| e.to_string())?;
        let u = sol.final_snapshot();
        let exact = GridFunction::sample(u.x_min, u.x_max(), cells, |x| norm_cdf(x / 2f64.sqrt())).map_err(|e| e.to_string())?;
        dxs.push(cfg.dx());
        errs.push(l1_on_grid(u, &exact));
    }
    let order = slope(&dxs, &errs);
    check(
        order >= tol::MIN_OBSERVED_ORDER && errs[2] <= tol::HEAT_L1_AT_512,
        format!(
            "L1 errors {:.3e} {:.3e} {:.3e}, observed order {order:.2} (>= {}), J=512 error <= {:.1e}",
            errs[0], errs[1], errs[2], tol::MIN_OBSERVED_ORDER, tol::HEAT_L1_AT_512
        ),
    )
}

fn hydrodynamic() -> Outcome {
    let cs = general();
    let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, 512);
    let params = ConvergenceParams {
        n_list: vec![128, 512, 2048],
        replicas: 20,
        horizon: 1.0,
        steps: 100,
        snapshot_times: vec![0.5, 1.0],
        seed: 2024,
    };
    let res = convergence_study(&cs, &heaviside(), &Reference::Solver(cfg), &params, None).map_err(|e| e.to_string())?;
    let decreasing = res.means.windows(2).all(|w| w[1] < w[0]);

    let constant = CoefficientSet::constant(1.0, 1.0, 0.5);
    let params = ConvergenceParams { n_list: vec![100, 1600], replicas: 20, horizon: 1.0, steps: 100, snapshot_times: vec![0.5, 1.0], seed: 1 };
    let reference = Reference::Analytic { coefficients: (1.0, 1.0, 0.5), cells: 8192 };
    let res_c = convergence_study(&constant, &heaviside(), &reference, &params, None).map_err(|e| e.to_string())?;
    let ratio = res_c.ratios[0];
    let (lo, hi) = tol::CLT_RATIO;
    check(
        decreasing && (lo..=hi).contains(&ratio),
        format!(
            "general mean errors {:.3e} > {:.3e} > {:.3e}; constant n=100/1600 ratio {ratio:.2} in [{lo}, {hi}]",
            res.means[0], res.means[1], res.means[2]
        ),
    )
}

fn martingale() -> Outcome {
    let cs = general();
    let params = MartingaleParams { n: 512, replicas: 400, s: 0.5, t: 1.0, steps: 200, seed: 77 };
    let res = martingale_statistic(&cs, &heaviside(), &default_martingale_suite(), &params, None).map_err(|e| e.to_string())?;
    let allowance = tol::MARTINGALE_C / params.n as f64;
    let worst = res
        .entries
        .iter()
        .map(|e| e.estimate.abs() / (tol::MARTINGALE_Z * e.stderr + allowance))
        .fold(0.0, f64::max);
    check(
        worst <= 1.0,
        format!("{} triples, worst |estimate| / (3 stderr + {:.0e}) = {worst:.3}", res.entries.len(), allowance),
    )
}

fn stability() -> Outcome {
    let cs = general();
    let cfg = SolverConfig::covering(0.0, 0.0, &cs, 1.0, 256);
    let u0 = cfg.initial_grid(&heaviside()).map_err(|e| e.to_string())?;
    let base = sample_path(5, 0, 1.0, 200).unwrap();
    let eps = [0.0, 0.04, 0.16, 0.64];
    let r = stability_experiment(&cs, &u0, &base, &eps, &cfg, &[0.25, 0.5, 0.75, 1.0], None).map_err(|e| e.to_string())?;
    let nondecreasing = r.distances.windows(2).all(|w| w[0] <= w[1]);
    check(
        r.distances[0] == 0.0 && nondecreasing && r.spread <= tol::STABILITY_SPREAD,
        format!("D = {:?}, implied C spread {:.3} (<= {})", r.distances, r.spread, tol::STABILITY_SPREAD),
    )
}

struct EntropyRun {
    dx: f64,
    chain: f64,
    coarea: f64,
    entropy: f64,
    mass: f64,
    bookkeeping: f64,
}

fn entropy_run(cs: &CoefficientSet, cells: usize) -> Result<EntropyRun, String> {
    let path = sample_path(7, 0, 1.0, 1000).unwrap();
    let cfg = SolverConfig::covering(0.0, 0.0, cs, 1.0, cells);
    let u0 = cfg.initial_grid(&heaviside()).map_err(|e| e.to_string())?;
    let sol = solve(&u0, cs, &path, &cfg, &path.t_grid[1..]).map_err(|e| e.to_string())?;
    let tf = BumpTestFunction::new(0.5, 0.0, 0.3, 1.0).map_err(|e| e.to_string())?;
    let (u, w) = (sol.final_snapshot(), path.values[1000]);
    let measure = dissipation_measure(&sol, cs, 20).map_err(|e| e.to_string())?;
    Ok(EntropyRun {
        dx: cfg.dx(),
        chain: chain_rule_residual(u, cs, &tf, 1.0, w),
        coarea: coarea_check(u, cs, |x, xi| eval_rho(&tf, cs, xi, 1.0, x, w).value),
        entropy: entropy_identity_residual(&sol, cs, &tf, 0.5, 1.0).map_err(|e| e.to_string())?,
        mass: measure.total_mass(),
        bookkeeping: (measure.total_mass() - dissipation_l2(&sol, cs)).abs(),
    })
}

fn entropy_structure() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let runs = [("heat", heat()), ("constant", CoefficientSet::constant(1.0, 1.0, 0.5)), ("general", general())];
    for (name, cs) in &runs {
        let rs: Vec<EntropyRun> = [128, 256, 512].iter().map(|&j| entropy_run(cs, j)).collect::<Result<_, _>>()?;
        let dx: Vec<f64> = rs.iter().map(|r| r.dx).collect();
        let chain_slope = slope(&dx, &rs.iter().map(|r| r.chain).collect::<Vec<_>>());
        ok &= chain_slope >= tol::MIN_RESIDUAL_SLOPE;
        let mut line = format!("{name}: chain slope {chain_slope:.2}");
        // With γ ≡ 0 both sides of the co-area identity vanish.
        if rs.iter().any(|r| r.coarea > 0.0) {
            let s = slope(&dx, &rs.iter().map(|r| r.coarea).collect::<Vec<_>>());
            ok &= s >= tol::MIN_RESIDUAL_SLOPE;
            line += &format!(", coarea slope {s:.2}");
        }
        let ent: Vec<f64> = rs.iter().map(|r| r.entropy.abs()).collect();
        ok &= ent[2] < ent[0];
        line += &format!(", |entropy residual| {:.1e} -> {:.1e}", ent[0], ent[2]);
        let book = rs.iter().map(|r| r.bookkeeping).fold(0.0, f64::max);
        ok &= book <= tol::DISSIPATION_BOOKKEEPING;
        line += &format!(", bookkeeping {book:.1e}");
        if *name == "heat" {
            let target = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
            let rel = (rs[1].mass - target).abs() / target;
            ok &= rel <= tol::HEAT_DISSIPATION_REL;
            line += &format!(", J=256 mass {:.4} vs {target:.4} ({:.1}%)", rs[1].mass, 100.0 * rel);
        }
        lines.push(line);
    }
    check(ok, lines.join("; "))
}

fn exactness() -> Outcome {
    let rng = CounterRng::new(2026, 0, Domain::Sampler);
    let mut c = 0u64;
    let mut next = || {
        c += 1;
        rng.uniform(c)
    };

    let mut worst_w1 = 0.0f64;
    for case in 0..1000 {
        let n = 1 + case % 7;
        let x: Vec<f64> = (0..n).map(|_| 10.0 * next() - 5.0).collect();
        let y: Vec<f64> = (0..n).map(|_| 10.0 * next() - 5.0).collect();
        let (fx, fy) = (empirical_cdf(&x).unwrap(), empirical_cdf(&y).unwrap());
        let oracle = assignment_oracle(&x, &y);
        worst_w1 = worst_w1.max((w1(&fx, &fy) - oracle).abs()).max((w1_sorted_samples(&fx, &fy) - oracle).abs());
    }

    let mut rank_ok = true;
    for _ in 0..200 {
        let n = 1 + (next() * 50.0) as usize;
        let xs: Vec<f64> = (0..n).map(|_| (next() * 8.0).floor() / 4.0).collect();
        let state = ParticleState::new(0.0, xs.clone()).unwrap();
        let oracle: Vec<f64> = xs.iter().map(|x| xs.iter().filter(|y| *y <= x).count() as f64 / n as f64).collect();
        rank_ok &= rank_fractions(&state) == oracle;
    }

    let sets = [
        CoefficientSet::from_sources("a - 0.5", "1", "0.5*(1 + a)", 32).unwrap(),
        CoefficientSet::constant(1.0, 1.0, 0.5),
        CoefficientSet::from_sources("sin(3*a)", "1 + a^2", "2 - a", 32).unwrap(),
    ];
    let mut step_violations = 0usize;
    for k in 0..10_000 {
        let cs = &sets[k % sets.len()];
        let cells = 9 + (next() * 40.0) as usize;
        let dx = 6.0 / cells as f64;
        let z = 4.0 * next() - 2.0;
        let mut dt = 0.02 * next() + 1e-4;
        while step_cfl_number(cs, dx, dt, z * dt.sqrt()) > 1.0 {
            dt *= 0.5;
        }
        let mut acc = 0.0f64;
        let values: Vec<f64> = (0..cells)
            .map(|_| {
                acc = (acc + next() * 3.0 / cells as f64).min(1.0);
                acc
            })
            .collect();
        let u = GridFunction::new(-3.0, 3.0, values).unwrap();
        let out = spde_step(&u, cs, dt, z * dt.sqrt()).map_err(|e| e.to_string())?;
        let in_range = out.values.iter().all(|v| (-1e-14..=1.0 + 1e-14).contains(v));
        let monotone = out.values.windows(2).all(|w| w[0] <= w[1] + 1e-14);
        step_violations += usize::from(!(in_range && monotone));
    }

    let mut worst_g = f64::NEG_INFINITY;
    for _ in 0..200 {
        let q = |lo: f64, hi: f64, n: &mut dyn FnMut() -> f64| lo + (hi - lo) * n();
        let b = format!("{} + {}*a + {}*a^2", q(-2.0, 2.0, &mut next), q(-2.0, 2.0, &mut next), q(-2.0, 2.0, &mut next));
        let s = format!("{} + {}*a^2", q(0.1, 2.0, &mut next), q(0.0, 1.0, &mut next));
        let g = format!("{} + {}*a + {}*a^3", q(-1.0, 2.0, &mut next), q(-1.0, 1.0, &mut next), q(-1.0, 1.0, &mut next));
        let cs = CoefficientSet::from_sources(&b, &s, &g, 32).unwrap();
        for i in 0..=1000 {
            let r = i as f64 / 1000.0;
            let (gv, gam) = (cs.transform(Transform::G, r), cs.transform(Transform::Gamma, r));
            worst_g = worst_g.max(gv * gv - 2.0 * r * gam);
        }
    }

    check(
        worst_w1 <= tol::W1_ORACLE && rank_ok && step_violations == 0 && worst_g <= tol::G_GAMMA_SLACK,
        format!(
            "w1 vs assignment max gap {worst_w1:.1e}, ranks {}, spde_step violations {step_violations}/10000, max G^2 - 2rΓ {worst_g:.1e}",
            if rank_ok { "exact" } else { "MISMATCH" }
        ),
    )
}

fn assignment_oracle(x: &[f64], y: &[f64]) -> f64 {
    fn rec(x: &[f64], y: &[f64], used: &mut [bool], i: usize, acc: f64, best: &mut f64) {
        if i == x.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                rec(x, y, used, i + 1, acc + (x[i] - y[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(x, y, &mut vec![false; y.len()], 0, 0.0, &mut best);
    best / x.len() as f64
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn determinism() -> Outcome {
    let runs = [
        ("simulate", "simulate.cfg", "particles.csv"),
        ("solve", "heat.cfg", "snapshots.csv"),
        ("converge", "conv.cfg", "convergence.csv"),
        ("martingale", "martingale.cfg", "martingale.csv"),
        ("stability", "stability.cfg", "stability.csv"),
        ("diagnose", "diagnose.cfg", "diagnostics.csv"),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut checked = 0;
    for (cmd, cfg, csv) in runs {
        let mut outputs = Vec::new();
        for (k, threads) in ["1", "1", "8", "8"].into_iter().enumerate() {
            let out = tmp.path().join(format!("{cmd}-{k}"));
            let config = configs_dir().join(cfg);
            let argv = ["rankflow", cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads];
            let code = rankflow::cli::run(argv);
            if code != 0 {
                return Err(format!("{cmd} exited with {code}"));
            }
            outputs.push(std::fs::read(out.join(csv)).map_err(|e| e.to_string())?);
        }
        if outputs.iter().any(|o| *o != outputs[0]) {
            return Err(format!("{cmd}: {csv} differs between reruns or thread caps"));
        }
        checked += 1;
    }
    Ok(format!("{checked} experiments byte-identical over 2 reruns at thread caps 1 and 8"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 8] = [
        (1, "constant-coefficient oracle", constant_oracle, Duration::from_secs(10)),
        (2, "heat-equation oracle", heat_oracle, Duration::from_secs(10)),
        (3, "coupled hydrodynamic convergence", hydrodynamic, Duration::from_secs(300)),
        (4, "martingale-problem statistic", martingale, Duration::from_secs(300)),
        (5, "stability in the driving path", stability, Duration::from_secs(120)),
        (6, "entropy structure", entropy_structure, Duration::from_secs(120)),
        (7, "exactness suite", exactness, Duration::from_secs(60)),
        (8, "determinism", determinism, Duration::from_secs(180)),
    ];
    let mut failures = 0;
    for (id, name, f, budget) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (verdict, detail) = match outcome {
            Ok(d) if elapsed <= budget => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; took {elapsed:.1?}, budget {budget:?}")),
            Err(d) => ("FAIL", d),
        };
        if verdict == "FAIL" {
            failures += 1;
        }
        println!("criterion {id} {verdict} [{name}] {detail} ({elapsed:.2?})");
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
