//! Command-line front end: read a run config, dispatch, write CSVs and a
//! manifest.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coefficients::CoefficientSet;
use crate::config::{ConfigError, ConfigFile};
use crate::diagnostics::{
    chain_rule_residual, coarea_check, dissipation_l2, dissipation_measure, entropy_identity_residual, eval_rho,
    weak_form_residual, Bump, BumpTestFunction,
};
use crate::experiments::{
    convergence_study, default_martingale_suite, martingale_statistic, run_indexed, stability_experiment,
    ConvergenceParams, ExperimentReport, MartingaleParams, Reference,
};
use crate::measures::InitialDistribution;
use crate::particles::{grid_index, initial_positions, simulate};
use crate::randomness::{sample_path, stream_id, NoiseBundle, StreamRole};
use crate::spde::{solve, FrameSpeed, Scheme, SolverConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    ReadConfig { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Run(#[from] crate::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ReadConfig { .. } | CliError::Config(_) => 2,
            CliError::Write { .. } | CliError::Run(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rankflow", version, about = "Rank-based particle systems with common noise and their limiting SPDE")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
enum Command {
    /// Simulate the particle system and write particle positions.
    Simulate(Common),
    /// Solve the SPDE along one sampled common path.
    Solve(Common),
    /// Coupled particle/SPDE convergence study.
    Converge(Common),
    /// Martingale-problem statistic over the built-in triple suite.
    Martingale(Common),
    /// Stability of the solution in the driving path.
    Stability(Common),
    /// Kinetic and weak-form diagnostics over a resolution sweep.
    Diagnose(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Simulate,
    Solve,
    Converge,
    Martingale,
    Stability,
    Diagnose,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Solve => "solve",
            Kind::Converge => "converge",
            Kind::Martingale => "martingale",
            Kind::Stability => "stability",
            Kind::Diagnose => "diagnose",
        }
    }

    fn output(self) -> &'static str {
        match self {
            Kind::Simulate => "particles.csv",
            Kind::Solve => "snapshots.csv",
            Kind::Converge => "convergence.csv",
            Kind::Martingale => "martingale.csv",
            Kind::Stability => "stability.csv",
            Kind::Diagnose => "diagnostics.csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Args)]
struct Common {
    /// Run configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker cap for replicated experiments; results do not depend on it.
    #[arg(long, value_name = "N", value_parser = positive)]
    threads: Option<usize>,
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("`{s}` is not a positive integer")),
    }
}

impl Command {
    fn split(&self) -> (Kind, &Common) {
        match self {
            Command::Simulate(c) => (Kind::Simulate, c),
            Command::Solve(c) => (Kind::Solve, c),
            Command::Converge(c) => (Kind::Converge, c),
            Command::Martingale(c) => (Kind::Martingale, c),
            Command::Stability(c) => (Kind::Stability, c),
            Command::Diagnose(c) => (Kind::Diagnose, c),
        }
    }
}

const KEYS: &[&str] = &[
    "experiment", "seed", "b", "sigma", "gamma", "resolution", "allow_degenerate", "init", "horizon", "steps",
    "snapshot_times", "cells", "x_min", "x_max", "cfl_target", "max_substeps", "scheme", "frame", "n", "n_list",
    "replicas", "reference", "reference_cells", "s", "t", "epsilons", "eta", "y", "r_xi", "r_x", "resolutions", "bins",
];

/// Everything a run needs, validated before any computation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub kind: Kind,
    pub seed: u64,
    pub sources: [String; 3],
    pub cs: CoefficientSet,
    pub init_spec: String,
    pub init: InitialDistribution,
    pub horizon: f64,
    pub steps: usize,
    pub snapshot_times: Vec<f64>,
    pub solver: SolverConfig,
    pub n: usize,
    pub n_list: Vec<usize>,
    pub replicas: usize,
    pub reference: Reference,
    pub s: f64,
    pub t: f64,
    pub epsilons: Vec<f64>,
    pub test_function: BumpTestFunction,
    pub resolutions: Vec<usize>,
    pub bins: usize,
}

impl RunConfig {
    pub fn from_text(kind: Kind, text: &str, seed_override: Option<u64>) -> Result<Self, ConfigError> {
        let c = ConfigFile::parse(text)?;
        c.reject_unknown(KEYS)?;
        if let Some(e) = c.string("experiment")? {
            if e != kind.name() {
                return Err(c.invalid("experiment", format!("config is for `{e}`, not `{}`", kind.name())));
            }
        }
        let seed = match seed_override {
            Some(s) => s,
            None => c.seed("seed")?.ok_or_else(|| ConfigError::Missing("seed".into()))?,
        };

        let expr = |k: &str| c.expression(k)?.ok_or_else(|| ConfigError::Missing(k.into()));
        let sources = [expr("b")?, expr("sigma")?, expr("gamma")?];
        let resolution = c.count("resolution")?.unwrap_or(64);
        let cs = CoefficientSet::from_sources(&sources[0], &sources[1], &sources[2], resolution)
            .map_err(|e| c.invalid(coefficient_key(&e, &c), e.to_string()))?;
        let allow_degenerate = c.flag("allow_degenerate")?.unwrap_or(false);
        cs.validate(allow_degenerate).map_err(|e| {
            let key = match e {
                crate::CoefficientError::NondegeneracyViolated { .. } => "sigma",
                crate::CoefficientError::PositivityViolated { .. } => "gamma",
                _ => "resolution",
            };
            c.invalid(key, format!("{e} (set allow_degenerate = true to accept)"))
        })?;

        let init_spec = c.string("init")?.unwrap_or("point(0)").to_string();
        let init: InitialDistribution = init_spec.parse().map_err(|e: crate::MeasureError| c.invalid("init", e.to_string()))?;

        let horizon = c.require_number("horizon")?;
        if !(horizon > 0.0) {
            return Err(c.invalid("horizon", "must be positive"));
        }
        let steps = c.require_count("steps")?;
        if steps == 0 {
            return Err(c.invalid("steps", "must be positive"));
        }
        let snapshot_times = c.list("snapshot_times")?.unwrap_or_else(|| vec![horizon]);
        if snapshot_times.is_empty() || snapshot_times.iter().any(|t| !(*t > 0.0 && *t <= horizon)) {
            return Err(c.invalid("snapshot_times", format!("times must lie in (0, {horizon}]")));
        }
        if snapshot_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(c.invalid("snapshot_times", "times must increase"));
        }
        let on_grid = matches!(kind, Kind::Simulate | Kind::Converge);
        if on_grid {
            if let Some(t) = snapshot_times.iter().find(|t| grid_index(**t, horizon, steps).is_none()) {
                return Err(c.invalid("snapshot_times", format!("{t} is not a multiple of horizon/steps")));
            }
        }

        let cells = c.count("cells")?.unwrap_or(256);
        let (lo, hi) = init.effective_support();
        let mut solver = SolverConfig::covering(lo, hi, &cs, horizon, cells);
        if let Some(x) = c.number("x_min")? {
            solver.x_min = x;
        }
        if let Some(x) = c.number("x_max")? {
            solver.x_max = x;
        }
        if let Some(x) = c.number("cfl_target")? {
            solver.cfl_target = x;
        }
        if let Some(m) = c.count("max_substeps")? {
            solver.max_substeps = m;
        }
        solver.scheme = match c.string("scheme")?.unwrap_or("split") {
            "split" => Scheme::Split,
            "ito_unsplit" => Scheme::ItoUnsplit,
            other => return Err(c.invalid("scheme", format!("`{other}` is not split or ito_unsplit"))),
        };
        solver.frame = match (c.string("frame"), c.number("frame")) {
            (_, Ok(Some(g))) => FrameSpeed::Fixed(g),
            (Ok(Some("auto")), _) | (Ok(None), _) => FrameSpeed::Auto,
            _ => return Err(c.invalid("frame", "expected `auto` or a number")),
        };
        let solver_key = |e: crate::SpdeError| {
            let key = ["x_min", "x_max", "cfl_target", "max_substeps", "cells"].into_iter().find(|k| c.contains(k)).unwrap_or("cells");
            c.invalid(key, e.to_string())
        };
        solver.validate().map_err(solver_key)?;
        if matches!(kind, Kind::Solve | Kind::Converge | Kind::Stability) {
            solver.check_margin(lo, hi, &cs, horizon).map_err(solver_key)?;
        }

        let need = |k: &str| -> Result<usize, ConfigError> {
            let v = c.require_count(k)?;
            if v == 0 {
                return Err(c.invalid(k, "must be positive"));
            }
            Ok(v)
        };
        let n = if matches!(kind, Kind::Simulate | Kind::Martingale) { need("n")? } else { c.count("n")?.unwrap_or(0) };
        let replicas = match kind {
            Kind::Converge => {
                let r = need("replicas")?;
                if r < crate::experiments::MIN_CONVERGENCE_REPLICAS {
                    return Err(c.invalid("replicas", format!("need at least {}", crate::experiments::MIN_CONVERGENCE_REPLICAS)));
                }
                r
            }
            Kind::Martingale => {
                let r = need("replicas")?;
                if r < 2 {
                    return Err(c.invalid("replicas", "need at least 2"));
                }
                r
            }
            _ => c.count("replicas")?.unwrap_or(0),
        };
        let n_list = if kind == Kind::Converge {
            let v = c.count_list("n_list")?.ok_or_else(|| ConfigError::Missing("n_list".into()))?;
            if v.is_empty() || v[0] == 0 || v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(c.invalid("n_list", "must be positive and strictly increasing"));
            }
            v
        } else {
            Vec::new()
        };
        let reference = match c.string("reference")?.unwrap_or("solver") {
            "solver" => Reference::Solver(solver.clone()),
            "analytic" => {
                let samples = cs.samples();
                let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]).then_some(v[0]);
                match (constant(&samples.b), constant(&samples.sigma), constant(&samples.gamma)) {
                    (Some(b), Some(s), Some(g)) => {
                        Reference::Analytic { coefficients: (b, s, g), cells: c.count("reference_cells")?.unwrap_or(8192) }
                    }
                    _ => return Err(c.invalid("reference", "the analytic reference needs constant coefficients")),
                }
            }
            other => return Err(c.invalid("reference", format!("`{other}` is not solver or analytic"))),
        };

        let dt = horizon / steps as f64;
        let default_s = (steps / 2) as f64 * dt;
        let s = c.number("s")?.unwrap_or(if kind == Kind::Diagnose { default_s } else { 0.5 * horizon });
        let t = c.number("t")?.unwrap_or(horizon);
        if matches!(kind, Kind::Martingale | Kind::Diagnose) {
            if !(s >= 0.0 && s <= t && t <= horizon) {
                return Err(c.invalid("s", format!("need 0 <= s <= t <= horizon, got s = {s}, t = {t}")));
            }
            if grid_index(s, horizon, steps).is_none() {
                return Err(c.invalid("s", format!("{s} is not a multiple of horizon/steps")));
            }
            if grid_index(t, horizon, steps).is_none() {
                return Err(c.invalid("t", format!("{t} is not a multiple of horizon/steps")));
            }
            if kind == Kind::Martingale && t != horizon {
                return Err(c.invalid("t", "the martingale window ends at the horizon"));
            }
            if kind == Kind::Diagnose && s >= t {
                return Err(c.invalid("s", "diagnostics need s < t"));
            }
        }

        let epsilons = if kind == Kind::Stability {
            let e = c.list("epsilons")?.ok_or_else(|| ConfigError::Missing("epsilons".into()))?;
            if e.is_empty() || e.iter().any(|x| !(*x >= 0.0)) || e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(c.invalid("epsilons", "must be nonnegative and strictly increasing"));
            }
            e
        } else {
            Vec::new()
        };

        let test_function = BumpTestFunction::new(
            c.number("eta")?.unwrap_or(0.5),
            c.number("y")?.unwrap_or(0.0),
            c.number("r_xi")?.unwrap_or(0.3),
            c.number("r_x")?.unwrap_or(1.0),
        )
        .map_err(|e| c.invalid(if c.contains("r_xi") { "r_xi" } else { "r_x" }, e.to_string()))?;
        let resolutions = c.count_list("resolutions")?.unwrap_or_else(|| vec![cells]);
        if kind == Kind::Diagnose {
            for &j in &resolutions {
                let mut cfg = solver.clone();
                cfg.cells = j;
                cfg.validate().map_err(|e| c.invalid("resolutions", e.to_string()))?;
            }
        }
        let bins = c.count("bins")?.unwrap_or(20);
        if bins == 0 {
            return Err(c.invalid("bins", "must be positive"));
        }

        Ok(Self {
            kind,
            seed,
            sources,
            cs,
            init_spec,
            init,
            horizon,
            steps,
            snapshot_times,
            solver,
            n,
            n_list,
            replicas,
            reference,
            s,
            t,
            epsilons,
            test_function,
            resolutions,
            bins,
        })
    }
}

fn coefficient_key(e: &crate::Error, c: &ConfigFile) -> &'static str {
    match e {
        crate::Error::Coefficient(crate::CoefficientError::Resolution(_)) => "resolution",
        crate::Error::Coefficient(crate::CoefficientError::NotEvaluable { name, .. }) => match *name {
            "b" | "B" => "b",
            "sigma" | "Sigma" | "S" => "sigma",
            _ => "gamma",
        },
        // Parse errors do not say which expression failed, so test each.
        _ => ["b", "sigma", "gamma"]
            .into_iter()
            .find(|k| c.expression(k).ok().flatten().is_some_and(|s| s.parse::<crate::CoefficientExpr>().is_err()))
            .unwrap_or("b"),
    }
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A finished run: file name, CSV body and report.
struct Output {
    csv: String,
    summary: String,
    report: Option<ExperimentReport>,
}

fn run_simulate(rc: &RunConfig) -> Result<Output, crate::Error> {
    let noise = NoiseBundle::generate(rc.seed, 0, rc.n, rc.horizon, rc.steps)?;
    let x0 = initial_positions(&rc.init, rc.n, rc.seed, 0);
    let traj = simulate(&x0, &rc.cs, rc.horizon, rc.steps, &noise, &rc.snapshot_times)?;
    let mut csv = String::from("t,particle_index,x\n");
    for (t, st) in traj.times.iter().zip(&traj.states) {
        for (i, x) in st.positions().iter().enumerate() {
            let _ = writeln!(csv, "{},{i},{}", num(*t), num(*x));
        }
    }
    let fin = traj.final_state().sorted_positions();
    let summary = format!("{} particles, {} snapshots, median at T {:.6}", rc.n, traj.times.len(), fin[fin.len() / 2]);
    Ok(Output { csv, summary, report: None })
}

fn common_path(rc: &RunConfig) -> Result<crate::BrownianPath, crate::Error> {
    Ok(sample_path(rc.seed, stream_id(0, StreamRole::Common), rc.horizon, rc.steps)?)
}

fn run_solve(rc: &RunConfig) -> Result<Output, crate::Error> {
    let path = common_path(rc)?;
    let u0 = rc.solver.initial_grid(&rc.init)?;
    let sol = solve(&u0, &rc.cs, &path, &rc.solver, &rc.snapshot_times)?;
    let mut csv = String::from("t,x,u\n");
    for (t, u) in sol.times.iter().zip(&sol.snapshots) {
        for (x, v) in u.centers().zip(&u.values) {
            let _ = writeln!(csv, "{},{},{}", num(*t), num(x), num(*v));
        }
    }
    let summary = format!("{} cells, {} snapshots, {} transport steps", rc.solver.cells, sol.times.len(), sol.transport_steps);
    Ok(Output { csv, summary, report: None })
}

fn run_converge(rc: &RunConfig, threads: Option<usize>) -> Result<Output, crate::Error> {
    let params = ConvergenceParams {
        n_list: rc.n_list.clone(),
        replicas: rc.replicas,
        horizon: rc.horizon,
        steps: rc.steps,
        snapshot_times: rc.snapshot_times.clone(),
        seed: rc.seed,
    };
    let res = convergence_study(&rc.cs, &rc.init, &rc.reference, &params, threads)?;
    let mut csv = String::from("n,replica,error\n");
    for (n, errs) in res.n_list.iter().zip(&res.errors) {
        for (r, e) in errs.iter().enumerate() {
            let _ = writeln!(csv, "{n},{r},{}", num(*e));
        }
    }
    let means: Vec<String> = res.means.iter().map(|m| format!("{m:.4e}")).collect();
    let summary = format!("mean errors [{}] for n = {:?}", means.join(", "), res.n_list);
    Ok(Output { csv, summary, report: Some(res.report()) })
}

fn run_martingale(rc: &RunConfig, threads: Option<usize>) -> Result<Output, crate::Error> {
    let params = MartingaleParams { n: rc.n, replicas: rc.replicas, s: rc.s, t: rc.t, steps: rc.steps, seed: rc.seed };
    let res = martingale_statistic(&rc.cs, &rc.init, &default_martingale_suite(), &params, threads)?;
    let mut csv = String::from("f_id,phi_id,psi_id,estimate,stderr,z_score\n");
    for e in &res.entries {
        let _ = writeln!(csv, "\"{}\",\"{}\",\"{}\",{},{},{}", e.f_id, e.phi_id, e.psi_id, num(e.estimate), num(e.stderr), num(e.z_score));
    }
    let zmax = res.entries.iter().map(|e| e.z_score).fold(0.0, f64::max);
    let summary = format!("{} triples, max |estimate|/stderr = {zmax:.3}", res.entries.len());
    Ok(Output { csv, summary, report: Some(res.report()) })
}

fn run_stability(rc: &RunConfig, threads: Option<usize>) -> Result<Output, crate::Error> {
    let path = common_path(rc)?;
    let u0 = rc.solver.initial_grid(&rc.init)?;
    let res = stability_experiment(&rc.cs, &u0, &path, &rc.epsilons, &rc.solver, &rc.snapshot_times, threads)?;
    let mut csv = String::from("epsilon,D,implied_C\n");
    for ((e, d), c) in res.epsilons.iter().zip(&res.distances).zip(&res.implied_c) {
        let _ = writeln!(csv, "{},{},{}", num(*e), num(*d), num(*c));
    }
    let summary = format!("implied C spread {:.4}", res.spread);
    Ok(Output { csv, summary, report: Some(res.report()) })
}

fn run_diagnose(rc: &RunConfig, threads: Option<usize>) -> Result<Output, crate::Error> {
    let path = common_path(rc)?;
    let nodes: Vec<f64> = path.t_grid[1..].to_vec();
    let tf = rc.test_function;
    let weak_bump = Bump::new(tf.y, tf.r_x);
    let rows = run_indexed(rc.resolutions.len(), threads, |i| -> Result<Vec<(&'static str, f64)>, crate::Error> {
        let mut cfg = rc.solver.clone();
        cfg.cells = rc.resolutions[i];
        let u0 = cfg.initial_grid(&rc.init)?;
        let sol = solve(&u0, &rc.cs, &path, &cfg, &nodes)?;
        let k = sol.times.iter().position(|&x| x == rc.t).expect("t is a path node");
        let (u, w) = (&sol.snapshots[k], sol.path.value_at(rc.t).expect("t is a path node"));
        let measure = dissipation_measure(&sol, &rc.cs, rc.bins)?;
        let chain = chain_rule_residual(u, &rc.cs, &tf, rc.t, w);
        let coarea = coarea_check(u, &rc.cs, |x, xi| eval_rho(&tf, &rc.cs, xi, rc.t, x, w).value);
        Ok(vec![
            ("chain_rule", chain),
            ("coarea", coarea),
            ("entropy_identity", entropy_identity_residual(&sol, &rc.cs, &tf, rc.s, rc.t)?),
            ("weak_form", weak_form_residual(&sol, &rc.cs, &weak_bump, rc.s, rc.t)?),
            ("dissipation_bookkeeping", (measure.total_mass() - dissipation_l2(&sol, &rc.cs)).abs()),
            ("dissipation_mass", measure.total_mass()),
        ])
    })?;
    let mut csv = String::from("diagnostic,eta,y,s,t,residual,resolution\n");
    for (j, row) in rc.resolutions.iter().zip(&rows) {
        for (name, value) in row {
            let _ = writeln!(csv, "{name},{},{},{},{},{},{j}", num(tf.eta), num(tf.y), num(rc.s), num(rc.t), num(*value));
        }
    }
    let last = rows.last().map_or(f64::NAN, |r| r[0].1);
    let summary = format!("{} resolutions, chain-rule residual {last:.3e} at J = {}", rc.resolutions.len(), rc.resolutions.last().copied().unwrap_or(0));
    Ok(Output { csv, summary, report: None })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn sha256(data: &[u8]) -> String {
    hex(&Sha256::digest(data))
}

fn manifest(rc: &RunConfig, config_text: &str, file: &str, out: &Output) -> String {
    let mut m = String::new();
    let _ = writeln!(m, "command = {}", rc.kind.name());
    let _ = writeln!(m, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "config_sha256 = {}", sha256(config_text.as_bytes()));
    let _ = writeln!(m, "seed = {}", rc.seed);
    let _ = writeln!(m, "coefficients = b: {} | sigma: {} | gamma: {}", rc.sources[0], rc.sources[1], rc.sources[2]);
    let _ = writeln!(m, "init = {}", rc.init_spec);
    let _ = writeln!(m, "{file}_sha256 = {}", sha256(out.csv.as_bytes()));
    match &out.report {
        Some(r) => {
            let _ = writeln!(m, "streams = {}", r.streams);
            for (k, v) in &r.parameters {
                let _ = writeln!(m, "param.{k} = {v}");
            }
            for row in &r.rows {
                let verdict = match row.passed {
                    Some(true) => " pass",
                    Some(false) => " fail",
                    None => "",
                };
                let _ = writeln!(m, "row = {} | {} | {}{verdict}", row.label, num(row.statistic), num(row.stderr));
            }
        }
        None => {
            let _ = writeln!(m, "streams = replica 0: common=0, initial=1, particle i=2+i");
        }
    }
    let _ = writeln!(m, "summary = {}", out.summary);
    m
}

fn execute(kind: Kind, args: &Common) -> Result<String, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| CliError::ReadConfig { path: args.config.clone(), source })?;
    let rc = RunConfig::from_text(kind, &text, args.seed)?;
    let out = match kind {
        Kind::Simulate => run_simulate(&rc),
        Kind::Solve => run_solve(&rc),
        Kind::Converge => run_converge(&rc, args.threads),
        Kind::Martingale => run_martingale(&rc, args.threads),
        Kind::Stability => run_stability(&rc, args.threads),
        Kind::Diagnose => run_diagnose(&rc, args.threads),
    }?;
    let file = kind.output();
    let write = |path: &Path, body: &str| std::fs::write(path, body).map_err(|source| CliError::Write { path: path.to_path_buf(), source });
    std::fs::create_dir_all(&args.out).map_err(|source| CliError::Write { path: args.out.clone(), source })?;
    write(&args.out.join(file), &out.csv)?;
    write(&args.out.join("manifest.txt"), &manifest(&rc, &text, file, &out))?;
    Ok(format!("{}: wrote {} ({})", kind.name(), args.out.join(file).display(), out.summary))
}

/// Runs the command line `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (kind, args) = cli.command.split();
    match execute(kind, args) {
        Ok(line) => {
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
