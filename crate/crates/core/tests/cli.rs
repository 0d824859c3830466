use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn rankflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankflow")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, body).unwrap();
    p
}

const HEAT: &str = "experiment = solve\nseed = 3\nb = 0\nsigma = \"sqrt(2)\"\ngamma = 0\nallow_degenerate = true\nhorizon = 0.5\nsteps = 20\nsnapshot_times = [0.5]\ncells = 64\n";

#[test]
fn solve_writes_snapshots_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = configs().join("heat.cfg");
    let o = rankflow(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("snapshots.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("t,x,u"));
    assert_eq!(csv.lines().count(), 1 + 3 * 256);
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 11"));
    assert!(manifest.contains("config_sha256 = "));
}

#[test]
fn missing_seed_is_a_config_error_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &HEAT.replace("seed = 3\n", ""));
    let out = tmp.path().join("out");
    let o = rankflow(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    assert!(!out.exists());

    // The command-line seed fills the gap.
    let o = rankflow(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn unknown_key_reports_its_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{HEAT}temperature = 4\n"));
    let o = rankflow(&["solve", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 11") && err.contains("temperature"), "{err}");
}

#[test]
fn bad_usage_and_unreadable_config_exit_two() {
    assert_eq!(rankflow(&["solve"]).status.code(), Some(2));
    assert_eq!(rankflow(&["solve", "--config", "/nonexistent/x.cfg"]).status.code(), Some(2));
    assert_eq!(rankflow(&["--help"]).status.code(), Some(0));
}

#[test]
fn unwritable_output_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), HEAT);
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "").unwrap();
    let o = rankflow(&["solve", "--config", cfg.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn every_output_has_a_header_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cases = [
        ("simulate", "simulate.cfg", "particles.csv"),
        ("stability", "stability.cfg", "stability.csv"),
    ];
    for (cmd, cfg, csv) in cases {
        let out = tmp.path().join(cmd);
        let o = rankflow(&[cmd, "--config", configs().join(cfg).to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        let first = std::fs::read_to_string(out.join(csv)).unwrap().lines().next().unwrap().to_string();
        assert!(first.chars().next().unwrap().is_ascii_alphabetic(), "{cmd}: {first}");
    }
}

#[test]
fn converge_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "experiment = converge\nseed = 9\nb = \"a - 0.5\"\nsigma = 1\ngamma = \"0.5*(1 + a)\"\nhorizon = 0.5\nsteps = 20\nsnapshot_times = [0.5]\ncells = 128\nn_list = [32, 128]\nreplicas = 10\n",
    );
    let read = |name: &str, threads: &str| {
        let out = tmp.path().join(name);
        let o = rankflow(&["converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        (std::fs::read(out.join("convergence.csv")).unwrap(), std::fs::read(out.join("manifest.txt")).unwrap())
    };
    let a = read("a", "1");
    assert_eq!(a, read("b", "1"));
    assert_eq!(a, read("c", "4"));
}
