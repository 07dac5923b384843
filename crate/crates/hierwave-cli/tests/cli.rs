//! End-to-end CLI contract tests: exit codes, error messages, artifact
//! formats, determinism and the oracle-backed simulate probe.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hierwave")
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|c| c.to_string()).collect())
        .collect()
}

#[test]
fn simulate_probe_matches_dalembert() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "sim.cfg",
        "k = 0\nT = 1.0\ngrid.ny = 100\nsimulate.w1 = sine:1\n",
    );
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rows = read_csv(&out_dir.join("field.csv"));
    // Probe the node nearest (y, t) = (0.25, 0.5) against the image series.
    let header = &rows[0];
    let j = (1..header.len())
        .min_by_key(|&j| {
            let y: f64 = header[j].trim_start_matches('y').parse().unwrap();
            ((y - 0.25).abs() * 1e9) as i64
        })
        .unwrap();
    let best_row = (1..rows.len())
        .min_by_key(|&r| {
            let t: f64 = rows[r][0].parse().unwrap();
            ((t - 0.5).abs() * 1e9) as i64
        })
        .unwrap();
    let t: f64 = rows[best_row][0].parse().unwrap();
    let y: f64 = header[j].trim_start_matches('y').parse().unwrap();
    let got: f64 = rows[best_row][j].parse().unwrap();
    let sine = |s: f64| (std::f64::consts::PI * s).sin();
    let expected = hierwave::oracle::dalembert_reference(&sine, y, t, 1.0).unwrap();
    assert!(
        (got - expected).abs() <= 5e-3,
        "probe at (y={y}, t={t}): {got} vs oracle {expected}"
    );
}

#[test]
fn unknown_key_is_named_and_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "bad.cfg", "k=0.2\nT=1\ngrid.ny=20\ngrid.nz=5\n");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("grid.nz"), "stderr must name the key: {err}");
}

#[test]
fn missing_required_keys_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "empty.cfg", "grid.cfl = 0.8\n");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    for key in ["k", "T", "grid.ny"] {
        assert!(err.contains(key), "stderr must list '{key}': {err}");
    }
}

#[test]
fn nonconvergence_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    // θ = 1 is above the contraction bound at T = 4, and picard_max is tiny.
    let cfg = write_cfg(
        tmp.path(),
        "nc.cfg",
        "k=0.2\nT=4\ngrid.ny=50\nleader.theta=1.0\nleader.picard_max=50\ntarget.v0=bump\n",
    );
    let out = run(&[
        "leader",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn leader_refusal_cites_speed_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "fast.cfg", "k=0.5\nT=2\ngrid.ny=30\n");
    let out = run(&[
        "leader",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("1 - 1/sqrt(e)"), "must cite the admissible-speed bound: {err}");
}

#[test]
fn run_mode_conflict_is_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "m.cfg", "k=0.2\nT=1\ngrid.ny=20\nrun.mode=nash\n");
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_sigma_ladder_matches_single_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let sweep_cfg = write_cfg(
        tmp.path(),
        "sweep.cfg",
        "k=0.2\nT=1\ngrid.ny=50\nfollower.sigma=1,10,100,1000\nfollower.tol=1e-10\n\
         target.v2=sine:1\nsimulate.w1=sine:1\nsweep.mode=nash\n",
    );
    let sweep_out = tmp.path().join("sweep");
    let out = run(&[
        "sweep",
        "--config",
        sweep_cfg.to_str().unwrap(),
        "--out",
        sweep_out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_csv(&sweep_out.join("sweep.csv"));
    let header = &rows[0];
    let w2_col = header.iter().position(|h| h == "w2_norm").unwrap();
    let norms: Vec<f64> = (1..rows.len()).map(|r| rows[r][w2_col].parse().unwrap()).collect();
    assert_eq!(norms.len(), 4);
    for w in norms.windows(2) {
        assert!(w[1] < w[0], "sigma ladder must strictly decrease ||w2||: {norms:?}");
    }

    // A single-point sweep is the same computation as a direct run.
    let single_cfg = write_cfg(
        tmp.path(),
        "single.cfg",
        "k=0.2\nT=1\ngrid.ny=50\nfollower.sigma=10\nfollower.tol=1e-10\n\
         target.v2=sine:1\nsimulate.w1=sine:1\n",
    );
    let nash_out = tmp.path().join("nash");
    let out = run(&[
        "nash",
        "--config",
        single_cfg.to_str().unwrap(),
        "--out",
        nash_out.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let direct = std::fs::read(nash_out.join("w2.csv")).unwrap();
    let from_sweep = std::fs::read(sweep_out.join("row_1/w2.csv")).unwrap();
    assert_eq!(direct, from_sweep, "sweep row must be byte-identical to the single run");
}

#[test]
fn verify_runs_are_byte_identical_and_fault_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "v.cfg", "k=0.2\nT=1\ngrid.ny=50\n");
    let (o1, o2) = (tmp.path().join("v1"), tmp.path().join("v2"));
    for o in [&o1, &o2] {
        let out = run(&[
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            o.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(o1.join("checks.csv")).unwrap();
    let b = std::fs::read(o2.join("checks.csv")).unwrap();
    assert_eq!(a, b, "verify CSV output must be byte-identical for equal seeds");

    // Deliberately broken flux sign must fail the adjointness check.
    let cfg = write_cfg(
        tmp.path(),
        "vf.cfg",
        "k=0.2\nT=1\ngrid.ny=50\ndebug.flip_flux_sign=true\n",
    );
    let o3 = tmp.path().join("v3");
    let out = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "7",
        "--out",
        o3.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let checks = std::fs::read_to_string(o3.join("checks.csv")).unwrap();
    let adjoint_failed = checks
        .lines()
        .any(|l| l.starts_with("adjointness-A-Astar,false"));
    assert!(adjoint_failed, "flux-sign fault must fail adjointness: {checks}");
}

#[test]
fn oracle_regen_requires_confirm_and_reproduces_fixtures() {
    let out = run(&["oracle", "regen"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--confirm"));

    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("golden");
    let out = run(&["oracle", "regen", "--confirm", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // Regenerated fixtures must match the committed ones byte for byte.
    let committed = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../hierwave/testdata/golden");
    for name in ["dalembert_probes.csv", "tiny_best_response.csv", "tiny_gradient.csv"] {
        let fresh = std::fs::read(dir.join(name)).unwrap();
        let frozen = std::fs::read(committed.join(name)).unwrap();
        assert_eq!(fresh, frozen, "fixture {name} drifted");
    }
}
