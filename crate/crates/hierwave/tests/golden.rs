//! Frozen-fixture checks: the iterative solvers must reproduce the golden
//! values computed by the dense/closed-form reference paths, and the fixture
//! files must match a fresh regeneration byte for byte.

use hierwave::follower::{best_response, grad_j2_w2};
use hierwave::geometry::Segment;
use hierwave::oracle::{dalembert_reference, golden_csv_files, golden_scenario};
use hierwave::wavesolver::ControlTrace;
use std::f64::consts::PI;
use std::path::PathBuf;

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("testdata/golden")
        .join(name)
}

fn read_rows(name: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(golden_path(name))
        .unwrap_or_else(|e| panic!("missing golden file {name}: {e}"));
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn fixtures_match_regeneration_bytes() {
    for (name, content) in golden_csv_files().unwrap() {
        let on_disk = std::fs::read_to_string(golden_path(name)).unwrap();
        assert_eq!(on_disk, content, "golden file {name} is stale; regenerate via `hierwave oracle regen --confirm`");
    }
}

#[test]
fn dalembert_probes_frozen() {
    let sine = |t: f64| (PI * t).sin();
    for row in read_rows("dalembert_probes.csv") {
        let (y, t, expected) = (row[0], row[1], row[2]);
        let v = dalembert_reference(&sine, y, t, 2.0).unwrap();
        assert!(
            (v - expected).abs() <= 1e-12,
            "probe ({y},{t}) drifted: {v} vs frozen {expected}"
        );
    }
}

#[test]
fn iterative_best_response_matches_golden() {
    let (problem, w1) = golden_scenario().unwrap();
    let br = best_response(&problem, &w1).unwrap();
    let mut sq = 0.0;
    for row in read_rows("tiny_best_response.csv") {
        let n = row[0] as usize;
        let d = br.w2.get(n) - row[2];
        sq += problem.partition.quad_weight(Segment::Sigma2, n) * d * d;
    }
    let gap = sq.sqrt();
    assert!(gap <= 1e-8, "iterative vs golden dense response: {gap}");
}

#[test]
fn adjoint_gradient_matches_golden() {
    let (problem, w1) = golden_scenario().unwrap();
    let grid = problem.grid;
    let w2: Vec<f64> = (0..grid.n_rows())
        .map(|n| 0.3 * (2.0 * PI * grid.t(n)).sin())
        .collect();
    let w2 = ControlTrace::masked(Segment::Sigma2, w2, &problem.partition).unwrap();
    let grad = grad_j2_w2(&problem, &w1, &w2).unwrap();
    for row in read_rows("tiny_gradient.csv") {
        let n = row[0] as usize;
        assert!(
            (grad.get(n) - row[2]).abs() <= 1e-8,
            "gradient node {n}: {} vs frozen {}",
            grad.get(n),
            row[2]
        );
    }
}
