//! Aggregated identity checks behind the `verify` subcommand: the discrete
//! duality identity, adjointness of the leader operator pair, Nash
//! stationarity, Nash gap sampling, the variational-inequality certificate
//! and a convergence-order study. Each check reports measured values so runs
//! are comparable across machines.

use crate::error::Result;
use crate::follower::{best_response, eval_j2, grad_j2_w2, nash_gap_check, FollowerProblem};
use crate::geometry::{build_partition, MovingDomain, PartitionMode, Segment};
use crate::leader::{
    dual_norm, minimize_dual, vi_residual, DualPoint, LeaderProblem,
};
use crate::oracle;
use crate::spaces::{build_metric, GridSpec};
use crate::wavesolver::{
    boundary_flux, boundary_inner, solve_backward_transpose, solve_forward_boundary,
    spacetime_inner, terminal_state, ControlTrace, Field, FluxMethod,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Test hooks that deliberately break an identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Negate the A* trace, emulating a flux sign bug.
    FlipFluxSign,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Named measured quantities (residuals, orders, gaps).
    pub measured: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn smooth_target(grid: &GridSpec, rng: &mut impl Rng) -> Field {
    // Random low-frequency combination: smooth in y and t.
    let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let omega: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..2.0)).collect();
    let mut v2 = Field::zeros(*grid);
    for n in 0..grid.n_rows() {
        for j in 1..grid.ny {
            let y = grid.y(j);
            let t = grid.t(n);
            let mut s = 0.0;
            for m in 0..3 {
                s += c[m] * ((m + 1) as f64 * PI * y).sin() * (omega[m] * t).cos();
            }
            v2.set(n, j, s);
        }
    }
    v2
}

/// Run the full identity suite. Sizes are fixed so that measured values are
/// comparable run to run; the random draws are controlled by `seed`.
pub fn verify_suite(seed: u64, fault: Option<Fault>) -> Result<VerifyReport> {
    let mut checks = Vec::new();
    checks.push(check_transpose_duality(seed)?);
    checks.push(check_adjointness(seed, fault)?);
    checks.push(check_nash_stationarity(seed)?);
    checks.push(check_nash_gap(seed)?);
    checks.push(check_vi_certificate(seed)?);
    checks.push(check_convergence_order()?);
    Ok(VerifyReport { seed, checks })
}

fn check_transpose_duality(seed: u64) -> Result<CheckResult> {
    let grid = GridSpec::with_cfl(100, 1.0, 0.8)?;
    let domain = MovingDomain::new(0.2, 1.0)?;
    let metric = build_metric(&grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let b: Vec<f64> = (0..grid.n_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut q = Field::zeros(grid);
        for n in 0..grid.n_rows() {
            for j in 1..grid.ny {
                q.set(n, j, rng.gen_range(-1.0..1.0));
            }
        }
        let v = solve_forward_boundary(&grid, &domain, &b, None, None)?;
        let p = solve_backward_transpose(&grid, &domain, &metric, Some(&q), None)?;
        let flux = boundary_flux(&p, &domain, &metric, FluxMethod::Transpose);
        let lhs = spacetime_inner(&metric, &v, &q);
        let rhs = boundary_inner(&grid, &b, &flux);
        let rel = (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300);
        worst = worst.max(rel);
    }
    Ok(CheckResult {
        name: "transpose-duality".to_string(),
        passed: worst <= 1e-11,
        measured: vec![("max_relative_gap".to_string(), worst)],
    })
}

fn leader_fixture(seed: u64, ny: usize, t_final: f64, sigma: f64) -> Result<LeaderProblem> {
    let grid = GridSpec::with_cfl(ny, t_final, 0.8)?;
    let domain = MovingDomain::new(0.2, t_final)?;
    let metric = build_metric(&grid)?;
    let partition = build_partition(PartitionMode::Overlap, &grid, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v2 = smooth_target(&grid, &mut rng);
    let m = metric.interior_len();
    let follower =
        FollowerProblem::new(sigma, v2, partition, domain, grid, metric)?.with_tol(1e-12);
    Ok(LeaderProblem::new(follower, vec![0.0; m], vec![0.0; m], 0.05, 0.05)?
        .with_picard(1e-12, 400)
        .with_theta(0.6))
}

fn check_adjointness(seed: u64, fault: Option<Fault>) -> Result<CheckResult> {
    let problem = leader_fixture(seed ^ 0x2, 30, 1.0, 1.0)?;
    let metric = problem.metric();
    let m = problem.interior_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let w_vals: Vec<f64> = (0..problem.follower.grid.n_rows())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let w = ControlTrace::masked(Segment::Sigma1, w_vals, &problem.follower.partition)?;
        let f = DualPoint {
            f0: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            f1: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let (a0, a1) = crate::leader::apply_a(&problem, &w)?;
        let lhs = metric.duality_pairing(&a0, &f.f0) + metric.l2_inner(&a1, &f.f1);
        let astar = crate::leader::apply_astar(&problem, &f)?;
        let sign = if fault == Some(Fault::FlipFluxSign) { -1.0 } else { 1.0 };
        let trace: Vec<f64> = astar.trace.iter().map(|v| sign * v).collect();
        let rhs = problem.follower.partition.inner(Segment::Sigma1, w.values(), &trace);
        let scale = 1.0
            + problem.follower.partition.norm(Segment::Sigma1, w.values())
                * dual_norm(metric, &f);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(CheckResult {
        name: "adjointness-A-Astar".to_string(),
        passed: worst <= 1e-8,
        measured: vec![("max_scaled_gap".to_string(), worst)],
    })
}

fn check_nash_stationarity(seed: u64) -> Result<CheckResult> {
    let grid = GridSpec::with_cfl(100, 1.0, 0.8)?;
    let domain = MovingDomain::new(0.2, 1.0)?;
    let metric = build_metric(&grid)?;
    let partition = build_partition(PartitionMode::Overlap, &grid, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4);
    let v2 = smooth_target(&grid, &mut rng);
    let problem =
        FollowerProblem::new(1.0, v2, partition, domain, grid, metric)?.with_tol(1e-10);
    let w1_vals: Vec<f64> = (0..grid.n_rows())
        .map(|n| (2.0 * PI * grid.t(n)).sin())
        .collect();
    let w1 = ControlTrace::masked(Segment::Sigma1, w1_vals, &problem.partition)?;
    let br = best_response(&problem, &w1)?;

    // Stationarity σw₂ = flux(p) on Σ₂.
    let flux = boundary_flux(&br.adjoint, &problem.domain, &problem.metric, FluxMethod::Transpose);
    let resid: Vec<f64> = (0..grid.n_rows())
        .map(|n| {
            if problem.partition.contains(Segment::Sigma2, n) {
                let tau_seg = problem.partition.quad_weight(Segment::Sigma2, n);
                problem.sigma * br.w2.get(n) - grid.time_weight(n) / tau_seg * flux[n]
            } else {
                0.0
            }
        })
        .collect();
    let num = problem.partition.norm(Segment::Sigma2, &resid);
    let den = problem.partition.norm(Segment::Sigma2, br.w2.values());
    let stationarity = num / den.max(1e-300);

    // Gradient against central finite differences in 5 random directions.
    let mut worst_fd = 0.0f64;
    let g = grad_j2_w2(&problem, &w1, &br.w2)?;
    for _ in 0..5 {
        let dir: Vec<f64> = (0..grid.n_rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dir = ControlTrace::masked(Segment::Sigma2, dir, &problem.partition)?;
        let mut f = |x: &[f64]| {
            let w = ControlTrace::masked(Segment::Sigma2, x.to_vec(), &problem.partition).unwrap();
            eval_j2(&problem, &w1, &w).unwrap()
        };
        let fd = oracle::fd_directional(&mut f, br.w2.values(), dir.values(), 1e-4);
        let pairing = problem.partition.inner(Segment::Sigma2, g.values(), dir.values());
        // Near the minimum both sides are tiny; compare on the J₂ scale.
        let scale = fd.abs().max(pairing.abs()).max(1e-6);
        worst_fd = worst_fd.max((fd - pairing).abs() / scale);
    }

    Ok(CheckResult {
        name: "nash-stationarity".to_string(),
        passed: stationarity <= 1e-6 && worst_fd <= 1e-5,
        measured: vec![
            ("stationarity_residual".to_string(), stationarity),
            ("max_fd_gap".to_string(), worst_fd),
        ],
    })
}

fn check_nash_gap(seed: u64) -> Result<CheckResult> {
    let grid = GridSpec::with_cfl(60, 1.0, 0.8)?;
    let domain = MovingDomain::new(0.2, 1.0)?;
    let metric = build_metric(&grid)?;
    let partition = build_partition(PartitionMode::Overlap, &grid, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5);
    let v2 = smooth_target(&grid, &mut rng);
    let problem =
        FollowerProblem::new(1.0, v2, partition, domain, grid, metric)?.with_tol(1e-11);
    let w1_vals: Vec<f64> = (0..grid.n_rows()).map(|n| (PI * grid.t(n)).sin()).collect();
    let w1 = ControlTrace::masked(Segment::Sigma1, w1_vals, &problem.partition)?;
    let br = best_response(&problem, &w1)?;
    let mut min_gap = f64::INFINITY;
    for &mag in &[0.01, 0.1] {
        let rep = nash_gap_check(&problem, &w1, &br.w2, 20, mag, &mut rng)?;
        min_gap = min_gap.min(rep.min_gap);
    }
    Ok(CheckResult {
        name: "nash-gap".to_string(),
        passed: min_gap >= -1e-10,
        measured: vec![("min_gap".to_string(), min_gap)],
    })
}

fn check_vi_certificate(seed: u64) -> Result<CheckResult> {
    let mut problem = leader_fixture(seed ^ 0x6, 40, 2.0, 1.0)?;
    problem = problem.with_tol(5e-7).with_max_iter(3000);
    // Reachable targets from a known control pair.
    let w1_vals: Vec<f64> = (0..problem.follower.grid.n_rows())
        .map(|n| (PI * problem.follower.grid.t(n) / 2.0).sin())
        .collect();
    let w1_known =
        ControlTrace::masked(Segment::Sigma1, w1_vals, &problem.follower.partition)?;
    let br = best_response(&problem.follower, &w1_known)?;
    let ts = terminal_state(&br.state);
    problem.v0_target = ts.v_t;
    problem.v1_target = ts.v_t_prime;

    let (fstar, log) = minimize_dual(&problem, seed ^ 0x7)?;
    // Objective must be nonincreasing across restart segments.
    let mut monotone = true;
    for w in log.records.windows(2) {
        if w[1].objective > w[0].objective + 1e-10 * (1.0 + w[0].objective.abs()) {
            monotone = false;
        }
    }
    let vi = vi_residual(&problem, &fstar, 20, seed ^ 0x8, Some(log.step))?;

    // A displaced candidate must be rejected by the certificate.
    let mut bad = fstar.clone();
    let m = problem.interior_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9);
    let bump = DualPoint {
        f0: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        f1: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    bad.axpy(1.0, &bump);
    let vi_bad = vi_residual(&problem, &bad, 20, seed ^ 0xa, Some(log.step))?;

    let passed = vi.min_value >= -1e-6 && monotone && vi_bad.min_value < -1e-6;
    Ok(CheckResult {
        name: "vi-certificate".to_string(),
        passed,
        measured: vec![
            ("vi_min_at_optimum".to_string(), vi.min_value),
            ("vi_min_at_perturbed".to_string(), vi_bad.min_value),
            ("monotone".to_string(), if monotone { 1.0 } else { 0.0 }),
            ("dual_iterations".to_string(), log.records.len() as f64),
        ],
    })
}

fn check_convergence_order() -> Result<CheckResult> {
    // Smooth cylinder oracle: standing wave cos(πt)·sin(πy). This measures
    // the scheme's own order, second.
    let mut standing_errs = Vec::new();
    for &ny in &[50usize, 100, 200] {
        let grid = GridSpec::with_cfl(ny, 0.75, 0.8)?;
        let domain = MovingDomain::new(0.0, 0.75)?;
        let v0: Vec<f64> = (0..grid.n_nodes()).map(|j| (PI * grid.y(j)).sin()).collect();
        let v1 = vec![0.0; grid.n_nodes()];
        let b = vec![0.0; grid.n_rows()];
        let v = solve_forward_boundary(&grid, &domain, &b, None, Some((&v0, &v1)))?;
        let mut err = 0.0f64;
        for n in 0..grid.n_rows() {
            for j in 0..grid.n_nodes() {
                let exact = (PI * grid.t(n)).cos() * (PI * grid.y(j)).sin();
                err = err.max((v.at(n, j) - exact).abs());
            }
        }
        standing_errs.push(err);
    }
    let order_a = (standing_errs[0] / standing_errs[1]).log2();
    let order_b = (standing_errs[1] / standing_errs[2]).log2();
    let k0_ok = (1.7..=2.3).contains(&order_a) && (1.7..=2.3).contains(&order_b);

    // Boundary sine against the method of images, reported for reference:
    // the control is C¹-incompatible at the corner, so the max-node error is
    // front-limited to O(h^(2/3)) rather than the scheme's interior order.
    let sine = |t: f64| (PI * t).sin();
    let mut sine_errs = Vec::new();
    for &ny in &[50usize, 100] {
        let grid = GridSpec::with_cfl(ny, 0.75, 0.8)?;
        let domain = MovingDomain::new(0.0, 0.75)?;
        let b: Vec<f64> = (0..grid.n_rows()).map(|n| sine(grid.t(n))).collect();
        let v = solve_forward_boundary(&grid, &domain, &b, None, None)?;
        let mut err = 0.0f64;
        for n in 0..grid.n_rows() {
            for j in 0..grid.n_nodes() {
                let exact = oracle::dalembert_reference(&sine, grid.y(j), grid.t(n), 0.75)?;
                err = err.max((v.at(n, j) - exact).abs());
            }
        }
        sine_errs.push(err);
    }
    let sine_order = (sine_errs[0] / sine_errs[1]).log2();

    // Moving boundary, smooth compatible data: self-convergence on nested
    // grids at k = 0.2. The mixed-term backward difference costs accuracy,
    // so the gate is first order.
    let mut fields = Vec::new();
    let sizes: [(usize, usize); 3] = [(50, 80), (100, 160), (200, 320)];
    for &(ny, nt) in &sizes {
        let grid = GridSpec::new(ny, nt, 1.0)?;
        let domain = MovingDomain::new(0.2, 1.0)?;
        let v0: Vec<f64> = (0..grid.n_nodes())
            .map(|j| (PI * grid.y(j)).sin().powi(2))
            .collect();
        let v1 = vec![0.0; grid.n_nodes()];
        let b = vec![0.0; grid.n_rows()];
        fields.push(solve_forward_boundary(&grid, &domain, &b, None, Some((&v0, &v1)))?);
    }
    let common_gap = |coarse: &Field, fine: &Field| -> f64 {
        let gc = coarse.grid;
        let mut gap = 0.0f64;
        for n in 0..gc.n_rows() {
            for j in 0..gc.n_nodes() {
                gap = gap.max((coarse.at(n, j) - fine.at(2 * n, 2 * j)).abs());
            }
        }
        gap
    };
    let e1 = common_gap(&fields[0], &fields[1]);
    let e2 = common_gap(&fields[1], &fields[2]);
    let order_k = (e1 / e2).log2();
    let k_ok = order_k >= 0.9;

    Ok(CheckResult {
        name: "convergence-order".to_string(),
        passed: k0_ok && k_ok,
        measured: vec![
            ("k0_standing_err_ny100".to_string(), standing_errs[1]),
            ("k0_standing_order_50_100".to_string(), order_a),
            ("k0_standing_order_100_200".to_string(), order_b),
            ("k0_sine_front_limited_err_ny100".to_string(), sine_errs[1]),
            ("k0_sine_front_limited_order".to_string(), sine_order),
            ("k02_self_order".to_string(), order_k),
        ],
    })
}
