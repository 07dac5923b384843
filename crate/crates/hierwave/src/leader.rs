//! The leader's relaxed controllability problem and its convex dual.
//!
//! With the follower always at its Nash response, the map
//!
//!   A: w₁ ↦ { g′(T) + δ·g(T), −g(T) }
//!
//! (g the controlled state with zero target and zero initial data) is linear
//! from L²(Σ₁) into H⁻¹ × L². Steering (v(T), v′(T)) into the balls
//! B(v⁰, ρ₀) × B(v¹, ρ₁) while minimizing ½‖w₁‖² dualizes, via
//! Fenchel–Rockafellar, into the unconstrained problem
//!
//!   min_f  ½‖A*f‖²_{L²(Σ₁)} + (v⁰−v₀(T), f¹) − ⟨v¹−v₀′(T), f⁰⟩
//!          + ρ₁‖f⁰‖_{H¹₀} + ρ₀‖f¹‖_{L²},
//!
//! which is smooth-plus-norms and is minimized by an accelerated proximal
//! gradient method with block soft-thresholding and function restarts.
//! A*f is realized by the coupled adjoint pair: φ solved backward with
//! terminal data (f⁰, f¹) and source −α·ψ, ψ solved forward with Σ₂ boundary
//! flux(φ)/σ, iterated to its fixed point; then A*f = flux(φ)|Σ₁ and the
//! optimal leader control is recovered as w₁ = A*f★.

use crate::error::{Error, Result};
use crate::follower::{best_response, BestResponse, FollowerProblem};
use crate::geometry::Segment;
use crate::spaces::{Space, SpatialMetric};
use crate::wavesolver::{
    boundary_flux, solve_backward_transpose, solve_forward_boundary, terminal_state, ControlTrace,
    Field, FluxMethod, TerminalState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dual variable (f⁰, f¹) ∈ H¹₀ × L², stored on the interior nodes
/// (so f⁰ vanishes at both endpoints by construction).
#[derive(Debug, Clone, PartialEq)]
pub struct DualPoint {
    pub f0: Vec<f64>,
    pub f1: Vec<f64>,
}

impl DualPoint {
    pub fn zeros(m: usize) -> Self {
        DualPoint { f0: vec![0.0; m], f1: vec![0.0; m] }
    }

    pub fn axpy(&mut self, c: f64, other: &DualPoint) {
        for (a, b) in self.f0.iter_mut().zip(&other.f0) {
            *a += c * b;
        }
        for (a, b) in self.f1.iter_mut().zip(&other.f1) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.f0.iter_mut().for_each(|v| *v *= c);
        self.f1.iter_mut().for_each(|v| *v *= c);
    }

    pub fn combine(a: &DualPoint, ca: f64, b: &DualPoint, cb: f64) -> DualPoint {
        DualPoint {
            f0: a.f0.iter().zip(&b.f0).map(|(x, y)| ca * x + cb * y).collect(),
            f1: a.f1.iter().zip(&b.f1).map(|(x, y)| ca * x + cb * y).collect(),
        }
    }
}

/// H¹₀ × L² inner product of dual points.
pub fn dual_inner(metric: &SpatialMetric, a: &DualPoint, b: &DualPoint) -> f64 {
    metric.h10_inner(&a.f0, &b.f0) + metric.l2_inner(&a.f1, &b.f1)
}

pub fn dual_norm(metric: &SpatialMetric, a: &DualPoint) -> f64 {
    dual_inner(metric, a, a).max(0.0).sqrt()
}

/// Leader data: targets, ball radii and solver knobs, on top of a follower.
#[derive(Debug, Clone)]
pub struct LeaderProblem {
    /// Target position, L² role (interior nodes).
    pub v0_target: Vec<f64>,
    /// Target velocity, H⁻¹ role (interior nodes).
    pub v1_target: Vec<f64>,
    pub rho0: f64,
    pub rho1: f64,
    pub delta: f64,
    pub follower: FollowerProblem,
    /// Follower copy with v₂ ≡ 0; the linear part behind A.
    linear_follower: FollowerProblem,
    /// Prox fixed-point residual tolerance of the dual solver.
    pub tol: f64,
    pub max_iter: usize,
    /// Picard relaxation for the coupled adjoint pair.
    pub theta: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Discretization allowance added to the ball radii in residual reports.
    pub slack: f64,
    pub override_speed_check: bool,
}

impl LeaderProblem {
    pub fn new(
        follower: FollowerProblem,
        v0_target: Vec<f64>,
        v1_target: Vec<f64>,
        rho0: f64,
        rho1: f64,
    ) -> Result<Self> {
        let m = follower.metric.interior_len();
        if v0_target.len() != m || v1_target.len() != m {
            return Err(Error::shape(format!(
                "targets must have {m} interior nodes, got {} and {}",
                v0_target.len(),
                v1_target.len()
            )));
        }
        if !(rho0 > 0.0 && rho1 > 0.0) {
            return Err(Error::config(format!(
                "ball radii must be positive, got rho0 = {rho0}, rho1 = {rho1}"
            )));
        }
        let linear_follower = follower.with_target(Field::zeros(follower.grid))?;
        Ok(LeaderProblem {
            v0_target,
            v1_target,
            rho0,
            rho1,
            delta: 0.0,
            follower,
            linear_follower,
            tol: 1e-7,
            max_iter: 2000,
            theta: 1.0,
            picard_tol: 1e-10,
            picard_max: 200,
            slack: 0.02,
            override_speed_check: false,
        })
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self> {
        if delta < 0.0 {
            return Err(Error::config(format!("delta must be nonnegative, got {delta}")));
        }
        self.delta = delta;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_picard(mut self, tol: f64, max: usize) -> Self {
        self.picard_tol = tol;
        self.picard_max = max;
        self
    }

    pub fn with_slack(mut self, slack: f64) -> Self {
        self.slack = slack;
        self
    }

    pub fn with_override_speed_check(mut self, on: bool) -> Self {
        self.override_speed_check = on;
        self
    }

    pub fn metric(&self) -> &SpatialMetric {
        &self.follower.metric
    }

    pub fn interior_len(&self) -> usize {
        self.follower.metric.interior_len()
    }

    /// Free dynamics: the Nash-coupled state with w₁ = 0 and the real target.
    pub fn free_terminal(&self) -> Result<TerminalState> {
        let w1 = ControlTrace::zeros(Segment::Sigma1, &self.follower.partition);
        let br = best_response(&self.follower, &w1)?;
        Ok(terminal_state(&br.state))
    }

    /// Dual data terms d0 = v⁰ − v₀(T), d1 = v¹ − v₀′(T).
    pub fn data_terms(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let free = self.free_terminal()?;
        let d0: Vec<f64> = self
            .v0_target
            .iter()
            .zip(&free.v_t)
            .map(|(a, b)| a - b)
            .collect();
        let d1: Vec<f64> = self
            .v1_target
            .iter()
            .zip(&free.v_t_prime)
            .map(|(a, b)| a - b)
            .collect();
        Ok((d0, d1))
    }
}

/// A w₁ = (g′(T) + δ·g(T), −g(T)) with g the zero-target Nash-coupled state.
pub fn apply_a(problem: &LeaderProblem, w1: &ControlTrace) -> Result<(Vec<f64>, Vec<f64>)> {
    let br = best_response(&problem.linear_follower, w1)?;
    let ts = terminal_state(&br.state);
    let a0: Vec<f64> = ts
        .v_t_prime
        .iter()
        .zip(&ts.v_t)
        .map(|(vp, v)| vp + problem.delta * v)
        .collect();
    let a1: Vec<f64> = ts.v_t.iter().map(|v| -v).collect();
    Ok((a0, a1))
}

/// Converged coupled adjoint pair and the Σ₁ trace it defines.
#[derive(Debug, Clone)]
pub struct AstarOutput {
    /// A*f as a full-length trace supported on Σ₁.
    pub trace: Vec<f64>,
    pub phi: Field,
    pub psi: Field,
    /// ψ's Σ₂ boundary values (the inner fixed-point variable).
    pub psi_boundary: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// A*f = flux(φ)|Σ₁ where (φ, ψ) solve the coupled pair
/// φ″ + L*φ = −α·ψ, φ(T) = f⁰, φ′(T) = f¹ − δf⁰, φ|Σ = 0;
/// ψ″ + Lψ = 0, ψ|Σ₂ = flux(φ)/σ, zero elsewhere and initially.
/// The Σ₂ trace is iterated with relaxation θ to its fixed point, which
/// makes ⟨A w₁, f⟩ = ⟨w₁, A*f⟩ an exact discrete identity.
pub fn apply_astar(problem: &LeaderProblem, f: &DualPoint) -> Result<AstarOutput> {
    apply_astar_from(problem, f, None)
}

/// Same fixed point, started from a caller-supplied Σ₂ trace. The limit does
/// not depend on the start; nearby warm starts just cut the iteration count
/// (the dual solver feeds back the previous ψ boundary).
pub fn apply_astar_from(
    problem: &LeaderProblem,
    f: &DualPoint,
    start: Option<&[f64]>,
) -> Result<AstarOutput> {
    let fol = &problem.follower;
    let grid = &fol.grid;
    let metric = &fol.metric;
    let m = metric.interior_len();
    if f.f0.len() != m || f.f1.len() != m {
        return Err(Error::shape(format!(
            "dual point must have {m} interior nodes, got {} and {}",
            f.f0.len(),
            f.f1.len()
        )));
    }
    let rows = grid.n_rows();
    // Terminal encoding absorbs the δ-term of the pairing.
    let terminal_prime: Vec<f64> = f
        .f1
        .iter()
        .zip(&f.f0)
        .map(|(a, b)| a - problem.delta * b)
        .collect();

    let solve_pair = |w_psi: &[f64]| -> Result<(Field, Field, Vec<f64>)> {
        let psi = solve_forward_boundary(grid, &fol.domain, w_psi, None, None)?;
        let mut q = Field::zeros(*grid);
        for n in 0..rows {
            let a = fol.domain.alpha_at(grid.t(n));
            for j in 1..grid.ny {
                q.set(n, j, -a * psi.at(n, j));
            }
        }
        let phi = solve_backward_transpose(
            grid,
            &fol.domain,
            metric,
            Some(&q),
            Some((&f.f0, &terminal_prime)),
        )?;
        let flux = boundary_flux(&phi, &fol.domain, metric, FluxMethod::Transpose);
        Ok((psi, phi, flux))
    };

    let seg_scaled = |flux: &[f64], segment: Segment, scale: f64| -> Vec<f64> {
        (0..rows)
            .map(|n| {
                let tau_seg = fol.partition.quad_weight(segment, n);
                if tau_seg > 0.0 {
                    grid.time_weight(n) / tau_seg * flux[n] * scale
                } else {
                    0.0
                }
            })
            .collect()
    };

    let mut w_psi = match start {
        Some(s) if s.len() == rows => s.to_vec(),
        _ => vec![0.0; rows],
    };
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut rising = 0usize;
    let mut residuals = Vec::new();
    let mut converged = false;
    while iterations < problem.picard_max {
        iterations += 1;
        let (_, _, flux) = solve_pair(&w_psi)?;
        let w_new = seg_scaled(&flux, Segment::Sigma2, 1.0 / fol.sigma);
        let diff: Vec<f64> = w_new.iter().zip(&w_psi).map(|(a, b)| a - b).collect();
        let norm_new = fol.partition.norm(Segment::Sigma2, &w_new);
        residual = fol.partition.norm(Segment::Sigma2, &diff) / norm_new.max(1.0);
        residuals.push(residual);
        for (w, n) in w_psi.iter_mut().zip(&w_new) {
            *w = (1.0 - problem.theta) * *w + problem.theta * n;
        }
        if residual <= problem.picard_tol {
            converged = true;
            break;
        }
        // Fail fast on divergence instead of overflowing to NaN.
        if residual < best {
            best = residual;
            rising = 0;
        } else {
            rising += 1;
        }
        if !residual.is_finite() || (rising >= 25 && residual > 1e3 * best.max(1e-300)) {
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            solver: "adjoint-pair Picard",
            iterations,
            last: residual,
            advice: "increase follower.sigma or decrease leader.theta (the coupling is a contraction only for ||H|| < sigma/theta-margin)".to_string(),
            residuals,
        });
    }
    let (psi, phi, flux) = solve_pair(&w_psi)?;
    let trace = (0..rows)
        .map(|n| {
            let tau_seg = fol.partition.quad_weight(Segment::Sigma1, n);
            if tau_seg > 0.0 {
                grid.time_weight(n) / tau_seg * flux[n]
            } else {
                0.0
            }
        })
        .collect();
    Ok(AstarOutput { trace, phi, psi, psi_boundary: w_psi, iterations, residual })
}

/// The dual functional
/// ½‖A*f‖² + (d0, f¹)_{L²} − ⟨d1, f⁰⟩_{H⁻¹×H¹₀} + ρ₁‖f⁰‖_{H¹₀} + ρ₀‖f¹‖_{L²}.
pub fn dual_objective(problem: &LeaderProblem, f: &DualPoint) -> Result<f64> {
    let (d0, d1) = problem.data_terms()?;
    let astar = apply_astar(problem, f)?;
    let nrm2 = problem
        .follower
        .partition
        .inner(Segment::Sigma1, &astar.trace, &astar.trace);
    Ok(objective_from_parts(problem, f, nrm2, &d0, &d1))
}

fn objective_from_parts(
    problem: &LeaderProblem,
    f: &DualPoint,
    astar_norm_sq: f64,
    d0: &[f64],
    d1: &[f64],
) -> f64 {
    let metric = problem.metric();
    0.5 * astar_norm_sq + metric.l2_inner(d0, &f.f1) - metric.duality_pairing(d1, &f.f0)
        + problem.rho1 * metric.norm(Space::H10, &f.f0).unwrap_or(0.0)
        + problem.rho0 * metric.norm(Space::L2, &f.f1).unwrap_or(0.0)
}

/// Riesz representative of the smooth-part gradient in H¹₀ × L².
fn smooth_gradient(
    problem: &LeaderProblem,
    a0: &[f64],
    a1: &[f64],
    d0: &[f64],
    d1: &[f64],
) -> Result<DualPoint> {
    let metric = problem.metric();
    let shifted: Vec<f64> = a0.iter().zip(d1).map(|(a, d)| a - d).collect();
    let g0 = metric.riesz(&shifted)?;
    let g1: Vec<f64> = a1.iter().zip(d0).map(|(a, d)| a + d).collect();
    Ok(DualPoint { f0: g0, f1: g1 })
}

/// Block soft-thresholding: prox of τ(ρ₁‖·‖_{H¹₀} + ρ₀‖·‖_{L²}).
fn prox_shrink(problem: &LeaderProblem, x: &DualPoint, step: f64) -> DualPoint {
    let metric = problem.metric();
    let mut out = x.clone();
    let n0 = metric.norm(Space::H10, &x.f0).unwrap_or(0.0);
    let s0 = if n0 > 0.0 { (1.0 - step * problem.rho1 / n0).max(0.0) } else { 0.0 };
    out.f0.iter_mut().for_each(|v| *v *= s0);
    let n1 = metric.norm(Space::L2, &x.f1).unwrap_or(0.0);
    let s1 = if n1 > 0.0 { (1.0 - step * problem.rho0 / n1).max(0.0) } else { 0.0 };
    out.f1.iter_mut().for_each(|v| *v *= s1);
    out
}

#[derive(Debug, Clone)]
pub struct DualIterRecord {
    pub iter: usize,
    pub objective: f64,
    pub prox_residual: f64,
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub struct DualSolveLog {
    pub lipschitz: f64,
    pub step: f64,
    pub records: Vec<DualIterRecord>,
    pub converged: bool,
    pub astar_iterations_last: usize,
}

/// Accelerated proximal gradient on the dual with power-iteration step size,
/// block shrinkage and function restarts.
pub fn minimize_dual(problem: &LeaderProblem, seed: u64) -> Result<(DualPoint, DualSolveLog)> {
    let report = problem.follower.domain.validate_controllability_params();
    if !report.speed_ok && !problem.override_speed_check {
        return Err(Error::config(format!(
            "leader solve refused: k = {} violates 0 < k < 1 - 1/sqrt(e) = {:.7}; set leader.override_speed_check = true to proceed anyway",
            report.k, report.speed_bound
        )));
    }
    if problem.delta > 0.0 {
        return Err(Error::config(
            "the dual solve requires delta = 0 (the delta-term couples the dual to the primal unknown); delta > 0 is available in apply_a only"
                .to_string(),
        ));
    }
    let metric = problem.metric();
    let m = problem.interior_len();
    let (d0, d1) = problem.data_terms()?;

    // Lipschitz constant of f ↦ rep(AA*f) by power iteration, run with
    // loosened inner tolerances (the estimate is inflated by 1.05 anyway).
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pf = DualPoint {
        f0: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        f1: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    let nrm = dual_norm(metric, &pf);
    pf.scale(1.0 / nrm.max(1e-300));
    let mut lambda = 0.0;
    {
        let mut loose = problem.clone();
        loose.follower.tol = loose.follower.tol.max(1e-7);
        loose.linear_follower.tol = loose.linear_follower.tol.max(1e-7);
        loose.picard_tol = loose.picard_tol.max(1e-7);
        let mut warm = vec![0.0; problem.follower.grid.n_rows()];
        for _ in 0..20 {
            let u = apply_astar_from(&loose, &pf, Some(&warm))?;
            warm = u.psi_boundary.clone();
            let tr = ControlTrace::masked(Segment::Sigma1, u.trace, &loose.follower.partition)?;
            let (a0, a1) = apply_a(&loose, &tr)?;
            let rep = DualPoint { f0: metric.riesz(&a0)?, f1: a1 };
            lambda = dual_inner(metric, &rep, &pf);
            let n = dual_norm(metric, &rep);
            if n <= 1e-300 {
                break;
            }
            pf = rep;
            pf.scale(1.0 / n);
        }
    }
    let lipschitz = (1.05 * lambda).max(1e-12);
    let step = 1.0 / lipschitz;

    // Caches at a point: A* trace and A(A*·) pair, combined linearly when
    // evaluating at extrapolated points. The ψ-boundary fixed point of the
    // previous call warm-starts the next one.
    struct Cache {
        astar: Vec<f64>,
        a0: Vec<f64>,
        a1: Vec<f64>,
        astar_iters: usize,
    }
    let mut warm = vec![0.0; problem.follower.grid.n_rows()];
    let eval = |f: &DualPoint, warm: &mut Vec<f64>| -> Result<Cache> {
        let u = apply_astar_from(problem, f, Some(warm))?;
        *warm = u.psi_boundary.clone();
        let tr =
            ControlTrace::masked(Segment::Sigma1, u.trace.clone(), &problem.follower.partition)?;
        let (a0, a1) = apply_a(problem, &tr)?;
        Ok(Cache { astar: u.trace, a0, a1, astar_iters: u.iterations })
    };
    let objective = |f: &DualPoint, c: &Cache| -> f64 {
        let nrm2 = problem.follower.partition.inner(Segment::Sigma1, &c.astar, &c.astar);
        objective_from_parts(problem, f, nrm2, &d0, &d1)
    };
    let prox_residual = |f: &DualPoint, c: &Cache| -> Result<f64> {
        let g = smooth_gradient(problem, &c.a0, &c.a1, &d0, &d1)?;
        let mut shifted = f.clone();
        shifted.axpy(-step, &g);
        let px = prox_shrink(problem, &shifted, step);
        let diff = DualPoint::combine(f, 1.0, &px, -1.0);
        Ok(dual_norm(metric, &diff))
    };

    let mut records = Vec::new();
    let mut x = DualPoint::zeros(m);
    let mut cx = eval(&x, &mut warm)?;
    let mut dx = objective(&x, &cx);
    let mut res = prox_residual(&x, &cx)?;
    records.push(DualIterRecord { iter: 0, objective: dx, prox_residual: res, restarted: false });
    if res <= problem.tol * dual_norm(metric, &x).max(1.0) {
        let last = cx.astar_iters;
        return Ok((
            x,
            DualSolveLog { lipschitz, step, records, converged: true, astar_iterations_last: last },
        ));
    }

    let mut x_prev = x.clone();
    let mut c_prev = Cache {
        astar: cx.astar.clone(),
        a0: cx.a0.clone(),
        a1: cx.a1.clone(),
        astar_iters: cx.astar_iters,
    };
    let mut t = 1.0f64;
    let mut just_restarted = false;

    for iter in 1..=problem.max_iter {
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        // Extrapolated point and its linearly combined operator caches.
        let y = DualPoint::combine(&x, 1.0 + beta, &x_prev, -beta);
        let a0_y: Vec<f64> = cx
            .a0
            .iter()
            .zip(&c_prev.a0)
            .map(|(a, b)| (1.0 + beta) * a - beta * b)
            .collect();
        let a1_y: Vec<f64> = cx
            .a1
            .iter()
            .zip(&c_prev.a1)
            .map(|(a, b)| (1.0 + beta) * a - beta * b)
            .collect();
        let g_y = smooth_gradient(problem, &a0_y, &a1_y, &d0, &d1)?;
        let mut cand = y.clone();
        cand.axpy(-step, &g_y);
        let mut x_new = prox_shrink(problem, &cand, step);
        let mut c_new = eval(&x_new, &mut warm)?;
        let mut d_new = objective(&x_new, &c_new);

        // Non-monotonicity allowance: must sit above the noise floor of the
        // inner Picard/CG solves, well below any real objective increase.
        let mono_slack = 1e-10 * (1.0 + dx.abs());
        let mut restarted = false;
        if d_new > dx + mono_slack {
            // Function restart: drop momentum and re-step from x.
            restarted = true;
            t = 1.0;
            let g_x = smooth_gradient(problem, &cx.a0, &cx.a1, &d0, &d1)?;
            let mut cand = x.clone();
            cand.axpy(-step, &g_x);
            x_new = prox_shrink(problem, &cand, step);
            c_new = eval(&x_new, &mut warm)?;
            d_new = objective(&x_new, &c_new);
            if d_new > dx + mono_slack {
                if just_restarted {
                    let resl: Vec<f64> = records.iter().map(|r| r.prox_residual).collect();
                    return Err(Error::NonConvergence {
                        solver: "dual proximal gradient",
                        iterations: iter,
                        last: d_new - dx,
                        advice: "objective increased beyond the restart tolerance; the Lipschitz estimate may be too small".to_string(),
                        residuals: resl,
                    });
                }
                just_restarted = true;
            }
        } else {
            t = t_next;
            just_restarted = restarted;
        }

        res = prox_residual(&x_new, &c_new)?;
        records.push(DualIterRecord {
            iter,
            objective: d_new,
            prox_residual: res,
            restarted,
        });

        x_prev = std::mem::replace(&mut x, x_new);
        c_prev = std::mem::replace(&mut cx, c_new);
        dx = d_new;

        if res <= problem.tol * dual_norm(metric, &x).max(1.0) {
            let last = cx.astar_iters;
            return Ok((
                x,
                DualSolveLog {
                    lipschitz,
                    step,
                    records,
                    converged: true,
                    astar_iterations_last: last,
                },
            ));
        }
    }
    let resl: Vec<f64> = records.iter().map(|r| r.prox_residual).collect();
    Err(Error::NonConvergence {
        solver: "dual proximal gradient",
        iterations: problem.max_iter,
        last: res,
        advice: "increase leader.max_iter or loosen leader.tol".to_string(),
        residuals: resl,
    })
}

/// Recovered leader control and the resulting Nash-coupled run.
#[derive(Debug, Clone)]
pub struct Recovery {
    pub w1: ControlTrace,
    pub w2: ControlTrace,
    pub state: Field,
    pub adjoint: Field,
    pub j_value: f64,
}

/// w₁ = A*f★, w₂ and v from the follower's response, J = ½‖w₁‖²_{L²(Σ₁)}.
pub fn recover_leader(problem: &LeaderProblem, fstar: &DualPoint) -> Result<Recovery> {
    let astar = apply_astar(problem, fstar)?;
    let w1 = ControlTrace::masked(Segment::Sigma1, astar.trace, &problem.follower.partition)?;
    let br = best_response(&problem.follower, &w1)?;
    let j_value = 0.5
        * problem
            .follower
            .partition
            .inner(Segment::Sigma1, w1.values(), w1.values());
    Ok(Recovery { w1, w2: br.w2, state: br.state, adjoint: br.adjoint, j_value })
}

/// Distances of a terminal pair to the targets, with the configured slack.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub d0: f64,
    pub d1: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub slack: f64,
    pub inside: bool,
}

pub fn controllability_residual(
    problem: &LeaderProblem,
    terminal: &TerminalState,
) -> Result<ResidualReport> {
    let metric = problem.metric();
    let e0: Vec<f64> = terminal
        .v_t
        .iter()
        .zip(&problem.v0_target)
        .map(|(a, b)| a - b)
        .collect();
    let e1: Vec<f64> = terminal
        .v_t_prime
        .iter()
        .zip(&problem.v1_target)
        .map(|(a, b)| a - b)
        .collect();
    let d0 = metric.norm(Space::L2, &e0)?;
    let d1 = metric.norm(Space::Hm1, &e1)?;
    Ok(ResidualReport {
        d0,
        d1,
        rho0: problem.rho0,
        rho1: problem.rho1,
        slack: problem.slack,
        inside: d0 <= problem.rho0 + problem.slack && d1 <= problem.rho1 + problem.slack,
    })
}

/// Sampled variational-inequality certificate at a dual candidate.
#[derive(Debug, Clone)]
pub struct ViReport {
    /// Smallest sampled left-hand side; ≥ −tol certifies optimality.
    pub min_value: f64,
    pub directions_checked: usize,
    pub prox_residual: f64,
}

/// Evaluate the variational inequality
///   ⟨v′(T,f) − v¹, f̂⁰−f⁰⟩ − (v(T,f) − v⁰, f̂¹−f¹)
///     + ρ₁(‖f̂⁰‖−‖f⁰‖) + ρ₀(‖f̂¹‖−‖f¹‖) ≥ 0
/// over canonical, random, scaling and prox-point trial directions, where the
/// terminal pair comes from the controls recovered at f.
pub fn vi_residual(
    problem: &LeaderProblem,
    f: &DualPoint,
    random_directions: usize,
    seed: u64,
    step_hint: Option<f64>,
) -> Result<ViReport> {
    let metric = problem.metric();
    let m = problem.interior_len();
    let rec = recover_leader(problem, f)?;
    let ts = terminal_state(&rec.state);

    let vp_res: Vec<f64> = ts
        .v_t_prime
        .iter()
        .zip(&problem.v1_target)
        .map(|(a, b)| a - b)
        .collect();
    let v_res: Vec<f64> = ts
        .v_t
        .iter()
        .zip(&problem.v0_target)
        .map(|(a, b)| a - b)
        .collect();
    let n_f0 = metric.norm(Space::H10, &f.f0)?;
    let n_f1 = metric.norm(Space::L2, &f.f1)?;

    let lhs = |fhat: &DualPoint| -> f64 {
        let df0: Vec<f64> = fhat.f0.iter().zip(&f.f0).map(|(a, b)| a - b).collect();
        let df1: Vec<f64> = fhat.f1.iter().zip(&f.f1).map(|(a, b)| a - b).collect();
        metric.duality_pairing(&vp_res, &df0) - metric.l2_inner(&v_res, &df1)
            + problem.rho1 * (metric.norm(Space::H10, &fhat.f0).unwrap_or(0.0) - n_f0)
            + problem.rho0 * (metric.norm(Space::L2, &fhat.f1).unwrap_or(0.0) - n_f1)
    };

    let mut min_value = f64::INFINITY;
    let mut checked = 0usize;

    // f̂ = f gives exactly zero; kept as a sanity anchor.
    min_value = min_value.min(lhs(f));
    checked += 1;

    // Canonical ± directions, normalized in the block norms.
    let k_diag = 2.0 / metric.dy;
    let m_diag = metric.dy * 2.0 / 3.0;
    for i in 0..m {
        for sgn in [1.0, -1.0] {
            let mut fh = f.clone();
            fh.f0[i] += sgn / k_diag.sqrt();
            min_value = min_value.min(lhs(&fh));
            let mut fh = f.clone();
            fh.f1[i] += sgn / m_diag.sqrt();
            min_value = min_value.min(lhs(&fh));
            checked += 2;
        }
    }

    // Scaling probes.
    for c in [0.0, 0.5, 2.0] {
        let mut fh = f.clone();
        fh.scale(c);
        min_value = min_value.min(lhs(&fh));
        checked += 1;
    }

    // Random directions.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..random_directions {
        let mut dir = DualPoint {
            f0: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            f1: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let n = dual_norm(metric, &dir);
        if n > 0.0 {
            dir.scale(1.0 / n);
        }
        let fh = DualPoint::combine(f, 1.0, &dir, 1.0);
        min_value = min_value.min(lhs(&fh));
        checked += 1;
    }

    // Prox point: the steepest admissible descent trial; needs the step.
    let mut prox_res = f64::NAN;
    if let Some(step) = step_hint {
        let (d0, d1) = problem.data_terms()?;
        let u = apply_astar(problem, f)?;
        let tr =
            ControlTrace::masked(Segment::Sigma1, u.trace.clone(), &problem.follower.partition)?;
        let (a0, a1) = apply_a(problem, &tr)?;
        let g = smooth_gradient(problem, &a0, &a1, &d0, &d1)?;
        let mut cand = f.clone();
        cand.axpy(-step, &g);
        let px = prox_shrink(problem, &cand, step);
        min_value = min_value.min(lhs(&px));
        checked += 1;
        let diff = DualPoint::combine(f, 1.0, &px, -1.0);
        prox_res = dual_norm(metric, &diff);
    }

    Ok(ViReport { min_value, directions_checked: checked, prox_residual: prox_res })
}

/// The full optimality quadruple at a dual candidate, with consistency
/// residuals of its three boundary couplings.
#[derive(Debug, Clone)]
pub struct OptimalitySystem {
    pub phi: Field,
    pub psi: Field,
    pub state: Field,
    pub adjoint: Field,
    pub w1: ControlTrace,
    pub w2: ControlTrace,
    pub consistency: ConsistencyReport,
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    /// ‖w₁ − flux(φ)‖_{L²(Σ₁)} (leader recovery formula).
    pub sigma1_residual: f64,
    /// ‖σ·w₂ − flux(p)‖_{L²(Σ₂)} (follower stationarity).
    pub sigma2_residual: f64,
    /// ‖σ·ψ|_{Σ₂} − flux(φ)‖_{L²(Σ₂)} (adjoint-pair coupling).
    pub psi_residual: f64,
}

pub fn assemble_optimality_system(
    problem: &LeaderProblem,
    fstar: &DualPoint,
) -> Result<OptimalitySystem> {
    let fol = &problem.follower;
    let grid = &fol.grid;
    let astar = apply_astar(problem, fstar)?;
    let w1 = ControlTrace::masked(Segment::Sigma1, astar.trace.clone(), &fol.partition)?;
    let br: BestResponse = best_response(fol, &w1)?;

    let flux_phi = boundary_flux(&astar.phi, &fol.domain, &fol.metric, FluxMethod::Transpose);
    let flux_p = boundary_flux(&br.adjoint, &fol.domain, &fol.metric, FluxMethod::Transpose);
    let rescale = |flux: &[f64], seg: Segment| -> Vec<f64> {
        (0..grid.n_rows())
            .map(|n| {
                let tau_seg = fol.partition.quad_weight(seg, n);
                if tau_seg > 0.0 {
                    grid.time_weight(n) / tau_seg * flux[n]
                } else {
                    0.0
                }
            })
            .collect()
    };

    let r1: Vec<f64> = {
        let fphi = rescale(&flux_phi, Segment::Sigma1);
        (0..grid.n_rows()).map(|n| w1.get(n) - fphi[n]).collect()
    };
    let r2: Vec<f64> = {
        let fp = rescale(&flux_p, Segment::Sigma2);
        (0..grid.n_rows())
            .map(|n| {
                if fol.partition.contains(Segment::Sigma2, n) {
                    fol.sigma * br.w2.get(n) - fp[n]
                } else {
                    0.0
                }
            })
            .collect()
    };
    let r3: Vec<f64> = {
        let fphi = rescale(&flux_phi, Segment::Sigma2);
        (0..grid.n_rows())
            .map(|n| {
                if fol.partition.contains(Segment::Sigma2, n) {
                    fol.sigma * astar.psi_boundary[n] - fphi[n]
                } else {
                    0.0
                }
            })
            .collect()
    };
    let consistency = ConsistencyReport {
        sigma1_residual: fol.partition.norm(Segment::Sigma1, &r1),
        sigma2_residual: fol.partition.norm(Segment::Sigma2, &r2),
        psi_residual: fol.partition.norm(Segment::Sigma2, &r3),
    };
    Ok(OptimalitySystem {
        phi: astar.phi,
        psi: astar.psi,
        state: br.state,
        adjoint: br.adjoint,
        w1,
        w2: br.w2,
        consistency,
    })
}

/// Adjointness defect |⟨A w, f⟩ − ⟨w, A*f⟩| for one pair.
pub fn adjointness_gap(problem: &LeaderProblem, w1: &ControlTrace, f: &DualPoint) -> Result<f64> {
    let metric = problem.metric();
    let (a0, a1) = apply_a(problem, w1)?;
    let lhs = metric.duality_pairing(&a0, &f.f0) + metric.l2_inner(&a1, &f.f1);
    let astar = apply_astar(problem, f)?;
    let rhs = problem
        .follower
        .partition
        .inner(Segment::Sigma1, w1.values(), &astar.trace);
    Ok((lhs - rhs).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_partition, MovingDomain, PartitionMode};
    use crate::spaces::{build_metric, GridSpec};
    use approx::assert_relative_eq;

    fn tiny_leader(sigma: f64, seed: u64) -> LeaderProblem {
        let grid = GridSpec::new(6, 20, 1.0).unwrap();
        let domain = MovingDomain::new(0.2, 1.0).unwrap();
        let metric = build_metric(&grid).unwrap();
        let partition = build_partition(PartitionMode::Overlap, &grid, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v2 = Field::zeros(grid);
        for n in 0..grid.n_rows() {
            for j in 1..grid.ny {
                v2.set(n, j, rng.gen_range(-0.5..0.5));
            }
        }
        let m = metric.interior_len();
        let follower = FollowerProblem::new(sigma, v2, partition, domain, grid, metric)
            .unwrap()
            .with_tol(1e-12);
        LeaderProblem::new(follower, vec![0.0; m], vec![0.0; m], 0.05, 0.05)
            .unwrap()
            .with_picard(1e-12, 400)
            .with_override_speed_check(true)
    }

    fn random_trace(problem: &LeaderProblem, seed: u64) -> ControlTrace {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..problem.follower.grid.n_rows())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        ControlTrace::masked(Segment::Sigma1, vals, &problem.follower.partition).unwrap()
    }

    fn random_dual(problem: &LeaderProblem, seed: u64) -> DualPoint {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = problem.interior_len();
        DualPoint {
            f0: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            f1: (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn apply_a_zero_and_homogeneity() {
        let p = tiny_leader(1.0, 3);
        let zero = ControlTrace::zeros(Segment::Sigma1, &p.follower.partition);
        let (a0, a1) = apply_a(&p, &zero).unwrap();
        assert!(a0.iter().chain(&a1).all(|&v| v.abs() < 1e-13));

        let w = random_trace(&p, 4);
        let (a0, a1) = apply_a(&p, &w).unwrap();
        let w3 = ControlTrace::masked(
            Segment::Sigma1,
            w.values().iter().map(|v| 3.0 * v).collect(),
            &p.follower.partition,
        )
        .unwrap();
        let (b0, b1) = apply_a(&p, &w3).unwrap();
        for (x, y) in a0.iter().zip(&b0) {
            assert_relative_eq!(3.0 * x, *y, epsilon = 1e-9, max_relative = 1e-9);
        }
        for (x, y) in a1.iter().zip(&b1) {
            assert_relative_eq!(3.0 * x, *y, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn astar_zero_is_zero() {
        let p = tiny_leader(1.0, 5);
        let f = DualPoint::zeros(p.interior_len());
        let out = apply_astar(&p, &f).unwrap();
        assert!(out.trace.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn adjoint_identity_on_tiny_grid() {
        let p = tiny_leader(1.0, 6);
        for s in 0..5 {
            let w = random_trace(&p, 100 + s);
            let f = random_dual(&p, 200 + s);
            let gap = adjointness_gap(&p, &w, &f).unwrap();
            let scale = 1.0
                + p.follower.partition.norm(Segment::Sigma1, w.values())
                    * dual_norm(p.metric(), &f);
            assert!(gap <= 1e-8 * scale, "adjointness gap {gap} (scale {scale})");
        }
    }

    #[test]
    fn astar_decouples_at_large_sigma() {
        // σ → ∞ removes the ψ-coupling: A*f ≈ flux of the plain backward
        // solve with terminal (f⁰, f¹).
        let p = tiny_leader(1e6, 7);
        let f = random_dual(&p, 11);
        let out = apply_astar(&p, &f).unwrap();
        let phi_unc = solve_backward_transpose(
            &p.follower.grid,
            &p.follower.domain,
            p.metric(),
            None,
            Some((&f.f0, &f.f1)),
        )
        .unwrap();
        let flux = boundary_flux(&phi_unc, &p.follower.domain, p.metric(), FluxMethod::Transpose);
        let gap: f64 = out
            .trace
            .iter()
            .zip(&flux)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = flux.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(gap <= 1e-4 * scale.max(1e-30), "uncoupled gap {gap} vs scale {scale}");
    }

    #[test]
    fn dual_objective_zero_and_convexity() {
        let p = tiny_leader(1.0, 8);
        let zero = DualPoint::zeros(p.interior_len());
        assert_relative_eq!(dual_objective(&p, &zero).unwrap(), 0.0, epsilon = 1e-14);
        for s in 0..20 {
            let a = random_dual(&p, 300 + s);
            let b = random_dual(&p, 400 + s);
            let mid = DualPoint::combine(&a, 0.5, &b, 0.5);
            let da = dual_objective(&p, &a).unwrap();
            let db = dual_objective(&p, &b).unwrap();
            let dm = dual_objective(&p, &mid).unwrap();
            assert!(
                dm <= 0.5 * (da + db) + 1e-10,
                "convexity violated: D(mid)={dm} vs avg={}",
                0.5 * (da + db)
            );
        }
    }

    #[test]
    fn minimize_dual_attained_target_returns_zero() {
        // Targets equal the free terminal state: f★ = 0 is optimal.
        let mut p = tiny_leader(1.0, 9);
        let free = p.free_terminal().unwrap();
        p.v0_target = free.v_t.clone();
        p.v1_target = free.v_t_prime.clone();
        let (fstar, log) = minimize_dual(&p, 42).unwrap();
        assert!(log.converged);
        assert_eq!(dual_norm(p.metric(), &fstar), 0.0);
        let rec = recover_leader(&p, &fstar).unwrap();
        assert_eq!(rec.j_value, 0.0);
        let report = controllability_residual(&p, &terminal_state(&rec.state)).unwrap();
        assert!(report.inside);
        assert!(report.d0 <= 1e-12 && report.d1 <= 1e-12);
    }

    #[test]
    fn minimize_dual_refuses_bad_speed_and_delta() {
        let mut p = tiny_leader(1.0, 10);
        p.override_speed_check = false;
        // k = 0.2 passes the speed bound; push it over.
        p.follower.domain = MovingDomain::new(0.5, 1.0).unwrap();
        p.linear_follower.domain = p.follower.domain;
        let err = minimize_dual(&p, 1).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("1 - 1/sqrt(e)"), "message must cite the speed bound: {msg}");

        let p = tiny_leader(1.0, 11).with_delta(0.1).unwrap();
        assert!(minimize_dual(&p, 1).is_err());
    }

    #[test]
    fn recovery_scaling_is_quadratic() {
        let p = tiny_leader(1.0, 12);
        let f = random_dual(&p, 13);
        let rec1 = recover_leader(&p, &f).unwrap();
        let f2 = {
            let mut g = f.clone();
            g.scale(2.0);
            g
        };
        let rec2 = recover_leader(&p, &f2).unwrap();
        assert_relative_eq!(rec2.j_value, 4.0 * rec1.j_value, max_relative = 1e-8);
    }

    #[test]
    fn controllability_residual_boundary_case() {
        let p = tiny_leader(1.0, 14);
        let m = p.interior_len();
        // Terminal exactly at the targets.
        let ts = TerminalState { v_t: p.v0_target.clone(), v_t_prime: p.v1_target.clone() };
        let rep = controllability_residual(&p, &ts).unwrap();
        assert_eq!((rep.d0, rep.d1), (0.0, 0.0));
        assert!(rep.inside);
        // Unit L² bump scaled to ρ₀ on the position only: d0 = ρ₀ exactly.
        let mut bump = vec![0.0; m];
        bump[m / 2] = 1.0;
        let n = p.metric().norm(Space::L2, &bump).unwrap();
        let vt: Vec<f64> = p
            .v0_target
            .iter()
            .zip(&bump)
            .map(|(a, b)| a + p.rho0 * b / n)
            .collect();
        let ts = TerminalState { v_t: vt, v_t_prime: p.v1_target.clone() };
        let rep = controllability_residual(&p, &ts).unwrap();
        assert_relative_eq!(rep.d0, p.rho0, epsilon = 1e-10);
    }
}
