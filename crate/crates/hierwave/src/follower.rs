//! The follower's problem: given a leader trace w₁ on Σ₁, minimize
//!
//!   J₂(w₁, w₂) = ½ ∫∫ α(t)·(v − v₂)² dy dt + (σ/2) ∫_{Σ₂} w₂²
//!
//! over follower traces w₂ on Σ₂, where v is the state driven by both
//! controls. J₂ is a strictly convex quadratic, so the Nash response
//! w₂ = 𝔉(w₁) is unique; it is computed by conjugate gradients on the
//! normal operator σI + H, each application of H being one forward and one
//! transposed solve. At the minimizer the stationarity identity
//! σ·w₂ = flux(p) holds on Σ₂, with p the adjoint state driven by α(v₂ − v).

use crate::error::{Error, Result};
use crate::geometry::{BoundaryPartition, MovingDomain, Segment};
use crate::spaces::{GridSpec, SpatialMetric};
use crate::wavesolver::{
    boundary_flux, solve_backward_transpose, solve_forward_boundary, ControlTrace, Field,
    FluxMethod,
};
use rand::Rng;

/// Tracking weight σ, target v₂ and the discrete setting they live on.
#[derive(Debug, Clone)]
pub struct FollowerProblem {
    pub sigma: f64,
    pub v2: Field,
    pub partition: BoundaryPartition,
    pub domain: MovingDomain,
    pub grid: GridSpec,
    pub metric: SpatialMetric,
    /// Relative CG tolerance on the J₂ gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl FollowerProblem {
    pub fn new(
        sigma: f64,
        v2: Field,
        partition: BoundaryPartition,
        domain: MovingDomain,
        grid: GridSpec,
        metric: SpatialMetric,
    ) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::config(format!("follower.sigma must be positive, got {sigma}")));
        }
        if v2.grid != grid {
            return Err(Error::shape("v2 target lives on a different grid".to_string()));
        }
        if partition.n_rows() != grid.n_rows() {
            return Err(Error::shape("partition does not match the grid".to_string()));
        }
        Ok(FollowerProblem {
            sigma,
            v2,
            partition,
            domain,
            grid,
            metric,
            tol: 1e-8,
            max_iter: 500,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Same problem with the target replaced (used for the v₂ ≡ 0 solves
    /// behind the leader's linear operator).
    pub fn with_target(&self, v2: Field) -> Result<Self> {
        if v2.grid != self.grid {
            return Err(Error::shape("v2 target lives on a different grid".to_string()));
        }
        let mut p = self.clone();
        p.v2 = v2;
        Ok(p)
    }

    fn check_trace(&self, trace: &ControlTrace, segment: Segment) -> Result<()> {
        if trace.segment != segment {
            return Err(Error::contract(format!(
                "expected a {segment:?} trace, got {:?}",
                trace.segment
            )));
        }
        if trace.values().len() != self.grid.n_rows() {
            return Err(Error::shape("trace does not match the grid".to_string()));
        }
        for (n, v) in trace.values().iter().enumerate() {
            if !self.partition.contains(segment, n) && *v != 0.0 {
                return Err(Error::contract(format!(
                    "trace value {v} at step {n} violates the {segment:?} mask"
                )));
            }
        }
        Ok(())
    }

    /// Source density α(t)·(v₂ − v) for the adjoint solve.
    fn adjoint_source(&self, v: &Field) -> Field {
        let grid = &self.grid;
        let mut q = Field::zeros(*grid);
        for n in 0..grid.n_rows() {
            let a = self.domain.alpha_at(grid.t(n));
            for j in 1..grid.ny {
                q.set(n, j, a * (self.v2.at(n, j) - v.at(n, j)));
            }
        }
        q
    }

    /// Restriction of a full-boundary flux trace to Σ₂, rescaled from the
    /// full trapezoid weights to the segment quadrature.
    fn restrict_flux(&self, flux: &[f64]) -> Vec<f64> {
        (0..self.grid.n_rows())
            .map(|n| {
                let tau_seg = self.partition.quad_weight(Segment::Sigma2, n);
                if tau_seg > 0.0 {
                    self.grid.time_weight(n) / tau_seg * flux[n]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Evaluate J₂ for a control pair.
pub fn eval_j2(problem: &FollowerProblem, w1: &ControlTrace, w2: &ControlTrace) -> Result<f64> {
    problem.check_trace(w1, Segment::Sigma1)?;
    problem.check_trace(w2, Segment::Sigma2)?;
    let grid = &problem.grid;
    let b: Vec<f64> = w1
        .values()
        .iter()
        .zip(w2.values())
        .map(|(a, c)| a + c)
        .collect();
    let v = solve_forward_boundary(grid, &problem.domain, &b, None, None)?;
    let mut tracking = 0.0;
    let m = grid.interior_len();
    let mut diff = vec![0.0; m];
    for n in 0..grid.n_rows() {
        let vr = v.interior_row(n);
        let tr = problem.v2.interior_row(n);
        for i in 0..m {
            diff[i] = vr[i] - tr[i];
        }
        let mdiff = problem.metric.mass.apply(&diff);
        let w = grid.time_weight(n) * problem.domain.alpha_at(grid.t(n));
        tracking += w * crate::spaces::dot(&diff, &mdiff);
    }
    let penalty = problem.partition.inner(Segment::Sigma2, w2.values(), w2.values());
    Ok(0.5 * tracking + 0.5 * problem.sigma * penalty)
}

/// Gradient of J₂ with respect to w₂, as a Σ₂-supported trace:
/// σ·w₂ − flux(p)|Σ₂, p the adjoint driven by the tracking residual.
pub fn grad_j2_w2(
    problem: &FollowerProblem,
    w1: &ControlTrace,
    w2: &ControlTrace,
) -> Result<ControlTrace> {
    problem.check_trace(w1, Segment::Sigma1)?;
    problem.check_trace(w2, Segment::Sigma2)?;
    let grid = &problem.grid;
    let b: Vec<f64> = w1
        .values()
        .iter()
        .zip(w2.values())
        .map(|(a, c)| a + c)
        .collect();
    let v = solve_forward_boundary(grid, &problem.domain, &b, None, None)?;
    let q = problem.adjoint_source(&v);
    let p = solve_backward_transpose(grid, &problem.domain, &problem.metric, Some(&q), None)?;
    let flux = boundary_flux(&p, &problem.domain, &problem.metric, FluxMethod::Transpose);
    let restricted = problem.restrict_flux(&flux);
    let grad: Vec<f64> = (0..grid.n_rows())
        .map(|n| {
            if problem.partition.contains(Segment::Sigma2, n) {
                problem.sigma * w2.get(n) - restricted[n]
            } else {
                0.0
            }
        })
        .collect();
    ControlTrace::masked(Segment::Sigma2, grad, &problem.partition)
}

/// Convergence record of an iterative solve.
#[derive(Debug, Clone)]
pub struct SolveStats {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub threshold: f64,
    pub converged: bool,
}

/// Nash best response together with the optimality-system pair (v, p).
#[derive(Debug, Clone)]
pub struct BestResponse {
    pub w2: ControlTrace,
    pub state: Field,
    pub adjoint: Field,
    pub stats: SolveStats,
}

/// Solve the follower problem for a given leader trace by CG, starting at 0.
pub fn best_response(problem: &FollowerProblem, w1: &ControlTrace) -> Result<BestResponse> {
    best_response_from(problem, w1, None)
}

/// CG solve with an explicit starting trace (used by the uniqueness checks).
pub fn best_response_from(
    problem: &FollowerProblem,
    w1: &ControlTrace,
    start: Option<&ControlTrace>,
) -> Result<BestResponse> {
    problem.check_trace(w1, Segment::Sigma1)?;
    if let Some(s) = start {
        problem.check_trace(s, Segment::Sigma2)?;
    }
    let grid = &problem.grid;
    let rows = grid.n_rows();
    let ip = |u: &[f64], w: &[f64]| problem.partition.inner(Segment::Sigma2, u, w);

    // Normal operator N(w) = σw + flux(p[α·S₂w]) restricted to Σ₂.
    let apply_n = |w: &[f64]| -> Result<Vec<f64>> {
        let v = solve_forward_boundary(grid, &problem.domain, w, None, None)?;
        let mut q = Field::zeros(*grid);
        for n in 0..rows {
            let a = problem.domain.alpha_at(grid.t(n));
            for j in 1..grid.ny {
                q.set(n, j, a * v.at(n, j));
            }
        }
        let p = solve_backward_transpose(grid, &problem.domain, &problem.metric, Some(&q), None)?;
        let flux = boundary_flux(&p, &problem.domain, &problem.metric, FluxMethod::Transpose);
        let restricted = problem.restrict_flux(&flux);
        Ok((0..rows)
            .map(|n| {
                if problem.partition.contains(Segment::Sigma2, n) {
                    problem.sigma * w[n] + restricted[n]
                } else {
                    0.0
                }
            })
            .collect())
    };

    // rhs = −grad at w₂ = 0.
    let zero_w2 = ControlTrace::zeros(Segment::Sigma2, &problem.partition);
    let grad0 = grad_j2_w2(problem, w1, &zero_w2)?;
    let rhs: Vec<f64> = grad0.values().iter().map(|v| -v).collect();
    let grad0_norm = ip(&rhs, &rhs).max(0.0).sqrt();
    let threshold = problem.tol * grad0_norm.max(1.0);

    let mut x: Vec<f64> = match start {
        Some(s) => s.values().to_vec(),
        None => vec![0.0; rows],
    };
    let mut residuals = Vec::new();
    let mut iterations = 0usize;
    let mut converged = false;

    'outer: for _sweep in 0..3 {
        let nx = apply_n(&x)?;
        let mut r: Vec<f64> = rhs.iter().zip(&nx).map(|(b, a)| b - a).collect();
        let mut rr = ip(&r, &r);
        residuals.push(rr.max(0.0).sqrt());
        if rr.sqrt() <= threshold {
            converged = true;
            break 'outer;
        }
        let mut d = r.clone();
        while iterations < problem.max_iter {
            iterations += 1;
            let nd = apply_n(&d)?;
            let dnd = ip(&d, &nd);
            if dnd <= 0.0 {
                break;
            }
            let step = rr / dnd;
            for i in 0..rows {
                x[i] += step * d[i];
                r[i] -= step * nd[i];
            }
            let rr_new = ip(&r, &r);
            residuals.push(rr_new.max(0.0).sqrt());
            if rr_new.sqrt() <= threshold {
                converged = true;
                break 'outer;
            }
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..rows {
                d[i] = r[i] + beta * d[i];
            }
        }
        if iterations >= problem.max_iter {
            break;
        }
    }

    let w2 = ControlTrace::masked(Segment::Sigma2, x, &problem.partition)?;
    // Verify with the true gradient before reporting convergence.
    let grad = grad_j2_w2(problem, w1, &w2)?;
    let true_res = problem.partition.norm(Segment::Sigma2, grad.values());
    residuals.push(true_res);
    if true_res > 10.0 * threshold.max(f64::MIN_POSITIVE) && !converged {
        return Err(Error::NonConvergence {
            solver: "follower CG",
            iterations,
            last: true_res,
            advice: "increase follower.max_iter or loosen follower.tol".to_string(),
            residuals,
        });
    }

    let b: Vec<f64> = w1
        .values()
        .iter()
        .zip(w2.values())
        .map(|(a, c)| a + c)
        .collect();
    let state = solve_forward_boundary(grid, &problem.domain, &b, None, None)?;
    let q = problem.adjoint_source(&state);
    let adjoint =
        solve_backward_transpose(grid, &problem.domain, &problem.metric, Some(&q), None)?;

    Ok(BestResponse {
        w2,
        state,
        adjoint,
        stats: SolveStats { iterations, residuals, threshold, converged },
    })
}

/// Outcome of random perturbation probing around a Nash candidate.
#[derive(Debug, Clone)]
pub struct NashGapReport {
    pub trials: usize,
    pub magnitude: f64,
    pub min_gap: f64,
    pub all_nonnegative: bool,
}

/// Probe the Nash inequality J₂(w₁, w₂+δ) ≥ J₂(w₁, w₂) with random Σ₂
/// perturbations of a prescribed L²(Σ₂) magnitude.
pub fn nash_gap_check(
    problem: &FollowerProblem,
    w1: &ControlTrace,
    w2: &ControlTrace,
    trials: usize,
    magnitude: f64,
    rng: &mut impl Rng,
) -> Result<NashGapReport> {
    let j0 = eval_j2(problem, w1, w2)?;
    let rows = problem.grid.n_rows();
    let mut min_gap = f64::INFINITY;
    for _ in 0..trials.max(1) {
        let mut delta = vec![0.0; rows];
        for (n, d) in delta.iter_mut().enumerate() {
            if problem.partition.contains(Segment::Sigma2, n) {
                *d = rng.gen_range(-1.0..1.0);
            }
        }
        let norm = problem.partition.norm(Segment::Sigma2, &delta);
        if norm > 0.0 {
            let scale = magnitude / norm;
            for d in delta.iter_mut() {
                *d *= scale;
            }
        }
        let perturbed: Vec<f64> = w2.values().iter().zip(&delta).map(|(a, d)| a + d).collect();
        let w2p = ControlTrace::masked(Segment::Sigma2, perturbed, &problem.partition)?;
        let j = eval_j2(problem, w1, &w2p)?;
        min_gap = min_gap.min(j - j0);
    }
    Ok(NashGapReport {
        trials: trials.max(1),
        magnitude,
        min_gap,
        all_nonnegative: min_gap >= -1e-10,
    })
}
