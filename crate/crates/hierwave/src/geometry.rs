//! Moving-domain geometry.
//!
//! The physical domain is the expanding interval Ω_t = (0, α_k(t)) with
//! α_k(t) = 1 + kt and endpoint speed 0 ≤ k < 1. The change of variables
//! y = x/α_k(t) maps the space-time region onto the fixed cylinder
//! Q = (0,1) × (0,T), where the wave operator picks up the coefficients
//!
//!   β_k(y,t) = (1 − k²y²)/α_k(t),   γ_k(y) = −2ky,
//!
//! and the transformed equation reads v″ − [(β/α) v_y]_y + (γ/α) v′_y = f.
//! Initial velocity data transforms as v₁(y) = u₁(y) + k·y·u₀′(y).

use crate::error::{Error, Result};
use crate::spaces::GridSpec;
use crate::wavesolver::Field;

/// Interval with one fixed endpoint and one moving at constant speed k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingDomain {
    /// Endpoint speed. k = 0 is the fixed cylinder, kept for oracle mode.
    pub k: f64,
    /// Time horizon T.
    pub t_final: f64,
}

/// 1 − 1/√e, the admissible-speed bound for the leader problem.
pub fn speed_bound() -> f64 {
    1.0 - (-0.5f64).exp()
}

impl MovingDomain {
    pub fn new(k: f64, t_final: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&k) {
            return Err(Error::config(format!("k must satisfy 0 <= k < 1, got {k}")));
        }
        if !(t_final > 0.0) {
            return Err(Error::config(format!("T must be positive, got {t_final}")));
        }
        Ok(MovingDomain { k, t_final })
    }

    /// α_k(t) = 1 + kt.
    pub fn alpha(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.alpha_at(t))
    }

    #[inline]
    pub(crate) fn alpha_at(&self, t: f64) -> f64 {
        1.0 + self.k * t
    }

    /// (β_k(y,t), γ_k(y)).
    pub fn coefficients(&self, y: f64, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::domain(format!("y = {y} outside [0,1]")));
        }
        Ok((self.beta_at(y, t), self.gamma_at(y)))
    }

    #[inline]
    pub(crate) fn beta_at(&self, y: f64, t: f64) -> f64 {
        (1.0 - self.k * self.k * y * y) / self.alpha_at(t)
    }

    #[inline]
    pub(crate) fn gamma_at(&self, y: f64) -> f64 {
        -2.0 * self.k * y
    }

    /// Effective squared wave speed β/α = (1 − k²y²)/α².
    #[inline]
    pub fn wave_coeff(&self, y: f64, t: f64) -> f64 {
        let a = self.alpha_at(t);
        (1.0 - self.k * self.k * y * y) / (a * a)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let slack = 1e-12 * (1.0 + self.t_final);
        if t < -slack || t > self.t_final + slack {
            return Err(Error::domain(format!(
                "t = {t} outside [0, {}]",
                self.t_final
            )));
        }
        Ok(())
    }

    /// Checks the admissible-speed condition 0 < k < 1 − 1/√e required by
    /// the leader's controllability argument. The horizon condition of the
    /// underlying theory references a constant that is inherited from prior
    /// work and not available here, so only a heuristic warning (T below the
    /// cylinder round-trip time 2) is reported; T itself is never rejected.
    pub fn validate_controllability_params(&self) -> ControllabilityReport {
        let bound = speed_bound();
        let speed_ok = self.k > 0.0 && self.k < bound;
        let horizon_warning = if self.t_final < 2.0 {
            Some(format!(
                "T = {} is below the cylinder round-trip time 2; approximate controllability may need a longer horizon",
                self.t_final
            ))
        } else {
            None
        };
        ControllabilityReport {
            k: self.k,
            t_final: self.t_final,
            speed_bound: bound,
            speed_ok,
            horizon_warning,
        }
    }

    /// Pull initial data (u₀, u₁) on Ω₀ = (0,1) back to cylinder data
    /// (v₀, v₁) = (u₀, u₁ + k·y·u₀′), with u₀′ by second-order differences.
    pub fn pullback_initial(
        &self,
        grid: &GridSpec,
        u0: &[f64],
        u1: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = grid.n_nodes();
        if u0.len() != n || u1.len() != n {
            return Err(Error::shape(format!(
                "initial data must have {} nodes, got {} and {}",
                n,
                u0.len(),
                u1.len()
            )));
        }
        let du0 = second_order_derivative(u0, grid.dy);
        let v0 = u0.to_vec();
        let v1: Vec<f64> = (0..n)
            .map(|j| u1[j] + self.k * grid.y(j) * du0[j])
            .collect();
        Ok((v0, v1))
    }

    /// Report a cylinder field in the original coordinates: at each time row
    /// the samples sit on the stretched grid x_j = j·Δy·α_k(t_n).
    pub fn pushforward_state(&self, field: &Field) -> MovingFrameField {
        let grid = field.grid;
        let mut x = Vec::with_capacity(grid.n_rows() * grid.n_nodes());
        for n in 0..grid.n_rows() {
            let a = self.alpha_at(grid.t(n));
            for j in 0..grid.n_nodes() {
                x.push(grid.y(j) * a);
            }
        }
        MovingFrameField {
            grid,
            x,
            values: field.values().to_vec(),
        }
    }

    /// Sample u(x, t_n) = v(x/α, t_n) by linear interpolation in y.
    pub fn sample_physical(&self, field: &Field, row: usize, x: f64) -> Result<f64> {
        let grid = field.grid;
        if row >= grid.n_rows() {
            return Err(Error::domain(format!("time row {row} out of range")));
        }
        let a = self.alpha_at(grid.t(row));
        let y = x / a;
        if !(-1e-12..=1.0 + 1e-12).contains(&y) {
            return Err(Error::domain(format!("x = {x} outside [0, {a}]")));
        }
        let pos = (y.clamp(0.0, 1.0)) / grid.dy;
        let j = (pos.floor() as usize).min(grid.ny - 1);
        let s = pos - j as f64;
        Ok((1.0 - s) * field.at(row, j) + s * field.at(row, j + 1))
    }
}

/// Centered second-order derivative, one-sided second-order at the ends.
fn second_order_derivative(f: &[f64], dy: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dy);
    for j in 1..n - 1 {
        d[j] = (f[j + 1] - f[j - 1]) / (2.0 * dy);
    }
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dy);
    d
}

/// Outcome of the parameter check for the leader problem.
#[derive(Debug, Clone)]
pub struct ControllabilityReport {
    pub k: f64,
    pub t_final: f64,
    pub speed_bound: f64,
    pub speed_ok: bool,
    pub horizon_warning: Option<String>,
}

/// A cylinder field re-expressed on the moving physical grid.
#[derive(Debug, Clone)]
pub struct MovingFrameField {
    pub grid: GridSpec,
    /// x-coordinates, row-major like the values.
    pub x: Vec<f64>,
    pub values: Vec<f64>,
}

impl MovingFrameField {
    pub fn at(&self, n: usize, j: usize) -> (f64, f64) {
        let idx = n * self.grid.n_nodes() + j;
        (self.x[idx], self.values[idx])
    }
}

/// Which part of the left boundary a control acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Sigma1,
    Sigma2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartitionMode {
    /// Σ₁ = Σ₂ = the whole left boundary; the two controls superpose.
    Overlap,
    /// Disjoint split of the left boundary at a given time.
    Split,
}

/// Per-time-step membership of the two control segments at y = 0.
#[derive(Debug, Clone)]
pub struct BoundaryPartition {
    pub mode: PartitionMode,
    pub split_time: Option<f64>,
    nt: usize,
    dt: f64,
    sigma1: Vec<bool>,
    sigma2: Vec<bool>,
    range1: (usize, usize),
    range2: (usize, usize),
}

/// Build the partition masks for a grid. Split mode requires
/// 0 < split_time < T; the time step containing split_time goes to Σ₁.
pub fn build_partition(
    mode: PartitionMode,
    grid: &GridSpec,
    split_time: Option<f64>,
) -> Result<BoundaryPartition> {
    let nt = grid.nt;
    match mode {
        PartitionMode::Overlap => Ok(BoundaryPartition {
            mode,
            split_time: None,
            nt,
            dt: grid.dt,
            sigma1: vec![true; nt + 1],
            sigma2: vec![true; nt + 1],
            range1: (0, nt),
            range2: (0, nt),
        }),
        PartitionMode::Split => {
            let ts = split_time.ok_or_else(|| {
                Error::config("partition.split_time is required in split mode".to_string())
            })?;
            if !(ts > 0.0 && ts < grid.t_final) {
                return Err(Error::config(format!(
                    "partition.split_time = {ts} must lie strictly inside (0, {})",
                    grid.t_final
                )));
            }
            let split_node = ((ts / grid.dt) - 1e-9).ceil().max(1.0) as usize;
            if split_node >= nt {
                return Err(Error::config(format!(
                    "partition.split_time = {ts} leaves no time steps for the follower segment"
                )));
            }
            let mut sigma1 = vec![false; nt + 1];
            let mut sigma2 = vec![false; nt + 1];
            for (n, s) in sigma1.iter_mut().enumerate() {
                *s = n <= split_node;
            }
            for (n, s) in sigma2.iter_mut().enumerate() {
                *s = n > split_node;
            }
            Ok(BoundaryPartition {
                mode,
                split_time: Some(ts),
                nt,
                dt: grid.dt,
                sigma1,
                sigma2,
                range1: (0, split_node),
                range2: (split_node + 1, nt),
            })
        }
    }
}

impl BoundaryPartition {
    pub fn n_rows(&self) -> usize {
        self.nt + 1
    }

    pub fn mask(&self, segment: Segment) -> &[bool] {
        match segment {
            Segment::Sigma1 => &self.sigma1,
            Segment::Sigma2 => &self.sigma2,
        }
    }

    #[inline]
    pub fn contains(&self, segment: Segment, n: usize) -> bool {
        self.mask(segment)[n]
    }

    fn range(&self, segment: Segment) -> (usize, usize) {
        match segment {
            Segment::Sigma1 => self.range1,
            Segment::Sigma2 => self.range2,
        }
    }

    /// Trapezoidal quadrature weight of node n within a segment
    /// (half weights at the segment ends, zero outside).
    pub fn quad_weight(&self, segment: Segment, n: usize) -> f64 {
        if !self.contains(segment, n) {
            return 0.0;
        }
        let (lo, hi) = self.range(segment);
        if n == lo || n == hi {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    /// Σ-weighted inner product of two full-length traces over one segment.
    pub fn inner(&self, segment: Segment, u: &[f64], w: &[f64]) -> f64 {
        (0..self.n_rows())
            .map(|n| self.quad_weight(segment, n) * u[n] * w[n])
            .sum()
    }

    pub fn norm(&self, segment: Segment, u: &[f64]) -> f64 {
        self.inner(segment, u, u).max(0.0).sqrt()
    }
}
