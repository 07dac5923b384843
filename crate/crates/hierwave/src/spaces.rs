//! Discrete function spaces on the unit interval.
//!
//! Uniform grid y_j = j·Δy, j = 0..Ny. Piecewise-linear finite elements give
//! the mass matrix M = Δy·tridiag(1/6, 2/3, 1/6) and the Dirichlet stiffness
//! matrix K = (1/Δy)·tridiag(−1, 2, −1), both on the Ny−1 interior nodes.
//! These two matrices define every norm used by the solvers:
//!
//!   ‖f‖²_{L²}  = fᵀM f
//!   ‖f‖²_{H¹₀} = fᵀK f
//!   ‖f‖²_{H⁻¹} = (Mf)ᵀ K⁻¹ (Mf)
//!
//! H⁻¹ data is represented by grid samples of a density, paired against H¹₀
//! through M: ⟨g, h⟩_{H⁻¹×H¹₀} = gᵀM h.

use crate::error::{Error, Result};

/// Uniform space-time discretization of the cylinder (0,1) × (0,T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Number of spatial intervals; nodes are 0..=ny.
    pub ny: usize,
    /// Number of time steps; rows are 0..=nt.
    pub nt: usize,
    pub dy: f64,
    pub dt: f64,
    pub t_final: f64,
}

impl GridSpec {
    /// Grid with the time step chosen from the CFL bound Δt ≤ cfl·Δy
    /// (the effective wave speed never exceeds 1) and Nt·Δt = T exactly.
    pub fn with_cfl(ny: usize, t_final: f64, cfl: f64) -> Result<Self> {
        if !(cfl > 0.0 && cfl < 1.0) {
            return Err(Error::config(format!("grid.cfl must lie in (0,1), got {cfl}")));
        }
        if ny < 3 {
            return Err(Error::config(format!("grid.ny must be at least 3, got {ny}")));
        }
        if !(t_final > 0.0) {
            return Err(Error::config(format!("T must be positive, got {t_final}")));
        }
        let dy = 1.0 / ny as f64;
        let nt = (t_final / (cfl * dy)).ceil() as usize;
        let nt = nt.max(2);
        Ok(GridSpec { ny, nt, dy, dt: t_final / nt as f64, t_final })
    }

    /// Grid with explicit step counts. Rejects time steps above the CFL limit.
    pub fn new(ny: usize, nt: usize, t_final: f64) -> Result<Self> {
        if ny < 3 {
            return Err(Error::config(format!("grid.ny must be at least 3, got {ny}")));
        }
        if nt < 2 {
            return Err(Error::config(format!("nt must be at least 2, got {nt}")));
        }
        if !(t_final > 0.0) {
            return Err(Error::config(format!("T must be positive, got {t_final}")));
        }
        let dy = 1.0 / ny as f64;
        let dt = t_final / nt as f64;
        if dt > dy * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "CFL violation: dt = {dt:.6e} exceeds dy = {dy:.6e}"
            )));
        }
        Ok(GridSpec { ny, nt, dy, dt, t_final })
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.dy
    }

    #[inline]
    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    /// Trapezoidal quadrature weight of time row n.
    #[inline]
    pub fn time_weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.nt {
            0.5 * self.dt
        } else {
            self.dt
        }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.ny + 1
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.nt + 1
    }

    /// Number of interior spatial nodes.
    #[inline]
    pub fn interior_len(&self) -> usize {
        self.ny - 1
    }
}

/// Symmetric tridiagonal matrix with constant off-diagonal band.
#[derive(Debug, Clone)]
pub struct Tridiag {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl Tridiag {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n();
        debug_assert_eq!(x.len(), n);
        debug_assert_eq!(out.len(), n);
        for i in 0..n {
            let mut v = self.diag[i] * x[i];
            if i > 0 {
                v += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                v += self.off[i] * x[i + 1];
            }
            out[i] = v;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        self.matvec(x, &mut out);
        out
    }

    /// Thomas solve A x = b (no pivoting; the matrices here are SPD).
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n();
        debug_assert_eq!(b.len(), n);
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = if n > 1 { self.off[0] / self.diag[0] } else { 0.0 };
        d[0] = b[0] / self.diag[0];
        for i in 1..n {
            let m = self.diag[i] - self.off[i - 1] * c[i - 1];
            if i + 1 < n {
                c[i] = self.off[i] / m;
            }
            d[i] = (b[i] - self.off[i - 1] * d[i - 1]) / m;
        }
        let mut x = d;
        for i in (0..n.saturating_sub(1)).rev() {
            let next = x[i + 1];
            x[i] -= c[i] * next;
        }
        x
    }

    /// LDLᵀ pivots; all positive iff the matrix is positive definite.
    pub fn ldlt_pivots(&self) -> Vec<f64> {
        let n = self.n();
        let mut d = vec![0.0; n];
        d[0] = self.diag[0];
        for i in 1..n {
            d[i] = self.diag[i] - self.off[i - 1] * self.off[i - 1] / d[i - 1];
        }
        d
    }
}

/// Which norm to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    L2,
    H10,
    Hm1,
}

/// Mass and stiffness matrices on the interior nodes of a grid.
#[derive(Debug, Clone)]
pub struct SpatialMetric {
    pub ny: usize,
    pub dy: f64,
    pub mass: Tridiag,
    pub stiffness: Tridiag,
}

/// Assemble M and K for the given grid.
pub fn build_metric(grid: &GridSpec) -> Result<SpatialMetric> {
    if grid.ny < 3 {
        return Err(Error::config(format!(
            "metric needs at least 3 spatial intervals, got {}",
            grid.ny
        )));
    }
    let m = grid.interior_len();
    let dy = grid.dy;
    let mass = Tridiag {
        diag: vec![dy * 2.0 / 3.0; m],
        off: vec![dy / 6.0; m - 1],
    };
    let stiffness = Tridiag {
        diag: vec![2.0 / dy; m],
        off: vec![-1.0 / dy; m - 1],
    };
    Ok(SpatialMetric { ny: grid.ny, dy, mass, stiffness })
}

impl SpatialMetric {
    pub fn interior_len(&self) -> usize {
        self.ny - 1
    }

    fn check_interior(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.interior_len() {
            return Err(Error::shape(format!(
                "expected interior vector of length {}, got {}",
                self.interior_len(),
                f.len()
            )));
        }
        Ok(())
    }

    /// L² inner product fᵀM g on interior vectors.
    pub fn l2_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let mg = self.mass.apply(g);
        dot(f, &mg)
    }

    /// H¹₀ inner product fᵀK g on interior vectors.
    pub fn h10_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let kg = self.stiffness.apply(g);
        dot(f, &kg)
    }

    /// Duality pairing ⟨g, h⟩_{H⁻¹×H¹₀} = gᵀM h.
    pub fn duality_pairing(&self, g: &[f64], h: &[f64]) -> f64 {
        let mh = self.mass.apply(h);
        dot(g, &mh)
    }

    /// H⁻¹ inner product (Mf)ᵀK⁻¹(Mg).
    pub fn hm1_inner(&self, f: &[f64], g: &[f64]) -> f64 {
        let mf = self.mass.apply(f);
        let mg = self.mass.apply(g);
        let kinv_mg = self.stiffness.solve(&mg);
        dot(&mf, &kinv_mg)
    }

    /// Riesz map H⁻¹ → H¹₀: r = K⁻¹(M g), so that ⟨g, h⟩_{H⁻¹×H¹₀} = rᵀK h.
    pub fn riesz(&self, g: &[f64]) -> Result<Vec<f64>> {
        self.check_interior(g)?;
        let mg = self.mass.apply(g);
        Ok(self.stiffness.solve(&mg))
    }

    /// Squared norm in the requested space. Accepts an interior vector
    /// (length Ny−1) or a full nodal vector (length Ny+1); in H¹₀ mode a full
    /// vector must vanish at both endpoints.
    pub fn norm_sq(&self, space: Space, f: &[f64]) -> Result<f64> {
        let interior = self.as_interior(space, f)?;
        let v = match space {
            Space::L2 => self.l2_inner(&interior, &interior),
            Space::H10 => self.h10_inner(&interior, &interior),
            Space::Hm1 => self.hm1_inner(&interior, &interior),
        };
        // Round-off can leave a tiny negative value for f ≈ 0.
        Ok(v.max(0.0))
    }

    pub fn norm(&self, space: Space, f: &[f64]) -> Result<f64> {
        Ok(self.norm_sq(space, f)?.sqrt())
    }

    fn as_interior(&self, space: Space, f: &[f64]) -> Result<Vec<f64>> {
        let m = self.interior_len();
        if f.len() == m {
            return Ok(f.to_vec());
        }
        if f.len() == self.ny + 1 {
            if space == Space::H10 {
                let scale = 1.0 + f.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
                if f[0].abs() > 1e-12 * scale || f[self.ny].abs() > 1e-12 * scale {
                    return Err(Error::contract(format!(
                        "H10 norm requires zero boundary values, got f(0)={}, f(1)={}",
                        f[0], f[self.ny]
                    )));
                }
            }
            return Ok(f[1..self.ny].to_vec());
        }
        Err(Error::shape(format!(
            "expected vector of length {} (interior) or {} (full), got {}",
            m,
            self.ny + 1,
            f.len()
        )))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine_interior(grid: &GridSpec, m: usize) -> Vec<f64> {
        (1..grid.ny).map(|j| (m as f64 * PI * grid.y(j)).sin()).collect()
    }

    #[test]
    fn grid_cfl_and_exact_horizon() {
        let g = GridSpec::with_cfl(100, 1.0, 0.8).unwrap();
        assert!(g.dt <= 0.8 * g.dy + 1e-15);
        assert_relative_eq!(g.nt as f64 * g.dt, 1.0, max_relative = 1e-14);
    }

    #[test]
    fn grid_rejects_bad_params() {
        assert!(GridSpec::with_cfl(2, 1.0, 0.8).is_err());
        assert!(GridSpec::with_cfl(10, 1.0, 1.5).is_err());
        assert!(GridSpec::new(10, 5, 1.0).is_err()); // dt = 0.2 > dy = 0.1
    }

    #[test]
    fn stiffness_diagonal_ny4() {
        let g = GridSpec::new(4, 20, 1.0).unwrap();
        let metric = build_metric(&g).unwrap();
        for d in &metric.stiffness.diag {
            assert_relative_eq!(*d, 8.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn mass_row_sums() {
        let g = GridSpec::with_cfl(16, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let ones = vec![1.0; metric.interior_len()];
        let m1 = metric.mass.apply(&ones);
        // Rows away from the boundary integrate the hat partition of unity.
        for v in &m1[1..metric.interior_len() - 1] {
            assert_relative_eq!(*v, g.dy, max_relative = 1e-13);
        }
        assert_relative_eq!(m1[0], g.dy * 5.0 / 6.0, max_relative = 1e-13);
    }

    #[test]
    fn metric_positive_definite() {
        let g = GridSpec::with_cfl(32, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        assert!(metric.mass.ldlt_pivots().iter().all(|&p| p > 0.0));
        assert!(metric.stiffness.ldlt_pivots().iter().all(|&p| p > 0.0));
    }

    #[test]
    fn sine_norms_match_analytic_values() {
        // ‖sin(πy)‖²_{L²} = 1/2, ‖·‖²_{H¹₀} = π²/2, ‖·‖²_{H⁻¹} = 1/(2π²).
        let g = GridSpec::with_cfl(100, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let s = sine_interior(&g, 1);
        let tol = 10.0 * g.dy * g.dy;
        assert_relative_eq!(metric.norm_sq(Space::L2, &s).unwrap(), 0.5, max_relative = tol);
        assert_relative_eq!(
            metric.norm_sq(Space::H10, &s).unwrap(),
            PI * PI / 2.0,
            max_relative = tol
        );
        assert_relative_eq!(
            metric.norm_sq(Space::Hm1, &s).unwrap(),
            1.0 / (2.0 * PI * PI),
            max_relative = tol
        );
    }

    #[test]
    fn eigen_relation_dense_oracle() {
        // K s ≈ π² M s for s = sin(πy), and the lowest generalized eigenvalue
        // of (K, M) from a dense solve sits within O(Δy²) of π².
        let g = GridSpec::with_cfl(50, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let s = sine_interior(&g, 1);
        let ks = metric.stiffness.apply(&s);
        let ms = metric.mass.apply(&s);
        let rayleigh = dot(&s, &ks) / dot(&s, &ms);
        assert_relative_eq!(rayleigh, PI * PI, max_relative = 10.0 * g.dy * g.dy);

        let m = metric.interior_len();
        let dense_k = nalgebra::DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                metric.stiffness.diag[i]
            } else if i.abs_diff(j) == 1 {
                metric.stiffness.off[i.min(j)]
            } else {
                0.0
            }
        });
        let dense_m = nalgebra::DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                metric.mass.diag[i]
            } else if i.abs_diff(j) == 1 {
                metric.mass.off[i.min(j)]
            } else {
                0.0
            }
        });
        // Generalized problem K x = λ M x via Cholesky of M.
        let chol = nalgebra::Cholesky::new(dense_m).unwrap();
        let l_inv = chol.l().try_inverse().unwrap();
        let transformed = &l_inv * dense_k * l_inv.transpose();
        let eig = nalgebra::SymmetricEigen::new(transformed);
        let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(lambda_min, PI * PI, max_relative = 10.0 * g.dy * g.dy);
    }

    #[test]
    fn norm_homogeneity_and_zero() {
        let g = GridSpec::with_cfl(20, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let zero = vec![0.0; metric.interior_len()];
        for space in [Space::L2, Space::H10, Space::Hm1] {
            assert_eq!(metric.norm(space, &zero).unwrap(), 0.0);
        }
        let f = sine_interior(&g, 2);
        let scaled: Vec<f64> = f.iter().map(|v| -3.0 * v).collect();
        for space in [Space::L2, Space::H10, Space::Hm1] {
            assert_relative_eq!(
                metric.norm(space, &scaled).unwrap(),
                3.0 * metric.norm(space, &f).unwrap(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn h10_rejects_nonzero_boundary() {
        let g = GridSpec::with_cfl(10, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let mut full = vec![0.0; g.n_nodes()];
        full[0] = 1.0;
        assert!(metric.norm(Space::H10, &full).is_err());
        assert!(metric.norm(Space::L2, &full).is_ok());
    }

    #[test]
    fn riesz_eigenfunction_and_self_consistency() {
        let g = GridSpec::with_cfl(100, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let s = sine_interior(&g, 1);
        let r = metric.riesz(&s).unwrap();
        // sin(πy) is an eigenfunction: K⁻¹M sin ≈ sin/π².
        for (ri, si) in r.iter().zip(&s) {
            assert_relative_eq!(*ri, si / (PI * PI), epsilon = 10.0 * g.dy * g.dy);
        }
        // ‖g‖²_{H⁻¹} = ⟨g, riesz(g)⟩ to round-off.
        let pair = metric.duality_pairing(&s, &r);
        assert_relative_eq!(pair, metric.norm_sq(Space::Hm1, &s).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn cauchy_schwarz_and_duality_bound() {
        let g = GridSpec::with_cfl(40, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let m = metric.interior_len();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let f: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gv: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = metric.l2_inner(&f, &gv).abs();
            let rhs = metric.norm(Space::L2, &f).unwrap() * metric.norm(Space::L2, &gv).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12));
            let pair = metric.duality_pairing(&f, &gv).abs();
            let bound =
                metric.norm(Space::Hm1, &f).unwrap() * metric.norm(Space::H10, &gv).unwrap();
            assert!(pair <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn pairing_symmetry_under_mass() {
        let g = GridSpec::with_cfl(25, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let m = metric.interior_len();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let f: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let gv: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert_relative_eq!(
                metric.duality_pairing(&f, &gv),
                metric.duality_pairing(&gv, &f),
                max_relative = 1e-12,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn stiffness_solve_roundtrip() {
        let g = GridSpec::with_cfl(60, 1.0, 0.8).unwrap();
        let metric = build_metric(&g).unwrap();
        let m = metric.interior_len();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let kx = metric.stiffness.apply(&x);
        let back = metric.stiffness.solve(&kx);
        let err: f64 = x
            .iter()
            .zip(&back)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale: f64 = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * scale.max(1.0));
    }
}
