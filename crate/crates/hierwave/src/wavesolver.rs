//! Three-level scheme for the transformed wave equation
//!
//!   v″ − [(β/α) v_y]_y + (γ/α) v′_y = f   on (0,1) × (0,T),
//!
//! with Dirichlet control at y = 0, homogeneous Dirichlet at y = 1, and the
//! exact algebraic transpose of the whole time march.
//!
//! The step is
//!
//!   (vⁿ⁺¹ − 2vⁿ + vⁿ⁻¹)/Δt² = D⁻(a_{j±½} D⁺vⁿ) − (γ_j/αⁿ)·D₀[(vⁿ⁺¹−vⁿ⁻¹)/(2Δt)] + fⁿ,
//!
//! with a = β/α at half nodes and start-up v¹ = v⁰ + Δt v₁ + (Δt²/2)·rhs(0).
//! The mixed term is centered in time: a backward difference leaves the
//! amplification-root product at |1 − iB| > 1 (B = (γ/α)(Δt/Δy)sinθ), a weak
//! instability that compounds over many steps, while centering keeps the
//! product exactly unimodular. The per-step system (I + (Δt/2)Cₙ)vⁿ⁺¹ = rhs
//! is strictly diagonally dominant tridiagonal (off-diagonal row sums bounded
//! by k < 1) and costs O(Ny).
//!
//! The backward solver composes the transposes of the per-step affine maps in
//! reversed order, so the discrete duality identity
//!
//!   Σₙ τₙ (vⁿ)ᵀ M qⁿ  =  Σₙ τₙ bₙ · fluxₙ(p)
//!
//! holds to round-off for every boundary input b and source density q, where
//! p is the transposed solve driven by q and flux is the exact dual image of
//! the Dirichlet injection (≈ (1/α²)·p_y at y = 0, the 1/α² entering through
//! the β/α stencil coefficient at the wall).

use crate::error::{Error, Result};
use crate::geometry::{BoundaryPartition, MovingDomain, Segment};
use crate::spaces::{GridSpec, SpatialMetric};

/// Space-time grid of samples, row-major in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Self {
        Field { grid, values: vec![0.0; grid.n_rows() * grid.n_nodes()] }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_rows() * grid.n_nodes() {
            return Err(Error::shape(format!(
                "field needs {} values, got {}",
                grid.n_rows() * grid.n_nodes(),
                values.len()
            )));
        }
        Ok(Field { grid, values })
    }

    /// Field with every row equal to a fixed spatial profile.
    pub fn from_profile(grid: GridSpec, profile: &[f64]) -> Result<Self> {
        if profile.len() != grid.n_nodes() {
            return Err(Error::shape(format!(
                "profile needs {} nodes, got {}",
                grid.n_nodes(),
                profile.len()
            )));
        }
        let mut f = Field::zeros(grid);
        for n in 0..grid.n_rows() {
            f.row_mut(n).copy_from_slice(profile);
        }
        Ok(f)
    }

    #[inline]
    pub fn at(&self, n: usize, j: usize) -> f64 {
        self.values[n * self.grid.n_nodes() + j]
    }

    #[inline]
    pub fn set(&mut self, n: usize, j: usize, v: f64) {
        self.values[n * self.grid.n_nodes() + j] = v;
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.grid.n_nodes();
        &self.values[n * w..(n + 1) * w]
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.grid.n_nodes();
        &mut self.values[n * w..(n + 1) * w]
    }

    pub fn interior_row(&self, n: usize) -> &[f64] {
        let w = self.grid.n_nodes();
        &self.values[n * w + 1..(n + 1) * w - 1]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled_add(&mut self, c: f64, other: &Field) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Dirichlet boundary values at y = 0 supported on one control segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrace {
    pub segment: Segment,
    values: Vec<f64>,
}

impl ControlTrace {
    /// Validating constructor: values must vanish outside the segment mask.
    pub fn new(segment: Segment, values: Vec<f64>, partition: &BoundaryPartition) -> Result<Self> {
        if values.len() != partition.n_rows() {
            return Err(Error::shape(format!(
                "trace needs {} samples, got {}",
                partition.n_rows(),
                values.len()
            )));
        }
        for (n, v) in values.iter().enumerate() {
            if !partition.contains(segment, n) && *v != 0.0 {
                return Err(Error::contract(format!(
                    "trace value {v} at step {n} lies outside the {segment:?} mask"
                )));
            }
        }
        Ok(ControlTrace { segment, values })
    }

    /// Zero trace on a segment.
    pub fn zeros(segment: Segment, partition: &BoundaryPartition) -> Self {
        ControlTrace { segment, values: vec![0.0; partition.n_rows()] }
    }

    /// Builds a trace by zeroing everything outside the segment mask.
    pub fn masked(segment: Segment, mut values: Vec<f64>, partition: &BoundaryPartition) -> Result<Self> {
        if values.len() != partition.n_rows() {
            return Err(Error::shape(format!(
                "trace needs {} samples, got {}",
                partition.n_rows(),
                values.len()
            )));
        }
        for (n, v) in values.iter_mut().enumerate() {
            if !partition.contains(segment, n) {
                *v = 0.0;
            }
        }
        Ok(ControlTrace { segment, values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, n: usize) -> f64 {
        self.values[n]
    }
}

/// (v(T), v′(T)) on the interior nodes; v′(T) by backward difference.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalState {
    pub v_t: Vec<f64>,
    pub v_t_prime: Vec<f64>,
}

/// How to extract the boundary co-state functional.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FluxMethod {
    /// Exact transpose image of the Dirichlet injection, scaled so it pairs
    /// with boundary traces under the trapezoidal Σ-quadrature.
    Transpose,
    /// Second-order one-sided derivative (1/α²)·(−3p₀+4p₁−p₂)/(2Δy).
    OneSided,
}

struct Coeffs {
    /// 1 − k²·y²_{j+1/2} on the Ny half nodes.
    half_num: Vec<f64>,
    /// γ_j = −2k·y_j on all nodes.
    gamma: Vec<f64>,
}

fn coeffs(grid: &GridSpec, domain: &MovingDomain) -> Coeffs {
    let k = domain.k;
    let half_num = (0..grid.ny)
        .map(|j| {
            let yh = (j as f64 + 0.5) * grid.dy;
            1.0 - k * k * yh * yh
        })
        .collect();
    let gamma = (0..grid.n_nodes()).map(|j| -2.0 * k * grid.y(j)).collect();
    Coeffs { half_num, gamma }
}

fn check_cfl(grid: &GridSpec) -> Result<()> {
    if grid.dt > grid.dy * (1.0 + 1e-12) {
        return Err(Error::config(format!(
            "CFL violation: dt = {:.6e} exceeds dy = {:.6e}",
            grid.dt, grid.dy
        )));
    }
    Ok(())
}

/// Thomas solve for a general tridiagonal system, in place in `rhs`.
/// `lower[i]` couples row i+1 to column i, `upper[i]` row i to column i+1.
fn solve_general_tridiag(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) {
    let m = diag.len();
    let mut c = vec![0.0; m];
    c[0] = if m > 1 { upper[0] / diag[0] } else { 0.0 };
    rhs[0] /= diag[0];
    for i in 1..m {
        let piv = diag[i] - lower[i - 1] * c[i - 1];
        if i + 1 < m {
            c[i] = upper[i] / piv;
        }
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / piv;
    }
    for i in (0..m - 1).rev() {
        let next = rhs[i + 1];
        rhs[i] -= c[i] * next;
    }
}

/// Off-diagonals of the implicit factor I + (Δt/2)Ĉₙ on the interior nodes.
/// Row i is node j = i+1 with (Ĉx)_j = (γ_j/α)(x_{j+1} − x_{j−1})/(2Δy).
fn implicit_factor(c: &Coeffs, grid: &GridSpec, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let m = grid.interior_len();
    let scale = grid.dt / (4.0 * grid.dy * alpha);
    let upper: Vec<f64> = (0..m - 1).map(|i| scale * c.gamma[i + 1]).collect();
    let lower: Vec<f64> = (0..m - 1).map(|i| -scale * c.gamma[i + 2]).collect();
    (lower, upper)
}

/// Boundary coupling of the implicit factor: coefficient of b on the first
/// interior row, c̃ₙ = Δt·γ₁/(4Δy·αₙ).
#[inline]
fn boundary_mix(c: &Coeffs, grid: &GridSpec, alpha: f64) -> f64 {
    grid.dt * c.gamma[1] / (4.0 * grid.dy * alpha)
}

/// Forward solve driven by a raw boundary trace at y = 0.
pub fn solve_forward_boundary(
    grid: &GridSpec,
    domain: &MovingDomain,
    boundary: &[f64],
    source: Option<&Field>,
    init: Option<(&[f64], &[f64])>,
) -> Result<Field> {
    check_cfl(grid)?;
    if boundary.len() != grid.n_rows() {
        return Err(Error::shape(format!(
            "boundary trace needs {} samples, got {}",
            grid.n_rows(),
            boundary.len()
        )));
    }
    if let Some(src) = source {
        if src.grid != *grid {
            return Err(Error::shape("source field lives on a different grid".to_string()));
        }
    }
    let ny = grid.ny;
    let nodes = grid.n_nodes();
    if let Some((v0, v1)) = init {
        if v0.len() != nodes || v1.len() != nodes {
            return Err(Error::shape(format!(
                "initial data must have {} nodes, got {} and {}",
                nodes,
                v0.len(),
                v1.len()
            )));
        }
    }

    let c = coeffs(grid, domain);
    let dy2 = grid.dy * grid.dy;
    let dt = grid.dt;
    let mut field = Field::zeros(*grid);

    // Row 0: initial displacement with Dirichlet rows enforced.
    if let Some((v0, _)) = init {
        field.row_mut(0).copy_from_slice(v0);
    }
    field.set(0, 0, boundary[0]);
    field.set(0, ny, 0.0);

    // Start-up row: Taylor step using the initial velocity directly.
    {
        let t0 = grid.t(0);
        let alpha0 = domain.alpha_at(t0);
        let inv_a2 = 1.0 / (alpha0 * alpha0);
        let zeros = vec![0.0; nodes];
        let v1 = init.map(|(_, v1)| v1).unwrap_or(&zeros);
        let prev = field.row(0).to_vec();
        let row1 = field.row_mut(1);
        for j in 1..ny {
            let a_r = c.half_num[j] * inv_a2;
            let a_l = c.half_num[j - 1] * inv_a2;
            let lap = (a_r * (prev[j + 1] - prev[j]) - a_l * (prev[j] - prev[j - 1])) / dy2;
            let mix = -(c.gamma[j] / alpha0) * (v1[j + 1] - v1[j - 1]) / (2.0 * grid.dy);
            let f0 = source.map_or(0.0, |s| s.at(0, j));
            row1[j] = prev[j] + dt * v1[j] + 0.5 * dt * dt * (lap + mix + f0);
        }
        row1[0] = boundary[1];
        row1[ny] = 0.0;
    }

    let mut rhs = vec![0.0; grid.interior_len()];
    for n in 1..grid.nt {
        let tn = grid.t(n);
        let alpha = domain.alpha_at(tn);
        let inv_a2 = 1.0 / (alpha * alpha);
        let w = nodes;
        let (head, tail) = field.values.split_at_mut((n + 1) * w);
        let prev2 = &head[(n - 1) * w..n * w];
        let prev = &head[n * w..(n + 1) * w];
        let next = &mut tail[..w];
        // rhs = 2vⁿ − vⁿ⁻¹ + Δt²(D⁻(a D⁺vⁿ) + fⁿ) + (Δt/2)Cₙvⁿ⁻¹,
        // reading the Dirichlet columns of both old rows directly.
        for j in 1..ny {
            let a_r = c.half_num[j] * inv_a2;
            let a_l = c.half_num[j - 1] * inv_a2;
            let lap = (a_r * (prev[j + 1] - prev[j]) - a_l * (prev[j] - prev[j - 1])) / dy2;
            let f = source.map_or(0.0, |s| s.at(n, j));
            let mix_old = (c.gamma[j] / alpha) * (prev2[j + 1] - prev2[j - 1]) / (2.0 * grid.dy);
            rhs[j - 1] =
                2.0 * prev[j] - prev2[j] + dt * dt * (lap + f) + 0.5 * dt * mix_old;
        }
        // New-level boundary coupling of the centered mixed term.
        rhs[0] += boundary_mix(&c, grid, alpha) * boundary[n + 1];
        let (lower, upper) = implicit_factor(&c, grid, alpha);
        let diag = vec![1.0; grid.interior_len()];
        solve_general_tridiag(&lower, &diag, &upper, &mut rhs);
        next[1..ny].copy_from_slice(&rhs);
        next[0] = boundary[n + 1];
        next[ny] = 0.0;

        if (n + 1) % 100 == 0 && !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Instability { step: n + 1 });
        }
    }
    if !field.values.iter().all(|v| v.is_finite()) {
        return Err(Error::Instability { step: grid.nt });
    }
    Ok(field)
}

/// Forward solve with the boundary given as control traces (superposed).
pub fn solve_forward(
    grid: &GridSpec,
    domain: &MovingDomain,
    controls: &[&ControlTrace],
    source: Option<&Field>,
    init: Option<(&[f64], &[f64])>,
) -> Result<Field> {
    let mut b = vec![0.0; grid.n_rows()];
    for trace in controls {
        if trace.values.len() != grid.n_rows() {
            return Err(Error::shape(format!(
                "trace needs {} samples, got {}",
                grid.n_rows(),
                trace.values.len()
            )));
        }
        for (acc, v) in b.iter_mut().zip(&trace.values) {
            *acc += v;
        }
    }
    solve_forward_boundary(grid, domain, &b, source, init)
}

/// Interior tridiagonal part of the half-node flux stencil at one time row.
fn apply_a_interior(c: &Coeffs, inv_a2: f64, dy2: f64, x: &[f64], out: &mut [f64]) {
    let m = x.len();
    for i in 0..m {
        // interior node j = i + 1; intervals j-1/2 -> half_num[j-1], j+1/2 -> half_num[j]
        let j = i + 1;
        let a_r = c.half_num[j] * inv_a2;
        let a_l = c.half_num[j - 1] * inv_a2;
        let right = if i + 1 < m { x[i + 1] } else { 0.0 };
        let left = if i > 0 { x[i - 1] } else { 0.0 };
        out[i] = (a_r * (right - x[i]) - a_l * (x[i] - left)) / dy2;
    }
}

/// Transpose of the interior mixed-term stencil Ĉ at one time row.
/// Ĉ has entries Ĉ_{j,j±1} = ±γ_j/(2Δy·α), so
/// (Ĉᵀx)_j = (γ_{j−1}·x_{j−1} − γ_{j+1}·x_{j+1})/(2Δy·α).
fn apply_ct_interior(c: &Coeffs, alpha: f64, dy: f64, x: &[f64], out: &mut [f64]) {
    let m = x.len();
    for i in 0..m {
        let j = i + 1;
        let mut v = 0.0;
        if i > 0 {
            v += c.gamma[j - 1] * x[i - 1];
        }
        if i + 1 < m {
            v -= c.gamma[j + 1] * x[i + 1];
        }
        out[i] = v / (2.0 * dy * alpha);
    }
}

/// Solve F̂ₙᵀ x = rhs in place, F̂ₙ = I + (Δt/2)Ĉₙ.
fn solve_implicit_transposed(c: &Coeffs, grid: &GridSpec, alpha: f64, rhs: &mut [f64]) {
    let (lower, upper) = implicit_factor(c, grid, alpha);
    let diag = vec![1.0; rhs.len()];
    // Transposing swaps the bands.
    solve_general_tridiag(&upper, &diag, &lower, rhs);
}

/// Adjoint propagation: exact transposes of the forward per-step maps,
/// composed in reversed time order. `source` is a density q; the trapezoidal
/// time weights and the interior mass matrix are applied internally, so the
/// result pairs against forward solves in the weighted space-time product.
/// `terminal` prescribes (p(T), p′(T)) on the interior nodes.
pub fn solve_backward_transpose(
    grid: &GridSpec,
    domain: &MovingDomain,
    metric: &SpatialMetric,
    source: Option<&Field>,
    terminal: Option<(&[f64], &[f64])>,
) -> Result<Field> {
    check_cfl(grid)?;
    if metric.ny != grid.ny {
        return Err(Error::contract(
            "metric was built for a different spatial grid".to_string(),
        ));
    }
    if let Some(src) = source {
        if src.grid != *grid {
            return Err(Error::shape("source field lives on a different grid".to_string()));
        }
    }
    let m = grid.interior_len();
    if let Some((pt, ptp)) = terminal {
        if pt.len() != m || ptp.len() != m {
            return Err(Error::shape(format!(
                "terminal data must have {m} interior nodes, got {} and {}",
                pt.len(),
                ptp.len()
            )));
        }
    }

    let lambda = transpose_multipliers(grid, domain, metric, source, terminal);

    // Physical adjoint field. The multiplier row λⁿ sits at hyperbolic time
    // t_{n−1} (λ⁰ is the initial-data sensitivity, not a wave value), so the
    // stored rows are p(t_n) = Δt·M⁻¹λ^{n+1}; the terminal row is the
    // prescribed p(T).
    let mut p = Field::zeros(*grid);
    for n in 0..grid.nt {
        let row = metric.mass.solve(&lambda[n + 1]);
        for (i, v) in row.iter().enumerate() {
            p.set(n, i + 1, grid.dt * v);
        }
    }
    if let Some((pt, _)) = terminal {
        for (i, v) in pt.iter().enumerate() {
            p.set(grid.nt, i + 1, *v);
        }
    }
    if !p.values.iter().all(|v| v.is_finite()) {
        return Err(Error::Instability { step: 0 });
    }
    Ok(p)
}

/// Raw multiplier rows λⁿ (interior) of the transposed recursion.
fn transpose_multipliers(
    grid: &GridSpec,
    domain: &MovingDomain,
    metric: &SpatialMetric,
    source: Option<&Field>,
    terminal: Option<(&[f64], &[f64])>,
) -> Vec<Vec<f64>> {
    let m = grid.interior_len();
    let nt = grid.nt;
    let c = coeffs(grid, domain);
    let dy2 = grid.dy * grid.dy;
    let dt = grid.dt;

    // Seeds: s^n = τ_n · M q^n plus the terminal-functional rows.
    let mut seeds: Vec<Vec<f64>> = (0..=nt)
        .map(|n| match source {
            Some(q) => {
                let mq = metric.mass.apply(q.interior_row(n));
                let tau = grid.time_weight(n);
                mq.iter().map(|v| tau * v).collect()
            }
            None => vec![0.0; m],
        })
        .collect();
    if let Some((pt, ptp)) = terminal {
        let enc: Vec<f64> = pt.iter().zip(ptp).map(|(a, b)| a / dt - b).collect();
        let m_enc = metric.mass.apply(&enc);
        for (s, v) in seeds[nt].iter_mut().zip(&m_enc) {
            *s += v;
        }
        let m_pt = metric.mass.apply(pt);
        for (s, v) in seeds[nt - 1].iter_mut().zip(&m_pt) {
            *s -= v / dt;
        }
    }

    let mut lambda: Vec<Vec<f64>> = vec![vec![0.0; m]; nt + 1];

    let mut buf_a = vec![0.0; m];
    let mut buf_c = vec![0.0; m];

    // Constraints C_m (m ≥ 2) carry the implicit factor F̂_{m−1} on row m, so
    // each transposed step solves
    //   F̂_{m−1}ᵀ λ^m = s^m + (2I + Δt²Â_m)λ^{m+1} − (I − (Δt/2)Ĉ_{m+1})ᵀλ^{m+2}.
    {
        let mut row = seeds[nt].clone();
        let alpha = domain.alpha_at(grid.t(nt - 1));
        solve_implicit_transposed(&c, grid, alpha, &mut row);
        lambda[nt] = row;
    }
    for n in (2..nt).rev() {
        let alpha_n = domain.alpha_at(grid.t(n));
        let inv_a2 = 1.0 / (alpha_n * alpha_n);
        let mut row = seeds[n].clone();
        apply_a_interior(&c, inv_a2, dy2, &lambda[n + 1], &mut buf_a);
        for i in 0..m {
            row[i] += 2.0 * lambda[n + 1][i] + dt * dt * buf_a[i];
        }
        if n + 2 <= nt {
            let alpha_next = domain.alpha_at(grid.t(n + 1));
            apply_ct_interior(&c, alpha_next, grid.dy, &lambda[n + 2], &mut buf_c);
            for i in 0..m {
                row[i] -= lambda[n + 2][i] - 0.5 * dt * buf_c[i];
            }
        }
        let alpha_fac = domain.alpha_at(grid.t(n - 1));
        solve_implicit_transposed(&c, grid, alpha_fac, &mut row);
        lambda[n] = row;
    }

    // Row 1 comes from the explicit Taylor start-up, no implicit factor.
    {
        let alpha1 = domain.alpha_at(grid.t(1));
        let inv_a2 = 1.0 / (alpha1 * alpha1);
        let mut row = seeds[1].clone();
        apply_a_interior(&c, inv_a2, dy2, &lambda[2], &mut buf_a);
        for i in 0..m {
            row[i] += 2.0 * lambda[2][i] + dt * dt * buf_a[i];
        }
        if nt >= 3 {
            let alpha2 = domain.alpha_at(grid.t(2));
            apply_ct_interior(&c, alpha2, grid.dy, &lambda[3], &mut buf_c);
            for i in 0..m {
                row[i] -= lambda[3][i] - 0.5 * dt * buf_c[i];
            }
        }
        lambda[1] = row;
    }

    // λ⁰ = s⁰ + (I + (Δt²/2)A₀)λ¹ − (I − (Δt/2)Ĉ₁)ᵀλ².
    {
        let alpha0 = domain.alpha_at(0.0);
        let inv_a2 = 1.0 / (alpha0 * alpha0);
        let mut row = seeds[0].clone();
        apply_a_interior(&c, inv_a2, dy2, &lambda[1], &mut buf_a);
        for i in 0..m {
            row[i] += lambda[1][i] + 0.5 * dt * dt * buf_a[i];
        }
        let alpha1 = domain.alpha_at(grid.t(1));
        apply_ct_interior(&c, alpha1, grid.dy, &lambda[2], &mut buf_c);
        for i in 0..m {
            row[i] -= lambda[2][i] - 0.5 * dt * buf_c[i];
        }
        lambda[0] = row;
    }
    lambda
}

/// Boundary co-state functional of an adjoint field, as a trace at y = 0.
pub fn boundary_flux(
    field: &Field,
    domain: &MovingDomain,
    metric: &SpatialMetric,
    method: FluxMethod,
) -> Vec<f64> {
    let grid = &field.grid;
    match method {
        FluxMethod::OneSided => (0..grid.n_rows())
            .map(|n| {
                let a = domain.alpha_at(grid.t(n));
                (-3.0 * field.at(n, 0) + 4.0 * field.at(n, 1) - field.at(n, 2))
                    / (2.0 * grid.dy * a * a)
            })
            .collect(),
        FluxMethod::Transpose => {
            let nt = grid.nt;
            let dt = grid.dt;
            let k = domain.k;
            // Multipliers from the stored rows: λ^{n+1} = M·p(t_n)/Δt.
            // lam1[n] = λ^{n+1} at the first interior node, n = 0..nt−1.
            let lam1: Vec<f64> = (0..nt)
                .map(|n| {
                    let mp = metric.mass.apply(field.interior_row(n));
                    mp[0] / dt
                })
                .collect();
            let gamma1 = -2.0 * k * grid.dy;
            let half0 = 1.0 - k * k * (0.5 * grid.dy) * (0.5 * grid.dy);
            let a_hat = |n: usize| {
                let a = domain.alpha_at(grid.t(n));
                half0 / (a * a) / (grid.dy * grid.dy)
            };
            // Boundary coupling of the centered mixed term, c̃ₙ.
            let c_mix = |n: usize| dt * gamma1 / (4.0 * grid.dy * domain.alpha_at(grid.t(n)));
            // gᵣ = c̃_{r−1}·λʳ + Δt²·âᵣ·λ^{r+1} − c̃_{r+1}·λ^{r+2},
            // with λ^m read from the stored row m−1.
            let mut g = vec![0.0; nt + 1];
            g[0] = 0.5 * dt * dt * a_hat(0) * lam1[0];
            if nt >= 2 {
                g[0] -= c_mix(1) * lam1[1];
            }
            for r in 1..=nt {
                let mut v = 0.0;
                if r >= 2 {
                    v += c_mix(r - 1) * lam1[r - 1];
                }
                if r < nt {
                    v += dt * dt * a_hat(r) * lam1[r];
                }
                if r + 2 <= nt {
                    v -= c_mix(r + 1) * lam1[r + 1];
                }
                g[r] = v;
            }
            (0..=nt).map(|n| g[n] / grid.time_weight(n)).collect()
        }
    }
}

/// Terminal pair (v(T), v′(T)) with v′(T) by first-order backward difference.
pub fn terminal_state(field: &Field) -> TerminalState {
    let grid = &field.grid;
    let nt = grid.nt;
    let last = field.interior_row(nt);
    let prev = field.interior_row(nt - 1);
    TerminalState {
        v_t: last.to_vec(),
        v_t_prime: last
            .iter()
            .zip(prev)
            .map(|(a, b)| (a - b) / grid.dt)
            .collect(),
    }
}

/// Weighted space-time inner product Σₙ τₙ (vⁿ)ᵀ M qⁿ over interior nodes.
pub fn spacetime_inner(metric: &SpatialMetric, v: &Field, q: &Field) -> f64 {
    let grid = &v.grid;
    let mut acc = 0.0;
    for n in 0..grid.n_rows() {
        let mq = metric.mass.apply(q.interior_row(n));
        acc += grid.time_weight(n) * crate::spaces::dot(v.interior_row(n), &mq);
    }
    acc
}

/// Full-boundary trapezoidal pairing Σₙ τₙ uₙ wₙ.
pub fn boundary_inner(grid: &GridSpec, u: &[f64], w: &[f64]) -> f64 {
    (0..grid.n_rows())
        .map(|n| grid.time_weight(n) * u[n] * w[n])
        .sum()
}
