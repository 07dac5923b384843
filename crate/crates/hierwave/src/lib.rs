//! Stackelberg–Nash boundary control of the 1-D wave equation on an interval
//! whose right endpoint moves at constant speed k.
//!
//! The physical problem lives on the expanding domain (0, 1+kt); the change
//! of variables y = x/(1+kt) maps it to the fixed cylinder (0,1) × (0,T),
//! where a leader control w₁ and a follower control w₂ act on the left
//! boundary. The follower minimizes a tracking cost J₂ (unique Nash response
//! for each leader choice); the leader minimizes its own control energy
//! subject to steering (v(T), v′(T)) into prescribed L² × H⁻¹ balls, solved
//! through a Fenchel–Rockafellar dual with proximal-gradient iterations.
//!
//! Module map:
//! - [`geometry`]: moving-domain coefficients, coordinate maps, boundary partition;
//! - [`spaces`]: grids, mass/stiffness matrices, L²/H¹₀/H⁻¹ norms and Riesz map;
//! - [`wavesolver`]: explicit scheme and its exact discrete transpose;
//! - [`follower`]: Nash best response via conjugate gradients on the adjoint;
//! - [`leader`]: the control-to-terminal-state operator pair (A, A*), the dual
//!   objective, its accelerated proximal solver and the optimality certificates;
//! - [`oracle`]: independent references (method of images, dense tiny-grid solves,
//!   finite differences) used to pin every solver down;
//! - [`verify`]: the aggregated identity/invariant suite behind `hierwave verify`.

pub mod error;
pub mod follower;
pub mod geometry;
pub mod leader;
pub mod oracle;
pub mod presets;
pub mod spaces;
pub mod verify;
pub mod wavesolver;

pub use error::{Error, Result};
pub use geometry::{
    build_partition, BoundaryPartition, ControllabilityReport, MovingDomain, PartitionMode,
    Segment,
};
pub use spaces::{build_metric, GridSpec, Space, SpatialMetric};
pub use wavesolver::{
    boundary_flux, solve_backward_transpose, solve_forward, solve_forward_boundary,
    terminal_state, ControlTrace, Field, FluxMethod, TerminalState,
};
