//! Leapfrog solver for `□_g u = F` and `□_g u + H(x, u) = 0` on `[0,T] × [0,1]^n`
//! with Neumann data, and the simulated Neumann-to-Dirichlet map.
//!
//! The scheme is a vertex-centred finite volume discretization of the
//! divergence form `∂_t(A ∂_t u) = ∂_a(b ∂_a u) − √|g| F` with half-width dual
//! cells on the faces, where the Neumann flux enters directly.

mod boundary;
mod grid;
mod linear;
mod nonlinearity;
mod norms;
mod semilinear;

pub use boundary::{boundary_pairing, smooth_ramp, BoundaryData, BoundaryLayout, BoundaryTrace, NeumannSource};
pub use grid::{SpacetimeGrid, MAX_COURANT};
pub use linear::{
    discrete_energy, solve_linear, solve_with_initial, DenseForcing, FieldSolution, FnForcing, Forcing, NoForcing,
    SolveMode,
};
pub use nonlinearity::{CoefficientField, NonlinearityProfile, SampledField, SampledProfile};
pub use norms::{z_norm, z_norm_of, ZNorm};
pub use semilinear::{
    nd_map, smallness_threshold, solve_semilinear, PicardOptions, SemilinearSolution, SmallnessThreshold,
};
