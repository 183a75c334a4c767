//! Numerical laboratory for recovering the Taylor coefficients `h_k` of a
//! semilinear wave nonlinearity `□_g u + Σ h_k u^k = 0` from simulated
//! Neumann-to-Dirichlet data.
//!
//! The pipeline: null geometry of a warped Lorentzian metric ([`geometry`]),
//! a leapfrog solver for the linear and semilinear problems ([`wave_solver`]),
//! mixed ε-derivatives and their cascade expansions ([`linearization`]),
//! Gaussian beams along null geodesics ([`beams`]), the four-covector
//! relation that aims them ([`covector_algebra`]), and the stationary-phase
//! extraction of `h_k(q₀)` ([`recovery`]). [`harness`] wires these into
//! configured experiments.

pub mod beams;
pub mod covector_algebra;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod jet;
pub mod linearization;
pub mod recovery;
pub mod wave_solver;

pub use nalgebra;
pub use num_complex::Complex64;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("picard iteration failed: {reason}; contraction ratios {ratios:?}")]
    Picard { reason: String, ratios: Vec<f64> },
    #[error("linearization: {0}")]
    Linearization(String),
    #[error("beam: {0}")]
    Beam(String),
    #[error("covector algebra: {0}")]
    Covector(String),
    #[error("recovery: {0}")]
    Recovery(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
