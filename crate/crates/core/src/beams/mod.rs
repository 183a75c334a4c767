//! Gaussian beams along null geodesics.
//!
//! A beam is `u_ρ = χ(|z|/δ) Σ_k ρ^{−k} a_k e^{iρφ}` in Fermi coordinates
//! `(τ, z)`. The phase Hessian comes from the linear `(Y, Z)` system, higher
//! phase and amplitude coefficients from the eikonal and transport hierarchies.
//!
//! With `□ = ∇^a∇_a`,
//!
//! ```text
//! □(𝔞 e^{iρφ}) = e^{iρφ} [ −ρ² ⟨dφ,dφ⟩ 𝔞 + iρ (2⟨dφ,d𝔞⟩ + (□φ) 𝔞) + □𝔞 ]
//! ```

mod eval;
mod hierarchy;
mod riccati;
mod source;

pub use eval::{
    assemble_beam, beam_residual, chi, BeamModes, BeamPoint, BeamProfile, GaussianBeam, ResidualOptions, TauSlice,
};
pub use hierarchy::{
    amplitude_degrees, build_amplitude, build_phase, BeamAmplitude, BeamHierarchy, BeamPhase, PolyTrack,
};
pub use riccati::{default_initial_data, solve_riccati, solve_riccati_window, CMat, RiccatiTrajectory};
pub use source::{beam_neumann_source, beam_slice_max, BeamFootprint, FootprintEntry};
