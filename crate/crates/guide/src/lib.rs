//! The book's chapters, compiled as doc-tests so every snippet in `book/`
//! runs under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/solver.md")]
pub mod solver {}
#[doc = include_str!("../../../book/src/linearization.md")]
pub mod linearization {}
#[doc = include_str!("../../../book/src/beams.md")]
pub mod beams {}
#[doc = include_str!("../../../book/src/covectors.md")]
pub mod covectors {}
#[doc = include_str!("../../../book/src/recovery.md")]
pub mod recovery {}
#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
