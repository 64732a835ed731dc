//! Centroids of metameric suites.
//!
//! Given a step-function responsivity `w : [a,b] -> R^m` and a response
//! `y0`, the set of functions `f` with values in `[0,1]` and `∫ f w = y0`
//! is a convex set whose centroid (for the uniform-grid filtration) is
//! `σ(⟨τ0, w⟩)`, where `τ0` is the root of the saddlepoint equation
//! `∫ σ(⟨τ, w⟩) w = y0`. This crate solves for `τ0`, evaluates the
//! associated section-volume asymptotics, and provides independent Monte
//! Carlo and exact-density oracles, plus a colorimetry layer for spectral
//! reflectance and light-source estimation.

// `!(x > 0.0)` and friends are deliberate: they reject NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod colorimetry;
pub mod oracle;
pub mod reparam;
pub mod saddle;
pub mod specfun;
pub mod stepfn;
pub mod volume;
pub mod zonotope;

pub use saddle::{solve_saddlepoint, SaddleResult, SolveError, SolveOptions};
pub use specfun::Regime;
pub use stepfn::{ResponseVector, StepFunction};
