//! Bayesian adaptive enrichment trials with free-knot spline treatment-effect
//! models.
//!
//! The crate covers the whole simulation stack: biomarker distributions,
//! piecewise-linear spline bases, conjugate regression, a reversible-jump
//! sampler over knots and terms, the two-stage trial engine, the scenario
//! catalogue and a study harness.

pub mod dist;
pub mod error;
pub mod illustrate;
pub mod posterior;
pub mod regression;
pub mod scenario;
pub mod sampler;
pub mod spline;
pub mod study;
pub mod trial;

pub use error::{Error, Result};
