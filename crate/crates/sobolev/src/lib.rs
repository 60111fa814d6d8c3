//! Sobolev and Fisher integral probability metrics at desk scale.
//!
//! The crate computes the Fisher IPM and the Sobolev IPM between analytic
//! 1-D/2-D distributions through several independent routes (closed-form
//! quadrature, CDF comparison, an elliptic PDE for the optimal critic and a
//! restricted feature-basis program), evolves particle clouds along the
//! critic's gradient, and trains toy adversarial models under augmented
//! Lagrangian sphere constraints (Sobolev, Fisher, and a pointwise
//! gradient-penalty baseline). Sequence and semi-supervised variants run on
//! synthetic corpora and 2-D blob data.

pub mod autodiff;
pub mod config;
pub mod densities;
pub mod descent;
pub mod error;
pub mod gan;
pub mod grid;
pub mod ipm;
pub mod pde;
pub mod quad;
pub mod seqgen;
pub mod ssl;
pub mod svg;

pub use error::{Result, SobolevError};
