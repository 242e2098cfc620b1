//! Deterministic spectral law, rightmost-edge analysis, and seeded Monte
//! Carlo experiments for separable sample covariance matrices
//! `A^{1/2} X B X^* A^{1/2}`.

pub mod dyson;
pub mod edge;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod probes;
pub mod seeding;
pub mod stats;
pub mod tw1;

pub use error::{Error, Result};
pub use model::{AtomicMeasure, ComplexPoint, SpectralModel};
