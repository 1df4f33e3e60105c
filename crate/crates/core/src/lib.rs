//! Compositional sculpting of iterative generative processes.
//!
//! Pre-trained GFlowNets and diffusion models are combined into harmonic
//! means, contrasts and general label-conditioned posteriors by classifier
//! guidance. Every composition has an exact or quadrature oracle so results
//! can be checked at small scale.

pub mod densities;
pub mod diffusion;
pub mod dsl;
pub mod error;
pub mod gflownet;
pub mod io;
pub mod nn;

pub use error::{Error, Result};
