//! Almost Hermitian Ricci flow toolkit.
//!
//! Tensor algebra generic over exact 2-jets, the Chern connection and its
//! curvature, the flow right-hand sides with principal symbol probes, and a
//! periodic grid integrator.

pub mod chern;
pub mod cli;
pub mod field;
pub mod flow;
pub mod jet;
pub mod report;
pub mod structures;
pub mod suite;
pub mod tensor;

mod error;

pub use error::{Error, Result};
