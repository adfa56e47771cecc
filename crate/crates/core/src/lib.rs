//! Switching Kalman filtering for navigation under corrupted measurements.

pub mod bias;
pub mod error;
pub mod gaussian;
pub mod harness;
pub mod ins;
pub mod scenario;
pub mod skf;

pub use error::{Error, Result};
pub use gaussian::{GaussianBelief, SigmaPointParams};
pub use skf::{BranchSet, SkfConfig};
