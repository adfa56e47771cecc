//! Simulation scenarios and their filter models.

pub mod balloon;
pub mod field;
pub mod noise;
pub mod shuttle;

pub use balloon::{balloon_model, simulate_balloon, BalloonConfig, BalloonData, BalloonDynamics};
pub use field::{AnalyticField, FieldConfig, GriddedField, VelocityField};
pub use noise::{noise_to_range_ratio, scale_noise, ScalingFactors};
pub use shuttle::{shuttle_model, shuttle_prior, simulate_shuttle, ShuttleConfig, ShuttleData, ShuttleDynamics};
