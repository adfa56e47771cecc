//! Drifting balloon: position in degrees advected by a velocity field.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::field::{FieldConfig, VelocityField};
use crate::bias::{augment, BiasSpec, SwitchSpec};
use crate::error::{Error, Result};
use crate::skf::{AugmentedModel, StateDynamics};

pub const BALLOON_STATE_NAMES: [&str; 2] = ["lon", "lat"];
/// Learned quadratic shared by both channels.
pub const BALLOON_D_THETA: usize = 3;

fn default_x0() -> [f64; 2] {
    [-35.0, 25.0]
}
fn default_steps() -> usize {
    500
}
fn default_dt() -> f64 {
    0.01
}
fn one_usize() -> usize {
    1
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalloonConfig {
    /// Initial (lon, lat), degrees.
    #[serde(default = "default_x0")]
    pub x0: [f64; 2],
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Hours.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "one_usize")]
    pub delta: usize,
    pub q_x: f64,
    pub q_p: f64,
    pub r: f64,
    pub bias: BiasSpec,
    /// Step after which the bias is active; `None` for an uncorrupted run.
    pub switch_step: Option<usize>,
    #[serde(default)]
    pub field: FieldConfig,
    /// Initial filter variance of the position.
    #[serde(default = "one")]
    pub initial_var: f64,
}

impl BalloonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("balloon run needs at least one step"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.delta == 0 {
            return Err(Error::config("delta must be >= 1"));
        }
        for (name, v) in [("q_x", self.q_x), ("q_p", self.q_p), ("r", self.r)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!("{name} must be a finite non-negative variance, got {v}")));
            }
        }
        if !(self.initial_var > 0.0) {
            return Err(Error::config("initial_var must be positive"));
        }
        if self.bias.channels() != 1 && self.bias.channels() != 2 {
            return Err(Error::config("balloon bias needs 1 or 2 channels"));
        }
        if let Some(s) = self.switch_step {
            SwitchSpec::new(s, self.dt, self.steps)?;
        } else if !self.bias.is_zero() {
            return Err(Error::config("non-zero bias requires switch_step"));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("x0 must be finite"));
        }
        Ok(())
    }

    pub fn switch(&self) -> Option<SwitchSpec> {
        self.switch_step.map(|s| SwitchSpec {
            t_s: s as f64 * self.dt,
            s_index: s,
        })
    }

    pub fn is_biased(&self) -> bool {
        self.switch_step.is_some() && !self.bias.is_zero()
    }

    pub fn field(&self, base: Option<&Path>) -> Result<VelocityField> {
        self.field.build(base)
    }
}

/// `x_k = x_{k-1} + dt [u, v](x_{k-1}, t_{k-1})`.
#[derive(Clone)]
pub struct BalloonDynamics {
    pub field: Arc<VelocityField>,
    pub dt: f64,
}

impl StateDynamics for BalloonDynamics {
    fn dim(&self) -> usize {
        2
    }

    fn step(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        let t = (k - 1) as f64 * self.dt;
        let (u, v) = self.field.eval(x[0], x[1], t)?;
        Ok(DVector::from_vec(vec![x[0] + self.dt * u, x[1] + self.dt * v]))
    }
}

/// Simulated truth and measurements with every random draw logged.
#[derive(Debug, Clone)]
pub struct BalloonData {
    /// States at steps `0..=n`.
    pub truth: Vec<DVector<f64>>,
    /// Measurement at step `k`, if `k` is an epoch.
    pub measurements: Vec<Option<DVector<f64>>>,
    /// Process noise added on the transition into step `k` (entry 0 unused).
    pub process_noise: Vec<DVector<f64>>,
    pub measurement_noise: Vec<Option<DVector<f64>>>,
    pub bias: Vec<Option<DVector<f64>>>,
}

fn normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

/// Euler-integrated truth with additive process noise and switched,
/// noisy measurements every `delta` steps.
pub fn simulate_balloon(cfg: &BalloonConfig, field: &VelocityField, seed: u64) -> Result<BalloonData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.steps;
    let (qs, rs) = (cfg.q_x.sqrt(), cfg.r.sqrt());
    let dynamics = BalloonDynamics {
        field: Arc::new(field.clone()),
        dt: cfg.dt,
    };
    let switch = cfg.switch();

    let mut truth = vec![DVector::from_row_slice(&cfg.x0)];
    let mut process_noise = vec![DVector::zeros(2)];
    let mut measurements = vec![None];
    let mut measurement_noise = vec![None];
    let mut bias = vec![None];
    for k in 1..=n {
        let xi = normal_vec(&mut rng, 2, qs);
        let x = dynamics.step(&truth[k - 1], k)? + &xi;
        let t_k = k as f64 * cfg.dt;
        if k % cfg.delta == 0 {
            let eta = normal_vec(&mut rng, 2, rs);
            let b = match switch {
                Some(s) if t_k > s.t_s => cfg.bias.eval(s.t_s, t_k, 2)?,
                _ => DVector::zeros(2),
            };
            measurements.push(Some(&x + &b + &eta));
            measurement_noise.push(Some(eta));
            bias.push(Some(b));
        } else {
            measurements.push(None);
            measurement_noise.push(None);
            bias.push(None);
        }
        truth.push(x);
        process_noise.push(xi);
    }
    Ok(BalloonData {
        truth,
        measurements,
        process_noise,
        measurement_noise,
        bias,
    })
}

/// Filter model: balloon dynamics augmented with a shared quadratic bias.
pub fn balloon_model(cfg: &BalloonConfig, field: Arc<VelocityField>) -> Result<AugmentedModel<BalloonDynamics>> {
    let q_x = DMatrix::from_diagonal_element(2, 2, cfg.q_x);
    let (_, q) = augment(&DVector::zeros(2), &DVector::zeros(BALLOON_D_THETA), &q_x, cfg.q_p)?;
    AugmentedModel::new(
        BalloonDynamics { field, dt: cfg.dt },
        vec![0, 1],
        BALLOON_D_THETA,
        q,
        DMatrix::from_diagonal_element(2, 2, cfg.r),
    )
}
