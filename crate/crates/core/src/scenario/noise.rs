//! Per-state noise scaling and noise-to-range diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean absolute magnitude of each navigation state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingFactors {
    pub h: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub lambda: f64,
    pub v: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
}

impl Default for ScalingFactors {
    fn default() -> Self {
        Self {
            h: 1.5e5,
            l: 9.3e-1,
            lambda: 3.2e-1,
            v: 1.4e4,
            gamma: 3e-2,
            alpha: 8e-1,
            phi: 6e-1,
            theta: 2e-1,
            psi: 6.5e-1,
        }
    }
}

impl ScalingFactors {
    pub fn as_array(&self) -> [f64; 9] {
        [
            self.h, self.l, self.lambda, self.v, self.gamma, self.alpha, self.phi, self.theta, self.psi,
        ]
    }

    /// Factors of the observed channels `(h, L, lambda)`.
    pub fn observed(&self) -> [f64; 3] {
        [self.h, self.l, self.lambda]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(Error::config(format!("scaling factors must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Elementwise scaling of the nominal process and measurement variances.
pub fn scale_noise(q_x: f64, r: f64, factors: &ScalingFactors) -> Result<(Vec<f64>, Vec<f64>)> {
    factors.validate()?;
    if !(q_x >= 0.0) || !(r >= 0.0) {
        return Err(Error::config(format!("noise variances must be >= 0 (q_x = {q_x}, r = {r})")));
    }
    let q = factors.as_array().iter().map(|f| q_x * f).collect();
    let rr = factors.observed().iter().map(|f| r * f).collect();
    Ok((q, rr))
}

/// `2 sqrt(r)` as a percentage of the per-channel trajectory range, maximised
/// over channels.
pub fn noise_to_range_ratio(r: f64, trajectory: &[Vec<f64>]) -> Result<f64> {
    let first = trajectory
        .first()
        .ok_or_else(|| Error::config("empty trajectory"))?;
    let mut worst: f64 = 0.0;
    for c in 0..first.len() {
        let (lo, hi) = trajectory.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x[c]), hi.max(x[c]))
        });
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(Error::config(format!("channel {c} has zero range")));
        }
        worst = worst.max(200.0 * r.sqrt() / range);
    }
    Ok(worst)
}
