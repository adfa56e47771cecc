//! Relative RMSE, outcome classes and simple aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the timeline treated as "the end" for uncorrupted runs.
pub const END_OF_TIMELINE: f64 = 0.95;

/// `sqrt(sum (m - x)^2 / sum x^2)`; `None` when the truth is identically zero.
pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<Option<f64>> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "RMSE series",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (m, x) in estimate.iter().zip(truth) {
        num += (m - x) * (m - x);
        den += x * x;
    }
    Ok((den > 0.0).then(|| (num / den).sqrt()))
}

/// Per-state RMSE of two trajectories stored as rows of state vectors.
pub fn rmse_per_state<E: AsRef<[f64]>, T: AsRef<[f64]>>(estimate: &[E], truth: &[T], dim: usize) -> Result<Vec<Option<f64>>> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "trajectory length",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    (0..dim)
        .map(|i| {
            let m: Vec<f64> = estimate.iter().map(|r| r.as_ref()[i]).collect();
            let x: Vec<f64> = truth.iter().map(|r| r.as_ref()[i]).collect();
            rmse(&m, &x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Green,
    Yellow,
    Red,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Green => "green",
            Outcome::Yellow => "yellow",
            Outcome::Red => "red",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "green" => Ok(Outcome::Green),
            "yellow" => Ok(Outcome::Yellow),
            "red" => Ok(Outcome::Red),
            other => Err(Error::Malformed(format!("unknown outcome {other:?}"))),
        }
    }

    pub fn is_success(self, count_yellow: bool) -> bool {
        self == Outcome::Green || (count_yellow && self == Outcome::Yellow)
    }
}

/// Switch-time error in whole steps.
pub fn switch_error_steps(estimated: f64, truth: f64, dt: f64) -> u64 {
    ((estimated - truth).abs() / dt).round() as u64
}

/// Outcome of one run. `estimated` is `None` when the nominal branch wins.
///
/// Corrupted runs: Green within 1 step, Yellow within 10, Red otherwise or
/// when no corruption is reported. Uncorrupted runs: Green when no
/// corruption is reported or the estimate lies in the final 5% of the
/// timeline, Red otherwise.
pub fn classify(estimated: Option<f64>, truth: Option<f64>, n_steps: usize, dt: f64, biased: bool) -> Outcome {
    match (biased, truth, estimated) {
        (true, Some(t), Some(e)) => match switch_error_steps(e, t, dt) {
            0..=1 => Outcome::Green,
            2..=10 => Outcome::Yellow,
            _ => Outcome::Red,
        },
        (true, _, _) => Outcome::Red,
        (false, _, None) => Outcome::Green,
        (false, _, Some(e)) => {
            if e >= END_OF_TIMELINE * n_steps as f64 * dt - 1e-9 * dt {
                Outcome::Green
            } else {
                Outcome::Red
            }
        }
    }
}

/// Median of the finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
