//! Run and sweep configuration files.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::BiasSpec;
use crate::error::{Error, Result};
use crate::gaussian::SigmaPointParams;
use crate::scenario::{BalloonConfig, ShuttleConfig};

pub const DEFAULT_BRANCHES: usize = 10;

fn default_branches() -> usize {
    DEFAULT_BRANCHES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScenarioConfig {
    Balloon(BalloonConfig),
    Shuttle(ShuttleConfig),
}

impl ScenarioConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioConfig::Balloon(_) => "balloon",
            ScenarioConfig::Shuttle(_) => "shuttle",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioConfig::Balloon(c) => c.validate(),
            ScenarioConfig::Shuttle(c) => c.validate(),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            ScenarioConfig::Balloon(c) => c.steps,
            ScenarioConfig::Shuttle(c) => c.steps,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            ScenarioConfig::Balloon(c) => c.dt,
            ScenarioConfig::Shuttle(c) => c.dt,
        }
    }

    pub fn delta(&self) -> usize {
        match self {
            ScenarioConfig::Balloon(c) => c.delta,
            ScenarioConfig::Shuttle(c) => c.delta,
        }
    }

    pub fn true_switch(&self) -> Option<f64> {
        match self {
            ScenarioConfig::Balloon(c) => c.switch().map(|s| s.t_s),
            ScenarioConfig::Shuttle(c) => c.switch().map(|s| s.t_s),
        }
    }

    pub fn is_biased(&self) -> bool {
        match self {
            ScenarioConfig::Balloon(c) => c.is_biased(),
            ScenarioConfig::Shuttle(c) => c.is_biased(),
        }
    }

    pub fn bias(&self) -> &BiasSpec {
        match self {
            ScenarioConfig::Balloon(c) => &c.bias,
            ScenarioConfig::Shuttle(c) => &c.bias,
        }
    }

    pub fn bias_mut(&mut self) -> &mut BiasSpec {
        match self {
            ScenarioConfig::Balloon(c) => &mut c.bias,
            ScenarioConfig::Shuttle(c) => &mut c.bias,
        }
    }

    /// `(q_x, q_p, r)`.
    pub fn noise(&self) -> (f64, f64, f64) {
        match self {
            ScenarioConfig::Balloon(c) => (c.q_x, c.q_p, c.r),
            ScenarioConfig::Shuttle(c) => (c.q_x, c.q_p, c.r),
        }
    }

    fn noise_mut(&mut self) -> (&mut f64, &mut f64, &mut f64) {
        match self {
            ScenarioConfig::Balloon(c) => (&mut c.q_x, &mut c.q_p, &mut c.r),
            ScenarioConfig::Shuttle(c) => (&mut c.q_x, &mut c.q_p, &mut c.r),
        }
    }

    pub fn state_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            ScenarioConfig::Balloon(_) => &crate::scenario::balloon::BALLOON_STATE_NAMES,
            ScenarioConfig::Shuttle(_) => &crate::ins::NAV_STATE_NAMES[..9],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// A single experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Branch capacity including the nominal branch.
    #[serde(default = "default_branches")]
    pub branches: usize,
    #[serde(default)]
    pub sigma: SigmaPointParams,
    pub scenario: ScenarioConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branches < 2 {
            return Err(Error::config(format!("branches must be >= 2, got {}", self.branches)));
        }
        self.sigma.validate(1)?;
        self.scenario.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON form with the seed removed.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("seed");
        }
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Swept quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "q_p")]
    QP,
    #[serde(rename = "q_x")]
    QX,
    #[serde(rename = "r")]
    R,
    A,
    B,
    C,
}

impl Axis {
    pub const ALL: [Axis; 6] = [Axis::QP, Axis::QX, Axis::R, Axis::A, Axis::B, Axis::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::QP => "q_p",
            Axis::QX => "q_x",
            Axis::R => "r",
            Axis::A => "A",
            Axis::B => "B",
            Axis::C => "C",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Malformed(format!("unknown axis {s:?}")))
    }

    /// Value of this quantity in a config (bias coefficients from channel 0).
    pub fn read(self, cfg: &ScenarioConfig) -> f64 {
        let (q_x, q_p, r) = cfg.noise();
        let (a, b, c) = cfg.bias().coefficients(0);
        match self {
            Axis::QP => q_p,
            Axis::QX => q_x,
            Axis::R => r,
            Axis::A => a,
            Axis::B => b,
            Axis::C => c,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn one() -> usize {
    1
}

/// Cartesian grid of configs around a base run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
    pub axes: BTreeMap<Axis, Vec<f64>>,
    /// When set, every cell uses `q_x = q_x_from_r * r`.
    #[serde(default)]
    pub q_x_from_r: Option<f64>,
    /// Count Yellow outcomes as successes in aggregates.
    #[serde(default)]
    pub count_yellow: bool,
    pub base: RunConfig,
}

/// One grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub values: BTreeMap<Axis, f64>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be >= 1"));
        }
        for (axis, values) in &self.axes {
            if values.is_empty() {
                return Err(Error::config(format!("axis {axis} has no values")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("axis {axis} has non-finite values")));
            }
        }
        if self.q_x_from_r.is_some() && self.axes.contains_key(&Axis::QX) {
            return Err(Error::config("q_x cannot be both swept and linked to r"));
        }
        self.base.validate()?;
        for cell in self.cells() {
            self.apply(&cell)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All grid points; the last axis in canonical order varies fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let axes: Vec<(&Axis, &Vec<f64>)> = self.axes.iter().collect();
        (0..self.len())
            .map(|index| {
                let mut rem = index;
                let mut values = BTreeMap::new();
                for (axis, vals) in axes.iter().rev() {
                    values.insert(**axis, vals[rem % vals.len()]);
                    rem /= vals.len();
                }
                Cell { index, values }
            })
            .collect()
    }

    /// Base config with the cell's values substituted.
    pub fn apply(&self, cell: &Cell) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        cfg.name = format!("{}/cell{}", self.name, cell.index);
        let sc = &mut cfg.scenario;
        let (a0, b0, c0) = sc.bias().coefficients(0);
        let (mut a, mut b, mut c) = (a0, b0, c0);
        let mut bias_swept = false;
        for (axis, v) in &cell.values {
            let (q_x, q_p, r) = sc.noise_mut();
            match axis {
                Axis::QP => *q_p = *v,
                Axis::QX => *q_x = *v,
                Axis::R => *r = *v,
                Axis::A => (a, bias_swept) = (*v, true),
                Axis::B => (b, bias_swept) = (*v, true),
                Axis::C => (c, bias_swept) = (*v, true),
            }
        }
        if let Some(f) = self.q_x_from_r {
            let (q_x, _, r) = sc.noise_mut();
            *q_x = f * *r;
        }
        if bias_swept {
            let cap = sc.bias().cap();
            *sc.bias_mut() = BiasSpec::quadratic(a, b, c).with_cap(cap)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Seed of replication `rep` of cell `cell`.
    pub fn cell_seed(&self, cell: usize, rep: usize) -> u64 {
        derive_seed(self.seed, cell as u64, rep as u64)
    }
}

/// Independent stream seed from a parent seed and two indices.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(a.to_le_bytes());
    h.update(b.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
