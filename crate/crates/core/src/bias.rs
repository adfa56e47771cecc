//! Measurement corruption models and parameter augmentation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Static,
    Linear,
    Quadratic,
}

impl BiasKind {
    pub fn params_per_channel(self) -> usize {
        match self {
            BiasKind::Static => 1,
            BiasKind::Linear => 2,
            BiasKind::Quadratic => 3,
        }
    }
}

/// Parametric bias `A`, `A + B tau` or `A + B tau + C tau^2` with `tau = t_k - t_s`.
///
/// `theta` is stored channel-major: `[A_0, B_0, C_0, A_1, ...]`. A spec with a
/// single channel applies the same coefficients to every observed channel.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSpec {
    kind: BiasKind,
    theta: Vec<f64>,
    cap: Option<f64>,
}

impl BiasSpec {
    pub fn new(kind: BiasKind, theta: Vec<f64>, cap: Option<f64>) -> Result<Self> {
        let per = kind.params_per_channel();
        if theta.is_empty() || theta.len() % per != 0 {
            return Err(Error::config(format!(
                "{kind:?} bias needs a multiple of {per} parameters, got {}",
                theta.len()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("bias parameters must be finite"));
        }
        if let Some(c) = cap {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::config(format!("bias cap must be positive, got {c}")));
            }
        }
        Ok(Self { kind, theta, cap })
    }

    pub fn zero() -> Self {
        Self {
            kind: BiasKind::Static,
            theta: vec![0.0],
            cap: None,
        }
    }

    pub fn constant(a: f64) -> Self {
        Self {
            kind: BiasKind::Static,
            theta: vec![a],
            cap: None,
        }
    }

    pub fn linear(a: f64, b: f64) -> Self {
        Self {
            kind: BiasKind::Linear,
            theta: vec![a, b],
            cap: None,
        }
    }

    pub fn quadratic(a: f64, b: f64, c: f64) -> Self {
        Self {
            kind: BiasKind::Quadratic,
            theta: vec![a, b, c],
            cap: None,
        }
    }

    pub fn with_cap(mut self, cap: Option<f64>) -> Result<Self> {
        self.cap = cap;
        Self::new(self.kind, self.theta, self.cap)
    }

    pub fn kind(&self) -> BiasKind {
        self.kind
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn cap(&self) -> Option<f64> {
        self.cap
    }

    pub fn channels(&self) -> usize {
        self.theta.len() / self.kind.params_per_channel()
    }

    pub fn is_zero(&self) -> bool {
        self.theta.iter().all(|v| *v == 0.0)
    }

    /// `(A, B, C)` of a channel, with absent terms reported as zero.
    pub fn coefficients(&self, channel: usize) -> (f64, f64, f64) {
        let per = self.kind.params_per_channel();
        let c = if self.channels() == 1 { 0 } else { channel };
        let p = &self.theta[c * per..(c + 1) * per];
        (p[0], p.get(1).copied().unwrap_or(0.0), p.get(2).copied().unwrap_or(0.0))
    }

    /// The same bias written as a quadratic (the nesting `C = 0`, `B = 0`).
    pub fn as_quadratic(&self) -> BiasSpec {
        let theta = (0..self.channels())
            .flat_map(|c| {
                let (a, b, q) = self.coefficients(c);
                [a, b, q]
            })
            .collect();
        BiasSpec {
            kind: BiasKind::Quadratic,
            theta,
            cap: self.cap,
        }
    }

    /// Bias offsets on `d_y` channels at time `t_k` for a switch at `t_s`.
    pub fn eval(&self, t_s: f64, t_k: f64, d_y: usize) -> Result<DVector<f64>> {
        if t_k < t_s {
            return Err(Error::BeforeSwitch { t_s, t_k });
        }
        let channels = self.channels();
        if channels != 1 && channels != d_y {
            return Err(Error::DimensionMismatch {
                what: "bias channels",
                expected: d_y,
                got: channels,
            });
        }
        let tau = t_k - t_s;
        Ok(DVector::from_fn(d_y, |i, _| {
            let (a, b, c) = self.coefficients(i);
            let raw = match self.kind {
                BiasKind::Static => a,
                BiasKind::Linear => a + b * tau,
                BiasKind::Quadratic => a + b * tau + c * tau * tau,
            };
            match self.cap {
                Some(cap) if raw.abs() > cap => cap.copysign(raw),
                _ => raw,
            }
        }))
    }
}

/// Free-function form of [`BiasSpec::eval`].
pub fn bias_eval(spec: &BiasSpec, t_s: f64, t_k: f64, d_y: usize) -> Result<DVector<f64>> {
    spec.eval(t_s, t_k, d_y)
}

/// Switch instant `t_s = s_index * dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchSpec {
    pub t_s: f64,
    pub s_index: usize,
}

impl SwitchSpec {
    /// `s_index` may be 0 (corruption present from the first measurement) up to `n`.
    pub fn new(s_index: usize, dt: f64, n: usize) -> Result<Self> {
        if s_index > n {
            return Err(Error::config(format!(
                "switch step {s_index} outside the run of {n} steps"
            )));
        }
        Ok(Self {
            t_s: s_index as f64 * dt,
            s_index,
        })
    }
}

/// Switched observation: nominal selection for `t_k <= t_s`, biased afterwards.
pub fn observe(
    x: &DVector<f64>,
    observed: &[usize],
    spec: &BiasSpec,
    t_s: f64,
    t_k: f64,
) -> Result<DVector<f64>> {
    let nominal = select(x, observed)?;
    if t_k <= t_s {
        return Ok(nominal);
    }
    Ok(nominal + spec.eval(t_s, t_k, observed.len())?)
}

pub(crate) fn select(x: &DVector<f64>, observed: &[usize]) -> Result<DVector<f64>> {
    if let Some(&bad) = observed.iter().find(|&&i| i >= x.len()) {
        return Err(Error::DimensionMismatch {
            what: "observed channel index",
            expected: x.len(),
            got: bad + 1,
        });
    }
    Ok(DVector::from_iterator(
        observed.len(),
        observed.iter().map(|&i| x[i]),
    ))
}

/// Quadratic offset `A + B tau + C tau^2` read from a learned parameter block.
/// A block of 3 parameters is shared by every channel.
pub fn learned_offset(theta: &[f64], tau: f64, d_y: usize) -> Result<DVector<f64>> {
    let shared = theta.len() == 3;
    if !shared && theta.len() != 3 * d_y {
        return Err(Error::DimensionMismatch {
            what: "learned bias parameters",
            expected: 3 * d_y,
            got: theta.len(),
        });
    }
    Ok(DVector::from_fn(d_y, |i, _| {
        let p = if shared { &theta[..3] } else { &theta[3 * i..3 * i + 3] };
        p[0] + p[1] * tau + p[2] * tau * tau
    }))
}

/// Appends `theta_prior_mean` to `x` and builds `diag(Q_x, q_p I)`.
pub fn augment(
    x: &DVector<f64>,
    theta_prior_mean: &DVector<f64>,
    q_x: &DMatrix<f64>,
    q_p: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (dx, dt) = (x.len(), theta_prior_mean.len());
    if q_x.nrows() != dx || q_x.ncols() != dx {
        return Err(Error::DimensionMismatch {
            what: "state process noise",
            expected: dx,
            got: q_x.nrows(),
        });
    }
    if !(q_p >= 0.0) {
        return Err(Error::config(format!("parameter process noise must be >= 0, got {q_p}")));
    }
    let mut state = DVector::zeros(dx + dt);
    state.rows_mut(0, dx).copy_from(x);
    state.rows_mut(dx, dt).copy_from(theta_prior_mean);
    let mut q = DMatrix::zeros(dx + dt, dx + dt);
    q.view_mut((0, 0), (dx, dx)).copy_from(q_x);
    for i in dx..dx + dt {
        q[(i, i)] = q_p;
    }
    Ok((state, q))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Coef {
    Scalar(f64),
    PerChannel(Vec<f64>),
}

impl Coef {
    fn len(&self) -> Option<usize> {
        match self {
            Coef::Scalar(_) => None,
            Coef::PerChannel(v) => Some(v.len()),
        }
    }

    fn get(&self, i: usize) -> f64 {
        match self {
            Coef::Scalar(v) => *v,
            Coef::PerChannel(v) => v[i],
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct BiasSpecJson {
    kind: BiasKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    A: Option<Coef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    B: Option<Coef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    C: Option<Coef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cap: Option<f64>,
}

impl TryFrom<BiasSpecJson> for BiasSpec {
    type Error = Error;

    fn try_from(j: BiasSpecJson) -> Result<Self> {
        let per = j.kind.params_per_channel();
        let coefs = [&j.A, &j.B, &j.C];
        for (i, name) in ["B", "C"].iter().enumerate() {
            if coefs[i + 1].is_some() && i + 1 >= per {
                return Err(Error::config(format!(
                    "coefficient {name} not allowed for {:?} bias",
                    j.kind
                )));
            }
        }
        let lens: Vec<usize> = coefs.iter().filter_map(|c| c.as_ref()?.len()).collect();
        let channels = lens.first().copied().unwrap_or(1);
        if channels == 0 || lens.iter().any(|&l| l != channels) {
            return Err(Error::config(
                "per-channel bias coefficients must be non-empty and equally long",
            ));
        }
        let mut theta = Vec::with_capacity(channels * per);
        for c in 0..channels {
            for coef in coefs.iter().take(per) {
                theta.push(coef.as_ref().map_or(0.0, |v| v.get(c)));
            }
        }
        BiasSpec::new(j.kind, theta, j.cap)
    }
}

impl From<&BiasSpec> for BiasSpecJson {
    fn from(s: &BiasSpec) -> Self {
        let per = s.kind.params_per_channel();
        let n = s.channels();
        let coef = |k: usize| -> Option<Coef> {
            if k >= per {
                return None;
            }
            let vals: Vec<f64> = (0..n).map(|c| s.theta[c * per + k]).collect();
            Some(if n == 1 {
                Coef::Scalar(vals[0])
            } else {
                Coef::PerChannel(vals)
            })
        };
        BiasSpecJson {
            kind: s.kind,
            A: coef(0),
            B: coef(1),
            C: coef(2),
            cap: s.cap,
        }
    }
}

impl Serialize for BiasSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        BiasSpecJson::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BiasSpec {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = BiasSpecJson::deserialize(deserializer)?;
        BiasSpec::try_from(raw).map_err(serde::de::Error::custom)
    }
}
