//! Shuttle reentry: GPS-aided strapdown navigation with corrupted GPS.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::noise::{scale_noise, ScalingFactors};
use crate::bias::{BiasSpec, SwitchSpec};
use crate::error::{Error, Result};
use crate::ins::{
    attitude_matrix, euler_rate_matrix, gravity, integrate, propagate_imu_bias, strapdown_step, synthesize_imu,
    wrap_angle, ImuNoise, ImuSample, NavState15, ReferenceTrajectory,
};
use crate::skf::{AugmentedModel, StateDynamics};

/// Observed channels `(h, L, lambda)`.
pub const SHUTTLE_OBSERVED: [usize; 3] = [0, 1, 2];
/// One learned quadratic per observed channel.
pub const SHUTTLE_D_THETA: usize = 9;

/// Initial navigation state of the generated reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialNav {
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

impl Default for InitialNav {
    fn default() -> Self {
        Self {
            h: 1.5e5,
            l: 0.93,
            lambda: 0.32,
            v: 1.4e4,
            gamma: -0.005,
            alpha: 0.8,
            phi: 0.6,
            theta: 0.2,
            psi: 0.65,
        }
    }
}

impl InitialNav {
    pub fn state(&self) -> NavState15 {
        NavState15 {
            h: self.h,
            l: self.l,
            lambda: self.lambda,
            v: self.v,
            gamma: self.gamma,
            alpha: self.alpha,
            phi: self.phi,
            theta: self.theta,
            psi: self.psi,
            b_a: Vector3::zeros(),
            b_g: Vector3::zeros(),
        }
    }
}

/// Piecewise-polynomial specific-force and angular-rate profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub initial: InitialNav,
    /// Segment length, seconds.
    pub segment: f64,
    /// Along-track deceleration, ft/s^2.
    pub drag: f64,
    /// Time constant of the sink-rate hold, seconds.
    pub sink_tau: f64,
    /// Peak body rates, rad/s.
    pub rate_amplitude: [f64; 3],
    /// Integration substeps per filter step; 1 reproduces the inertial model.
    pub substeps: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            initial: InitialNav::default(),
            segment: 140.0,
            drag: 5.0,
            sink_tau: 100.0,
            rate_amplitude: [2e-5, 2e-5, 2e-5],
            substeps: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceSource {
    Generator(GeneratorConfig),
    File { path: PathBuf },
}

impl Default for ReferenceSource {
    fn default() -> Self {
        ReferenceSource::Generator(GeneratorConfig::default())
    }
}

/// IMU white noise and bias random-walk standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImuErrors {
    pub accel_std: f64,
    pub gyro_std: f64,
    pub accel_walk_std: f64,
    pub gyro_walk_std: f64,
}

impl Default for ImuErrors {
    fn default() -> Self {
        Self {
            accel_std: 1e-5,
            gyro_std: 1e-7,
            accel_walk_std: 1e-8,
            gyro_walk_std: 1e-10,
        }
    }
}

impl ImuErrors {
    pub fn noise(&self) -> ImuNoise {
        ImuNoise {
            accel_std: self.accel_std,
            gyro_std: self.gyro_std,
        }
    }
}

fn default_steps() -> usize {
    600
}
fn default_dt() -> f64 {
    1.4
}
fn default_delta() -> usize {
    3
}
fn default_switch() -> Option<usize> {
    Some(357)
}
fn default_nav_var() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuttleConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Seconds.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_delta")]
    pub delta: usize,
    #[serde(default = "default_switch")]
    pub switch_step: Option<usize>,
    pub q_x: f64,
    pub q_p: f64,
    pub r: f64,
    pub bias: BiasSpec,
    #[serde(default)]
    pub scaling: ScalingFactors,
    #[serde(default)]
    pub imu: ImuErrors,
    #[serde(default)]
    pub reference: ReferenceSource,
    /// Initial filter variance of the 15 navigation states.
    #[serde(default = "default_nav_var")]
    pub initial_nav_var: f64,
}

impl ShuttleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("shuttle run needs at least one step"));
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
        self.scaling.validate()?;
        let i = &self.imu;
        if [i.accel_std, i.gyro_std, i.accel_walk_std, i.gyro_walk_std]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::config("IMU error levels must be >= 0"));
        }
        if !(self.initial_nav_var > 0.0) {
            return Err(Error::config("initial_nav_var must be positive"));
        }
        if self.bias.channels() != 1 && self.bias.channels() != 3 {
            return Err(Error::config("shuttle bias needs 1 or 3 channels"));
        }
        if let Some(s) = self.switch_step {
            SwitchSpec::new(s, self.dt, self.steps)?;
        } else if !self.bias.is_zero() {
            return Err(Error::config("non-zero bias requires switch_step"));
        }
        if let ReferenceSource::Generator(g) = &self.reference {
            if g.substeps == 0 || !(g.segment > 0.0) {
                return Err(Error::config("generator needs substeps >= 1 and a positive segment length"));
            }
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
}

/// One profile segment: specific force linear in time, rates constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSegment {
    pub t0: f64,
    pub t1: f64,
    pub f0: Vector3<f64>,
    pub f1: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl ProfileSegment {
    pub fn sample(&self, t: f64) -> ImuSample {
        let s = ((t - self.t0) / (self.t1 - self.t0)).clamp(0.0, 1.0);
        ImuSample {
            f_b: self.f0 + (self.f1 - self.f0) * s,
            omega_b: self.omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShuttleProfile {
    pub segments: Vec<ProfileSegment>,
}

impl ShuttleProfile {
    pub fn sample(&self, t: f64) -> ImuSample {
        let i = self
            .segments
            .partition_point(|s| s.t1 <= t)
            .min(self.segments.len().saturating_sub(1));
        self.segments[i].sample(t)
    }
}

fn rate_pattern(j: usize, amp: &[f64; 3]) -> Vector3<f64> {
    let j = j as f64;
    Vector3::new(
        amp[0] * (0.9 * j + 0.3).sin(),
        amp[1] * (1.3 * j).cos(),
        amp[2] * (0.5 * j + 1.0).sin(),
    )
}

/// Specific force (inertial frame) holding the sink rate against gravity and drag.
fn desired_force(s: &NavState15, target_vd: f64, cfg: &GeneratorConfig) -> Vector3<f64> {
    let v = s.velocity_ned();
    let along = if v.norm() > 0.0 { v / v.norm() } else { Vector3::zeros() };
    let mut f = -gravity(s.h) - along * cfg.drag;
    f[2] += (target_vd - v[2]) / cfg.sink_tau;
    f
}

fn body_force(s: &NavState15, f_i: &Vector3<f64>) -> Vector3<f64> {
    attitude_matrix(s.phi, s.theta, s.psi).transpose() * f_i
}

/// Predicted state at the end of a segment, used to place the next force knot.
fn predict_knot(s: &NavState15, omega: &Vector3<f64>, cfg: &GeneratorConfig, steps: usize, dt: f64) -> Result<NavState15> {
    let mut p = *s;
    for _ in 0..steps {
        let rates = euler_rate_matrix(p.phi, p.theta)? * omega;
        p.phi = wrap_angle(p.phi + rates[0] * dt);
        p.theta = wrap_angle(p.theta + rates[1] * dt);
        p.psi = wrap_angle(p.psi + rates[2] * dt);
    }
    let span = steps as f64 * dt;
    let v = s.velocity_ned();
    p.h = s.h - v[2] * span;
    p.v = (s.v - cfg.drag * span).max(0.0);
    Ok(p)
}

/// Integrates the navigation equations under a generated profile. Returns
/// the reference (states at step boundaries plus the zero-order-hold IMU
/// samples at step starts) and the profile itself.
pub fn generate_reference(cfg: &GeneratorConfig, steps: usize, dt: f64) -> Result<(ReferenceTrajectory, ShuttleProfile)> {
    if cfg.substeps == 0 || !(cfg.segment > 0.0) || !(cfg.sink_tau > 0.0) {
        return Err(Error::config("invalid reference generator settings"));
    }
    let seg_steps = ((cfg.segment / dt).round() as usize).max(1);
    let seg_len = seg_steps as f64 * dt;
    let h = dt / cfg.substeps as f64;
    let mut state = cfg.initial.state();
    let target_vd = state.velocity_ned()[2];
    let mut states = vec![state];
    let mut zoh = Vec::with_capacity(steps);
    let mut profile = ShuttleProfile::default();
    let mut f_start = body_force(&state, &desired_force(&state, target_vd, cfg));
    let mut k = 0;
    let mut j = 0;
    while k < steps {
        let omega = rate_pattern(j, &cfg.rate_amplitude);
        let knot = predict_knot(&state, &omega, cfg, seg_steps, dt)?;
        let f_end = body_force(&knot, &desired_force(&knot, target_vd, cfg));
        let seg = ProfileSegment {
            t0: j as f64 * seg_len,
            t1: (j + 1) as f64 * seg_len,
            f0: f_start,
            f1: f_end,
            omega,
        };
        profile.segments.push(seg);
        for _ in 0..seg_steps {
            if k == steps {
                break;
            }
            let t_k = k as f64 * dt;
            zoh.push(seg.sample(t_k));
            for m in 0..cfg.substeps {
                state = strapdown_step(&state, &seg.sample(t_k + m as f64 * h), h)?;
            }
            states.push(state);
            k += 1;
        }
        f_start = f_end;
        j += 1;
    }
    Ok((ReferenceTrajectory { dt, states, imu: zoh }, profile))
}

/// Absolute per-state difference `|reference - inertial|` for the nine
/// navigation states at every step.
pub fn model_mismatch(reference: &[NavState15], inertial: &[NavState15]) -> Vec<[f64; 9]> {
    reference
        .iter()
        .zip(inertial)
        .map(|(a, b)| {
            let (xa, xb) = (a.to_vector(), b.to_vector());
            std::array::from_fn(|i| (xa[i] - xb[i]).abs())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ShuttleData {
    /// Truth used for the GPS stream, steps `0..=n`.
    pub reference: Vec<NavState15>,
    /// Noiseless inertial-model trajectory, the RMSE reference.
    pub inertial: Vec<NavState15>,
    /// Noiseless zero-order-hold IMU samples.
    pub imu_true: Vec<ImuSample>,
    /// IMU samples seen by the filter.
    pub imu: Vec<ImuSample>,
    /// True accelerometer and gyro biases applied to `imu[k]`.
    pub imu_bias: Vec<(Vector3<f64>, Vector3<f64>)>,
    pub gps: Vec<Option<DVector<f64>>>,
    pub gps_noise: Vec<Option<DVector<f64>>>,
    pub gps_bias: Vec<Option<DVector<f64>>>,
}

/// Builds the reference, the corrupted IMU stream and the GPS measurements.
pub fn simulate_shuttle(cfg: &ShuttleConfig, seed: u64, base: Option<&Path>) -> Result<ShuttleData> {
    cfg.validate()?;
    let n = cfg.steps;
    let reference = match &cfg.reference {
        ReferenceSource::Generator(g) => generate_reference(g, n, cfg.dt)?.0,
        ReferenceSource::File { path } => {
            let path = match base {
                Some(b) if path.is_relative() => b.join(path),
                _ => path.clone(),
            };
            let r = ReferenceTrajectory::load(&path)?;
            if (r.dt - cfg.dt).abs() > 1e-9 * cfg.dt {
                return Err(Error::Malformed(format!("reference dt {} differs from config dt {}", r.dt, cfg.dt)));
            }
            if r.steps() < n {
                return Err(Error::Malformed(format!("reference has {} steps, run needs {n}", r.steps())));
            }
            r
        }
    };
    let states = reference.states[..=n].to_vec();
    let imu_true = reference.imu[..n].to_vec();
    let inertial = integrate(&states[0], &imu_true, cfg.dt)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let walk_a = nalgebra::Matrix3::identity() * cfg.imu.accel_walk_std.powi(2);
    let walk_g = nalgebra::Matrix3::identity() * cfg.imu.gyro_walk_std.powi(2);
    let noise = cfg.imu.noise();
    let (mut b_a, mut b_g) = (Vector3::zeros(), Vector3::zeros());
    let mut imu = Vec::with_capacity(n);
    let mut imu_bias = Vec::with_capacity(n);
    for s in &imu_true {
        imu.push(synthesize_imu(&s.f_b, &s.omega_b, &b_a, &b_g, &noise, &mut rng));
        imu_bias.push((b_a, b_g));
        (b_a, b_g) = propagate_imu_bias(&b_a, &b_g, &walk_a, &walk_g, &mut rng)?;
    }

    let (_, r_bar) = scale_noise(cfg.q_x, cfg.r, &cfg.scaling)?;
    let r_std: Vec<f64> = r_bar.iter().map(|v| v.sqrt()).collect();
    let switch = cfg.switch();
    let mut gps = vec![None];
    let mut gps_noise = vec![None];
    let mut gps_bias = vec![None];
    for (k, s) in states.iter().enumerate().skip(1) {
        if k % cfg.delta != 0 {
            gps.push(None);
            gps_noise.push(None);
            gps_bias.push(None);
            continue;
        }
        let t_k = k as f64 * cfg.dt;
        let eta = DVector::from_fn(3, |i, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * r_std[i]
        });
        let b = match switch {
            Some(sw) if t_k > sw.t_s => cfg.bias.eval(sw.t_s, t_k, 3)?,
            _ => DVector::zeros(3),
        };
        let pos = DVector::from_vec(vec![s.h, s.l, s.lambda]);
        gps.push(Some(pos + &b + &eta));
        gps_noise.push(Some(eta));
        gps_bias.push(Some(b));
    }
    Ok(ShuttleData {
        reference: states,
        inertial,
        imu_true,
        imu,
        imu_bias,
        gps,
        gps_noise,
        gps_bias,
    })
}

/// Strapdown propagation driven by the measured IMU stream.
#[derive(Clone)]
pub struct ShuttleDynamics {
    pub imu: Arc<Vec<ImuSample>>,
    pub dt: f64,
}

impl StateDynamics for ShuttleDynamics {
    fn dim(&self) -> usize {
        15
    }

    fn step(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        let sample = self.imu.get(k - 1).ok_or(Error::DimensionMismatch {
            what: "IMU samples",
            expected: k,
            got: self.imu.len(),
        })?;
        let s = NavState15::from_slice(x.as_slice())?.canonical();
        Ok(strapdown_step(&s, sample, self.dt)?.to_vector())
    }
}

/// 24-state filter model: navigation states, IMU biases, 3 quadratics.
pub fn shuttle_model(cfg: &ShuttleConfig, imu: Arc<Vec<ImuSample>>) -> Result<AugmentedModel<ShuttleDynamics>> {
    let (q_bar, r_bar) = scale_noise(cfg.q_x, cfg.r, &cfg.scaling)?;
    let mut diag = q_bar;
    diag.extend([cfg.imu.accel_walk_std.powi(2); 3]);
    diag.extend([cfg.imu.gyro_walk_std.powi(2); 3]);
    diag.extend([cfg.q_p; SHUTTLE_D_THETA]);
    AugmentedModel::new(
        ShuttleDynamics { imu, dt: cfg.dt },
        SHUTTLE_OBSERVED.to_vec(),
        SHUTTLE_D_THETA,
        DMatrix::from_diagonal(&DVector::from_vec(diag)),
        DMatrix::from_diagonal(&DVector::from_vec(r_bar)),
    )
}

/// Filter prior over the 15 navigation states.
pub fn shuttle_prior(cfg: &ShuttleConfig, initial: &NavState15) -> (DVector<f64>, DMatrix<f64>) {
    let mut s = *initial;
    s.b_a = Vector3::zeros();
    s.b_g = Vector3::zeros();
    (s.to_vector(), DMatrix::from_diagonal_element(15, 15, cfg.initial_nav_var))
}
