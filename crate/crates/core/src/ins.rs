//! Strapdown inertial navigation over a flat, non-rotating Earth frame.
//!
//! Units are feet and seconds; angles are radians. Inertial vectors are
//! ordered (north, east, down).

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::psd_sqrt;
use crate::skf::fmt_f64;

/// Gravitational constant, ft^3/s^2.
pub const J1: f64 = 0.14076539e17;
/// Earth radius, ft.
pub const R_F: f64 = 20_902_900.0;
/// Pitch must stay this far from +/-pi/2.
pub const GIMBAL_MARGIN: f64 = 1e-6;
const POLAR_EPS: f64 = 1e-12;

/// Indices of the navigation state vector.
pub mod idx {
    pub const H: usize = 0;
    pub const L: usize = 1;
    pub const LAMBDA: usize = 2;
    pub const V: usize = 3;
    pub const GAMMA: usize = 4;
    pub const ALPHA: usize = 5;
    pub const PHI: usize = 6;
    pub const THETA: usize = 7;
    pub const PSI: usize = 8;
    pub const B_A: usize = 9;
    pub const B_G: usize = 12;
}

/// Names of the nine navigation states, in vector order.
pub const NAV_STATE_NAMES: [&str; 9] = ["h", "L", "lambda", "v", "gamma", "alpha", "phi", "theta", "psi"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState15 {
    pub h: f64,
    pub l: f64,
    pub lambda: f64,
    pub v: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub phi: f64,
    pub theta: f64,
    pub psi: f64,
    pub b_a: Vector3<f64>,
    pub b_g: Vector3<f64>,
}

impl NavState15 {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(15);
        let head = [
            self.h, self.l, self.lambda, self.v, self.gamma, self.alpha, self.phi, self.theta, self.psi,
        ];
        for (i, v) in head.iter().enumerate() {
            x[i] = *v;
        }
        x.fixed_rows_mut::<3>(idx::B_A).copy_from(&self.b_a);
        x.fixed_rows_mut::<3>(idx::B_G).copy_from(&self.b_g);
        x
    }

    /// Reads the first 15 entries of `x`.
    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() < 15 {
            return Err(Error::DimensionMismatch {
                what: "navigation state",
                expected: 15,
                got: x.len(),
            });
        }
        Ok(Self {
            h: x[0],
            l: x[1],
            lambda: x[2],
            v: x[3],
            gamma: x[4],
            alpha: x[5],
            phi: x[6],
            theta: x[7],
            psi: x[8],
            b_a: Vector3::new(x[9], x[10], x[11]),
            b_g: Vector3::new(x[12], x[13], x[14]),
        })
    }

    pub fn angles(&self) -> Vector3<f64> {
        Vector3::new(self.phi, self.theta, self.psi)
    }

    pub fn velocity_ned(&self) -> Vector3<f64> {
        velocity_ned(self.v, self.gamma, self.alpha)
    }

    pub fn attitude(&self) -> Matrix3<f64> {
        attitude_matrix(self.phi, self.theta, self.psi)
    }

    /// Same velocity vector and attitude with `v >= 0`, `|gamma| <= pi/2`,
    /// `|theta| <= pi/2` and every angle wrapped to (-pi, pi].
    pub fn canonical(&self) -> Self {
        let mut s = *self;
        if s.v < 0.0 {
            s.v = -s.v;
            s.gamma = -s.gamma;
            s.alpha += PI;
        }
        s.gamma = wrap_angle(s.gamma);
        if s.gamma.abs() > FRAC_PI_2 {
            s.gamma = wrap_angle(PI - s.gamma);
            s.alpha += PI;
        }
        s.theta = wrap_angle(s.theta);
        if s.theta.abs() > FRAC_PI_2 {
            s.theta = wrap_angle(PI - s.theta);
            s.phi += PI;
            s.psi += PI;
        }
        s.alpha = wrap_angle(s.alpha);
        s.phi = wrap_angle(s.phi);
        s.psi = wrap_angle(s.psi);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImuSample {
    /// Specific force, body frame, ft/s^2.
    pub f_b: Vector3<f64>,
    /// Angular rate, body frame, rad/s.
    pub omega_b: Vector3<f64>,
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// 3-2-1 Euler attitude matrix `C^i_b`.
pub fn attitude_matrix(phi: f64, theta: f64, psi: f64) -> Matrix3<f64> {
    let (sf, cf) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = psi.sin_cos();
    Matrix3::new(
        ct * cp,
        ct * sp,
        -st,
        sf * st * cp - cf * sp,
        sf * st * sp + cf * cp,
        sf * ct,
        cf * st * cp + sf * sp,
        cf * st * sp - sf * cp,
        cf * ct,
    )
}

/// Kinematic matrix mapping body rates to Euler angle rates.
pub fn euler_rate_matrix(phi: f64, theta: f64) -> Result<Matrix3<f64>> {
    if !(theta.abs() < FRAC_PI_2 - GIMBAL_MARGIN) {
        return Err(Error::GimbalSingularity { theta });
    }
    let (sf, cf) = phi.sin_cos();
    let (ct, tt) = (theta.cos(), theta.tan());
    Ok(Matrix3::new(
        1.0,
        sf * tt,
        cf * tt,
        0.0,
        cf,
        -sf,
        0.0,
        sf / ct,
        cf / ct,
    ))
}

/// Euler angle rates from a gyro reading, bias removed.
pub fn euler_rates(state: &NavState15, omega_meas: &Vector3<f64>) -> Result<Vector3<f64>> {
    Ok(euler_rate_matrix(state.phi, state.theta)? * (omega_meas - state.b_g))
}

/// Forward-Euler attitude propagation; returns wrapped `(phi, theta, psi)`.
pub fn attitude_update(state: &NavState15, omega_meas: &Vector3<f64>, dt: f64) -> Result<Vector3<f64>> {
    let next = state.angles() + euler_rates(state, omega_meas)? * dt;
    Ok(next.map(wrap_angle))
}

/// Gravity at altitude `h` as (north, east, down).
pub fn gravity(h: f64) -> Vector3<f64> {
    let r = R_F + h;
    Vector3::new(0.0, 0.0, J1 / (r * r))
}

/// Inertial velocity from speed, flight-path angle and azimuth.
pub fn velocity_ned(v: f64, gamma: f64, alpha: f64) -> Vector3<f64> {
    let (sg, cg) = gamma.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    Vector3::new(v * cg * ca, v * cg * sa, -v * sg)
}

/// Speed, flight-path angle and azimuth of an inertial velocity. A zero
/// vector keeps the previous angles.
pub fn polar_velocity(v_i: &Vector3<f64>, gamma_prev: f64, alpha_prev: f64) -> (f64, f64, f64) {
    let v = v_i.norm();
    if v == 0.0 {
        return (0.0, gamma_prev, alpha_prev);
    }
    let gamma = (-v_i[2] / v).clamp(-1.0, 1.0).asin();
    let alpha = if v_i[0] == 0.0 && v_i[1] == 0.0 {
        alpha_prev
    } else {
        v_i[1].atan2(v_i[0])
    };
    (v, gamma, alpha)
}

fn check_polar(l: f64) -> Result<f64> {
    let c = l.cos();
    if c.abs() < POLAR_EPS {
        return Err(Error::PolarSingularity { l });
    }
    Ok(c)
}

/// One strapdown step: attitude, specific force, velocity, position.
/// IMU biases are carried over unchanged.
pub fn strapdown_step(state: &NavState15, imu: &ImuSample, dt: f64) -> Result<NavState15> {
    let angles = attitude_update(state, &imu.omega_b, dt)?;
    let c_minus = state.attitude();
    let c_plus = attitude_matrix(angles[0], angles[1], angles[2]);
    let f_i = 0.5 * (c_minus + c_plus) * (imu.f_b - state.b_a);

    let v_minus = state.velocity_ned();
    let v_plus = v_minus + (f_i + gravity(state.h)) * dt;
    let (v, gamma, alpha) = polar_velocity(&v_plus, state.gamma, state.alpha);

    let h = state.h - 0.5 * dt * (v_minus[2] + v_plus[2]);
    let (r_minus, r_plus) = (R_F + state.h, R_F + h);
    let l = state.l + 0.5 * dt * (v_minus[0] / r_minus + v_plus[0] / r_plus);
    let (cl_minus, cl_plus) = (check_polar(state.l)?, check_polar(l)?);
    let lambda = state.lambda + 0.5 * dt * (v_minus[1] / (r_minus * cl_minus) + v_plus[1] / (r_plus * cl_plus));

    Ok(NavState15 {
        h,
        l,
        lambda,
        v,
        gamma,
        alpha,
        phi: angles[0],
        theta: angles[1],
        psi: angles[2],
        b_a: state.b_a,
        b_g: state.b_g,
    })
}

/// Inverts [`strapdown_step`]: the IMU sample that carries `prev` to `next`.
pub fn extract_imu(prev: &NavState15, next: &NavState15, dt: f64) -> Result<ImuSample> {
    let d_angles = Vector3::new(
        wrap_angle(next.phi - prev.phi),
        wrap_angle(next.theta - prev.theta),
        wrap_angle(next.psi - prev.psi),
    );
    let e = euler_rate_matrix(prev.phi, prev.theta)?;
    let e_inv = e.try_inverse().ok_or(Error::GimbalSingularity { theta: prev.theta })?;
    let omega_b = e_inv * (d_angles / dt) + prev.b_g;

    let f_i = (next.velocity_ned() - prev.velocity_ned()) / dt - gravity(prev.h);
    let avg = 0.5 * (prev.attitude() + next.attitude());
    let avg_inv = avg
        .try_inverse()
        .ok_or_else(|| Error::Malformed("attitude change too large to invert".into()))?;
    Ok(ImuSample {
        f_b: avg_inv * f_i + prev.b_a,
        omega_b,
    })
}

fn sqrt3(sigma: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let root = psd_sqrt(&DMatrix::from_column_slice(3, 3, sigma.as_slice()))?;
    Ok(Matrix3::from_column_slice(root.as_slice()))
}

fn normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// One random-walk step of the accelerometer and gyro biases.
pub fn propagate_imu_bias<R: Rng + ?Sized>(
    b_a: &Vector3<f64>,
    b_g: &Vector3<f64>,
    sigma_a: &Matrix3<f64>,
    sigma_g: &Matrix3<f64>,
    rng: &mut R,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let (sa, sg) = (sqrt3(sigma_a)?, sqrt3(sigma_g)?);
    let na = sa * normal3(rng);
    let ng = sg * normal3(rng);
    Ok((b_a + na, b_g + ng))
}

/// White sensor noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoise {
    /// ft/s^2
    pub accel_std: f64,
    /// rad/s
    pub gyro_std: f64,
}

/// Measured IMU sample: truth plus bias plus white noise.
pub fn synthesize_imu<R: Rng + ?Sized>(
    true_f_b: &Vector3<f64>,
    true_omega_b: &Vector3<f64>,
    b_a: &Vector3<f64>,
    b_g: &Vector3<f64>,
    noise: &ImuNoise,
    rng: &mut R,
) -> ImuSample {
    let na = normal3(rng) * noise.accel_std;
    let ng = normal3(rng) * noise.gyro_std;
    ImuSample {
        f_b: true_f_b + b_a + na,
        omega_b: true_omega_b + b_g + ng,
    }
}

/// Integrates an IMU stream from `initial`.
pub fn integrate(initial: &NavState15, imu: &[ImuSample], dt: f64) -> Result<Vec<NavState15>> {
    let mut out = Vec::with_capacity(imu.len() + 1);
    out.push(*initial);
    for (k, sample) in imu.iter().enumerate() {
        let next = strapdown_step(&out[k], sample, dt)?;
        out.push(next);
    }
    Ok(out)
}

/// Reference trajectory with the zero-order-hold IMU samples that drive it.
/// `imu[k]` acts over `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    pub states: Vec<NavState15>,
    pub imu: Vec<ImuSample>,
}

const REFERENCE_COLUMNS: [&str; 16] = [
    "t", "f_b_x", "f_b_y", "f_b_z", "omega_x", "omega_y", "omega_z", "h", "L", "lambda", "v", "gamma",
    "alpha", "phi", "theta", "psi",
];

impl ReferenceTrajectory {
    pub fn steps(&self) -> usize {
        self.imu.len()
    }

    /// Re-derives the IMU stream from consecutive states.
    pub fn from_states(states: Vec<NavState15>, dt: f64) -> Result<Self> {
        let imu = states
            .windows(2)
            .map(|w| extract_imu(&w[0], &w[1], dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { dt, states, imu })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REFERENCE_COLUMNS)?;
        for (k, s) in self.states.iter().enumerate() {
            let imu = self.imu.get(k).or(self.imu.last()).copied().unwrap_or_default();
            let row = [
                k as f64 * self.dt,
                imu.f_b[0],
                imu.f_b[1],
                imu.f_b[2],
                imu.omega_b[0],
                imu.omega_b[1],
                imu.omega_b[2],
                s.h,
                s.l,
                s.lambda,
                s.v,
                s.gamma,
                s.alpha,
                s.phi,
                s.theta,
                s.psi,
            ];
            w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a reference CSV; the IMU columns of the last row are ignored.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols != REFERENCE_COLUMNS {
            return Err(Error::Malformed(format!(
                "reference columns {cols:?}, expected {REFERENCE_COLUMNS:?}"
            )));
        }
        let mut rows: Vec<[f64; 16]> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut row = [0.0; 16];
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Malformed(format!("row {}: column {} is not a number", i + 1, REFERENCE_COLUMNS[j]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Malformed(format!("row {}: non-finite value", i + 1)));
                }
                row[j] = v;
            }
            rows.push(row);
        }
        if rows.len() < 2 {
            return Err(Error::Malformed("reference needs at least two rows".into()));
        }
        let dt = rows[1][0] - rows[0][0];
        if !(dt > 0.0) {
            return Err(Error::Malformed("reference time must increase".into()));
        }
        for (k, w) in rows.windows(2).enumerate() {
            if ((w[1][0] - w[0][0]) - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(Error::Malformed(format!("non-uniform time step at row {}", k + 2)));
            }
        }
        let states = rows
            .iter()
            .map(|r| {
                let mut x = [0.0; 15];
                x[..9].copy_from_slice(&r[7..16]);
                NavState15::from_slice(&x)
            })
            .collect::<Result<Vec<_>>>()?;
        let imu = rows[..rows.len() - 1]
            .iter()
            .map(|r| ImuSample {
                f_b: Vector3::new(r[1], r[2], r[3]),
                omega_b: Vector3::new(r[4], r[5], r[6]),
            })
            .collect();
        Ok(Self { dt, states, imu })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn level(v: f64) -> NavState15 {
        NavState15 {
            h: 1.5e5,
            l: 0.93,
            lambda: 0.32,
            v,
            gamma: 0.0,
            alpha: 0.8,
            phi: 0.0,
            theta: 0.0,
            psi: 0.0,
            b_a: Vector3::zeros(),
            b_g: Vector3::zeros(),
        }
    }

    #[test]
    fn attitude_identity_and_yaw() {
        assert!((attitude_matrix(0.0, 0.0, 0.0) - Matrix3::identity()).amax() < 1e-15);
        let c = attitude_matrix(0.0, 0.0, FRAC_PI_2);
        let expected = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((c - expected).amax() < 1e-15);
    }

    #[test]
    fn attitude_is_rotation() {
        for (a, b, c) in [(0.6, 0.2, 0.65), (-2.0, 1.2, 3.0), (3.1, -1.5, -0.4)] {
            let m = attitude_matrix(a, b, c);
            assert!((m * m.transpose() - Matrix3::identity()).amax() < 1e-12);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_rate_examples() {
        let mut s = level(0.0);
        let w = Vector3::new(0.1, -0.2, 0.3);
        assert!((euler_rates(&s, &w).unwrap() - w).amax() < 1e-15);
        s.b_g = w;
        assert_eq!(euler_rates(&s, &w).unwrap(), Vector3::zeros());
        s.b_g = Vector3::zeros();
        s.phi = FRAC_PI_2;
        let r = euler_rates(&s, &Vector3::new(0.0, 0.5, 0.0)).unwrap();
        assert!((r - Vector3::new(0.0, 0.0, 0.5)).amax() < 1e-15);
        s.theta = FRAC_PI_2;
        assert!(matches!(
            euler_rates(&s, &w),
            Err(Error::GimbalSingularity { .. })
        ));
    }

    #[test]
    fn yaw_rate_integrates() {
        let s = level(0.0);
        let a = attitude_update(&s, &Vector3::new(0.0, 0.0, 0.1), 1.4).unwrap();
        assert!((a[2] - 0.14).abs() < 1e-15);
        assert_eq!(attitude_update(&s, &Vector3::zeros(), 1.4).unwrap(), Vector3::zeros());
    }

    #[test]
    fn canonical_preserves_velocity_and_attitude() {
        let mut s = level(900.0);
        s.v = -900.0;
        s.gamma = 2.5;
        s.alpha = 7.0;
        s.phi = -4.0;
        s.theta = -20259.4;
        s.psi = 11.0;
        let c = s.canonical();
        assert!(c.v >= 0.0 && c.gamma.abs() <= FRAC_PI_2 && c.theta.abs() <= FRAC_PI_2);
        for a in [c.alpha, c.phi, c.psi] {
            assert!(a > -PI && a <= PI);
        }
        assert!((c.velocity_ned() - s.velocity_ned()).norm() < 1e-9);
        assert!((c.attitude() - s.attitude()).norm() < 1e-9);
        let ok = level(900.0);
        assert_eq!(ok.canonical(), ok);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert_eq!(wrap_angle(0.5), 0.5);
    }

    #[test]
    fn gravity_constants() {
        let g0 = gravity(0.0);
        assert_eq!(g0[0], 0.0);
        assert_eq!(g0[1], 0.0);
        assert!((g0[2] - 32.2).abs() < 0.05);
        assert!((g0[2] - J1 / (R_F * R_F)).abs() < 1e-12);
        assert!(gravity(1.5e5)[2] < g0[2]);
    }

    #[test]
    fn polar_round_trip() {
        let v = velocity_ned(1.4e4, -0.01, 0.8);
        let (s, g, a) = polar_velocity(&v, 0.0, 0.0);
        assert!((s - 1.4e4).abs() < 1e-9);
        assert!((g + 0.01).abs() < 1e-12);
        assert!((a - 0.8).abs() < 1e-12);
        assert_eq!(polar_velocity(&Vector3::zeros(), 0.3, 0.4), (0.0, 0.3, 0.4));
    }

    fn hover_force(s: &NavState15) -> ImuSample {
        let f_i = -gravity(s.h);
        ImuSample {
            f_b: s.attitude().try_inverse().unwrap() * f_i,
            omega_b: Vector3::zeros(),
        }
    }

    #[test]
    fn zero_dynamics_fixed_point() {
        let mut s = level(0.0);
        s.phi = 0.3;
        s.theta = -0.1;
        s.psi = 1.0;
        s.b_g = Vector3::new(1e-3, 2e-3, -1e-3);
        let mut imu = hover_force(&s);
        imu.omega_b = s.b_g;
        let next = strapdown_step(&s, &imu, 1.4).unwrap();
        for (a, b) in [
            (next.h, s.h),
            (next.l, s.l),
            (next.lambda, s.lambda),
            (next.phi, s.phi),
            (next.theta, s.theta),
            (next.psi, s.psi),
        ] {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn coasting_position_advance() {
        let s = level(1000.0);
        let imu = hover_force(&s);
        let dt = 1.4;
        let next = strapdown_step(&s, &imu, dt).unwrap();
        let vn = 1000.0 * 0.8f64.cos();
        let ve = 1000.0 * 0.8f64.sin();
        let r = R_F + s.h;
        assert!((next.h - s.h).abs() < 1e-9);
        assert!((next.l - (s.l + dt * vn / r)).abs() < 1e-12);
        let lambda = s.lambda + 0.5 * dt * ve / r * (1.0 / s.l.cos() + 1.0 / next.l.cos());
        assert!((next.lambda - lambda).abs() < 1e-12);
        assert!((next.v - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn polar_singularity_detected() {
        let mut s = level(100.0);
        s.l = FRAC_PI_2;
        let imu = hover_force(&s);
        assert!(matches!(strapdown_step(&s, &imu, 1.0), Err(Error::PolarSingularity { .. })));
    }

    #[test]
    fn extract_inverts_step() {
        let mut s = level(1.4e4);
        s.gamma = -0.005;
        s.phi = 0.6;
        s.theta = 0.2;
        s.psi = 0.65;
        let imu = ImuSample {
            f_b: Vector3::new(-5.0, 0.3, -31.0),
            omega_b: Vector3::new(1e-4, -2e-4, 5e-5),
        };
        let next = strapdown_step(&s, &imu, 1.4).unwrap();
        let back = extract_imu(&s, &next, 1.4).unwrap();
        assert!((back.f_b - imu.f_b).amax() < 1e-8);
        assert!((back.omega_b - imu.omega_b).amax() < 1e-12);
    }

    #[test]
    fn bias_walk_zero_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Vector3::new(1.0, 2.0, 3.0);
        let z = Matrix3::zeros();
        assert_eq!(propagate_imu_bias(&b, &b, &z, &z, &mut rng).unwrap(), (b, b));
        let s = Matrix3::identity() * 1e-4;
        let a1 = propagate_imu_bias(&b, &b, &s, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let a2 = propagate_imu_bias(&b, &b, &s, &s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn bias_walk_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let sigma_a = Matrix3::from_diagonal(&Vector3::new(1e-6, 4e-6, 2.5e-7));
        let sigma_g = Matrix3::identity() * 1e-10;
        let steps = 100_000;
        let mut b_a = Vector3::zeros();
        let mut b_g = Vector3::zeros();
        let mut sum_sq = Vector3::<f64>::zeros();
        for _ in 0..steps {
            let (na, ng) = propagate_imu_bias(&b_a, &b_g, &sigma_a, &sigma_g, &mut rng).unwrap();
            let inc = na - b_a;
            sum_sq += inc.component_mul(&inc);
            b_a = na;
            b_g = ng;
        }
        for i in 0..3 {
            let expected = steps as f64 * sigma_a[(i, i)];
            assert!(((sum_sq[i] - expected) / expected).abs() < 0.05, "{i}: {} vs {expected}", sum_sq[i]);
        }
        assert!(b_g.amax() > 0.0);
    }

    #[test]
    fn synthesize_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Vector3::new(1.0, 2.0, 3.0);
        let w = Vector3::new(0.1, 0.2, 0.3);
        let z = Vector3::zeros();
        let quiet = ImuNoise::default();
        let s = synthesize_imu(&f, &w, &z, &z, &quiet, &mut rng);
        assert_eq!((s.f_b, s.omega_b), (f, w));
        let s = synthesize_imu(&f, &w, &Vector3::new(1.0, 0.0, 0.0), &z, &quiet, &mut rng);
        assert_eq!(s.f_b, f + Vector3::new(1.0, 0.0, 0.0));

        let noise = ImuNoise {
            accel_std: 0.5,
            gyro_std: 0.1,
        };
        let n = 10_000;
        let mut mean = Vector3::zeros();
        for _ in 0..n {
            mean += synthesize_imu(&f, &w, &z, &z, &noise, &mut rng).f_b;
        }
        mean /= n as f64;
        assert!((mean - f).amax() < 3.0 * 0.5 / 100.0);
    }

    #[test]
    fn reference_csv_round_trip() {
        let s0 = level(1.4e4);
        let imu = vec![hover_force(&s0); 5];
        let states = integrate(&s0, &imu, 1.4).unwrap();
        let r = ReferenceTrajectory {
            dt: 1.4,
            states,
            imu,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let back = ReferenceTrajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.states.len(), 6);
        assert_eq!(back.imu.len(), 5);
        assert!((back.dt - 1.4).abs() < 1e-12);
        assert_eq!(back.states[3].h, r.states[3].h);
        assert_eq!(back.imu[2], r.imu[2]);

        assert!(ReferenceTrajectory::read_csv("t,x\n0,1\n".as_bytes()).is_err());
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(2).collect::<Vec<_>>().join("\n");
        assert!(ReferenceTrajectory::read_csv(truncated.as_bytes()).is_err());
    }
}
