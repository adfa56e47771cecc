//! Unscented Gaussian filtering.
//!
//! Beliefs are propagated with the scaled unscented transform: a set of
//! `2d + 1` sigma points is pushed through the (possibly nonlinear) dynamics or
//! observation map and the first two moments are recovered from the weighted
//! point cloud.
//!
//! Moments are accumulated in *paired deviation form*: every `+` point is
//! combined with its mirrored `-` point before being added to the running sum.
//! For state blocks that a map ignores (for example bias parameters under the
//! nominal observation model) the two halves of each pair cancel exactly, so
//! those blocks keep an exactly zero mean shift and cross-covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest relative diagonal jitter tried before a covariance is declared
/// non-PSD.
pub const MAX_JITTER: f64 = 1e-6;
const MIN_JITTER: f64 = 1e-12;
/// Eigenvalues of the unit-diagonal covariance down to this value, relative
/// to the largest one, are treated as numerical zeros.
pub const PSD_EIGEN_TOL: f64 = 1e-9;
/// Innovation covariances are rejected as singular when some channel's
/// conditional variance falls below its marginal variance by this factor.
const MAX_INNOVATION_CONDITION: f64 = 1e16;

/// Gaussian approximation `N(mean, cov)` of the filtering distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Builds a belief, symmetrizing the covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "covariance",
                expected: mean.len(),
                got: cov.nrows().max(cov.ncols()),
            });
        }
        let mut belief = Self { mean, cov };
        belief.symmetrize();
        Ok(belief)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `C <- (C + C^T) / 2`
    pub fn symmetrize(&mut self) {
        symmetrize(&mut self.cov);
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Tuning of the scaled unscented transform.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaPointParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaPointParams {
    fn default() -> Self {
        Self {
            alpha: 1e-1,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SigmaPointParams {
    pub fn new(alpha: f64, beta: f64, kappa: f64) -> Self {
        Self { alpha, beta, kappa }
    }

    /// Checks `alpha > 0` and `alpha^2 (d + kappa) > 0` for state dimension `d`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let spread = self.alpha * self.alpha * (dim as f64 + self.kappa);
        if !(self.alpha > 0.0) || !(spread > 0.0) || !spread.is_finite() {
            return Err(Error::config(format!(
                "sigma-point parameters {self:?} give non-positive spread for d = {dim}"
            )));
        }
        Ok(())
    }

    /// `lambda = alpha^2 (d + kappa) - d`
    pub fn lambda(&self, dim: usize) -> f64 {
        let d = dim as f64;
        self.alpha * self.alpha * (d + self.kappa) - d
    }
}

/// Weighted sigma-point set. Column 0 is the mean, columns `1..=d` are the
/// `+` points and columns `d+1..=2d` their mirrored `-` counterparts.
#[derive(Debug, Clone)]
pub struct SigmaPoints {
    pub points: DMatrix<f64>,
    /// Mean weight of the central point.
    pub wm0: f64,
    /// Covariance weight of the central point.
    pub wc0: f64,
    /// Shared weight of every non-central point.
    pub wi: f64,
}

impl SigmaPoints {
    pub fn dim(&self) -> usize {
        self.points.nrows()
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn mean_weights(&self) -> Vec<f64> {
        let mut w = vec![self.wi; self.len()];
        w[0] = self.wm0;
        w
    }

    pub fn cov_weights(&self) -> Vec<f64> {
        let mut w = vec![self.wi; self.len()];
        w[0] = self.wc0;
        w
    }

    /// Applies `map` to every point, returning the transformed points as columns.
    pub fn transform<F>(&self, map: F) -> Result<DMatrix<f64>>
    where
        F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
    {
        let mut out: Option<DMatrix<f64>> = None;
        for (i, col) in self.points.column_iter().enumerate() {
            let y = map(&col.into_owned())?;
            let target = out.get_or_insert_with(|| DMatrix::zeros(y.len(), self.len()));
            if y.len() != target.nrows() {
                return Err(Error::DimensionMismatch {
                    what: "mapped sigma point",
                    expected: target.nrows(),
                    got: y.len(),
                });
            }
            target.set_column(i, &y);
        }
        Ok(out.unwrap_or_else(|| DMatrix::zeros(0, 0)))
    }

    /// Weighted mean of transformed points (columns of `values`).
    pub fn weighted_mean(&self, values: &DMatrix<f64>) -> DVector<f64> {
        let d = self.dim();
        let center = values.column(0).into_owned();
        let mut acc = DVector::zeros(values.nrows());
        for j in 1..=d {
            let plus = values.column(j);
            let minus = values.column(j + d);
            for r in 0..values.nrows() {
                acc[r] += self.wi * ((plus[r] - center[r]) + (minus[r] - center[r]));
            }
        }
        center + acc
    }

    /// Weighted cross-covariance `sum_i wc_i (a_i - a_mean)(b_i - b_mean)^T`.
    pub fn weighted_cross_cov(
        &self,
        a: &DMatrix<f64>,
        a_mean: &DVector<f64>,
        b: &DMatrix<f64>,
        b_mean: &DVector<f64>,
    ) -> DMatrix<f64> {
        let d = self.dim();
        let (na, nb) = (a.nrows(), b.nrows());
        let dev = |m: &DMatrix<f64>, mean: &DVector<f64>, i: usize| m.column(i) - mean;
        let mut acc = DMatrix::zeros(na, nb);

        let a0 = dev(a, a_mean, 0);
        let b0 = dev(b, b_mean, 0);
        for r in 0..na {
            for c in 0..nb {
                acc[(r, c)] += self.wc0 * a0[r] * b0[c];
            }
        }
        for j in 1..=d {
            let (ap, am) = (dev(a, a_mean, j), dev(a, a_mean, j + d));
            let (bp, bm) = (dev(b, b_mean, j), dev(b, b_mean, j + d));
            for r in 0..na {
                for c in 0..nb {
                    acc[(r, c)] += self.wi * (ap[r] * bp[c] + am[r] * bm[c]);
                }
            }
        }
        acc
    }
}

/// Square root `S` with `S S^T = cov`.
///
/// Tries a plain Cholesky factorization first. Otherwise the matrix is scaled
/// to unit diagonal and factored by eigen-decomposition (clamping slightly
/// negative eigenvalues), then by Cholesky with diagonal jitter escalating
/// from 1e-12 to 1e-6, so tolerances are relative to each variance.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch.l());
    }
    let not_psd = Error::CovarianceNotPsd {
        max_jitter: MAX_JITTER,
    };
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(not_psd);
    }
    let scale = cov.diagonal().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
    let corr = cov.component_div(&(&scale * scale.transpose()));
    let root = unit_sqrt(&corr).ok_or(not_psd)?;
    Ok(DMatrix::from_diagonal(&scale) * root)
}

fn unit_sqrt(corr: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(corr.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let top = eig.eigenvalues.iter().fold(1.0f64, |m, l| m.max(l.abs()));
    if min >= -PSD_EIGEN_TOL * top {
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let v = &eig.eigenvectors;
        return Some(v * DMatrix::from_diagonal(&sqrt_vals) * v.transpose());
    }
    let n = corr.nrows();
    let mut jitter = MIN_JITTER;
    while jitter <= MAX_JITTER * (1.0 + 1e-9) {
        if let Some(ch) = Cholesky::new(corr + DMatrix::<f64>::identity(n, n) * jitter) {
            return Some(ch.l());
        }
        jitter *= 10.0;
    }
    None
}

/// Scaled unscented sigma points for `belief`.
pub fn sigma_points(belief: &GaussianBelief, params: &SigmaPointParams) -> Result<SigmaPoints> {
    let d = belief.dim();
    params.validate(d)?;
    let lambda = params.lambda(d);
    let c = d as f64 + lambda;
    let root = psd_sqrt(&belief.cov)? * c.sqrt();

    let mut points = DMatrix::zeros(d, 2 * d + 1);
    points.set_column(0, &belief.mean);
    for j in 0..d {
        let offset = root.column(j);
        points.set_column(j + 1, &(&belief.mean + offset));
        points.set_column(j + 1 + d, &(&belief.mean - offset));
    }
    Ok(SigmaPoints {
        points,
        wm0: lambda / c,
        wc0: lambda / c + (1.0 - params.alpha * params.alpha + params.beta),
        wi: 1.0 / (2.0 * c),
    })
}

fn check_square(m: &DMatrix<f64>, dim: usize, what: &'static str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            what,
            expected: dim,
            got: m.nrows().max(m.ncols()),
        });
    }
    Ok(())
}

/// Unscented prediction through `dynamics` with additive process noise `q`.
pub fn predict<F>(
    belief: &GaussianBelief,
    dynamics: F,
    q: &DMatrix<f64>,
    params: &SigmaPointParams,
) -> Result<GaussianBelief>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let d = belief.dim();
    check_square(q, d, "process noise")?;
    let sp = sigma_points(belief, params)?;
    let propagated = sp.transform(&dynamics)?;
    if propagated.nrows() != d {
        return Err(Error::DimensionMismatch {
            what: "dynamics output",
            expected: d,
            got: propagated.nrows(),
        });
    }
    if propagated.iter().any(|v| !v.is_finite()) {
        return Err(Error::DynamicsDiverged { step: None });
    }
    let mean = sp.weighted_mean(&propagated);
    let mut cov = sp.weighted_cross_cov(&propagated, &mean, &propagated, &mean) + q;
    symmetrize(&mut cov);
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::DynamicsDiverged { step: None });
    }
    Ok(GaussianBelief { mean, cov })
}

/// Predicted measurement moments: mean `mu` and innovation covariance `d`
/// (including measurement noise).
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedObservation {
    pub mu: DVector<f64>,
    pub d: DMatrix<f64>,
}

fn innovation_factor(d: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InnovationSingular);
    }
    let ch = Cholesky::new(d.clone()).ok_or(Error::InnovationSingular)?;
    let l = ch.l_dirty();
    for i in 0..d.nrows() {
        let cond = l[(i, i)] * l[(i, i)];
        if !(cond > 0.0) || d[(i, i)] / cond > MAX_INNOVATION_CONDITION {
            return Err(Error::InnovationSingular);
        }
    }
    Ok(ch)
}

/// Unscented measurement update of `belief` with observation `y`.
///
/// Returns the posterior and the pre-update predicted observation.
pub fn update<H>(
    belief: &GaussianBelief,
    observation: H,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
    params: &SigmaPointParams,
) -> Result<(GaussianBelief, PredictedObservation)>
where
    H: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMeasurement(format!("non-finite entry in {y:?}")));
    }
    let sp = sigma_points(belief, params)?;
    let predicted = sp.transform(&observation)?;
    if predicted.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            what: "measurement",
            expected: predicted.nrows(),
            got: y.len(),
        });
    }
    check_square(r, y.len(), "measurement noise")?;
    let mu = sp.weighted_mean(&predicted);
    let mut d = sp.weighted_cross_cov(&predicted, &mu, &predicted, &mu) + r;
    symmetrize(&mut d);
    let pxy = sp.weighted_cross_cov(&sp.points, &belief.mean, &predicted, &mu);

    let ch = innovation_factor(&d)?;
    // K = Pxy D^-1, computed as (D^-1 Pxy^T)^T
    let gain = ch.solve(&pxy.transpose()).transpose();
    let innovation = y - &mu;
    let mean = &belief.mean + &gain * innovation;
    let mut cov = &belief.cov - &gain * &d * gain.transpose();
    symmetrize(&mut cov);
    Ok((GaussianBelief { mean, cov }, PredictedObservation { mu, d }))
}

/// Constant-free marginal log-likelihood term `-log|D| - (y-mu)^T D^-1 (y-mu)`.
pub fn log_likelihood_increment(y: &DVector<f64>, pred: &PredictedObservation) -> Result<f64> {
    if y.len() != pred.mu.len() {
        return Err(Error::DimensionMismatch {
            what: "measurement",
            expected: pred.mu.len(),
            got: y.len(),
        });
    }
    let ch = innovation_factor(&pred.d)?;
    let e = y - &pred.mu;
    let log_det: f64 = ch.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    let mahalanobis = e.dot(&ch.solve(&e));
    Ok(-log_det - mahalanobis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn belief(mean: DVector<f64>, cov: DMatrix<f64>) -> GaussianBelief {
        GaussianBelief::new(mean, cov).unwrap()
    }

    #[test]
    fn sigma_points_one_dimensional_hand_values() {
        let b = belief(dvector![0.0], dmatrix![1.0]);
        let sp = sigma_points(&b, &SigmaPointParams::new(1.0, 0.0, 2.0)).unwrap();
        let s3 = 3f64.sqrt();
        assert!((sp.points[(0, 0)]).abs() < 1e-15);
        assert!((sp.points[(0, 1)] - s3).abs() < 1e-15);
        assert!((sp.points[(0, 2)] + s3).abs() < 1e-15);
        // lambda = 2, c = 3
        assert!((sp.wm0 - 2.0 / 3.0).abs() < 1e-15);
        assert!((sp.wi - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn zero_covariance_collapses_points_onto_mean() {
        let mean = dvector![1.5, -2.0, 7.0];
        let b = belief(mean.clone(), DMatrix::zeros(3, 3));
        let sp = sigma_points(&b, &SigmaPointParams::default()).unwrap();
        assert_eq!(sp.len(), 7);
        for col in sp.points.column_iter() {
            assert_eq!(col.into_owned(), mean);
        }
    }

    #[test]
    fn identity_covariance_moments_reconstruct() {
        let b = belief(dvector![1.0, 2.0], DMatrix::identity(2, 2));
        let sp = sigma_points(&b, &SigmaPointParams::default()).unwrap();
        let m = sp.weighted_mean(&sp.points);
        let c = sp.weighted_cross_cov(&sp.points, &m, &sp.points, &m);
        assert!((m - dvector![1.0, 2.0]).amax() < 1e-12);
        assert!((c - DMatrix::<f64>::identity(2, 2)).amax() < 1e-12);
    }

    #[test]
    fn weights_sum_to_one() {
        for d in [1usize, 2, 5, 24] {
            let b = belief(DVector::zeros(d), DMatrix::identity(d, d));
            let sp = sigma_points(&b, &SigmaPointParams::default()).unwrap();
            let s: f64 = sp.mean_weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "d={d} sum={s}");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let b = belief(dvector![0.0], dmatrix![1.0]);
        assert!(sigma_points(&b, &SigmaPointParams::new(0.0, 2.0, 0.0)).is_err());
        assert!(sigma_points(&b, &SigmaPointParams::new(1.0, 2.0, -1.0)).is_err());
    }

    #[test]
    fn indefinite_covariance_is_an_error() {
        let b = GaussianBelief {
            mean: dvector![0.0, 0.0],
            cov: dmatrix![1.0, 0.0; 0.0, -1.0],
        };
        assert!(matches!(
            sigma_points(&b, &SigmaPointParams::default()),
            Err(Error::CovarianceNotPsd { .. })
        ));
    }

    #[test]
    fn slightly_negative_eigenvalue_recovered_by_jitter() {
        let b = GaussianBelief {
            mean: dvector![0.0, 0.0],
            cov: dmatrix![1.0, 0.0; 0.0, -1e-8],
        };
        assert!(sigma_points(&b, &SigmaPointParams::default()).is_ok());
    }

    #[test]
    fn identity_dynamics_without_noise_is_a_fixed_point() {
        let b = belief(dvector![0.3, -1.0], dmatrix![2.0, 0.5; 0.5, 1.0]);
        let out = predict(&b, |x| Ok(x.clone()), &DMatrix::zeros(2, 2), &Default::default())
            .unwrap();
        assert!((&out.mean - &b.mean).amax() < 1e-12);
        assert!((&out.cov - &b.cov).amax() < 1e-12);
    }

    #[test]
    fn linear_prediction_matches_closed_form() {
        let dt = 0.7;
        let a = dmatrix![1.0, dt; 0.0, 1.0];
        let q = dmatrix![0.01, 0.002; 0.002, 0.03];
        let b = belief(dvector![1.0, -0.5], dmatrix![0.4, 0.1; 0.1, 0.2]);
        let out = predict(&b, |x| Ok(&a * x), &q, &Default::default()).unwrap();
        let mean = &a * &b.mean;
        let cov = &a * &b.cov * a.transpose() + &q;
        assert!((out.mean - mean).amax() < 1e-9);
        assert!((out.cov - cov).amax() < 1e-9);
    }

    #[test]
    fn non_finite_dynamics_reported() {
        let b = belief(dvector![1.0], dmatrix![1.0]);
        let err = predict(&b, |x| Ok(x.map(|_| f64::NAN)), &dmatrix![0.0], &Default::default())
            .unwrap_err();
        assert!(matches!(err, Error::DynamicsDiverged { .. }));
    }

    #[test]
    fn scalar_update_matches_kalman_gain() {
        let b = belief(dvector![2.0], dmatrix![4.0]);
        let r = dmatrix![1.0];
        let y = dvector![3.0];
        let (post, pred) = update(&b, |x| Ok(x.clone()), &y, &r, &Default::default()).unwrap();
        let k = 4.0 / 5.0;
        assert!((post.mean[0] - (2.0 + k * 1.0)).abs() < 1e-9);
        assert!((post.cov[(0, 0)] - (1.0 - k) * 4.0).abs() < 1e-9);
        assert!((pred.mu[0] - 2.0).abs() < 1e-12);
        assert!((pred.d[(0, 0)] - 5.0).abs() < 1e-9);
    }

    #[test]
    fn uninformative_measurement_leaves_prior() {
        let b = belief(dvector![1.0, 2.0], dmatrix![1.0, 0.2; 0.2, 0.5]);
        let r = DMatrix::identity(2, 2) * 1e12;
        let (post, _) =
            update(&b, |x| Ok(x.clone()), &dvector![100.0, -50.0], &r, &Default::default())
                .unwrap();
        for i in 0..2 {
            assert!(((post.mean[i] - b.mean[i]) / b.mean[i]).abs() < 1e-3);
        }
        assert!(((&post.cov - &b.cov).amax() / b.cov.amax()) < 1e-3);
    }

    #[test]
    fn ignored_block_is_untouched_by_update() {
        let b = belief(dvector![1.0, 5.0], dmatrix![1.0, 0.0; 0.0, 2.0]);
        let (post, _) = update(
            &b,
            |x| Ok(dvector![x[0]]),
            &dvector![3.0],
            &dmatrix![0.5],
            &Default::default(),
        )
        .unwrap();
        assert_eq!(post.mean[1], 5.0);
        assert_eq!(post.cov[(0, 1)], 0.0);
        assert_eq!(post.cov[(1, 1)], 2.0);
    }

    #[test]
    fn update_errors() {
        let b = belief(dvector![1.0], dmatrix![1.0]);
        let p = SigmaPointParams::default();
        assert!(matches!(
            update(&b, |x| Ok(x.clone()), &dvector![f64::NAN], &dmatrix![1.0], &p),
            Err(Error::InvalidMeasurement(_))
        ));
        let zero = belief(dvector![1.0], dmatrix![0.0]);
        assert!(matches!(
            update(&zero, |x| Ok(x.clone()), &dvector![1.0], &dmatrix![0.0], &p),
            Err(Error::InnovationSingular)
        ));
        assert!(matches!(
            update(&b, |x| Ok(x.clone()), &dvector![1.0, 2.0], &dmatrix![1.0], &p),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn likelihood_increment_examples() {
        let unit = PredictedObservation {
            mu: dvector![0.0],
            d: dmatrix![1.0],
        };
        assert_eq!(log_likelihood_increment(&dvector![0.0], &unit).unwrap(), 0.0);
        assert!((log_likelihood_increment(&dvector![2.0], &unit).unwrap() + 4.0).abs() < 1e-12);
        let e = std::f64::consts::E;
        let diag = PredictedObservation {
            mu: dvector![0.0, 0.0],
            d: dmatrix![e, 0.0; 0.0, e],
        };
        let l = log_likelihood_increment(&dvector![0.0, 0.0], &diag).unwrap();
        assert!((l + 2.0).abs() < 1e-12);
        let singular = PredictedObservation {
            mu: dvector![0.0],
            d: dmatrix![0.0],
        };
        assert!(log_likelihood_increment(&dvector![0.0], &singular).is_err());
    }
}
