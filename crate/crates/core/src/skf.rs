//! Branched, selective switching Kalman filter.
//!
//! A nominal branch assimilates every measurement with the uncorrupted
//! observation model. At each observation epoch a new corrupted branch is
//! spawned from the nominal one; every corrupted branch evaluates the learned
//! quadratic bias from its own switch time onwards. Branches accumulate the
//! constant-free marginal log-likelihood and the weakest corrupted branches are
//! pruned to keep at most `capacity` branches in total.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{learned_offset, select};
use crate::error::{Error, Result};
use crate::gaussian::{self, GaussianBelief, SigmaPointParams};

/// Unaugmented state transition `x_{k-1} -> x_k`.
pub trait StateDynamics: Sync {
    fn dim(&self) -> usize;
    /// Advances a state from step `k - 1` to step `k`.
    fn step(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>>;
}

/// Augmented-state model used by every branch.
pub trait SwitchingModel: Sync {
    fn dim(&self) -> usize;
    fn dynamics(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>>;
    fn process_noise(&self) -> &DMatrix<f64>;
    fn nominal_observation(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn corrupted_observation(&self, x: &DVector<f64>, t_s: f64, t_k: f64) -> Result<DVector<f64>>;
    fn measurement_noise(&self) -> &DMatrix<f64>;
}

/// State dynamics augmented with constant bias parameters and a learned
/// quadratic corruption of the observed channels.
pub struct AugmentedModel<D> {
    pub dynamics: D,
    pub observed: Vec<usize>,
    pub d_theta: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl<D: StateDynamics> AugmentedModel<D> {
    pub fn new(
        dynamics: D,
        observed: Vec<usize>,
        d_theta: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let dim = dynamics.dim() + d_theta;
        if q.nrows() != dim || q.ncols() != dim {
            return Err(Error::DimensionMismatch {
                what: "augmented process noise",
                expected: dim,
                got: q.nrows(),
            });
        }
        if r.nrows() != observed.len() || r.ncols() != observed.len() {
            return Err(Error::DimensionMismatch {
                what: "measurement noise",
                expected: observed.len(),
                got: r.nrows(),
            });
        }
        if d_theta != 3 && d_theta != 3 * observed.len() {
            return Err(Error::config(format!(
                "learned quadratic needs 3 or {} parameters, got {d_theta}",
                3 * observed.len()
            )));
        }
        Ok(Self {
            dynamics,
            observed,
            d_theta,
            q,
            r,
        })
    }

    fn dx(&self) -> usize {
        self.dynamics.dim()
    }
}

impl<D: StateDynamics> SwitchingModel for AugmentedModel<D> {
    fn dim(&self) -> usize {
        self.dx() + self.d_theta
    }

    fn dynamics(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        let dx = self.dx();
        let next = self.dynamics.step(&x.rows(0, dx).into_owned(), k)?;
        let mut out = x.clone();
        out.rows_mut(0, dx).copy_from(&next);
        Ok(out)
    }

    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }

    fn nominal_observation(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        select(x, &self.observed)
    }

    fn corrupted_observation(&self, x: &DVector<f64>, t_s: f64, t_k: f64) -> Result<DVector<f64>> {
        let nominal = select(x, &self.observed)?;
        if t_k <= t_s {
            return Ok(nominal);
        }
        let theta: Vec<f64> = x.rows(self.dx(), self.d_theta).iter().copied().collect();
        Ok(nominal + learned_offset(&theta, t_k - t_s, self.observed.len())?)
    }

    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// What each branch keeps per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistoryMode {
    None,
    #[default]
    Means,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub log_l: f64,
    pub mean: DVector<f64>,
    /// Covariance diagonal, kept in [`HistoryMode::Full`].
    pub var: Option<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub nominal: bool,
    /// Assumed switch time (0 for the nominal branch).
    pub t_s: f64,
    pub log_l: f64,
    pub belief: GaussianBelief,
    pub spawn_step: usize,
    /// Snapshots from `spawn_step` on.
    pub history: Vec<Snapshot>,
}

impl Branch {
    fn record(&mut self, step: usize, time: f64, mode: HistoryMode) {
        if mode == HistoryMode::None {
            return;
        }
        self.history.push(Snapshot {
            step,
            time,
            log_l: self.log_l,
            mean: self.belief.mean.clone(),
            var: (mode == HistoryMode::Full).then(|| self.belief.cov.diagonal()),
        });
    }

    /// Switch time, `None` for the nominal branch.
    pub fn switch_time(&self) -> Option<f64> {
        (!self.nominal).then_some(self.t_s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkfConfig {
    /// Maximum number of branches including the nominal one.
    pub capacity: usize,
    /// Measurement every `delta` steps.
    pub delta: usize,
    pub dt: f64,
    pub sigma: SigmaPointParams,
    pub history: HistoryMode,
    /// Process branches on the rayon pool.
    pub parallel: bool,
}

impl SkfConfig {
    pub fn new(capacity: usize, delta: usize, dt: f64) -> Self {
        Self {
            capacity,
            delta,
            dt,
            sigma: SigmaPointParams::default(),
            history: HistoryMode::Means,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.capacity < 2 {
            return Err(Error::config(format!("branch capacity must be >= 2, got {}", self.capacity)));
        }
        if self.delta == 0 {
            return Err(Error::config("sampling period delta must be >= 1"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config(format!("time step must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Branches pruned or spawned at one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub observed: bool,
    pub spawned: Option<f64>,
    /// `(t_s, logL)` of every removed branch.
    pub pruned: Vec<(f64, f64)>,
    /// Smallest corrupted logL present before pruning.
    pub min_log_l_before: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BranchSet {
    pub nominal: Branch,
    pub corrupted: Vec<Branch>,
    pub config: SkfConfig,
    pub step: usize,
}

/// Which branch wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchId {
    Nominal,
    Corrupted(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub best: BranchId,
    pub switch_time: Option<f64>,
    pub best_log_l: f64,
    /// `(switch time, logL, weight)` for every branch, nominal first.
    pub weights: Vec<(Option<f64>, f64, f64)>,
}

fn tag(branch: &Branch, step: usize) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Branch {
        t_s: branch.t_s,
        step,
        source: Box::new(e),
    }
}

impl BranchSet {
    /// Nominal branch over `[x0, 0]` with covariance `diag(C0, I)`.
    pub fn init(
        x0: &DVector<f64>,
        c0: &DMatrix<f64>,
        d_theta: usize,
        config: SkfConfig,
    ) -> Result<Self> {
        config.validate()?;
        let dx = x0.len();
        if c0.nrows() != dx || c0.ncols() != dx {
            return Err(Error::config(format!(
                "initial covariance is {}x{}, state has {dx} entries",
                c0.nrows(),
                c0.ncols()
            )));
        }
        let mut mean = DVector::zeros(dx + d_theta);
        mean.rows_mut(0, dx).copy_from(x0);
        let mut cov = DMatrix::identity(dx + d_theta, dx + d_theta);
        cov.view_mut((0, 0), (dx, dx)).copy_from(c0);
        let mut nominal = Branch {
            nominal: true,
            t_s: 0.0,
            log_l: 0.0,
            belief: GaussianBelief::new(mean, cov)?,
            spawn_step: 0,
            history: Vec::new(),
        };
        nominal.record(0, 0.0, config.history);
        Ok(Self {
            nominal,
            corrupted: Vec::new(),
            config,
            step: 0,
        })
    }

    pub fn len(&self) -> usize {
        1 + self.corrupted.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn branch(&self, id: BranchId) -> &Branch {
        match id {
            BranchId::Nominal => &self.nominal,
            BranchId::Corrupted(i) => &self.corrupted[i],
        }
    }

    fn for_each_branch<F>(&mut self, f: F) -> Result<()>
    where
        F: Fn(&mut Branch) -> Result<()> + Sync + Send,
    {
        let mut all: Vec<&mut Branch> = std::iter::once(&mut self.nominal)
            .chain(self.corrupted.iter_mut())
            .collect();
        if self.config.parallel {
            all.par_iter_mut().map(|b| f(b)).collect::<Result<Vec<()>>>()?;
        } else {
            for b in all {
                f(b)?;
            }
        }
        Ok(())
    }

    /// Predicts every branch to step `k`.
    pub fn predict_all<M: SwitchingModel>(&mut self, model: &M, k: usize) -> Result<()> {
        let sigma = self.config.sigma;
        self.for_each_branch(|b| {
            let predicted = gaussian::predict(
                &b.belief,
                |x| model.dynamics(x, k),
                model.process_noise(),
                &sigma,
            )
            .map_err(|e| match e {
                Error::DynamicsDiverged { .. } => Error::DynamicsDiverged { step: Some(k) },
                other => other,
            })
            .map_err(tag(b, k))?;
            b.belief = predicted;
            Ok(())
        })
    }

    /// Advances to step `k`, assimilating `y` when present.
    pub fn step<M: SwitchingModel>(
        &mut self,
        model: &M,
        k: usize,
        y: Option<&DVector<f64>>,
    ) -> Result<StepReport> {
        if k != self.step + 1 {
            return Err(Error::config(format!("expected step {}, got {k}", self.step + 1)));
        }
        let cfg = self.config;
        let t_k = k as f64 * cfg.dt;
        self.predict_all(model, k)?;
        let mut report = StepReport {
            step: k,
            ..Default::default()
        };

        if let Some(y) = y {
            if k % cfg.delta != 0 {
                return Err(Error::InvalidMeasurement(format!(
                    "step {k} is not an observation epoch (delta = {})",
                    cfg.delta
                )));
            }
            let r = model.measurement_noise();
            let assimilate = |b: &Branch, t_s: Option<f64>| -> Result<(GaussianBelief, f64)> {
                let (post, pred) = match t_s {
                    None => gaussian::update(&b.belief, |x| model.nominal_observation(x), y, r, &cfg.sigma),
                    Some(ts) => gaussian::update(
                        &b.belief,
                        |x| model.corrupted_observation(x, ts, t_k),
                        y,
                        r,
                        &cfg.sigma,
                    ),
                }
                .map_err(tag(b, k))?;
                let inc = gaussian::log_likelihood_increment(y, &pred).map_err(tag(b, k))?;
                Ok((post, inc))
            };

            let (spawn_belief, spawn_inc) = assimilate(&self.nominal, Some(t_k))?;
            let (nominal_belief, nominal_inc) = assimilate(&self.nominal, None)?;
            let spawned = Branch {
                nominal: false,
                t_s: t_k,
                log_l: self.nominal.log_l + spawn_inc,
                belief: spawn_belief,
                spawn_step: k,
                history: Vec::new(),
            };
            self.nominal.belief = nominal_belief;
            self.nominal.log_l += nominal_inc;

            let update_one = |b: &mut Branch| -> Result<()> {
                let (post, inc) = assimilate(b, Some(b.t_s))?;
                b.belief = post;
                b.log_l += inc;
                Ok(())
            };
            if cfg.parallel {
                self.corrupted
                    .par_iter_mut()
                    .map(update_one)
                    .collect::<Result<Vec<()>>>()?;
            } else {
                for b in &mut self.corrupted {
                    update_one(b)?;
                }
            }
            self.corrupted.push(spawned);
            report.observed = true;
            report.spawned = Some(t_k);
            report.min_log_l_before = self
                .corrupted
                .iter()
                .map(|b| b.log_l)
                .min_by(|a, b| a.total_cmp(b));
            report.pruned = self.prune();
        }

        for b in std::iter::once(&mut self.nominal).chain(self.corrupted.iter_mut()) {
            if b.history.is_empty() || b.history.last().map(|s| s.step) != Some(k) {
                b.record(k, t_k, cfg.history);
            }
        }
        self.step = k;
        Ok(report)
    }

    /// Drops lowest-logL corrupted branches (latest switch time first on ties)
    /// until at most `capacity - 1` remain.
    pub fn prune(&mut self) -> Vec<(f64, f64)> {
        let keep = self.config.capacity - 1;
        let mut removed = Vec::new();
        while self.corrupted.len() > keep {
            let worst = self
                .corrupted
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| prune_order(a, b))
                .map(|(i, _)| i)
                .expect("non-empty");
            let b = self.corrupted.remove(worst);
            removed.push((b.t_s, b.log_l));
        }
        removed
    }

    /// Most likely branch and normalized branch weights.
    pub fn estimate(&self) -> Estimate {
        let mut best = BranchId::Nominal;
        let mut best_l = self.nominal.log_l;
        for (i, b) in self.corrupted.iter().enumerate() {
            if b.log_l > best_l {
                best = BranchId::Corrupted(i);
                best_l = b.log_l;
            }
        }
        let raw: Vec<(Option<f64>, f64, f64)> = std::iter::once(&self.nominal)
            .chain(self.corrupted.iter())
            .map(|b| (b.switch_time(), b.log_l, (b.log_l - best_l).exp()))
            .collect();
        let total: f64 = raw.iter().map(|w| w.2).sum();
        Estimate {
            best,
            switch_time: self.branch(best).switch_time(),
            best_log_l: best_l,
            weights: raw.into_iter().map(|(t, l, w)| (t, l, w / total)).collect(),
        }
    }

    /// Moment-matched mixture of all branch beliefs.
    pub fn model_average(&self) -> Result<GaussianBelief> {
        let est = self.estimate();
        let beliefs: Vec<&GaussianBelief> = std::iter::once(&self.nominal)
            .chain(self.corrupted.iter())
            .map(|b| &b.belief)
            .collect();
        let weights: Vec<f64> = est.weights.iter().map(|w| w.2).collect();
        model_average(&beliefs, &weights)
    }

    /// Per-step snapshots of a branch, nominal prefix included.
    pub fn trajectory(&self, id: BranchId) -> Vec<&Snapshot> {
        let b = self.branch(id);
        if b.nominal {
            return b.history.iter().collect();
        }
        self.nominal
            .history
            .iter()
            .filter(|s| s.step < b.spawn_step)
            .chain(b.history.iter())
            .collect()
    }

    /// Writes every branch trajectory as CSV.
    pub fn write_trajectories<W: Write>(&self, out: W) -> Result<()> {
        let dim = self.nominal.belief.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "time".into(), "branch_t_s".into(), "logL".into()];
        header.extend((0..dim).map(|i| format!("mean_{i}")));
        header.extend((0..dim).map(|i| format!("var_{i}")));
        w.write_record(&header)?;
        let ids = std::iter::once(BranchId::Nominal)
            .chain((0..self.corrupted.len()).map(BranchId::Corrupted));
        for id in ids {
            let label = match self.branch(id).switch_time() {
                None => "nominal".to_string(),
                Some(t) => fmt_f64(t),
            };
            for s in self.trajectory(id) {
                let mut row = vec![s.step.to_string(), fmt_f64(s.time), label.clone(), fmt_f64(s.log_l)];
                row.extend(s.mean.iter().map(|v| fmt_f64(*v)));
                match &s.var {
                    Some(v) => row.extend(v.iter().map(|v| fmt_f64(*v))),
                    None => row.extend((0..dim).map(|_| String::new())),
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Final summary of the branch population.
    pub fn summary(&self) -> Summary {
        let est = self.estimate();
        Summary {
            step: self.step,
            estimated_switch: est.switch_time,
            best_log_l: est.best_log_l,
            best_mean: self.branch(est.best).belief.mean.iter().copied().collect(),
            branches: est
                .weights
                .iter()
                .map(|(t, l, w)| BranchSummary {
                    t_s: *t,
                    log_l: *l,
                    weight: *w,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSummary {
    pub t_s: Option<f64>,
    #[serde(rename = "logL")]
    pub log_l: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub step: usize,
    pub estimated_switch: Option<f64>,
    #[serde(rename = "best_logL")]
    pub best_log_l: f64,
    pub best_mean: Vec<f64>,
    pub branches: Vec<BranchSummary>,
}

/// Pruning order: lower logL first, later switch time first among ties.
pub fn prune_order(a: &Branch, b: &Branch) -> Ordering {
    a.log_l.total_cmp(&b.log_l).then(b.t_s.total_cmp(&a.t_s))
}

/// Gaussian mixture moment matching.
pub fn model_average(beliefs: &[&GaussianBelief], weights: &[f64]) -> Result<GaussianBelief> {
    let first = beliefs.first().ok_or_else(|| Error::config("no beliefs to average"))?;
    if weights.len() != beliefs.len() {
        return Err(Error::DimensionMismatch {
            what: "mixture weights",
            expected: beliefs.len(),
            got: weights.len(),
        });
    }
    let d = first.dim();
    let mut mean = DVector::zeros(d);
    for (b, w) in beliefs.iter().zip(weights) {
        if b.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "mixture component",
                expected: d,
                got: b.dim(),
            });
        }
        if *w != 0.0 {
            mean += &b.mean * *w;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (b, w) in beliefs.iter().zip(weights) {
        if *w != 0.0 {
            let dev = &b.mean - &mean;
            cov += (&b.cov + &dev * dev.transpose()) * *w;
        }
    }
    GaussianBelief::new(mean, cov)
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    struct Still(usize);

    impl StateDynamics for Still {
        fn dim(&self) -> usize {
            self.0
        }
        fn step(&self, x: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
            Ok(x.clone())
        }
    }

    fn model(q: f64) -> AugmentedModel<Still> {
        let mut qa = DMatrix::from_diagonal_element(5, 5, q);
        for i in 2..5 {
            qa[(i, i)] = 1e-6;
        }
        AugmentedModel::new(Still(2), vec![0, 1], 3, qa, DMatrix::identity(2, 2) * 1e-4).unwrap()
    }

    fn set(capacity: usize) -> BranchSet {
        let mut cfg = SkfConfig::new(capacity, 1, 0.01);
        cfg.history = HistoryMode::Full;
        BranchSet::init(&dvector![-35.0, 25.0], &DMatrix::identity(2, 2), 3, cfg).unwrap()
    }

    fn branch(t_s: f64, log_l: f64) -> Branch {
        Branch {
            nominal: false,
            t_s,
            log_l,
            belief: GaussianBelief::new(dvector![0.0], dmatrix![1.0]).unwrap(),
            spawn_step: 0,
            history: vec![],
        }
    }

    #[test]
    fn init_builds_augmented_prior() {
        let s = set(10);
        assert_eq!(s.nominal.belief.dim(), 5);
        assert_eq!(s.nominal.belief.mean, dvector![-35.0, 25.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.nominal.belief.cov, DMatrix::identity(5, 5));
        assert_eq!(s.nominal.log_l, 0.0);
        assert!(s.corrupted.is_empty());
        let bad = BranchSet::init(&dvector![0.0, 0.0], &DMatrix::identity(3, 3), 3, SkfConfig::new(3, 1, 1.0));
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn predict_only_steps_do_not_spawn() {
        let mut s = set(10);
        let m = model(1e-4);
        let rep = s.step(&m, 1, None).unwrap();
        assert!(!rep.observed);
        assert!(s.corrupted.is_empty());
        assert_eq!(s.nominal.log_l, 0.0);
        assert!((s.nominal.belief.cov[(0, 0)] - (1.0 + 1e-4)).abs() < 1e-12);
    }

    #[test]
    fn first_epoch_spawns_one_branch() {
        let mut s = set(10);
        let m = model(1e-4);
        s.step(&m, 1, Some(&dvector![-35.0, 25.0])).unwrap();
        assert_eq!(s.corrupted.len(), 1);
        assert_eq!(s.corrupted[0].t_s, 0.01);
        assert_eq!(s.corrupted[0].belief, s.nominal.belief);
        assert_eq!(s.corrupted[0].log_l, s.nominal.log_l);
    }

    #[test]
    fn capacity_is_enforced() {
        let mut s = set(3);
        let m = model(1e-4);
        for k in 1..=4 {
            s.step(&m, k, Some(&dvector![-35.0 + 0.01 * k as f64, 25.0])).unwrap();
            assert!(s.len() <= 3);
        }
        assert_eq!(s.corrupted.len(), 2);
    }

    #[test]
    fn off_epoch_measurement_rejected() {
        let mut cfg = SkfConfig::new(3, 2, 0.01);
        cfg.history = HistoryMode::None;
        let mut s = BranchSet::init(&dvector![0.0, 0.0], &DMatrix::identity(2, 2), 3, cfg).unwrap();
        assert!(s.step(&model(1e-4), 1, Some(&dvector![0.0, 0.0])).is_err());
    }

    #[test]
    fn prune_removes_minimum() {
        let mut s = set(3);
        s.corrupted = vec![branch(1.0, -5.0), branch(2.0, -3.0), branch(3.0, -10.0)];
        let removed = s.prune();
        assert_eq!(removed, vec![(3.0, -10.0)]);
        let left: Vec<f64> = s.corrupted.iter().map(|b| b.log_l).collect();
        assert_eq!(left, vec![-5.0, -3.0]);
    }

    #[test]
    fn prune_tie_removes_latest() {
        let mut s = set(3);
        s.corrupted = vec![branch(1.0, -1.0), branch(3.0, -1.0), branch(2.0, -1.0)];
        assert_eq!(s.prune(), vec![(3.0, -1.0)]);
        assert!(s.prune().is_empty());
    }

    #[test]
    fn estimate_single_nominal() {
        let s = set(3);
        let e = s.estimate();
        assert_eq!(e.best, BranchId::Nominal);
        assert_eq!(e.switch_time, None);
        assert_eq!(e.weights, vec![(None, 0.0, 1.0)]);
    }

    #[test]
    fn estimate_prefers_nominal_on_ties() {
        let mut s = set(5);
        s.corrupted = vec![branch(1.0, 0.0), branch(2.0, 3.0), branch(3.0, 3.0)];
        let e = s.estimate();
        assert_eq!(e.best, BranchId::Corrupted(1));
        assert_eq!(e.switch_time, Some(2.0));
        let total: f64 = e.weights.iter().map(|w| w.2).sum();
        assert!((total - 1.0).abs() < 1e-12);
        s.corrupted = vec![branch(1.0, 0.0)];
        assert_eq!(s.estimate().best, BranchId::Nominal);
    }

    #[test]
    fn mixture_moments() {
        let a = GaussianBelief::new(dvector![1.0], dmatrix![0.0]).unwrap();
        let b = GaussianBelief::new(dvector![-1.0], dmatrix![0.0]).unwrap();
        let avg = model_average(&[&a, &b], &[0.5, 0.5]).unwrap();
        assert_eq!(avg.mean, dvector![0.0]);
        assert_eq!(avg.cov, dmatrix![1.0]);
        let first = model_average(&[&a, &b], &[1.0, 0.0]).unwrap();
        assert_eq!(first, a);
        assert!(model_average(&[], &[]).is_err());
    }

    #[test]
    fn trajectory_joins_nominal_prefix() {
        let mut s = set(10);
        let m = model(1e-4);
        s.step(&m, 1, None).unwrap();
        s.step(&m, 2, Some(&dvector![-35.0, 25.0])).unwrap();
        s.step(&m, 3, Some(&dvector![-35.0, 25.0])).unwrap();
        let steps: Vec<usize> = s.trajectory(BranchId::Corrupted(1)).iter().map(|x| x.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
        let mut buf = Vec::new();
        s.write_trajectories(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,time,branch_t_s,logL,mean_0"));
        assert_eq!(text.lines().count(), 1 + 3 * 4);
    }

    #[test]
    fn summary_round_trips_json() {
        let mut s = set(4);
        let m = model(1e-4);
        s.step(&m, 1, Some(&dvector![-35.0, 25.0])).unwrap();
        let sum = s.summary();
        let text = serde_json::to_string(&sum).unwrap();
        let back: Summary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sum);
    }
}
