//! One experiment: simulate, filter, score.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use super::config::{Axis, RunConfig, ScenarioConfig};
use super::metrics::{classify, rmse_per_state, switch_error_steps, Outcome};
use crate::error::{Error, Result};
use crate::scenario::balloon::BALLOON_D_THETA;
use crate::scenario::shuttle::SHUTTLE_D_THETA;
use crate::scenario::{
    balloon_model, shuttle_model, shuttle_prior, simulate_balloon, simulate_shuttle, BalloonData, ShuttleData,
};
use crate::skf::{fmt_f64, BranchSet, HistoryMode, SkfConfig, StepReport, SwitchingModel};

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Ok)
    }
}

/// Outcome of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub name: String,
    pub config_hash: String,
    pub cell: Option<usize>,
    pub replication: Option<usize>,
    pub seed: u64,
    pub scenario: String,
    pub steps: usize,
    pub dt: f64,
    pub delta: usize,
    pub q_x: f64,
    pub q_p: f64,
    pub r: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub biased: bool,
    pub true_switch: Option<f64>,
    /// `None` when the nominal branch wins.
    pub estimated_switch: Option<f64>,
    pub outcome: Outcome,
    pub status: RunStatus,
    pub state_names: Vec<String>,
    /// `None` where the truth series is identically zero or the run failed.
    pub rmse: Vec<Option<f64>>,
    pub runtime: Duration,
}

impl RunRecord {
    fn skeleton(cfg: &RunConfig, seed: u64) -> Self {
        let sc = &cfg.scenario;
        let names = sc.state_names();
        Self {
            name: cfg.name.clone(),
            config_hash: cfg.hash(),
            cell: None,
            replication: None,
            seed,
            scenario: sc.kind().to_string(),
            steps: sc.steps(),
            dt: sc.dt(),
            delta: sc.delta(),
            q_x: Axis::QX.read(sc),
            q_p: Axis::QP.read(sc),
            r: Axis::R.read(sc),
            a: Axis::A.read(sc),
            b: Axis::B.read(sc),
            c: Axis::C.read(sc),
            biased: sc.is_biased(),
            true_switch: if sc.is_biased() { sc.true_switch() } else { None },
            estimated_switch: None,
            outcome: Outcome::Red,
            status: RunStatus::Ok,
            rmse: vec![None; names.len()],
            state_names: names,
            runtime: Duration::ZERO,
        }
    }

    /// Record of a run that did not complete.
    pub fn failed(cfg: &RunConfig, seed: u64, message: impl Into<String>) -> Self {
        let mut r = Self::skeleton(cfg, seed);
        r.status = RunStatus::Failed(message.into());
        r
    }

    pub fn axis_value(&self, axis: Axis) -> f64 {
        match axis {
            Axis::QP => self.q_p,
            Axis::QX => self.q_x,
            Axis::R => self.r,
            Axis::A => self.a,
            Axis::B => self.b,
            Axis::C => self.c,
        }
    }

    pub fn switch_error_steps(&self) -> Option<u64> {
        match (self.estimated_switch, self.true_switch) {
            (Some(e), Some(t)) => Some(switch_error_steps(e, t, self.dt)),
            _ => None,
        }
    }

    pub fn rmse_of(&self, state: &str) -> Option<f64> {
        let i = self.state_names.iter().position(|s| s == state)?;
        self.rmse[i]
    }
}

/// Simulated data of either scenario.
#[derive(Debug, Clone)]
pub enum ScenarioData {
    Balloon(BalloonData),
    Shuttle(ShuttleData),
}

/// Everything a single run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: RunRecord,
    pub set: BranchSet,
    pub data: ScenarioData,
    /// RMSE reference at steps `0..=n`.
    pub truth: Vec<Vec<f64>>,
    /// Best-branch state means at steps `0..=n`.
    pub estimate: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunOptions {
    /// Keep covariance diagonals in branch histories.
    pub full_history: bool,
    /// Process branches on the rayon pool.
    pub parallel: bool,
}

/// Called after every filter step.
pub type Observer<'a> = &'a mut dyn FnMut(&BranchSet, &StepReport) -> Result<()>;

fn filter<M: SwitchingModel>(
    model: &M,
    set: &mut BranchSet,
    measurements: &[Option<DVector<f64>>],
    mut observer: Option<Observer<'_>>,
) -> Result<()> {
    for (k, y) in measurements.iter().enumerate().skip(1) {
        let report = set.step(model, k, y.as_ref())?;
        if let Some(obs) = observer.as_mut() {
            obs(set, &report)?;
        }
    }
    Ok(())
}

fn skf_config(cfg: &RunConfig, opts: RunOptions) -> SkfConfig {
    let sc = &cfg.scenario;
    let mut c = SkfConfig::new(cfg.branches, sc.delta(), sc.dt());
    c.sigma = cfg.sigma;
    c.history = if opts.full_history { HistoryMode::Full } else { HistoryMode::Means };
    c.parallel = opts.parallel;
    c
}

/// Runs the full pipeline and returns the branch set alongside the record.
/// Errors propagate; see [`run_case`] for the error-capturing variant.
pub fn execute(
    cfg: &RunConfig,
    seed: u64,
    base: Option<&Path>,
    opts: RunOptions,
    observer: Option<Observer<'_>>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let mut record = RunRecord::skeleton(cfg, seed);
    let skf = skf_config(cfg, opts);
    let (set, data, truth, dim) = match &cfg.scenario {
        ScenarioConfig::Balloon(b) => {
            let field = Arc::new(b.field(base)?);
            let data = simulate_balloon(b, &field, seed)?;
            let model = balloon_model(b, field)?;
            let x0 = DVector::from_row_slice(&b.x0);
            let c0 = DMatrix::from_diagonal_element(2, 2, b.initial_var);
            let mut set = BranchSet::init(&x0, &c0, BALLOON_D_THETA, skf)?;
            filter(&model, &mut set, &data.measurements, observer)?;
            let truth: Vec<Vec<f64>> = data.truth.iter().map(|x| x.as_slice().to_vec()).collect();
            (set, ScenarioData::Balloon(data), truth, 2)
        }
        ScenarioConfig::Shuttle(s) => {
            let data = simulate_shuttle(s, seed, base)?;
            let model = shuttle_model(s, Arc::new(data.imu.clone()))?;
            let (x0, c0) = shuttle_prior(s, &data.reference[0]);
            let mut set = BranchSet::init(&x0, &c0, SHUTTLE_D_THETA, skf)?;
            filter(&model, &mut set, &data.gps, observer)?;
            let truth = data.inertial.iter().map(|x| x.to_vector().as_slice()[..9].to_vec()).collect();
            (set, ScenarioData::Shuttle(data), truth, 9)
        }
    };

    let est = set.estimate();
    let estimate: Vec<Vec<f64>> = set
        .trajectory(est.best)
        .iter()
        .map(|s| s.mean.as_slice()[..dim].to_vec())
        .collect();
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "best-branch history",
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    record.estimated_switch = est.switch_time;
    record.outcome = classify(est.switch_time, record.true_switch, record.steps, record.dt, record.biased);
    record.rmse = rmse_per_state(&estimate[1..], &truth[1..], dim)?;
    record.runtime = start.elapsed();
    Ok(RunOutput {
        record,
        set,
        data,
        truth,
        estimate,
    })
}

/// Runs one experiment; failures are captured in the record.
pub fn run_case(cfg: &RunConfig, seed: u64, base: Option<&Path>) -> RunRecord {
    let start = Instant::now();
    match execute(cfg, seed, base, RunOptions::default(), None) {
        Ok(out) => out.record,
        Err(e) => {
            let mut r = RunRecord::failed(cfg, seed, e.to_string());
            r.runtime = start.elapsed();
            r
        }
    }
}

const FIXED_COLUMNS: [&str; 21] = [
    "name",
    "config_hash",
    "cell",
    "replication",
    "seed",
    "scenario",
    "steps",
    "dt",
    "delta",
    "q_x",
    "q_p",
    "r",
    "A",
    "B",
    "C",
    "biased",
    "true_switch",
    "estimated_switch",
    "switch_error_steps",
    "outcome",
    "status",
];

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes records as CSV, one `rmse_<state>` column per state name seen.
pub fn write_records<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut states: Vec<&str> = Vec::new();
    for r in records {
        for s in &r.state_names {
            if !states.contains(&s.as_str()) {
                states.push(s);
            }
        }
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.push("error".into());
    header.extend(states.iter().map(|s| format!("rmse_{s}")));
    w.write_record(&header)?;
    for r in records {
        let (status, error) = match &r.status {
            RunStatus::Ok => ("ok", String::new()),
            RunStatus::Failed(e) => ("failed", e.clone()),
        };
        let mut row = vec![
            r.name.clone(),
            r.config_hash.clone(),
            opt_usize(r.cell),
            opt_usize(r.replication),
            r.seed.to_string(),
            r.scenario.clone(),
            r.steps.to_string(),
            fmt_f64(r.dt),
            r.delta.to_string(),
            fmt_f64(r.q_x),
            fmt_f64(r.q_p),
            fmt_f64(r.r),
            fmt_f64(r.a),
            fmt_f64(r.b),
            fmt_f64(r.c),
            r.biased.to_string(),
            opt_f64(r.true_switch),
            opt_f64(r.estimated_switch),
            r.switch_error_steps().map(|s| s.to_string()).unwrap_or_default(),
            r.outcome.as_str().to_string(),
            status.to_string(),
            error,
        ];
        row.extend(states.iter().map(|s| opt_f64(r.rmse_of(s))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-record wall-clock time, kept apart from the records so that those
/// stay byte-reproducible.
pub fn write_timings<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "cell", "replication", "seed", "runtime_s"])?;
    for r in records {
        w.write_record([
            r.name.clone(),
            opt_usize(r.cell),
            opt_usize(r.replication),
            r.seed.to_string(),
            format!("{:.6}", r.runtime.as_secs_f64()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Malformed(format!("bad {what} value {s:?}")))
}

fn parse_opt<T: std::str::FromStr>(s: &str, what: &str) -> Result<Option<T>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse(s, what).map(Some)
    }
}

/// Reads records written by [`write_records`].
pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    for c in FIXED_COLUMNS.iter().chain(["error"].iter()) {
        if !col.contains_key(c) {
            return Err(Error::Malformed(format!("records file lacks column {c}")));
        }
    }
    let states: Vec<(String, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("rmse_").map(|s| (s.to_string(), i)))
        .collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let get = |c: &str| rec.get(col[c]).unwrap_or("");
        let scenario = get("scenario").to_string();
        let names: Vec<String> = match scenario.as_str() {
            "balloon" => crate::scenario::balloon::BALLOON_STATE_NAMES.iter().map(|s| s.to_string()).collect(),
            "shuttle" => crate::ins::NAV_STATE_NAMES.iter().map(|s| s.to_string()).collect(),
            other => return Err(Error::Malformed(format!("unknown scenario {other:?}"))),
        };
        let mut rmse = Vec::with_capacity(names.len());
        for n in &names {
            let v = match states.iter().find(|(s, _)| s == n) {
                Some((_, i)) => parse_opt(rec.get(*i).unwrap_or(""), "rmse")?,
                None => None,
            };
            rmse.push(v);
        }
        let status = match get("status") {
            "ok" => RunStatus::Ok,
            "failed" => RunStatus::Failed(get("error").to_string()),
            other => return Err(Error::Malformed(format!("unknown status {other:?}"))),
        };
        out.push(RunRecord {
            name: get("name").to_string(),
            config_hash: get("config_hash").to_string(),
            cell: parse_opt(get("cell"), "cell")?,
            replication: parse_opt(get("replication"), "replication")?,
            seed: parse(get("seed"), "seed")?,
            scenario,
            steps: parse(get("steps"), "steps")?,
            dt: parse(get("dt"), "dt")?,
            delta: parse(get("delta"), "delta")?,
            q_x: parse(get("q_x"), "q_x")?,
            q_p: parse(get("q_p"), "q_p")?,
            r: parse(get("r"), "r")?,
            a: parse(get("A"), "A")?,
            b: parse(get("B"), "B")?,
            c: parse(get("C"), "C")?,
            biased: parse(get("biased"), "biased")?,
            true_switch: parse_opt(get("true_switch"), "true_switch")?,
            estimated_switch: parse_opt(get("estimated_switch"), "estimated_switch")?,
            outcome: Outcome::parse(get("outcome"))?,
            status,
            state_names: names,
            rmse,
            runtime: Duration::ZERO,
        });
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    read_records(std::fs::File::open(path)?)
}
