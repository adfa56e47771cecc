//! Parameter sweeps and per-axis aggregates.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::config::{Axis, SweepConfig};
use super::metrics::median;
use super::run::{run_case, RunRecord, RunStatus};
use crate::error::{Error, Result};
use crate::skf::fmt_f64;

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "SKFNAV_THREADS";

/// Thread count from `SKFNAV_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
            if n == 0 {
                return Err(Error::config(format!("{THREADS_ENV} must be >= 1")));
            }
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

/// Success statistics for one axis value, optionally restricted to one `q_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub axis: Axis,
    pub value: f64,
    /// `None` pools all `q_p` values.
    pub q_p: Option<f64>,
    pub runs: usize,
    pub successes: usize,
    pub failures: usize,
    pub success_rate: f64,
    pub median_rmse: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub name: String,
    pub state_names: Vec<String>,
    /// Ordered by cell, then replication.
    pub records: Vec<RunRecord>,
    pub aggregates: Vec<AggregateRow>,
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn aggregate_group(axis: Axis, value: f64, q_p: Option<f64>, group: &[&RunRecord], count_yellow: bool) -> AggregateRow {
    let dim = group.first().map_or(0, |r| r.rmse.len());
    let ok: Vec<&&RunRecord> = group.iter().filter(|r| r.status.is_ok()).collect();
    let successes = ok.iter().filter(|r| r.outcome.is_success(count_yellow)).count();
    let median_rmse = (0..dim)
        .map(|i| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| r.rmse.get(i).copied().flatten()).collect();
            median(&vals)
        })
        .collect();
    AggregateRow {
        axis,
        value,
        q_p,
        runs: group.len(),
        successes,
        failures: group.len() - ok.len(),
        success_rate: if group.is_empty() { 0.0 } else { successes as f64 / group.len() as f64 },
        median_rmse,
    }
}

/// Success rate and median RMSE per axis value, pooled and per `q_p`.
/// Axes not present in `axes` are skipped. An empty axis list pools
/// everything under a `q_p` row.
pub fn aggregate(records: &[RunRecord], axes: &[Axis], count_yellow: bool) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    let axes: Vec<Axis> = if axes.is_empty() { vec![Axis::QP] } else { axes.to_vec() };
    let qps = distinct(records.iter().map(|r| r.q_p));
    for &axis in &axes {
        for value in distinct(records.iter().map(|r| r.axis_value(axis))) {
            let at: Vec<&RunRecord> = records.iter().filter(|r| r.axis_value(axis) == value).collect();
            rows.push(aggregate_group(axis, value, None, &at, count_yellow));
            if axis == Axis::QP || qps.len() < 2 {
                continue;
            }
            for &qp in &qps {
                let group: Vec<&RunRecord> = at.iter().copied().filter(|r| r.q_p == qp).collect();
                if !group.is_empty() {
                    rows.push(aggregate_group(axis, value, Some(qp), &group, count_yellow));
                }
            }
        }
    }
    rows
}

/// Runs every cell and replication on a pool of `threads` workers (all
/// cores when `None`). Cell failures are recorded and the sweep continues.
pub fn run_sweep(sweep: &SweepConfig, base: Option<&Path>, threads: Option<usize>) -> Result<SweepResult> {
    sweep.validate()?;
    let cells = sweep.cells();
    let configs = cells
        .iter()
        .map(|c| sweep.apply(c).map(|cfg| (c.index, cfg)))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|i| (0..sweep.replications).map(move |r| (i, r)))
        .collect();
    log::info!(
        "sweep {}: {} cells x {} replications = {} runs",
        sweep.name,
        configs.len(),
        sweep.replications,
        jobs.len()
    );
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
    let mut records: Vec<RunRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, rep)| {
                let (cell, cfg) = &configs[i];
                let seed = sweep.cell_seed(*cell, rep);
                let mut r = run_case(cfg, seed, base);
                r.cell = Some(*cell);
                r.replication = Some(rep);
                if let RunStatus::Failed(e) = &r.status {
                    log::warn!("{} rep {rep} failed: {e}", r.name);
                }
                r
            })
            .collect()
    });
    records.sort_by_key(|r| (r.cell, r.replication));
    let axes: Vec<Axis> = sweep.axes.keys().copied().collect();
    let aggregates = aggregate(&records, &axes, sweep.count_yellow);
    Ok(SweepResult {
        name: sweep.name.clone(),
        state_names: sweep.base.scenario.state_names(),
        records,
        aggregates,
    })
}

pub fn write_aggregates<W: Write>(rows: &[AggregateRow], state_names: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["axis", "value", "q_p", "runs", "successes", "failures", "success_rate"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(state_names.iter().map(|s| format!("median_rmse_{s}")));
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            r.axis.to_string(),
            fmt_f64(r.value),
            r.q_p.map(fmt_f64).unwrap_or_else(|| "all".into()),
            r.runs.to_string(),
            r.successes.to_string(),
            r.failures.to_string(),
            fmt_f64(r.success_rate),
        ];
        row.extend(r.median_rmse.iter().map(|m| m.map(fmt_f64).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
