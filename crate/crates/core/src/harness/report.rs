//! Per-test tables and plot data.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Axis;
use super::run::RunRecord;
use super::sweep::{aggregate, AggregateRow};
use crate::error::{Error, Result};
use crate::skf::fmt_f64;

/// Records of one scenario; an empty selection is an error.
pub fn select<'a>(records: &'a [RunRecord], scenario: Option<&str>) -> Result<Vec<&'a RunRecord>> {
    let picked: Vec<&RunRecord> = records
        .iter()
        .filter(|r| scenario.is_none_or(|s| r.scenario == s))
        .collect();
    if picked.is_empty() {
        return Err(Error::config(match scenario {
            Some(s) => format!("no {s} records selected"),
            None => "no records selected".to_string(),
        }));
    }
    if picked.iter().any(|r| r.scenario != picked[0].scenario) {
        return Err(Error::config("records mix scenarios; select one"));
    }
    Ok(picked)
}

fn opt(v: Option<f64>, missing: &str) -> String {
    v.map(fmt_f64).unwrap_or_else(|| missing.to_string())
}

/// One row per record, columns following the balloon or shuttle test tables.
pub fn write_table<W: Write>(records: &[&RunRecord], out: W) -> Result<()> {
    let first = records.first().ok_or_else(|| Error::config("no records selected"))?;
    let mut w = csv::Writer::from_writer(out);
    let balloon = first.scenario == "balloon";
    let states: Vec<&str> = if balloon {
        vec!["lat", "lon"]
    } else {
        vec!["h", "L", "lambda", "v", "gamma", "alpha"]
    };
    let mut header: Vec<String> = if balloon {
        ["test", "r", "q_x", "q_p", "delta", "A", "B", "C", "true_switch", "estimated_switch", "outcome"]
    } else {
        ["test", "A", "B", "C", "q_x", "q_p", "r", "delta", "true_switch", "estimated_switch", "outcome"]
    }
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(states.iter().map(|s| format!("rmse_{s}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = if balloon {
            vec![
                r.name.clone(),
                fmt_f64(r.r),
                fmt_f64(r.q_x),
                fmt_f64(r.q_p),
                r.delta.to_string(),
                fmt_f64(r.a),
                fmt_f64(r.b),
                fmt_f64(r.c),
            ]
        } else {
            vec![
                r.name.clone(),
                fmt_f64(r.a),
                fmt_f64(r.b),
                fmt_f64(r.c),
                fmt_f64(r.q_x),
                fmt_f64(r.q_p),
                fmt_f64(r.r),
                r.delta.to_string(),
            ]
        };
        row.push(opt(r.true_switch, "n/a"));
        row.push(opt(r.estimated_switch, "none"));
        row.push(if r.status.is_ok() { r.outcome.as_str().into() } else { "failed".into() });
        row.extend(states.iter().map(|s| opt(r.rmse_of(s), "")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    SuccessRate,
    RmseScatter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Series {
    /// `None` pools every `q_p`.
    pub q_p: Option<f64>,
    pub points: Vec<[f64; 2]>,
}

/// Plot-ready series; no rendering is done here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotData {
    pub kind: PlotKind,
    pub axis: Axis,
    /// State of an RMSE scatter.
    pub state: Option<String>,
    pub series: Vec<Series>,
}

impl PlotData {
    pub fn validate(&self) -> Result<()> {
        if self.series.is_empty() {
            return Err(Error::Malformed("plot has no series".into()));
        }
        match (self.kind, &self.state) {
            (PlotKind::RmseScatter, None) => return Err(Error::Malformed("RMSE plot needs a state".into())),
            (PlotKind::SuccessRate, Some(_)) => return Err(Error::Malformed("success plot takes no state".into())),
            _ => {}
        }
        for s in &self.series {
            for [x, y] in &s.points {
                if !x.is_finite() || !y.is_finite() {
                    return Err(Error::Malformed("non-finite plot point".into()));
                }
                if self.kind == PlotKind::SuccessRate && !(0.0..=1.0).contains(y) {
                    return Err(Error::Malformed(format!("success rate {y} outside [0, 1]")));
                }
                if self.kind == PlotKind::RmseScatter && *y < 0.0 {
                    return Err(Error::Malformed(format!("negative RMSE {y}")));
                }
            }
        }
        Ok(())
    }

    /// Parses and validates plot JSON.
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text).map_err(|e| Error::Malformed(format!("plot schema: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Success rate against an axis, one series per `q_p` plus the pooled one.
pub fn success_plot(rows: &[AggregateRow], axis: Axis) -> PlotData {
    let mut keys: Vec<Option<f64>> = Vec::new();
    for r in rows.iter().filter(|r| r.axis == axis) {
        if !keys.contains(&r.q_p) {
            keys.push(r.q_p);
        }
    }
    let series = keys
        .into_iter()
        .map(|q_p| Series {
            q_p,
            points: rows
                .iter()
                .filter(|r| r.axis == axis && r.q_p == q_p)
                .map(|r| [r.value, r.success_rate])
                .collect(),
        })
        .collect();
    PlotData {
        kind: PlotKind::SuccessRate,
        axis,
        state: None,
        series,
    }
}

/// Per-run RMSE of one state against an axis, one series per `q_p`.
pub fn rmse_plot(records: &[&RunRecord], axis: Axis, state: &str) -> PlotData {
    let mut qps: Vec<f64> = records.iter().map(|r| r.q_p).collect();
    qps.sort_by(f64::total_cmp);
    qps.dedup();
    let series = qps
        .into_iter()
        .map(|q| Series {
            q_p: Some(q),
            points: records
                .iter()
                .filter(|r| r.q_p == q)
                .filter_map(|r| r.rmse_of(state).map(|v| [r.axis_value(axis), v]))
                .collect(),
        })
        .collect();
    PlotData {
        kind: PlotKind::RmseScatter,
        axis,
        state: Some(state.to_string()),
        series,
    }
}

/// Axes taking more than one value across the records.
pub fn varying_axes(records: &[&RunRecord]) -> Vec<Axis> {
    Axis::ALL
        .into_iter()
        .filter(|&a| {
            let first = records.first().map(|r| r.axis_value(a));
            records.iter().any(|r| Some(r.axis_value(a)) != first)
        })
        .collect()
}

/// Writes `table.csv`, `aggregates.csv` and `plots/*.json` under `dir`.
pub fn write_report(records: &[RunRecord], scenario: Option<&str>, count_yellow: bool, dir: &Path) -> Result<Vec<AggregateRow>> {
    let picked = select(records, scenario)?;
    std::fs::create_dir_all(dir.join("plots"))?;
    write_table(&picked, std::fs::File::create(dir.join("table.csv"))?)?;
    let owned: Vec<RunRecord> = picked.iter().map(|r| (*r).clone()).collect();
    let axes = varying_axes(&picked);
    let rows = aggregate(&owned, &axes, count_yellow);
    super::sweep::write_aggregates(&rows, &owned[0].state_names, std::fs::File::create(dir.join("aggregates.csv"))?)?;
    write_plots(&picked, &rows, &axes, &dir.join("plots"))?;
    Ok(rows)
}

/// One success plot per axis and one RMSE scatter per axis and state.
pub fn write_plots(records: &[&RunRecord], rows: &[AggregateRow], axes: &[Axis], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let states = records.first().map(|r| r.state_names.clone()).unwrap_or_default();
    for &axis in axes {
        let p = success_plot(rows, axis);
        p.validate()?;
        std::fs::write(dir.join(format!("success_{axis}.json")), p.to_json()?)?;
        for s in &states {
            let p = rmse_plot(records, axis, s);
            if p.series.iter().all(|s| s.points.is_empty()) {
                continue;
            }
            std::fs::write(dir.join(format!("rmse_{axis}_{s}.json")), p.to_json()?)?;
        }
    }
    Ok(())
}
