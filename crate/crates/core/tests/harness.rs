use std::time::Duration;

use proptest::prelude::*;
use skfnav::harness::report::write_report;
use skfnav::harness::run::write_records;
use skfnav::harness::sweep::aggregate;
use skfnav::harness::{classify, execute, median, rmse, run_case, run_sweep, Axis, Outcome, RunConfig, RunOptions, RunRecord, RunStatus, SweepConfig};

fn brute_rmse(m: &[f64], x: &[f64]) -> f64 {
    let num: f64 = m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = x.iter().map(|b| b.powi(2)).sum();
    num.sqrt() / den.sqrt()
}

fn brute_median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

fn record(a: f64, q_p: f64, outcome: Outcome, ok: bool, rmse: f64) -> RunRecord {
    RunRecord {
        name: "r".into(),
        config_hash: "h".into(),
        cell: None,
        replication: None,
        seed: 0,
        scenario: "balloon".into(),
        steps: 500,
        dt: 0.01,
        delta: 1,
        q_x: 1e-6,
        q_p,
        r: 1e-6,
        a,
        b: 0.0,
        c: 0.0,
        biased: true,
        true_switch: Some(2.0),
        estimated_switch: Some(2.0),
        outcome,
        status: if ok { RunStatus::Ok } else { RunStatus::Failed("boom".into()) },
        state_names: vec!["lon".into(), "lat".into()],
        rmse: if ok { vec![Some(rmse), Some(2.0 * rmse)] } else { vec![None, None] },
        runtime: Duration::ZERO,
    }
}

proptest! {
    #[test]
    fn rmse_matches_brute_force(pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..200)) {
        let (m, x): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(x.iter().any(|v| *v != 0.0));
        let got = rmse(&m, &x).unwrap().unwrap();
        let want = brute_rmse(&m, &x);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn aggregates_match_direct_counts(
        runs in prop::collection::vec((0usize..3, 0usize..2, 0usize..3, any::<bool>(), 1e-6f64..1.0), 1..60),
    ) {
        let a_vals = [0.01, 0.1, 0.5];
        let qps = [1e-6, 1e-4];
        let outcomes = [Outcome::Green, Outcome::Yellow, Outcome::Red];
        let recs: Vec<RunRecord> = runs
            .iter()
            .map(|&(a, q, o, ok, e)| record(a_vals[a], qps[q], outcomes[o], ok || o == 0, e))
            .collect();
        let rows = aggregate(&recs, &[Axis::A], false);
        for row in rows {
            let group: Vec<&RunRecord> = recs
                .iter()
                .filter(|r| r.a == row.value && row.q_p.is_none_or(|q| r.q_p == q))
                .collect();
            let greens = group.iter().filter(|r| r.status.is_ok() && r.outcome == Outcome::Green).count();
            prop_assert_eq!(row.runs, group.len());
            prop_assert_eq!(row.successes, greens);
            prop_assert_eq!(row.success_rate, greens as f64 / group.len() as f64);
            let vals: Vec<f64> = group.iter().filter(|r| r.status.is_ok()).filter_map(|r| r.rmse[0]).collect();
            prop_assert_eq!(row.median_rmse[0], brute_median(&vals));
        }
    }
}

#[test]
fn rmse_examples() {
    assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), Some(0.0));
    assert!((rmse(&[1.1; 7], &[1.0; 7]).unwrap().unwrap() - 0.1).abs() < 1e-12);
    assert!((rmse(&[-1.0, 3.0], &[1.0, -3.0]).unwrap().unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(rmse(&[1.0], &[0.0]).unwrap(), None);
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
}

#[test]
fn classification_examples() {
    assert_eq!(classify(Some(2.01), Some(2.0), 500, 0.01, true), Outcome::Green);
    assert_eq!(classify(Some(2.04), Some(2.0), 500, 0.01, true), Outcome::Yellow);
    assert_eq!(classify(Some(4.93), Some(0.1), 500, 0.01, true), Outcome::Red);
    assert_eq!(classify(None, Some(2.0), 500, 0.01, true), Outcome::Red);
    assert_eq!(classify(Some(4.99), None, 500, 0.01, false), Outcome::Green);
    assert_eq!(classify(None, None, 500, 0.01, false), Outcome::Green);
    assert_eq!(classify(Some(1.0), None, 500, 0.01, false), Outcome::Red);
}

const SMALL: &str = r#"{"name": "small", "scenario": {"kind": "balloon", "steps": 120, "q_x": 1e-6, "q_p": 1e-6,
    "r": 1e-6, "bias": {"kind": "static", "A": 0.2}, "switch_step": 60}}"#;

#[test]
fn run_case_bookkeeping() {
    let cfg = RunConfig::from_json(SMALL).unwrap();
    let a = run_case(&cfg, 1, None);
    let b = run_case(&cfg, 2, None);
    assert!(a.status.is_ok() && b.status.is_ok());
    assert_eq!(a.config_hash, b.config_hash);
    assert_ne!(a.seed, b.seed);
    assert_eq!(a.outcome, Outcome::Green);
    assert!(a.rmse.iter().all(|v| v.is_some_and(|e| e < 1e-2)));

    let mut zero = cfg.clone();
    if let skfnav::harness::ScenarioConfig::Balloon(bc) = &mut zero.scenario {
        bc.steps = 0;
        bc.switch_step = None;
        bc.bias = skfnav::bias::BiasSpec::zero();
    }
    let err = execute(&zero, 1, None, RunOptions::default(), None).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(!run_case(&zero, 1, None).status.is_ok());
}

fn sweep() -> SweepConfig {
    SweepConfig::from_json(&format!(
        r#"{{"name": "det", "seed": 5, "replications": 2, "axes": {{"A": [0.05, 0.3], "q_p": [1e-6, 1e-4]}},
            "base": {SMALL}}}"#
    ))
    .unwrap()
}

#[test]
fn sweep_records_do_not_depend_on_thread_count() {
    let s = sweep();
    let mut outputs = Vec::new();
    for threads in [1, 4] {
        let res = run_sweep(&s, None, Some(threads)).unwrap();
        assert_eq!(res.records.len(), 8);
        let mut buf = Vec::new();
        write_records(&res.records, &mut buf).unwrap();
        outputs.push(buf);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn report_from_sweep_records() {
    let res = run_sweep(&sweep(), None, Some(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = write_report(&res.records, Some("balloon"), false, dir.path()).unwrap();
    assert!(rows.iter().any(|r| r.axis == Axis::A && r.q_p.is_none()));
    for f in ["table.csv", "aggregates.csv", "plots/success_A.json", "plots/rmse_A_lat.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 9);
}
