use nalgebra::DVector;
use proptest::prelude::*;
use skfnav::bias::{bias_eval, BiasSpec};
use skfnav::ins::{self, NavState15, J1, R_F};
use skfnav::scenario::shuttle::{generate_reference, GeneratorConfig};
use skfnav::scenario::{noise_to_range_ratio, simulate_balloon, simulate_shuttle, BalloonConfig, ShuttleConfig, VelocityField};

fn balloon_cfg(a: f64, b: f64, c: f64, switch: Option<usize>, delta: usize) -> BalloonConfig {
    let mut cfg: BalloonConfig = serde_json::from_str(
        r#"{"steps": 150, "q_x": 1e-6, "q_p": 1e-6, "r": 1e-4, "bias": {"kind": "static", "A": 0}, "switch_step": null}"#,
    )
    .unwrap();
    cfg.bias = BiasSpec::quadratic(a, b, c);
    cfg.switch_step = switch;
    cfg.delta = delta;
    cfg
}

fn shuttle_cfg(steps: usize, switch: Option<usize>) -> ShuttleConfig {
    let mut cfg: ShuttleConfig = serde_json::from_str(
        r#"{"q_x": 1e-8, "q_p": 1e-12, "r": 1e-8, "bias": {"kind": "linear", "A": 100, "B": 100, "cap": 1000}}"#,
    )
    .unwrap();
    cfg.steps = steps;
    cfg.switch_step = switch;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn balloon_measurements_decompose(
        a in -1.0f64..1.0,
        b in -1.0f64..1.0,
        c in -1.0f64..1.0,
        switch in 0usize..150,
        delta in 1usize..5,
        seed in any::<u64>(),
    ) {
        let cfg = balloon_cfg(a, b, c, Some(switch), delta);
        let field = cfg.field(None).unwrap();
        let d = simulate_balloon(&cfg, &field, seed).unwrap();
        let t_s = switch as f64 * cfg.dt;
        for k in 1..=cfg.steps {
            let t_k = k as f64 * cfg.dt;
            match &d.measurements[k] {
                None => prop_assert!(k % delta != 0),
                Some(y) => {
                    let eta = d.measurement_noise[k].as_ref().unwrap();
                    let bias = d.bias[k].as_ref().unwrap();
                    prop_assert_eq!(y, &(&(&d.truth[k] + bias) + eta));
                    let expected = if t_k > t_s { bias_eval(&cfg.bias, t_s, t_k, 2).unwrap() } else { DVector::zeros(2) };
                    prop_assert_eq!(bias, &expected);
                }
            }
        }
    }

    #[test]
    fn bias_nesting_and_cap(
        a in -10.0f64..10.0,
        b in -10.0f64..10.0,
        c in -10.0f64..10.0,
        tau in 0.0f64..100.0,
        cap in 0.1f64..1000.0,
    ) {
        let t = 3.0 + tau;
        let q0 = BiasSpec::quadratic(a, b, 0.0).eval(3.0, t, 1).unwrap();
        prop_assert_eq!(q0, BiasSpec::linear(a, b).eval(3.0, t, 1).unwrap());
        let l0 = BiasSpec::linear(a, 0.0).eval(3.0, t, 1).unwrap();
        prop_assert_eq!(l0, BiasSpec::constant(a).eval(3.0, t, 1).unwrap());
        let raw = BiasSpec::quadratic(a, b, c).eval(3.0, t, 1).unwrap()[0];
        let capped = BiasSpec::quadratic(a, b, c).with_cap(Some(cap)).unwrap().eval(3.0, t, 1).unwrap()[0];
        prop_assert!(capped.abs() <= cap);
        if raw.abs() < cap {
            prop_assert_eq!(capped, raw);
        }
    }
}

#[test]
fn no_bias_before_switch() {
    let cfg = balloon_cfg(0.3, 0.2, 0.1, Some(80), 1);
    let field = cfg.field(None).unwrap();
    let d = simulate_balloon(&cfg, &field, 9).unwrap();
    for k in 1..=80 {
        assert_eq!(d.bias[k].as_ref().unwrap().amax(), 0.0, "step {k}");
    }
    assert!(d.bias[81].as_ref().unwrap().amax() > 0.0);
}

#[test]
fn balloon_streams_are_seed_deterministic() {
    let cfg = balloon_cfg(0.1, 0.0, 0.01, Some(50), 2);
    let field = cfg.field(None).unwrap();
    let a = simulate_balloon(&cfg, &field, 77).unwrap();
    let b = simulate_balloon(&cfg, &field, 77).unwrap();
    let c = simulate_balloon(&cfg, &field, 78).unwrap();
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.measurements, b.measurements);
    assert_ne!(a.measurements, c.measurements);
}

#[test]
fn shuttle_gps_decomposes_and_is_gated() {
    let cfg = shuttle_cfg(120, Some(60));
    let d = simulate_shuttle(&cfg, 4, None).unwrap();
    let again = simulate_shuttle(&cfg, 4, None).unwrap();
    assert_eq!(d.gps, again.gps);
    let t_s = 60.0 * cfg.dt;
    for k in 1..=cfg.steps {
        let Some(y) = &d.gps[k] else {
            assert!(k % cfg.delta != 0);
            continue;
        };
        let s = &d.reference[k];
        let truth = DVector::from_vec(vec![s.h, s.l, s.lambda]);
        let residual = y - truth - d.gps_noise[k].as_ref().unwrap();
        let t_k = k as f64 * cfg.dt;
        let expected = if t_k > t_s { bias_eval(&cfg.bias, t_s, t_k, 3).unwrap() } else { DVector::zeros(3) };
        for i in 0..3 {
            let scale: f64 = if i == 0 { 1.5e5 } else { 1.0 };
            assert!((residual[i] - expected[i]).abs() <= 1e-9 * scale.max(expected[i].abs()), "step {k} ch {i}");
        }
        if t_k > t_s + 10.0 {
            assert_eq!(expected[0], 1000.0);
        }
    }
}

#[test]
fn strapdown_round_trip_on_generated_reference() {
    let (reference, _) = generate_reference(&GeneratorConfig::default(), 1000, 1.4).unwrap();
    let rebuilt = ins::ReferenceTrajectory::from_states(reference.states.clone(), 1.4).unwrap();
    let states = ins::integrate(&reference.states[0], &rebuilt.imu, 1.4).unwrap();
    for (k, (got, want)) in states.iter().zip(&reference.states).enumerate() {
        for (g, w) in [(got.h, want.h), (got.l, want.l), (got.lambda, want.lambda)] {
            assert!((g - w).abs() <= 1e-6 * w.abs(), "step {k}: {g} vs {w}");
        }
        let c = got.attitude();
        assert!((c.transpose() * c - nalgebra::Matrix3::identity()).amax() < 1e-10);
    }
    let g0 = ins::gravity(0.0)[2];
    assert!((g0 - J1 / (R_F * R_F)).abs() <= 1e-9 * g0);
}

#[test]
fn shuttle_inertial_reference_has_no_noise() {
    let mut cfg = shuttle_cfg(200, None);
    cfg.bias = BiasSpec::zero();
    let d = simulate_shuttle(&cfg, 1, None).unwrap();
    let inertial: Vec<NavState15> = ins::integrate(&d.reference[0], &d.imu_true, cfg.dt).unwrap();
    assert_eq!(inertial, d.inertial);
    assert!(d.gps_bias.iter().flatten().all(|b| b.amax() == 0.0));
}

#[test]
fn noise_ratio_matches_reference_balloon_run() {
    let mut cfg = balloon_cfg(0.0, 0.0, 0.0, None, 1);
    cfg.steps = 500;
    cfg.r = 1e-6;
    let field: VelocityField = cfg.field(None).unwrap();
    let d = simulate_balloon(&cfg, &field, 42).unwrap();
    let traj: Vec<Vec<f64>> = d.truth.iter().map(|x| x.as_slice().to_vec()).collect();
    let pct = noise_to_range_ratio(1e-6, &traj).unwrap();
    assert!((0.2..0.3).contains(&pct), "{pct}");
    let unit = vec![vec![0.0], vec![1.0]];
    assert!((noise_to_range_ratio(2.5e-3, &unit).unwrap() - 10.0).abs() < 1e-12);
    assert_eq!(noise_to_range_ratio(0.0, &unit).unwrap(), 0.0);
}
