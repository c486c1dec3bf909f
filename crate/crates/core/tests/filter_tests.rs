//! Filter runtime checks: gains, nominal updates, stepping, scenarios.

use covbound::catalog::build_system;
use covbound::filter::{
    ekf_gain, nominal_measurement_update, nominal_time_update, run_scenario, step, FilterState,
    InitialDistribution, MeasurementSource, RunConfig,
};
use covbound::model::NonlinearSystem;
use nalgebra::{dmatrix, DMatrix, DVector};
use serde_json::json;

fn sys(id: &str, params: serde_json::Value) -> NonlinearSystem<f64> {
    build_system(id, &params).unwrap()
}

fn init(mean: f64, p0: f64) -> InitialDistribution<f64> {
    InitialDistribution {
        mean: DVector::from_element(1, mean),
        covariance: dmatrix![p0],
    }
}

#[test]
fn gain_examples() {
    let k: DMatrix<f64> = ekf_gain(&dmatrix![1.0], &dmatrix![2.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
    assert!((k[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);

    let k: DMatrix<f64> = ekf_gain(&dmatrix![1.0], &dmatrix![0.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
    assert_eq!(k[(0, 0)], 0.0);

    let k: DMatrix<f64> = ekf_gain(&dmatrix![0.0], &dmatrix![2.0], &dmatrix![1.0], &dmatrix![1.0]).unwrap();
    assert_eq!(k[(0, 0)], 0.0);

    // Singular innovation with zero prior: K = 0 is still well-defined.
    let k: DMatrix<f64> = ekf_gain(&dmatrix![1.0], &dmatrix![0.0], &dmatrix![0.0], &dmatrix![1.0]).unwrap();
    assert_eq!(k[(0, 0)], 0.0);

    // Singular innovation with a nonzero numerator is an error.
    assert!(ekf_gain(&dmatrix![1.0], &dmatrix![1.0], &dmatrix![-1.0], &dmatrix![1.0]).is_err());
}

#[test]
fn nominal_update_examples() {
    let p: DMatrix<f64> = nominal_time_update(&dmatrix![0.9], &dmatrix![2.0], &dmatrix![1.0], &dmatrix![1.0]);
    assert!((p[(0, 0)] - 2.62).abs() < 1e-15);

    let p: DMatrix<f64> = nominal_time_update(&dmatrix![1.0], &dmatrix![1.7], &dmatrix![1.0], &dmatrix![0.0]);
    assert!((p[(0, 0)] - 1.7).abs() < 1e-15);

    let q0 = dmatrix![0.3];
    let p: DMatrix<f64> = nominal_time_update(&dmatrix![0.5], &dmatrix![0.0], &dmatrix![1.0], &q0);
    assert!((p[(0, 0)] - 0.3).abs() < 1e-15);

    let p: DMatrix<f64> = nominal_measurement_update(&dmatrix![2.0 / 3.0], &dmatrix![1.0], &dmatrix![2.0]);
    assert!((p[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    let p: DMatrix<f64> = nominal_measurement_update(&dmatrix![0.0], &dmatrix![1.0], &dmatrix![2.0]);
    assert!((p[(0, 0)] - 2.0).abs() < 1e-15);
    let p: DMatrix<f64> = nominal_measurement_update(&dmatrix![0.5], &dmatrix![0.0], &dmatrix![2.0]);
    assert!((p[(0, 0)] - 2.0).abs() < 1e-15);
}

#[test]
fn linear_step_interval_collapses_to_nominal() {
    let system = sys("linear1", serde_json::Value::Null);
    let state = FilterState::initial(DVector::zeros(1), dmatrix![1.0]).unwrap();
    let cfg = covbound::filter::StepConfig::default();
    let y = DVector::from_element(1, 0.4);
    let (next, diag) = step(&system, &state, &DVector::zeros(0), &y, &cfg).unwrap();

    let prior = diag.prior_interval.unwrap();
    assert!((prior.lower()[(0, 0)] - next.p_nominal_prior[(0, 0)]).abs() < 1e-6);
    assert!((prior.upper()[(0, 0)] - next.p_nominal_prior[(0, 0)]).abs() < 1e-6);
    let post = diag.posterior_interval.unwrap();
    assert!((post.lower()[(0, 0)] - next.p_nominal[(0, 0)]).abs() < 1e-6);
    assert!((post.upper()[(0, 0)] - next.p_nominal[(0, 0)]).abs() < 1e-6);

    // Estimate arithmetic: x̌ = 0.9·0 = 0, K = P⁻/(P⁻+R), x̂ = K·y.
    let p_minus = 0.9f64 * 0.9 + 1.0;
    let k = p_minus / (p_minus + 1.0);
    assert!((next.x_hat[0] - k * 0.4).abs() < 1e-12);
}

#[test]
fn nonlinear_step_interval_contains_nominal() {
    let system = sys("scalar_sine", serde_json::Value::Null);
    let state = FilterState::initial(DVector::zeros(1), dmatrix![0.5]).unwrap();
    let cfg = covbound::filter::StepConfig::default();
    let y = DVector::from_element(1, 0.2);
    let (next, diag) = step(&system, &state, &DVector::zeros(0), &y, &cfg).unwrap();

    let prior = diag.prior_interval.unwrap();
    assert!(
        prior.lower()[(0, 0)] <= next.p_nominal_prior[(0, 0)] + 1e-9
            && next.p_nominal_prior[(0, 0)] <= prior.upper()[(0, 0)] + 1e-9,
        "nominal {} outside [{}, {}]",
        next.p_nominal_prior[(0, 0)],
        prior.lower()[(0, 0)],
        prior.upper()[(0, 0)]
    );
    assert!(diag.dynamics_gamma.unwrap() > 0.0);
}

#[test]
fn zero_uncertainty_zero_noise_interval_stays_zero() {
    let system = sys("scalar_sine", json!({"q": 0.0}));
    let initial = init(0.3, 0.0);
    let out = run_scenario(
        &system,
        &initial,
        &[],
        &MeasurementSource::Simulate { seed: 3 },
        4,
        &RunConfig::default(),
    )
    .unwrap();
    for (_, _, iv) in &out.intervals {
        assert!(iv.lower()[(0, 0)].abs() < 1e-9);
        assert!(iv.upper()[(0, 0)].abs() < 1e-9);
    }
    // With no process noise and exact initial state the estimate tracks the
    // truth exactly.
    let truth = out.truth.unwrap();
    for (state, x) in out.states.iter().zip(truth.iter()) {
        assert!((state.x_hat[0] - x[0]).abs() < 1e-9);
    }
}

#[test]
fn horizon_zero_is_an_error() {
    let system = sys("linear1", serde_json::Value::Null);
    let err = run_scenario(
        &system,
        &init(0.0, 1.0),
        &[],
        &MeasurementSource::Simulate { seed: 1 },
        0,
        &RunConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, covbound::Error::Config(_)));
}

#[test]
fn replayed_seed_reproduces_records_exactly() {
    let system = sys("scalar_sine", serde_json::Value::Null);
    let run = || {
        run_scenario(
            &system,
            &init(0.0, 0.5),
            &[],
            &MeasurementSource::Simulate { seed: 17 },
            5,
            &RunConfig::default(),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.records.len(), b.records.len());
    for (ra, rb) in a.records.iter().zip(b.records.iter()) {
        assert_eq!(ra.lower, rb.lower);
        assert_eq!(ra.upper, rb.upper);
        assert_eq!(ra.ekf_nominal, rb.ekf_nominal);
        assert_eq!(ra.solver_status, rb.solver_status);
        assert_eq!(ra.xi_star, rb.xi_star);
    }
}

#[test]
fn replay_measurements_are_consumed_in_order() {
    let system = sys("linear1", serde_json::Value::Null);
    let meas = vec![
        DVector::from_element(1, 0.1),
        DVector::from_element(1, -0.2),
        DVector::from_element(1, 0.3),
    ];
    let out = run_scenario(
        &system,
        &init(0.0, 1.0),
        &[],
        &MeasurementSource::Replay(meas),
        3,
        &RunConfig::default(),
    )
    .unwrap();
    assert_eq!(out.states.len(), 3);
    assert!(out.truth.is_none());
    // Too-short replay errors.
    let err = run_scenario(
        &system,
        &init(0.0, 1.0),
        &[],
        &MeasurementSource::Replay(vec![DVector::from_element(1, 0.1)]),
        3,
        &RunConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, covbound::Error::Config(_)));
}

#[test]
fn trace_bounds_populate_step_summaries() {
    let system = sys("scalar_sine", serde_json::Value::Null);
    let cfg = RunConfig {
        trace_bounds: true,
        ..RunConfig::default()
    };
    let out = run_scenario(
        &system,
        &init(0.0, 0.5),
        &[],
        &MeasurementSource::Simulate { seed: 5 },
        3,
        &cfg,
    )
    .unwrap();
    for s in &out.step_summaries {
        let lo = s.prior_trace_lower.unwrap();
        let hi = s.prior_trace_upper.unwrap();
        assert!(lo <= hi + 1e-9, "prior trace bounds crossed: {lo} > {hi}");
        let lo = s.posterior_trace_lower.unwrap();
        let hi = s.posterior_trace_upper.unwrap();
        assert!(lo <= hi + 1e-9);
    }
}

#[test]
fn sector_constraint_config_runs_and_stays_ordered() {
    // A two-sided sector on the sine remainder (≈ a norm bound) through the
    // config-level QC path.
    let system = sys("scalar_sine", serde_json::Value::Null);
    let cfg = RunConfig {
        step: covbound::filter::StepConfig {
            dynamics_qc: covbound::filter::QcSpec {
                kind: covbound::filter::QcKind::Sector {
                    alpha: -0.1,
                    beta: 0.1,
                },
                validity: None,
                grid_density: 50,
            },
            ..covbound::filter::StepConfig::default()
        },
        trace_bounds: false,
    };
    let out = run_scenario(
        &system,
        &init(0.0, 0.3),
        &[],
        &MeasurementSource::Simulate { seed: 2 },
        5,
        &cfg,
    )
    .unwrap();
    for (_, _, iv) in &out.intervals {
        assert!(iv.lower()[(0, 0)] <= iv.upper()[(0, 0)]);
        assert!(iv.upper()[(0, 0)].is_finite());
    }
}

#[test]
fn two_state_linear_scenario_matches_kalman_recursion() {
    let system = sys("linear2", serde_json::Value::Null);
    let initial = InitialDistribution {
        mean: DVector::zeros(2),
        covariance: DMatrix::identity(2, 2),
    };
    let out = run_scenario(
        &system,
        &initial,
        &[],
        &MeasurementSource::Simulate { seed: 9 },
        10,
        &RunConfig::default(),
    )
    .unwrap();

    // Independent textbook recursion.
    let a = dmatrix![0.9, 0.1; 0.0, 0.8];
    let h = dmatrix![1.0, 0.0];
    let q = dmatrix![0.1, 0.0; 0.0, 0.05];
    let r = dmatrix![0.2];
    let mut p = DMatrix::<f64>::identity(2, 2);
    let mut step_idx = 0usize;
    for (k, phase, iv) in &out.intervals {
        match phase {
            covbound::bounds::Phase::Prior => {
                step_idx = *k;
                p = &a * &p * a.transpose() + &q;
            }
            covbound::bounds::Phase::Posterior => {
                assert_eq!(*k, step_idx);
                let s = (&h * &p * h.transpose() + &r)[(0, 0)];
                let kg = &p * h.transpose() / s;
                p = (DMatrix::identity(2, 2) - &kg * &h) * &p;
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (iv.lower()[(i, j)] - p[(i, j)]).abs() < 1e-6,
                    "step {k} {phase:?} L[{i}{j}]"
                );
                assert!((iv.upper()[(i, j)] - p[(i, j)]).abs() < 1e-6);
            }
        }
    }
}
