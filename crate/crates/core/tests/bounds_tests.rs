//! Bound-propagation checks against hand-derived and brute-force oracles.

use covbound::bounds::{
    assemble_psd_overbound, entry_selector, measurement_update_bound,
    measurement_update_trace_bound, propagate_measurement_interval, propagate_time_interval,
    time_update_bound, time_update_trace_bound, BoundSettings, CovarianceInterval, Phase, Sign,
};
use covbound::model::{DecomposedDynamics, DecomposedMeasurement};
use covbound::qc::{lift_qc, norm_bound_qc, LiftedConstraint, ValidityBox};
use covbound::Error;
use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;
use std::sync::Arc;

fn settings() -> BoundSettings<f64> {
    BoundSettings::default()
}

/// Synthetic scalar dynamics A·x + B_p·Δ(θ) + w with Δ = gain·sin.
fn scalar_dynamics(a: f64, with_nl: Option<f64>, vbox_r: f64) -> DecomposedDynamics<f64> {
    let validity = ValidityBox::symmetric(1, vbox_r).unwrap();
    match with_nl {
        None => DecomposedDynamics {
            a: dmatrix![a],
            b_p: DMatrix::zeros(1, 0),
            b_w: DMatrix::identity(1, 1),
            c_theta: DMatrix::zeros(0, 1),
            delta: None,
            validity: ValidityBox::unbounded(0),
        },
        Some(gain) => DecomposedDynamics {
            a: dmatrix![a],
            b_p: DMatrix::identity(1, 1),
            b_w: DMatrix::identity(1, 1),
            c_theta: DMatrix::identity(1, 1),
            delta: Some(Arc::new(move |t: &DVector<f64>| {
                DVector::from_element(1, gain * t[0].sin())
            })),
            validity,
        },
    }
}

fn scalar_norm_lift(gamma: f64, vbox_r: f64) -> LiftedConstraint<f64> {
    let qc = norm_bound_qc(gamma, 1, 1, ValidityBox::symmetric(1, vbox_r).unwrap()).unwrap();
    lift_qc(&qc, &dmatrix![1.0]).unwrap()
}

fn exact_posterior(p: f64) -> CovarianceInterval<f64> {
    CovarianceInterval::exact(&dmatrix![p], 0, Phase::Posterior).unwrap()
}

#[test]
fn linear_scalar_time_update_matches_kalman() {
    // A = 0.9, Q = 1, P⁺ = 2: A²P + Q = 2.62.
    let dynamics = scalar_dynamics(0.9, None, 0.0);
    let sel = entry_selector(1, 1, Sign::Plus, 1).unwrap();
    let out = time_update_bound(
        &dynamics,
        None,
        &exact_posterior(2.0),
        &dmatrix![1.0],
        &sel,
        &settings(),
    )
    .unwrap();
    assert!((out.value - 2.62).abs() < 1e-12, "bound {}", out.value);
    assert!(out.solution.is_none());

    // Lower bound equals the upper in the linear case.
    let sel = entry_selector(1, 1, Sign::Minus, 1).unwrap();
    let out = time_update_bound(
        &dynamics,
        None,
        &exact_posterior(2.0),
        &dmatrix![1.0],
        &sel,
        &settings(),
    )
    .unwrap();
    assert!((-out.value - 2.62).abs() < 1e-12);
}

#[test]
fn nonlinear_scalar_time_update_closed_form() {
    // A = 0.5, γ = 0.5, Q = 0, P⁺ = 1 → bound 1.0 via (Y*, ξ*) = (4, 2),
    // which equals the worst-case gain (|A| + γ)²·P.
    let dynamics = scalar_dynamics(0.5, Some(0.5), 1.0);
    let lifted = scalar_norm_lift(0.5, 1.0);
    let sel = entry_selector(1, 1, Sign::Plus, 1).unwrap();
    let out = time_update_bound(
        &dynamics,
        Some(&lifted),
        &exact_posterior(1.0),
        &dmatrix![0.0],
        &sel,
        &settings(),
    )
    .unwrap();
    assert!((out.value - 1.0).abs() < 1e-5, "bound {}", out.value);
    let sol = out.solution.as_ref().unwrap();
    assert!((sol.y_star[(0, 0)] - 4.0).abs() < 1e-5, "Y* {}", sol.y_star[(0, 0)]);
    assert!((sol.xi_star - 2.0).abs() < 1e-5, "xi* {}", sol.xi_star);
    assert!(out.certificate_max_eig.unwrap() <= 1e-7);

    // Q additivity: the noise term enters through trace(B_w Q B_wᵀ Z).
    let out = time_update_bound(
        &dynamics,
        Some(&lifted),
        &exact_posterior(1.0),
        &dmatrix![1.0],
        &sel,
        &settings(),
    )
    .unwrap();
    assert!((out.value - 2.0).abs() < 1e-5, "bound {}", out.value);
}

#[test]
fn linear_measurement_update_matches_kalman() {
    // P⁻ = 2, H = 1, R = 1, K = 2/3: (1−K)²·P + K²·R = 2/3, exact with Y = 0.
    let meas = DecomposedMeasurement {
        h: dmatrix![1.0],
        b_rho: DMatrix::zeros(1, 0),
        b_v: DMatrix::identity(1, 1),
        c_mu: DMatrix::zeros(0, 1),
        delta: None,
        validity: ValidityBox::unbounded(0),
    };
    let p_minus = CovarianceInterval::exact(&dmatrix![2.0], 1, Phase::Prior).unwrap();
    let k = dmatrix![2.0 / 3.0];
    let sel = entry_selector(1, 1, Sign::Plus, 1).unwrap();
    let out =
        measurement_update_bound(&meas, None, &k, &p_minus, &dmatrix![1.0], &sel, &settings())
            .unwrap();
    assert!((out.value - 2.0 / 3.0).abs() < 1e-12, "bound {}", out.value);
    assert!(out.solution.is_none());

    // Negated selector: raw value −2/3, so the lower bound equals the upper.
    let sel = entry_selector(1, 1, Sign::Minus, 1).unwrap();
    let out =
        measurement_update_bound(&meas, None, &k, &p_minus, &dmatrix![1.0], &sel, &settings())
            .unwrap();
    assert!((out.value + 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn zero_gain_passes_prior_through() {
    // B_ρ = 1 with K = 0: the LMI off-diagonal blocks vanish, Y* ≈ 0 is
    // optimal, and the bound reduces to the prior entry.
    let meas = DecomposedMeasurement {
        h: dmatrix![1.0],
        b_rho: DMatrix::identity(1, 1),
        b_v: DMatrix::identity(1, 1),
        c_mu: DMatrix::identity(1, 1),
        delta: Some(Arc::new(|m: &DVector<f64>| {
            DVector::from_element(1, m[0] * m[0])
        })),
        validity: ValidityBox::symmetric(1, 1.0).unwrap(),
    };
    let qc = norm_bound_qc(1.0, 1, 1, ValidityBox::symmetric(1, 1.0).unwrap()).unwrap();
    let lifted = lift_qc(&qc, &dmatrix![1.0]).unwrap();
    let p_minus = CovarianceInterval::exact(&dmatrix![1.7], 1, Phase::Prior).unwrap();
    let k = dmatrix![0.0];
    let sel = entry_selector(1, 1, Sign::Plus, 1).unwrap();
    let out = measurement_update_bound(
        &meas,
        Some(&lifted),
        &k,
        &p_minus,
        &dmatrix![1.0],
        &sel,
        &settings(),
    )
    .unwrap();
    assert!((out.value - 1.7).abs() < 1e-5, "bound {}", out.value);
}

#[test]
fn propagate_zero_interval_stays_zero() {
    // No uncertainty in, none out: Δ(0) = 0 and Q = 0.
    let dynamics = scalar_dynamics(0.5, Some(0.2), 1.0);
    let lifted = scalar_norm_lift(0.2, 1.0);
    let p_plus = exact_posterior(0.0);
    let prop = propagate_time_interval(&dynamics, Some(&lifted), &p_plus, &dmatrix![0.0], &settings())
        .unwrap();
    assert!(prop.interval.lower()[(0, 0)].abs() < 1e-9);
    assert!(prop.interval.upper()[(0, 0)].abs() < 1e-9);
}

#[test]
fn nonlinear_scalar_interval_has_sdp_pair() {
    let dynamics = scalar_dynamics(0.5, Some(0.5), 1.0);
    let lifted = scalar_norm_lift(0.5, 1.0);
    let prop = propagate_time_interval(
        &dynamics,
        Some(&lifted),
        &exact_posterior(1.0),
        &dmatrix![0.0],
        &settings(),
    )
    .unwrap();
    assert!((prop.interval.upper()[(0, 0)] - 1.0).abs() < 1e-5);
    // The lower bound from the negated selector is sound (≤ any realizable
    // value) and cannot exceed the upper bound.
    assert!(prop.interval.lower()[(0, 0)] <= prop.interval.upper()[(0, 0)]);
    assert_eq!(prop.entries.len(), 1);
    assert_eq!(prop.entries[0].solver_status, "optimal");
    assert!(prop.entries[0].certificate_max_eig.unwrap() <= 1e-7);
}

/// Textbook Kalman recursion, written independently of the filter module.
struct KalmanOracle {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl KalmanOracle {
    fn time(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a * p * self.a.transpose() + &self.q
    }
    fn gain(&self, p_minus: &DMatrix<f64>) -> DMatrix<f64> {
        let s = &self.h * p_minus * self.h.transpose() + &self.r;
        p_minus * self.h.transpose() * s.try_inverse().unwrap()
    }
    fn measurement(&self, k: &DMatrix<f64>, p_minus: &DMatrix<f64>) -> DMatrix<f64> {
        let n = p_minus.nrows();
        (DMatrix::identity(n, n) - k * &self.h) * p_minus
    }
}

#[test]
fn linear_two_state_recursion_is_exact() {
    let oracle = KalmanOracle {
        a: dmatrix![0.9, 0.1; 0.0, 0.8],
        h: dmatrix![1.0, 0.0],
        q: dmatrix![0.1, 0.0; 0.0, 0.05],
        r: dmatrix![0.2],
    };
    let dynamics = DecomposedDynamics {
        a: oracle.a.clone(),
        b_p: DMatrix::zeros(2, 0),
        b_w: DMatrix::identity(2, 2),
        c_theta: DMatrix::zeros(0, 2),
        delta: None,
        validity: ValidityBox::unbounded(0),
    };
    let meas = DecomposedMeasurement {
        h: oracle.h.clone(),
        b_rho: DMatrix::zeros(1, 0),
        b_v: DMatrix::identity(1, 1),
        c_mu: DMatrix::zeros(0, 2),
        delta: None,
        validity: ValidityBox::unbounded(0),
    };

    let mut p_oracle = dmatrix![1.0, 0.0; 0.0, 1.0];
    let mut interval = CovarianceInterval::exact(&p_oracle, 0, Phase::Posterior).unwrap();
    for _ in 0..10 {
        let p_minus_oracle = oracle.time(&p_oracle);
        let prop =
            propagate_time_interval(&dynamics, None, &interval, &oracle.q, &settings()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((prop.interval.lower()[(i, j)] - p_minus_oracle[(i, j)]).abs() < 1e-9);
                assert!((prop.interval.upper()[(i, j)] - p_minus_oracle[(i, j)]).abs() < 1e-9);
            }
        }
        let k = oracle.gain(&p_minus_oracle);
        p_oracle = oracle.measurement(&k, &p_minus_oracle);
        let prop2 = propagate_measurement_interval(
            &meas,
            None,
            &k,
            &prop.interval,
            &oracle.r,
            &settings(),
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((prop2.interval.lower()[(i, j)] - p_oracle[(i, j)]).abs() < 1e-9);
                assert!((prop2.interval.upper()[(i, j)] - p_oracle[(i, j)]).abs() < 1e-9);
            }
        }
        interval = prop2.interval;
    }
}

#[test]
fn trace_bounds_examples() {
    // Linear scalar: upper = lower = 2.62.
    let dynamics = scalar_dynamics(0.9, None, 0.0);
    let p = exact_posterior(2.0);
    let (upper, _) =
        time_update_trace_bound(&dynamics, None, &p, &dmatrix![1.0], Sign::Plus, &settings())
            .unwrap();
    let (lower, _) =
        time_update_trace_bound(&dynamics, None, &p, &dmatrix![1.0], Sign::Minus, &settings())
            .unwrap();
    assert!((upper - 2.62).abs() < 1e-12);
    assert!((lower - 2.62).abs() < 1e-12);

    // Nonlinear scalar: the trace bound coincides with the (1,1) bound.
    let dynamics = scalar_dynamics(0.5, Some(0.5), 1.0);
    let lifted = scalar_norm_lift(0.5, 1.0);
    let (upper, _) = time_update_trace_bound(
        &dynamics,
        Some(&lifted),
        &exact_posterior(1.0),
        &dmatrix![0.0],
        Sign::Plus,
        &settings(),
    )
    .unwrap();
    assert!((upper - 1.0).abs() < 1e-5, "trace upper {upper}");

    // 2-state linear: trace bound equals the diagonal sum of the oracle.
    let oracle = KalmanOracle {
        a: dmatrix![0.9, 0.1; 0.0, 0.8],
        h: dmatrix![1.0, 0.0],
        q: dmatrix![0.1, 0.0; 0.0, 0.05],
        r: dmatrix![0.2],
    };
    let dynamics2 = DecomposedDynamics {
        a: oracle.a.clone(),
        b_p: DMatrix::zeros(2, 0),
        b_w: DMatrix::identity(2, 2),
        c_theta: DMatrix::zeros(0, 2),
        delta: None,
        validity: ValidityBox::unbounded(0),
    };
    let p0 = dmatrix![1.0, 0.2; 0.2, 1.5];
    let p_next = oracle.time(&p0);
    let iv = CovarianceInterval::exact(&p0, 0, Phase::Posterior).unwrap();
    let (upper, _) =
        time_update_trace_bound(&dynamics2, None, &iv, &oracle.q, Sign::Plus, &settings()).unwrap();
    let (lower, _) =
        time_update_trace_bound(&dynamics2, None, &iv, &oracle.q, Sign::Minus, &settings())
            .unwrap();
    assert!((upper - p_next.trace()).abs() < 1e-9);
    assert!((lower - p_next.trace()).abs() < 1e-9);

    // Measurement trace bound, linear case.
    let meas = DecomposedMeasurement {
        h: dmatrix![1.0],
        b_rho: DMatrix::zeros(1, 0),
        b_v: DMatrix::identity(1, 1),
        c_mu: DMatrix::zeros(0, 1),
        delta: None,
        validity: ValidityBox::unbounded(0),
    };
    let p_minus = CovarianceInterval::exact(&dmatrix![2.0], 1, Phase::Prior).unwrap();
    let k = dmatrix![2.0 / 3.0];
    let (upper, _) = measurement_update_trace_bound(
        &meas,
        None,
        &k,
        &p_minus,
        &dmatrix![1.0],
        Sign::Plus,
        &settings(),
    )
    .unwrap();
    assert!((upper - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn unstable_dynamics_remain_feasible() {
    // A = 1.1 with γ = 0.1: per-step worst-case factor (|A|+γ)² = 1.44.
    let dynamics = scalar_dynamics(1.1, Some(0.1), 1.0);
    let lifted = scalar_norm_lift(0.1, 1.0);
    let mut interval = exact_posterior(1.0);
    for step in 0..5 {
        let prop = propagate_time_interval(
            &dynamics,
            Some(&lifted),
            &interval,
            &dmatrix![0.0],
            &settings(),
        )
        .unwrap_or_else(|e| panic!("step {step}: {e}"));
        assert!(prop.interval.upper()[(0, 0)].is_finite());
        interval = CovarianceInterval::new(
            prop.interval.lower().clone(),
            prop.interval.upper().clone(),
            prop.interval.step,
            Phase::Posterior,
        )
        .unwrap();
    }
    // Growth tracks the worst-case gain, so stays finite but increasing.
    assert!(interval.upper()[(0, 0)] > 1.0);
    assert!(interval.upper()[(0, 0)] < 10.0);
}

#[test]
fn widening_the_input_never_shrinks_the_output() {
    let dynamics = scalar_dynamics(0.7, Some(0.3), 1.0);
    let lifted = scalar_norm_lift(0.3, 1.0);
    let narrow = CovarianceInterval::new(dmatrix![0.8], dmatrix![1.2], 0, Phase::Posterior).unwrap();
    let wide = CovarianceInterval::new(dmatrix![0.6], dmatrix![1.4], 0, Phase::Posterior).unwrap();
    let q = dmatrix![0.1];
    let p_narrow =
        propagate_time_interval(&dynamics, Some(&lifted), &narrow, &q, &settings()).unwrap();
    let p_wide = propagate_time_interval(&dynamics, Some(&lifted), &wide, &q, &settings()).unwrap();
    assert!(p_wide.interval.upper()[(0, 0)] >= p_narrow.interval.upper()[(0, 0)] - 1e-9);
    assert!(p_wide.interval.lower()[(0, 0)] <= p_narrow.interval.lower()[(0, 0)] + 1e-9);
}

#[test]
fn infeasible_entry_reports_bound_unavailable() {
    // M with a zero output block cannot absorb the positive corner
    // B_pᵀZB_p = +1 of the main LMI, so no (Y, ξ) is feasible.
    let dynamics = scalar_dynamics(0.9, Some(0.5), 1.0);
    let qc = covbound::qc::QuadraticConstraint::new(
        dmatrix![0.25, 0.0; 0.0, 0.0],
        1,
        1,
        ValidityBox::symmetric(1, 1.0).unwrap(),
    )
    .unwrap();
    let lifted = lift_qc(&qc, &dmatrix![1.0]).unwrap();
    let sel = entry_selector(1, 1, Sign::Plus, 1).unwrap();
    let err = time_update_bound(
        &dynamics,
        Some(&lifted),
        &exact_posterior(1.0),
        &dmatrix![0.0],
        &sel,
        &settings(),
    )
    .unwrap_err();
    match err {
        Error::BoundUnavailable { status, .. } => assert_eq!(status, "infeasible"),
        other => panic!("expected BoundUnavailable, got {other}"),
    }
}

#[test]
fn experimental_overbound_is_flagged_shape() {
    let l = dmatrix![0.9f64, 0.1; 0.1, 1.9];
    let u = dmatrix![1.1f64, 0.5; 0.5, 2.1];
    let iv = CovarianceInterval::new(l, u, 3, Phase::Posterior).unwrap();
    let b = assemble_psd_overbound(&iv).unwrap();
    // Diagonal inflated by the Gershgorin radii of the half-width matrix.
    assert!((b[(0, 0)] - (1.0 + 0.3)).abs() < 1e-12);
    assert!((b[(1, 1)] - (2.0 + 0.3)).abs() < 1e-12);
}

fn brute_force_worst_case(c: &DMatrix<f64>, l: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0..(1u64 << pairs.len()) {
        let mut p = DMatrix::zeros(n, n);
        for (b, &(i, j)) in pairs.iter().enumerate() {
            let v = if mask & (1 << b) != 0 { u[(i, j)] } else { l[(i, j)] };
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
        let mut val = 0.0;
        for i in 0..n {
            for j in 0..n {
                val += c[(i, j)] * p[(j, i)];
            }
        }
        if val > best {
            best = val;
        }
    }
    best
}

proptest! {
    /// Selector algebra: trace(P·Z_ij) = P_ij for random symmetric P.
    #[test]
    fn selector_picks_entries(vals in proptest::collection::vec(-5.0f64..5.0, 9)) {
        let mut p = DMatrix::zeros(3, 3);
        let mut idx = 0;
        for i in 0..3 {
            for j in i..3 {
                p[(i, j)] = vals[idx];
                p[(j, i)] = vals[idx];
                idx += 1;
            }
        }
        for i in 1..=3usize {
            for j in i..=3usize {
                let z = entry_selector::<f64>(i, j, Sign::Plus, 3).unwrap();
                let mut tr = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        tr += p[(a, b)] * z.matrix[(b, a)];
                    }
                }
                prop_assert!((tr - p[(i - 1, j - 1)]).abs() < 1e-12);
            }
        }
    }

    /// The box worst case matches brute-force vertex enumeration exactly.
    #[test]
    fn worst_case_matches_vertex_enumeration(
        n in 1usize..=3,
        c_vals in proptest::collection::vec(-2.0f64..2.0, 6),
        l_vals in proptest::collection::vec(-1.5f64..1.5, 6),
        w_vals in proptest::collection::vec(0.0f64..1.0, 6),
    ) {
        let mut c = DMatrix::zeros(n, n);
        let mut l = DMatrix::zeros(n, n);
        let mut u = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                c[(i, j)] = c_vals[idx];
                c[(j, i)] = c_vals[idx];
                let mut lo = l_vals[idx];
                let mut hi = lo + w_vals[idx];
                if i == j && hi < 0.0 {
                    hi = 0.0;
                    if lo > hi { lo = hi; }
                }
                l[(i, j)] = lo; l[(j, i)] = lo;
                u[(i, j)] = hi; u[(j, i)] = hi;
                idx += 1;
            }
        }
        let iv = CovarianceInterval::new(l.clone(), u.clone(), 0, Phase::Posterior).unwrap();
        let fast = covbound::bounds::worst_case_linear_functional(&c, &iv).unwrap();
        let slow = brute_force_worst_case(&c, &l, &u);
        prop_assert!((fast - slow).abs() <= 1e-12, "fast {fast} slow {slow}");
    }
}
