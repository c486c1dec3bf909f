//! Benchmark system catalog, addressed by string id from scenario configs.
//!
//! Every entry ships a closed-form decomposition: the Jacobian linear part
//! and the exact Taylor remainder of its nonlinearity, so the exactness
//! invariant holds to machine precision (no finite-difference leakage).
//!
//! Ids: `linear1`, `linear2`, `scalar_sine`, `scalar_cubic`,
//! `scalar_quad_meas`, `pendulum`, `vanderpol`.

use crate::error::{Error, Result};
use crate::model::{
    DecomposedDynamics, DecomposedMeasurement, NonlinearSystem, SystemParts,
};
use crate::qc::ValidityBox;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use std::sync::Arc;

pub fn catalog_ids() -> &'static [&'static str] {
    &[
        "linear1",
        "linear2",
        "scalar_sine",
        "scalar_cubic",
        "scalar_quad_meas",
        "pendulum",
        "vanderpol",
    ]
}

/// Build a catalog system with optional JSON parameter overrides.
pub fn build_system<S: Scalar>(id: &str, params: &Value) -> Result<NonlinearSystem<S>> {
    match id {
        "linear1" => linear1(params),
        "linear2" => linear2(params),
        "scalar_sine" => scalar_sine(params),
        "scalar_cubic" => scalar_cubic(params),
        "scalar_quad_meas" => scalar_quad_meas(params),
        "pendulum" => pendulum(params),
        "vanderpol" => vanderpol(params),
        other => Err(Error::UnsupportedSystem(other.to_string())),
    }
}

fn param_f64(params: &Value, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| Error::Config(format!("system parameter '{key}' must be a number"))),
    }
}

fn check_keys(params: &Value, allowed: &[&str]) -> Result<()> {
    if params.is_null() {
        return Ok(());
    }
    let obj = params
        .as_object()
        .ok_or_else(|| Error::Config("system parameters must be a JSON object".into()))?;
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "unknown system parameter '{key}' (allowed: {allowed:?})"
            )));
        }
    }
    Ok(())
}

fn empty_box<S: Scalar>() -> ValidityBox<S> {
    ValidityBox::new(DVector::zeros(0), DVector::zeros(0)).expect("empty box")
}

/// Linear measurement y = H x + v with no nonlinearity.
fn linear_measurement_decomposer<S: Scalar>(
    h: DMatrix<S>,
    n_v: usize,
) -> impl Fn(&DVector<S>, &ValidityBox<S>) -> Result<DecomposedMeasurement<S>> + Send + Sync + Clone
{
    move |_x: &DVector<S>, _b: &ValidityBox<S>| {
        let n_y = h.nrows();
        Ok(DecomposedMeasurement {
            h: h.clone(),
            b_rho: DMatrix::zeros(n_y, 0),
            b_v: DMatrix::identity(n_y, n_v),
            c_mu: DMatrix::zeros(0, h.ncols()),
            delta: None,
            validity: empty_box(),
        })
    }
}

/// Scalar linear system: x⁺ = a·x + w, y = h·x + v.
fn linear1<S: Scalar>(params: &Value) -> Result<NonlinearSystem<S>> {
    check_keys(params, &["a", "h", "q", "r"])?;
    let a = S::from_f64_lossy(param_f64(params, "a", 0.9)?);
    let h = S::from_f64_lossy(param_f64(params, "h", 1.0)?);
    let q = param_f64(params, "q", 1.0)?;
    let r = param_f64(params, "r", 1.0)?;

    let f_d = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, w: &DVector<S>| {
        DVector::from_element(1, a * x[0] + w[0])
    });
    let g_d =
        Arc::new(move |x: &DVector<S>, v: &DVector<S>| DVector::from_element(1, h * x[0] + v[0]));

    let dyn_dec = Arc::new(move |_x: &DVector<S>, _u: &DVector<S>, _b: &ValidityBox<S>| {
        Ok(DecomposedDynamics {
            a: DMatrix::from_element(1, 1, a),
            b_p: DMatrix::zeros(1, 0),
            b_w: DMatrix::identity(1, 1),
            c_theta: DMatrix::zeros(0, 1),
            delta: None,
            validity: empty_box(),
        })
    });
    let meas_dec = Arc::new(linear_measurement_decomposer(
        DMatrix::from_element(1, 1, h),
        1,
    ));

    NonlinearSystem::new(SystemParts {
        name: "linear1".into(),
        state_dim: 1,
        input_dim: 0,
        meas_dim: 1,
        process_noise_dim: 1,
        meas_noise_dim: 1,
        f_d,
        g_d,
        q: DMatrix::from_element(1, 1, S::from_f64_lossy(q)),
        r: DMatrix::from_element(1, 1, S::from_f64_lossy(r)),
        dynamics_decomposer: dyn_dec,
        measurement_decomposer: meas_dec,
        operating_region: ValidityBox::symmetric(1, S::from_f64_lossy(10.0))?,
        default_dynamics_box: empty_box(),
        default_measurement_box: empty_box(),
    })
}

/// Two-state linear system with position-only measurement.
fn linear2<S: Scalar>(params: &Value) -> Result<NonlinearSystem<S>> {
    check_keys(params, &["a11", "a12", "a21", "a22", "q1", "q2", "r"])?;
    let a11 = param_f64(params, "a11", 0.9)?;
    let a12 = param_f64(params, "a12", 0.1)?;
    let a21 = param_f64(params, "a21", 0.0)?;
    let a22 = param_f64(params, "a22", 0.8)?;
    let q1 = param_f64(params, "q1", 0.1)?;
    let q2 = param_f64(params, "q2", 0.05)?;
    let r = param_f64(params, "r", 0.2)?;

    let a = DMatrix::from_row_slice(2, 2, &[a11, a12, a21, a22]).map(S::from_f64_lossy);
    let h = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]).map(S::from_f64_lossy);
    let q = DMatrix::from_partial_diagonal(2, 2, &[S::from_f64_lossy(q1), S::from_f64_lossy(q2)]);

    let a_f = a.clone();
    let f_d = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, w: &DVector<S>| &a_f * x + w);
    let h_g = h.clone();
    let g_d = Arc::new(move |x: &DVector<S>, v: &DVector<S>| &h_g * x + v);

    let a_dec = a.clone();
    let dyn_dec = Arc::new(move |_x: &DVector<S>, _u: &DVector<S>, _b: &ValidityBox<S>| {
        Ok(DecomposedDynamics {
            a: a_dec.clone(),
            b_p: DMatrix::zeros(2, 0),
            b_w: DMatrix::identity(2, 2),
            c_theta: DMatrix::zeros(0, 2),
            delta: None,
            validity: empty_box(),
        })
    });
    let meas_dec = Arc::new(linear_measurement_decomposer(h, 1));

    NonlinearSystem::new(SystemParts {
        name: "linear2".into(),
        state_dim: 2,
        input_dim: 0,
        meas_dim: 1,
        process_noise_dim: 2,
        meas_noise_dim: 1,
        f_d,
        g_d,
        q,
        r: DMatrix::from_element(1, 1, S::from_f64_lossy(r)),
        dynamics_decomposer: dyn_dec,
        measurement_decomposer: meas_dec,
        operating_region: ValidityBox::symmetric(2, S::from_f64_lossy(10.0))?,
        default_dynamics_box: empty_box(),
        default_measurement_box: empty_box(),
    })
}

/// Scalar x⁺ = a·x + k·sin(x) + w with linear measurement. The remainder of
/// the sine term at x̌ is Δ̀(θ) = k·(sin(x̌+θ) − sin x̌ − cos(x̌)·θ).
fn scalar_sine<S: Scalar>(params: &Value) -> Result<NonlinearSystem<S>> {
    check_keys(params, &["a", "k_sin", "q", "r"])?;
    let a = S::from_f64_lossy(param_f64(params, "a", 0.5)?);
    let k = S::from_f64_lossy(param_f64(params, "k_sin", 0.2)?);
    let q = param_f64(params, "q", 0.01)?;
    let r = param_f64(params, "r", 0.1)?;

    let f_d = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, w: &DVector<S>| {
        DVector::from_element(1, a * x[0] + k * x[0].sin() + w[0])
    });
    let g_d = Arc::new(move |x: &DVector<S>, v: &DVector<S>| DVector::from_element(1, x[0] + v[0]));

    let dyn_dec = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, b: &ValidityBox<S>| {
        let xc = x[0];
        let jac = a + k * xc.cos();
        let delta = Arc::new(move |theta: &DVector<S>| {
            let t = theta[0];
            DVector::from_element(1, k * ((xc + t).sin() - xc.sin() - xc.cos() * t))
        });
        Ok(DecomposedDynamics {
            a: DMatrix::from_element(1, 1, jac),
            b_p: DMatrix::identity(1, 1),
            b_w: DMatrix::identity(1, 1),
            c_theta: DMatrix::identity(1, 1),
            delta: Some(delta),
            validity: b.clone(),
        })
    });
    let meas_dec = Arc::new(linear_measurement_decomposer(DMatrix::identity(1, 1), 1));

    NonlinearSystem::new(SystemParts {
        name: "scalar_sine".into(),
        state_dim: 1,
        input_dim: 0,
        meas_dim: 1,
        process_noise_dim: 1,
        meas_noise_dim: 1,
        f_d,
        g_d,
        q: DMatrix::from_element(1, 1, S::from_f64_lossy(q)),
        r: DMatrix::from_element(1, 1, S::from_f64_lossy(r)),
        dynamics_decomposer: dyn_dec,
        measurement_decomposer: meas_dec,
        operating_region: ValidityBox::symmetric(1, S::from_f64_lossy(3.0))?,
        default_dynamics_box: ValidityBox::symmetric(1, S::from_f64_lossy(1.5))?,
        default_measurement_box: empty_box(),
    })
}

/// Scalar x⁺ = a·x + c·x³ + w. Remainder: Δ̀(θ) = c·(3·x̌·θ² + θ³).
fn scalar_cubic<S: Scalar>(params: &Value) -> Result<NonlinearSystem<S>> {
    check_keys(params, &["a", "c_cubic", "q", "r"])?;
    let a = S::from_f64_lossy(param_f64(params, "a", 0.6)?);
    let c = S::from_f64_lossy(param_f64(params, "c_cubic", 0.1)?);
    let q = param_f64(params, "q", 0.01)?;
    let r = param_f64(params, "r", 0.1)?;
    let three = S::from_f64_lossy(3.0);

    let f_d = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, w: &DVector<S>| {
        DVector::from_element(1, a * x[0] + c * x[0] * x[0] * x[0] + w[0])
    });
    let g_d = Arc::new(move |x: &DVector<S>, v: &DVector<S>| DVector::from_element(1, x[0] + v[0]));

    let dyn_dec = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, b: &ValidityBox<S>| {
        let xc = x[0];
        let jac = a + three * c * xc * xc;
        let delta = Arc::new(move |theta: &DVector<S>| {
            let t = theta[0];
            DVector::from_element(1, c * (three * xc * t * t + t * t * t))
        });
        Ok(DecomposedDynamics {
            a: DMatrix::from_element(1, 1, jac),
            b_p: DMatrix::identity(1, 1),
            b_w: DMatrix::identity(1, 1),
            c_theta: DMatrix::identity(1, 1),
            delta: Some(delta),
            validity: b.clone(),
        })
    });
    let meas_dec = Arc::new(linear_measurement_decomposer(DMatrix::identity(1, 1), 1));

    NonlinearSystem::new(SystemParts {
        name: "scalar_cubic".into(),
        state_dim: 1,
        input_dim: 0,
        meas_dim: 1,
        process_noise_dim: 1,
        meas_noise_dim: 1,
        f_d,
        g_d,
        q: DMatrix::from_element(1, 1, S::from_f64_lossy(q)),
        r: DMatrix::from_element(1, 1, S::from_f64_lossy(r)),
        dynamics_decomposer: dyn_dec,
        measurement_decomposer: meas_dec,
        operating_region: ValidityBox::symmetric(1, S::from_f64_lossy(2.0))?,
        default_dynamics_box: ValidityBox::symmetric(1, S::from_f64_lossy(1.0))?,
        default_measurement_box: empty_box(),
    })
}

/// Linear dynamics with a quadratic range measurement y = x² + v.
/// Measurement remainder at x̌: Δ́(μ) = μ² (H = 2·x̌).
fn scalar_quad_meas<S: Scalar>(params: &Value) -> Result<NonlinearSystem<S>> {
    check_keys(params, &["a", "q", "r"])?;
    let a = S::from_f64_lossy(param_f64(params, "a", 0.9)?);
    let q = param_f64(params, "q", 0.01)?;
    let r = param_f64(params, "r", 0.1)?;
    let two = S::from_f64_lossy(2.0);

    let f_d = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, w: &DVector<S>| {
        DVector::from_element(1, a * x[0] + w[0])
    });
    let g_d =
        Arc::new(move |x: &DVector<S>, v: &DVector<S>| DVector::from_element(1, x[0] * x[0] + v[0]));

    let dyn_dec = Arc::new(move |_x: &DVector<S>, _u: &DVector<S>, _b: &ValidityBox<S>| {
        Ok(DecomposedDynamics {
            a: DMatrix::from_element(1, 1, a),
            b_p: DMatrix::zeros(1, 0),
            b_w: DMatrix::identity(1, 1),
            c_theta: DMatrix::zeros(0, 1),
            delta: None,
            validity: empty_box(),
        })
    });
    let meas_dec = Arc::new(move |x: &DVector<S>, b: &ValidityBox<S>| {
        let xc = x[0];
        let delta = Arc::new(move |mu: &DVector<S>| DVector::from_element(1, mu[0] * mu[0]));
        Ok(DecomposedMeasurement {
            h: DMatrix::from_element(1, 1, two * xc),
            b_rho: DMatrix::identity(1, 1),
            b_v: DMatrix::identity(1, 1),
            c_mu: DMatrix::identity(1, 1),
            delta: Some(delta),
            validity: b.clone(),
        })
    });

    NonlinearSystem::new(SystemParts {
        name: "scalar_quad_meas".into(),
        state_dim: 1,
        input_dim: 0,
        meas_dim: 1,
        process_noise_dim: 1,
        meas_noise_dim: 1,
        f_d,
        g_d,
        q: DMatrix::from_element(1, 1, S::from_f64_lossy(q)),
        r: DMatrix::from_element(1, 1, S::from_f64_lossy(r)),
        dynamics_decomposer: dyn_dec,
        measurement_decomposer: meas_dec,
        operating_region: ValidityBox::new(
            DVector::from_element(1, S::from_f64_lossy(0.5)),
            DVector::from_element(1, S::from_f64_lossy(3.0)),
        )?,
        default_dynamics_box: empty_box(),
        default_measurement_box: ValidityBox::symmetric(1, S::from_f64_lossy(0.75))?,
    })
}

/// Euler-discretized damped pendulum, x = [angle, rate], angle measured.
/// The sine remainder enters the rate row through B_p = [0; 1].
fn pendulum<S: Scalar>(params: &Value) -> Result<NonlinearSystem<S>> {
    check_keys(params, &["dt", "gl", "damping", "q", "r"])?;
    let dt = S::from_f64_lossy(param_f64(params, "dt", 0.05)?);
    let gl = S::from_f64_lossy(param_f64(params, "gl", 9.81)?);
    let damping = S::from_f64_lossy(param_f64(params, "damping", 0.2)?);
    let q = param_f64(params, "q", 0.01)?;
    let r = param_f64(params, "r", 0.05)?;

    let f_d = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, w: &DVector<S>| {
        let (phi, omega) = (x[0], x[1]);
        DVector::from_vec(vec![
            phi + dt * omega,
            omega + dt * (-gl * phi.sin() - damping * omega) + w[0],
        ])
    });
    let g_d = Arc::new(move |x: &DVector<S>, v: &DVector<S>| DVector::from_element(1, x[0] + v[0]));

    let dyn_dec = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, b: &ValidityBox<S>| {
        let phi = x[0];
        let mut a = DMatrix::identity(2, 2);
        a[(0, 1)] = dt;
        a[(1, 0)] = -dt * gl * phi.cos();
        a[(1, 1)] = S::one() - dt * damping;
        let delta = Arc::new(move |theta: &DVector<S>| {
            let t = theta[0];
            DVector::from_element(1, -dt * gl * ((phi + t).sin() - phi.sin() - phi.cos() * t))
        });
        let mut b_p = DMatrix::zeros(2, 1);
        b_p[(1, 0)] = S::one();
        let mut b_w = DMatrix::zeros(2, 1);
        b_w[(1, 0)] = S::one();
        let mut c_theta = DMatrix::zeros(1, 2);
        c_theta[(0, 0)] = S::one();
        Ok(DecomposedDynamics {
            a,
            b_p,
            b_w,
            c_theta,
            delta: Some(delta),
            validity: b.clone(),
        })
    });
    let meas_dec = Arc::new(linear_measurement_decomposer(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]).map(S::from_f64_lossy),
        1,
    ));

    NonlinearSystem::new(SystemParts {
        name: "pendulum".into(),
        state_dim: 2,
        input_dim: 0,
        meas_dim: 1,
        process_noise_dim: 1,
        meas_noise_dim: 1,
        f_d,
        g_d,
        q: DMatrix::from_element(1, 1, S::from_f64_lossy(q)),
        r: DMatrix::from_element(1, 1, S::from_f64_lossy(r)),
        dynamics_decomposer: dyn_dec,
        measurement_decomposer: meas_dec,
        operating_region: ValidityBox::symmetric(2, S::from_f64_lossy(1.5))?,
        default_dynamics_box: ValidityBox::symmetric(1, S::from_f64_lossy(0.5))?,
        default_measurement_box: empty_box(),
    })
}

/// Euler-discretized Van der Pol oscillator. The cubic coupling term
/// (1 − x₁²)·x₂ leaves the exact remainder
/// Δ̀(θ) = dt·μ·(−2·x̌₁·θ₁·θ₂ − x̌₂·θ₁² − θ₁²·θ₂) with C_θ = I₂.
fn vanderpol<S: Scalar>(params: &Value) -> Result<NonlinearSystem<S>> {
    check_keys(params, &["dt", "mu", "q", "r"])?;
    let dt = S::from_f64_lossy(param_f64(params, "dt", 0.05)?);
    let mu = S::from_f64_lossy(param_f64(params, "mu", 1.0)?);
    let q = param_f64(params, "q", 0.01)?;
    let r = param_f64(params, "r", 0.05)?;
    let two = S::from_f64_lossy(2.0);

    let f_d = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, w: &DVector<S>| {
        let (x1, x2) = (x[0], x[1]);
        DVector::from_vec(vec![
            x1 + dt * x2,
            x2 + dt * (mu * (S::one() - x1 * x1) * x2 - x1) + w[0],
        ])
    });
    let g_d = Arc::new(move |x: &DVector<S>, v: &DVector<S>| DVector::from_element(1, x[0] + v[0]));

    let dyn_dec = Arc::new(move |x: &DVector<S>, _u: &DVector<S>, b: &ValidityBox<S>| {
        let (x1, x2) = (x[0], x[1]);
        let mut a = DMatrix::identity(2, 2);
        a[(0, 1)] = dt;
        a[(1, 0)] = dt * (-two * mu * x1 * x2 - S::one());
        a[(1, 1)] = S::one() + dt * mu * (S::one() - x1 * x1);
        let delta = Arc::new(move |theta: &DVector<S>| {
            let (t1, t2) = (theta[0], theta[1]);
            DVector::from_element(1, dt * mu * (-two * x1 * t1 * t2 - x2 * t1 * t1 - t1 * t1 * t2))
        });
        let mut b_p = DMatrix::zeros(2, 1);
        b_p[(1, 0)] = S::one();
        let mut b_w = DMatrix::zeros(2, 1);
        b_w[(1, 0)] = S::one();
        Ok(DecomposedDynamics {
            a,
            b_p,
            b_w,
            c_theta: DMatrix::identity(2, 2),
            delta: Some(delta),
            validity: b.clone(),
        })
    });
    let meas_dec = Arc::new(linear_measurement_decomposer(
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]).map(S::from_f64_lossy),
        1,
    ));

    NonlinearSystem::new(SystemParts {
        name: "vanderpol".into(),
        state_dim: 2,
        input_dim: 0,
        meas_dim: 1,
        process_noise_dim: 1,
        meas_noise_dim: 1,
        f_d,
        g_d,
        q: DMatrix::from_element(1, 1, S::from_f64_lossy(q)),
        r: DMatrix::from_element(1, 1, S::from_f64_lossy(r)),
        dynamics_decomposer: dyn_dec,
        measurement_decomposer: meas_dec,
        operating_region: ValidityBox::symmetric(2, S::from_f64_lossy(1.0))?,
        default_dynamics_box: ValidityBox::symmetric(2, S::from_f64_lossy(0.5))?,
        default_measurement_box: empty_box(),
    })
}
