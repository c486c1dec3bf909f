//! Nonlinear discrete-time system models and their exact decomposition into
//! a linear part plus a structured static nonlinearity.
//!
//! At every step the error dynamics are rewritten without approximation as
//!
//! ```text
//! δx_{k+1} = A_k δx_k + B_p Δ̀(C_θ δx_k) + B_w w_k
//! δy_k     = H_k δx_k + B_ρ Δ́(C_μ δx_k) + B_v v_k
//! ```
//!
//! with `A_k`/`H_k` the Jacobians at the linearization point and the static
//! maps Δ̀/Δ́ carrying the full Taylor remainder. Decompositions are supplied
//! in closed form per system (see [`crate::catalog`]) so that exactness is
//! testable by sampling: [`verify_decomposition`] checks the residual of
//! the identity above on randomly drawn perturbations.

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric_within, max_abs};
use crate::qc::ValidityBox;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Process map x_{k+1} = f_d(x_k, u_k, w_k).
pub type DynamicsFn<S> =
    Arc<dyn Fn(&DVector<S>, &DVector<S>, &DVector<S>) -> DVector<S> + Send + Sync>;
/// Measurement map y_k = g_d(x_k, v_k).
pub type MeasurementFn<S> = Arc<dyn Fn(&DVector<S>, &DVector<S>) -> DVector<S> + Send + Sync>;
/// Static memoryless nonlinearity θ ↦ p (or μ ↦ ρ).
pub type StaticNonlinearity<S> = Arc<dyn Fn(&DVector<S>) -> DVector<S> + Send + Sync>;

type DynamicsDecomposer<S> = Arc<
    dyn Fn(&DVector<S>, &DVector<S>, &ValidityBox<S>) -> Result<DecomposedDynamics<S>>
        + Send
        + Sync,
>;
type MeasurementDecomposer<S> =
    Arc<dyn Fn(&DVector<S>, &ValidityBox<S>) -> Result<DecomposedMeasurement<S>> + Send + Sync>;

/// Exact split of the process error dynamics at one linearization point.
#[derive(Clone)]
pub struct DecomposedDynamics<S: Scalar> {
    /// Jacobian ∂f/∂x at the linearization point.
    pub a: DMatrix<S>,
    /// Nonlinearity input channel (n_x × n_p).
    pub b_p: DMatrix<S>,
    /// Process noise channel (n_x × n_w).
    pub b_w: DMatrix<S>,
    /// Selector of the state components entering the nonlinearity (n_θ × n_x).
    pub c_theta: DMatrix<S>,
    /// The remainder map θ ↦ p; `None` exactly when n_p = 0 (linear step).
    pub delta: Option<StaticNonlinearity<S>>,
    /// Validity set the decomposition was built for.
    pub validity: ValidityBox<S>,
}

impl<S: Scalar> DecomposedDynamics<S> {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn nonlinearity_dim(&self) -> usize {
        self.b_p.ncols()
    }

    /// Evaluate A δx + B_p Δ̀(C_θ δx), the noise-free error propagation.
    pub fn propagate_error(&self, dx: &DVector<S>) -> DVector<S> {
        let mut out = &self.a * dx;
        if let Some(delta) = &self.delta {
            let theta = &self.c_theta * dx;
            out += &self.b_p * delta(&theta);
        }
        out
    }
}

impl<S: Scalar> std::fmt::Debug for DecomposedDynamics<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecomposedDynamics")
            .field("a", &self.a)
            .field("b_p", &self.b_p)
            .field("b_w", &self.b_w)
            .field("c_theta", &self.c_theta)
            .field("delta", &self.delta.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

/// Exact split of the measurement error equation at one linearization point.
#[derive(Clone)]
pub struct DecomposedMeasurement<S: Scalar> {
    /// Jacobian ∂g/∂x at the linearization point (n_y × n_x).
    pub h: DMatrix<S>,
    /// Nonlinearity channel (n_y × n_ρ).
    pub b_rho: DMatrix<S>,
    /// Measurement noise channel (n_y × n_v).
    pub b_v: DMatrix<S>,
    /// Selector (n_μ × n_x).
    pub c_mu: DMatrix<S>,
    /// Remainder map μ ↦ ρ; `None` exactly when n_ρ = 0.
    pub delta: Option<StaticNonlinearity<S>>,
    pub validity: ValidityBox<S>,
}

impl<S: Scalar> DecomposedMeasurement<S> {
    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn nonlinearity_dim(&self) -> usize {
        self.b_rho.ncols()
    }

    /// Evaluate H δx + B_ρ Δ́(C_μ δx).
    pub fn propagate_error(&self, dx: &DVector<S>) -> DVector<S> {
        let mut out = &self.h * dx;
        if let Some(delta) = &self.delta {
            let mu = &self.c_mu * dx;
            out += &self.b_rho * delta(&mu);
        }
        out
    }
}

impl<S: Scalar> std::fmt::Debug for DecomposedMeasurement<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DecomposedMeasurement")
            .field("h", &self.h)
            .field("b_rho", &self.b_rho)
            .field("b_v", &self.b_v)
            .field("c_mu", &self.c_mu)
            .field("delta", &self.delta.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

/// A nonlinear discrete-time system together with its closed-form
/// decomposers and noise covariances.
#[derive(Clone)]
pub struct NonlinearSystem<S: Scalar> {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub meas_dim: usize,
    pub process_noise_dim: usize,
    pub meas_noise_dim: usize,
    pub f_d: DynamicsFn<S>,
    pub g_d: MeasurementFn<S>,
    /// Process noise covariance, symmetric PSD.
    pub q: DMatrix<S>,
    /// Measurement noise covariance, symmetric PSD.
    pub r: DMatrix<S>,
    dynamics_decomposer: DynamicsDecomposer<S>,
    measurement_decomposer: MeasurementDecomposer<S>,
    /// Region of linearization points the catalog entry is documented for;
    /// used by verification sampling.
    pub operating_region: ValidityBox<S>,
    /// Default validity box for the dynamics nonlinearity input θ.
    pub default_dynamics_box: ValidityBox<S>,
    /// Default validity box for the measurement nonlinearity input μ.
    pub default_measurement_box: ValidityBox<S>,
}

impl<S: Scalar> std::fmt::Debug for NonlinearSystem<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NonlinearSystem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("meas_dim", &self.meas_dim)
            .finish()
    }
}

/// Constructor arguments for [`NonlinearSystem::new`]; keeps the long field
/// list readable at call sites.
pub struct SystemParts<S: Scalar> {
    pub name: String,
    pub state_dim: usize,
    pub input_dim: usize,
    pub meas_dim: usize,
    pub process_noise_dim: usize,
    pub meas_noise_dim: usize,
    pub f_d: DynamicsFn<S>,
    pub g_d: MeasurementFn<S>,
    pub q: DMatrix<S>,
    pub r: DMatrix<S>,
    pub dynamics_decomposer: DynamicsDecomposer<S>,
    pub measurement_decomposer: MeasurementDecomposer<S>,
    pub operating_region: ValidityBox<S>,
    pub default_dynamics_box: ValidityBox<S>,
    pub default_measurement_box: ValidityBox<S>,
}

fn check_psd_covariance<S: Scalar>(m: &DMatrix<S>, dim: usize, what: &str) -> Result<()> {
    if m.nrows() != dim || m.ncols() != dim {
        return Err(Error::DimensionMismatch {
            context: "noise covariance",
            detail: format!("{what} is {}x{}, expected {dim}x{dim}", m.nrows(), m.ncols()),
        });
    }
    if !is_symmetric_within(m, S::from_f64_lossy(1e-12)) {
        return Err(Error::Config(format!("{what} must be symmetric")));
    }
    if dim > 0 {
        let eig = m.clone().symmetric_eigen();
        let scale = S::one() + max_abs(m);
        let tol = S::from_f64_lossy(-1e-12) * scale;
        for &e in eig.eigenvalues.iter() {
            if e < tol {
                return Err(Error::Config(format!(
                    "{what} must be positive semidefinite (eigenvalue {})",
                    e.to_f64_lossy()
                )));
            }
        }
    }
    Ok(())
}

impl<S: Scalar> NonlinearSystem<S> {
    pub fn new(parts: SystemParts<S>) -> Result<Self> {
        check_psd_covariance(&parts.q, parts.process_noise_dim, "Q")?;
        check_psd_covariance(&parts.r, parts.meas_noise_dim, "R")?;
        if parts.operating_region.dim() != parts.state_dim {
            return Err(Error::DimensionMismatch {
                context: "operating region",
                detail: format!(
                    "region dim {} vs state dim {}",
                    parts.operating_region.dim(),
                    parts.state_dim
                ),
            });
        }
        Ok(NonlinearSystem {
            name: parts.name,
            state_dim: parts.state_dim,
            input_dim: parts.input_dim,
            meas_dim: parts.meas_dim,
            process_noise_dim: parts.process_noise_dim,
            meas_noise_dim: parts.meas_noise_dim,
            f_d: parts.f_d,
            g_d: parts.g_d,
            q: parts.q,
            r: parts.r,
            dynamics_decomposer: parts.dynamics_decomposer,
            measurement_decomposer: parts.measurement_decomposer,
            operating_region: parts.operating_region,
            default_dynamics_box: parts.default_dynamics_box,
            default_measurement_box: parts.default_measurement_box,
        })
    }

    /// Exact decomposition of the process error dynamics at (x̌, u).
    pub fn decompose_dynamics(
        &self,
        x_check: &DVector<S>,
        u: &DVector<S>,
        validity: &ValidityBox<S>,
    ) -> Result<DecomposedDynamics<S>> {
        if x_check.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "decompose_dynamics",
                detail: format!("state has {} entries, expected {}", x_check.len(), self.state_dim),
            });
        }
        if u.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "decompose_dynamics",
                detail: format!("input has {} entries, expected {}", u.len(), self.input_dim),
            });
        }
        let d = (self.dynamics_decomposer)(x_check, u, validity)?;
        debug_assert_eq!(d.state_dim(), self.state_dim);
        Ok(d)
    }

    /// Exact decomposition of the measurement error equation at x̌.
    pub fn decompose_measurement(
        &self,
        x_check: &DVector<S>,
        validity: &ValidityBox<S>,
    ) -> Result<DecomposedMeasurement<S>> {
        if x_check.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                context: "decompose_measurement",
                detail: format!("state has {} entries, expected {}", x_check.len(), self.state_dim),
            });
        }
        let d = (self.measurement_decomposer)(x_check, validity)?;
        debug_assert_eq!(d.state_dim(), self.state_dim);
        Ok(d)
    }

    /// Replace noise covariances, re-running the PSD checks.
    pub fn with_noise(mut self, q: Option<DMatrix<S>>, r: Option<DMatrix<S>>) -> Result<Self> {
        if let Some(q) = q {
            check_psd_covariance(&q, self.process_noise_dim, "Q override")?;
            self.q = q;
        }
        if let Some(r) = r {
            check_psd_covariance(&r, self.meas_noise_dim, "R override")?;
            self.r = r;
        }
        Ok(self)
    }

    /// Noise-free process step.
    pub fn step_noise_free(&self, x: &DVector<S>, u: &DVector<S>) -> DVector<S> {
        (self.f_d)(x, u, &DVector::zeros(self.process_noise_dim))
    }

    /// Noise-free measurement.
    pub fn measure_noise_free(&self, x: &DVector<S>) -> DVector<S> {
        (self.g_d)(x, &DVector::zeros(self.meas_noise_dim))
    }
}

/// Which half of the model a verification run targets.
pub enum Decomposition<'a, S: Scalar> {
    Dynamics(&'a DecomposedDynamics<S>),
    Measurement(&'a DecomposedMeasurement<S>),
}

/// Residual report from [`verify_decomposition`].
#[derive(Debug, Clone)]
pub struct ResidualReport<S: Scalar> {
    pub max_residual: S,
    pub tolerance_at_worst: S,
    pub worst_sample: DVector<S>,
    pub samples: usize,
}

/// Relative exactness tolerance: residual ≤ 1e-10 · (1 + ‖δx‖).
const EXACTNESS_TOL: f64 = 1e-10;

/// Check the exactness identity of a decomposition by sampling
/// perturbations δx with the nonlinearity input inside the validity box.
/// Errors with the worst sample when the residual exceeds tolerance.
pub fn verify_decomposition<S: Scalar>(
    system: &NonlinearSystem<S>,
    decomposition: &Decomposition<'_, S>,
    x_check: &DVector<S>,
    u: &DVector<S>,
    sample_count: usize,
    rng_seed: u64,
) -> Result<ResidualReport<S>> {
    let n = system.state_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let (selector, validity) = match decomposition {
        Decomposition::Dynamics(d) => (&d.c_theta, &d.validity),
        Decomposition::Measurement(m) => (&m.c_mu, &m.validity),
    };

    // Perturbation radius: large enough to exercise the model, scaled down
    // on rejection so the nonlinearity input stays inside the box.
    let mut radius = S::one();
    let base_f = system.step_noise_free(x_check, u);
    let base_g = system.measure_noise_free(x_check);

    let mut max_residual = S::zero();
    let mut tolerance_at_worst = S::from_f64_lossy(EXACTNESS_TOL);
    let mut worst_sample = DVector::zeros(n);

    for _ in 0..sample_count {
        let mut dx = DVector::zeros(n);
        let mut ok = false;
        for _ in 0..64 {
            dx = DVector::from_fn(n, |_, _| {
                let u01 = S::from_f64_lossy(rng.random::<f64>());
                (u01 + u01 - S::one()) * radius
            });
            if selector.nrows() == 0 || validity.contains(&(selector * &dx)) {
                ok = true;
                break;
            }
            radius *= S::from_f64_lossy(0.7);
        }
        if !ok {
            return Err(Error::Config(
                "could not draw perturbations with the nonlinearity input inside the box".into(),
            ));
        }

        let x_pert = x_check + &dx;
        let residual = match decomposition {
            Decomposition::Dynamics(d) => {
                let truth = system.step_noise_free(&x_pert, u) - &base_f;
                (truth - d.propagate_error(&dx)).amax()
            }
            Decomposition::Measurement(m) => {
                let truth = system.measure_noise_free(&x_pert) - &base_g;
                (truth - m.propagate_error(&dx)).amax()
            }
        };
        if residual > max_residual {
            max_residual = residual;
            tolerance_at_worst = S::from_f64_lossy(EXACTNESS_TOL) * (S::one() + dx.norm());
            worst_sample = dx;
        }
    }

    if max_residual > tolerance_at_worst {
        return Err(Error::DecompositionInvalid {
            max_residual: max_residual.to_f64_lossy(),
            tolerance: tolerance_at_worst.to_f64_lossy(),
            worst_sample: worst_sample.iter().map(|v| v.to_f64_lossy()).collect(),
        });
    }

    Ok(ResidualReport {
        max_residual,
        tolerance_at_worst,
        worst_sample,
        samples: sample_count,
    })
}
