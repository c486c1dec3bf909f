//! Quadratic constraints on static nonlinearities and their lifting into
//! state coordinates.
//!
//! A constraint is a symmetric matrix Λ such that every admissible
//! input/output pair (b, d = Δ(b)) with b in the validity box B satisfies
//! `[b; d]ᵀ Λ [b; d] ≥ 0`. Lifting through the selection matrix C (the
//! `C_θ` or `C_μ` of a decomposition) rewrites the same inequality in
//! (δx, p) coordinates as `[δx; p]ᵀ M [δx; p] ≥ 0` with `M = Uᵀ Λ U`,
//! `U = diag(C, I)`, the form both bound programs consume.

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric_within, symmetrize};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sampling range substituted for unbounded box coordinates.
const UNBOUNDED_SAMPLING_RANGE: f64 = 10.0;

/// Axis-aligned box, possibly unbounded, used as the validity set of a
/// quadratic constraint ("the tuning knob for local bounding").
#[derive(Debug, Clone, PartialEq)]
pub struct ValidityBox<S: Scalar> {
    lo: DVector<S>,
    hi: DVector<S>,
}

impl<S: Scalar> ValidityBox<S> {
    pub fn new(lo: DVector<S>, hi: DVector<S>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Config("validity box bounds differ in length".into()));
        }
        for i in 0..lo.len() {
            // The negated form also rejects NaN bounds.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(lo[i] <= hi[i]) {
                return Err(Error::Config(format!(
                    "validity box has lo > hi in coordinate {i}"
                )));
            }
        }
        Ok(ValidityBox { lo, hi })
    }

    /// Symmetric box [-r, r]^dim.
    pub fn symmetric(dim: usize, r: S) -> Result<Self> {
        if r < S::zero() {
            return Err(Error::Config("box radius must be >= 0".into()));
        }
        Ok(ValidityBox {
            lo: DVector::from_element(dim, -r),
            hi: DVector::from_element(dim, r),
        })
    }

    /// Unbounded box (the constraint holds globally).
    pub fn unbounded(dim: usize) -> Self {
        ValidityBox {
            lo: DVector::from_element(dim, S::from_f64_lossy(f64::NEG_INFINITY)),
            hi: DVector::from_element(dim, S::from_f64_lossy(f64::INFINITY)),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<S> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<S> {
        &self.hi
    }

    pub fn contains(&self, v: &DVector<S>) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        (0..v.len()).all(|i| v[i] >= self.lo[i] && v[i] <= self.hi[i])
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().all(|x| x.is_finite()) && self.hi.iter().all(|x| x.is_finite())
    }

    /// Per-coordinate bounds with unbounded coordinates clamped to the
    /// default sampling range.
    fn sampling_bounds(&self, i: usize) -> (S, S) {
        let r = S::from_f64_lossy(UNBOUNDED_SAMPLING_RANGE);
        let lo = if self.lo[i].is_finite() { self.lo[i] } else { -r };
        let hi = if self.hi[i].is_finite() { self.hi[i] } else { r };
        (lo, hi)
    }

    /// Uniform sample (unbounded coordinates are drawn from the clamped
    /// sampling range).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<S> {
        DVector::from_fn(self.dim(), |i, _| {
            let (lo, hi) = self.sampling_bounds(i);
            let u = S::from_f64_lossy(rng.random::<f64>());
            lo + (hi - lo) * u
        })
    }

    /// Dense grid over a bounded box, endpoints included.
    pub fn grid(&self, density: usize) -> Result<Vec<DVector<S>>> {
        if !self.is_bounded() {
            return Err(Error::RequiresBoundedSet(
                "grid enumeration needs finite box bounds".into(),
            ));
        }
        let d = self.dim();
        let total = (density as u128).checked_pow(d as u32);
        match total {
            Some(t) if t <= 2_000_000 => {}
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "grid of {density}^{d} points is too large"
                )))
            }
        }
        let mut points = Vec::with_capacity(density.pow(d as u32));
        let mut idx = vec![0usize; d];
        loop {
            let p = DVector::from_fn(d, |i, _| {
                let frac = if density == 1 {
                    S::from_f64_lossy(0.5)
                } else {
                    S::from_f64_lossy(idx[i] as f64 / (density - 1) as f64)
                };
                self.lo[i] + (self.hi[i] - self.lo[i]) * frac
            });
            points.push(p);
            let mut carry = 0;
            loop {
                idx[carry] += 1;
                if idx[carry] < density {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
                if carry == d {
                    return Ok(points);
                }
            }
        }
    }
}

/// A quadratic constraint Λ on input/output pairs of a static nonlinearity.
#[derive(Debug, Clone)]
pub struct QuadraticConstraint<S: Scalar> {
    pub lambda: DMatrix<S>,
    pub input_dim: usize,
    pub output_dim: usize,
    pub validity: ValidityBox<S>,
}

impl<S: Scalar> QuadraticConstraint<S> {
    pub fn new(
        lambda: DMatrix<S>,
        input_dim: usize,
        output_dim: usize,
        validity: ValidityBox<S>,
    ) -> Result<Self> {
        let d = input_dim + output_dim;
        if lambda.nrows() != d || lambda.ncols() != d {
            return Err(Error::DimensionMismatch {
                context: "quadratic constraint",
                detail: format!("Lambda is {}x{}, expected {d}x{d}", lambda.nrows(), lambda.ncols()),
            });
        }
        if !is_symmetric_within(&lambda, S::from_f64_lossy(1e-12)) {
            return Err(Error::Config("Lambda must be symmetric".into()));
        }
        if validity.dim() != input_dim {
            return Err(Error::DimensionMismatch {
                context: "quadratic constraint",
                detail: format!(
                    "validity box dim {} does not match input dim {input_dim}",
                    validity.dim()
                ),
            });
        }
        Ok(QuadraticConstraint {
            lambda,
            input_dim,
            output_dim,
            validity,
        })
    }

    /// Evaluate [b; d]ᵀ Λ [b; d].
    pub fn quadratic_form(&self, b: &DVector<S>, d: &DVector<S>) -> S {
        let mut z = DVector::zeros(self.input_dim + self.output_dim);
        z.rows_mut(0, self.input_dim).copy_from(b);
        z.rows_mut(self.input_dim, self.output_dim).copy_from(d);
        (&z.transpose() * &self.lambda * &z)[(0, 0)]
    }
}

/// A constraint lifted into (δx, p) coordinates: M = Uᵀ Λ U, U = diag(C, I).
#[derive(Debug, Clone)]
pub struct LiftedConstraint<S: Scalar> {
    pub m: DMatrix<S>,
    pub source: QuadraticConstraint<S>,
    pub c: DMatrix<S>,
}

impl<S: Scalar> LiftedConstraint<S> {
    pub fn state_dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.source.output_dim
    }

    /// Evaluate [δx; p]ᵀ M [δx; p].
    pub fn quadratic_form(&self, dx: &DVector<S>, p: &DVector<S>) -> S {
        let n = self.state_dim();
        let d = self.output_dim();
        let mut z = DVector::zeros(n + d);
        z.rows_mut(0, n).copy_from(dx);
        z.rows_mut(n, d).copy_from(p);
        (&z.transpose() * &self.m * &z)[(0, 0)]
    }

    /// Recompute Uᵀ Λ U from the stored pieces (used by invariants tests).
    pub fn recompute_m(&self) -> DMatrix<S> {
        lift_matrix(&self.source.lambda, &self.c, self.source.input_dim, self.source.output_dim)
    }
}

fn lift_matrix<S: Scalar>(
    lambda: &DMatrix<S>,
    c: &DMatrix<S>,
    n_b: usize,
    n_d: usize,
) -> DMatrix<S> {
    let n_x = c.ncols();
    let l11 = lambda.view((0, 0), (n_b, n_b));
    let l12 = lambda.view((0, n_b), (n_b, n_d));
    let l22 = lambda.view((n_b, n_b), (n_d, n_d));
    let mut m = DMatrix::zeros(n_x + n_d, n_x + n_d);
    let top_left = c.transpose() * l11 * c;
    let top_right = c.transpose() * l12;
    m.view_mut((0, 0), (n_x, n_x)).copy_from(&top_left);
    m.view_mut((0, n_x), (n_x, n_d)).copy_from(&top_right);
    m.view_mut((n_x, 0), (n_d, n_x)).copy_from(&top_right.transpose());
    m.view_mut((n_x, n_x), (n_d, n_d)).copy_from(&l22.into_owned());
    symmetrize(&m)
}

/// Norm-bound constraint ‖d‖₂ ≤ γ‖b‖₂: Λ = diag(γ²·I, −I).
pub fn norm_bound_qc<S: Scalar>(
    gamma: S,
    input_dim: usize,
    output_dim: usize,
    validity: ValidityBox<S>,
) -> Result<QuadraticConstraint<S>> {
    if gamma <= S::zero() {
        return Err(Error::InvalidParameter(format!(
            "norm bound gamma must be > 0, got {}",
            gamma.to_f64_lossy()
        )));
    }
    let d = input_dim + output_dim;
    let mut lambda = DMatrix::zeros(d, d);
    let g2 = gamma * gamma;
    for i in 0..input_dim {
        lambda[(i, i)] = g2;
    }
    for i in input_dim..d {
        lambda[(i, i)] = -S::one();
    }
    QuadraticConstraint::new(lambda, input_dim, output_dim, validity)
}

/// Scalar sector constraint [α, β]: (d − αb)(βb − d) ≥ 0, encoded as
/// Λ = [[−αβ, (α+β)/2], [(α+β)/2, −1]].
pub fn sector_bound_qc<S: Scalar>(
    alpha: S,
    beta: S,
    validity: ValidityBox<S>,
) -> Result<QuadraticConstraint<S>> {
    if alpha > beta {
        return Err(Error::InvalidParameter(format!(
            "sector requires alpha <= beta, got [{}, {}]",
            alpha.to_f64_lossy(),
            beta.to_f64_lossy()
        )));
    }
    let half = S::from_f64_lossy(0.5);
    let mut lambda = DMatrix::zeros(2, 2);
    lambda[(0, 0)] = -(alpha * beta);
    lambda[(0, 1)] = (alpha + beta) * half;
    lambda[(1, 0)] = lambda[(0, 1)];
    lambda[(1, 1)] = -S::one();
    QuadraticConstraint::new(lambda, 1, 1, validity)
}

/// Smallest sampled local gain: γ = 1.05 · max over a dense grid of
/// ‖Δ(b)‖ / ‖b‖ (b ≠ 0). Requires a bounded box and at least 10 grid
/// points per dimension.
pub fn local_gain_estimate<S, F>(delta: F, validity: &ValidityBox<S>, grid_density: usize) -> Result<S>
where
    S: Scalar,
    F: Fn(&DVector<S>) -> DVector<S>,
{
    if !validity.is_bounded() {
        return Err(Error::RequiresBoundedSet(
            "local gain estimation needs a bounded box".into(),
        ));
    }
    if grid_density < 10 {
        return Err(Error::InvalidParameter(format!(
            "grid density must be >= 10 points per dimension, got {grid_density}"
        )));
    }
    let mut worst = S::zero();
    for b in validity.grid(grid_density)? {
        let nb = b.norm();
        if nb == S::zero() {
            continue;
        }
        let ratio = delta(&b).norm() / nb;
        if ratio > worst {
            worst = ratio;
        }
    }
    Ok(worst * S::from_f64_lossy(1.05))
}

/// Lift a constraint through the selection matrix C (rows = qc input dim).
pub fn lift_qc<S: Scalar>(
    qc: &QuadraticConstraint<S>,
    c: &DMatrix<S>,
) -> Result<LiftedConstraint<S>> {
    if c.nrows() != qc.input_dim {
        return Err(Error::DimensionMismatch {
            context: "lift_qc",
            detail: format!(
                "C has {} rows but the constraint input dim is {}",
                c.nrows(),
                qc.input_dim
            ),
        });
    }
    let m = lift_matrix(&qc.lambda, c, qc.input_dim, qc.output_dim);
    Ok(LiftedConstraint {
        m,
        source: qc.clone(),
        c: c.clone(),
    })
}

/// Result of sampling a (Λ, Δ) pair over the validity box.
#[derive(Debug, Clone)]
pub struct QcValidationReport<S: Scalar> {
    /// Minimum observed quadratic-form value (≥ ~0 for a valid pair).
    pub min_value: S,
    pub worst_input: DVector<S>,
    pub worst_output: DVector<S>,
    pub sample_count: usize,
    /// Number of samples with quadratic form below -1e-12.
    pub violations: usize,
}

impl<S: Scalar> QcValidationReport<S> {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Sample the constraint inequality over the box. Never errors: violations
/// are reported and the caller decides.
pub fn validate_qc<S, F>(
    qc: &QuadraticConstraint<S>,
    delta: F,
    sample_count: usize,
    rng_seed: u64,
) -> QcValidationReport<S>
where
    S: Scalar,
    F: Fn(&DVector<S>) -> DVector<S>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let tol = S::from_f64_lossy(-1e-12);
    let mut min_value = S::from_f64_lossy(f64::INFINITY);
    let mut worst_input = DVector::zeros(qc.input_dim);
    let mut worst_output = DVector::zeros(qc.output_dim);
    let mut violations = 0usize;
    for _ in 0..sample_count {
        let b = qc.validity.sample(&mut rng);
        let d = delta(&b);
        let v = qc.quadratic_form(&b, &d);
        if v < min_value {
            min_value = v;
            worst_input = b;
            worst_output = d;
        }
        if v < tol {
            violations += 1;
        }
    }
    QcValidationReport {
        min_value,
        worst_input,
        worst_output,
        sample_count,
        violations,
    }
}
