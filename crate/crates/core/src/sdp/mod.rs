//! Solver-agnostic interface for the small SDP family used by the bound
//! propagation: decision variables are a symmetric matrix `Y` (dimension
//! `n`) and a scalar multiplier `ξ ≥ 0`, the objective is `trace(G·Y)`,
//! and every constraint is an affine matrix-valued map of `(Y, ξ)` required
//! to be negative semidefinite.
//!
//! The backing solver is a dense log-barrier interior-point method
//! (see [`barrier`]); its iterates are strictly feasible, so any solution
//! reported `Optimal` satisfies every constraint with margin and passes
//! [`check_solution`] by construction.

mod barrier;

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric_within, max_eigenvalue, symmetrize};
use crate::scalar::Scalar;
use nalgebra::DMatrix;

/// Index pairs (i, j), i ≤ j, enumerating the canonical basis of the
/// symmetric matrices of dimension `n`. The coefficient ordering of
/// [`AffineLmi::y_coeffs`] follows this list.
pub fn sym_basis(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            out.push((i, j));
        }
    }
    out
}

/// Basis matrix for the (i, j) component: `e_i e_iᵀ` on the diagonal,
/// `e_i e_jᵀ + e_j e_iᵀ` off it.
pub fn sym_basis_matrix<S: Scalar>(n: usize, i: usize, j: usize) -> DMatrix<S> {
    let mut m = DMatrix::zeros(n, n);
    m[(i, j)] = S::one();
    m[(j, i)] = S::one();
    if i == j {
        m[(i, i)] = S::one();
    }
    m
}

/// One affine constraint `F(Y, ξ) = base + Σ_k y_k·y_coeffs[k] + ξ·xi_coeff ⪯ 0`,
/// where `y_k` runs over the [`sym_basis`] components of `Y`.
#[derive(Debug, Clone)]
pub struct AffineLmi<S: Scalar> {
    /// Human-readable tag used in diagnostics ("strictness", "time-update-lmi", ...).
    pub label: &'static str,
    pub base: DMatrix<S>,
    pub y_coeffs: Vec<DMatrix<S>>,
    pub xi_coeff: DMatrix<S>,
}

impl<S: Scalar> AffineLmi<S> {
    /// Constraint block dimension.
    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    /// Evaluate the affine map at a concrete (Y, ξ).
    pub fn evaluate(&self, y: &DMatrix<S>, xi: S) -> DMatrix<S> {
        debug_assert_eq!(self.y_coeffs.len(), y.nrows() * (y.nrows() + 1) / 2);
        let mut acc = self.base.clone();
        for (k, (i, j)) in sym_basis(y.nrows()).into_iter().enumerate() {
            let coord = y[(i, j)];
            if coord != S::zero() {
                acc += &self.y_coeffs[k] * coord;
            }
        }
        acc += &self.xi_coeff * xi;
        acc
    }

    fn validate(&self, n_y: usize) -> Result<()> {
        let d = self.dim();
        let tol = S::from_f64_lossy(1e-12);
        if self.base.ncols() != d || !is_symmetric_within(&self.base, tol) {
            return Err(Error::Config(format!(
                "constraint '{}': base block must be square symmetric",
                self.label
            )));
        }
        if self.y_coeffs.len() != n_y * (n_y + 1) / 2 {
            return Err(Error::Config(format!(
                "constraint '{}': expected {} Y-coefficient matrices, got {}",
                self.label,
                n_y * (n_y + 1) / 2,
                self.y_coeffs.len()
            )));
        }
        for c in self.y_coeffs.iter().chain(std::iter::once(&self.xi_coeff)) {
            if c.nrows() != d || c.ncols() != d || !is_symmetric_within(c, tol) {
                return Err(Error::Config(format!(
                    "constraint '{}': coefficient blocks must be {d}x{d} symmetric",
                    self.label
                )));
            }
        }
        Ok(())
    }
}

/// An instance of the bound SDP family.
///
/// minimize trace(G·Y) over symmetric Y and ξ, subject to every
/// [`AffineLmi`] in `constraints` being ⪯ 0 and the always-on ξ ≥ 0.
/// Strict inequalities are pre-shifted by the builder with
/// `strictness_margin` (recorded here for inspection only).
#[derive(Debug, Clone)]
pub struct SdpProblem<S: Scalar> {
    /// Dimension of Y.
    pub n: usize,
    /// Objective matrix G; objective value is trace(G·Y).
    pub objective: DMatrix<S>,
    /// Affine constraints, each required negative semidefinite.
    pub constraints: Vec<AffineLmi<S>>,
    /// Margin ε already folded into strict constraints by the builder.
    pub strictness_margin: S,
}

impl<S: Scalar> SdpProblem<S> {
    pub fn validate(&self) -> Result<()> {
        let tol = S::from_f64_lossy(1e-12);
        if self.n == 0 {
            return Err(Error::Config("SDP dimension must be positive".into()));
        }
        if self.objective.nrows() != self.n
            || self.objective.ncols() != self.n
            || !is_symmetric_within(&self.objective, tol)
        {
            return Err(Error::Config(
                "SDP objective must be a symmetric n x n matrix".into(),
            ));
        }
        if self.strictness_margin < S::zero() {
            return Err(Error::Config("strictness margin must be >= 0".into()));
        }
        for c in &self.constraints {
            c.validate(self.n)?;
        }
        Ok(())
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

impl SdpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::NumericalFailure => "numerical-failure",
        }
    }
}

/// Solver output. `y_star`/`xi_star` are meaningful only when
/// `status == Optimal`; they are then strictly feasible.
#[derive(Debug, Clone)]
pub struct SdpSolution<S: Scalar> {
    pub status: SdpStatus,
    pub y_star: DMatrix<S>,
    pub xi_star: S,
    pub objective_value: S,
    /// Largest eigenvalue among all constraint blocks at the returned point
    /// (negative when strictly feasible).
    pub max_constraint_eig: S,
    /// Certified upper bound on the duality gap at the returned point.
    pub duality_gap_bound: S,
    /// Total damped-Newton iterations across both phases.
    pub newton_iterations: usize,
}

/// Solver tolerances and iteration limits.
#[derive(Debug, Clone, Copy)]
pub struct SdpSettings<S: Scalar> {
    /// Residual eigenvalue tolerance used when certifying solutions.
    pub feasibility_tol: S,
    /// Relative duality-gap target.
    pub gap_tol: S,
    /// Cap on total Newton iterations (both phases).
    pub max_iterations: usize,
    /// Barrier parameter multiplier per outer iteration.
    pub barrier_mu: S,
}

impl<S: Scalar> Default for SdpSettings<S> {
    fn default() -> Self {
        SdpSettings {
            feasibility_tol: S::from_f64_lossy(1e-8),
            gap_tol: S::from_f64_lossy(1e-8),
            max_iterations: 200,
            barrier_mu: S::from_f64_lossy(20.0),
        }
    }
}

/// Per-constraint residual certificate for a claimed-optimal solution.
#[derive(Debug, Clone)]
pub struct CertificateReport<S: Scalar> {
    /// Largest eigenvalue of each constraint block at (Y*, ξ*), in the
    /// problem's constraint order.
    pub constraint_max_eigs: Vec<S>,
    pub xi_star: S,
    pub tolerance: S,
    pub pass: bool,
}

/// Solve one instance. Returns `Err` only for malformed problems; solver
/// outcomes (including infeasibility and stalls) are reported in
/// [`SdpSolution::status`], never as a silent fallback value.
pub fn solve<S: Scalar>(problem: &SdpProblem<S>, settings: &SdpSettings<S>) -> Result<SdpSolution<S>> {
    problem.validate()?;
    Ok(barrier::solve_barrier(problem, settings))
}

/// Independently re-evaluate every constraint of `problem` at the solution
/// point and report the residual eigenvalues. Pass iff all residuals are
/// ≤ `tol` and ξ* ≥ −`tol`.
pub fn check_solution<S: Scalar>(
    problem: &SdpProblem<S>,
    solution: &SdpSolution<S>,
    tol: S,
) -> CertificateReport<S> {
    let mut eigs = Vec::with_capacity(problem.constraints.len());
    let mut pass = solution.xi_star >= -tol;
    for c in &problem.constraints {
        let block = symmetrize(&c.evaluate(&solution.y_star, solution.xi_star));
        let e = max_eigenvalue(&block);
        if e > tol {
            pass = false;
        }
        eigs.push(e);
    }
    CertificateReport {
        constraint_max_eigs: eigs,
        xi_star: solution.xi_star,
        tolerance: tol,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_problem(constr: Vec<AffineLmi<f64>>, g: f64) -> SdpProblem<f64> {
        SdpProblem {
            n: 1,
            objective: dmatrix![g],
            constraints: constr,
            strictness_margin: 0.0,
        }
    }

    /// minimize Y subject to 1 − Y ⪯ 0 → Y* = 1.
    #[test]
    fn scalar_lower_bounded_min() {
        let c = AffineLmi {
            label: "one-minus-y",
            base: dmatrix![1.0],
            y_coeffs: vec![dmatrix![-1.0]],
            xi_coeff: dmatrix![0.0],
        };
        let p = scalar_problem(vec![c], 1.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!((sol.y_star[(0, 0)] - 1.0).abs() < 1e-6, "Y*={}", sol.y_star[(0, 0)]);
        assert!((sol.objective_value - 1.0).abs() < 1e-6);
        assert!(sol.max_constraint_eig <= 0.0);
    }

    /// ξ ≥ 0 together with 1 + ξ ⪯ 0 is contradictory.
    #[test]
    fn contradictory_scalar_constraints_infeasible() {
        let c = AffineLmi {
            label: "one-plus-xi",
            base: dmatrix![1.0],
            y_coeffs: vec![dmatrix![0.0]],
            xi_coeff: dmatrix![1.0],
        };
        let p = scalar_problem(vec![c], 1.0);
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }

    /// Certificate examples: Y*=1 passes "1 − Y ⪯ 0", Y*=0.9 fails it with
    /// residual eigenvalue 0.1.
    #[test]
    fn certificate_pass_and_fail() {
        let c = AffineLmi {
            label: "one-minus-y",
            base: dmatrix![1.0],
            y_coeffs: vec![dmatrix![-1.0]],
            xi_coeff: dmatrix![0.0],
        };
        let p = scalar_problem(vec![c], 1.0);
        let mut sol = solve(&p, &SdpSettings::default()).unwrap();

        sol.y_star = dmatrix![1.0];
        let cert = check_solution(&p, &sol, 1e-9);
        assert!(cert.pass);
        assert!(cert.constraint_max_eigs[0].abs() < 1e-12);

        sol.y_star = dmatrix![0.9];
        let cert = check_solution(&p, &sol, 1e-9);
        assert!(!cert.pass);
        assert!((cert.constraint_max_eigs[0] - 0.1).abs() < 1e-12);
    }

    /// Scalar time-update instance with A=0.5, B_p=1, C_θ=1, γ=0.5, Z=1,
    /// P=1: eliminating the 2x2 LMI's determinant constraint leaves
    /// Y(ξ) = 1 + ξ + 1/(ξ−1), minimized at ξ=2 with Y=4.
    #[test]
    fn closed_form_time_update_instance() {
        // Independent oracle: scan the eliminated 1-D objective.
        let mut best = (f64::INFINITY, 0.0);
        let mut xi = 1.0 + 1e-4;
        while xi < 10.0 {
            let y = 1.0 + xi + 1.0 / (xi - 1.0);
            if y < best.0 {
                best = (y, xi);
            }
            xi += 1e-4;
        }
        assert!((best.0 - 4.0).abs() < 1e-6, "oracle Y* = {}", best.0);
        assert!((best.1 - 2.0).abs() < 1e-3, "oracle xi* = {}", best.1);

        let eps = 1e-9;
        let strictness = AffineLmi {
            label: "strictness",
            base: dmatrix![1.0 + eps],
            y_coeffs: vec![dmatrix![-1.0]],
            xi_coeff: dmatrix![0.0],
        };
        let lmi = AffineLmi {
            label: "time-update-lmi",
            base: dmatrix![0.25, 0.5; 0.5, 1.0],
            y_coeffs: vec![dmatrix![-0.25, 0.0; 0.0, 0.0]],
            xi_coeff: dmatrix![0.25, 0.0; 0.0, -1.0],
        };
        let p: SdpProblem<f64> = SdpProblem {
            n: 1,
            objective: dmatrix![0.25],
            constraints: vec![strictness, lmi],
            strictness_margin: eps,
        };
        let sol = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(sol.status, SdpStatus::Optimal);
        assert!(
            (sol.y_star[(0, 0)] - 4.0).abs() < 1e-5,
            "Y* = {}",
            sol.y_star[(0, 0)]
        );
        assert!((sol.xi_star - 2.0).abs() < 1e-5, "xi* = {}", sol.xi_star);
        assert!(
            (sol.objective_value - 1.0).abs() < 1e-5,
            "objective = {}",
            sol.objective_value
        );
        let cert = check_solution(&p, &sol, 1e-8);
        assert!(cert.pass, "certificate eigs: {:?}", cert.constraint_max_eigs);
    }

    /// Same problem, same settings → objective values agree to 1e-9.
    #[test]
    fn deterministic_repeat_solves() {
        let c = AffineLmi {
            label: "one-minus-y",
            base: dmatrix![1.0],
            y_coeffs: vec![dmatrix![-1.0]],
            xi_coeff: dmatrix![0.0],
        };
        let p = scalar_problem(vec![c], 2.5);
        let a = solve(&p, &SdpSettings::default()).unwrap();
        let b = solve(&p, &SdpSettings::default()).unwrap();
        assert_eq!(a.objective_value, b.objective_value);
        assert_eq!(a.y_star, b.y_star);
    }
}
