//! Dense log-barrier interior-point solver for the bound SDP family.
//!
//! The instances here are tiny (Y is at most ~6x6, so ≤ 22 scalar decision
//! variables; constraint blocks are ≤ ~12x12), which makes a classic
//! two-phase path-following scheme with damped Newton centering both simple
//! and accurate:
//!
//! * phase 1 minimizes the maximum constraint eigenvalue through a slack
//!   variable and exits as soon as a strictly interior point is found; a
//!   certified positive optimum means the instance is infeasible;
//! * phase 2 follows the central path `min t·cᵀx + φ(x)` with
//!   `φ(x) = −Σ_b log det(−F_b(x))`, multiplying `t` by `μ` after each
//!   centering until the barrier gap `ν/t` is below the target.
//!
//! Every iterate is strictly feasible, so the returned point satisfies all
//! constraints with margin regardless of how early the loop stops.
//!
//! The feasible set is intersected with the internal box |x_k| ≤ 1e8. This
//! keeps the analytic center well-defined when the objective has flat
//! directions (the box only restricts the set, so returned points remain
//! feasible for the caller's problem); instances feasible only outside the
//! box are reported infeasible.

use super::{sym_basis, SdpProblem, SdpSettings, SdpSolution, SdpStatus};
use crate::linalg::{max_abs, max_eigenvalue, symmetrize};
use crate::scalar::Scalar;
use nalgebra::{Cholesky, DMatrix, DVector};

/// Half-width of the internal variable box.
const VAR_BOX: f64 = 1e8;

fn machine_epsilon<S: Scalar>() -> S {
    let half = S::from_f64_lossy(0.5);
    let mut e = S::one();
    while S::one() + e * half != S::one() {
        e *= half;
    }
    e
}

struct CanonBlock<S: Scalar> {
    f0: DMatrix<S>,
    /// Sparse coefficient list: (variable index, symmetric matrix).
    coeffs: Vec<(usize, DMatrix<S>)>,
}

impl<S: Scalar> CanonBlock<S> {
    fn eval(&self, x: &DVector<S>) -> DMatrix<S> {
        let mut m = self.f0.clone();
        for (k, c) in &self.coeffs {
            let xv = x[*k];
            if xv != S::zero() {
                m += c * xv;
            }
        }
        m
    }

    /// Slack −F(x); positive definite iff x is strictly feasible for this block.
    fn slack(&self, x: &DVector<S>) -> DMatrix<S> {
        -self.eval(x)
    }
}

type ExitCheck<'a, S> = &'a dyn Fn(&DVector<S>) -> bool;

struct Canonical<S: Scalar> {
    m: usize,
    c: DVector<S>,
    blocks: Vec<CanonBlock<S>>,
    nu: S,
}

fn canonicalize<S: Scalar>(problem: &SdpProblem<S>) -> Canonical<S> {
    let n = problem.n;
    let basis = sym_basis(n);
    let m_y = basis.len();
    let m = m_y + 1; // + ξ

    // Objective: trace(G·Y) in basis coordinates; ξ has no objective weight.
    let two = S::from_f64_lossy(2.0);
    let mut c = DVector::zeros(m);
    for (k, &(i, j)) in basis.iter().enumerate() {
        c[k] = if i == j {
            problem.objective[(i, i)]
        } else {
            two * problem.objective[(i, j)]
        };
    }

    let mut blocks = Vec::new();
    for lmi in &problem.constraints {
        let mut coeffs = Vec::new();
        for (k, yc) in lmi.y_coeffs.iter().enumerate() {
            if max_abs(yc) > S::zero() {
                coeffs.push((k, symmetrize(yc)));
            }
        }
        if max_abs(&lmi.xi_coeff) > S::zero() {
            coeffs.push((m_y, symmetrize(&lmi.xi_coeff)));
        }
        blocks.push(CanonBlock {
            f0: symmetrize(&lmi.base),
            coeffs,
        });
    }

    // Always-on ξ ≥ 0, encoded as −ξ ⪯ 0.
    blocks.push(CanonBlock {
        f0: DMatrix::zeros(1, 1),
        coeffs: vec![(m_y, DMatrix::from_element(1, 1, -S::one()))],
    });

    // Internal box guards ±x_k ≤ VAR_BOX.
    let b = S::from_f64_lossy(VAR_BOX);
    for k in 0..m {
        blocks.push(CanonBlock {
            f0: DMatrix::from_element(1, 1, -b),
            coeffs: vec![(k, DMatrix::from_element(1, 1, S::one()))],
        });
        blocks.push(CanonBlock {
            f0: DMatrix::from_element(1, 1, -b),
            coeffs: vec![(k, DMatrix::from_element(1, 1, -S::one()))],
        });
    }

    // Per-block scaling: F ⪯ 0 is invariant under positive scaling, and
    // unit-scale blocks keep the Newton system well conditioned.
    for blk in &mut blocks {
        let mut scale = max_abs(&blk.f0);
        for (_, cmat) in &blk.coeffs {
            let a = max_abs(cmat);
            if a > scale {
                scale = a;
            }
        }
        if scale > S::one() {
            let inv = S::one() / scale;
            blk.f0 *= inv;
            for (_, cmat) in &mut blk.coeffs {
                *cmat *= inv;
            }
        }
    }

    let mut nu = 0usize;
    for blk in &blocks {
        nu += blk.f0.nrows();
    }

    Canonical {
        m,
        c,
        blocks,
        nu: S::from_f64_lossy(nu as f64),
    }
}

/// Cholesky factors of every slack block, or None if any is not PD.
fn factor_slacks<S: Scalar>(
    canon: &Canonical<S>,
    x: &DVector<S>,
) -> Option<Vec<Cholesky<S, nalgebra::Dyn>>> {
    let mut out = Vec::with_capacity(canon.blocks.len());
    for blk in &canon.blocks {
        let s = symmetrize(&blk.slack(x));
        out.push(s.cholesky()?);
    }
    Some(out)
}

fn log_det<S: Scalar>(chol: &Cholesky<S, nalgebra::Dyn>) -> S {
    let l = chol.l_dirty();
    let mut acc = S::zero();
    for i in 0..l.nrows() {
        acc += l[(i, i)].ln();
    }
    acc + acc
}

/// Barrier potential t·cᵀx + φ(x); None when x is not strictly feasible.
fn potential<S: Scalar>(canon: &Canonical<S>, x: &DVector<S>, t: S) -> Option<S> {
    let chols = factor_slacks(canon, x)?;
    let mut fi = t * canon.c.dot(x);
    for ch in &chols {
        fi -= log_det(ch);
    }
    Some(fi)
}

enum CenterOutcome<S: Scalar> {
    Centered(DVector<S>),
    EarlyExit(DVector<S>),
    OutOfBudget,
    Stalled(DVector<S>),
    LostFeasibility,
}

/// Damped Newton minimization of t·cᵀx + φ(x) from a strictly feasible x.
///
/// Returns `Centered` both when the Newton decrement is below tolerance and
/// when progress hits the floating-point floor near the center (the
/// decrement is affine-invariant, so a small decrement with no achievable
/// descent means x is the best representable center).
fn center<S: Scalar>(
    canon: &Canonical<S>,
    mut x: DVector<S>,
    t: S,
    budget: &mut usize,
    early_exit: Option<ExitCheck<'_, S>>,
) -> CenterOutcome<S> {
    let m = canon.m;
    let cent_tol = S::from_f64_lossy(1e-10);
    let armijo = S::from_f64_lossy(0.25);
    let half = S::from_f64_lossy(0.5);
    let stall_decrement = S::from_f64_lossy(4.0);
    let rel_floor = machine_epsilon::<S>() * S::from_f64_lossy(16.0);

    for _ in 0..200 {
        if *budget == 0 {
            return CenterOutcome::OutOfBudget;
        }
        let chols = match factor_slacks(canon, &x) {
            Some(c) => c,
            None => return CenterOutcome::LostFeasibility,
        };

        // Gradient and Hessian of the potential.
        let mut grad = &canon.c * t;
        let mut hess = DMatrix::<S>::zeros(m, m);
        for (blk, ch) in canon.blocks.iter().zip(chols.iter()) {
            let sinv = ch.inverse();
            // T_k = S⁻¹ F_k for each present coefficient.
            let tks: Vec<(usize, DMatrix<S>)> = blk
                .coeffs
                .iter()
                .map(|(k, cm)| (*k, &sinv * cm))
                .collect();
            for (k, tk) in &tks {
                grad[*k] += tk.trace();
            }
            for (a, (ka, ta)) in tks.iter().enumerate() {
                for (kb, tb) in &tks[a..] {
                    let v = crate::linalg::trace_prod(ta, tb);
                    hess[(*ka, *kb)] += v;
                    if ka != kb {
                        hess[(*kb, *ka)] += v;
                    }
                }
            }
        }

        let dir = match solve_newton(&hess, &grad) {
            Some(d) => d,
            None => return CenterOutcome::Stalled(x),
        };
        let decrement2 = dir.dot(&(&hess * &dir));
        if decrement2 <= cent_tol + cent_tol {
            return CenterOutcome::Centered(x);
        }

        // Backtracking line search keeping strict feasibility.
        let fi0 = match potential(canon, &x, t) {
            Some(f) => f,
            None => return CenterOutcome::LostFeasibility,
        };
        let slope = grad.dot(&dir); // negative
        let mut alpha = S::one();
        let mut accepted = false;
        let mut fi_new = fi0;
        for _ in 0..60 {
            let cand = &x + &dir * alpha;
            if let Some(fi) = potential(canon, &cand, t) {
                if fi <= fi0 + armijo * alpha * slope {
                    x = cand;
                    accepted = true;
                    fi_new = fi;
                    break;
                }
            }
            alpha *= half;
        }
        *budget -= 1;
        if !accepted {
            // No representable descent along a Newton direction: either we
            // are at the precision floor of this center (small decrement) or
            // something is genuinely wrong (large decrement).
            return if decrement2 < stall_decrement {
                CenterOutcome::Centered(x)
            } else {
                CenterOutcome::Stalled(x)
            };
        }
        if let Some(exit) = early_exit {
            if exit(&x) {
                return CenterOutcome::EarlyExit(x);
            }
        }
        // Progress below the floating-point floor: accept as centered.
        if (fi0 - fi_new).abs() <= rel_floor * (S::one() + fi_new.abs())
            && decrement2 < stall_decrement
        {
            return CenterOutcome::Centered(x);
        }
    }
    CenterOutcome::Stalled(x)
}

fn solve_newton<S: Scalar>(hess: &DMatrix<S>, grad: &DVector<S>) -> Option<DVector<S>> {
    let m = hess.nrows();
    let mut jitter = S::zero();
    let trace_scale = (hess.trace() / S::from_f64_lossy(m as f64)).abs() + S::from_f64_lossy(1e-30);
    for attempt in 0..6 {
        let mut h = hess.clone();
        if attempt > 0 {
            jitter = if jitter == S::zero() {
                trace_scale * S::from_f64_lossy(1e-14)
            } else {
                jitter * S::from_f64_lossy(100.0)
            };
            for i in 0..m {
                h[(i, i)] += jitter;
            }
        }
        if let Some(ch) = h.cholesky() {
            let d = ch.solve(&(-grad));
            if d.iter().all(|v| v.is_finite()) {
                return Some(d);
            }
        }
    }
    // Eigenvalue-floored pseudo-solve as a last resort.
    let eig = symmetrize(hess).symmetric_eigen();
    let mut max_ev = S::zero();
    for &e in eig.eigenvalues.iter() {
        if e > max_ev {
            max_ev = e;
        }
    }
    if max_ev <= S::zero() {
        return None;
    }
    let floor = max_ev * S::from_f64_lossy(1e-12);
    let qt_g = eig.eigenvectors.transpose() * (-grad);
    let mut scaled = qt_g;
    for (i, v) in scaled.iter_mut().enumerate() {
        let e = if eig.eigenvalues[i] > floor {
            eig.eigenvalues[i]
        } else {
            floor
        };
        *v /= e;
    }
    let d = &eig.eigenvectors * scaled;
    if d.iter().all(|v| v.is_finite()) {
        Some(d)
    } else {
        None
    }
}

enum Phase1Outcome<S: Scalar> {
    Interior(DVector<S>),
    Infeasible,
    Failure,
}

/// Find a strictly interior point by minimizing the uniform slack s in
/// F_b(x) − s·I ⪯ 0, exiting as soon as s is comfortably negative.
fn phase1<S: Scalar>(canon: &Canonical<S>, settings: &SdpSettings<S>, budget: &mut usize) -> Phase1Outcome<S> {
    let m = canon.m;
    // Augmented problem over (x, s).
    let mut blocks = Vec::with_capacity(canon.blocks.len());
    let mut s0 = S::from_f64_lossy(f64::NEG_INFINITY);
    for blk in &canon.blocks {
        let d = blk.f0.nrows();
        let mut coeffs = blk.coeffs.clone();
        coeffs.push((m, -DMatrix::<S>::identity(d, d)));
        blocks.push(CanonBlock {
            f0: blk.f0.clone(),
            coeffs,
        });
        let e = max_eigenvalue(&blk.f0);
        if e > s0 {
            s0 = e;
        }
    }
    let mut c = DVector::zeros(m + 1);
    c[m] = S::one();
    let mut nu = 0usize;
    for blk in &blocks {
        nu += blk.f0.nrows();
    }
    let aug = Canonical {
        m: m + 1,
        c,
        blocks,
        nu: S::from_f64_lossy(nu as f64),
    };

    let mut z = DVector::zeros(m + 1);
    z[m] = s0 + S::one();
    let scale = S::one() + s0.abs();
    // Early exit: any point this far inside is a comfortable phase-2 start.
    let exit_margin = S::from_f64_lossy(1e-2) * scale;
    let exit = move |p: &DVector<S>| p[m] < -exit_margin;
    // Classification threshold: once the barrier gap certifies the optimal
    // slack this precisely, a non-negative-looking optimum means infeasible.
    let feas_eps = S::from_f64_lossy(1e-9) * scale;

    let mut t = S::one() / scale;
    for _ in 0..200 {
        match center(&aug, z, t, budget, Some(&exit)) {
            CenterOutcome::EarlyExit(p) => {
                return Phase1Outcome::Interior(p.rows(0, m).into_owned());
            }
            CenterOutcome::Centered(p) => {
                if exit(&p) {
                    return Phase1Outcome::Interior(p.rows(0, m).into_owned());
                }
                // Certified lower bound on the optimal slack: s* ≥ s − ν/t.
                let gap = aug.nu / t;
                if gap <= feas_eps {
                    return if p[m] <= -(gap + gap) {
                        // Strictly feasible, just with a thin margin.
                        Phase1Outcome::Interior(p.rows(0, m).into_owned())
                    } else {
                        Phase1Outcome::Infeasible
                    };
                }
                z = p;
            }
            CenterOutcome::Stalled(p) => {
                if p[m] < -feas_eps {
                    return Phase1Outcome::Interior(p.rows(0, m).into_owned());
                }
                return Phase1Outcome::Failure;
            }
            CenterOutcome::OutOfBudget | CenterOutcome::LostFeasibility => {
                return Phase1Outcome::Failure;
            }
        }
        t *= settings.barrier_mu;
    }
    Phase1Outcome::Failure
}

/// Path-follow the original objective from a strictly interior point.
/// Returns the final iterate, the gap bound ν/t certified at the last
/// successful centering, and whether the gap target was met.
fn phase2<S: Scalar>(
    canon: &Canonical<S>,
    mut x: DVector<S>,
    settings: &SdpSettings<S>,
    budget: &mut usize,
) -> Option<(DVector<S>, S, bool)> {
    let obj0 = canon.c.dot(&x).abs();
    let mut t = (canon.nu / (S::one() + obj0))
        .max(S::from_f64_lossy(1e-3))
        .min(S::from_f64_lossy(1e9));
    // Push at least this far past the requested gap; scaled by machine
    // precision so f32 instantiations terminate.
    let gap_floor = S::from_f64_lossy(1e-9).max(machine_epsilon::<S>() * S::from_f64_lossy(100.0));
    let target = settings.gap_tol.min(gap_floor);
    let mut certified_gap = S::from_f64_lossy(f64::INFINITY);
    let mut stalls = 0usize;
    for _ in 0..200 {
        match center(canon, x, t, budget, None) {
            CenterOutcome::Centered(p) => {
                x = p;
                certified_gap = canon.nu / t;
                stalls = 0;
            }
            CenterOutcome::Stalled(p) => {
                // Keep the gap bound of the last successful centering; two
                // consecutive true stalls mean the path cannot be followed
                // further in this precision.
                x = p;
                stalls += 1;
                if stalls >= 2 {
                    break;
                }
            }
            CenterOutcome::EarlyExit(_) => unreachable!("no early exit in phase 2"),
            CenterOutcome::OutOfBudget | CenterOutcome::LostFeasibility => {
                return None;
            }
        }
        let scale = S::one() + canon.c.dot(&x).abs();
        if certified_gap <= target * scale {
            return Some((x, certified_gap, true));
        }
        t *= settings.barrier_mu;
    }
    let scale = S::one() + canon.c.dot(&x).abs();
    let met = certified_gap <= target * scale;
    Some((x, certified_gap, met))
}

fn unpack<S: Scalar>(n: usize, x: &DVector<S>) -> (DMatrix<S>, S) {
    let basis = sym_basis(n);
    let mut y = DMatrix::zeros(n, n);
    for (k, &(i, j)) in basis.iter().enumerate() {
        y[(i, j)] = x[k];
        y[(j, i)] = x[k];
    }
    (y, x[basis.len()])
}

pub(super) fn solve_barrier<S: Scalar>(
    problem: &SdpProblem<S>,
    settings: &SdpSettings<S>,
) -> SdpSolution<S> {
    let canon = canonicalize(problem);
    let mut budget = settings.max_iterations;

    let fail = |status: SdpStatus, used: usize| SdpSolution {
        status,
        y_star: DMatrix::zeros(problem.n, problem.n),
        xi_star: S::zero(),
        objective_value: S::zero(),
        max_constraint_eig: S::zero(),
        duality_gap_bound: S::zero(),
        newton_iterations: used,
    };

    let interior = match phase1(&canon, settings, &mut budget) {
        Phase1Outcome::Interior(x) => x,
        Phase1Outcome::Infeasible => {
            return fail(SdpStatus::Infeasible, settings.max_iterations - budget)
        }
        Phase1Outcome::Failure => {
            return fail(SdpStatus::NumericalFailure, settings.max_iterations - budget)
        }
    };

    let (x, gap, gap_met) = match phase2(&canon, interior, settings, &mut budget) {
        Some(r) => r,
        None => return fail(SdpStatus::NumericalFailure, settings.max_iterations - budget),
    };
    if !gap_met {
        return fail(SdpStatus::NumericalFailure, settings.max_iterations - budget);
    }

    let (y_star, xi_star) = unpack(problem.n, &x);
    let objective_value = crate::linalg::trace_prod(&problem.objective, &y_star);

    // Residuals of the caller-visible constraints at the returned point.
    let mut max_eig = S::from_f64_lossy(f64::NEG_INFINITY);
    for cns in &problem.constraints {
        let e = max_eigenvalue(&symmetrize(&cns.evaluate(&y_star, xi_star)));
        if e > max_eig {
            max_eig = e;
        }
    }
    if problem.constraints.is_empty() {
        max_eig = S::zero();
    }

    if max_eig > settings.feasibility_tol || xi_star < -settings.feasibility_tol {
        return fail(SdpStatus::NumericalFailure, settings.max_iterations - budget);
    }

    SdpSolution {
        status: SdpStatus::Optimal,
        y_star,
        xi_star,
        objective_value,
        max_constraint_eig: max_eig,
        duality_gap_bound: gap,
        newton_iterations: settings.max_iterations - budget,
    }
}
