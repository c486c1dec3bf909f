//! Per-entry covariance bounds across time and measurement updates, and
//! their propagation as entrywise intervals.
//!
//! For an entry selector Z the time-update bound solves
//!
//! ```text
//! min  trace(A P̂⁺ Aᵀ Y)   over  Y ∈ Sⁿ, ξ ≥ 0
//! s.t. Z − Y ⪯ −ε·I
//!      [ Aᵀ(Z−Y)A   AᵀZB_p ]
//!      [ B_pᵀZA    B_pᵀZB_p ] + ξ·M ⪯ 0
//! ```
//!
//! and certifies `trace(P⁻_{k+1} Z) ≤ trace(B_w Q B_wᵀ Z) + trace(A P⁺_k Aᵀ Y*)`.
//! The measurement-update bound solves
//!
//! ```text
//! min  trace(P̂⁻ Y)   over  Y ∈ Sⁿ, ξ ≥ 0
//! s.t. [ −Y    HᵀKᵀZKB_ρ − ZKB_ρ ]
//!      [  ∗      B_ρᵀKᵀZKB_ρ     ] + ξ·M ⪯ 0
//! ```
//!
//! certifying `trace(P⁺ Z) ≤ trace(P⁻ (I−KH)ᵀZ(I−KH)) + trace(K B_v R B_vᵀ Kᵀ Z)
//! + trace(P⁻ Y*)`.
//!
//! Because the true covariance is only known as an entrywise interval after
//! the first nonlinear step, every term linear in it is bounded through
//! [`worst_case_linear_functional`], which is exact for the entrywise box.
//! Any feasible Y yields a valid bound; the interval midpoint is used in
//! the objective purely as a tightness heuristic. Lower bounds come from the
//! negated selector; the no-nonlinearity case short-circuits to the exact
//! linear formulas with Y = Z (time) and Y = 0 (measurement).

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric_within, psd_project, symmetrize, trace_prod};
use crate::model::{DecomposedDynamics, DecomposedMeasurement};
use crate::qc::LiftedConstraint;
use crate::scalar::Scalar;
use crate::sdp::{
    check_solution, solve, sym_basis, sym_basis_matrix, AffineLmi, SdpProblem, SdpSettings,
    SdpSolution, SdpStatus,
};
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::time::Instant;

/// Filter phase an interval belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Prior,
    Posterior,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Prior => "prior",
            Phase::Posterior => "posterior",
        }
    }
}

/// Bound orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor<S: Scalar>(self) -> S {
        match self {
            Sign::Plus => S::one(),
            Sign::Minus => -S::one(),
        }
    }
}

/// What a selector matrix picks out of a symmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    /// ±(½·e_i e_jᵀ + ½·e_j e_iᵀ), 1-based indices: trace(P·Z) = ±P_ij.
    Entry { i: usize, j: usize, sign: Sign },
    /// ±identity: trace(P·Z) = ±trace(P).
    Trace { sign: Sign },
    Custom,
}

/// The fixed symmetric matrix Z of one bound program.
#[derive(Debug, Clone)]
pub struct EntrySelector<S: Scalar> {
    pub matrix: DMatrix<S>,
    pub kind: SelectorKind,
}

/// Selector for the (i, j) entry, 1-based, i ≤ j ≤ n.
pub fn entry_selector<S: Scalar>(i: usize, j: usize, sign: Sign, n: usize) -> Result<EntrySelector<S>> {
    if i == 0 || j == 0 || i > j || j > n {
        return Err(Error::InvalidParameter(format!(
            "entry selector indices must satisfy 1 <= i <= j <= {n}, got ({i},{j})"
        )));
    }
    let half = S::from_f64_lossy(0.5);
    let mut z = DMatrix::zeros(n, n);
    if i == j {
        z[(i - 1, i - 1)] = S::one();
    } else {
        z[(i - 1, j - 1)] = half;
        z[(j - 1, i - 1)] = half;
    }
    z *= sign.factor::<S>();
    Ok(EntrySelector {
        matrix: z,
        kind: SelectorKind::Entry { i, j, sign },
    })
}

/// Selector ±identity for trace bounds.
pub fn trace_selector<S: Scalar>(sign: Sign, n: usize) -> EntrySelector<S> {
    EntrySelector {
        matrix: DMatrix::identity(n, n) * sign.factor::<S>(),
        kind: SelectorKind::Trace { sign },
    }
}

impl<S: Scalar> EntrySelector<S> {
    /// Arbitrary symmetric selector.
    pub fn custom(matrix: DMatrix<S>) -> Result<Self> {
        if !is_symmetric_within(&matrix, S::from_f64_lossy(1e-12)) {
            return Err(Error::InvalidParameter("custom selector must be symmetric".into()));
        }
        Ok(EntrySelector {
            matrix,
            kind: SelectorKind::Custom,
        })
    }
}

/// Entrywise interval enclosure of a covariance matrix.
#[derive(Debug, Clone)]
pub struct CovarianceInterval<S: Scalar> {
    lower: DMatrix<S>,
    upper: DMatrix<S>,
    pub step: usize,
    pub phase: Phase,
}

impl<S: Scalar> CovarianceInterval<S> {
    pub fn new(lower: DMatrix<S>, upper: DMatrix<S>, step: usize, phase: Phase) -> Result<Self> {
        let tol = S::from_f64_lossy(1e-9);
        if lower.nrows() != lower.ncols() || upper.nrows() != upper.ncols() {
            return Err(Error::InvalidInterval("bound matrices must be square".into()));
        }
        if lower.nrows() != upper.nrows() {
            return Err(Error::InvalidInterval("bound matrices differ in size".into()));
        }
        if !is_symmetric_within(&lower, tol) || !is_symmetric_within(&upper, tol) {
            return Err(Error::InvalidInterval("bound matrices must be symmetric".into()));
        }
        for i in 0..lower.nrows() {
            for j in 0..lower.ncols() {
                if lower[(i, j)] > upper[(i, j)] {
                    return Err(Error::InvalidInterval(format!(
                        "lower > upper at entry ({i},{j})"
                    )));
                }
            }
            if upper[(i, i)] < S::zero() {
                return Err(Error::InvalidInterval(format!(
                    "upper diagonal entry ({i},{i}) is negative"
                )));
            }
        }
        Ok(CovarianceInterval {
            lower: symmetrize(&lower),
            upper: symmetrize(&upper),
            step,
            phase,
        })
    }

    /// Zero-width interval around a known covariance.
    pub fn exact(p: &DMatrix<S>, step: usize, phase: Phase) -> Result<Self> {
        Self::new(p.clone(), p.clone(), step, phase)
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<S> {
        &self.lower
    }

    pub fn upper(&self) -> &DMatrix<S> {
        &self.upper
    }

    pub fn midpoint(&self) -> DMatrix<S> {
        (&self.lower + &self.upper) * S::from_f64_lossy(0.5)
    }

    pub fn half_width(&self) -> DMatrix<S> {
        (&self.upper - &self.lower) * S::from_f64_lossy(0.5)
    }

    /// Whether a concrete symmetric matrix lies inside entrywise.
    pub fn contains(&self, p: &DMatrix<S>, slack: S) -> bool {
        if p.nrows() != self.dim() || p.ncols() != self.dim() {
            return false;
        }
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                if p[(i, j)] < self.lower[(i, j)] - slack || p[(i, j)] > self.upper[(i, j)] + slack
                {
                    return false;
                }
            }
        }
        true
    }
}

/// Exact maximum of trace(C·P) over symmetric P with L ≤ P ≤ U entrywise:
/// each entry independently sits at U where C is positive and at L where it
/// is negative.
pub fn worst_case_linear_functional<S: Scalar>(
    c: &DMatrix<S>,
    interval: &CovarianceInterval<S>,
) -> Result<S> {
    let n = interval.dim();
    if c.nrows() != n || c.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "worst_case_linear_functional",
            detail: format!("C is {}x{}, interval dim {n}", c.nrows(), c.ncols()),
        });
    }
    if !is_symmetric_within(c, S::from_f64_lossy(1e-9)) {
        return Err(Error::InvalidParameter(
            "worst-case functional needs a symmetric C".into(),
        ));
    }
    let mut acc = S::zero();
    for i in 0..n {
        for j in 0..n {
            let cij = c[(i, j)];
            acc += if cij > S::zero() {
                cij * interval.upper[(i, j)]
            } else {
                cij * interval.lower[(i, j)]
            };
        }
    }
    Ok(acc)
}

/// Time-update bound right-hand side at explicit (Y, Z): trace(B_w Q B_wᵀ Z)
/// + trace(A P Aᵀ Y). With Y = Z = I this is the Stein recursion's trace.
pub fn time_update_rhs<S: Scalar>(
    a: &DMatrix<S>,
    b_w: &DMatrix<S>,
    q: &DMatrix<S>,
    p: &DMatrix<S>,
    y: &DMatrix<S>,
    z: &DMatrix<S>,
) -> S {
    let noise = b_w * q * b_w.transpose();
    trace_prod(&noise, z) + trace_prod(&(a * p * a.transpose()), y)
}

/// Solver knobs for the bound programs.
#[derive(Debug, Clone, Copy)]
pub struct BoundSettings<S: Scalar> {
    pub sdp: SdpSettings<S>,
    /// Margin ε replacing the strict inequality Z − Y < 0.
    pub strictness: S,
    /// Residual tolerance every used solution must certify at.
    pub certificate_tol: S,
}

impl<S: Scalar> Default for BoundSettings<S> {
    fn default() -> Self {
        BoundSettings {
            sdp: SdpSettings::default(),
            strictness: S::from_f64_lossy(1e-9),
            certificate_tol: S::from_f64_lossy(1e-7),
        }
    }
}

/// One certified bound value together with its solver evidence.
#[derive(Debug, Clone)]
pub struct BoundOutcome<S: Scalar> {
    /// Certified upper bound on trace(P·Z) for the requested selector.
    pub value: S,
    /// None on the exact linear path (no SDP was needed).
    pub solution: Option<SdpSolution<S>>,
    /// Largest certificate residual eigenvalue of the used solution.
    pub certificate_max_eig: Option<S>,
    pub solve_time_ms: f64,
}

fn selector_coords<S: Scalar>(selector: &EntrySelector<S>) -> (usize, usize) {
    match selector.kind {
        SelectorKind::Entry { i, j, .. } => (i, j),
        _ => (0, 0),
    }
}

fn bound_unavailable<S: Scalar>(
    selector: &EntrySelector<S>,
    phase: Phase,
    status: SdpStatus,
) -> Error {
    let (i, j) = selector_coords(selector);
    Error::BoundUnavailable {
        step: None,
        phase: Some(phase.as_str()),
        i,
        j,
        status: status.as_str(),
    }
}

/// Build the time-update constraint set for a given Z.
fn time_update_lmis<S: Scalar>(
    dynamics: &DecomposedDynamics<S>,
    m: &DMatrix<S>,
    z: &DMatrix<S>,
    eps: S,
) -> Vec<AffineLmi<S>> {
    let n = dynamics.state_dim();
    let n_p = dynamics.nonlinearity_dim();
    let a = &dynamics.a;
    let b_p = &dynamics.b_p;
    let basis = sym_basis(n);

    // Strictness: Z − Y + ε·I ⪯ 0.
    let strict = AffineLmi {
        label: "strictness",
        base: z + DMatrix::identity(n, n) * eps,
        y_coeffs: basis
            .iter()
            .map(|&(i, j)| -sym_basis_matrix::<S>(n, i, j))
            .collect(),
        xi_coeff: DMatrix::zeros(n, n),
    };

    // Main block LMI.
    let d = n + n_p;
    let mut base = DMatrix::zeros(d, d);
    let azb = a.transpose() * z * b_p;
    base.view_mut((0, 0), (n, n))
        .copy_from(&(a.transpose() * z * a));
    base.view_mut((0, n), (n, n_p)).copy_from(&azb);
    base.view_mut((n, 0), (n_p, n)).copy_from(&azb.transpose());
    base.view_mut((n, n), (n_p, n_p))
        .copy_from(&(b_p.transpose() * z * b_p));

    let y_coeffs = basis
        .iter()
        .map(|&(i, j)| {
            let mut blk = DMatrix::zeros(d, d);
            let e = sym_basis_matrix::<S>(n, i, j);
            blk.view_mut((0, 0), (n, n))
                .copy_from(&(-(a.transpose() * e * a)));
            blk
        })
        .collect();

    let main = AffineLmi {
        label: "time-update-lmi",
        base: symmetrize(&base),
        y_coeffs,
        xi_coeff: m.clone(),
    };

    vec![strict, main]
}

/// Build the measurement-update constraint set for a given Z and gain K.
fn measurement_update_lmis<S: Scalar>(
    meas: &DecomposedMeasurement<S>,
    m: &DMatrix<S>,
    k_gain: &DMatrix<S>,
    z: &DMatrix<S>,
) -> Vec<AffineLmi<S>> {
    let n = meas.state_dim();
    let n_rho = meas.nonlinearity_dim();
    let h = &meas.h;
    let b_rho = &meas.b_rho;
    let basis = sym_basis(n);

    let d = n + n_rho;
    let kzk = k_gain.transpose() * z * k_gain;
    let off = h.transpose() * &kzk * b_rho - z * k_gain * b_rho;
    let corner = b_rho.transpose() * &kzk * b_rho;

    let mut base = DMatrix::zeros(d, d);
    base.view_mut((0, n), (n, n_rho)).copy_from(&off);
    base.view_mut((n, 0), (n_rho, n)).copy_from(&off.transpose());
    base.view_mut((n, n), (n_rho, n_rho)).copy_from(&corner);

    let y_coeffs = basis
        .iter()
        .map(|&(i, j)| {
            let mut blk = DMatrix::zeros(d, d);
            blk.view_mut((0, 0), (n, n))
                .copy_from(&(-sym_basis_matrix::<S>(n, i, j)));
            blk
        })
        .collect();

    vec![AffineLmi {
        label: "measurement-update-lmi",
        base: symmetrize(&base),
        y_coeffs,
        xi_coeff: m.clone(),
    }]
}

fn solve_certified<S: Scalar>(
    problem: &SdpProblem<S>,
    selector: &EntrySelector<S>,
    phase: Phase,
    settings: &BoundSettings<S>,
) -> Result<(SdpSolution<S>, S)> {
    let sol = solve(problem, &settings.sdp)?;
    if sol.status != SdpStatus::Optimal {
        return Err(bound_unavailable(selector, phase, sol.status));
    }
    let cert = check_solution(problem, &sol, settings.certificate_tol);
    if !cert.pass {
        return Err(bound_unavailable(selector, phase, SdpStatus::NumericalFailure));
    }
    let mut worst = -S::one();
    for &e in &cert.constraint_max_eigs {
        if e > worst {
            worst = e;
        }
    }
    Ok((sol, worst))
}

/// Certified upper bound on trace(P⁻_{k+1}·Z) across one time update.
pub fn time_update_bound<S: Scalar>(
    dynamics: &DecomposedDynamics<S>,
    lifted: Option<&LiftedConstraint<S>>,
    p_plus: &CovarianceInterval<S>,
    q: &DMatrix<S>,
    selector: &EntrySelector<S>,
    settings: &BoundSettings<S>,
) -> Result<BoundOutcome<S>> {
    let start = Instant::now();
    let n = dynamics.state_dim();
    let n_p = dynamics.nonlinearity_dim();
    if p_plus.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "time_update_bound",
            detail: format!("interval dim {} vs state dim {n}", p_plus.dim()),
        });
    }
    if p_plus.phase != Phase::Posterior {
        return Err(Error::InvalidInterval(
            "time update consumes a posterior interval".into(),
        ));
    }
    let z = &selector.matrix;
    let noise = trace_prod(&(&dynamics.b_w * q * dynamics.b_w.transpose()), z);

    if n_p == 0 {
        // Linear step: the bound RHS with Y = Z reproduces the exact Stein
        // recursion entry.
        let c = symmetrize(&(dynamics.a.transpose() * z * &dynamics.a));
        let value = noise + worst_case_linear_functional(&c, p_plus)?;
        return Ok(BoundOutcome {
            value,
            solution: None,
            certificate_max_eig: None,
            solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    let lifted = lifted.ok_or_else(|| {
        Error::Config("dynamics nonlinearity present but no quadratic constraint supplied".into())
    })?;
    if lifted.m.nrows() != n + n_p {
        return Err(Error::DimensionMismatch {
            context: "time_update_bound",
            detail: format!("lifted constraint dim {} vs n+n_p = {}", lifted.m.nrows(), n + n_p),
        });
    }

    let p_hat = psd_project(&p_plus.midpoint());
    let objective = symmetrize(&(&dynamics.a * p_hat * dynamics.a.transpose()));
    let problem = SdpProblem {
        n,
        objective,
        constraints: time_update_lmis(dynamics, &lifted.m, z, settings.strictness),
        strictness_margin: settings.strictness,
    };
    let (sol, cert_eig) = solve_certified(&problem, selector, Phase::Prior, settings)?;

    let c = symmetrize(&(dynamics.a.transpose() * &sol.y_star * &dynamics.a));
    let value = noise + worst_case_linear_functional(&c, p_plus)?;
    Ok(BoundOutcome {
        value,
        solution: Some(sol),
        certificate_max_eig: Some(cert_eig),
        solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Certified upper bound on trace(P⁺·Z) across one measurement update with
/// the supplied gain.
pub fn measurement_update_bound<S: Scalar>(
    meas: &DecomposedMeasurement<S>,
    lifted: Option<&LiftedConstraint<S>>,
    k_gain: &DMatrix<S>,
    p_minus: &CovarianceInterval<S>,
    r: &DMatrix<S>,
    selector: &EntrySelector<S>,
    settings: &BoundSettings<S>,
) -> Result<BoundOutcome<S>> {
    let start = Instant::now();
    let n = meas.state_dim();
    let n_rho = meas.nonlinearity_dim();
    if p_minus.dim() != n {
        return Err(Error::DimensionMismatch {
            context: "measurement_update_bound",
            detail: format!("interval dim {} vs state dim {n}", p_minus.dim()),
        });
    }
    if p_minus.phase != Phase::Prior {
        return Err(Error::InvalidInterval(
            "measurement update consumes a prior interval".into(),
        ));
    }
    let z = &selector.matrix;

    let ikh = DMatrix::identity(n, n) - k_gain * &meas.h;
    let linear_part = symmetrize(&(ikh.transpose() * z * &ikh));
    let noise = trace_prod(
        &(k_gain * &meas.b_v * r * meas.b_v.transpose() * k_gain.transpose()),
        z,
    );
    let base_value = worst_case_linear_functional(&linear_part, p_minus)? + noise;

    if n_rho == 0 {
        // Linear measurement: Y = 0 makes the bound the exact update.
        return Ok(BoundOutcome {
            value: base_value,
            solution: None,
            certificate_max_eig: None,
            solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }

    let lifted = lifted.ok_or_else(|| {
        Error::Config("measurement nonlinearity present but no quadratic constraint supplied".into())
    })?;
    if lifted.m.nrows() != n + n_rho {
        return Err(Error::DimensionMismatch {
            context: "measurement_update_bound",
            detail: format!(
                "lifted constraint dim {} vs n+n_rho = {}",
                lifted.m.nrows(),
                n + n_rho
            ),
        });
    }

    let objective = psd_project(&p_minus.midpoint());
    let problem = SdpProblem {
        n,
        objective,
        constraints: measurement_update_lmis(meas, &lifted.m, k_gain, z),
        strictness_margin: S::zero(),
    };
    let (sol, cert_eig) = solve_certified(&problem, selector, Phase::Posterior, settings)?;

    let value = base_value + worst_case_linear_functional(&sol.y_star, p_minus)?;
    Ok(BoundOutcome {
        value,
        solution: Some(sol),
        certificate_max_eig: Some(cert_eig),
        solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Diagnostics for one propagated entry (1-based indices).
#[derive(Debug, Clone)]
pub struct EntryDiagnostics {
    pub i: usize,
    pub j: usize,
    pub lower: f64,
    pub upper: f64,
    /// "exact" on the linear path, otherwise the solver status.
    pub solver_status: &'static str,
    /// Multiplier of the upper-bound solve, when an SDP ran.
    pub xi_star: Option<f64>,
    /// Worst certificate residual among the two solves.
    pub certificate_max_eig: Option<f64>,
    pub solve_time_ms: f64,
}

/// A propagated interval plus per-entry solver diagnostics.
#[derive(Debug, Clone)]
pub struct Propagation<S: Scalar> {
    pub interval: CovarianceInterval<S>,
    pub entries: Vec<EntryDiagnostics>,
}

enum UpdateKind<'a, S: Scalar> {
    Time {
        dynamics: &'a DecomposedDynamics<S>,
        q: &'a DMatrix<S>,
    },
    Measurement {
        meas: &'a DecomposedMeasurement<S>,
        k_gain: &'a DMatrix<S>,
        r: &'a DMatrix<S>,
    },
}

fn propagate<S: Scalar>(
    kind: &UpdateKind<'_, S>,
    lifted: Option<&LiftedConstraint<S>>,
    source: &CovarianceInterval<S>,
    settings: &BoundSettings<S>,
) -> Result<Propagation<S>> {
    let n = source.dim();
    let tasks: Vec<(usize, usize)> = (1..=n)
        .flat_map(|i| (i..=n).map(move |j| (i, j)))
        .collect();

    let run = |sel: &EntrySelector<S>| -> Result<BoundOutcome<S>> {
        match kind {
            UpdateKind::Time { dynamics, q } => {
                time_update_bound(dynamics, lifted, source, q, sel, settings)
            }
            UpdateKind::Measurement { meas, k_gain, r } => {
                measurement_update_bound(meas, lifted, k_gain, source, r, sel, settings)
            }
        }
    };

    let per_entry: Vec<Result<(BoundOutcome<S>, BoundOutcome<S>)>> = tasks
        .par_iter()
        .map(|&(i, j)| {
            let up = run(&entry_selector(i, j, Sign::Plus, n)?)?;
            let down = run(&entry_selector(i, j, Sign::Minus, n)?)?;
            Ok((up, down))
        })
        .collect();

    let (step, phase) = match kind {
        UpdateKind::Time { .. } => (source.step + 1, Phase::Prior),
        UpdateKind::Measurement { .. } => (source.step, Phase::Posterior),
    };

    let mut lower = DMatrix::zeros(n, n);
    let mut upper = DMatrix::zeros(n, n);
    let mut entries = Vec::with_capacity(tasks.len());
    for (&(i, j), outcome) in tasks.iter().zip(per_entry) {
        let (up, down) = outcome?;
        let mut u = up.value;
        let mut l = -down.value;
        if l > u {
            // Certified bounds can only cross by numerical slack; wider
            // crossings mean an invalid pipeline.
            let slack = S::from_f64_lossy(1e-9) * (S::one() + l.abs() + u.abs());
            if l - u > slack {
                return Err(Error::InvalidInterval(format!(
                    "lower bound {} above upper bound {} at entry ({i},{j})",
                    l.to_f64_lossy(),
                    u.to_f64_lossy()
                )));
            }
            let mid = (l + u) * S::from_f64_lossy(0.5);
            l = mid;
            u = mid;
        }
        lower[(i - 1, j - 1)] = l;
        lower[(j - 1, i - 1)] = l;
        upper[(i - 1, j - 1)] = u;
        upper[(j - 1, i - 1)] = u;

        let status = match (&up.solution, &down.solution) {
            (None, None) => "exact",
            _ => "optimal",
        };
        let cert = match (up.certificate_max_eig, down.certificate_max_eig) {
            (Some(a), Some(b)) => Some(a.max(b).to_f64_lossy()),
            (Some(a), None) | (None, Some(a)) => Some(a.to_f64_lossy()),
            (None, None) => None,
        };
        entries.push(EntryDiagnostics {
            i,
            j,
            lower: l.to_f64_lossy(),
            upper: u.to_f64_lossy(),
            solver_status: status,
            xi_star: up.solution.as_ref().map(|s| s.xi_star.to_f64_lossy()),
            certificate_max_eig: cert,
            solve_time_ms: up.solve_time_ms + down.solve_time_ms,
        });
    }

    Ok(Propagation {
        interval: CovarianceInterval::new(lower, upper, step, phase)?,
        entries,
    })
}

/// Propagate a posterior interval through the time update (prior at k+1).
pub fn propagate_time_interval<S: Scalar>(
    dynamics: &DecomposedDynamics<S>,
    lifted: Option<&LiftedConstraint<S>>,
    p_plus: &CovarianceInterval<S>,
    q: &DMatrix<S>,
    settings: &BoundSettings<S>,
) -> Result<Propagation<S>> {
    propagate(&UpdateKind::Time { dynamics, q }, lifted, p_plus, settings)
}

/// Propagate a prior interval through the measurement update (posterior).
pub fn propagate_measurement_interval<S: Scalar>(
    meas: &DecomposedMeasurement<S>,
    lifted: Option<&LiftedConstraint<S>>,
    k_gain: &DMatrix<S>,
    p_minus: &CovarianceInterval<S>,
    r: &DMatrix<S>,
    settings: &BoundSettings<S>,
) -> Result<Propagation<S>> {
    propagate(
        &UpdateKind::Measurement { meas, k_gain, r },
        lifted,
        p_minus,
        settings,
    )
}

/// Trace bound across the time update: upper for `Sign::Plus`, lower for
/// `Sign::Minus` (Z = ±identity).
pub fn time_update_trace_bound<S: Scalar>(
    dynamics: &DecomposedDynamics<S>,
    lifted: Option<&LiftedConstraint<S>>,
    p_plus: &CovarianceInterval<S>,
    q: &DMatrix<S>,
    sign: Sign,
    settings: &BoundSettings<S>,
) -> Result<(S, BoundOutcome<S>)> {
    let sel = trace_selector(sign, dynamics.state_dim());
    let outcome = time_update_bound(dynamics, lifted, p_plus, q, &sel, settings)?;
    let value = match sign {
        Sign::Plus => outcome.value,
        Sign::Minus => -outcome.value,
    };
    Ok((value, outcome))
}

/// Trace bound across the measurement update.
pub fn measurement_update_trace_bound<S: Scalar>(
    meas: &DecomposedMeasurement<S>,
    lifted: Option<&LiftedConstraint<S>>,
    k_gain: &DMatrix<S>,
    p_minus: &CovarianceInterval<S>,
    r: &DMatrix<S>,
    sign: Sign,
    settings: &BoundSettings<S>,
) -> Result<(S, BoundOutcome<S>)> {
    let sel = trace_selector(sign, meas.state_dim());
    let outcome = measurement_update_bound(meas, lifted, k_gain, p_minus, r, &sel, settings)?;
    let value = match sign {
        Sign::Plus => outcome.value,
        Sign::Minus => -outcome.value,
    };
    Ok((value, outcome))
}

/// EXPERIMENTAL: collapse an interval to a single symmetric matrix by
/// inflating the midpoint diagonal with the Gershgorin radii of the
/// half-width matrix. Loewner-order dominance over the true covariance is
/// only checked empirically against the Monte Carlo oracle, never asserted.
pub fn assemble_psd_overbound<S: Scalar>(interval: &CovarianceInterval<S>) -> Result<DMatrix<S>> {
    let n = interval.dim();
    let w = interval.half_width();
    let mut out = interval.midpoint();
    for i in 0..n {
        let mut radius = S::zero();
        for j in 0..n {
            radius += w[(i, j)].abs();
        }
        out[(i, i)] += radius;
    }
    Ok(out)
}
