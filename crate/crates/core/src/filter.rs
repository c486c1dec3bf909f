//! EKF runtime with the certified bound pipeline attached.
//!
//! Every step runs the standard EKF (which supplies the gain; the bounds
//! never feed back into it) and, alongside it, propagates the entrywise
//! covariance interval through the time- and measurement-update bound
//! programs. Dynamics are linearized at the posterior estimate x̂_k, the
//! measurement at the predicted x̌_{k+1}; the measurement of step k+1 is
//! consumed by the step that produces state k+1.

use crate::bounds::{
    measurement_update_trace_bound, propagate_measurement_interval, propagate_time_interval,
    time_update_trace_bound, BoundSettings, CovarianceInterval, EntryDiagnostics, Phase,
    Propagation, Sign,
};
use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::model::{NonlinearSystem, StaticNonlinearity};
use crate::qc::{lift_qc, local_gain_estimate, norm_bound_qc, sector_bound_qc, LiftedConstraint,
    QuadraticConstraint, ValidityBox};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Filter state after step k.
#[derive(Debug, Clone)]
pub struct FilterState<S: Scalar> {
    /// A-priori estimate x̌_k.
    pub x_check: DVector<S>,
    /// A-posteriori estimate x̂_k.
    pub x_hat: DVector<S>,
    /// Nominal EKF prior covariance (only used to compute the gain).
    pub p_nominal_prior: DMatrix<S>,
    /// Nominal EKF posterior covariance.
    pub p_nominal: DMatrix<S>,
    /// Certified posterior interval; `None` after a recorded gap.
    pub interval: Option<CovarianceInterval<S>>,
    pub k: usize,
}

impl<S: Scalar> FilterState<S> {
    /// Initial state: estimate at the mean with known covariance P₀, so the
    /// interval starts at zero width.
    pub fn initial(mean: DVector<S>, p0: DMatrix<S>) -> Result<Self> {
        let interval = CovarianceInterval::exact(&symmetrize(&p0), 0, Phase::Posterior)?;
        Ok(FilterState {
            x_check: mean.clone(),
            x_hat: mean,
            p_nominal_prior: p0.clone(),
            p_nominal: p0,
            interval: Some(interval),
            k: 0,
        })
    }
}

/// Kalman gain K = P Hᵀ (H P Hᵀ + B_v R B_vᵀ)⁻¹.
///
/// A singular innovation with an exactly zero numerator P Hᵀ still has the
/// well-defined gain K = 0 (no prior uncertainty to correct); any other
/// singular innovation is an error.
pub fn ekf_gain<S: Scalar>(
    h: &DMatrix<S>,
    p_prior: &DMatrix<S>,
    r: &DMatrix<S>,
    b_v: &DMatrix<S>,
) -> Result<DMatrix<S>> {
    let numerator = p_prior * h.transpose();
    let innovation = h * p_prior * h.transpose() + b_v * r * b_v.transpose();
    match innovation.clone().try_inverse() {
        Some(inv) => Ok(numerator * inv),
        None if numerator.amax() == S::zero() => {
            Ok(DMatrix::zeros(p_prior.nrows(), h.nrows()))
        }
        None => Err(Error::Numerical("innovation covariance is singular".into())),
    }
}

/// P⁻ = A P⁺ Aᵀ + B_w Q B_wᵀ, symmetrized.
pub fn nominal_time_update<S: Scalar>(
    a: &DMatrix<S>,
    p_plus: &DMatrix<S>,
    b_w: &DMatrix<S>,
    q: &DMatrix<S>,
) -> DMatrix<S> {
    symmetrize(&(a * p_plus * a.transpose() + b_w * q * b_w.transpose()))
}

/// P⁺ = (I − K H) P⁻, symmetrized.
pub fn nominal_measurement_update<S: Scalar>(
    k_gain: &DMatrix<S>,
    h: &DMatrix<S>,
    p_minus: &DMatrix<S>,
) -> DMatrix<S> {
    let n = p_minus.nrows();
    symmetrize(&((DMatrix::identity(n, n) - k_gain * h) * p_minus))
}

/// Constraint family requested for one nonlinearity.
#[derive(Debug, Clone)]
pub enum QcKind<S: Scalar> {
    /// Norm bound; `gamma: None` estimates the local gain per step.
    Norm { gamma: Option<S> },
    /// Scalar sector [alpha, beta].
    Sector { alpha: S, beta: S },
}

/// Per-nonlinearity constraint configuration.
#[derive(Debug, Clone)]
pub struct QcSpec<S: Scalar> {
    pub kind: QcKind<S>,
    /// Validity box for the nonlinearity input; defaults to the
    /// system catalog's box when absent.
    pub validity: Option<ValidityBox<S>>,
    pub grid_density: usize,
}

impl<S: Scalar> Default for QcSpec<S> {
    fn default() -> Self {
        QcSpec {
            kind: QcKind::Norm { gamma: None },
            validity: None,
            grid_density: 50,
        }
    }
}

/// Per-step configuration of the bound pipeline.
#[derive(Debug, Clone)]
pub struct StepConfig<S: Scalar> {
    pub dynamics_qc: QcSpec<S>,
    pub measurement_qc: QcSpec<S>,
    pub bounds: BoundSettings<S>,
    /// Sigma multiplier for the validity-box excursion monitor.
    pub monitor_sigma: S,
    /// Record a gap instead of aborting when an entry bound is unavailable.
    pub continue_on_failure: bool,
}

impl<S: Scalar> Default for StepConfig<S> {
    fn default() -> Self {
        StepConfig {
            dynamics_qc: QcSpec::default(),
            measurement_qc: QcSpec::default(),
            bounds: BoundSettings::default(),
            monitor_sigma: S::from_f64_lossy(3.0),
            continue_on_failure: false,
        }
    }
}

/// Resolved constraint for one step: the lift used by the bound programs
/// plus the gamma that was applied (for diagnostics).
pub struct ResolvedQc<S: Scalar> {
    pub lifted: LiftedConstraint<S>,
    pub gamma: Option<f64>,
}

/// Turn a QC spec into the lifted constraint for one concrete nonlinearity
/// (auto-gamma runs the local gain estimate on `delta` over the box).
pub fn resolve_qc<S: Scalar>(
    spec: &QcSpec<S>,
    default_box: &ValidityBox<S>,
    selector: &DMatrix<S>,
    delta: &StaticNonlinearity<S>,
    input_dim: usize,
    output_dim: usize,
) -> Result<ResolvedQc<S>> {
    let validity = spec.validity.clone().unwrap_or_else(|| default_box.clone());
    if validity.dim() != input_dim {
        return Err(Error::Config(format!(
            "QC validity box dim {} does not match nonlinearity input dim {input_dim}",
            validity.dim()
        )));
    }
    let (qc, gamma): (QuadraticConstraint<S>, Option<f64>) = match &spec.kind {
        QcKind::Norm { gamma } => {
            let g = match gamma {
                Some(g) => *g,
                None => {
                    let est = local_gain_estimate(|b| delta(b), &validity, spec.grid_density)?;
                    // A numerically zero local gain still needs a valid
                    // constraint; fall back to a tiny positive one.
                    est.max(S::from_f64_lossy(1e-12))
                }
            };
            if g == S::zero() {
                // Deliberately-unsound configs may pin gamma to zero; encode
                // the degenerate Λ directly (norm_bound_qc rejects it).
                let d = input_dim + output_dim;
                let mut lambda = DMatrix::zeros(d, d);
                for i in input_dim..d {
                    lambda[(i, i)] = -S::one();
                }
                (
                    QuadraticConstraint::new(lambda, input_dim, output_dim, validity)?,
                    Some(0.0),
                )
            } else {
                (
                    norm_bound_qc(g, input_dim, output_dim, validity)?,
                    Some(g.to_f64_lossy()),
                )
            }
        }
        QcKind::Sector { alpha, beta } => {
            if input_dim != 1 || output_dim != 1 {
                return Err(Error::Config(
                    "sector constraints apply to scalar nonlinearities only".into(),
                ));
            }
            (sector_bound_qc(*alpha, *beta, validity)?, None)
        }
    };
    Ok(ResolvedQc {
        lifted: lift_qc(&qc, selector)?,
        gamma,
    })
}

/// Whether the interval-implied ±sigma·std range of each selected
/// coordinate stays inside the validity box.
fn box_excursion<S: Scalar>(
    selector: &DMatrix<S>,
    validity: &ValidityBox<S>,
    interval: &CovarianceInterval<S>,
    sigma: S,
) -> bool {
    for row in 0..selector.nrows() {
        let c = selector.row(row).transpose();
        let outer = &c * c.transpose();
        let var = match crate::bounds::worst_case_linear_functional(&outer, interval) {
            Ok(v) => v.max(S::zero()),
            Err(_) => return true,
        };
        let spread = sigma * var.sqrt();
        if -spread < validity.lo()[row] || spread > validity.hi()[row] {
            return true;
        }
    }
    false
}

/// Everything one step produced beyond the new state.
#[derive(Debug, Clone)]
pub struct StepDiagnostics<S: Scalar> {
    pub step: usize,
    pub prior_interval: Option<CovarianceInterval<S>>,
    pub posterior_interval: Option<CovarianceInterval<S>>,
    pub prior_entries: Vec<EntryDiagnostics>,
    pub posterior_entries: Vec<EntryDiagnostics>,
    pub p_nominal_prior: DMatrix<S>,
    pub p_nominal_posterior: DMatrix<S>,
    pub dynamics_gamma: Option<f64>,
    pub measurement_gamma: Option<f64>,
    pub dynamics_box_excursion: bool,
    pub measurement_box_excursion: bool,
}

/// Advance the filter by one step, consuming the measurement of time k+1.
pub fn step<S: Scalar>(
    system: &NonlinearSystem<S>,
    state: &FilterState<S>,
    u: &DVector<S>,
    y_next: &DVector<S>,
    cfg: &StepConfig<S>,
) -> Result<(FilterState<S>, StepDiagnostics<S>)> {
    let next_k = state.k + 1;
    let tag_step = |mut e: Error| {
        if let Error::BoundUnavailable { step, .. } = &mut e {
            *step = Some(next_k);
        }
        e
    };

    // (a) Nominal prediction; the dynamics decomposition is anchored at x̂_k.
    let dyn_box = cfg
        .dynamics_qc
        .validity
        .clone()
        .unwrap_or_else(|| system.default_dynamics_box.clone());
    let dynamics = system.decompose_dynamics(&state.x_hat, u, &dyn_box)?;
    let x_check_next = system.step_noise_free(&state.x_hat, u);
    let p_nom_prior = nominal_time_update(&dynamics.a, &state.p_nominal, &dynamics.b_w, &system.q);

    // (b)+(c) QC lift and time-update interval propagation.
    let mut dynamics_gamma = None;
    let mut dynamics_box_excursion = false;
    let prior_prop: Option<Propagation<S>> = match &state.interval {
        None => None,
        Some(posterior) => {
            let lifted = if dynamics.nonlinearity_dim() > 0 {
                let delta = dynamics.delta.as_ref().expect("nonlinearity with delta");
                let resolved = resolve_qc(
                    &cfg.dynamics_qc,
                    &system.default_dynamics_box,
                    &dynamics.c_theta,
                    delta,
                    dynamics.c_theta.nrows(),
                    dynamics.nonlinearity_dim(),
                )?;
                dynamics_gamma = resolved.gamma;
                dynamics_box_excursion = box_excursion(
                    &dynamics.c_theta,
                    &resolved.lifted.source.validity,
                    posterior,
                    cfg.monitor_sigma,
                );
                Some(resolved.lifted)
            } else {
                None
            };
            match propagate_time_interval(
                &dynamics,
                lifted.as_ref(),
                posterior,
                &system.q,
                &cfg.bounds,
            ) {
                Ok(p) => Some(p),
                Err(e) if cfg.continue_on_failure => {
                    let _ = e;
                    None
                }
                Err(e) => return Err(tag_step(e)),
            }
        }
    };

    // (d) Measurement decomposition at x̌_{k+1} and nominal gain.
    let meas_box = cfg
        .measurement_qc
        .validity
        .clone()
        .unwrap_or_else(|| system.default_measurement_box.clone());
    let meas = system.decompose_measurement(&x_check_next, &meas_box)?;
    let k_gain = ekf_gain(&meas.h, &p_nom_prior, &system.r, &meas.b_v)?;

    // (e) State update.
    let y_pred = system.measure_noise_free(&x_check_next);
    let x_hat_next = &x_check_next + &k_gain * (y_next - y_pred);
    let p_nom_post = nominal_measurement_update(&k_gain, &meas.h, &p_nom_prior);

    // (f) Measurement-update interval propagation.
    let mut measurement_gamma = None;
    let mut measurement_box_excursion = false;
    let posterior_prop: Option<Propagation<S>> = match &prior_prop {
        None => None,
        Some(prior) => {
            let lifted = if meas.nonlinearity_dim() > 0 {
                let delta = meas.delta.as_ref().expect("nonlinearity with delta");
                let resolved = resolve_qc(
                    &cfg.measurement_qc,
                    &system.default_measurement_box,
                    &meas.c_mu,
                    delta,
                    meas.c_mu.nrows(),
                    meas.nonlinearity_dim(),
                )?;
                measurement_gamma = resolved.gamma;
                measurement_box_excursion = box_excursion(
                    &meas.c_mu,
                    &resolved.lifted.source.validity,
                    &prior.interval,
                    cfg.monitor_sigma,
                );
                Some(resolved.lifted)
            } else {
                None
            };
            match propagate_measurement_interval(
                &meas,
                lifted.as_ref(),
                &k_gain,
                &prior.interval,
                &system.r,
                &cfg.bounds,
            ) {
                Ok(p) => Some(p),
                Err(e) if cfg.continue_on_failure => {
                    let _ = e;
                    None
                }
                Err(e) => return Err(tag_step(e)),
            }
        }
    };

    let diagnostics = StepDiagnostics {
        step: next_k,
        prior_interval: prior_prop.as_ref().map(|p| p.interval.clone()),
        posterior_interval: posterior_prop.as_ref().map(|p| p.interval.clone()),
        prior_entries: prior_prop.map(|p| p.entries).unwrap_or_default(),
        posterior_entries: posterior_prop
            .as_ref()
            .map(|p| p.entries.clone())
            .unwrap_or_default(),
        p_nominal_prior: p_nom_prior.clone(),
        p_nominal_posterior: p_nom_post.clone(),
        dynamics_gamma,
        measurement_gamma,
        dynamics_box_excursion,
        measurement_box_excursion,
    };

    let new_state = FilterState {
        x_check: x_check_next,
        x_hat: x_hat_next,
        p_nominal_prior: p_nom_prior,
        p_nominal: p_nom_post,
        interval: posterior_prop.map(|p| p.interval),
        k: next_k,
    };

    Ok((new_state, diagnostics))
}

/// One CSV row of a scenario run (1-based entry indices).
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub step: usize,
    pub phase: &'static str,
    pub i: usize,
    pub j: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub ekf_nominal: f64,
    pub empirical: Option<f64>,
    pub solver_status: String,
    pub xi_star: Option<f64>,
    pub solve_time_ms: Option<f64>,
}

/// Initial state distribution of a scenario.
#[derive(Debug, Clone)]
pub struct InitialDistribution<S: Scalar> {
    pub mean: DVector<S>,
    pub covariance: DMatrix<S>,
}

/// Where measurements come from.
#[derive(Debug, Clone)]
pub enum MeasurementSource<S: Scalar> {
    /// Externally recorded measurements, one per step, consumed in order.
    Replay(Vec<DVector<S>>),
    /// Simulate one truth trajectory and measure it (deterministic per seed).
    Simulate { seed: u64 },
}

/// Scenario-level knobs beyond the per-step config.
#[derive(Debug, Clone)]
pub struct RunConfig<S: Scalar> {
    pub step: StepConfig<S>,
    /// Also compute per-step trace bounds (four extra solves per step).
    pub trace_bounds: bool,
}

impl<S: Scalar> Default for RunConfig<S> {
    fn default() -> Self {
        RunConfig {
            step: StepConfig::default(),
            trace_bounds: false,
        }
    }
}

/// Per-step summary used by the JSON output.
#[derive(Debug, Clone, Serialize)]
pub struct StepSummary {
    pub step: usize,
    pub prior_trace_lower: Option<f64>,
    pub prior_trace_upper: Option<f64>,
    pub posterior_trace_lower: Option<f64>,
    pub posterior_trace_upper: Option<f64>,
    pub dynamics_gamma: Option<f64>,
    pub measurement_gamma: Option<f64>,
    pub dynamics_box_excursion: bool,
    pub measurement_box_excursion: bool,
}

/// Aggregate solver statistics for one run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverStats {
    pub entries_solved: usize,
    pub entries_exact: usize,
    pub gaps: usize,
    pub total_solve_time_ms: f64,
}

/// Full output of a scenario run.
#[derive(Debug)]
pub struct ScenarioOutput<S: Scalar> {
    pub records: Vec<RunRecord>,
    pub states: Vec<FilterState<S>>,
    /// Certified intervals in record order, for oracle comparison.
    pub intervals: Vec<(usize, Phase, CovarianceInterval<S>)>,
    pub step_summaries: Vec<StepSummary>,
    pub solver_stats: SolverStats,
    /// The simulated truth trajectory (x_1..x_T) when measurements were
    /// generated internally.
    pub truth: Option<Vec<DVector<S>>>,
}

/// Draw from N(mean, cov) through the symmetric eigenvalue square root
/// (works for singular covariances).
pub fn sample_gaussian<S, R>(mean: &DVector<S>, cov: &DMatrix<S>, rng: &mut R) -> DVector<S>
where
    S: Scalar,
    StandardNormal: Distribution<S>,
    R: rand::Rng,
{
    let n = mean.len();
    if n == 0 {
        return DVector::zeros(0);
    }
    let eig = symmetrize(cov).symmetric_eigen();
    let mut half = eig.eigenvectors.clone();
    for (c, &val) in eig.eigenvalues.iter().enumerate() {
        let s = val.max(S::zero()).sqrt();
        for r in 0..n {
            half[(r, c)] *= s;
        }
    }
    let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    mean + half * eig.eigenvectors.transpose() * z
}

/// Run a full scenario: nominal EKF + bound pipeline over `horizon` steps.
pub fn run_scenario<S>(
    system: &NonlinearSystem<S>,
    initial: &InitialDistribution<S>,
    inputs: &[DVector<S>],
    measurements: &MeasurementSource<S>,
    horizon: usize,
    cfg: &RunConfig<S>,
) -> Result<ScenarioOutput<S>>
where
    S: Scalar,
    StandardNormal: Distribution<S>,
{
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if initial.mean.len() != system.state_dim {
        return Err(Error::Config("initial mean has wrong dimension".into()));
    }
    if !inputs.is_empty() && inputs.len() < horizon {
        return Err(Error::Config(format!(
            "input sequence has {} entries for horizon {horizon}",
            inputs.len()
        )));
    }

    // Resolve measurements.
    let (measurement_seq, truth) = match measurements {
        MeasurementSource::Replay(seq) => {
            if seq.len() < horizon {
                return Err(Error::Config(format!(
                    "measurement sequence has {} entries for horizon {horizon}",
                    seq.len()
                )));
            }
            (seq.clone(), None)
        }
        MeasurementSource::Simulate { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut x = sample_gaussian(&initial.mean, &initial.covariance, &mut rng);
            let mut seq = Vec::with_capacity(horizon);
            let mut truth = Vec::with_capacity(horizon);
            let zero_u = DVector::zeros(system.input_dim);
            for k in 0..horizon {
                let u = inputs.get(k).unwrap_or(&zero_u);
                let w = sample_gaussian(
                    &DVector::zeros(system.process_noise_dim),
                    &system.q,
                    &mut rng,
                );
                x = (system.f_d)(&x, u, &w);
                let v = sample_gaussian(&DVector::zeros(system.meas_noise_dim), &system.r, &mut rng);
                seq.push((system.g_d)(&x, &v));
                truth.push(x.clone());
            }
            (seq, Some(truth))
        }
    };

    let mut state = FilterState::initial(initial.mean.clone(), initial.covariance.clone())?;
    let mut records = Vec::new();
    let mut states = Vec::with_capacity(horizon);
    let mut intervals = Vec::new();
    let mut step_summaries = Vec::with_capacity(horizon);
    let mut stats = SolverStats::default();
    let zero_u = DVector::zeros(system.input_dim);

    for (k, measurement) in measurement_seq.iter().take(horizon).enumerate() {
        let u = inputs.get(k).unwrap_or(&zero_u);
        let (next, diag) = step(system, &state, u, measurement, &cfg.step)?;

        // Trace bounds, when requested and the interval is alive.
        let mut summary = StepSummary {
            step: diag.step,
            prior_trace_lower: None,
            prior_trace_upper: None,
            posterior_trace_lower: None,
            posterior_trace_upper: None,
            dynamics_gamma: diag.dynamics_gamma,
            measurement_gamma: diag.measurement_gamma,
            dynamics_box_excursion: diag.dynamics_box_excursion,
            measurement_box_excursion: diag.measurement_box_excursion,
        };
        if cfg.trace_bounds {
            if let (Some(posterior_prev), Some(_)) = (&state.interval, &diag.prior_interval) {
                let dyn_box = cfg
                    .step
                    .dynamics_qc
                    .validity
                    .clone()
                    .unwrap_or_else(|| system.default_dynamics_box.clone());
                let dynamics = system.decompose_dynamics(&state.x_hat, u, &dyn_box)?;
                let lifted = if dynamics.nonlinearity_dim() > 0 {
                    let delta = dynamics.delta.as_ref().expect("delta");
                    Some(
                        resolve_qc(
                            &cfg.step.dynamics_qc,
                            &system.default_dynamics_box,
                            &dynamics.c_theta,
                            delta,
                            dynamics.c_theta.nrows(),
                            dynamics.nonlinearity_dim(),
                        )?
                        .lifted,
                    )
                } else {
                    None
                };
                let (lo, _) = time_update_trace_bound(
                    &dynamics,
                    lifted.as_ref(),
                    posterior_prev,
                    &system.q,
                    Sign::Minus,
                    &cfg.step.bounds,
                )?;
                let (hi, _) = time_update_trace_bound(
                    &dynamics,
                    lifted.as_ref(),
                    posterior_prev,
                    &system.q,
                    Sign::Plus,
                    &cfg.step.bounds,
                )?;
                summary.prior_trace_lower = Some(lo.to_f64_lossy());
                summary.prior_trace_upper = Some(hi.to_f64_lossy());
            }
            if let Some(prior) = &diag.prior_interval {
                let meas_box = cfg
                    .step
                    .measurement_qc
                    .validity
                    .clone()
                    .unwrap_or_else(|| system.default_measurement_box.clone());
                let meas = system.decompose_measurement(&next.x_check, &meas_box)?;
                let k_gain = ekf_gain(&meas.h, &diag.p_nominal_prior, &system.r, &meas.b_v)?;
                let lifted = if meas.nonlinearity_dim() > 0 {
                    let delta = meas.delta.as_ref().expect("delta");
                    Some(
                        resolve_qc(
                            &cfg.step.measurement_qc,
                            &system.default_measurement_box,
                            &meas.c_mu,
                            delta,
                            meas.c_mu.nrows(),
                            meas.nonlinearity_dim(),
                        )?
                        .lifted,
                    )
                } else {
                    None
                };
                let (lo, _) = measurement_update_trace_bound(
                    &meas,
                    lifted.as_ref(),
                    &k_gain,
                    prior,
                    &system.r,
                    Sign::Minus,
                    &cfg.step.bounds,
                )?;
                let (hi, _) = measurement_update_trace_bound(
                    &meas,
                    lifted.as_ref(),
                    &k_gain,
                    prior,
                    &system.r,
                    Sign::Plus,
                    &cfg.step.bounds,
                )?;
                summary.posterior_trace_lower = Some(lo.to_f64_lossy());
                summary.posterior_trace_upper = Some(hi.to_f64_lossy());
            }
        }

        // Records: prior rows then posterior rows, entries in (i, j) order.
        let n = system.state_dim;
        for (phase, interval, entries, nominal) in [
            (
                Phase::Prior,
                &diag.prior_interval,
                &diag.prior_entries,
                &diag.p_nominal_prior,
            ),
            (
                Phase::Posterior,
                &diag.posterior_interval,
                &diag.posterior_entries,
                &diag.p_nominal_posterior,
            ),
        ] {
            match interval {
                Some(iv) => {
                    intervals.push((diag.step, phase, iv.clone()));
                    for e in entries {
                        stats.total_solve_time_ms += e.solve_time_ms;
                        if e.solver_status == "exact" {
                            stats.entries_exact += 1;
                        } else {
                            stats.entries_solved += 1;
                        }
                        records.push(RunRecord {
                            step: diag.step,
                            phase: phase.as_str(),
                            i: e.i,
                            j: e.j,
                            lower: Some(e.lower),
                            upper: Some(e.upper),
                            ekf_nominal: nominal[(e.i - 1, e.j - 1)].to_f64_lossy(),
                            empirical: None,
                            solver_status: e.solver_status.to_string(),
                            xi_star: e.xi_star,
                            solve_time_ms: Some(e.solve_time_ms),
                        });
                    }
                }
                None => {
                    stats.gaps += 1;
                    for i in 1..=n {
                        for j in i..=n {
                            records.push(RunRecord {
                                step: diag.step,
                                phase: phase.as_str(),
                                i,
                                j,
                                lower: None,
                                upper: None,
                                ekf_nominal: nominal[(i - 1, j - 1)].to_f64_lossy(),
                                empirical: None,
                                solver_status: "gap".to_string(),
                                xi_star: None,
                                solve_time_ms: None,
                            });
                        }
                    }
                }
            }
        }

        step_summaries.push(summary);
        states.push(next.clone());
        state = next;
    }

    Ok(ScenarioOutput {
        records,
        states,
        intervals,
        step_summaries,
        solver_stats: stats,
        truth,
    })
}
