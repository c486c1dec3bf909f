//! Monte Carlo ground truth: ensembles of the true nonlinear system, each
//! trajectory tracked by its own EKF, so the recorded prior/posterior
//! errors are sampled exactly as the bound pipeline defines them
//! (δx = x − x̌, ê = x − x̂). Certified intervals are then checked for
//! containment of the empirical covariance within a bootstrap margin.

use crate::bounds::{CovarianceInterval, Phase};
use crate::error::{Error, Result};
use crate::filter::{ekf_gain, nominal_measurement_update, nominal_time_update, sample_gaussian,
    InitialDistribution};
use crate::model::NonlinearSystem;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

/// Ensemble of filter errors with their per-step empirical covariances.
#[derive(Debug, Clone)]
pub struct EnsembleResult<S: Scalar> {
    pub sample_count: usize,
    pub seed: u64,
    pub horizon: usize,
    /// Prior errors at step k+1 live in column-per-trajectory matrices.
    pub prior_errors: Vec<DMatrix<S>>,
    pub posterior_errors: Vec<DMatrix<S>>,
    pub prior_cov: Vec<DMatrix<S>>,
    pub posterior_cov: Vec<DMatrix<S>>,
}

impl<S: Scalar> EnsembleResult<S> {
    pub fn covariance(&self, step: usize, phase: Phase) -> Option<&DMatrix<S>> {
        if step == 0 || step > self.horizon {
            return None;
        }
        match phase {
            Phase::Prior => self.prior_cov.get(step - 1),
            Phase::Posterior => self.posterior_cov.get(step - 1),
        }
    }
}

/// Unbiased sample covariance (n−1 divisor) of column-per-sample data.
pub fn empirical_covariance<S: Scalar>(samples: &DMatrix<S>) -> Result<DMatrix<S>> {
    let n = samples.ncols();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let dim = samples.nrows();
    let mut mean = DVector::zeros(dim);
    for c in 0..n {
        mean += samples.column(c);
    }
    mean /= S::from_f64_lossy(n as f64);
    let mut cov = DMatrix::zeros(dim, dim);
    for c in 0..n {
        let d = samples.column(c) - &mean;
        cov += &d * d.transpose();
    }
    cov /= S::from_f64_lossy((n - 1) as f64);
    Ok(cov)
}

/// Simulate `n` independent truth trajectories, run one EKF per trajectory,
/// and collect prior/posterior error ensembles. Deterministic per seed and
/// independent of thread count (one RNG stream per trajectory, reduction in
/// trajectory order).
pub fn simulate_truth<S>(
    system: &NonlinearSystem<S>,
    initial: &InitialDistribution<S>,
    inputs: &[DVector<S>],
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<EnsembleResult<S>>
where
    S: Scalar,
    StandardNormal: Distribution<S>,
{
    if horizon == 0 {
        return Err(Error::Config("horizon must be >= 1".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if initial.mean.len() != system.state_dim {
        return Err(Error::Config("initial mean has wrong dimension".into()));
    }
    if !inputs.is_empty() && inputs.len() < horizon {
        return Err(Error::Config("input sequence shorter than horizon".into()));
    }

    // (prior errors, posterior errors) for one trajectory.
    type ErrorSeries<S> = (Vec<DVector<S>>, Vec<DVector<S>>);
    let zero_u = DVector::zeros(system.input_dim);
    let per_trajectory: Vec<ErrorSeries<S>> = (0..n)
        .into_par_iter()
        .map(|traj| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(traj as u64 + 1);

            let mut x_true = sample_gaussian(&initial.mean, &initial.covariance, &mut rng);
            let mut x_hat = initial.mean.clone();
            let mut p = initial.covariance.clone();
            let mut prior = Vec::with_capacity(horizon);
            let mut posterior = Vec::with_capacity(horizon);

            for k in 0..horizon {
                let u = inputs.get(k).unwrap_or(&zero_u);
                // Jacobians at the trajectory's own estimates, as in the
                // filter runtime.
                let dynamics = system
                    .decompose_dynamics(&x_hat, u, &system.default_dynamics_box)
                    .expect("catalog decomposition");
                let w =
                    sample_gaussian(&DVector::zeros(system.process_noise_dim), &system.q, &mut rng);
                x_true = (system.f_d)(&x_true, u, &w);
                let x_check = system.step_noise_free(&x_hat, u);
                let p_minus = nominal_time_update(&dynamics.a, &p, &dynamics.b_w, &system.q);
                prior.push(&x_true - &x_check);

                let meas = system
                    .decompose_measurement(&x_check, &system.default_measurement_box)
                    .expect("catalog decomposition");
                let v =
                    sample_gaussian(&DVector::zeros(system.meas_noise_dim), &system.r, &mut rng);
                let y = (system.g_d)(&x_true, &v);
                let k_gain =
                    ekf_gain(&meas.h, &p_minus, &system.r, &meas.b_v).expect("gain");
                let y_pred = system.measure_noise_free(&x_check);
                x_hat = &x_check + &k_gain * (y - y_pred);
                p = nominal_measurement_update(&k_gain, &meas.h, &p_minus);
                posterior.push(&x_true - &x_hat);
            }
            (prior, posterior)
        })
        .collect();

    let dim = system.state_dim;
    let mut prior_errors = vec![DMatrix::<S>::zeros(dim, n); horizon];
    let mut posterior_errors = vec![DMatrix::<S>::zeros(dim, n); horizon];
    for (traj, (prior, posterior)) in per_trajectory.iter().enumerate() {
        for k in 0..horizon {
            prior_errors[k].set_column(traj, &prior[k]);
            posterior_errors[k].set_column(traj, &posterior[k]);
        }
    }

    let prior_cov = prior_errors
        .iter()
        .map(empirical_covariance)
        .collect::<Result<Vec<_>>>()?;
    let posterior_cov = posterior_errors
        .iter()
        .map(empirical_covariance)
        .collect::<Result<Vec<_>>>()?;

    Ok(EnsembleResult {
        sample_count: n,
        seed,
        horizon,
        prior_errors,
        posterior_errors,
        prior_cov,
        posterior_cov,
    })
}

/// One flagged (step, phase, entry) containment failure.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub step: usize,
    pub phase: &'static str,
    pub i: usize,
    pub j: usize,
    pub empirical: f64,
    pub lower: f64,
    pub upper: f64,
    pub standard_error: f64,
}

/// Containment summary across all checked (step, phase, entry) triples.
#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub checked: usize,
    pub violation_count: usize,
    pub violation_rate: f64,
    pub confidence_sigma: f64,
    pub bootstrap_resamples: usize,
    pub violations: Vec<Violation>,
}

/// Bootstrap standard errors of every covariance entry for one ensemble
/// slice (column-per-sample), using `resamples` replicates. Works on the
/// raw column-major storage: the resample loop dominates the oracle's cost.
fn bootstrap_se<S: Scalar>(samples: &DMatrix<S>, resamples: usize, seed: u64) -> DMatrix<S> {
    let dim = samples.nrows();
    let n = samples.ncols();
    let data = samples.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = (0..dim)
        .flat_map(|i| (i..dim).map(move |j| (i, j)))
        .collect();
    let mut sum = vec![S::zero(); pairs.len()];
    let mut sum_sq = vec![S::zero(); pairs.len()];
    let mut mean = vec![S::zero(); dim];
    let mut outer = vec![S::zero(); pairs.len()];
    let n_s = S::from_f64_lossy(n as f64);
    let nm1 = S::from_f64_lossy((n - 1) as f64);
    for _ in 0..resamples {
        mean.iter_mut().for_each(|v| *v = S::zero());
        outer.iter_mut().for_each(|v| *v = S::zero());
        for _ in 0..n {
            let col = &data[rng.random_range(0..n) * dim..][..dim];
            for i in 0..dim {
                mean[i] += col[i];
            }
            for (t, &(i, j)) in pairs.iter().enumerate() {
                outer[t] += col[i] * col[j];
            }
        }
        for (t, &(i, j)) in pairs.iter().enumerate() {
            // Σ v_i v_j − n·μ_i·μ_j, all divided by n−1.
            let cov = (outer[t] - mean[i] * mean[j] / n_s) / nm1;
            sum[t] += cov;
            sum_sq[t] += cov * cov;
        }
    }
    let b = S::from_f64_lossy(resamples as f64);
    let mut se = DMatrix::<S>::zeros(dim, dim);
    for (t, &(i, j)) in pairs.iter().enumerate() {
        let m = sum[t] / b;
        let var = (sum_sq[t] / b - m * m).max(S::zero());
        // replicate-count correction for the sd of the estimator
        let v = (var * b / (b - S::one())).sqrt();
        se[(i, j)] = v;
        se[(j, i)] = v;
    }
    se
}

/// Check every certified interval against the ensemble: an entry is flagged
/// iff the empirical covariance leaves [L − cσ·se, U + cσ·se] with se the
/// bootstrap standard error.
pub fn bound_violation_report<S: Scalar>(
    intervals: &[(usize, Phase, CovarianceInterval<S>)],
    ensemble: &EnsembleResult<S>,
    confidence_sigma: f64,
    resamples: usize,
    bootstrap_seed: u64,
) -> Result<ViolationReport> {
    for (step, _, _) in intervals {
        if *step == 0 || *step > ensemble.horizon {
            return Err(Error::HorizonMismatch {
                intervals: *step,
                ensemble: ensemble.horizon,
            });
        }
    }

    // One bootstrap per (step, phase) actually referenced.
    let mut keys: Vec<(usize, Phase)> = intervals.iter().map(|(k, p, _)| (*k, *p)).collect();
    keys.sort_by_key(|(k, p)| (*k, matches!(p, Phase::Posterior) as u8));
    keys.dedup();
    let ses: Vec<((usize, Phase), DMatrix<S>)> = keys
        .par_iter()
        .map(|&(step, phase)| {
            let samples = match phase {
                Phase::Prior => &ensemble.prior_errors[step - 1],
                Phase::Posterior => &ensemble.posterior_errors[step - 1],
            };
            let tag = (step as u64) * 2 + matches!(phase, Phase::Posterior) as u64;
            let se = bootstrap_se(samples, resamples, bootstrap_seed ^ tag.wrapping_mul(0x9e3779b97f4a7c15));
            ((step, phase), se)
        })
        .collect();
    let se_of = |step: usize, phase: Phase| -> &DMatrix<S> {
        &ses.iter()
            .find(|((k, p), _)| *k == step && *p == phase)
            .expect("bootstrap slice")
            .1
    };

    let sigma = S::from_f64_lossy(confidence_sigma);
    let mut checked = 0usize;
    let mut violations = Vec::new();
    for (step, phase, interval) in intervals {
        let emp = ensemble
            .covariance(*step, *phase)
            .ok_or(Error::HorizonMismatch {
                intervals: *step,
                ensemble: ensemble.horizon,
            })?;
        let se = se_of(*step, *phase);
        let n = interval.dim();
        for i in 0..n {
            for j in i..n {
                checked += 1;
                let margin = sigma * se[(i, j)];
                let e = emp[(i, j)];
                if e > interval.upper()[(i, j)] + margin || e < interval.lower()[(i, j)] - margin {
                    violations.push(Violation {
                        step: *step,
                        phase: phase.as_str(),
                        i: i + 1,
                        j: j + 1,
                        empirical: e.to_f64_lossy(),
                        lower: interval.lower()[(i, j)].to_f64_lossy(),
                        upper: interval.upper()[(i, j)].to_f64_lossy(),
                        standard_error: se[(i, j)].to_f64_lossy(),
                    });
                }
            }
        }
    }

    Ok(ViolationReport {
        checked,
        violation_count: violations.len(),
        violation_rate: if checked == 0 {
            0.0
        } else {
            violations.len() as f64 / checked as f64
        },
        confidence_sigma,
        bootstrap_resamples: resamples,
        violations,
    })
}
