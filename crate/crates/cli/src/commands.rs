//! The three subcommands: run, verify-decomposition, compare.

use crate::output::{
    records_to_compare_csv, records_to_csv, summary_to_json, MonitorSummary, OracleSummary,
    OverboundSummary, QcValidationSummary, RunSummary, SeedSummary,
};
use anyhow::Context;
use covbound::bounds::{assemble_psd_overbound, Phase};
use covbound::config::{RuntimeBundle, ScenarioConfig};
use covbound::filter::{resolve_qc, run_scenario, ScenarioOutput};
use covbound::model::Decomposition;
use covbound::oracle::{bound_violation_report, simulate_truth, EnsembleResult};
use covbound::qc::validate_qc;
use covbound::Error;
use nalgebra::DVector;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// stdout may be a closed pipe (e.g. `covbound ... | head`); reporting must
/// not panic in that case.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Commands exit through this outcome; main maps it to a process code.
pub enum CmdOutcome {
    Success,
    OracleViolation,
    ResidualFailure,
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("cannot read config {}: {e}", path.display())))?;
    ScenarioConfig::from_json_str(&text)
}

fn out_path(out_dir: &Path, configured: &Option<String>, default_name: &str) -> PathBuf {
    match configured {
        Some(p) if Path::new(p).is_absolute() => PathBuf::from(p),
        Some(p) => out_dir.join(p),
        None => out_dir.join(default_name),
    }
}

fn write_file(path: &Path, content: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
    }
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Validate the configured QC triples at the initial linearization point.
fn qc_validation_summaries(
    bundle: &RuntimeBundle<f64>,
    seeds_master: u64,
) -> Result<Vec<QcValidationSummary>, Error> {
    let mut out = Vec::new();
    let u0 = DVector::zeros(bundle.system.input_dim);
    let x0 = &bundle.initial.mean;

    let dyn_box = bundle
        .run
        .step
        .dynamics_qc
        .validity
        .clone()
        .unwrap_or_else(|| bundle.system.default_dynamics_box.clone());
    let dynamics = bundle.system.decompose_dynamics(x0, &u0, &dyn_box)?;
    if dynamics.nonlinearity_dim() > 0 {
        let delta = dynamics.delta.as_ref().expect("delta");
        let resolved = resolve_qc(
            &bundle.run.step.dynamics_qc,
            &bundle.system.default_dynamics_box,
            &dynamics.c_theta,
            delta,
            dynamics.c_theta.nrows(),
            dynamics.nonlinearity_dim(),
        )?;
        let delta = delta.clone();
        let report = validate_qc(&resolved.lifted.source, move |b| delta(b), 1000, seeds_master);
        out.push(QcValidationSummary {
            target: "dynamics",
            kind: kind_name(&bundle.run.step.dynamics_qc.kind),
            gamma: resolved.gamma,
            min_quadratic_form: report.min_value,
            samples: report.sample_count,
            passed: report.passed(),
        });
    }

    let meas_box = bundle
        .run
        .step
        .measurement_qc
        .validity
        .clone()
        .unwrap_or_else(|| bundle.system.default_measurement_box.clone());
    let x1 = bundle.system.step_noise_free(x0, &u0);
    let meas = bundle.system.decompose_measurement(&x1, &meas_box)?;
    if meas.nonlinearity_dim() > 0 {
        let delta = meas.delta.as_ref().expect("delta");
        let resolved = resolve_qc(
            &bundle.run.step.measurement_qc,
            &bundle.system.default_measurement_box,
            &meas.c_mu,
            delta,
            meas.c_mu.nrows(),
            meas.nonlinearity_dim(),
        )?;
        let delta = delta.clone();
        let report = validate_qc(
            &resolved.lifted.source,
            move |b| delta(b),
            1000,
            seeds_master.wrapping_add(7),
        );
        out.push(QcValidationSummary {
            target: "measurement",
            kind: kind_name(&bundle.run.step.measurement_qc.kind),
            gamma: resolved.gamma,
            min_quadratic_form: report.min_value,
            samples: report.sample_count,
            passed: report.passed(),
        });
    }
    Ok(out)
}

fn kind_name(kind: &covbound::filter::QcKind<f64>) -> String {
    match kind {
        covbound::filter::QcKind::Norm { .. } => "norm".into(),
        covbound::filter::QcKind::Sector { .. } => "sector".into(),
    }
}

struct Executed {
    output: ScenarioOutput<f64>,
    ensemble: Option<EnsembleResult<f64>>,
    report: Option<covbound::oracle::ViolationReport>,
}

/// Run the scenario and, when configured, the oracle; merge empirical
/// covariances into the records.
fn execute(bundle: &RuntimeBundle<f64>) -> Result<Executed, Error> {
    let mut output = run_scenario(
        &bundle.system,
        &bundle.initial,
        &bundle.inputs,
        &bundle.measurements,
        bundle.horizon,
        &bundle.run,
    )?;

    let (ensemble, report) = match &bundle.oracle {
        None => (None, None),
        Some(o) => {
            let ensemble = simulate_truth(
                &bundle.system,
                &bundle.initial,
                &bundle.inputs,
                bundle.horizon,
                o.num_trajectories,
                o.seed,
            )?;
            let report = bound_violation_report(
                &output.intervals,
                &ensemble,
                o.confidence_sigma,
                o.bootstrap_resamples,
                bundle.seeds.bootstrap,
            )?;
            for r in output.records.iter_mut() {
                let phase = match r.phase {
                    "prior" => Phase::Prior,
                    _ => Phase::Posterior,
                };
                if let Some(cov) = ensemble.covariance(r.step, phase) {
                    r.empirical = Some(cov[(r.i - 1, r.j - 1)]);
                }
            }
            (Some(ensemble), Some(report))
        }
    };

    Ok(Executed {
        output,
        ensemble,
        report,
    })
}

fn build_summary(
    config: &ScenarioConfig,
    bundle: &RuntimeBundle<f64>,
    executed: &Executed,
) -> Result<RunSummary, Error> {
    let monitor = MonitorSummary {
        dynamics_excursion_steps: executed
            .output
            .step_summaries
            .iter()
            .filter(|s| s.dynamics_box_excursion)
            .map(|s| s.step)
            .collect(),
        measurement_excursion_steps: executed
            .output
            .step_summaries
            .iter()
            .filter(|s| s.measurement_box_excursion)
            .map(|s| s.step)
            .collect(),
    };

    let experimental_overbound = if bundle.flags.experimental_overbound {
        let last_posterior = executed
            .output
            .intervals
            .iter()
            .rev()
            .find(|(_, p, _)| *p == Phase::Posterior);
        match last_posterior {
            Some((step, _, interval)) => {
                let matrix = assemble_psd_overbound(interval)?;
                let margin = executed.ensemble.as_ref().and_then(|ens| {
                    ens.covariance(*step, Phase::Posterior).map(|emp| {
                        let diff = &matrix - emp;
                        let eig = diff.symmetric_eigen();
                        eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
                    })
                });
                Some(OverboundSummary {
                    step: *step,
                    matrix: (0..matrix.nrows())
                        .map(|i| (0..matrix.ncols()).map(|j| matrix[(i, j)]).collect())
                        .collect(),
                    empirical_loewner_margin: margin,
                })
            }
            None => None,
        }
    } else {
        None
    };

    Ok(RunSummary {
        schema_version: config.schema_version,
        system: bundle.system.name.clone(),
        horizon: bundle.horizon,
        seeds: SeedSummary::from(bundle.seeds),
        solver: executed.output.solver_stats.clone(),
        qc_validation: qc_validation_summaries(bundle, bundle.seeds.master)?,
        steps: executed.output.step_summaries.clone(),
        monitor,
        oracle: match (&executed.report, &bundle.oracle) {
            (Some(report), Some(o)) => Some(OracleSummary::new(
                report,
                o.num_trajectories,
                o.seed,
                o.max_violation_rate,
            )),
            _ => None,
        },
        experimental_overbound,
    })
}

pub fn cmd_run(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
    timings: bool,
) -> Result<CmdOutcome, Error> {
    let config = load_config(config_path)?;
    let bundle = config.build_runtime::<f64>(seed_override)?;
    let executed = execute(&bundle)?;

    let csv = records_to_csv(&executed.output.records, timings);
    let csv_path = out_path(out_dir, &config.output.csv, "records.csv");
    write_file(&csv_path, &csv).map_err(|e| Error::Io(e.to_string()))?;

    let summary = build_summary(&config, &bundle, &executed)?;
    let json = summary_to_json(&summary).map_err(|e| Error::Io(e.to_string()))?;
    let summary_path = out_path(out_dir, &config.output.summary, "summary.json");
    write_file(&summary_path, &json).map_err(|e| Error::Io(e.to_string()))?;

    say!(
        "run complete: {} records -> {}, summary -> {}",
        executed.output.records.len(),
        csv_path.display(),
        summary_path.display()
    );

    if let (Some(report), Some(o)) = (&executed.report, &bundle.oracle) {
        say!(
            "oracle: {} checked, {} violations (rate {:.4}, threshold {:.4})",
            report.checked, report.violation_count, report.violation_rate, o.max_violation_rate
        );
        if report.violation_rate > o.max_violation_rate {
            return Ok(CmdOutcome::OracleViolation);
        }
    }
    Ok(CmdOutcome::Success)
}

pub fn cmd_compare(
    config_path: &Path,
    out_dir: &Path,
    seed_override: Option<u64>,
) -> Result<CmdOutcome, Error> {
    let config = load_config(config_path)?;
    let mut bundle = config.build_runtime::<f64>(seed_override)?;
    // Comparison needs empirical columns; default the oracle on when absent.
    if bundle.oracle.is_none() {
        bundle.oracle = Some(covbound::config::ResolvedOracle {
            num_trajectories: 10_000,
            seed: bundle.seeds.oracle,
            confidence_sigma: 3.0,
            bootstrap_resamples: 200,
            max_violation_rate: 0.01,
        });
    }
    let executed = execute(&bundle)?;

    let csv = records_to_compare_csv(&executed.output.records);
    // The comparison schema differs from run records; never reuse the
    // configured records filename.
    let csv_path = out_path(out_dir, &None, "compare.csv");
    write_file(&csv_path, &csv).map_err(|e| Error::Io(e.to_string()))?;
    say!(
        "comparison complete: {} rows -> {}",
        executed.output.records.len(),
        csv_path.display()
    );
    if let Some(report) = &executed.report {
        say!(
            "oracle: {} checked, {} violations (rate {:.4})",
            report.checked, report.violation_count, report.violation_rate
        );
    }
    Ok(CmdOutcome::Success)
}

pub fn cmd_verify_decomposition(
    config_path: &Path,
    seed_override: Option<u64>,
) -> Result<CmdOutcome, Error> {
    let config = load_config(config_path)?;
    let bundle = config.build_runtime::<f64>(seed_override)?;
    let verify = config.verify.clone().unwrap_or_default();
    let seed = verify.seed.unwrap_or(bundle.seeds.master);
    let system = &bundle.system;

    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let u0 = DVector::zeros(system.input_dim);
    let mut all_ok = true;

    for anchor_idx in 0..verify.anchors {
        let region = &system.operating_region;
        let x = DVector::from_fn(system.state_dim, |i, _| {
            let u: f64 = rng.random();
            region.lo()[i] + (region.hi()[i] - region.lo()[i]) * u
        });

        let dyn_box = bundle
            .run
            .step
            .dynamics_qc
            .validity
            .clone()
            .unwrap_or_else(|| system.default_dynamics_box.clone());
        let mut dynamics = system.decompose_dynamics(&x, &u0, &dyn_box)?;
        if let Some(eps) = verify.perturb_a {
            dynamics.a[(0, 0)] += eps;
        }
        let dyn_result = covbound::model::verify_decomposition(
            system,
            &Decomposition::Dynamics(&dynamics),
            &x,
            &u0,
            verify.samples_per_anchor,
            seed.wrapping_add(anchor_idx as u64),
        );
        report_line("dynamics", anchor_idx, &dyn_result, &mut all_ok);

        let meas_box = bundle
            .run
            .step
            .measurement_qc
            .validity
            .clone()
            .unwrap_or_else(|| system.default_measurement_box.clone());
        let meas = system.decompose_measurement(&x, &meas_box)?;
        let meas_result = covbound::model::verify_decomposition(
            system,
            &Decomposition::Measurement(&meas),
            &x,
            &u0,
            verify.samples_per_anchor,
            seed.wrapping_add(1000 + anchor_idx as u64),
        );
        report_line("measurement", anchor_idx, &meas_result, &mut all_ok);
    }

    if all_ok {
        say!("all decompositions exact within tolerance");
        Ok(CmdOutcome::Success)
    } else {
        Ok(CmdOutcome::ResidualFailure)
    }
}

fn report_line(
    target: &str,
    anchor: usize,
    result: &Result<covbound::model::ResidualReport<f64>, Error>,
    all_ok: &mut bool,
) {
    match result {
        Ok(rep) => say!(
            "anchor {anchor} {target}: max residual {:.3e} (tolerance {:.3e}) over {} samples: ok",
            rep.max_residual, rep.tolerance_at_worst, rep.samples
        ),
        Err(Error::DecompositionInvalid {
            max_residual,
            tolerance,
            ..
        }) => {
            say!(
                "anchor {anchor} {target}: max residual {max_residual:.3e} exceeds tolerance {tolerance:.3e}: FAIL"
            );
            *all_ok = false;
        }
        Err(e) => {
            say!("anchor {anchor} {target}: error: {e}");
            *all_ok = false;
        }
    }
}
