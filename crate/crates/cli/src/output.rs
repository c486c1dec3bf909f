//! CSV and JSON writers. The CSV layout is fixed:
//! `step,phase,i,j,lower,upper,ekf_nominal,empirical,solver_status,xi_star,solve_time_ms`
//! and byte-identical across runs of the same config and seed. The
//! solve_time_ms cell is left empty unless timings were requested (wall
//! clock is not reproducible); timings always appear in the JSON summary.

use covbound::config::ResolvedSeeds;
use covbound::filter::{RunRecord, SolverStats, StepSummary};
use covbound::oracle::ViolationReport;
use serde::Serialize;
use std::fmt::Write as _;

pub const CSV_HEADER: &str =
    "step,phase,i,j,lower,upper,ekf_nominal,empirical,solver_status,xi_star,solve_time_ms";

fn push_opt(line: &mut String, v: Option<f64>) {
    if let Some(x) = v {
        let _ = write!(line, "{x}");
    }
}

/// Render run records as CSV text (trailing newline included).
pub fn records_to_csv(records: &[RunRecord], include_timings: bool) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{},", r.step, r.phase, r.i, r.j);
        push_opt(&mut out, r.lower);
        out.push(',');
        push_opt(&mut out, r.upper);
        let _ = write!(out, ",{},", r.ekf_nominal);
        push_opt(&mut out, r.empirical);
        let _ = write!(out, ",{},", r.solver_status);
        push_opt(&mut out, r.xi_star);
        out.push(',');
        if include_timings {
            push_opt(&mut out, r.solve_time_ms);
        }
        out.push('\n');
    }
    out
}

pub const COMPARE_HEADER: &str = "step,phase,i,j,lower,upper,ekf_nominal,empirical";

/// Render the comparison CSV (nominal EKF vs interval vs empirical).
pub fn records_to_compare_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(48 * (records.len() + 1));
    out.push_str(COMPARE_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{},", r.step, r.phase, r.i, r.j);
        push_opt(&mut out, r.lower);
        out.push(',');
        push_opt(&mut out, r.upper);
        let _ = write!(out, ",{},", r.ekf_nominal);
        push_opt(&mut out, r.empirical);
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
pub struct SeedSummary {
    pub master: u64,
    pub simulation: u64,
    pub oracle: u64,
    pub bootstrap: u64,
}

impl From<ResolvedSeeds> for SeedSummary {
    fn from(s: ResolvedSeeds) -> Self {
        SeedSummary {
            master: s.master,
            simulation: s.simulation,
            oracle: s.oracle,
            bootstrap: s.bootstrap,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct QcValidationSummary {
    pub target: &'static str,
    pub kind: String,
    pub gamma: Option<f64>,
    pub min_quadratic_form: f64,
    pub samples: usize,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct OracleSummary {
    pub num_trajectories: usize,
    pub seed: u64,
    pub confidence_sigma: f64,
    pub bootstrap_resamples: usize,
    pub max_violation_rate: f64,
    pub checked: usize,
    pub violation_count: usize,
    pub violation_rate: f64,
    /// Flagged entries, capped at 100 rows.
    pub violations: Vec<covbound::oracle::Violation>,
}

impl OracleSummary {
    pub fn new(
        report: &ViolationReport,
        num_trajectories: usize,
        seed: u64,
        max_violation_rate: f64,
    ) -> Self {
        OracleSummary {
            num_trajectories,
            seed,
            confidence_sigma: report.confidence_sigma,
            bootstrap_resamples: report.bootstrap_resamples,
            max_violation_rate,
            checked: report.checked,
            violation_count: report.violation_count,
            violation_rate: report.violation_rate,
            violations: report.violations.iter().take(100).cloned().collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct OverboundSummary {
    pub step: usize,
    pub matrix: Vec<Vec<f64>>,
    /// min eig of (overbound − empirical posterior covariance); empirical
    /// evidence only, never asserted.
    pub empirical_loewner_margin: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct MonitorSummary {
    pub dynamics_excursion_steps: Vec<usize>,
    pub measurement_excursion_steps: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub system: String,
    pub horizon: usize,
    pub seeds: SeedSummary,
    pub solver: SolverStats,
    pub qc_validation: Vec<QcValidationSummary>,
    pub steps: Vec<StepSummary>,
    pub monitor: MonitorSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experimental_overbound: Option<OverboundSummary>,
}

pub fn summary_to_json(summary: &RunSummary) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(summary)? + "\n")
}
