//! Scenario configuration: a single JSON document with an explicit schema
//! version, deserialized strictly (unknown fields are rejected) and
//! resolved into the typed runtime structures.

use crate::bounds::BoundSettings;
use crate::catalog::build_system;
use crate::error::{Error, Result};
use crate::filter::{
    InitialDistribution, MeasurementSource, QcKind, QcSpec, RunConfig, StepConfig,
};
use crate::model::NonlinearSystem;
use crate::qc::ValidityBox;
use crate::scalar::Scalar;
use crate::sdp::SdpSettings;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub system: SystemRef,
    pub horizon: usize,
    pub initial: InitialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_override: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_override: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub qc: QcSection,
    #[serde(default)]
    pub sdp: SdpConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurements: Option<MeasurementConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub flags: FlagsConfig,
    /// Master seed; derived seeds default from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemRef {
    pub id: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<QcSpecConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<QcSpecConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QcSpecConfig {
    /// "norm" or "sector".
    pub kind: String,
    /// Fixed norm-bound gain; absent means the local gain is estimated per
    /// step. Zero is accepted (deliberately unsound configurations).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Per-coordinate [lo, hi] bounds of the validity box.
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub validity_box: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_grid_density")]
    pub grid_density: usize,
}

fn default_grid_density() -> usize {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdpConfig {
    pub eps_strict: f64,
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    pub max_iterations: usize,
    pub certificate_tol: f64,
}

impl Default for SdpConfig {
    fn default() -> Self {
        SdpConfig {
            eps_strict: 1e-9,
            feasibility_tol: 1e-8,
            gap_tol: 1e-8,
            max_iterations: 200,
            certificate_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    pub num_trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_sigma")]
    pub confidence_sigma: f64,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Violation rate above which cmd_run exits with code 1.
    #[serde(default = "default_max_rate")]
    pub max_violation_rate: f64,
}

fn default_true() -> bool {
    true
}
fn default_sigma() -> f64 {
    3.0
}
fn default_resamples() -> usize {
    200
}
fn default_max_rate() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum MeasurementConfig {
    Simulate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Replay {
        values: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsConfig {
    #[serde(default)]
    pub experimental_overbound: bool,
    #[serde(default)]
    pub continue_on_failure: bool,
    #[serde(default = "default_true")]
    pub trace_bounds: bool,
    #[serde(default = "default_sigma")]
    pub monitor_sigma: f64,
}

impl Default for FlagsConfig {
    fn default() -> Self {
        FlagsConfig {
            experimental_overbound: false,
            continue_on_failure: false,
            trace_bounds: true,
            monitor_sigma: 3.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default = "default_anchors")]
    pub anchors: usize,
    #[serde(default = "default_samples")]
    pub samples_per_anchor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Test hook: additive perturbation of A[0,0] after decomposition, to
    /// exercise the failure path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb_a: Option<f64>,
}

fn default_anchors() -> usize {
    5
}
fn default_samples() -> usize {
    1000
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            anchors: default_anchors(),
            samples_per_anchor: default_samples(),
            seed: None,
            perturb_a: None,
        }
    }
}

/// Seeds derived from the config's master seed.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub simulation: u64,
    pub oracle: u64,
    pub bootstrap: u64,
}

/// Oracle settings after defaulting.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedOracle {
    pub num_trajectories: usize,
    pub seed: u64,
    pub confidence_sigma: f64,
    pub bootstrap_resamples: usize,
    pub max_violation_rate: f64,
}

/// Everything a run needs, typed and validated.
pub struct RuntimeBundle<S: Scalar> {
    pub system: NonlinearSystem<S>,
    pub initial: InitialDistribution<S>,
    pub inputs: Vec<DVector<S>>,
    pub measurements: MeasurementSource<S>,
    pub horizon: usize,
    pub run: RunConfig<S>,
    pub oracle: Option<ResolvedOracle>,
    pub seeds: ResolvedSeeds,
    pub flags: FlagsConfig,
}

fn matrix_from_rows<S: Scalar>(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<S>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{what} must not be empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what} rows differ in length")));
    }
    let mut m = DMatrix::zeros(rows.len(), ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = S::from_f64_lossy(v);
        }
    }
    Ok(m)
}

fn qc_spec_from_config<S: Scalar>(cfg: &QcSpecConfig) -> Result<QcSpec<S>> {
    let kind = match cfg.kind.as_str() {
        "norm" => QcKind::Norm {
            gamma: cfg.gamma.map(S::from_f64_lossy),
        },
        "sector" => {
            let alpha = cfg
                .alpha
                .ok_or_else(|| Error::Config("sector QC requires 'alpha'".into()))?;
            let beta = cfg
                .beta
                .ok_or_else(|| Error::Config("sector QC requires 'beta'".into()))?;
            QcKind::Sector {
                alpha: S::from_f64_lossy(alpha),
                beta: S::from_f64_lossy(beta),
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown QC kind '{other}' (expected \"norm\" or \"sector\")"
            )))
        }
    };
    let validity = match &cfg.validity_box {
        None => None,
        Some(bounds) => {
            let lo = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| S::from_f64_lossy(b[0])));
            let hi = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| S::from_f64_lossy(b[1])));
            Some(ValidityBox::new(lo, hi)?)
        }
    };
    if cfg.grid_density < 10 {
        return Err(Error::Config("qc grid_density must be >= 10".into()));
    }
    Ok(QcSpec {
        kind,
        validity,
        grid_density: cfg.grid_density,
    })
}

impl ScenarioConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("invalid config JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if !crate::catalog::catalog_ids().contains(&self.system.id.as_str()) {
            return Err(Error::UnsupportedSystem(self.system.id.clone()));
        }
        if let Some(o) = &self.oracle {
            if o.enabled && o.num_trajectories < 2 {
                return Err(Error::Config("oracle.num_trajectories must be >= 2".into()));
            }
            if o.confidence_sigma <= 0.0 {
                return Err(Error::Config("oracle.confidence_sigma must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Seeds derived from the master seed (or an explicit CLI override).
    pub fn resolve_seeds(&self, override_master: Option<u64>) -> ResolvedSeeds {
        let master = override_master.or(self.seed).unwrap_or(0);
        let simulation = match &self.measurements {
            Some(MeasurementConfig::Simulate { seed: Some(s) }) => *s,
            _ => master,
        };
        let oracle = self
            .oracle
            .as_ref()
            .and_then(|o| o.seed)
            .unwrap_or_else(|| master.wrapping_add(1));
        ResolvedSeeds {
            master,
            simulation,
            oracle,
            bootstrap: oracle.wrapping_add(0x5EED),
        }
    }

    /// Build the typed runtime bundle for scalar type S.
    pub fn build_runtime<S: Scalar>(&self, override_master: Option<u64>) -> Result<RuntimeBundle<S>> {
        self.validate()?;
        let seeds = self.resolve_seeds(override_master);

        let mut system: NonlinearSystem<S> = build_system(&self.system.id, &self.system.params)?;
        if let Some(q) = &self.q_override {
            system = system.with_noise(Some(matrix_from_rows(q, "q_override")?), None)?;
        }
        if let Some(r) = &self.r_override {
            system = system.with_noise(None, Some(matrix_from_rows(r, "r_override")?))?;
        }

        if self.initial.mean.len() != system.state_dim {
            return Err(Error::Config(format!(
                "initial.mean has {} entries, system '{}' has {} states",
                self.initial.mean.len(),
                system.name,
                system.state_dim
            )));
        }
        let p0 = matrix_from_rows::<S>(&self.initial.covariance, "initial.covariance")?;
        if p0.nrows() != system.state_dim || p0.ncols() != system.state_dim {
            return Err(Error::Config("initial.covariance has wrong shape".into()));
        }
        let initial = InitialDistribution {
            mean: DVector::from_iterator(
                self.initial.mean.len(),
                self.initial.mean.iter().map(|&v| S::from_f64_lossy(v)),
            ),
            covariance: p0,
        };

        let inputs: Vec<DVector<S>> = match &self.inputs {
            None => Vec::new(),
            Some(seq) => {
                let mut out = Vec::with_capacity(seq.len());
                for row in seq {
                    if row.len() != system.input_dim {
                        return Err(Error::Config(format!(
                            "input rows must have {} entries",
                            system.input_dim
                        )));
                    }
                    out.push(DVector::from_iterator(
                        row.len(),
                        row.iter().map(|&v| S::from_f64_lossy(v)),
                    ));
                }
                out
            }
        };

        let measurements = match &self.measurements {
            None | Some(MeasurementConfig::Simulate { .. }) => MeasurementSource::Simulate {
                seed: seeds.simulation,
            },
            Some(MeasurementConfig::Replay { values }) => {
                let mut out = Vec::with_capacity(values.len());
                for row in values {
                    if row.len() != system.meas_dim {
                        return Err(Error::Config(format!(
                            "measurement rows must have {} entries",
                            system.meas_dim
                        )));
                    }
                    out.push(DVector::from_iterator(
                        row.len(),
                        row.iter().map(|&v| S::from_f64_lossy(v)),
                    ));
                }
                MeasurementSource::Replay(out)
            }
        };

        let sdp_settings = SdpSettings {
            feasibility_tol: S::from_f64_lossy(self.sdp.feasibility_tol),
            gap_tol: S::from_f64_lossy(self.sdp.gap_tol),
            max_iterations: self.sdp.max_iterations,
            barrier_mu: S::from_f64_lossy(20.0),
        };
        let bounds = BoundSettings {
            sdp: sdp_settings,
            strictness: S::from_f64_lossy(self.sdp.eps_strict),
            certificate_tol: S::from_f64_lossy(self.sdp.certificate_tol),
        };

        let step = StepConfig {
            dynamics_qc: match &self.qc.dynamics {
                Some(c) => qc_spec_from_config(c)?,
                None => QcSpec::default(),
            },
            measurement_qc: match &self.qc.measurement {
                Some(c) => qc_spec_from_config(c)?,
                None => QcSpec::default(),
            },
            bounds,
            monitor_sigma: S::from_f64_lossy(self.flags.monitor_sigma),
            continue_on_failure: self.flags.continue_on_failure,
        };

        let oracle = match &self.oracle {
            Some(o) if o.enabled => Some(ResolvedOracle {
                num_trajectories: o.num_trajectories,
                seed: seeds.oracle,
                confidence_sigma: o.confidence_sigma,
                bootstrap_resamples: o.bootstrap_resamples,
                max_violation_rate: o.max_violation_rate,
            }),
            _ => None,
        };

        Ok(RuntimeBundle {
            system,
            initial,
            inputs,
            measurements,
            horizon: self.horizon,
            run: RunConfig {
                step,
                trace_bounds: self.flags.trace_bounds,
            },
            oracle,
            seeds,
            flags: self.flags.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "schema_version": 1,
            "system": {"id": "linear1"},
            "horizon": 5,
            "initial": {"mean": [0.0], "covariance": [[1.0]]}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_and_builds() {
        let cfg = ScenarioConfig::from_json_str(&minimal_json()).unwrap();
        let bundle = cfg.build_runtime::<f64>(None).unwrap();
        assert_eq!(bundle.horizon, 5);
        assert_eq!(bundle.system.state_dim, 1);
        assert!(bundle.oracle.is_none());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = minimal_json().replace("\"horizon\": 5,", "\"horizon\": 5, \"bogus\": 1,");
        assert!(ScenarioConfig::from_json_str(&bad).is_err());
    }

    #[test]
    fn schema_version_is_enforced() {
        let bad = minimal_json().replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(ScenarioConfig::from_json_str(&bad).is_err());
    }

    #[test]
    fn unknown_system_id_is_rejected() {
        let bad = minimal_json().replace("linear1", "warp_drive");
        assert!(ScenarioConfig::from_json_str(&bad).is_err());
    }

    #[test]
    fn horizon_zero_is_rejected() {
        let bad = minimal_json().replace("\"horizon\": 5", "\"horizon\": 0");
        assert!(ScenarioConfig::from_json_str(&bad).is_err());
    }

    #[test]
    fn seed_resolution_is_stable() {
        let cfg = ScenarioConfig::from_json_str(&minimal_json()).unwrap();
        let a = cfg.resolve_seeds(None);
        let b = cfg.resolve_seeds(None);
        assert_eq!(a.master, b.master);
        assert_eq!(a.simulation, b.simulation);
        assert_eq!(a.oracle, b.oracle);
        let c = cfg.resolve_seeds(Some(99));
        assert_eq!(c.master, 99);
        assert_eq!(c.simulation, 99);
    }
}
