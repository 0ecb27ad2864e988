//! Experiment plumbing: parameter sweeps with resumable record files,
//! per-metric aggregate CSVs, and the oracle suite.

mod oracle;
mod plots;
mod sweep;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::MetricsRecord;
use crate::error::{ConfigError, SolveError};
use crate::joint::PolicyId;
use crate::scenario::{place_users, Scenario, DEFAULT_PLACEMENT_SEED, DEFAULT_UAV_POSITIONS};

pub use oracle::{oracle_suite, Mutation, OracleEntry, OracleLimits, OracleReport};
pub use plots::{emit_plots_data, write_plots, PlotCsv, PlotMetric};
pub use sweep::{load_records, run_sweep, SweepManifest, SweepOptions, SweepReport, MANIFEST_FILE, RECORDS_FILE};

/// Version tag written into every record line.
pub const RECORD_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error("malformed data in {}: {message}", path.display())]
    Malformed { path: PathBuf, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}

/// Scenario parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    UavCount,
    /// Per-UAV CPU capacity (Hz).
    UavCpuMax,
    /// Cycles per bit; every task gets exactly this value.
    TaskIntensity,
    /// Bits per task; every arriving task gets exactly this size.
    TaskSize,
    UserCount,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 5] = [SweepAxis::UavCount, SweepAxis::UavCpuMax, SweepAxis::TaskIntensity, SweepAxis::TaskSize, SweepAxis::UserCount];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::UavCount => "uav_count",
            SweepAxis::UavCpuMax => "uav_cpu_max",
            SweepAxis::TaskIntensity => "task_intensity",
            SweepAxis::TaskSize => "task_size",
            SweepAxis::UserCount => "user_count",
        }
    }

    fn is_count(self) -> bool {
        matches!(self, SweepAxis::UavCount | SweepAxis::UserCount)
    }
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepAxis::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| HarnessError::InvalidSpec(format!("unknown axis `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub policies: Vec<PolicyId>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::InvalidSpec(m.to_string()));
        if self.values.is_empty() || self.seeds.is_empty() || self.policies.is_empty() {
            return bad("values, seeds and policies must all be nonempty");
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad("values must be finite");
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("values must be strictly increasing");
        }
        if self.axis.is_count() && self.values.iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return bad("count axes take positive integers");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct");
        }
        let mut policies = self.policies.clone();
        policies.sort_unstable();
        policies.dedup();
        if policies.len() != self.policies.len() {
            return bad("policies must be distinct");
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.values.len() * self.seeds.len() * self.policies.len()
    }
}

/// Scenario at one sweep point. Normalizers stay those of `base`, so
/// objective values are comparable along the axis.
pub fn apply_axis(base: &Scenario, axis: SweepAxis, value: f64) -> Result<Scenario, ConfigError> {
    let mut cfg = base.to_config();
    match axis {
        SweepAxis::UavCount => {
            let k = value as usize;
            let mut starts: Vec<[f64; 2]> = base.uavs.iter().map(|m| m.initial_position).take(k).collect();
            if k > starts.len() {
                if k > DEFAULT_UAV_POSITIONS.len() {
                    return Err(ConfigError::invalid("uavs.count", "no default start position beyond six UAVs"));
                }
                starts.extend_from_slice(&DEFAULT_UAV_POSITIONS[starts.len()..k]);
            }
            cfg.uavs.count = Some(k);
            cfg.uavs.initial_positions = Some(starts);
        }
        SweepAxis::UavCpuMax => cfg.uavs.cpu_max_hz = Some(value),
        SweepAxis::TaskIntensity => cfg.tasks.intensity = Some([value, value]),
        SweepAxis::TaskSize => cfg.tasks.size_bits = Some([value, value]),
        SweepAxis::UserCount => {
            // Base users keep their positions; extra users come from the
            // default placement stream.
            let k = value as usize;
            let mut positions: Vec<[f64; 2]> = base.users.iter().map(|u| u.position).take(k).collect();
            if k > positions.len() {
                let extra = place_users(&base.area, k, DEFAULT_PLACEMENT_SEED);
                positions.extend_from_slice(&extra[positions.len()..]);
            }
            cfg.users.count = Some(k);
            cfg.users.positions = Some(positions);
        }
    }
    cfg.resolve()
}

/// One (sweep point, policy, seed) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema: u32,
    pub axis: SweepAxis,
    pub x_value: f64,
    pub policy: PolicyId,
    pub seed: u64,
    pub metrics: Option<MetricsRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
    pub runtime_ms: f64,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.metrics.is_some()
    }

    /// Same record with the wall-clock field zeroed, for reproducibility checks.
    pub fn without_runtime(&self) -> Self {
        Self { runtime_ms: 0.0, ..self.clone() }
    }
}
