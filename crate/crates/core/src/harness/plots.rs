//! Aggregation of raw records into one CSV per plotted metric.

use std::path::{Path, PathBuf};

use super::{HarnessError, RunRecord, SweepSpec};
use crate::cost::MetricsRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    Objective,
    Delay,
    Energy,
    Offloaded,
}

impl PlotMetric {
    pub const ALL: [PlotMetric; 4] = [PlotMetric::Objective, PlotMetric::Delay, PlotMetric::Energy, PlotMetric::Offloaded];

    pub fn name(self) -> &'static str {
        match self {
            PlotMetric::Objective => "objective",
            PlotMetric::Delay => "delay",
            PlotMetric::Energy => "energy",
            PlotMetric::Offloaded => "offloaded",
        }
    }

    pub fn of(self, m: &MetricsRecord) -> f64 {
        match self {
            PlotMetric::Objective => m.objective,
            PlotMetric::Delay => m.total_delay_s,
            PlotMetric::Energy => m.total_uav_energy_j,
            PlotMetric::Offloaded => m.total_offloaded_bits,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotCsv {
    pub metric: PlotMetric,
    /// File name, `<axis>_<metric>.csv`.
    pub name: String,
    pub contents: String,
}

pub const PLOT_HEADER: &str = "x_value,policy,mean,stddev,n_seeds";

/// Mean and sample standard deviation (zero for a single sample).
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One CSV per metric with a row per (value, policy) that has at least one
/// successful record. Rows follow the spec's value and policy order and
/// samples are summed in seed order, so output is byte-stable.
pub fn emit_plots_data(records: &[RunRecord], spec: &SweepSpec) -> Vec<PlotCsv> {
    PlotMetric::ALL
        .into_iter()
        .map(|metric| {
            let mut contents = format!("{PLOT_HEADER}\n");
            for &x in &spec.values {
                for &policy in &spec.policies {
                    let samples: Vec<f64> = spec
                        .seeds
                        .iter()
                        .filter_map(|&seed| records.iter().find(|r| r.axis == spec.axis && r.x_value == x && r.policy == policy && r.seed == seed))
                        .filter_map(|r| r.metrics.as_ref().map(|m| metric.of(m)))
                        .collect();
                    if samples.is_empty() {
                        continue;
                    }
                    let (mean, std) = mean_std(&samples);
                    contents.push_str(&format!("{x},{policy},{mean},{std},{}\n", samples.len()));
                }
            }
            PlotCsv { metric, name: format!("{}_{}.csv", spec.axis, metric.name()), contents }
        })
        .collect()
}

pub fn write_plots(records: &[RunRecord], spec: &SweepSpec, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    emit_plots_data(records, spec)
        .into_iter()
        .map(|csv| {
            let path = dir.join(&csv.name);
            std::fs::write(&path, csv.contents).map_err(|e| HarnessError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_deviation() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
