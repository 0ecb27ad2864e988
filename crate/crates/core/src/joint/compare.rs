//! Policy-by-seed comparison tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_policy, PolicyId};
use crate::error::SolveError;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: PolicyId,
    pub seed: u64,
    pub objective: f64,
    pub delay_s: f64,
    pub energy_j: f64,
    pub offloaded_bits: f64,
    pub iterations: usize,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyId,
    pub mean_objective: f64,
    pub mean_delay_s: f64,
    pub mean_energy_j: f64,
    pub mean_offloaded_bits: f64,
    /// Share of seeds on which JTORATC is at least as good; `None` for
    /// JTORATC itself or when it was not run.
    pub jtoratc_win_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub summaries: Vec<PolicySummary>,
}

/// `ours` counts as no worse than `theirs` up to a relative tie tolerance.
pub fn no_worse(ours: f64, theirs: f64) -> bool {
    ours <= theirs + 1e-9 * theirs.abs()
}

impl ComparisonTable {
    pub const CSV_HEADER: &'static str = "policy,seed,objective,delay_s,energy_j,offloaded_bits,iterations,wallclock_ms";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3}\n",
                r.policy, r.seed, r.objective, r.delay_s, r.energy_j, r.offloaded_bits, r.iterations, r.wallclock_ms
            ));
        }
        out
    }

    fn summarize(rows: &[ComparisonRow], policies: &[PolicyId]) -> Vec<PolicySummary> {
        let mut seen = Vec::new();
        for &p in policies {
            if !seen.contains(&p) {
                seen.push(p);
            }
        }
        let ours = |seed: u64| rows.iter().find(|r| r.policy == PolicyId::Jtoratc && r.seed == seed).map(|r| r.objective);
        seen.into_iter()
            .map(|p| {
                let mine: Vec<&ComparisonRow> = rows.iter().filter(|r| r.policy == p).collect();
                let k = mine.len().max(1) as f64;
                let mean = |g: fn(&ComparisonRow) -> f64| mine.iter().map(|r| g(r)).sum::<f64>() / k;
                let win_rate = if p == PolicyId::Jtoratc {
                    None
                } else {
                    let pairs: Vec<bool> = mine.iter().filter_map(|r| ours(r.seed).map(|o| no_worse(o, r.objective))).collect();
                    (!pairs.is_empty()).then(|| pairs.iter().filter(|&&w| w).count() as f64 / pairs.len() as f64)
                };
                PolicySummary {
                    policy: p,
                    mean_objective: mean(|r| r.objective),
                    mean_delay_s: mean(|r| r.delay_s),
                    mean_energy_j: mean(|r| r.energy_j),
                    mean_offloaded_bits: mean(|r| r.offloaded_bits),
                    jtoratc_win_rate: win_rate,
                }
            })
            .collect()
    }
}

/// Runs every policy on every seed; tasks for a seed come from
/// `Scenario::generate_tasks`. Cells run in parallel, rows come back in
/// (seed, policy) order.
pub fn compare(s: &Scenario, policies: &[PolicyId], seeds: &[u64]) -> Result<ComparisonTable, SolveError> {
    if policies.is_empty() || seeds.is_empty() {
        return Err(SolveError::InvalidArgument("need at least one policy and one seed".into()));
    }
    let cells: Vec<(u64, PolicyId)> = seeds.iter().flat_map(|&seed| policies.iter().map(move |&p| (seed, p))).collect();
    let rows = cells
        .par_iter()
        .map(|&(seed, policy)| {
            let tasks = s.generate_tasks(seed);
            let sol = run_policy(policy, s, &tasks, seed)?;
            Ok(ComparisonRow {
                policy,
                seed,
                objective: sol.metrics.objective,
                delay_s: sol.metrics.total_delay_s,
                energy_j: sol.metrics.total_uav_energy_j,
                offloaded_bits: sol.metrics.total_offloaded_bits,
                iterations: sol.iterations,
                wallclock_ms: sol.wallclock_ms,
            })
        })
        .collect::<Result<Vec<_>, SolveError>>()?;
    let summaries = ComparisonTable::summarize(&rows, policies);
    Ok(ComparisonTable { rows, summaries })
}
