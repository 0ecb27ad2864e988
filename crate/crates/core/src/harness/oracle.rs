//! Solver-versus-oracle comparisons on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{expected_channel_gain, ChannelParams, ChannelSampler, LinkGeometry};
use crate::cost::propulsion_power;
use crate::offload::{exact_offload_oracle, solve_offloading, OffloadCosts};
use crate::resource::{allocate, allocation_objective, grid_search_allocation, kkt_certificate, AllocateOptions, ResourceTask, UavCpu, Weighting};
use crate::scenario::{PropulsionParams, Scenario, SolverConfig};
use crate::trajectory::{separation_surrogate, speed_surrogate};

/// Deliberate solver faults used to check that the suite notices them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Mutation {
    #[default]
    None,
    /// Flip the multiplier sign in the allocation residual.
    FlipResidualSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub seed: u64,
    pub allocation_instances: usize,
    /// Largest user count in an allocation instance (grid search is cubic).
    pub allocation_max_users: usize,
    pub grid_steps: usize,
    pub offload_instances: usize,
    /// Largest `users · uavs · slots` of an offloading instance.
    pub offload_max_cells: usize,
    pub channel_samples: usize,
    pub surrogate_checks: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            seed: 2024,
            allocation_instances: 200,
            allocation_max_users: 3,
            grid_steps: 1000,
            offload_instances: 100,
            offload_max_cells: 18,
            channel_samples: 1_000_000,
            surrogate_checks: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub name: String,
    pub instances: usize,
    /// Worst observed deviation, in the units the tolerance is stated in.
    pub max_deviation: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub entries: Vec<OracleEntry>,
    pub passed: bool,
}

impl OracleReport {
    pub fn entry(&self, name: &str) -> Option<&OracleEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

fn entry(name: &str, instances: usize, max_deviation: f64, tolerance: f64, detail: String) -> OracleEntry {
    OracleEntry { name: name.to_string(), instances, max_deviation, tolerance, passed: max_deviation <= tolerance, detail }
}

fn scenario_weighting(s: &Scenario) -> Weighting {
    Weighting { delay: s.weights.delay_scale(), energy: s.weights.energy_scale() }
}

/// Random allocation instance whose deadline floors fit the capacity.
fn allocation_instance(rng: &mut ChaCha8Rng, max_users: usize, cpu: &UavCpu) -> Vec<ResourceTask> {
    let k = rng.gen_range(1..=max_users);
    (0..k)
        .map(|_| {
            let cycles = rng.gen_range(0.5e6..3e6) * rng.gen_range(500.0..1500.0);
            let min_hz = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.9 / k as f64) * cpu.max_hz } else { 0.0 };
            ResourceTask { cycles, min_hz }
        })
        .collect()
}

fn allocation_entries(limits: &OracleLimits, mutation: Mutation) -> Vec<OracleEntry> {
    let base = Scenario::default_scenario();
    let uav = &base.uavs[0];
    let cpu = UavCpu { cap_coeff: uav.cap_coeff, max_hz: uav.cpu_max_hz };
    let w = scenario_weighting(&base);
    let opts = AllocateOptions { eps_rel: 1e-9, flip_residual_sign: mutation == Mutation::FlipResidualSign };
    let mut rng = ChaCha8Rng::seed_from_u64(limits.seed ^ 0xa110c);
    let (mut worst_gap, mut worst_kkt, mut failures) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..limits.allocation_instances {
        let tasks = allocation_instance(&mut rng, limits.allocation_max_users, &cpu);
        let Some((_, grid)) = grid_search_allocation(&cpu, &tasks, &w, limits.grid_steps) else { continue };
        match allocate(&cpu, &tasks, &w, &opts) {
            Ok(al) => {
                let ours = allocation_objective(&al.freqs, &tasks, &cpu, &w);
                let infeasible =
                    al.freqs.iter().sum::<f64>() > cpu.max_hz * (1.0 + 1e-9) || al.freqs.iter().zip(&tasks).any(|(&f, t)| f < t.min_hz * (1.0 - 1e-9));
                let gap = if infeasible { f64::INFINITY } else { ((ours - grid) / grid.abs()).max(0.0) };
                worst_gap = worst_gap.max(gap);
                let c = kkt_certificate(&al, &tasks, &cpu, &w);
                worst_kkt = worst_kkt.max(c.stationarity).max(c.complementary_slackness).max(c.primal_excess);
            }
            Err(_) => failures += 1,
        }
    }
    if failures > 0 {
        worst_gap = f64::INFINITY;
    }
    let n = limits.allocation_instances;
    vec![
        entry("allocation_vs_grid", n, worst_gap, 1e-3, format!("relative objective excess over grid search; {failures} solver failures")),
        entry("allocation_kkt", n, worst_kkt, 1e-6, "scaled stationarity / complementary slackness / primal excess".into()),
    ]
}

/// Random offloading instance with at most `max_cells` decision cells.
fn offload_instance(rng: &mut ChaCha8Rng, max_cells: usize) -> OffloadCosts {
    let (nu, nm, nn) = loop {
        let t = (rng.gen_range(1..=4usize), rng.gen_range(1..=3usize), rng.gen_range(1..=3usize));
        if t.0 * t.1 * t.2 <= max_cells {
            break t;
        }
    };
    let quota = rng.gen_range(1..=2);
    let local = (0..nu * nn).map(|_| rng.gen_range(1.0..3.0)).collect();
    let offload = (0..nu * nm * nn).map(|_| if rng.gen_bool(0.1) { f64::INFINITY } else { rng.gen_range(0.2..4.0) }).collect();
    OffloadCosts::from_parts(nu, nm, nn, quota, local, offload)
}

fn offload_entries(limits: &OracleLimits) -> Vec<OracleEntry> {
    let cfg = SolverConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(limits.seed ^ 0x0ff1);
    let (mut worst_gap, mut worst_integral, mut worst_zeta) = (0.0f64, 0.0f64, 0.0f64);
    let mut integral = 0;
    for _ in 0..limits.offload_instances {
        let costs = offload_instance(&mut rng, limits.offload_max_cells);
        let Ok((_, exact)) = exact_offload_oracle(&costs, 1 << 20) else { continue };
        let out = solve_offloading(&costs, &cfg, None);
        let gap = (out.objective - exact) / exact.abs();
        worst_gap = worst_gap.max(gap);
        if out.relaxed.fractional.is_integral() {
            integral += 1;
            worst_integral = worst_integral.max(gap.abs());
        }
        worst_zeta = worst_zeta.max((1.0 - out.after_repair.zeta).abs());
    }
    let n = limits.offload_instances;
    vec![
        entry("offload_vs_exhaustive", n, worst_gap, 0.05, "relative excess of relax-round-repair over enumeration".into()),
        entry("offload_integral_exact", integral, worst_integral, 1e-9, "relative gap when the relaxation is already integral".into()),
        entry("offload_repaired_gap", n, worst_zeta, 0.0, "|1 - zeta| after repair".into()),
    ]
}

fn channel_entries(limits: &OracleLimits) -> Vec<OracleEntry> {
    let params = ChannelParams { shadow_std_los_db: 0.0, shadow_std_nlos_db: 0.0, ..ChannelParams::default() };
    let n = limits.channel_samples.max(1);
    let mut worst = 0.0f64;
    for (i, r) in [0.0, 250.0, 1000.0].into_iter().enumerate() {
        let g = LinkGeometry::new(r, 100.0);
        let mut sampler = ChannelSampler::new(params, limits.seed ^ (0xc4a0 + i as u64));
        let mean = (0..n).map(|_| sampler.sample(&g)).sum::<f64>() / n as f64;
        let expected = expected_channel_gain(&g, &params);
        worst = worst.max(((mean - expected) / expected).abs());
    }

    // Kolmogorov-Smirnov against Exp(mean_power) for unit Nakagami shape.
    let m = (n / 10).max(100);
    let mut sampler = ChannelSampler::new(params, limits.seed ^ 0xe4b);
    let mut xs: Vec<f64> = (0..m).map(|_| sampler.fading_power(1.0)).collect();
    xs.sort_by(f64::total_cmp);
    let pbar = params.mean_power;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = 1.0 - (-x / pbar).exp();
            (cdf - i as f64 / m as f64).abs().max(((i + 1) as f64 / m as f64 - cdf).abs())
        })
        .fold(0.0f64, f64::max);
    // Asymptotic critical value of sqrt(m)·D at significance 0.01.
    let ks_critical = 1.6276;
    vec![
        entry("channel_monte_carlo", 3 * n, worst, 0.01, "relative error of the sample mean gain, shadowing off".into()),
        entry("nakagami_exponential_ks", m, d * (m as f64).sqrt(), ks_critical, "sqrt(n)·D against the exponential law".into()),
    ]
}

fn propulsion_entry() -> OracleEntry {
    let p = PropulsionParams::default();
    let (v_star, p_star) = (0..=6000)
        .map(|i| {
            let v = i as f64 * 0.01;
            (v, propulsion_power(v, &p))
        })
        .fold((0.0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
    let ends = propulsion_power(0.0, &p).min(propulsion_power(60.0, &p));
    // Negative when the minimum is interior and strictly below both ends.
    entry("propulsion_interior_minimum", 6001, p_star / ends - 1.0, -1e-6, format!("grid minimizer {v_star:.2} m/s at {p_star:.3} W"))
}

fn surrogate_entry(limits: &OracleLimits) -> OracleEntry {
    let mut rng = ChaCha8Rng::seed_from_u64(limits.seed ^ 0x5a);
    let mut pt = |scale: f64| [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)];
    let mut worst = 0.0f64;
    for _ in 0..limits.surrogate_checks {
        let (v, vr) = (pt(60.0), pt(60.0));
        let true_sq = v[0] * v[0] + v[1] * v[1];
        worst = worst.max((speed_surrogate(v, vr) - true_sq) / (1.0 + true_sq));
        let exact = vr[0] * vr[0] + vr[1] * vr[1];
        worst = worst.max((speed_surrogate(vr, vr) - exact).abs() / (1.0 + exact));

        let (qm, qi, qmr, qir) = (pt(3000.0), pt(3000.0), pt(3000.0), pt(3000.0));
        let d = [qm[0] - qi[0], qm[1] - qi[1]];
        let sep = d[0] * d[0] + d[1] * d[1];
        if let Some(lb) = separation_surrogate(qm, qi, qmr, qir) {
            worst = worst.max((lb - sep) / (1.0 + sep));
        }
        let dr = [qmr[0] - qir[0], qmr[1] - qir[1]];
        let sep_r = dr[0] * dr[0] + dr[1] * dr[1];
        if let Some(at) = separation_surrogate(qmr, qir, qmr, qir) {
            worst = worst.max((at - sep_r).abs() / (1.0 + sep_r));
        }
    }
    entry("surrogate_lower_bounds", 2 * limits.surrogate_checks, worst, 1e-12, "excess of linearized squares over true squares".into())
}

/// Runs every oracle comparison. Failures are report entries, never errors.
pub fn oracle_suite(limits: &OracleLimits, mutation: Mutation) -> OracleReport {
    let mut entries = allocation_entries(limits, mutation);
    entries.extend(offload_entries(limits));
    entries.extend(channel_entries(limits));
    entries.push(propulsion_entry());
    entries.push(surrogate_entry(limits));
    let passed = entries.iter().all(|e| e.passed);
    OracleReport { entries, passed }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> OracleLimits {
        OracleLimits {
            allocation_instances: 30,
            grid_steps: 600,
            offload_instances: 30,
            channel_samples: 200_000,
            surrogate_checks: 1000,
            ..OracleLimits::default()
        }
    }

    #[test]
    fn quick_suite_passes() {
        let r = oracle_suite(&quick(), Mutation::None);
        for e in &r.entries {
            assert!(e.passed, "{e:?}");
        }
        assert!(r.passed);
    }

    #[test]
    fn residual_sign_mutation_is_caught() {
        let r = oracle_suite(&quick(), Mutation::FlipResidualSign);
        assert!(!r.passed);
        assert!(!r.entry("allocation_vs_grid").unwrap().passed || !r.entry("allocation_kkt").unwrap().passed);
    }
}
