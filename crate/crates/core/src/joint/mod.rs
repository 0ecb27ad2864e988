//! Alternating optimization of offloading, CPU allocation and trajectory,
//! plus the benchmark policies that freeze one of the three blocks.

mod baselines;
mod compare;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cost::{evaluate, link_rate, AllocationMatrix, MetricsRecord, OffloadMatrix, TrajectoryPlan};
use crate::error::SolveError;
use crate::offload::{offload_cost_coefficients, solve_offloading, DeadlineInfo};
use crate::resource::{allocate, solve_f_given_lambda, AllocateOptions, ResourceTask, UavCpu, Weighting};
use crate::scenario::{Scenario, TaskSchedule, TaskSpec};
use crate::trajectory::{initial_trajectory, sca_optimize, InitialKind};

pub use baselines::{matching_offloading, nearest_offloading, random_offloading};
pub use compare::{compare, no_worse, ComparisonRow, ComparisonTable, PolicySummary};

/// Safety margin kept below each deadline when sizing CPU floors.
const DEADLINE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyId {
    #[serde(rename = "JTORATC")]
    Jtoratc,
    #[serde(rename = "ROJRATC")]
    Rojratc,
    #[serde(rename = "NOJRATC")]
    Nojratc,
    #[serde(rename = "MOJRATC")]
    Mojratc,
    #[serde(rename = "ERJOTC")]
    Erjotc,
    #[serde(rename = "JORACT")]
    Joract,
    #[serde(rename = "JORAPT")]
    Jorapt,
}

impl PolicyId {
    pub const ALL: [PolicyId; 7] =
        [PolicyId::Jtoratc, PolicyId::Rojratc, PolicyId::Nojratc, PolicyId::Mojratc, PolicyId::Erjotc, PolicyId::Joract, PolicyId::Jorapt];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyId::Jtoratc => "JTORATC",
            PolicyId::Rojratc => "ROJRATC",
            PolicyId::Nojratc => "NOJRATC",
            PolicyId::Mojratc => "MOJRATC",
            PolicyId::Erjotc => "ERJOTC",
            PolicyId::Joract => "JORACT",
            PolicyId::Jorapt => "JORAPT",
        }
    }
}

impl std::fmt::Display for PolicyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PolicyId {
    type Err = SolveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyId::ALL.into_iter().find(|p| p.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| SolveError::InvalidArgument(format!("unknown policy `{s}`")))
    }
}

/// Objective before and after each block update of one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub before: f64,
    pub after_offload: f64,
    pub after_resource: f64,
    pub after_trajectory: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub a: OffloadMatrix,
    pub f: AllocationMatrix,
    pub q: TrajectoryPlan,
    pub metrics: MetricsRecord,
    /// Objective of the starting point followed by one entry per outer iteration.
    pub history: Vec<f64>,
    pub steps: Vec<StepTrace>,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<String>,
    pub wallclock_ms: f64,
}

impl Solution {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OffloadRule {
    Optimize,
    Fixed(OffloadMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationRule {
    Optimize,
    /// `f_max / (assigned users)` per UAV and slot.
    EvenSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryRule {
    Optimize,
    Fixed,
}

/// Which blocks the alternation updates, and where it starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Alternation {
    pub offload: OffloadRule,
    pub allocation: AllocationRule,
    pub trajectory: TrajectoryRule,
    pub init: TrajectoryPlan,
    pub epsilon: f64,
    pub max_outer: usize,
}

impl Alternation {
    /// Every block optimized, starting from `init`.
    pub fn full(s: &Scenario, init: TrajectoryPlan) -> Self {
        Self {
            offload: OffloadRule::Optimize,
            allocation: AllocationRule::Optimize,
            trajectory: TrajectoryRule::Optimize,
            init,
            epsilon: s.solver.outer_eps,
            max_outer: s.solver.max_outer,
        }
    }
}

/// Smallest CPU frequency meeting the deadline at `rate`, or `None` if the
/// upload alone misses it.
pub fn deadline_floor(task: &TaskSpec, rate: f64) -> Option<f64> {
    if task.is_empty() {
        return Some(0.0);
    }
    if !(rate > 0.0) {
        return None;
    }
    let upload = task.size_bits / rate;
    let spare = task.deadline_s * (1.0 - DEADLINE_MARGIN) - upload;
    if spare > 0.0 {
        return Some(task.cycles() / spare);
    }
    let exact = task.deadline_s - upload;
    if exact > 0.0 {
        Some(task.cycles() / exact)
    } else {
        None
    }
}

fn weighting(s: &Scenario) -> Weighting {
    Weighting { delay: s.weights.delay_scale(), energy: s.weights.energy_scale() }
}

/// Frequency a not-yet-assigned pair would receive if chosen; zero when
/// the deadline cannot be met within a per-user capacity share.
pub fn standby_offer(s: &Scenario, tasks: &TaskSchedule, q: &TrajectoryPlan, rule: AllocationRule, u: usize, m: usize, n: usize) -> f64 {
    let task = tasks.get(u, n);
    if task.is_empty() {
        return 0.0;
    }
    let uav = &s.uavs[m];
    let share = uav.cpu_max_hz / s.solver.max_users_per_uav.max(1) as f64;
    let Some(lb) = deadline_floor(task, link_rate(s, u, q.pos(m, n))) else { return 0.0 };
    if lb > share {
        return 0.0;
    }
    match rule {
        AllocationRule::EvenSplit => share,
        AllocationRule::Optimize => {
            let rt = ResourceTask { cycles: task.cycles(), min_hz: lb };
            let cpu = UavCpu { cap_coeff: uav.cap_coeff, max_hz: share };
            solve_f_given_lambda(0.0, &rt, &cpu, &weighting(s))
        }
    }
}

fn offers(s: &Scenario, tasks: &TaskSchedule, q: &TrajectoryPlan, rule: AllocationRule, a: &OffloadMatrix, f: &AllocationMatrix) -> AllocationMatrix {
    let mut out = AllocationMatrix::for_scenario(s);
    for n in 0..s.n_slots() {
        for u in 0..s.n_users() {
            for m in 0..s.n_uavs() {
                let cur = f.get(m, u, n);
                let hz = if a.get(u, m, n) && cur > 0.0 { cur } else { standby_offer(s, tasks, q, rule, u, m, n) };
                out.set(m, u, n, hz);
            }
        }
    }
    out
}

/// Allocation implied by `a` when each chosen pair takes its offer.
fn take_offers(s: &Scenario, a: &OffloadMatrix, offers: &AllocationMatrix) -> AllocationMatrix {
    let mut f = AllocationMatrix::for_scenario(s);
    for n in 0..s.n_slots() {
        for u in 0..s.n_users() {
            if let Some(m) = a.assigned_uav(u, n) {
                f.set(m, u, n, offers.get(m, u, n));
            }
        }
    }
    f
}

fn even_split(s: &Scenario, a: &OffloadMatrix) -> AllocationMatrix {
    let mut f = AllocationMatrix::for_scenario(s);
    for n in 0..s.n_slots() {
        for m in 0..s.n_uavs() {
            let users = a.users_on(m, n);
            for &u in &users {
                f.set(m, u, n, s.uavs[m].cpu_max_hz / users.len() as f64);
            }
        }
    }
    f
}

/// Per-UAV per-slot optimal allocation; slots whose deadline floors do
/// not fit keep their previous allocation.
fn optimize_allocation(
    s: &Scenario,
    tasks: &TaskSchedule,
    a: &OffloadMatrix,
    f: &AllocationMatrix,
    q: &TrajectoryPlan,
    diag: &mut Vec<String>,
) -> AllocationMatrix {
    let mut out = f.masked(a);
    let w = weighting(s);
    let opts = AllocateOptions { eps_rel: s.solver.bisection_eps_rel, flip_residual_sign: false };
    for n in 0..s.n_slots() {
        for m in 0..s.n_uavs() {
            let users = a.users_on(m, n);
            if users.is_empty() {
                continue;
            }
            let mut rts = Vec::with_capacity(users.len());
            for &u in &users {
                let task = tasks.get(u, n);
                let lb = deadline_floor(task, link_rate(s, u, q.pos(m, n))).unwrap_or(f64::INFINITY);
                rts.push(ResourceTask { cycles: task.cycles(), min_hz: lb });
            }
            let cpu = UavCpu { cap_coeff: s.uavs[m].cap_coeff, max_hz: s.uavs[m].cpu_max_hz };
            match allocate(&cpu, &rts, &w, &opts) {
                Ok(al) => {
                    for (&u, &hz) in users.iter().zip(&al.freqs) {
                        out.set(m, u, n, hz);
                    }
                }
                Err(e) => diag.push(format!("allocation kept for UAV {m} slot {n}: {e}")),
            }
        }
    }
    out
}

fn objective(s: &Scenario, tasks: &TaskSchedule, a: &OffloadMatrix, f: &AllocationMatrix, q: &TrajectoryPlan) -> Option<f64> {
    evaluate(s, tasks, a, f, q).ok().map(|m| m.objective)
}

/// Runs the alternation described by `alt`.
///
/// Each block update is accepted only if the full objective does not
/// increase and every constraint still holds, so the history is
/// non-increasing by construction. The best iterate is returned.
pub fn alternate(s: &Scenario, tasks: &TaskSchedule, alt: &Alternation) -> Result<Solution, SolveError> {
    let start = Instant::now();
    let mut diagnostics = Vec::new();
    let mut q = alt.init.clone();
    let (mut a, mut f) = match &alt.offload {
        OffloadRule::Optimize => (OffloadMatrix::for_scenario(s), AllocationMatrix::for_scenario(s)),
        OffloadRule::Fixed(a0) => {
            let off = offers(s, tasks, &q, alt.allocation, &OffloadMatrix::for_scenario(s), &AllocationMatrix::for_scenario(s));
            let f0 = match alt.allocation {
                AllocationRule::EvenSplit => even_split(s, a0),
                AllocationRule::Optimize => take_offers(s, a0, &off),
            };
            (a0.clone(), f0)
        }
    };
    let mut rho = evaluate(s, tasks, &a, &f, &q).map_err(|e| SolveError::Infeasible(format!("starting point rejected: {e}")))?.objective;
    let mut history = vec![rho];
    let mut steps = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < alt.max_outer {
        iterations += 1;
        let before = rho;

        if alt.offload == OffloadRule::Optimize {
            let off = offers(s, tasks, &q, alt.allocation, &a, &f);
            let costs = offload_cost_coefficients(s, tasks, &off, &q);
            let info = DeadlineInfo::new(s, tasks, &off, &q);
            let outcome = solve_offloading(&costs, &s.solver, Some(&info));
            let cand_f = match alt.allocation {
                AllocationRule::EvenSplit => even_split(s, &outcome.a),
                AllocationRule::Optimize => take_offers(s, &outcome.a, &off),
            };
            match objective(s, tasks, &outcome.a, &cand_f, &q) {
                Some(r) if r <= rho => {
                    a = outcome.a;
                    f = cand_f;
                    rho = r;
                }
                Some(_) => {}
                None => diagnostics.push(format!("outer {iterations}: offloading candidate infeasible, kept incumbent")),
            }
        }
        let after_offload = rho;

        let cand_f = match alt.allocation {
            AllocationRule::EvenSplit => even_split(s, &a),
            AllocationRule::Optimize => optimize_allocation(s, tasks, &a, &f, &q, &mut diagnostics),
        };
        match objective(s, tasks, &a, &cand_f, &q) {
            Some(r) if r <= rho => {
                f = cand_f;
                rho = r;
            }
            Some(_) => {}
            None => diagnostics.push(format!("outer {iterations}: allocation candidate infeasible, kept incumbent")),
        }
        let after_resource = rho;

        if alt.trajectory == TrajectoryRule::Optimize {
            match sca_optimize(s, tasks, &a, &f, &q, s.solver.sca_max_iters, s.solver.sca_tol) {
                Ok(out) => {
                    if out.stalled {
                        diagnostics.push(format!("outer {iterations}: trajectory subproblem stalled"));
                    }
                    if out.objective <= rho {
                        q = out.plan;
                        rho = out.objective;
                    }
                }
                Err(e) => diagnostics.push(format!("outer {iterations}: trajectory step skipped: {e}")),
            }
        }
        steps.push(StepTrace { before, after_offload, after_resource, after_trajectory: rho });
        history.push(rho);
        if (before - rho).abs() <= alt.epsilon * before.abs().max(1e-300) {
            converged = true;
            break;
        }
    }
    let metrics = evaluate(s, tasks, &a, &f, &q).expect("accepted iterates are feasible");
    Ok(Solution { a, f, q, metrics, history, steps, iterations, converged, diagnostics, wallclock_ms: start.elapsed().as_secs_f64() * 1e3 })
}

/// Default starting trajectory: circles flown at the configured cruise speed.
pub fn default_initial(s: &Scenario) -> Result<TrajectoryPlan, SolveError> {
    initial_trajectory(s, &InitialKind::Circular { speed: s.solver.cruise_speed })
}

/// Full joint optimization from the given starting trajectory.
pub fn optimize(s: &Scenario, tasks: &TaskSchedule, init: &TrajectoryPlan, epsilon: f64, max_outer: usize) -> Result<Solution, SolveError> {
    let mut alt = Alternation::full(s, init.clone());
    alt.epsilon = epsilon;
    alt.max_outer = max_outer;
    alternate(s, tasks, &alt)
}

/// Runs one policy with the scenario's solver settings.
pub fn run_policy(policy: PolicyId, s: &Scenario, tasks: &TaskSchedule, seed: u64) -> Result<Solution, SolveError> {
    let circle = default_initial(s)?;
    let mut alt = Alternation::full(s, circle.clone());
    let standby = |rule| offers(s, tasks, &circle, rule, &OffloadMatrix::for_scenario(s), &AllocationMatrix::for_scenario(s));
    match policy {
        PolicyId::Jtoratc => {}
        PolicyId::Rojratc => alt.offload = OffloadRule::Fixed(random_offloading(s, tasks, &standby(AllocationRule::Optimize), &circle, seed)),
        PolicyId::Nojratc => alt.offload = OffloadRule::Fixed(nearest_offloading(s, tasks, &standby(AllocationRule::Optimize), &circle)),
        PolicyId::Mojratc => alt.offload = OffloadRule::Fixed(matching_offloading(s, tasks, &standby(AllocationRule::Optimize), &circle)),
        PolicyId::Erjotc => alt.allocation = AllocationRule::EvenSplit,
        PolicyId::Joract => alt.trajectory = TrajectoryRule::Fixed,
        PolicyId::Jorapt => {
            alt.init = initial_trajectory(s, &InitialKind::Predefined { speed: s.solver.cruise_speed, legs: 2 })?;
            alt.trajectory = TrajectoryRule::Fixed;
        }
    }
    alternate(s, tasks, &alt)
}

/// Joint optimization of allocation and trajectory under a fixed
/// offloading decision.
pub fn run_with_fixed_offloading(s: &Scenario, tasks: &TaskSchedule, a: &OffloadMatrix) -> Result<Solution, SolveError> {
    let mut alt = Alternation::full(s, default_initial(s)?);
    alt.offload = OffloadRule::Fixed(a.clone());
    alternate(s, tasks, &alt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        Scenario::from_toml_str("[time]\nn_slots = 16\nhorizon_s = 60.0\n[users]\ncount = 4\n").unwrap()
    }

    #[test]
    fn policy_names_round_trip() {
        for p in PolicyId::ALL {
            assert_eq!(p.as_str().parse::<PolicyId>().unwrap(), p);
        }
        assert!("nope".parse::<PolicyId>().is_err());
    }

    #[test]
    fn deadline_floor_hand_value() {
        let t = TaskSpec { size_bits: 1e6, intensity: 1000.0, deadline_s: 2.0 };
        let lb = deadline_floor(&t, 1e6).unwrap();
        assert!((lb - 1e9 / (2.0 * (1.0 - DEADLINE_MARGIN) - 1.0)).abs() < 1.0);
        assert!(deadline_floor(&t, 4e5).is_none());
    }

    #[test]
    fn one_outer_iteration_runs_each_block_once() {
        let s = small();
        let tasks = s.generate_tasks(2);
        let init = default_initial(&s).unwrap();
        let sol = optimize(&s, &tasks, &init, 1e-4, 1).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.steps.len(), 1);
        assert_eq!(sol.history.len(), 2);
    }

    #[test]
    fn descent_chain_holds_and_converges() {
        let s = small();
        for seed in 0..3 {
            let tasks = s.generate_tasks(seed);
            let sol = run_policy(PolicyId::Jtoratc, &s, &tasks, seed).unwrap();
            assert!(sol.converged);
            for st in &sol.steps {
                assert!(st.after_offload <= st.before);
                assert!(st.after_resource <= st.after_offload);
                assert!(st.after_trajectory <= st.after_resource);
            }
            assert!(sol.history.windows(2).all(|w| w[1] <= w[0]));
            assert!(sol.metrics.total_offloaded_bits > 0.0);
        }
    }

    #[test]
    fn even_split_halves_capacity() {
        let s = Scenario::from_toml_str("[solver]\nmax_users_per_uav = 2\n").unwrap();
        let mut a = OffloadMatrix::for_scenario(&s);
        a.set(0, 0, 3, true);
        a.set(1, 0, 3, true);
        let f = even_split(&s, &a);
        assert_eq!(f.get(0, 0, 3), 0.6e9);
        assert_eq!(f.get(0, 1, 3), 0.6e9);
    }
}
