//! Offloading sub-problem with allocation and trajectory fixed: relaxation,
//! threshold rounding, integrality accounting and repair.
//!
//! Index convention: the local share `x[u][n]` is the relaxed value of
//! `1 - Σ_m a[u][m][n]`, and the offload share `y[m][u][n]` is the relaxed
//! value of `a[u][m][n]`. Each user's shares sum to one.

use serde::{Deserialize, Serialize};

use crate::cost::{link_rate, local_delay, offload_delay, uav_compute_energy, AllocationMatrix, OffloadMatrix, TrajectoryPlan};
use crate::error::SolveError;
use crate::flow::MinCostFlow;
use crate::scenario::{Scenario, SolverConfig, TaskSchedule};

/// Per-cell costs of the offloading decision.
///
/// `local[(n,u)]` is the objective contribution of running the task on
/// the device, `offload[(n,u,m)]` that of sending it to UAV `m` (infinite
/// when the deadline or link makes it impossible). The marginal
/// coefficient of `a = 1` is their difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadCosts {
    pub n_users: usize,
    pub n_uavs: usize,
    pub n_slots: usize,
    pub quota: usize,
    pub local: Vec<f64>,
    pub offload: Vec<f64>,
    /// CPU offer each cell would receive (Hz); zero when unknown.
    pub offer_hz: Vec<f64>,
    /// Per-UAV CPU capacity (Hz).
    pub capacity_hz: Vec<f64>,
}

impl OffloadCosts {
    /// Costs from explicit tables, capacity unconstrained.
    pub fn from_parts(n_users: usize, n_uavs: usize, n_slots: usize, quota: usize, local: Vec<f64>, offload: Vec<f64>) -> Self {
        assert_eq!(local.len(), n_users * n_slots);
        assert_eq!(offload.len(), n_users * n_uavs * n_slots);
        Self { n_users, n_uavs, n_slots, quota, local, offload, offer_hz: vec![0.0; n_users * n_uavs * n_slots], capacity_hz: vec![f64::INFINITY; n_uavs] }
    }

    #[inline]
    fn cell(&self, u: usize, m: usize, n: usize) -> usize {
        (n * self.n_users + u) * self.n_uavs + m
    }

    #[inline]
    pub fn local_cost(&self, u: usize, n: usize) -> f64 {
        self.local[n * self.n_users + u]
    }

    #[inline]
    pub fn offload_cost(&self, u: usize, m: usize, n: usize) -> f64 {
        self.offload[self.cell(u, m, n)]
    }

    /// Marginal cost of `a[u][m][n] = 1` versus local execution.
    #[inline]
    pub fn coefficient(&self, u: usize, m: usize, n: usize) -> f64 {
        let c = self.offload_cost(u, m, n);
        if c.is_finite() {
            c - self.local_cost(u, n)
        } else {
            f64::INFINITY
        }
    }

    #[inline]
    pub fn offer(&self, u: usize, m: usize, n: usize) -> f64 {
        self.offer_hz[self.cell(u, m, n)]
    }

    /// Objective of a binary decision under these costs.
    pub fn objective(&self, a: &OffloadMatrix) -> f64 {
        let mut total = 0.0;
        for n in 0..self.n_slots {
            for u in 0..self.n_users {
                total += match a.assigned_uav(u, n) {
                    Some(m) => self.offload_cost(u, m, n),
                    None => self.local_cost(u, n),
                };
            }
        }
        total
    }

    /// Objective of a fractional decision (infinite cells with zero share ignored).
    pub fn fractional_objective(&self, fr: &FractionalAssignment) -> f64 {
        let mut total = 0.0;
        for n in 0..self.n_slots {
            for u in 0..self.n_users {
                total += fr.x(u, n) * self.local_cost(u, n);
                for m in 0..self.n_uavs {
                    let y = fr.y(m, u, n);
                    if y > 0.0 {
                        total += y * self.offload_cost(u, m, n);
                    }
                }
            }
        }
        total
    }

    /// Debug dump: `slot,user,uav,local,offload,coefficient`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("slot,user,uav,local,offload,coefficient\n");
        for n in 0..self.n_slots {
            for u in 0..self.n_users {
                for m in 0..self.n_uavs {
                    s.push_str(&format!("{n},{u},{m},{},{},{}\n", self.local_cost(u, n), self.offload_cost(u, m, n), self.coefficient(u, m, n)));
                }
            }
        }
        s
    }
}

/// Marginal coefficient from raw quantities and per-unit weights.
pub fn marginal_coefficient(delay_gain_s: f64, compute_energy_j: f64, bits: f64, delay_scale: f64, energy_scale: f64, offload_scale: f64) -> f64 {
    delay_scale * delay_gain_s + energy_scale * compute_energy_j - offload_scale * bits
}

/// Cost tables for the current allocation offers and trajectory.
///
/// `offers` must hold the frequency each (UAV, user, slot) pair would get
/// if the pair were chosen, including pairs not currently assigned.
pub fn offload_cost_coefficients(s: &Scenario, tasks: &TaskSchedule, offers: &AllocationMatrix, q: &TrajectoryPlan) -> OffloadCosts {
    let (nu, nm, nn) = (s.n_users(), s.n_uavs(), s.n_slots());
    let w = &s.weights;
    let (ws_d, ws_e, ws_k) = (w.delay_scale(), w.energy_scale(), w.offload_scale());
    let mut local = vec![0.0; nu * nn];
    let mut offload = vec![f64::INFINITY; nu * nm * nn];
    let mut offer_hz = vec![0.0; nu * nm * nn];
    for n in 0..nn {
        for u in 0..nu {
            let task = tasks.get(u, n);
            local[n * nu + u] = ws_d * local_delay(task, &s.users[u]);
            for m in 0..nm {
                let i = (n * nu + u) * nm + m;
                let hz = offers.get(m, u, n);
                offer_hz[i] = hz;
                if task.is_empty() {
                    continue;
                }
                let t_off = offload_delay(task, link_rate(s, u, q.pos(m, n)), hz);
                if t_off.is_finite() && t_off <= task.deadline_s {
                    offload[i] = ws_d * t_off + ws_e * uav_compute_energy(task, hz, &s.uavs[m]) - ws_k * task.size_bits;
                }
            }
        }
    }
    OffloadCosts {
        n_users: nu,
        n_uavs: nm,
        n_slots: nn,
        quota: s.solver.max_users_per_uav,
        local,
        offload,
        offer_hz,
        capacity_hz: s.uavs.iter().map(|m| m.cpu_max_hz).collect(),
    }
}

/// Relaxed shares: `x[u][n]` local, `y[m][u][n]` offload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionalAssignment {
    pub n_users: usize,
    pub n_uavs: usize,
    pub n_slots: usize,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl FractionalAssignment {
    pub fn all_local(n_users: usize, n_uavs: usize, n_slots: usize) -> Self {
        Self { n_users, n_uavs, n_slots, x: vec![1.0; n_users * n_slots], y: vec![0.0; n_users * n_uavs * n_slots] }
    }

    #[inline]
    pub fn x(&self, u: usize, n: usize) -> f64 {
        self.x[n * self.n_users + u]
    }

    #[inline]
    pub fn y(&self, m: usize, u: usize, n: usize) -> f64 {
        self.y[(n * self.n_users + u) * self.n_uavs + m]
    }

    pub fn set_x(&mut self, u: usize, n: usize, v: f64) {
        self.x[n * self.n_users + u] = v;
    }

    pub fn set_y(&mut self, m: usize, u: usize, n: usize, v: f64) {
        self.y[(n * self.n_users + u) * self.n_uavs + m] = v;
    }

    pub fn is_integral(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|&v| v == 0.0 || v == 1.0)
    }

    /// Debug dump: `slot,user,x,y_0,...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("slot,user,x");
        for m in 0..self.n_uavs {
            s.push_str(&format!(",y_{m}"));
        }
        s.push('\n');
        for n in 0..self.n_slots {
            for u in 0..self.n_users {
                s.push_str(&format!("{n},{u},{}", self.x(u, n)));
                for m in 0..self.n_uavs {
                    s.push_str(&format!(",{}", self.y(m, u, n)));
                }
                s.push('\n');
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedSolution {
    pub fractional: FractionalAssignment,
    pub objective: f64,
    /// Objective after each X/Y alternation, starting from all-local.
    pub history: Vec<f64>,
}

/// Offload-share block for one slot: a transportation LP with the local
/// option as slack, solved exactly as a min-cost flow (integral optimum).
fn offload_block(costs: &OffloadCosts, n: usize, fr: &mut FractionalAssignment) {
    let (nu, nm) = (costs.n_users, costs.n_uavs);
    let (src, sink) = (0, 1 + nu + nm);
    let mut g = MinCostFlow::new(nu + nm + 2);
    let mut arcs = Vec::new();
    for u in 0..nu {
        g.add_arc(src, 1 + u, 1, 0.0);
        g.add_arc(1 + u, sink, 1, 0.0);
        for m in 0..nm {
            let c = costs.coefficient(u, m, n);
            if c.is_finite() && c < 0.0 {
                arcs.push((u, m, g.add_arc(1 + u, 1 + nu + m, 1, c)));
            }
        }
    }
    for m in 0..nm {
        g.add_arc(1 + nu + m, sink, costs.quota as i64, 0.0);
    }
    g.run(src, sink, nu as i64);
    for m in 0..nm {
        for u in 0..nu {
            fr.set_y(m, u, n, 0.0);
        }
    }
    for (u, m, id) in arcs {
        if g.flow(id) > 0 {
            fr.set_y(m, u, n, 1.0);
        }
    }
}

/// Local-share block: each user's local share completes its unit of work.
fn local_block(costs: &OffloadCosts, n: usize, fr: &mut FractionalAssignment) {
    for u in 0..costs.n_users {
        let off: f64 = (0..costs.n_uavs).map(|m| fr.y(m, u, n)).sum();
        fr.set_x(u, n, (1.0 - off).clamp(0.0, 1.0));
    }
}

/// Continuous relaxation solved by alternating the offload-share and
/// local-share blocks until the objective stops moving.
pub fn solve_relaxed(costs: &OffloadCosts, tol: f64, max_rounds: usize) -> RelaxedSolution {
    let mut fr = FractionalAssignment::all_local(costs.n_users, costs.n_uavs, costs.n_slots);
    let mut obj = costs.fractional_objective(&fr);
    let mut history = vec![obj];
    for _ in 0..max_rounds.max(1) {
        for n in 0..costs.n_slots {
            offload_block(costs, n, &mut fr);
            local_block(costs, n, &mut fr);
        }
        let next = costs.fractional_objective(&fr);
        history.push(next);
        let done = (obj - next).abs() <= tol * obj.abs().max(1e-300);
        obj = next;
        if done {
            break;
        }
    }
    RelaxedSolution { fractional: fr, objective: obj, history }
}

/// Binary decision after thresholding, for both blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundedAssignment {
    pub a: OffloadMatrix,
    /// Rounded local indicators, slot-major.
    pub local: Vec<bool>,
}

/// `v ≥ δ ↦ 1`, else `0`, applied to every share.
pub fn threshold_round(fr: &FractionalAssignment, delta: f64) -> RoundedAssignment {
    let mut a = OffloadMatrix::zeros(fr.n_users, fr.n_uavs, fr.n_slots);
    let mut local = vec![false; fr.n_users * fr.n_slots];
    for n in 0..fr.n_slots {
        for u in 0..fr.n_users {
            local[n * fr.n_users + u] = fr.x(u, n) >= delta;
            for m in 0..fr.n_uavs {
                if fr.y(m, u, n) >= delta {
                    a.set(u, m, n, true);
                }
            }
        }
    }
    RoundedAssignment { a, local }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingReport {
    /// Largest cardinality excess of the binary decision.
    pub delta1: f64,
    /// Largest deadline excess (s) among rounded offloads.
    pub delta2: f64,
    pub xi: f64,
    pub zeta: f64,
    /// Largest excess of the relaxed shares that were rounded up, per group.
    pub fractional_excess: f64,
}

/// `ζ = |ρ| / (|ρ| + ξΔ)`, one exactly when the weighted violation is zero.
pub fn integrality_gap(relaxed_obj: f64, delta: f64, xi: f64) -> f64 {
    let penalty = xi * delta;
    if penalty == 0.0 {
        1.0
    } else {
        relaxed_obj.abs() / (relaxed_obj.abs() + penalty)
    }
}

fn deadline_excess(costs: &OffloadCosts, tasks: Option<&DeadlineInfo>, u: usize, m: usize, n: usize) -> f64 {
    match tasks {
        Some(info) => {
            let i = (n * costs.n_users + u) * costs.n_uavs + m;
            (info.t_off[i] - info.deadline[n * costs.n_users + u]).max(0.0)
        }
        None => {
            if costs.offload_cost(u, m, n).is_finite() {
                0.0
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Optional raw delays for reporting deadline excess in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadlineInfo {
    pub t_off: Vec<f64>,
    pub deadline: Vec<f64>,
}

impl DeadlineInfo {
    pub fn new(s: &Scenario, tasks: &TaskSchedule, offers: &AllocationMatrix, q: &TrajectoryPlan) -> Self {
        let (nu, nm, nn) = (s.n_users(), s.n_uavs(), s.n_slots());
        let mut t_off = vec![0.0; nu * nm * nn];
        let mut deadline = vec![0.0; nu * nn];
        for n in 0..nn {
            for u in 0..nu {
                let task = tasks.get(u, n);
                deadline[n * nu + u] = task.deadline_s;
                for m in 0..nm {
                    t_off[(n * nu + u) * nm + m] = offload_delay(task, link_rate(s, u, q.pos(m, n)), offers.get(m, u, n));
                }
            }
        }
        Self { t_off, deadline }
    }
}

/// Violation accounting for a rounded decision.
pub fn integrality_report(
    relaxed_obj: f64,
    fr: Option<&FractionalAssignment>,
    a: &OffloadMatrix,
    costs: &OffloadCosts,
    deadlines: Option<&DeadlineInfo>,
    xi: f64,
) -> RoundingReport {
    let (nu, nm) = (costs.n_users, costs.n_uavs);
    let (mut d1, mut d2, mut excess): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for n in 0..costs.n_slots {
        for u in 0..nu {
            let mut cnt = 0.0;
            let mut frac = 0.0;
            for m in 0..nm {
                if a.get(u, m, n) {
                    cnt += 1.0;
                    frac += fr.map_or(1.0, |f| f.y(m, u, n));
                    d2 = d2.max(deadline_excess(costs, deadlines, u, m, n));
                }
            }
            d1 = d1.max(cnt - 1.0);
            excess = excess.max(frac - 1.0);
        }
        for m in 0..nm {
            let mut cnt = 0.0;
            let mut frac = 0.0;
            let mut hz = 0.0;
            for u in 0..nu {
                if a.get(u, m, n) {
                    cnt += 1.0;
                    frac += fr.map_or(1.0, |f| f.y(m, u, n));
                    hz += costs.offer(u, m, n);
                }
            }
            let q = costs.quota as f64;
            d1 = d1.max(cnt - q);
            excess = excess.max(frac - q);
            let cap = costs.capacity_hz[m];
            if hz > cap * (1.0 + 1e-12) {
                d1 = d1.max((hz - cap) / cap);
            }
        }
    }
    let delta = d1 + d2;
    RoundingReport { delta1: d1, delta2: d2, xi, zeta: integrality_gap(relaxed_obj, delta, xi), fractional_excess: excess.max(0.0) }
}

/// Makes a rounded decision feasible by demoting offloads to local.
///
/// Order: one UAV per user (keep the most negative coefficient, ties to
/// the lowest UAV index); drop deadline-infeasible offloads; per UAV and
/// slot keep the best `quota` users (ties to the lowest user index); then
/// shed the worst users until the CPU offers fit the capacity.
pub fn repair(a: &OffloadMatrix, costs: &OffloadCosts) -> OffloadMatrix {
    let mut out = a.clone();
    let (nu, nm) = (costs.n_users, costs.n_uavs);
    for n in 0..costs.n_slots {
        for u in 0..nu {
            let chosen: Vec<usize> = (0..nm).filter(|&m| out.get(u, m, n)).collect();
            if chosen.len() > 1 {
                let keep = best_by(&chosen, |&m| costs.coefficient(u, m, n));
                for &m in &chosen {
                    out.set(u, m, n, m == keep);
                }
            }
            for m in 0..nm {
                if out.get(u, m, n) && !costs.coefficient(u, m, n).is_finite() {
                    out.set(u, m, n, false);
                }
            }
        }
        for m in 0..nm {
            let mut users = out.users_on(m, n);
            users.sort_by(|&i, &j| costs.coefficient(i, m, n).total_cmp(&costs.coefficient(j, m, n)).then(i.cmp(&j)));
            for &u in users.iter().skip(costs.quota) {
                out.set(u, m, n, false);
            }
            users.truncate(costs.quota);
            let cap = costs.capacity_hz[m];
            let mut hz: f64 = users.iter().map(|&u| costs.offer(u, m, n)).sum();
            while hz > cap * (1.0 + 1e-12) {
                let u = users.pop().expect("nonempty while over capacity");
                out.set(u, m, n, false);
                hz = users.iter().map(|&u| costs.offer(u, m, n)).sum();
            }
        }
    }
    out
}

fn best_by<F: Fn(&usize) -> f64>(items: &[usize], key: F) -> usize {
    let mut best = items[0];
    for &i in &items[1..] {
        if key(&i) < key(&best) {
            best = i;
        }
    }
    best
}

/// Exhaustive per-slot enumeration (slots are independent).
pub fn exact_offload_oracle(costs: &OffloadCosts, max_per_slot: u64) -> Result<(OffloadMatrix, f64), SolveError> {
    let (nu, nm) = (costs.n_users, costs.n_uavs);
    let options = (nm as u64 + 1).checked_pow(nu as u32).unwrap_or(u64::MAX);
    if options > max_per_slot {
        return Err(SolveError::TooLarge(format!("{options} options per slot exceeds {max_per_slot}")));
    }
    let mut a = OffloadMatrix::zeros(nu, nm, costs.n_slots);
    let mut total = 0.0;
    let mut choice = vec![0usize; nu];
    for n in 0..costs.n_slots {
        let mut best: Option<(f64, Vec<usize>)> = None;
        for code in 0..options {
            let mut c = code;
            for slot in choice.iter_mut() {
                *slot = (c % (nm as u64 + 1)) as usize;
                c /= nm as u64 + 1;
            }
            let mut load = vec![0usize; nm];
            let mut hz = vec![0.0; nm];
            let mut obj = 0.0;
            let mut ok = true;
            for u in 0..nu {
                if choice[u] == 0 {
                    obj += costs.local_cost(u, n);
                } else {
                    let m = choice[u] - 1;
                    let c = costs.offload_cost(u, m, n);
                    load[m] += 1;
                    hz[m] += costs.offer(u, m, n);
                    if !c.is_finite() || load[m] > costs.quota {
                        ok = false;
                        break;
                    }
                    obj += c;
                }
            }
            if !ok || (0..nm).any(|m| hz[m] > costs.capacity_hz[m] * (1.0 + 1e-12)) {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, choice.clone()));
            }
        }
        let (obj, ch) = best.expect("all-local is always feasible");
        total += obj;
        for u in 0..nu {
            if ch[u] > 0 {
                a.set(u, ch[u] - 1, n, true);
            }
        }
    }
    Ok((a, total))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadOutcome {
    pub a: OffloadMatrix,
    pub relaxed: RelaxedSolution,
    pub rounded_objective: f64,
    pub objective: f64,
    pub rounding: RoundingReport,
    pub after_repair: RoundingReport,
}

/// Relax, round, report, repair.
pub fn solve_offloading(costs: &OffloadCosts, cfg: &SolverConfig, deadlines: Option<&DeadlineInfo>) -> OffloadOutcome {
    let relaxed = solve_relaxed(costs, cfg.relaxed_tol, cfg.relaxed_max_rounds);
    let rounded = threshold_round(&relaxed.fractional, cfg.rounding_threshold);
    let rounding = integrality_report(relaxed.objective, Some(&relaxed.fractional), &rounded.a, costs, deadlines, cfg.slack_weight);
    let a = repair(&rounded.a, costs);
    let after_repair = integrality_report(relaxed.objective, None, &a, costs, deadlines, cfg.slack_weight);
    OffloadOutcome { rounded_objective: costs.objective(&rounded.a), objective: costs.objective(&a), a, relaxed, rounding, after_repair }
}
