//! Delay, energy and offloaded-volume accounting for a candidate
//! (offloading, allocation, trajectory) triple.

use serde::{Deserialize, Serialize};

use crate::channel::{expected_channel_gain, uplink_rate, LinkGeometry};
use crate::scenario::{PropulsionParams, Scenario, TaskSchedule, TaskSpec, UavSpec, UserSpec};

/// Binary offloading decisions `a[u][m][n]`, stored slot-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadMatrix {
    pub n_users: usize,
    pub n_uavs: usize,
    pub n_slots: usize,
    a: Vec<bool>,
}

impl OffloadMatrix {
    pub fn zeros(n_users: usize, n_uavs: usize, n_slots: usize) -> Self {
        Self { n_users, n_uavs, n_slots, a: vec![false; n_users * n_uavs * n_slots] }
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        Self::zeros(s.n_users(), s.n_uavs(), s.n_slots())
    }

    #[inline]
    fn idx(&self, u: usize, m: usize, n: usize) -> usize {
        (n * self.n_users + u) * self.n_uavs + m
    }

    #[inline]
    pub fn get(&self, u: usize, m: usize, n: usize) -> bool {
        self.a[self.idx(u, m, n)]
    }

    pub fn set(&mut self, u: usize, m: usize, n: usize, value: bool) {
        let i = self.idx(u, m, n);
        self.a[i] = value;
    }

    /// First UAV serving user `u` in slot `n`.
    pub fn assigned_uav(&self, u: usize, n: usize) -> Option<usize> {
        (0..self.n_uavs).find(|&m| self.get(u, m, n))
    }

    /// Users offloading to UAV `m` in slot `n`, ascending.
    pub fn users_on(&self, m: usize, n: usize) -> Vec<usize> {
        (0..self.n_users).filter(|&u| self.get(u, m, n)).collect()
    }

    pub fn count(&self) -> usize {
        self.a.iter().filter(|&&x| x).count()
    }

    pub fn clear_slot(&mut self, n: usize) {
        for u in 0..self.n_users {
            for m in 0..self.n_uavs {
                self.set(u, m, n, false);
            }
        }
    }
}

/// CPU frequencies `f[m][u][n]` (Hz), stored slot-major like [`OffloadMatrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMatrix {
    pub n_users: usize,
    pub n_uavs: usize,
    pub n_slots: usize,
    f: Vec<f64>,
}

impl AllocationMatrix {
    pub fn zeros(n_users: usize, n_uavs: usize, n_slots: usize) -> Self {
        Self { n_users, n_uavs, n_slots, f: vec![0.0; n_users * n_uavs * n_slots] }
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        Self::zeros(s.n_users(), s.n_uavs(), s.n_slots())
    }

    #[inline]
    fn idx(&self, u: usize, m: usize, n: usize) -> usize {
        (n * self.n_users + u) * self.n_uavs + m
    }

    #[inline]
    pub fn get(&self, m: usize, u: usize, n: usize) -> f64 {
        self.f[self.idx(u, m, n)]
    }

    pub fn set(&mut self, m: usize, u: usize, n: usize, hz: f64) {
        let i = self.idx(u, m, n);
        self.f[i] = hz;
    }

    /// Copy with every entry outside the support of `a` zeroed.
    pub fn masked(&self, a: &OffloadMatrix) -> Self {
        let mut out = self.clone();
        for (i, f) in out.f.iter_mut().enumerate() {
            if !a.a[i] {
                *f = 0.0;
            }
        }
        out
    }
}

/// Per-UAV per-slot kinematic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPlan {
    pub n_uavs: usize,
    pub n_slots: usize,
    pub slot_s: f64,
    /// Positions, `m * n_slots + n`.
    pub q: Vec<[f64; 2]>,
    pub v: Vec<[f64; 2]>,
    /// Accelerations; the last slot of each UAV is zero and unused.
    pub acc: Vec<[f64; 2]>,
}

impl TrajectoryPlan {
    #[inline]
    pub fn pos(&self, m: usize, n: usize) -> [f64; 2] {
        self.q[m * self.n_slots + n]
    }

    #[inline]
    pub fn vel(&self, m: usize, n: usize) -> [f64; 2] {
        self.v[m * self.n_slots + n]
    }

    #[inline]
    pub fn accel(&self, m: usize, n: usize) -> [f64; 2] {
        self.acc[m * self.n_slots + n]
    }

    /// Builds a plan whose dynamics hold by construction.
    ///
    /// Accelerations follow from velocity differences and positions from
    /// the trapezoidal recursion. A constant velocity offset absorbs any
    /// closure error so the loop returns to its start.
    pub fn from_velocities(starts: &[[f64; 2]], v: Vec<[f64; 2]>, slot_s: f64) -> Self {
        let n_uavs = starts.len();
        let n_slots = v.len() / n_uavs.max(1);
        let mut v = v;
        let mut q = vec![[0.0; 2]; n_uavs * n_slots];
        let mut acc = vec![[0.0; 2]; n_uavs * n_slots];
        for m in 0..n_uavs {
            let base = m * n_slots;
            if n_slots > 1 {
                let mut drift = [0.0; 2];
                for k in 0..n_slots - 1 {
                    for c in 0..2 {
                        drift[c] += 0.5 * (v[base + k][c] + v[base + k + 1][c]) * slot_s;
                    }
                }
                let span = (n_slots - 1) as f64 * slot_s;
                for k in 0..n_slots {
                    for c in 0..2 {
                        v[base + k][c] -= drift[c] / span;
                    }
                }
            }
            q[base] = starts[m];
            for k in 0..n_slots.saturating_sub(1) {
                let (v0, v1) = (v[base + k], v[base + k + 1]);
                let a = [(v1[0] - v0[0]) / slot_s, (v1[1] - v0[1]) / slot_s];
                acc[base + k] = a;
                let p = q[base + k];
                q[base + k + 1] = [p[0] + v0[0] * slot_s + 0.5 * a[0] * slot_s * slot_s, p[1] + v0[1] * slot_s + 0.5 * a[1] * slot_s * slot_s];
            }
            if n_slots > 1 {
                q[base + n_slots - 1] = starts[m];
            }
        }
        Self { n_uavs, n_slots, slot_s, q, v, acc }
    }

    /// CSV with columns `uav,slot,x,y,vx,vy,ax,ay`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("uav,slot,x,y,vx,vy,ax,ay\n");
        for m in 0..self.n_uavs {
            for n in 0..self.n_slots {
                let (q, v, a) = (self.pos(m, n), self.vel(m, n), self.accel(m, n));
                s.push_str(&format!("{m},{n},{},{},{},{},{},{}\n", q[0], q[1], v[0], v[1], a[0], a[1]));
            }
        }
        s
    }
}

#[inline]
pub fn norm2(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

pub fn local_delay(task: &TaskSpec, user: &UserSpec) -> f64 {
    task.cycles() / user.cpu_hz
}

/// `D·C/f + D/R`; infinite when a non-empty task cannot be served.
pub fn offload_delay(task: &TaskSpec, rate: f64, alloc_hz: f64) -> f64 {
    if task.is_empty() {
        return 0.0;
    }
    if !(rate > 0.0) || !(alloc_hz > 0.0) {
        return f64::INFINITY;
    }
    task.cycles() / alloc_hz + task.size_bits / rate
}

pub fn local_energy(task: &TaskSpec, user: &UserSpec) -> f64 {
    user.cap_coeff * user.cpu_hz * user.cpu_hz * task.cycles()
}

pub fn uav_compute_energy(task: &TaskSpec, alloc_hz: f64, uav: &UavSpec) -> f64 {
    uav.cap_coeff * alloc_hz * alloc_hz * task.cycles()
}

pub fn propulsion_power(speed: f64, p: &PropulsionParams) -> f64 {
    p.power(speed)
}

pub fn propulsion_energy(speed: f64, p: &PropulsionParams, slot_s: f64) -> f64 {
    p.power(speed) * slot_s
}

/// Expected uplink rate from user `u` to a UAV hovering at `pos`.
pub fn link_rate(s: &Scenario, u: usize, pos: [f64; 2]) -> f64 {
    let user = &s.users[u];
    let geo = LinkGeometry::between(user.position, pos, s.uavs[0].altitude_m);
    uplink_rate(expected_channel_gain(&geo, &s.channel), user.tx_power_w, &s.channel)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub delay_s: f64,
    pub energy_j: f64,
    pub offloaded_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub total_delay_s: f64,
    pub total_uav_energy_j: f64,
    pub total_offloaded_bits: f64,
    pub flight_energy_j: f64,
    pub compute_energy_j: f64,
    pub delay_term: f64,
    pub energy_term: f64,
    pub offload_term: f64,
    pub objective: f64,
    pub local_deadline_misses: usize,
    pub per_slot: Vec<SlotMetrics>,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "objective,total_delay_s,total_uav_energy_j,total_offloaded_bits,flight_energy_j,compute_energy_j,local_deadline_misses";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.objective,
            self.total_delay_s,
            self.total_uav_energy_j,
            self.total_offloaded_bits,
            self.flight_energy_j,
            self.compute_energy_j,
            self.local_deadline_misses
        )
    }
}

/// One broken constraint, with the indices that locate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    Shape { what: String },
    UserMultiAssigned { u: usize, n: usize, count: usize },
    UavOverQuota { m: usize, n: usize, count: usize },
    FrequencyOutOfRange { m: usize, u: usize, n: usize, hz: f64 },
    AllocationWithoutOffload { m: usize, u: usize, n: usize, hz: f64 },
    CapacityExceeded { m: usize, n: usize, total_hz: f64 },
    OffloadDeadline { u: usize, m: usize, n: usize, delay_s: f64, deadline_s: f64 },
    Closure { m: usize, gap_m: f64 },
    PositionDynamics { m: usize, n: usize, residual_m: f64 },
    VelocityDynamics { m: usize, n: usize, residual: f64 },
    Speed { m: usize, n: usize, speed: f64 },
    Acceleration { m: usize, n: usize, accel: f64 },
    Separation { m: usize, i: usize, n: usize, dist_m: f64 },
}

/// Metrics plus every violated constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metrics: MetricsRecord,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{} constraint violation(s); first: {:?}", .0.len(), .0.first())]
pub struct ConstraintReport(pub Vec<Violation>);

/// Relative tolerance used when auditing continuous constraints.
pub const AUDIT_REL_TOL: f64 = 1e-9;

/// Strict evaluation: any violated constraint is an error.
pub fn evaluate(s: &Scenario, tasks: &TaskSchedule, a: &OffloadMatrix, f: &AllocationMatrix, q: &TrajectoryPlan) -> Result<MetricsRecord, ConstraintReport> {
    let report = audit(s, tasks, a, f, q);
    if report.violations.is_empty() {
        Ok(report.metrics)
    } else {
        Err(ConstraintReport(report.violations))
    }
}

/// Evaluates metrics and lists violations without failing.
pub fn audit(s: &Scenario, tasks: &TaskSchedule, a: &OffloadMatrix, f: &AllocationMatrix, q: &TrajectoryPlan) -> AuditReport {
    let mut violations = shape_violations(s, tasks, a, f, q);
    if !violations.is_empty() {
        let metrics = MetricsRecord {
            total_delay_s: f64::NAN,
            total_uav_energy_j: f64::NAN,
            total_offloaded_bits: f64::NAN,
            flight_energy_j: f64::NAN,
            compute_energy_j: f64::NAN,
            delay_term: f64::NAN,
            energy_term: f64::NAN,
            offload_term: f64::NAN,
            objective: f64::NAN,
            local_deadline_misses: 0,
            per_slot: Vec::new(),
        };
        return AuditReport { metrics, violations };
    }
    violations.extend(decision_violations(s, tasks, a, f, q));
    violations.extend(trajectory_violations(s, q));
    AuditReport { metrics: metrics(s, tasks, a, f, q), violations }
}

fn shape_violations(s: &Scenario, tasks: &TaskSchedule, a: &OffloadMatrix, f: &AllocationMatrix, q: &TrajectoryPlan) -> Vec<Violation> {
    let (nu, nm, nn) = (s.n_users(), s.n_uavs(), s.n_slots());
    let mut out = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            out.push(Violation::Shape { what: what.to_string() });
        }
    };
    check(tasks.n_users == nu && tasks.n_slots == nn && tasks.tasks.len() == nu * nn, "tasks");
    check(a.n_users == nu && a.n_uavs == nm && a.n_slots == nn, "offload matrix");
    check(f.n_users == nu && f.n_uavs == nm && f.n_slots == nn, "allocation matrix");
    check(q.n_uavs == nm && q.n_slots == nn && q.q.len() == nm * nn && q.v.len() == nm * nn && q.acc.len() == nm * nn, "trajectory");
    out
}

/// Metric accumulation, n-outer, u-middle, m-inner.
fn metrics(s: &Scenario, tasks: &TaskSchedule, a: &OffloadMatrix, f: &AllocationMatrix, q: &TrajectoryPlan) -> MetricsRecord {
    let dt = s.slot_s();
    let mut per_slot = Vec::with_capacity(s.n_slots());
    let (mut td, mut te, mut tk, mut fly, mut comp) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut misses = 0;
    for n in 0..s.n_slots() {
        let (mut sd, mut sc, mut sk) = (0.0, 0.0, 0.0);
        for u in 0..s.n_users() {
            let task = tasks.get(u, n);
            let mut offloaded = false;
            for m in 0..s.n_uavs() {
                if a.get(u, m, n) {
                    offloaded = true;
                    let hz = f.get(m, u, n);
                    sd += offload_delay(task, link_rate(s, u, q.pos(m, n)), hz);
                    sc += uav_compute_energy(task, hz, &s.uavs[m]);
                    sk += task.size_bits;
                }
            }
            if !offloaded {
                let t = local_delay(task, &s.users[u]);
                if !task.is_empty() && t > task.deadline_s {
                    misses += 1;
                }
                sd += t;
            }
        }
        let mut sf = 0.0;
        for m in 0..s.n_uavs() {
            sf += propulsion_energy(norm2(q.vel(m, n)), &s.uavs[m].propulsion, dt);
        }
        let se = sf + sc;
        td += sd;
        te += se;
        tk += sk;
        fly += sf;
        comp += sc;
        per_slot.push(SlotMetrics { delay_s: sd, energy_j: se, offloaded_bits: sk });
    }
    let w = &s.weights;
    let delay_term = w.w_delay * td / w.normalizers.delay_s;
    let energy_term = w.w_energy * te / w.normalizers.energy_j;
    let offload_term = w.w_offload * tk / w.normalizers.offloaded_bits;
    MetricsRecord {
        total_delay_s: td,
        total_uav_energy_j: te,
        total_offloaded_bits: tk,
        flight_energy_j: fly,
        compute_energy_j: comp,
        delay_term,
        energy_term,
        offload_term,
        objective: delay_term + energy_term - offload_term,
        local_deadline_misses: misses,
        per_slot,
    }
}

fn decision_violations(s: &Scenario, tasks: &TaskSchedule, a: &OffloadMatrix, f: &AllocationMatrix, q: &TrajectoryPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let quota = s.solver.max_users_per_uav;
    for n in 0..s.n_slots() {
        for u in 0..s.n_users() {
            let count = (0..s.n_uavs()).filter(|&m| a.get(u, m, n)).count();
            if count > 1 {
                out.push(Violation::UserMultiAssigned { u, n, count });
            }
        }
        for m in 0..s.n_uavs() {
            let fmax = s.uavs[m].cpu_max_hz;
            let mut count = 0;
            let mut total = 0.0;
            for u in 0..s.n_users() {
                let hz = f.get(m, u, n);
                if !(hz >= 0.0 && hz <= fmax) {
                    out.push(Violation::FrequencyOutOfRange { m, u, n, hz });
                }
                total += hz;
                if a.get(u, m, n) {
                    count += 1;
                    let task = tasks.get(u, n);
                    let d = offload_delay(task, link_rate(s, u, q.pos(m, n)), hz);
                    if d > task.deadline_s {
                        out.push(Violation::OffloadDeadline { u, m, n, delay_s: d, deadline_s: task.deadline_s });
                    }
                } else if hz > 0.0 {
                    out.push(Violation::AllocationWithoutOffload { m, u, n, hz });
                }
            }
            if count > quota {
                out.push(Violation::UavOverQuota { m, n, count });
            }
            if total > fmax * (1.0 + AUDIT_REL_TOL) {
                out.push(Violation::CapacityExceeded { m, n, total_hz: total });
            }
        }
    }
    out
}

/// Kinematic and separation checks for a trajectory alone.
pub fn trajectory_violations(s: &Scenario, q: &TrajectoryPlan) -> Vec<Violation> {
    let mut out = Vec::new();
    let nn = q.n_slots;
    let dt = q.slot_s;
    for m in 0..q.n_uavs {
        let uav = &s.uavs[m];
        let gap = norm2([q.pos(m, nn - 1)[0] - q.pos(m, 0)[0], q.pos(m, nn - 1)[1] - q.pos(m, 0)[1]]);
        if gap > 1e-6 {
            out.push(Violation::Closure { m, gap_m: gap });
        }
        for n in 0..nn {
            let sp = norm2(q.vel(m, n));
            if sp < uav.v_min * (1.0 - AUDIT_REL_TOL) || sp > uav.v_max * (1.0 + AUDIT_REL_TOL) {
                out.push(Violation::Speed { m, n, speed: sp });
            }
            if n + 1 < nn {
                let acc = q.accel(m, n);
                let an = norm2(acc);
                if an > uav.a_max * (1.0 + AUDIT_REL_TOL) {
                    out.push(Violation::Acceleration { m, n, accel: an });
                }
                let (p0, p1, v0, v1) = (q.pos(m, n), q.pos(m, n + 1), q.vel(m, n), q.vel(m, n + 1));
                let mut rq: f64 = 0.0;
                let mut rv: f64 = 0.0;
                for c in 0..2 {
                    rq = rq.max((p1[c] - p0[c] - v0[c] * dt - 0.5 * acc[c] * dt * dt).abs());
                    rv = rv.max((v1[c] - v0[c] - acc[c] * dt).abs());
                }
                let scale = 1.0 + norm2(p0).max(norm2(p1));
                if rq > AUDIT_REL_TOL * scale {
                    out.push(Violation::PositionDynamics { m, n, residual_m: rq });
                }
                if rv > AUDIT_REL_TOL * (1.0 + norm2(v0).max(norm2(v1))) {
                    out.push(Violation::VelocityDynamics { m, n, residual: rv });
                }
            }
        }
    }
    for n in 0..nn {
        for m in 0..q.n_uavs {
            for i in m + 1..q.n_uavs {
                let (a, b) = (q.pos(m, n), q.pos(i, n));
                let d = norm2([a[0] - b[0], a[1] - b[1]]);
                let dmin = s.uavs[m].d_min.max(s.uavs[i].d_min);
                if d < dmin {
                    out.push(Violation::Separation { m, i, n, dist_m: d });
                }
            }
        }
    }
    out
}
