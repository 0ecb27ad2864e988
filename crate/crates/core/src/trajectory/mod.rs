//! UAV trajectory design: convex surrogates, initial loops and the
//! successive convex approximation (SCA) driver.

pub mod curvature;
pub mod subproblem;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::cost::{audit, evaluate, norm2, trajectory_violations, AllocationMatrix, OffloadMatrix, TrajectoryPlan};
use crate::error::SolveError;
use crate::scenario::{Scenario, TaskSchedule};
use curvature::DelayCurvature;
pub use subproblem::{ConvexSubproblem, DelayTerm, SeparationTerm, SubproblemSolution, UavLimits};

/// Offset applied to coincident UAVs before linearizing their separation.
pub const DEGENERATE_PERTURBATION_M: f64 = 1e-3;

/// First-order lower bound on `‖v‖²` around `v_r`.
#[inline]
pub fn speed_surrogate(v: [f64; 2], v_r: [f64; 2]) -> f64 {
    2.0 * (v_r[0] * v[0] + v_r[1] * v[1]) - (v_r[0] * v_r[0] + v_r[1] * v_r[1])
}

/// Linear lower bound on `‖q_m − q_i‖²` given `diff_r = q_m^r − q_i^r`.
#[inline]
pub fn separation_value(q_m: [f64; 2], q_i: [f64; 2], diff_r: [f64; 2]) -> f64 {
    let d = [q_m[0] - q_i[0], q_m[1] - q_i[1]];
    2.0 * (diff_r[0] * d[0] + diff_r[1] * d[1]) - (diff_r[0] * diff_r[0] + diff_r[1] * diff_r[1])
}

/// Separation lower bound at `(q_m, q_i)` linearized at `(q_m_r, q_i_r)`.
///
/// Returns `None` when the expansion points coincide, where the
/// linearization has zero gradient and carries no information.
pub fn separation_surrogate(q_m: [f64; 2], q_i: [f64; 2], q_m_r: [f64; 2], q_i_r: [f64; 2]) -> Option<f64> {
    let diff = [q_m_r[0] - q_i_r[0], q_m_r[1] - q_i_r[1]];
    if diff == [0.0, 0.0] {
        return None;
    }
    Some(separation_value(q_m, q_i, diff))
}

/// Deterministic nudge for coincident expansion points.
pub fn perturb_coincident(q_m_r: [f64; 2], q_i_r: [f64; 2]) -> [f64; 2] {
    if q_m_r == q_i_r {
        [q_m_r[0] + DEGENERATE_PERTURBATION_M, q_m_r[1]]
    } else {
        q_m_r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialKind {
    /// Constant-speed circle around each UAV's initial position.
    Circular {
        speed: f64,
    },
    /// Lawnmower sweep with `legs` parallel passes (even, at least 2).
    Predefined {
        speed: f64,
        legs: usize,
    },
    Custom(TrajectoryPlan),
}

fn check_speed(s: &Scenario, speed: f64) -> Result<(), SolveError> {
    for (m, uav) in s.uavs.iter().enumerate() {
        if !(speed >= uav.v_min && speed <= uav.v_max) {
            return Err(SolveError::InvalidArgument(format!("speed {speed} outside [{}, {}] for UAV {m}", uav.v_min, uav.v_max)));
        }
    }
    Ok(())
}

fn validated(s: &Scenario, plan: TrajectoryPlan) -> Result<TrajectoryPlan, SolveError> {
    if plan.n_uavs != s.n_uavs() || plan.n_slots != s.n_slots() {
        return Err(SolveError::InvalidArgument("trajectory shape does not match scenario".into()));
    }
    let v = trajectory_violations(s, &plan);
    if let Some(first) = v.first() {
        return Err(SolveError::Infeasible(format!("{} trajectory violation(s), first: {first:?}", v.len())));
    }
    Ok(plan)
}

/// Radius of the circular loop flown at `speed` over the horizon.
pub fn circle_radius(s: &Scenario, speed: f64) -> f64 {
    speed * s.time.horizon_s / (2.0 * PI)
}

fn circular(s: &Scenario, speed: f64) -> TrajectoryPlan {
    let (nm, nn, dt) = (s.n_uavs(), s.n_slots(), s.slot_s());
    let r = circle_radius(s, speed);
    let dtheta = 2.0 * PI / (nn - 1) as f64;
    // Tangential speed for which the trapezoidal step lands exactly on the circle.
    let k = 2.0 * r * (0.5 * dtheta).tan() / dt;
    let mut v = Vec::with_capacity(nm * nn);
    let mut starts = Vec::with_capacity(nm);
    for uav in &s.uavs {
        let c = uav.initial_position;
        starts.push([c[0] + r, c[1]]);
        for n in 0..nn {
            let th = dtheta * n as f64;
            v.push([-k * th.sin(), k * th.cos()]);
        }
    }
    TrajectoryPlan::from_velocities(&starts, v, dt)
}

#[derive(Debug, Clone, Copy)]
enum Segment {
    Line {
        from: [f64; 2],
        dir: [f64; 2],
        len: f64,
    },
    /// Counter-clockwise when `sweep > 0`.
    Arc {
        center: [f64; 2],
        radius: f64,
        start: f64,
        sweep: f64,
    },
}

impl Segment {
    fn len(&self) -> f64 {
        match *self {
            Segment::Line { len, .. } => len,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn tangent(&self, t: f64) -> [f64; 2] {
        match *self {
            Segment::Line { dir, .. } => dir,
            Segment::Arc { radius, start, sweep, .. } => {
                let a = start + sweep.signum() * t / radius;
                let sgn = sweep.signum();
                [-sgn * a.sin(), sgn * a.cos()]
            }
        }
    }

    fn start_point(&self) -> [f64; 2] {
        match *self {
            Segment::Line { from, .. } => from,
            Segment::Arc { center, radius, start, .. } => [center[0] + radius * start.cos(), center[1] + radius * start.sin()],
        }
    }
}

fn lawnmower(s: &Scenario, speed: f64, legs: usize) -> Result<TrajectoryPlan, SolveError> {
    if legs < 2 || !legs.is_multiple_of(2) {
        return Err(SolveError::InvalidArgument(format!("lawnmower needs an even number of legs >= 2, got {legs}")));
    }
    let (nn, dt) = (s.n_slots(), s.slot_s());
    let a_max = s.uavs.iter().map(|u| u.a_max).fold(f64::INFINITY, f64::min);
    let rt = speed * speed / (0.8 * a_max);
    let lf = legs as f64;
    let total = speed * (nn - 1) as f64 * dt;
    let h = (total - lf * PI * rt - 2.0 * rt * (lf - 2.0)) / lf;
    if !(h > 0.0) {
        return Err(SolveError::InvalidArgument(format!("horizon too short for a {legs}-leg sweep at {speed} m/s")));
    }
    let width = 2.0 * rt * (lf - 1.0);
    let height = h + 2.0 * rt;
    let mut starts = Vec::new();
    let mut v = Vec::new();
    for uav in &s.uavs {
        let x0 = uav.initial_position[0] - 0.5 * width;
        let y0 = uav.initial_position[1] - 0.5 * height + rt;
        let mut segs = Vec::new();
        for j in 0..legs {
            let x = x0 + 2.0 * rt * j as f64;
            let up = j % 2 == 0;
            let from = if up { [x, y0] } else { [x, y0 + h] };
            segs.push(Segment::Line { from, dir: [0.0, if up { 1.0 } else { -1.0 }], len: h });
            if j + 1 < legs {
                if up {
                    segs.push(Segment::Arc { center: [x + rt, y0 + h], radius: rt, start: PI, sweep: -PI });
                } else {
                    segs.push(Segment::Arc { center: [x + rt, y0], radius: rt, start: PI, sweep: PI });
                }
            }
        }
        let x_last = x0 + width;
        segs.push(Segment::Arc { center: [x_last - rt, y0], radius: rt, start: 0.0, sweep: -0.5 * PI });
        let straight = 2.0 * rt * (lf - 2.0);
        if straight > 0.0 {
            segs.push(Segment::Line { from: [x_last - rt, y0 - rt], dir: [-1.0, 0.0], len: straight });
        }
        segs.push(Segment::Arc { center: [x0 + rt, y0], radius: rt, start: -0.5 * PI, sweep: -0.5 * PI });
        starts.push(segs[0].start_point());
        let path_len: f64 = segs.iter().map(Segment::len).sum();
        for n in 0..nn {
            let mut sarc = path_len * n as f64 / (nn - 1) as f64;
            let mut tangent = segs[0].tangent(0.0);
            for seg in &segs {
                if sarc <= seg.len() {
                    tangent = seg.tangent(sarc);
                    break;
                }
                sarc -= seg.len();
            }
            v.push([speed * tangent[0], speed * tangent[1]]);
        }
    }
    Ok(TrajectoryPlan::from_velocities(&starts, v, dt))
}

/// Builds an initial plan and checks it against every mobility constraint.
pub fn initial_trajectory(s: &Scenario, kind: &InitialKind) -> Result<TrajectoryPlan, SolveError> {
    if s.n_slots() < 2 {
        return Err(SolveError::InvalidArgument("need at least two slots".into()));
    }
    match kind {
        InitialKind::Circular { speed } => {
            check_speed(s, *speed)?;
            validated(s, circular(s, *speed))
        }
        InitialKind::Predefined { speed, legs } => {
            check_speed(s, *speed)?;
            validated(s, lawnmower(s, *speed, *legs)?)
        }
        InitialKind::Custom(plan) => validated(s, plan.clone()),
    }
}

/// Per-user curvature tables, reused across SCA iterations.
#[derive(Debug, Clone)]
pub struct CurvatureCache {
    users: Vec<DelayCurvature>,
}

impl CurvatureCache {
    pub fn new(s: &Scenario) -> Self {
        let alt = s.uavs[0].altitude_m;
        Self { users: s.users.iter().map(|u| DelayCurvature::new(alt, u.tx_power_w, s.channel)).collect() }
    }
}

/// Builds the convex subproblem whose optimum majorizes the true
/// objective around `trust`, with `trust` strictly inside when possible.
pub fn convexify_objective(
    s: &Scenario,
    tasks: &TaskSchedule,
    a: &OffloadMatrix,
    f: &AllocationMatrix,
    trust: &TrajectoryPlan,
    cache: &mut CurvatureCache,
) -> ConvexSubproblem {
    let (nm, nn) = (s.n_uavs(), s.n_slots());
    let rho = s.solver.trust_region_m;
    let reach = std::f64::consts::SQRT_2 * rho;
    let limits: Vec<UavLimits> = s.uavs.iter().map(|u| UavLimits { v_min: u.v_min, v_max: u.v_max, a_max: u.a_max, propulsion: u.propulsion }).collect();
    let mut delay_terms = Vec::new();
    for n in 1..nn.saturating_sub(1) {
        for u in 0..s.n_users() {
            let task = tasks.get(u, n);
            if task.is_empty() {
                continue;
            }
            let Some(m) = a.assigned_uav(u, n) else { continue };
            let w = s.users[u].position;
            let qr = trust.pos(m, n);
            let d = [qr[0] - w[0], qr[1] - w[1]];
            let r = norm2(d);
            let curv = &mut cache.users[u];
            let (ts, dts) = curv.smooth(r);
            let grad = if r > 0.0 { [dts * d[0] / r, dts * d[1] / r] } else { [0.0, 0.0] };
            let hz = f.get(m, u, n);
            let budget = if hz > 0.0 { Some(task.deadline_s - task.cycles() / hz) } else { None };
            delay_terms.push(DelayTerm {
                m,
                n,
                user_pos: w,
                weight: s.weights.delay_scale(),
                bits: task.size_bits,
                cone_slope: curv.cone_slope,
                smooth_value: ts,
                grad,
                curvature: curv.lipschitz(r + reach),
                budget,
            });
        }
    }
    let mut separation = Vec::new();
    for n in 1..nn.saturating_sub(1) {
        for m in 0..nm {
            for i in m + 1..nm {
                let dmin = s.uavs[m].d_min.max(s.uavs[i].d_min);
                let qm = perturb_coincident(trust.pos(m, n), trust.pos(i, n));
                let qi = trust.pos(i, n);
                let diff = [qm[0] - qi[0], qm[1] - qi[1]];
                // Pairs that cannot come within range inside the trust box are dropped.
                if norm2(diff) > dmin + 2.0 * reach + 1.0 {
                    continue;
                }
                separation.push(SeparationTerm { n, m, i, diff_r: diff, d_min_sq: dmin * dmin });
            }
        }
    }
    let mut sub = ConvexSubproblem {
        trust: trust.clone(),
        limits,
        energy_weight: s.weights.energy_scale() * s.slot_s(),
        trust_radius: rho,
        delay_terms,
        separation,
        constant: 0.0,
    };
    let true_rho = audit(s, tasks, a, f, trust).metrics.objective;
    sub.constant = true_rho - sub.value(trust);
    sub
}

/// Runs one convex subproblem.
pub fn solve_subproblem(sub: &ConvexSubproblem, tol: f64) -> SubproblemSolution {
    sub.solve(tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaOutcome {
    pub plan: TrajectoryPlan,
    pub objective: f64,
    /// True objective of every accepted iterate, starting with the input.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub stalled: bool,
}

/// SCA over the trajectory with offloading and allocation held fixed.
pub fn sca_optimize(
    s: &Scenario,
    tasks: &TaskSchedule,
    a: &OffloadMatrix,
    f: &AllocationMatrix,
    q_init: &TrajectoryPlan,
    max_iters: usize,
    tol: f64,
) -> Result<ScaOutcome, SolveError> {
    let mut current = evaluate(s, tasks, a, f, q_init).map_err(|e| SolveError::Infeasible(format!("initial trajectory rejected: {e}")))?.objective;
    let mut plan = q_init.clone();
    let mut history = vec![current];
    let mut stalled = false;
    let mut iterations = 0;
    let mut cache = CurvatureCache::new(s);
    let starts: Vec<[f64; 2]> = (0..plan.n_uavs).map(|m| plan.pos(m, 0)).collect();
    while iterations < max_iters {
        iterations += 1;
        let sub = convexify_objective(s, tasks, a, f, &plan, &mut cache);
        let sol = solve_subproblem(&sub, s.solver.subproblem_tol);
        if sol.stalled {
            stalled = true;
            break;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let cand = if alpha == 1.0 {
                sol.plan.clone()
            } else {
                let v = plan.v.iter().zip(&sol.plan.v).map(|(p, c)| [p[0] + alpha * (c[0] - p[0]), p[1] + alpha * (c[1] - p[1])]).collect();
                TrajectoryPlan::from_velocities(&starts, v, plan.slot_s)
            };
            if let Ok(mt) = evaluate(s, tasks, a, f, &cand) {
                if mt.objective <= current {
                    accepted = Some((cand, mt.objective));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((cand, obj)) = accepted else { break };
        let improvement = (current - obj) / current.abs().max(1e-12);
        plan = cand;
        current = obj;
        history.push(obj);
        if improvement < tol {
            break;
        }
    }
    Ok(ScaOutcome { plan, objective: current, history, iterations, stalled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost::AllocationMatrix;

    fn two_uav() -> Scenario {
        Scenario::default_scenario()
    }

    #[test]
    fn surrogates_are_tight_and_below() {
        let v = [12.0, -5.0];
        assert!((speed_surrogate(v, v) - 169.0).abs() < 1e-12);
        assert!(speed_surrogate([3.0, 4.0], v) <= 25.0);
        let z = separation_surrogate([20.0, 0.0], [0.0, 0.0], [20.0, 0.0], [0.0, 0.0]).unwrap();
        assert!((z - 400.0).abs() < 1e-12);
        let moved = separation_surrogate([21.0, 0.0], [-1.0, 0.0], [20.0, 0.0], [0.0, 0.0]).unwrap();
        assert!((moved - 480.0).abs() < 1e-12);
        assert!(separation_surrogate([1.0, 1.0], [0.0, 0.0], [5.0, 5.0], [5.0, 5.0]).is_none());
    }

    #[test]
    fn circular_radius_and_feasibility() {
        let s = two_uav();
        assert!((circle_radius(&s, 30.0) - 477.464829).abs() < 1e-5);
        let plan = initial_trajectory(&s, &InitialKind::Circular { speed: 30.0 }).unwrap();
        for m in 0..2 {
            let c = s.uavs[m].initial_position;
            for n in 0..s.n_slots() {
                let p = plan.pos(m, n);
                assert!((norm2([p[0] - c[0], p[1] - c[1]]) - 477.464829).abs() < 1e-4);
            }
        }
        assert!(initial_trajectory(&s, &InitialKind::Circular { speed: 80.0 }).is_err());
    }

    #[test]
    fn lawnmower_respects_mobility() {
        let s = two_uav();
        for (speed, legs) in [(30.0, 2), (22.0, 4)] {
            let plan = initial_trajectory(&s, &InitialKind::Predefined { speed, legs }).unwrap();
            assert!(trajectory_violations(&s, &plan).is_empty());
        }
        assert!(initial_trajectory(&s, &InitialKind::Predefined { speed: 30.0, legs: 3 }).is_err());
        assert!(initial_trajectory(&s, &InitialKind::Predefined { speed: 30.0, legs: 4 }).is_err());
    }

    #[test]
    fn zero_iterations_returns_input() {
        let s = two_uav();
        let tasks = s.generate_tasks(1);
        let q = initial_trajectory(&s, &InitialKind::Circular { speed: 30.0 }).unwrap();
        let a = OffloadMatrix::for_scenario(&s);
        let f = AllocationMatrix::for_scenario(&s);
        let out = sca_optimize(&s, &tasks, &a, &f, &q, 0, 1e-4).unwrap();
        assert_eq!(out.plan, q);
    }

    #[test]
    fn surrogate_is_exact_at_trust_point() {
        let s = two_uav();
        let tasks = s.generate_tasks(3);
        let q = initial_trajectory(&s, &InitialKind::Circular { speed: 30.0 }).unwrap();
        let mut a = OffloadMatrix::for_scenario(&s);
        let mut f = AllocationMatrix::for_scenario(&s);
        for n in 0..s.n_slots() {
            if !tasks.get(0, n).is_empty() {
                a.set(0, 0, n, true);
                f.set(0, 0, n, 1.2e9);
            }
        }
        let mut cache = CurvatureCache::new(&s);
        let sub = convexify_objective(&s, &tasks, &a, &f, &q, &mut cache);
        let rho = audit(&s, &tasks, &a, &f, &q).metrics.objective;
        assert!((sub.value(&q) - rho).abs() <= 1e-9 * rho.abs());
    }

    fn one_uav() -> Scenario {
        Scenario::from_toml_str("[uavs]\ncount = 1\n").unwrap()
    }

    #[test]
    fn sca_without_tasks_moves_toward_minimum_power_speed() {
        let s = one_uav();
        let p = s.uavs[0].propulsion;
        let v_star = (2000..=6000).map(|i| i as f64 * 0.01).min_by(|a, b| p.power(*a).total_cmp(&p.power(*b))).unwrap();
        let tasks = s.generate_tasks(0);
        let empty = TaskSchedule { tasks: tasks.tasks.iter().map(|t| crate::scenario::TaskSpec { size_bits: 0.0, ..*t }).collect(), ..tasks };
        let q = initial_trajectory(&s, &InitialKind::Circular { speed: 40.0 }).unwrap();
        let a = OffloadMatrix::for_scenario(&s);
        let f = AllocationMatrix::for_scenario(&s);
        let out = sca_optimize(&s, &empty, &a, &f, &q, 30, 1e-6).unwrap();
        assert!(!out.stalled);
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.objective < out.history[0]);
        let mean_speed: f64 = (0..s.n_slots()).map(|n| norm2(out.plan.vel(0, n))).sum::<f64>() / s.n_slots() as f64;
        assert!((mean_speed - v_star).abs() < (40.0 - v_star).abs(), "{mean_speed} vs {v_star}");
        assert!(trajectory_violations(&s, &out.plan).is_empty());
    }

    #[test]
    fn sca_with_offloads_descends_and_stays_feasible() {
        let s = two_uav();
        let tasks = s.generate_tasks(11);
        let q = initial_trajectory(&s, &InitialKind::Circular { speed: 30.0 }).unwrap();
        let mut a = OffloadMatrix::for_scenario(&s);
        let mut f = AllocationMatrix::for_scenario(&s);
        for n in 0..s.n_slots() {
            for (u, m) in [(0, 0), (2, 1)] {
                let t = tasks.get(u, n);
                let rate = crate::cost::link_rate(&s, u, q.pos(m, n));
                if !t.is_empty() && crate::cost::offload_delay(t, rate, 1.2e9) < t.deadline_s {
                    a.set(u, m, n, true);
                    f.set(m, u, n, 1.2e9);
                }
            }
        }
        let out = sca_optimize(&s, &tasks, &a, &f, &q, 30, 1e-4).unwrap();
        assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.objective < out.history[0]);
        assert!(evaluate(&s, &tasks, &a, &f, &out.plan).is_ok());
    }
}
