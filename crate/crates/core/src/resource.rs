//! Per-UAV per-slot CPU allocation with offloading and trajectory fixed:
//! KKT stationarity cubic plus dual bisection on the capacity multiplier.

use serde::{Deserialize, Serialize};

use crate::error::SolveError;

/// One offloaded task as seen by the allocator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceTask {
    /// `D·C`, CPU cycles.
    pub cycles: f64,
    /// Smallest frequency meeting the deadline (Hz); zero if unconstrained.
    pub min_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavCpu {
    pub cap_coeff: f64,
    pub max_hz: f64,
}

/// Objective weights per second of delay and per joule of energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weighting {
    pub delay: f64,
    pub energy: f64,
}

impl Weighting {
    pub const UNIT: Weighting = Weighting { delay: 1.0, energy: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocateOptions {
    /// Bisection accuracy relative to the initial multiplier bound.
    pub eps_rel: f64,
    /// Test hook: flips the sign of the multiplier term in the residual.
    pub flip_residual_sign: bool,
}

impl Default for AllocateOptions {
    fn default() -> Self {
        Self { eps_rel: 1e-6, flip_residual_sign: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub freqs: Vec<f64>,
    pub lambda: f64,
    /// Multiplier bound after any doublings.
    pub lambda_bound: f64,
    pub dual: DualState,
    pub iterations: usize,
    pub bound_doublings: usize,
}

/// `2 w_e κ DC f³ + λ f² − w_d DC`.
pub fn stationarity_residual(f: f64, lambda: f64, task: &ResourceTask, cpu: &UavCpu, w: &Weighting) -> f64 {
    2.0 * w.energy * cpu.cap_coeff * task.cycles * f * f * f + lambda * f * f - w.delay * task.cycles
}

/// Residual divided by `w_d·DC`, the scale used in certificates.
pub fn scaled_residual(f: f64, lambda: f64, task: &ResourceTask, cpu: &UavCpu, w: &Weighting) -> f64 {
    stationarity_residual(f, lambda, task, cpu, w) / (w.delay * task.cycles)
}

/// Per-task objective `w_d·DC/f + w_e·κ·f²·DC`.
pub fn task_objective(f: f64, task: &ResourceTask, cpu: &UavCpu, w: &Weighting) -> f64 {
    w.delay * task.cycles / f + w.energy * cpu.cap_coeff * f * f * task.cycles
}

pub fn allocation_objective(freqs: &[f64], tasks: &[ResourceTask], cpu: &UavCpu, w: &Weighting) -> f64 {
    freqs.iter().zip(tasks).map(|(&f, t)| task_objective(f, t, cpu, w)).sum()
}

/// Positive root of `a f³ + l f² − b` for `b > 0`; `+∞` when none exists.
fn cubic_root(a: f64, l: f64, b: f64) -> f64 {
    if a <= 0.0 && l <= 0.0 {
        return f64::INFINITY;
    }
    let phi = |f: f64| (a * f + l) * f * f - b;
    let mut hi = match (a > 0.0, l > 0.0) {
        (true, true) => (b / a).cbrt().min((b / l).sqrt()),
        (true, false) => (b / a).cbrt(),
        (false, _) => (b / l).sqrt(),
    };
    while phi(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    let mut f = hi;
    for _ in 0..200 {
        let val = phi(f);
        if val == 0.0 {
            return f;
        }
        if val > 0.0 {
            hi = f;
        } else {
            lo = f;
        }
        let d = 3.0 * a * f * f + 2.0 * l * f;
        let mut next = if d > 0.0 { f - val / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - f).abs() <= 1e-15 * f {
            return next;
        }
        f = next;
    }
    f
}

/// Stationary frequency for a given multiplier, clamped to `[min_hz, max_hz]`.
pub fn solve_f_given_lambda(lambda: f64, task: &ResourceTask, cpu: &UavCpu, w: &Weighting) -> f64 {
    solve_f_inner(lambda, task, cpu, w, false)
}

fn solve_f_inner(lambda: f64, task: &ResourceTask, cpu: &UavCpu, w: &Weighting, flip: bool) -> f64 {
    let l = if flip { -lambda } else { lambda };
    let root = if w.delay <= 0.0 { 0.0 } else { cubic_root(2.0 * w.energy * cpu.cap_coeff, l / task.cycles, w.delay) };
    root.min(cpu.max_hz).max(task.min_hz)
}

/// Dual bisection over the capacity multiplier.
pub fn allocate(cpu: &UavCpu, tasks: &[ResourceTask], w: &Weighting, opts: &AllocateOptions) -> Result<Allocation, SolveError> {
    let zero = DualState { lambda_min: 0.0, lambda_max: 0.0, lambda: 0.0, epsilon: 0.0 };
    if tasks.is_empty() {
        return Ok(Allocation { freqs: Vec::new(), lambda: 0.0, lambda_bound: 0.0, dual: zero, iterations: 0, bound_doublings: 0 });
    }
    let floor: f64 = tasks.iter().map(|t| t.min_hz).sum();
    if tasks.iter().any(|t| t.min_hz > cpu.max_hz) || floor > cpu.max_hz * (1.0 + 1e-12) {
        return Err(SolveError::Infeasible(format!("deadline floors {floor:e} Hz exceed capacity {:e} Hz", cpu.max_hz)));
    }
    let flip = opts.flip_residual_sign;
    let freqs_at = |lambda: f64| -> Vec<f64> { tasks.iter().map(|t| solve_f_inner(lambda, t, cpu, w, flip)).collect() };
    let sum = |f: &[f64]| f.iter().sum::<f64>();

    let f0 = freqs_at(0.0);
    if sum(&f0) <= cpu.max_hz {
        return Ok(Allocation { freqs: f0, lambda: 0.0, lambda_bound: 0.0, dual: zero, iterations: 0, bound_doublings: 0 });
    }

    // Multiplier at which every unclamped root drops below max_hz / |tasks|.
    let f_cap = cpu.max_hz / tasks.len() as f64;
    let mut bound =
        tasks.iter().map(|t| (w.delay * t.cycles - 2.0 * w.energy * cpu.cap_coeff * t.cycles * f_cap.powi(3)) / (f_cap * f_cap)).fold(0.0, f64::max);
    if !(bound > 0.0) {
        bound = f64::MIN_POSITIVE;
    }
    let mut doublings = 0;
    while sum(&freqs_at(bound)) > cpu.max_hz {
        bound *= 2.0;
        doublings += 1;
        if doublings > 200 || !bound.is_finite() {
            return Err(SolveError::Infeasible("multiplier bound diverged".into()));
        }
    }
    if doublings > 0 {
        log::debug!("capacity multiplier bound doubled {doublings} time(s) to {bound:e}");
    }

    let eps = opts.eps_rel * bound;
    let (mut lo, mut hi) = (0.0, bound);
    let mut iterations = 0;
    while hi - lo >= eps {
        let mid = 0.5 * (lo + hi);
        if sum(&freqs_at(mid)) >= cpu.max_hz {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let dual = DualState { lambda_min: lo, lambda_max: hi, lambda: hi, epsilon: eps };

    // Newton polish of the complementary-slackness equation on [lo, hi].
    let mut lam = hi;
    let mut best = (hi, freqs_at(hi));
    for _ in 0..60 {
        let f = freqs_at(lam);
        let g = sum(&f) - cpu.max_hz;
        if g <= 0.0 && lam <= best.0 {
            best = (lam, f.clone());
        }
        if g.abs() <= 1e-14 * cpu.max_hz {
            break;
        }
        if g > 0.0 {
            lo = lo.max(lam);
        } else {
            hi = hi.min(lam);
        }
        let mut slope = 0.0;
        for (fi, t) in f.iter().zip(tasks) {
            if *fi > t.min_hz && *fi < cpu.max_hz {
                let a = 2.0 * w.energy * cpu.cap_coeff * t.cycles;
                slope -= fi / (3.0 * a * fi + 2.0 * lam);
            }
        }
        let mut next = if slope < 0.0 { lam - g / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if next == lam {
            break;
        }
        lam = next;
    }
    let (lambda, mut freqs) = best;
    let total = sum(&freqs);
    if total > cpu.max_hz {
        let scale = cpu.max_hz / total;
        for f in &mut freqs {
            *f *= scale;
        }
    }
    Ok(Allocation { freqs, lambda, lambda_bound: bound, dual, iterations, bound_doublings: doublings })
}

/// KKT certificate values for an allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    /// Largest scaled residual, counting only the sign that bound
    /// multipliers cannot absorb.
    pub stationarity: f64,
    pub primal_excess: f64,
    pub complementary_slackness: f64,
}

pub fn kkt_certificate(alloc: &Allocation, tasks: &[ResourceTask], cpu: &UavCpu, w: &Weighting) -> KktCertificate {
    let mut stat: f64 = 0.0;
    for (&f, t) in alloc.freqs.iter().zip(tasks) {
        let r = scaled_residual(f, alloc.lambda, t, cpu, w);
        let tol = 1e-12 * cpu.max_hz;
        let at_upper = f >= cpu.max_hz - tol;
        let at_lower = t.min_hz > 0.0 && f <= t.min_hz + tol;
        let err = if at_upper && at_lower {
            0.0
        } else if at_upper {
            r.max(0.0)
        } else if at_lower {
            (-r).max(0.0)
        } else {
            r.abs()
        };
        stat = stat.max(err);
    }
    let total: f64 = alloc.freqs.iter().sum();
    let primal = ((total - cpu.max_hz) / cpu.max_hz).max(0.0);
    let cs = if alloc.lambda_bound > 0.0 { (alloc.lambda * (total - cpu.max_hz)).abs() / (alloc.lambda_bound * cpu.max_hz) } else { 0.0 };
    KktCertificate { stationarity: stat, primal_excess: primal, complementary_slackness: cs }
}

/// Best single-task frequency within `[min_hz, cap]` (convex in `f`).
fn best_single(task: &ResourceTask, cpu: &UavCpu, w: &Weighting, cap: f64) -> Option<f64> {
    if cap < task.min_hz {
        return None;
    }
    let free = solve_f_given_lambda(0.0, task, cpu, w);
    Some(free.min(cap).max(task.min_hz))
}

/// Dense grid search over all but the last task (step `max_hz / steps`);
/// the last task takes its exact best response. Supports up to 3 tasks.
pub fn grid_search_allocation(cpu: &UavCpu, tasks: &[ResourceTask], w: &Weighting, steps: usize) -> Option<(Vec<f64>, f64)> {
    let step = cpu.max_hz / steps as f64;
    let candidates = |t: &ResourceTask, cap: f64| -> Vec<f64> {
        let mut v = Vec::new();
        if t.min_hz > 0.0 && t.min_hz <= cap {
            v.push(t.min_hz);
        }
        let mut k = (t.min_hz / step).ceil().max(1.0) as usize;
        while (k as f64) * step <= cap * (1.0 + 1e-12) {
            v.push(k as f64 * step);
            k += 1;
        }
        v
    };
    let eval = |freqs: &[f64]| allocation_objective(freqs, tasks, cpu, w);
    match tasks.len() {
        0 => Some((Vec::new(), 0.0)),
        1 => {
            let f = best_single(&tasks[0], cpu, w, cpu.max_hz)?;
            Some((vec![f], eval(&[f])))
        }
        2 => {
            let mut best: Option<(Vec<f64>, f64)> = None;
            for f1 in candidates(&tasks[0], cpu.max_hz) {
                if let Some(f2) = best_single(&tasks[1], cpu, w, cpu.max_hz - f1) {
                    let v = vec![f1, f2];
                    let o = eval(&v);
                    if best.as_ref().is_none_or(|b| o < b.1) {
                        best = Some((v, o));
                    }
                }
            }
            best
        }
        3 => {
            let mut best: Option<(Vec<f64>, f64)> = None;
            let c1 = candidates(&tasks[0], cpu.max_hz);
            for f1 in c1 {
                let rest = cpu.max_hz - f1;
                let t1 = task_objective(f1, &tasks[0], cpu, w);
                for f2 in candidates(&tasks[1], rest) {
                    if let Some(f3) = best_single(&tasks[2], cpu, w, rest - f2) {
                        let o = t1 + task_objective(f2, &tasks[1], cpu, w) + task_objective(f3, &tasks[2], cpu, w);
                        if best.as_ref().is_none_or(|b| o < b.1) {
                            best = Some((vec![f1, f2, f3], o));
                        }
                    }
                }
            }
            best
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CPU: UavCpu = UavCpu { cap_coeff: 1e-27, max_hz: 1.2e9 };

    fn task(cycles: f64) -> ResourceTask {
        ResourceTask { cycles, min_hz: 0.0 }
    }

    #[test]
    fn closed_form_root_at_zero_multiplier() {
        let root = (1.0f64 / 2e-27).cbrt();
        assert!((root - 7.937e8).abs() < 1e5);
        let t = task(2e9);
        assert!(scaled_residual(root, 0.0, &t, &CPU, &Weighting::UNIT).abs() < 1e-12);
        let f = solve_f_given_lambda(0.0, &t, &CPU, &Weighting::UNIT);
        assert!((f - root).abs() <= 1e-10 * root);
    }

    #[test]
    fn residual_sign_and_monotonicity() {
        let t = task(1e9);
        let r0 = stationarity_residual(1e-3, 0.0, &t, &CPU, &Weighting::UNIT);
        assert!((r0 + 1e9).abs() < 1.0);
        let mut prev = f64::NEG_INFINITY;
        for k in 1..100 {
            let r = stationarity_residual(k as f64 * 2e7, 3e-19, &t, &CPU, &Weighting::UNIT);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn large_multiplier_drives_frequency_down() {
        let t = task(1e9);
        let f = solve_f_given_lambda(1e10, &t, &CPU, &Weighting::UNIT);
        assert!(f < 1e3);
        let f2 = solve_f_given_lambda(1e-18, &t, &CPU, &Weighting::UNIT);
        assert!(scaled_residual(f2, 1e-18, &t, &CPU, &Weighting::UNIT).abs() < 1e-10);
    }

    #[test]
    fn single_task_is_unconstrained() {
        let a = allocate(&CPU, &[task(1e9)], &Weighting::UNIT, &AllocateOptions::default()).unwrap();
        assert_eq!(a.lambda, 0.0);
        assert!((a.freqs[0] - 7.937e8).abs() < 1e5);
    }

    #[test]
    fn two_identical_tasks_split_evenly() {
        let tasks = [task(1e9), task(1e9)];
        let a = allocate(&CPU, &tasks, &Weighting::UNIT, &AllocateOptions::default()).unwrap();
        assert!(a.lambda > 0.0);
        for f in &a.freqs {
            assert!((f - 0.6e9).abs() < 1e-6 * 0.6e9, "{f}");
        }
        let (g, obj) = grid_search_allocation(&CPU, &tasks, &Weighting::UNIT, 10_000).unwrap();
        assert!((g[0] - 0.6e9).abs() <= 1.2e5 + 1.0);
        let mine = allocation_objective(&a.freqs, &tasks, &CPU, &Weighting::UNIT);
        assert!(mine <= obj * (1.0 + 1e-9));
        let c = kkt_certificate(&a, &tasks, &CPU, &Weighting::UNIT);
        assert!(c.stationarity <= 1e-6 && c.primal_excess <= 1e-9 && c.complementary_slackness <= 1e-6);
    }

    #[test]
    fn empty_allocation() {
        let a = allocate(&CPU, &[], &Weighting::UNIT, &AllocateOptions::default()).unwrap();
        assert!(a.freqs.is_empty());
        assert_eq!(a.lambda, 0.0);
    }

    #[test]
    fn deadline_floor_respected() {
        let tasks = [ResourceTask { cycles: 1e9, min_hz: 0.9e9 }, task(1e9)];
        let a = allocate(&CPU, &tasks, &Weighting::UNIT, &AllocateOptions::default()).unwrap();
        assert!(a.freqs[0] >= 0.9e9);
        assert!(a.freqs.iter().sum::<f64>() <= 1.2e9 * (1.0 + 1e-12));
        let c = kkt_certificate(&a, &tasks, &CPU, &Weighting::UNIT);
        assert!(c.stationarity <= 1e-6, "{c:?}");
        let bad = [ResourceTask { cycles: 1e9, min_hz: 0.7e9 }, ResourceTask { cycles: 1e9, min_hz: 0.7e9 }];
        assert!(allocate(&CPU, &bad, &Weighting::UNIT, &AllocateOptions::default()).is_err());
    }

    #[test]
    fn zero_energy_weight_runs_at_full_speed() {
        let w = Weighting { delay: 1.0, energy: 0.0 };
        let a = allocate(&CPU, &[task(1e9)], &w, &AllocateOptions::default()).unwrap();
        assert_eq!(a.freqs[0], CPU.max_hz);
    }

    #[test]
    fn flipped_residual_breaks_the_oracle_match() {
        let tasks = [task(1e9), task(2e9)];
        let opts = AllocateOptions { flip_residual_sign: true, ..Default::default() };
        let bad = allocate(&CPU, &tasks, &Weighting::UNIT, &opts);
        let (_, obj) = grid_search_allocation(&CPU, &tasks, &Weighting::UNIT, 10_000).unwrap();
        let ok = match bad {
            Ok(a) => {
                let o = allocation_objective(&a.freqs, &tasks, &CPU, &Weighting::UNIT);
                a.freqs.iter().sum::<f64>() <= CPU.max_hz * (1.0 + 1e-9) && (o - obj).abs() <= 1e-3 * obj
            }
            Err(_) => false,
        };
        assert!(!ok);
    }
}
