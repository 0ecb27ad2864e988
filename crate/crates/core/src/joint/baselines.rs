//! Offloading rules of the benchmark policies. Each returns a decision
//! that is deadline- and capacity-feasible under the given offers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cost::{norm2, AllocationMatrix, OffloadMatrix, TrajectoryPlan};
use crate::offload::offload_cost_coefficients;
use crate::scenario::{Scenario, TaskSchedule};

/// Tracks per-UAV load within one slot.
struct SlotLoad<'a> {
    s: &'a Scenario,
    offers: &'a AllocationMatrix,
    n: usize,
    count: Vec<usize>,
    hz: Vec<f64>,
}

impl<'a> SlotLoad<'a> {
    fn new(s: &'a Scenario, offers: &'a AllocationMatrix, n: usize) -> Self {
        Self { s, offers, n, count: vec![0; s.n_uavs()], hz: vec![0.0; s.n_uavs()] }
    }

    fn admits(&self, u: usize, m: usize) -> bool {
        let offer = self.offers.get(m, u, self.n);
        offer > 0.0 && self.count[m] < self.s.solver.max_users_per_uav && self.hz[m] + offer <= self.s.uavs[m].cpu_max_hz * (1.0 + 1e-12)
    }

    fn take(&mut self, u: usize, m: usize) {
        self.count[m] += 1;
        self.hz[m] += self.offers.get(m, u, self.n);
    }
}

/// Uniform choice among local execution and every admissible UAV, users
/// visited in a random order each slot.
pub fn random_offloading(s: &Scenario, tasks: &TaskSchedule, offers: &AllocationMatrix, _q: &TrajectoryPlan, seed: u64) -> OffloadMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ff1_0ad0);
    let mut a = OffloadMatrix::for_scenario(s);
    let mut order: Vec<usize> = (0..s.n_users()).collect();
    for n in 0..s.n_slots() {
        order.shuffle(&mut rng);
        let mut load = SlotLoad::new(s, offers, n);
        for &u in &order {
            if tasks.get(u, n).is_empty() {
                continue;
            }
            let options: Vec<usize> = (0..s.n_uavs()).filter(|&m| load.admits(u, m)).collect();
            let pick = rng.gen_range(0..=options.len());
            if pick < options.len() {
                let m = options[pick];
                load.take(u, m);
                a.set(u, m, n, true);
            }
        }
    }
    a
}

/// Each user offloads to its nearest UAV when that strictly helps.
pub fn nearest_offloading(s: &Scenario, tasks: &TaskSchedule, offers: &AllocationMatrix, q: &TrajectoryPlan) -> OffloadMatrix {
    let costs = offload_cost_coefficients(s, tasks, offers, q);
    let mut a = OffloadMatrix::for_scenario(s);
    for n in 0..s.n_slots() {
        let mut load = SlotLoad::new(s, offers, n);
        for u in 0..s.n_users() {
            let w = s.users[u].position;
            let dist = |m: usize| {
                let p = q.pos(m, n);
                norm2([p[0] - w[0], p[1] - w[1]])
            };
            let Some(m) = (0..s.n_uavs()).min_by(|&i, &j| dist(i).total_cmp(&dist(j))) else { continue };
            if costs.coefficient(u, m, n) < 0.0 && load.admits(u, m) {
                load.take(u, m);
                a.set(u, m, n, true);
            }
        }
    }
    a
}

/// User-proposing deferred acceptance per slot. Users rank beneficial UAVs
/// by offload cost, UAVs rank users by the same cost; ties go to the lower
/// index.
pub fn matching_offloading(s: &Scenario, tasks: &TaskSchedule, offers: &AllocationMatrix, q: &TrajectoryPlan) -> OffloadMatrix {
    let costs = offload_cost_coefficients(s, tasks, offers, q);
    let (nu, nm) = (s.n_users(), s.n_uavs());
    let mut a = OffloadMatrix::for_scenario(s);
    for n in 0..s.n_slots() {
        let prefs: Vec<Vec<usize>> = (0..nu)
            .map(|u| {
                let mut ms: Vec<usize> = (0..nm).filter(|&m| costs.coefficient(u, m, n) < 0.0 && offers.get(m, u, n) > 0.0).collect();
                ms.sort_by(|&i, &j| costs.offload_cost(u, i, n).total_cmp(&costs.offload_cost(u, j, n)).then(i.cmp(&j)));
                ms
            })
            .collect();
        let mut next = vec![0usize; nu];
        let mut held: Vec<Vec<usize>> = vec![Vec::new(); nm];
        let mut free: Vec<usize> = (0..nu).rev().collect();
        while let Some(u) = free.pop() {
            let Some(&m) = prefs[u].get(next[u]) else { continue };
            next[u] += 1;
            held[m].push(u);
            held[m].sort_by(|&i, &j| costs.offload_cost(i, m, n).total_cmp(&costs.offload_cost(j, m, n)).then(i.cmp(&j)));
            // Shed the worst held users beyond quota or capacity.
            loop {
                let hz: f64 = held[m].iter().map(|&v| offers.get(m, v, n)).sum();
                if held[m].len() <= s.solver.max_users_per_uav && hz <= s.uavs[m].cpu_max_hz * (1.0 + 1e-12) {
                    break;
                }
                let dropped = held[m].pop().expect("over quota implies nonempty");
                free.push(dropped);
            }
        }
        for (m, users) in held.iter().enumerate() {
            for &u in users {
                a.set(u, m, n, true);
            }
        }
    }
    a
}
