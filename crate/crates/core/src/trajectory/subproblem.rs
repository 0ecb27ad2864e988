//! Convex trajectory subproblem around a trust point and its log-barrier
//! interior-point solver.
//!
//! Decision variables per UAV: interior positions `q[1..N-1)`, all
//! velocities `v[0..N)` and accelerations `a[0..N-1)`; the loop endpoints
//! stay at the trust point. Dynamics are linear equalities, handled by an
//! equality-constrained Newton method whose KKT system is reduced to a
//! block-tridiagonal Schur complement (one block per time step).

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::cost::TrajectoryPlan;
use crate::scenario::{induced_factor, PropulsionParams};
use crate::trajectory::curvature::cone;

/// Quadratic majorizer of one offloaded task's transmission time.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTerm {
    pub m: usize,
    pub n: usize,
    pub user_pos: [f64; 2],
    /// Objective weight per second of transmission delay times bits.
    pub weight: f64,
    pub bits: f64,
    pub cone_slope: f64,
    /// `τ_s` at the trust point.
    pub smooth_value: f64,
    /// Gradient of `τ_s(‖q − w‖)` at the trust point.
    pub grad: [f64; 2],
    pub curvature: f64,
    /// Transmission-time budget `τ − DC/f` (s), if the deadline applies.
    pub budget: Option<f64>,
}

impl DelayTerm {
    /// Surrogate per-bit transmission time at `q`.
    pub fn per_bit(&self, q: [f64; 2], q_r: [f64; 2]) -> f64 {
        let d = [q[0] - q_r[0], q[1] - q_r[1]];
        self.cone_slope * cone([q[0] - self.user_pos[0], q[1] - self.user_pos[1]])
            + self.smooth_value
            + self.grad[0] * d[0]
            + self.grad[1] * d[1]
            + 0.5 * self.curvature * (d[0] * d[0] + d[1] * d[1])
    }

    /// Gradient and Hessian of `per_bit` at `q`.
    fn per_bit_derivs(&self, q: [f64; 2], q_r: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let e = [q[0] - self.user_pos[0], q[1] - self.user_pos[1]];
        let phi = cone(e);
        let k = self.cone_slope;
        let g = [k * e[0] / phi + self.grad[0] + self.curvature * (q[0] - q_r[0]), k * e[1] / phi + self.grad[1] + self.curvature * (q[1] - q_r[1])];
        let mut h = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let id = if i == j { 1.0 } else { 0.0 };
                h[i][j] = k * (id - e[i] * e[j] / (phi * phi)) / phi + self.curvature * id;
            }
        }
        (g, h)
    }
}

/// Linearized separation constraint between UAVs `m < i` at slot `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationTerm {
    pub n: usize,
    pub m: usize,
    pub i: usize,
    /// `q_m^r − q_i^r`.
    pub diff_r: [f64; 2],
    pub d_min_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavLimits {
    pub v_min: f64,
    pub v_max: f64,
    pub a_max: f64,
    pub propulsion: PropulsionParams,
}

/// Convex trajectory subproblem at a trust point.
#[derive(Debug, Clone)]
pub struct ConvexSubproblem {
    pub trust: TrajectoryPlan,
    pub limits: Vec<UavLimits>,
    /// `w_energy·δ`, weight of one slot's propulsion power.
    pub energy_weight: f64,
    pub trust_radius: f64,
    pub delay_terms: Vec<DelayTerm>,
    pub separation: Vec<SeparationTerm>,
    /// Surrogate minus its variable part; makes it exact at the trust point.
    pub constant: f64,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub plan: TrajectoryPlan,
    pub objective: f64,
    pub stalled: bool,
    pub newton_steps: usize,
}

/// Propulsion power majorizer: induced term evaluated at the linearized
/// squared speed.
pub fn propulsion_surrogate(p: &PropulsionParams, v: [f64; 2], v_r: [f64; 2]) -> f64 {
    let s2 = v[0] * v[0] + v[1] * v[1];
    let theta = super::speed_surrogate(v, v_r);
    let v02 = p.rotor_induced_v0 * p.rotor_induced_v0;
    p.blade_profile_w * (1.0 + 3.0 * s2 / (p.tip_speed * p.tip_speed)) + p.induced_w * induced_factor(theta / v02) + p.parasite_coeff() * s2 * s2.sqrt()
}

fn propulsion_derivs(p: &PropulsionParams, v: [f64; 2], v_r: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
    let s2 = v[0] * v[0] + v[1] * v[1];
    let sp = s2.sqrt();
    let u2 = p.tip_speed * p.tip_speed;
    let v02 = p.rotor_induced_v0 * p.rotor_induced_v0;
    let x = super::speed_surrogate(v, v_r) / v02;
    let y = induced_factor(x);
    let s = (1.0 + 0.25 * x * x).sqrt();
    let dy = -y / (4.0 * s);
    let d2y = y * (s + x) / (16.0 * s * s * s);
    let c = p.parasite_coeff();
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for i in 0..2 {
        g[i] = p.blade_profile_w * 6.0 * v[i] / u2 + p.induced_w * dy * 2.0 * v_r[i] / v02 + 3.0 * c * sp * v[i];
        for j in 0..2 {
            let id = if i == j { 1.0 } else { 0.0 };
            let cubic = if sp > 0.0 { 3.0 * c * (sp * id + v[i] * v[j] / sp) } else { 0.0 };
            h[i][j] = p.blade_profile_w * 6.0 * id / u2 + p.induced_w * d2y * 4.0 * v_r[i] * v_r[j] / (v02 * v02) + cubic;
        }
    }
    (g, h)
}

/// Flat variable layout.
struct Layout {
    m: usize,
    n: usize,
}

impl Layout {
    fn nq(&self) -> usize {
        2 * self.m * self.n.saturating_sub(2)
    }
    fn nv(&self) -> usize {
        2 * self.m * self.n
    }
    fn len(&self) -> usize {
        self.nq() + self.nv() + 2 * self.m * (self.n - 1)
    }
    /// Position variable index; `None` at fixed endpoints.
    fn q(&self, m: usize, k: usize) -> Option<usize> {
        if k == 0 || k + 1 == self.n {
            None
        } else {
            Some(((k - 1) * self.m + m) * 2)
        }
    }
    fn v(&self, m: usize, k: usize) -> usize {
        self.nq() + (m * self.n + k) * 2
    }
    fn a(&self, m: usize, k: usize) -> usize {
        self.nq() + self.nv() + (m * (self.n - 1) + k) * 2
    }
}

/// A diagonal Hessian block and the equality rows that touch it.
struct Block {
    vars: Vec<usize>,
    /// `(row, local index, coefficient)`.
    rows: Vec<(usize, usize, f64)>,
}

struct Structure {
    blocks: Vec<Block>,
    /// Variable → (block, local index).
    owner: Vec<(usize, usize)>,
    /// Sparse equality rows.
    rows: Vec<Vec<(usize, f64)>>,
    /// Right-hand side of `A x = b` (fixed endpoint positions).
    rhs: Vec<f64>,
    group: usize,
}

impl Structure {
    fn new(lay: &Layout, dt: f64, trust: &TrajectoryPlan) -> Self {
        let (nm, nn) = (lay.m, lay.n);
        let group = 4 * nm;
        let mut rows = vec![Vec::new(); group * (nn - 1)];
        let mut rhs = vec![0.0; group * (nn - 1)];
        for k in 0..nn - 1 {
            for m in 0..nm {
                for c in 0..2 {
                    let r1 = k * group + m * 4 + c;
                    match lay.q(m, k + 1) {
                        Some(i) => rows[r1].push((i + c, 1.0)),
                        None => rhs[r1] -= trust.pos(m, k + 1)[c],
                    }
                    match lay.q(m, k) {
                        Some(i) => rows[r1].push((i + c, -1.0)),
                        None => rhs[r1] += trust.pos(m, k)[c],
                    }
                    rows[r1].push((lay.v(m, k) + c, -dt));
                    rows[r1].push((lay.a(m, k) + c, -0.5 * dt * dt));
                    let r2 = k * group + m * 4 + 2 + c;
                    rows[r2].push((lay.v(m, k + 1) + c, 1.0));
                    rows[r2].push((lay.v(m, k) + c, -1.0));
                    rows[r2].push((lay.a(m, k) + c, -dt));
                }
            }
        }
        let mut blocks = Vec::new();
        for k in 1..nn.saturating_sub(1) {
            let start = lay.q(0, k).unwrap();
            blocks.push(Block { vars: (start..start + 2 * nm).collect(), rows: Vec::new() });
        }
        for m in 0..nm {
            for k in 0..nn {
                let s = lay.v(m, k);
                blocks.push(Block { vars: vec![s, s + 1], rows: Vec::new() });
            }
            for k in 0..nn - 1 {
                let s = lay.a(m, k);
                blocks.push(Block { vars: vec![s, s + 1], rows: Vec::new() });
            }
        }
        let mut owner = vec![(0, 0); lay.len()];
        for (b, blk) in blocks.iter().enumerate() {
            for (l, &v) in blk.vars.iter().enumerate() {
                owner[v] = (b, l);
            }
        }
        for (r, row) in rows.iter().enumerate() {
            for &(v, c) in row {
                let (b, l) = owner[v];
                blocks[b].rows.push((r, l, c));
            }
        }
        Self { blocks, owner, rows, rhs, group }
    }

    fn apply_a(&self, x: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|row| row.iter().map(|&(v, c)| c * x[v]).sum()).collect()
    }

    /// `out += scale · Aᵀ ν`.
    fn add_at(&self, nu: &[f64], out: &mut [f64], scale: f64) {
        for (r, row) in self.rows.iter().enumerate() {
            for &(v, c) in row {
                out[v] += scale * c * nu[r];
            }
        }
    }

    fn eq_residual(&self, x: &[f64]) -> Vec<f64> {
        self.apply_a(x).into_iter().zip(&self.rhs).map(|(a, b)| a - b).collect()
    }
}

impl ConvexSubproblem {
    fn layout(&self) -> Layout {
        Layout { m: self.trust.n_uavs, n: self.trust.n_slots }
    }

    fn x0(&self) -> Vec<f64> {
        let lay = self.layout();
        let mut x = vec![0.0; lay.len()];
        for m in 0..lay.m {
            for k in 0..lay.n {
                if let Some(i) = lay.q(m, k) {
                    x[i..i + 2].copy_from_slice(&self.trust.pos(m, k));
                }
                let i = lay.v(m, k);
                x[i..i + 2].copy_from_slice(&self.trust.vel(m, k));
                if k + 1 < lay.n {
                    let i = lay.a(m, k);
                    x[i..i + 2].copy_from_slice(&self.trust.accel(m, k));
                }
            }
        }
        x
    }

    fn q_of(&self, lay: &Layout, x: &[f64], m: usize, k: usize) -> [f64; 2] {
        match lay.q(m, k) {
            Some(i) => [x[i], x[i + 1]],
            None => self.trust.pos(m, k),
        }
    }

    /// Variable part of the surrogate objective, given position and
    /// velocity accessors.
    fn variable_part(&self, q: impl Fn(usize, usize) -> [f64; 2], v: impl Fn(usize, usize) -> [f64; 2]) -> f64 {
        let (nm, nn) = (self.trust.n_uavs, self.trust.n_slots);
        let mut total = 0.0;
        for m in 0..nm {
            let p = &self.limits[m].propulsion;
            for k in 0..nn {
                total += self.energy_weight * propulsion_surrogate(p, v(m, k), self.trust.vel(m, k));
            }
        }
        for t in &self.delay_terms {
            total += t.weight * t.bits * t.per_bit(q(t.m, t.n), self.trust.pos(t.m, t.n));
        }
        total
    }

    /// Surrogate objective of an arbitrary plan with the trust endpoints.
    pub fn value(&self, plan: &TrajectoryPlan) -> f64 {
        self.constant + self.variable_part(|m, k| plan.pos(m, k), |m, k| plan.vel(m, k))
    }

    /// Whether `plan` satisfies every surrogate inequality (dynamics are
    /// not checked here).
    pub fn is_feasible(&self, plan: &TrajectoryPlan) -> bool {
        self.slacks(|m, k| plan.pos(m, k), |m, k| plan.vel(m, k), |m, k| plan.accel(m, k), &mut |s| s >= 0.0)
    }

    /// Visits every inequality slack; stops early when `keep` returns false.
    fn slacks(
        &self,
        q: impl Fn(usize, usize) -> [f64; 2],
        v: impl Fn(usize, usize) -> [f64; 2],
        a: impl Fn(usize, usize) -> [f64; 2],
        keep: &mut impl FnMut(f64) -> bool,
    ) -> bool {
        let (nm, nn) = (self.trust.n_uavs, self.trust.n_slots);
        for m in 0..nm {
            let lim = &self.limits[m];
            for k in 0..nn {
                let vv = v(m, k);
                let s2 = vv[0] * vv[0] + vv[1] * vv[1];
                if !keep(lim.v_max * lim.v_max - s2) {
                    return false;
                }
                if !keep(super::speed_surrogate(vv, self.trust.vel(m, k)) - lim.v_min * lim.v_min) {
                    return false;
                }
                if k + 1 < nn {
                    let aa = a(m, k);
                    if !keep(lim.a_max * lim.a_max - aa[0] * aa[0] - aa[1] * aa[1]) {
                        return false;
                    }
                }
                if k > 0 && k + 1 < nn {
                    let qq = q(m, k);
                    let qr = self.trust.pos(m, k);
                    for c in 0..2 {
                        let e = qq[c] - qr[c];
                        if !keep(self.trust_radius - e) || !keep(self.trust_radius + e) {
                            return false;
                        }
                    }
                }
            }
        }
        for sp in &self.separation {
            let z = super::separation_value(q(sp.m, sp.n), q(sp.i, sp.n), sp.diff_r);
            if !keep(z - sp.d_min_sq) {
                return false;
            }
        }
        for t in &self.delay_terms {
            if let Some(b) = t.budget {
                if !keep(b - t.bits * t.per_bit(q(t.m, t.n), self.trust.pos(t.m, t.n))) {
                    return false;
                }
            }
        }
        true
    }

    fn count_inequalities(&self) -> usize {
        let mut n = 0;
        self.slacks(|_, _| [0.0; 2], |_, _| [0.0; 2], |_, _| [0.0; 2], &mut |_| {
            n += 1;
            true
        });
        n
    }

    /// `t·f0 − Σ log s`, or `None` outside the strict interior.
    fn barrier(&self, lay: &Layout, x: &[f64], t: f64) -> Option<f64> {
        let q = |m, k| self.q_of(lay, x, m, k);
        let v = |m, k| {
            let i = lay.v(m, k);
            [x[i], x[i + 1]]
        };
        let a = |m, k| {
            let i = lay.a(m, k);
            [x[i], x[i + 1]]
        };
        let mut logs = 0.0;
        let ok = self.slacks(q, v, a, &mut |s| {
            if s > 0.0 {
                logs -= s.ln();
                true
            } else {
                false
            }
        });
        if !ok {
            return None;
        }
        let f0 = self.variable_part(
            |m, k| self.q_of(lay, x, m, k),
            |m, k| {
                let i = lay.v(m, k);
                [x[i], x[i + 1]]
            },
        );
        Some(t * f0 + logs)
    }

    /// Gradient and block Hessian of the barrier function.
    fn derivatives(&self, lay: &Layout, st: &Structure, x: &[f64], t: f64) -> (Vec<f64>, Vec<DMatrix<f64>>) {
        let (nm, nn) = (lay.m, lay.n);
        let mut g = vec![0.0; x.len()];
        let mut h: Vec<DMatrix<f64>> = st.blocks.iter().map(|b| DMatrix::zeros(b.vars.len(), b.vars.len())).collect();
        let add2 = |g: &mut Vec<f64>, h: &mut Vec<DMatrix<f64>>, var: usize, gv: [f64; 2], hv: [[f64; 2]; 2]| {
            let (b, l) = st.owner[var];
            for i in 0..2 {
                g[var + i] += gv[i];
                for j in 0..2 {
                    h[b][(l + i, l + j)] += hv[i][j];
                }
            }
        };
        // Log barrier of a constraint with gradient `gs` and Hessian `hs` on one 2-vector.
        let log2 = |s: f64, gs: [f64; 2], hs: [[f64; 2]; 2]| -> ([f64; 2], [[f64; 2]; 2]) {
            let mut gv = [0.0; 2];
            let mut hv = [[0.0; 2]; 2];
            for i in 0..2 {
                gv[i] = -gs[i] / s;
                for j in 0..2 {
                    hv[i][j] = gs[i] * gs[j] / (s * s) - hs[i][j] / s;
                }
            }
            (gv, hv)
        };
        for m in 0..nm {
            let lim = &self.limits[m];
            for k in 0..nn {
                let vi = lay.v(m, k);
                let vv = [x[vi], x[vi + 1]];
                let vr = self.trust.vel(m, k);
                let (gp, hp) = propulsion_derivs(&lim.propulsion, vv, vr);
                let sc = t * self.energy_weight;
                add2(&mut g, &mut h, vi, [sc * gp[0], sc * gp[1]], [[sc * hp[0][0], sc * hp[0][1]], [sc * hp[1][0], sc * hp[1][1]]]);
                let s = lim.v_max * lim.v_max - vv[0] * vv[0] - vv[1] * vv[1];
                let (gb, hb) = log2(s, [-2.0 * vv[0], -2.0 * vv[1]], [[-2.0, 0.0], [0.0, -2.0]]);
                add2(&mut g, &mut h, vi, gb, hb);
                let s = super::speed_surrogate(vv, vr) - lim.v_min * lim.v_min;
                let (gb, hb) = log2(s, [2.0 * vr[0], 2.0 * vr[1]], [[0.0; 2]; 2]);
                add2(&mut g, &mut h, vi, gb, hb);
                if k + 1 < nn {
                    let ai = lay.a(m, k);
                    let aa = [x[ai], x[ai + 1]];
                    let s = lim.a_max * lim.a_max - aa[0] * aa[0] - aa[1] * aa[1];
                    let (gb, hb) = log2(s, [-2.0 * aa[0], -2.0 * aa[1]], [[-2.0, 0.0], [0.0, -2.0]]);
                    add2(&mut g, &mut h, ai, gb, hb);
                }
                if let Some(qi) = lay.q(m, k) {
                    let qr = self.trust.pos(m, k);
                    let (b, l) = st.owner[qi];
                    for c in 0..2 {
                        let e = x[qi + c] - qr[c];
                        let (s1, s2) = (self.trust_radius - e, self.trust_radius + e);
                        g[qi + c] += 1.0 / s1 - 1.0 / s2;
                        h[b][(l + c, l + c)] += 1.0 / (s1 * s1) + 1.0 / (s2 * s2);
                    }
                }
            }
        }
        for tm in &self.delay_terms {
            let Some(qi) = lay.q(tm.m, tm.n) else { continue };
            let qq = [x[qi], x[qi + 1]];
            let qr = self.trust.pos(tm.m, tm.n);
            let (gt, ht) = tm.per_bit_derivs(qq, qr);
            let sc = t * tm.weight * tm.bits;
            add2(&mut g, &mut h, qi, [sc * gt[0], sc * gt[1]], [[sc * ht[0][0], sc * ht[0][1]], [sc * ht[1][0], sc * ht[1][1]]]);
            if let Some(b) = tm.budget {
                let s = b - tm.bits * tm.per_bit(qq, qr);
                let gs = [-tm.bits * gt[0], -tm.bits * gt[1]];
                let hs = [[-tm.bits * ht[0][0], -tm.bits * ht[0][1]], [-tm.bits * ht[1][0], -tm.bits * ht[1][1]]];
                let (gb, hb) = log2(s, gs, hs);
                add2(&mut g, &mut h, qi, gb, hb);
            }
        }
        for sp in &self.separation {
            let (Some(im), Some(ii)) = (lay.q(sp.m, sp.n), lay.q(sp.i, sp.n)) else { continue };
            let z = super::separation_value([x[im], x[im + 1]], [x[ii], x[ii + 1]], sp.diff_r);
            let s = z - sp.d_min_sq;
            let grad = [(im, 2.0 * sp.diff_r[0]), (im + 1, 2.0 * sp.diff_r[1]), (ii, -2.0 * sp.diff_r[0]), (ii + 1, -2.0 * sp.diff_r[1])];
            let (b, _) = st.owner[im];
            for &(va, ga) in &grad {
                g[va] -= ga / s;
                let la = st.owner[va].1;
                for &(vb, gb) in &grad {
                    let lb = st.owner[vb].1;
                    h[b][(la, lb)] += ga * gb / (s * s);
                }
            }
        }
        (g, h)
    }

    /// Solves the subproblem to relative accuracy `tol` on the surrogate.
    pub fn solve(&self, tol: f64) -> SubproblemSolution {
        let lay = self.layout();
        let dt = self.trust.slot_s;
        let stalled = |steps| SubproblemSolution { plan: self.trust.clone(), objective: self.value(&self.trust), stalled: true, newton_steps: steps };
        if lay.n < 2 {
            return SubproblemSolution { plan: self.trust.clone(), objective: self.value(&self.trust), stalled: false, newton_steps: 0 };
        }
        let mut x = self.x0();
        if self.barrier(&lay, &x, 1.0).is_none() {
            return stalled(0);
        }
        let st = Structure::new(&lay, dt, &self.trust);
        let m_ineq = self.count_inequalities() as f64;
        let scale = |x: &[f64]| {
            let f0 = self.variable_part(
                |m, k| self.q_of(&lay, x, m, k),
                |m, k| {
                    let i = lay.v(m, k);
                    [x[i], x[i + 1]]
                },
            );
            (self.constant + f0).abs().max(f0.abs()).max(1e-12)
        };
        let mut t = m_ineq / (0.1 * scale(&x));
        let mut steps = 0;
        loop {
            let mut centered = false;
            for _ in 0..100 {
                let (g, h) = self.derivatives(&lay, &st, &x, t);
                let Some(kkt) = Kkt::factor(&st, &h) else { return stalled(steps) };
                let rx: Vec<f64> = g.iter().map(|v| -v).collect();
                let rr = st.eq_residual(&x).into_iter().map(|v| -v).collect::<Vec<_>>();
                let dx = kkt.solve_refined(&st, &h, &rx, &rr);
                steps += 1;
                let slope: f64 = g.iter().zip(&dx).map(|(a, b)| a * b).sum();
                let decrement = quad_form(&st, &h, &dx);
                if decrement.is_nan() || slope.is_nan() {
                    return stalled(steps);
                }
                let phi0 = self.barrier(&lay, &x, t).expect("iterate stays interior");
                // Below this the barrier value cannot resolve further decrease.
                let floor = 1e-9f64.max(1e-13 * phi0.abs());
                if decrement * 0.5 <= floor || slope >= 0.0 {
                    centered = true;
                    break;
                }
                let mut alpha = 1.0;
                let mut trial = vec![0.0; x.len()];
                let mut accepted = false;
                for _ in 0..60 {
                    for i in 0..x.len() {
                        trial[i] = x[i] + alpha * dx[i];
                    }
                    if let Some(phi) = self.barrier(&lay, &trial, t) {
                        if phi <= phi0 + 0.01 * alpha * slope {
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    // Round-off floor reached for this barrier weight.
                    centered = true;
                    break;
                }
                std::mem::swap(&mut x, &mut trial);
            }
            if !centered {
                return stalled(steps);
            }
            if m_ineq / t <= tol * scale(&x) {
                break;
            }
            t *= 10.0;
        }
        let v: Vec<[f64; 2]> = (0..lay.m)
            .flat_map(|m| (0..lay.n).map(move |k| (m, k)))
            .map(|(m, k)| {
                let i = lay.v(m, k);
                [x[i], x[i + 1]]
            })
            .collect();
        let starts: Vec<[f64; 2]> = (0..lay.m).map(|m| self.trust.pos(m, 0)).collect();
        let plan = TrajectoryPlan::from_velocities(&starts, v, dt);
        SubproblemSolution { objective: self.value(&plan), plan, stalled: false, newton_steps: steps }
    }
}

fn quad_form(st: &Structure, h: &[DMatrix<f64>], dx: &[f64]) -> f64 {
    let mut total = 0.0;
    for (b, blk) in st.blocks.iter().enumerate() {
        let local = DVector::from_iterator(blk.vars.len(), blk.vars.iter().map(|&v| dx[v]));
        total += local.dot(&(&h[b] * &local));
    }
    total
}

fn cholesky_regularized(m: &DMatrix<f64>, rel: f64) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let sym = 0.5 * (m + m.transpose());
    Cholesky::new(sym.clone()).or_else(|| {
        let reg = rel * sym.diagonal().abs().max().max(1e-300);
        Cholesky::new(sym + DMatrix::identity(m.nrows(), m.ncols()) * reg)
    })
}

/// Factored KKT system `[H Aᵀ; A 0]`, reduced to the block-tridiagonal
/// Schur complement `S = A H⁻¹ Aᵀ` (one block per time step).
struct Kkt {
    hinv: Vec<DMatrix<f64>>,
    schur: BlockTridiagonal,
}

impl Kkt {
    fn factor(st: &Structure, h: &[DMatrix<f64>]) -> Option<Self> {
        let hinv = h.iter().map(|hb| cholesky_regularized(hb, 1e-12).map(|c| c.inverse())).collect::<Option<Vec<_>>>()?;
        let gs = st.group;
        let ngroups = st.rows.len() / gs;
        let mut diag = vec![DMatrix::<f64>::zeros(gs, gs); ngroups];
        let mut off = vec![DMatrix::<f64>::zeros(gs, gs); ngroups.saturating_sub(1)];
        for (b, blk) in st.blocks.iter().enumerate() {
            for &(ri, li, ci) in &blk.rows {
                for &(rj, lj, cj) in &blk.rows {
                    let (gi, gj) = (ri / gs, rj / gs);
                    let val = ci * cj * hinv[b][(li, lj)];
                    if gi == gj {
                        diag[gi][(ri % gs, rj % gs)] += val;
                    } else if gi == gj + 1 {
                        off[gj][(ri % gs, rj % gs)] += val;
                    }
                }
            }
        }
        Some(Self { schur: BlockTridiagonal::factor(&diag, &off)?, hinv })
    }

    fn apply_hinv(&self, st: &Structure, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        for (b, blk) in st.blocks.iter().enumerate() {
            let local = DVector::from_iterator(blk.vars.len(), blk.vars.iter().map(|&v| r[v]));
            let res = &self.hinv[b] * local;
            for (l, &v) in blk.vars.iter().enumerate() {
                out[v] = res[l];
            }
        }
        out
    }

    /// Solves `H dx + Aᵀν = rx`, `A dx = rr`.
    fn solve(&self, st: &Structure, rx: &[f64], rr: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = self.apply_hinv(st, rx);
        let au = st.apply_a(&u);
        let rhs: Vec<f64> = au.iter().zip(rr).map(|(a, r)| a - r).collect();
        let nu = self.schur.solve(&rhs);
        let mut resid = rx.to_vec();
        st.add_at(&nu, &mut resid, -1.0);
        (self.apply_hinv(st, &resid), nu)
    }

    /// `solve` plus two rounds of iterative refinement.
    fn solve_refined(&self, st: &Structure, h: &[DMatrix<f64>], rx: &[f64], rr: &[f64]) -> Vec<f64> {
        let (mut dx, mut nu) = self.solve(st, rx, rr);
        for _ in 0..2 {
            let mut e1 = rx.to_vec();
            for (b, blk) in st.blocks.iter().enumerate() {
                let local = DVector::from_iterator(blk.vars.len(), blk.vars.iter().map(|&v| dx[v]));
                let hl = &h[b] * local;
                for (l, &v) in blk.vars.iter().enumerate() {
                    e1[v] -= hl[l];
                }
            }
            st.add_at(&nu, &mut e1, -1.0);
            let adx = st.apply_a(&dx);
            let e2: Vec<f64> = rr.iter().zip(&adx).map(|(r, a)| r - a).collect();
            let (cx, cn) = self.solve(st, &e1, &e2);
            for (d, c) in dx.iter_mut().zip(&cx) {
                *d += c;
            }
            for (d, c) in nu.iter_mut().zip(&cn) {
                *d += c;
            }
        }
        dx
    }
}

/// Cholesky factor of a symmetric positive definite block-tridiagonal
/// matrix with diagonal blocks `D_k` and sub-diagonal blocks `S[k+1][k]`.
pub struct BlockTridiagonal {
    chol: Vec<DMatrix<f64>>,
    /// `W_k = S[k][k-1] · C_{k-1}⁻ᵀ`; `w[0]` is unused.
    w: Vec<DMatrix<f64>>,
    gs: usize,
}

impl BlockTridiagonal {
    pub fn factor(diag: &[DMatrix<f64>], off: &[DMatrix<f64>]) -> Option<Self> {
        let nb = diag.len();
        let gs = diag.first().map_or(0, |d| d.nrows());
        let mut chol: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        let mut w: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut dk = diag[k].clone();
            if k > 0 {
                let x = chol[k - 1].solve_lower_triangular(&off[k - 1].transpose())?;
                dk -= x.transpose() * &x;
                w.push(x.transpose());
            } else {
                w.push(DMatrix::zeros(gs, gs));
            }
            chol.push(cholesky_regularized(&dk, 1e-13)?.l());
        }
        Some(Self { chol, w, gs })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (nb, gs) = (self.chol.len(), self.gs);
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(nb);
        for k in 0..nb {
            let mut bk = DVector::from_column_slice(&b[k * gs..(k + 1) * gs]);
            if k > 0 {
                bk -= &self.w[k] * &z[k - 1];
            }
            z.push(self.chol[k].solve_lower_triangular(&bk).expect("nonsingular factor"));
        }
        let mut y = vec![DVector::zeros(gs); nb];
        for k in (0..nb).rev() {
            let mut zk = z[k].clone();
            if k + 1 < nb {
                zk -= self.w[k + 1].transpose() * &y[k + 1];
            }
            y[k] = self.chol[k].tr_solve_lower_triangular(&zk).expect("nonsingular factor");
        }
        y.into_iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect()
    }
}

/// Solves `S y = b` for block-tridiagonal SPD `S` (see [`BlockTridiagonal`]).
pub fn solve_block_tridiagonal(diag: &[DMatrix<f64>], off: &[DMatrix<f64>], b: &[f64]) -> Option<Vec<f64>> {
    Some(BlockTridiagonal::factor(diag, off)?.solve(b))
}
