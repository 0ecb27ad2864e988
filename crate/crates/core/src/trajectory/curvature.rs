//! Curvature bounds for the per-bit transmission time `τ(r) = 1/R(r)` as a
//! function of horizontal UAV position.
//!
//! `τ` has a tiny cone-shaped kink above the user (the LoS sigmoid is not
//! flat at 90° elevation). It is split as `τ(r) = k·r + τ_s(r)` with
//! `k = τ'(0⁺)`; the cone part is convex and kept exact (lightly smoothed),
//! and `τ_s` is smooth, so a quadratic upper bound with curvature
//! `max(τ_s'', τ_s'/r)` majorizes it.

use crate::channel::{rate_and_slope, ChannelParams};

/// Smoothing radius of the cone term (m).
pub const CONE_EPS: f64 = 1e-3;
const GRID_STEP: f64 = 1.0;
const FD_STEP: f64 = 0.05;
const SAFETY: f64 = 1.25;

#[derive(Debug, Clone)]
pub struct DelayCurvature {
    altitude_m: f64,
    tx_power_w: f64,
    channel: ChannelParams,
    /// `τ'(0⁺)` (s/bit/m).
    pub cone_slope: f64,
    /// Running maximum of the Hessian bound on the grid.
    cummax: Vec<f64>,
}

impl DelayCurvature {
    pub fn new(altitude_m: f64, tx_power_w: f64, channel: ChannelParams) -> Self {
        let (r0, s0) = rate_and_slope(0.0, altitude_m, tx_power_w, &channel);
        let cone_slope = (-s0 / (r0 * r0)).max(0.0);
        Self { altitude_m, tx_power_w, channel, cone_slope, cummax: Vec::new() }
    }

    /// `τ(r)` and `τ'(r)`.
    pub fn tau(&self, r: f64) -> (f64, f64) {
        let (rate, slope) = rate_and_slope(r, self.altitude_m, self.tx_power_w, &self.channel);
        (1.0 / rate, -slope / (rate * rate))
    }

    /// Smooth part `τ_s(r) = τ(r) − k r` and its derivative.
    pub fn smooth(&self, r: f64) -> (f64, f64) {
        let (t, dt) = self.tau(r);
        (t - self.cone_slope * r, dt - self.cone_slope)
    }

    fn bound_at(&self, r: f64) -> f64 {
        let lo = (r - FD_STEP).max(0.0);
        let hi = r + FD_STEP;
        let second = (self.smooth(hi).1 - self.smooth(lo).1) / (hi - lo);
        let radial = if r > FD_STEP { self.smooth(r).1 / r } else { second };
        second.max(radial).max(0.0)
    }

    /// Upper bound on the Hessian of `τ_s(‖q − w‖)` over `‖q − w‖ ≤ r_max`.
    pub fn lipschitz(&mut self, r_max: f64) -> f64 {
        let need = (r_max / GRID_STEP).ceil() as usize + 2;
        while self.cummax.len() < need {
            let i = self.cummax.len();
            let b = self.bound_at(i as f64 * GRID_STEP);
            let prev = self.cummax.last().copied().unwrap_or(0.0);
            self.cummax.push(prev.max(b));
        }
        SAFETY * self.cummax[need - 1]
    }
}

/// Smoothed cone `sqrt(‖d‖² + ε²)`.
#[inline]
pub fn cone(d: [f64; 2]) -> f64 {
    (d[0] * d[0] + d[1] * d[1] + CONE_EPS * CONE_EPS).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bound_majorizes_along_rays() {
        let mut c = DelayCurvature::new(100.0, 1.0, ChannelParams::default());
        assert!(c.cone_slope >= 0.0);
        let l = c.lipschitz(1500.0);
        let w = [0.0, 0.0];
        let f = |q: [f64; 2], c: &DelayCurvature| {
            let r = (q[0] - w[0]).hypot(q[1] - w[1]);
            c.smooth(r).0
        };
        for &(qr, dq) in &[([300.0, 40.0], [-250.0, 30.0]), ([5.0, 0.0], [-10.0, 3.0]), ([100.0, 0.0], [0.0, 200.0]), ([900.0, 100.0], [200.0, -300.0])] {
            let r = f64::hypot(qr[0], qr[1]);
            let (t0, dt0) = c.smooth(r);
            let g = [dt0 * qr[0] / r, dt0 * qr[1] / r];
            for k in 0..=20 {
                let s = k as f64 / 20.0;
                let q = [qr[0] + s * dq[0], qr[1] + s * dq[1]];
                let d = [q[0] - qr[0], q[1] - qr[1]];
                let ub = t0 + g[0] * d[0] + g[1] * d[1] + 0.5 * l * (d[0] * d[0] + d[1] * d[1]);
                assert!(f(q, &c) <= ub + 1e-24, "q={q:?}");
            }
        }
    }
}
