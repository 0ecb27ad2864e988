//! Air-to-ground channel: LoS probability, path loss, fading, shadowing,
//! expected gain and uplink rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Speed of light used in the free-space reference loss (m/s).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    pub noise_w: f64,
    pub carrier_hz: f64,
    pub ref_dist_m: f64,
    pub pathloss_exp_los: f64,
    pub pathloss_exp_nlos: f64,
    pub shadow_std_los_db: f64,
    pub shadow_std_nlos_db: f64,
    pub nakagami_los: f64,
    pub nakagami_nlos: f64,
    pub mean_power: f64,
    pub los_sigmoid_a: f64,
    pub los_sigmoid_b: f64,
    /// Fold the log-normal shadowing mean into the expected gain.
    pub shadow_mean_correction: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth_hz: 20e6,
            noise_w: 1e-13,
            carrier_hz: 2e9,
            ref_dist_m: 1.0,
            pathloss_exp_los: 2.0,
            pathloss_exp_nlos: 3.5,
            shadow_std_los_db: 4.0,
            shadow_std_nlos_db: 8.0,
            nakagami_los: 3.0,
            nakagami_nlos: 1.0,
            mean_power: 1.0,
            los_sigmoid_a: 9.61,
            los_sigmoid_b: 0.16,
            shadow_mean_correction: false,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("channel.bandwidth_hz", self.bandwidth_hz),
            ("channel.noise", self.noise_w),
            ("channel.carrier_hz", self.carrier_hz),
            ("channel.ref_dist_m", self.ref_dist_m),
            ("channel.pathloss_exp_los", self.pathloss_exp_los),
            ("channel.pathloss_exp_nlos", self.pathloss_exp_nlos),
            ("channel.mean_power", self.mean_power),
        ];
        for (path, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(path, "must be positive"));
            }
        }
        for (path, v) in [
            ("channel.shadow_std_los_db", self.shadow_std_los_db),
            ("channel.shadow_std_nlos_db", self.shadow_std_nlos_db),
            ("channel.los_sigmoid_a", self.los_sigmoid_a),
            ("channel.los_sigmoid_b", self.los_sigmoid_b),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(path, "must be non-negative"));
            }
        }
        for (path, w) in [("channel.nakagami_los", self.nakagami_los), ("channel.nakagami_nlos", self.nakagami_nlos)] {
            if !(w >= 0.5) {
                return Err(ConfigError::invalid(path, "Nakagami shape must be at least 0.5"));
            }
        }
        Ok(())
    }

    /// Free-space loss at the reference distance, `(4π d0 fc / c)²`.
    pub fn reference_loss(&self) -> f64 {
        let k = 4.0 * std::f64::consts::PI * self.ref_dist_m * self.carrier_hz / SPEED_OF_LIGHT;
        k * k
    }

    fn shadow_factor(&self, std_db: f64) -> f64 {
        if self.shadow_mean_correction {
            let s = std_db * std::f64::consts::LN_10 / 10.0;
            (0.5 * s * s).exp()
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    LoS,
    NLoS,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub horiz_dist_m: f64,
    pub altitude_m: f64,
    pub slant_dist_m: f64,
    pub elevation_rad: f64,
}

impl LinkGeometry {
    pub fn new(horiz_dist_m: f64, altitude_m: f64) -> Self {
        let h = horiz_dist_m.abs();
        Self { horiz_dist_m: h, altitude_m, slant_dist_m: h.hypot(altitude_m), elevation_rad: altitude_m.atan2(h) }
    }

    pub fn between(user: [f64; 2], uav: [f64; 2], altitude_m: f64) -> Self {
        Self::new((uav[0] - user[0]).hypot(uav[1] - user[1]), altitude_m)
    }
}

pub fn los_probability(g: &LinkGeometry, p: &ChannelParams) -> f64 {
    let theta = g.elevation_rad.to_degrees();
    let a = p.los_sigmoid_a;
    1.0 / (1.0 + a * (-p.los_sigmoid_b * (theta - a)).exp())
}

/// Linear attenuation and whether the distance had to be clamped up to `d0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLoss {
    pub factor: f64,
    pub clamped: bool,
}

pub fn path_loss(g: &LinkGeometry, kind: LinkKind, p: &ChannelParams) -> PathLoss {
    let beta = match kind {
        LinkKind::LoS => p.pathloss_exp_los,
        LinkKind::NLoS => p.pathloss_exp_nlos,
    };
    let clamped = g.slant_dist_m < p.ref_dist_m;
    let d = g.slant_dist_m.max(p.ref_dist_m);
    PathLoss { factor: p.reference_loss() * (d / p.ref_dist_m).powf(beta), clamped }
}

pub fn expected_channel_gain(g: &LinkGeometry, p: &ChannelParams) -> f64 {
    let pl = los_probability(g, p);
    let il = path_loss(g, LinkKind::LoS, p).factor;
    let inl = path_loss(g, LinkKind::NLoS, p).factor;
    pl * p.mean_power * p.shadow_factor(p.shadow_std_los_db) / il + (1.0 - pl) * p.mean_power * p.shadow_factor(p.shadow_std_nlos_db) / inl
}

/// Seeded sampler for the random channel (validation only; solvers use
/// the expected gain).
pub struct ChannelSampler {
    rng: ChaCha8Rng,
    params: ChannelParams,
}

impl ChannelSampler {
    pub fn new(params: ChannelParams, seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), params }
    }

    /// Fading power with Nakagami shape `w`; infinite shape is deterministic.
    pub fn fading_power(&mut self, w: f64) -> f64 {
        let pbar = self.params.mean_power;
        if w.is_infinite() {
            return pbar;
        }
        Gamma::new(w, pbar / w).expect("valid gamma").sample(&mut self.rng)
    }

    fn shadowing(&mut self, std_db: f64) -> f64 {
        if std_db == 0.0 {
            return 1.0;
        }
        let x: f64 = Normal::new(0.0, std_db).expect("valid normal").sample(&mut self.rng);
        10f64.powf(-x / 10.0)
    }

    pub fn sample(&mut self, g: &LinkGeometry) -> f64 {
        let p = self.params;
        let los = Bernoulli::new(los_probability(g, &p).clamp(0.0, 1.0)).expect("valid probability").sample(&mut self.rng);
        let (kind, w, std_db) =
            if los { (LinkKind::LoS, p.nakagami_los, p.shadow_std_los_db) } else { (LinkKind::NLoS, p.nakagami_nlos, p.shadow_std_nlos_db) };
        let h = self.fading_power(w);
        let s = self.shadowing(std_db);
        h * s / path_loss(g, kind, &p).factor
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen()
    }
}

pub fn sample_channel_gain(g: &LinkGeometry, p: &ChannelParams, seed: u64) -> f64 {
    ChannelSampler::new(*p, seed).sample(g)
}

pub fn uplink_rate(gain: f64, tx_power_w: f64, p: &ChannelParams) -> f64 {
    p.bandwidth_hz * (1.0 + tx_power_w * gain / p.noise_w).log2()
}

/// Expected-gain rate at horizontal distance `r`.
pub fn rate_at_distance(r: f64, altitude_m: f64, tx_power_w: f64, p: &ChannelParams) -> f64 {
    uplink_rate(expected_channel_gain(&LinkGeometry::new(r, altitude_m), p), tx_power_w, p)
}

/// Rate and its derivative with respect to horizontal distance.
pub fn rate_and_slope(r: f64, altitude_m: f64, tx_power_w: f64, p: &ChannelParams) -> (f64, f64) {
    let geo = LinkGeometry::new(r, altitude_m);
    let r = geo.horiz_dist_m;
    let d2 = geo.slant_dist_m * geo.slant_dist_m;
    let pl = los_probability(&geo, p);
    let dtheta = -(180.0 / std::f64::consts::PI) * altitude_m / d2;
    let dpl = p.los_sigmoid_b * pl * (1.0 - pl) * dtheta;

    let gl = p.mean_power * p.shadow_factor(p.shadow_std_los_db) / path_loss(&geo, LinkKind::LoS, p).factor;
    let gn = p.mean_power * p.shadow_factor(p.shadow_std_nlos_db) / path_loss(&geo, LinkKind::NLoS, p).factor;
    let clamp = geo.slant_dist_m < p.ref_dist_m;
    let (dgl, dgn) = if clamp { (0.0, 0.0) } else { (-p.pathloss_exp_los * gl * r / d2, -p.pathloss_exp_nlos * gn * r / d2) };
    let g = pl * gl + (1.0 - pl) * gn;
    let dg = dpl * (gl - gn) + pl * dgl + (1.0 - pl) * dgn;

    let snr_per_gain = tx_power_w / p.noise_w;
    let rate = p.bandwidth_hz * (1.0 + snr_per_gain * g).log2();
    let slope = p.bandwidth_hz / std::f64::consts::LN_2 * snr_per_gain * dg / (1.0 + snr_per_gain * g);
    (rate, slope)
}
