//! World description: time grid, users, UAV fleet, channel, tasks and
//! objective weights, plus the TOML config schema that produces them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::ConfigError;

/// Config schema version understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

/// Seed of the user placement stream when none is configured.
pub const DEFAULT_PLACEMENT_SEED: u64 = 7;

/// Default UAV start positions (m); the first two are the reference pair.
pub const DEFAULT_UAV_POSITIONS: [[f64; 2]; 6] = [[800.0, 1200.0], [2000.0, 1000.0], [800.0, 2300.0], [2000.0, 2200.0], [1400.0, 500.0], [1400.0, 2600.0]];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon_s: f64,
    pub n_slots: usize,
    pub slot_s: f64,
}

impl TimeGrid {
    pub fn new(horizon_s: f64, n_slots: usize) -> Result<Self, ConfigError> {
        if n_slots == 0 {
            return Err(ConfigError::invalid("time.n_slots", "must be at least 1"));
        }
        if !(horizon_s > 0.0 && horizon_s.is_finite()) {
            return Err(ConfigError::invalid("time.horizon_s", "must be positive"));
        }
        Ok(Self { horizon_s, n_slots, slot_s: horizon_s / n_slots as f64 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width_m: f64,
    pub height_m: f64,
}

impl Area {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= 0.0 && p[0] <= self.width_m && p[1] >= 0.0 && p[1] <= self.height_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    pub position: [f64; 2],
    pub cpu_hz: f64,
    pub tx_power_w: f64,
    pub cap_coeff: f64,
}

/// Rotary-wing propulsion model coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropulsionParams {
    pub blade_profile_w: f64,
    pub induced_w: f64,
    pub tip_speed: f64,
    pub rotor_induced_v0: f64,
    pub fuselage_drag_ratio: f64,
    pub air_density: f64,
    pub rotor_solidity: f64,
    pub disc_area: f64,
}

impl Default for PropulsionParams {
    fn default() -> Self {
        Self {
            blade_profile_w: 79.86,
            induced_w: 88.63,
            tip_speed: 120.0,
            rotor_induced_v0: 4.03,
            fuselage_drag_ratio: 0.6,
            air_density: 1.225,
            rotor_solidity: 0.05,
            disc_area: 0.503,
        }
    }
}

impl PropulsionParams {
    /// Coefficient of the cubic parasite term, `½ d0 ρ0 s A`.
    pub fn parasite_coeff(&self) -> f64 {
        0.5 * self.fuselage_drag_ratio * self.air_density * self.rotor_solidity * self.disc_area
    }

    /// Propulsion power (W) at horizontal speed `speed` (m/s).
    pub fn power(&self, speed: f64) -> f64 {
        let v2 = speed * speed;
        let x = v2 / (self.rotor_induced_v0 * self.rotor_induced_v0);
        self.blade_profile_w * (1.0 + 3.0 * v2 / (self.tip_speed * self.tip_speed)) + self.induced_w * induced_factor(x) + self.parasite_coeff() * v2 * speed
    }
}

/// `sqrt(sqrt(1 + x²/4) - x/2)` written in a cancellation-free form.
pub fn induced_factor(x: f64) -> f64 {
    (1.0 / ((1.0 + 0.25 * x * x).sqrt() + 0.5 * x)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavSpec {
    pub initial_position: [f64; 2],
    pub altitude_m: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub d_min: f64,
    pub a_max: f64,
    pub cpu_max_hz: f64,
    pub cap_coeff: f64,
    pub propulsion: PropulsionParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub size_bits: f64,
    pub intensity: f64,
    pub deadline_s: f64,
}

impl TaskSpec {
    pub fn cycles(&self) -> f64 {
        self.size_bits * self.intensity
    }

    pub fn is_empty(&self) -> bool {
        self.size_bits <= 0.0
    }
}

/// Ranges tasks are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskDistribution {
    pub arrival_prob: f64,
    pub size_bits: [f64; 2],
    pub intensity: [f64; 2],
    pub deadline_s: [f64; 2],
}

impl TaskDistribution {
    pub fn mean_size(&self) -> f64 {
        0.5 * (self.size_bits[0] + self.size_bits[1])
    }

    pub fn mean_intensity(&self) -> f64 {
        0.5 * (self.intensity[0] + self.intensity[1])
    }
}

/// Per-term scale factors that make the scalarized objective unitless.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub delay_s: f64,
    pub energy_j: f64,
    pub offloaded_bits: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub w_delay: f64,
    pub w_energy: f64,
    pub w_offload: f64,
    pub normalizers: Normalizers,
}

impl ObjectiveWeights {
    /// Weight per second of delay.
    pub fn delay_scale(&self) -> f64 {
        self.w_delay / self.normalizers.delay_s
    }

    /// Weight per joule of UAV energy.
    pub fn energy_scale(&self) -> f64 {
        self.w_energy / self.normalizers.energy_j
    }

    /// Reward per offloaded bit.
    pub fn offload_scale(&self) -> f64 {
        self.w_offload / self.normalizers.offloaded_bits
    }
}

/// Numerical knobs shared by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_users_per_uav: usize,
    pub rounding_threshold: f64,
    pub slack_weight: f64,
    pub relaxed_tol: f64,
    pub relaxed_max_rounds: usize,
    pub bisection_eps_rel: f64,
    pub sca_max_iters: usize,
    pub sca_tol: f64,
    pub subproblem_tol: f64,
    pub trust_region_m: f64,
    pub outer_eps: f64,
    pub max_outer: usize,
    pub cruise_speed: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_users_per_uav: 1,
            rounding_threshold: 0.5,
            slack_weight: 1.0,
            relaxed_tol: 1e-6,
            relaxed_max_rounds: 50,
            bisection_eps_rel: 1e-6,
            sca_max_iters: 30,
            sca_tol: 1e-4,
            subproblem_tol: 1e-6,
            trust_region_m: 250.0,
            outer_eps: 1e-4,
            max_outer: 100,
            cruise_speed: 30.0,
        }
    }
}

/// Validated, immutable simulation world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub time: TimeGrid,
    pub area: Area,
    pub users: Vec<UserSpec>,
    pub uavs: Vec<UavSpec>,
    pub channel: ChannelParams,
    pub tasks: TaskDistribution,
    pub weights: ObjectiveWeights,
    pub solver: SolverConfig,
}

/// Per-user per-slot tasks, stored slot-major (`n * n_users + u`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub n_users: usize,
    pub n_slots: usize,
    pub tasks: Vec<TaskSpec>,
}

impl TaskSchedule {
    pub fn get(&self, u: usize, n: usize) -> &TaskSpec {
        &self.tasks[n * self.n_users + u]
    }

    /// Total bits generated over the horizon.
    pub fn total_bits(&self) -> f64 {
        self.tasks.iter().map(|t| t.size_bits).sum()
    }
}

impl Scenario {
    /// Scenario with every field at its default.
    pub fn default_scenario() -> Self {
        Self::from_toml_str("").expect("defaults are valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        ScenarioConfig::from_toml_str(text)?.resolve()
    }

    pub fn from_toml_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Canonical JSON snapshot (stable field order, shortest round-trip floats).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario =
            serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema { path: e.path().to_string(), message: e.inner().to_string() })?;
        s.validate()?;
        Ok(s)
    }

    /// Fully explicit config that reloads to this scenario.
    pub fn to_config(&self) -> ScenarioConfig {
        let u0 = self.users.first();
        let m0 = self.uavs.first();
        ScenarioConfig {
            schema_version: Some(SCHEMA_VERSION),
            time: TimeSection { horizon_s: Some(self.time.horizon_s), n_slots: Some(self.time.n_slots) },
            area: AreaSection { width_m: Some(self.area.width_m), height_m: Some(self.area.height_m) },
            users: UserSection {
                count: Some(self.users.len()),
                placement_seed: None,
                positions: Some(self.users.iter().map(|u| u.position).collect()),
                cpu_hz: u0.map(|u| u.cpu_hz),
                tx_power_dbm: u0.map(|u| watts_to_dbm(u.tx_power_w)),
                cap_coeff: u0.map(|u| u.cap_coeff),
            },
            uavs: UavSection {
                count: Some(self.uavs.len()),
                initial_positions: Some(self.uavs.iter().map(|m| m.initial_position).collect()),
                altitude_m: m0.map(|m| m.altitude_m),
                v_min: m0.map(|m| m.v_min),
                v_max: m0.map(|m| m.v_max),
                d_min: m0.map(|m| m.d_min),
                a_max: m0.map(|m| m.a_max),
                cpu_max_hz: m0.map(|m| m.cpu_max_hz),
                cap_coeff: m0.map(|m| m.cap_coeff),
                propulsion: m0.map(|m| m.propulsion),
            },
            channel: ChannelSection::from_params(&self.channel),
            tasks: TaskSection {
                arrival_prob: Some(self.tasks.arrival_prob),
                size_bits: Some(self.tasks.size_bits),
                intensity: Some(self.tasks.intensity),
                deadline_s: Some(self.tasks.deadline_s),
            },
            weights: WeightSection {
                delay: Some(self.weights.w_delay),
                energy: Some(self.weights.w_energy),
                offload: Some(self.weights.w_offload),
                normalizers: Some(self.weights.normalizers),
            },
            solver: Some(self.solver),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_config()).expect("config serializes")
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_uavs(&self) -> usize {
        self.uavs.len()
    }

    pub fn n_slots(&self) -> usize {
        self.time.n_slots
    }

    pub fn slot_s(&self) -> f64 {
        self.time.slot_s
    }

    /// Expected metrics of the all-local, hovering baseline.
    pub fn derived_normalizers(&self) -> Normalizers {
        let n = self.time.n_slots as f64;
        let p = self.tasks.arrival_prob;
        let d = self.tasks.mean_size();
        let dc = d * self.tasks.mean_intensity();
        let delay: f64 = self.users.iter().map(|u| n * p * dc / u.cpu_hz).sum();
        let energy: f64 = self.uavs.iter().map(|m| n * self.time.slot_s * m.propulsion.power(0.0)).sum();
        let bits = n * self.users.len() as f64 * p * d;
        Normalizers { delay_s: positive_or_one(delay), energy_j: positive_or_one(energy), offloaded_bits: positive_or_one(bits) }
    }

    /// Checks every field-level and cross-field invariant.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.time;
        if t.n_slots == 0 || !(t.slot_s > 0.0) || !(t.horizon_s > 0.0) {
            return Err(ConfigError::invalid("time", "horizon and slot count must be positive"));
        }
        if ((t.slot_s * t.n_slots as f64) - t.horizon_s).abs() > 1e-9 * t.horizon_s {
            return Err(ConfigError::invalid("time.slot_s", "slot_s * n_slots must equal horizon_s"));
        }
        if !(self.area.width_m > 0.0 && self.area.height_m > 0.0) {
            return Err(ConfigError::invalid("area", "dimensions must be positive"));
        }
        for (i, u) in self.users.iter().enumerate() {
            let path = |f: &str| format!("users[{i}].{f}");
            if !(u.cpu_hz > 0.0) {
                return Err(ConfigError::invalid(&path("cpu_hz"), "must be positive"));
            }
            if !(u.tx_power_w > 0.0) {
                return Err(ConfigError::invalid(&path("tx_power"), "must be positive"));
            }
            if !(u.cap_coeff >= 0.0) {
                return Err(ConfigError::invalid(&path("cap_coeff"), "must be non-negative"));
            }
            if !self.area.contains(u.position) {
                return Err(ConfigError::invalid(&path("position"), "outside the service area"));
            }
        }
        if self.uavs.is_empty() {
            return Err(ConfigError::invalid("uavs.count", "need at least one UAV"));
        }
        for (i, m) in self.uavs.iter().enumerate() {
            let path = |f: &str| format!("uavs[{i}].{f}");
            if !(m.v_min > 0.0) {
                return Err(ConfigError::invalid(&path("v_min"), "must be positive"));
            }
            if !(m.v_min < m.v_max) {
                return Err(ConfigError::invalid(&path("v_min"), "must be below v_max"));
            }
            if !(m.d_min > 0.0) {
                return Err(ConfigError::invalid(&path("d_min"), "must be positive"));
            }
            if !(m.a_max > 0.0) {
                return Err(ConfigError::invalid(&path("a_max"), "must be positive"));
            }
            if !(m.cpu_max_hz > 0.0) {
                return Err(ConfigError::invalid(&path("cpu_max_hz"), "must be positive"));
            }
            if !(m.cap_coeff > 0.0) {
                return Err(ConfigError::invalid(&path("cap_coeff"), "must be positive"));
            }
            if !(m.altitude_m > 0.0) {
                return Err(ConfigError::invalid(&path("altitude_m"), "must be positive"));
            }
            let p = &m.propulsion;
            let all = [p.blade_profile_w, p.induced_w, p.tip_speed, p.rotor_induced_v0, p.fuselage_drag_ratio, p.air_density, p.rotor_solidity, p.disc_area];
            if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(ConfigError::invalid(&path("propulsion"), "all parameters must be positive"));
            }
        }
        let alt = self.uavs[0].altitude_m;
        if self.uavs.iter().any(|m| m.altitude_m != alt) {
            return Err(ConfigError::invalid("uavs.altitude_m", "all UAVs share one altitude"));
        }
        self.channel.validate()?;
        let td = &self.tasks;
        if !(0.0..=1.0).contains(&td.arrival_prob) {
            return Err(ConfigError::invalid("tasks.arrival_prob", "must lie in [0, 1]"));
        }
        check_range("tasks.size_bits", td.size_bits, 0.0, false)?;
        check_range("tasks.intensity", td.intensity, 0.0, true)?;
        check_range("tasks.deadline_s", td.deadline_s, 0.0, true)?;
        let w = &self.weights;
        if [w.w_delay, w.w_energy, w.w_offload].iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(ConfigError::invalid("weights", "weights must be non-negative"));
        }
        if w.w_delay + w.w_energy + w.w_offload <= 0.0 {
            return Err(ConfigError::invalid("weights", "weights must not all be zero"));
        }
        let nz = &w.normalizers;
        if [nz.delay_s, nz.energy_j, nz.offloaded_bits].iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(ConfigError::invalid("weights.normalizers", "must be positive"));
        }
        let s = &self.solver;
        if s.max_users_per_uav == 0 {
            return Err(ConfigError::invalid("solver.max_users_per_uav", "must be at least 1"));
        }
        if !(s.rounding_threshold > 0.0 && s.rounding_threshold < 1.0) {
            return Err(ConfigError::invalid("solver.rounding_threshold", "must lie in (0, 1)"));
        }
        if !(s.slack_weight >= 0.0) {
            return Err(ConfigError::invalid("solver.slack_weight", "must be non-negative"));
        }
        let positive = [
            ("solver.relaxed_tol", s.relaxed_tol),
            ("solver.bisection_eps_rel", s.bisection_eps_rel),
            ("solver.sca_tol", s.sca_tol),
            ("solver.subproblem_tol", s.subproblem_tol),
            ("solver.trust_region_m", s.trust_region_m),
            ("solver.outer_eps", s.outer_eps),
            ("solver.cruise_speed", s.cruise_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    /// Draws one task per user per slot.
    ///
    /// Every cell consumes exactly four uniforms (arrival, size, intensity,
    /// deadline) in slot-major order, so changing a range keeps the random
    /// stream aligned across sweep points.
    pub fn generate_tasks(&self, seed: u64) -> TaskSchedule {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let td = &self.tasks;
        let lerp = |r: [f64; 2], t: f64| r[0] + t * (r[1] - r[0]);
        let mut tasks = Vec::with_capacity(self.n_users() * self.n_slots());
        for _n in 0..self.n_slots() {
            for _u in 0..self.n_users() {
                let arrive: f64 = rng.gen();
                let s: f64 = rng.gen();
                let c: f64 = rng.gen();
                let d: f64 = rng.gen();
                let size = if arrive < td.arrival_prob { lerp(td.size_bits, s) } else { 0.0 };
                tasks.push(TaskSpec { size_bits: size, intensity: lerp(td.intensity, c), deadline_s: lerp(td.deadline_s, d) });
            }
        }
        TaskSchedule { n_users: self.n_users(), n_slots: self.n_slots(), tasks }
    }
}

fn positive_or_one(x: f64) -> f64 {
    if x > 0.0 && x.is_finite() {
        x
    } else {
        1.0
    }
}

fn check_range(path: &str, r: [f64; 2], floor: f64, strict: bool) -> Result<(), ConfigError> {
    let ok_floor = if strict { r[0] > floor } else { r[0] >= floor };
    if !ok_floor || !r[1].is_finite() {
        return Err(ConfigError::invalid(path, "lower bound out of range"));
    }
    if r[0] > r[1] {
        return Err(ConfigError::invalid(path, "lower bound exceeds upper bound"));
    }
    Ok(())
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

// ---------------------------------------------------------------------------
// Config schema. Every field is optional; omitted fields take defaults.

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema_version: Option<u32>,
    #[serde(default)]
    pub time: TimeSection,
    #[serde(default)]
    pub area: AreaSection,
    #[serde(default)]
    pub users: UserSection,
    #[serde(default)]
    pub uavs: UavSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub tasks: TaskSection,
    #[serde(default)]
    pub weights: WeightSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub horizon_s: Option<f64>,
    pub n_slots: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaSection {
    pub width_m: Option<f64>,
    pub height_m: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSection {
    pub count: Option<usize>,
    pub placement_seed: Option<u64>,
    pub positions: Option<Vec<[f64; 2]>>,
    pub cpu_hz: Option<f64>,
    pub tx_power_dbm: Option<f64>,
    pub cap_coeff: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSection {
    pub count: Option<usize>,
    pub initial_positions: Option<Vec<[f64; 2]>>,
    pub altitude_m: Option<f64>,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub d_min: Option<f64>,
    pub a_max: Option<f64>,
    pub cpu_max_hz: Option<f64>,
    pub cap_coeff: Option<f64>,
    pub propulsion: Option<PropulsionParams>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub bandwidth_hz: Option<f64>,
    pub noise_dbm: Option<f64>,
    pub carrier_hz: Option<f64>,
    pub ref_dist_m: Option<f64>,
    pub pathloss_exp_los: Option<f64>,
    pub pathloss_exp_nlos: Option<f64>,
    pub shadow_std_los_db: Option<f64>,
    pub shadow_std_nlos_db: Option<f64>,
    pub nakagami_los: Option<f64>,
    pub nakagami_nlos: Option<f64>,
    pub mean_power: Option<f64>,
    pub los_sigmoid_a: Option<f64>,
    pub los_sigmoid_b: Option<f64>,
    pub shadow_mean_correction: Option<bool>,
}

impl ChannelSection {
    fn from_params(p: &ChannelParams) -> Self {
        Self {
            bandwidth_hz: Some(p.bandwidth_hz),
            noise_dbm: Some(watts_to_dbm(p.noise_w)),
            carrier_hz: Some(p.carrier_hz),
            ref_dist_m: Some(p.ref_dist_m),
            pathloss_exp_los: Some(p.pathloss_exp_los),
            pathloss_exp_nlos: Some(p.pathloss_exp_nlos),
            shadow_std_los_db: Some(p.shadow_std_los_db),
            shadow_std_nlos_db: Some(p.shadow_std_nlos_db),
            nakagami_los: Some(p.nakagami_los),
            nakagami_nlos: Some(p.nakagami_nlos),
            mean_power: Some(p.mean_power),
            los_sigmoid_a: Some(p.los_sigmoid_a),
            los_sigmoid_b: Some(p.los_sigmoid_b),
            shadow_mean_correction: Some(p.shadow_mean_correction),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub arrival_prob: Option<f64>,
    pub size_bits: Option<[f64; 2]>,
    pub intensity: Option<[f64; 2]>,
    pub deadline_s: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    pub delay: Option<f64>,
    pub energy: Option<f64>,
    pub offload: Option<f64>,
    pub normalizers: Option<Normalizers>,
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema { path: e.path().to_string(), message: e.inner().message().to_string() })
    }

    /// Fills defaults, places users, derives normalizers and validates.
    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        if let Some(v) = self.schema_version {
            if v != SCHEMA_VERSION {
                return Err(ConfigError::Schema { path: "schema_version".into(), message: format!("unsupported version {v} (expected {SCHEMA_VERSION})") });
            }
        }
        let time = TimeGrid::new(self.time.horizon_s.unwrap_or(100.0), self.time.n_slots.unwrap_or(50))?;
        let area = Area { width_m: self.area.width_m.unwrap_or(2500.0), height_m: self.area.height_m.unwrap_or(3000.0) };

        let us = &self.users;
        let n_users = match (&us.positions, us.count) {
            (Some(p), Some(c)) if p.len() != c => return Err(ConfigError::invalid("users.positions", "length must equal users.count")),
            (Some(p), _) => p.len(),
            (None, c) => c.unwrap_or(8),
        };
        let positions = match &us.positions {
            Some(p) => p.clone(),
            None => place_users(&area, n_users, us.placement_seed.unwrap_or(DEFAULT_PLACEMENT_SEED)),
        };
        let users = positions
            .into_iter()
            .map(|position| UserSpec {
                position,
                cpu_hz: us.cpu_hz.unwrap_or(340e6),
                tx_power_w: dbm_to_watts(us.tx_power_dbm.unwrap_or(30.0)),
                cap_coeff: us.cap_coeff.unwrap_or(1e-27),
            })
            .collect();

        let ms = &self.uavs;
        let n_uavs = match (&ms.initial_positions, ms.count) {
            (Some(p), Some(c)) if p.len() < c => return Err(ConfigError::invalid("uavs.initial_positions", "fewer positions than uavs.count")),
            (Some(p), c) => c.unwrap_or(p.len()),
            (None, c) => c.unwrap_or(2),
        };
        let starts: Vec<[f64; 2]> = match &ms.initial_positions {
            Some(p) => p[..n_uavs].to_vec(),
            None => {
                if n_uavs > DEFAULT_UAV_POSITIONS.len() {
                    return Err(ConfigError::invalid("uavs.initial_positions", "must be listed when more than six UAVs are requested"));
                }
                DEFAULT_UAV_POSITIONS[..n_uavs].to_vec()
            }
        };
        let uavs = starts
            .into_iter()
            .map(|initial_position| UavSpec {
                initial_position,
                altitude_m: ms.altitude_m.unwrap_or(100.0),
                v_min: ms.v_min.unwrap_or(20.0),
                v_max: ms.v_max.unwrap_or(60.0),
                d_min: ms.d_min.unwrap_or(10.0),
                a_max: ms.a_max.unwrap_or(5.0),
                cpu_max_hz: ms.cpu_max_hz.unwrap_or(1.2e9),
                cap_coeff: ms.cap_coeff.unwrap_or(1e-27),
                propulsion: ms.propulsion.unwrap_or_default(),
            })
            .collect();

        let c = &self.channel;
        let d = ChannelParams::default();
        let channel = ChannelParams {
            bandwidth_hz: c.bandwidth_hz.unwrap_or(d.bandwidth_hz),
            noise_w: c.noise_dbm.map(dbm_to_watts).unwrap_or(d.noise_w),
            carrier_hz: c.carrier_hz.unwrap_or(d.carrier_hz),
            ref_dist_m: c.ref_dist_m.unwrap_or(d.ref_dist_m),
            pathloss_exp_los: c.pathloss_exp_los.unwrap_or(d.pathloss_exp_los),
            pathloss_exp_nlos: c.pathloss_exp_nlos.unwrap_or(d.pathloss_exp_nlos),
            shadow_std_los_db: c.shadow_std_los_db.unwrap_or(d.shadow_std_los_db),
            shadow_std_nlos_db: c.shadow_std_nlos_db.unwrap_or(d.shadow_std_nlos_db),
            nakagami_los: c.nakagami_los.unwrap_or(d.nakagami_los),
            nakagami_nlos: c.nakagami_nlos.unwrap_or(d.nakagami_nlos),
            mean_power: c.mean_power.unwrap_or(d.mean_power),
            los_sigmoid_a: c.los_sigmoid_a.unwrap_or(d.los_sigmoid_a),
            los_sigmoid_b: c.los_sigmoid_b.unwrap_or(d.los_sigmoid_b),
            shadow_mean_correction: c.shadow_mean_correction.unwrap_or(d.shadow_mean_correction),
        };

        let t = &self.tasks;
        let tasks = TaskDistribution {
            arrival_prob: t.arrival_prob.unwrap_or(1.0),
            size_bits: t.size_bits.unwrap_or([0.5e6, 3e6]),
            intensity: t.intensity.unwrap_or([500.0, 1500.0]),
            deadline_s: t.deadline_s.unwrap_or([0.1, 75.0]),
        };

        let w = &self.weights;
        let placeholder = Normalizers { delay_s: 1.0, energy_j: 1.0, offloaded_bits: 1.0 };
        let mut scenario = Scenario {
            time,
            area,
            users,
            uavs,
            channel,
            tasks,
            weights: ObjectiveWeights {
                w_delay: w.delay.unwrap_or(1.0 / 3.0),
                w_energy: w.energy.unwrap_or(1.0 / 3.0),
                w_offload: w.offload.unwrap_or(1.0 / 3.0),
                normalizers: placeholder,
            },
            solver: self.solver.unwrap_or_default(),
        };
        scenario.weights.normalizers = match w.normalizers {
            Some(nz) => nz,
            None => scenario.derived_normalizers(),
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Uniform user placement; the first `k` users are the same for every count.
/// Uniform user positions; the first `k` of a longer draw equal a draw of `k`.
pub fn place_users(area: &Area, count: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let x: f64 = rng.gen();
            let y: f64 = rng.gen();
            [x * area.width_m, y * area.height_m]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_table_defaults() {
        let s = Scenario::from_toml_str("").unwrap();
        assert_eq!(s.channel.bandwidth_hz, 20e6);
        assert!((s.channel.noise_w - 1e-13).abs() < 1e-25);
        assert_eq!(s.users.len(), 8);
        assert_eq!(s.users[0].cpu_hz, 340e6);
        assert!((s.users[0].tx_power_w - 1.0).abs() < 1e-12);
        assert_eq!(s.uavs.len(), 2);
        assert_eq!(s.uavs[0].initial_position, [800.0, 1200.0]);
        assert_eq!(s.uavs[1].initial_position, [2000.0, 1000.0]);
        assert_eq!(s.uavs[0].cpu_max_hz, 1.2e9);
        assert_eq!(s.uavs[0].cap_coeff, 1e-27);
        assert_eq!(s.uavs[0].altitude_m, 100.0);
        assert_eq!((s.uavs[0].v_min, s.uavs[0].v_max), (20.0, 60.0));
        assert_eq!(s.uavs[0].d_min, 10.0);
        assert_eq!(s.time.horizon_s, 100.0);
        assert_eq!(s.time.n_slots, 50);
    }

    #[test]
    fn slot_length_from_horizon() {
        let s = Scenario::from_toml_str("[time]\nhorizon_s = 100.0\nn_slots = 50\n").unwrap();
        assert_eq!(s.time.slot_s, 2.0);
    }

    #[test]
    fn inverted_speed_bounds_rejected() {
        let err = Scenario::from_toml_str("[uavs]\nv_min = 70.0\nv_max = 60.0\n").unwrap_err();
        assert!(err.to_string().contains("v_min"), "{err}");
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = Scenario::from_toml_str("[uavs]\nspeed = 3.0\n").unwrap_err();
        match err {
            ConfigError::Schema { path, .. } => assert!(path.starts_with("uavs"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        let err = Scenario::from_toml_str("[time]\nn_slots = \"many\"\n").unwrap_err();
        assert!(err.to_string().contains("time.n_slots"), "{err}");
    }

    #[test]
    fn wrong_schema_version_rejected() {
        assert!(Scenario::from_toml_str("schema_version = 9\n").is_err());
        assert!(Scenario::from_toml_str("schema_version = 1\n").is_ok());
    }

    #[test]
    fn toml_and_json_round_trip_are_fixed_points() {
        let s = Scenario::from_toml_str("[users]\ncount = 5\n[tasks]\narrival_prob = 0.7\n").unwrap();
        let again = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(s, again);
        let from_json = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(s, from_json);
        assert_eq!(s.to_json(), from_json.to_json());
    }

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let s = Scenario::default_scenario();
        let a = s.generate_tasks(11);
        let b = s.generate_tasks(11);
        assert_eq!(a, b);
        assert_ne!(a, s.generate_tasks(12));
        assert_eq!(a.tasks.len(), 8 * 50);
        for t in &a.tasks {
            assert!((0.1..=75.0).contains(&t.deadline_s));
            assert!((0.5e6..=3e6).contains(&t.size_bits));
            assert!((500.0..=1500.0).contains(&t.intensity));
        }
    }

    #[test]
    fn degenerate_size_range() {
        let s = Scenario::from_toml_str("[tasks]\nsize_bits = [1e6, 1e6]\n").unwrap();
        assert!(s.generate_tasks(3).tasks.iter().all(|t| t.size_bits == 1e6));
    }

    #[test]
    fn user_prefixes_are_stable_across_counts() {
        let a = Scenario::from_toml_str("[users]\ncount = 4\n").unwrap();
        let b = Scenario::from_toml_str("[users]\ncount = 8\n").unwrap();
        assert_eq!(a.users[..], b.users[..4]);
    }

    #[test]
    fn propulsion_hover_power() {
        let p = PropulsionParams::default();
        assert!((p.power(0.0) - 168.49).abs() < 1e-9);
        assert!((p.power(0.0) * 2.0 - 336.98).abs() < 1e-9);
    }

    #[test]
    fn induced_factor_matches_naive_form() {
        for &x in &[0.0f64, 0.3, 1.0, 4.0, 30.0] {
            let naive = ((1.0 + x * x / 4.0).sqrt() - x / 2.0).sqrt();
            assert!((induced_factor(x) - naive).abs() < 1e-9);
        }
    }

    #[test]
    fn derived_normalizers_match_hand_values() {
        let s = Scenario::default_scenario();
        let nz = s.weights.normalizers;
        // 50 slots x 8 users x 1.75 Mbit x 1000 cycles/bit / 340 MHz
        assert!((nz.delay_s - 50.0 * 8.0 * 1.75e6 * 1000.0 / 340e6).abs() < 1e-6);
        assert!((nz.energy_j - 2.0 * 50.0 * 2.0 * 168.49).abs() < 1e-6);
        assert!((nz.offloaded_bits - 50.0 * 8.0 * 1.75e6).abs() < 1e-3);
    }
}
