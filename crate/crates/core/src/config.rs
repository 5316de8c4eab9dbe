//! Runtime configuration. Every section has defaults and can be overridden
//! from a TOML document; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Frustum, GeometryError};
use crate::navigation::GridParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    MoveTo,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::MoveTo => "move_to",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchOrder {
    /// Risky intentions by collision time, candidate targets by distance to
    /// the predicted collision point.
    CollisionTime,
}

/// Where the robot is while an action is checked against a risky intention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoSimRobot {
    /// Already standing at its goal when the person sets off.
    Parked,
    /// Driving its plan while the person walks, as it would for real.
    Driving,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtmConfig {
    pub gaze_min_deg: f64,
    pub gaze_max_deg: f64,
    pub gaze_samples: usize,
    pub actions: Vec<ActionKind>,
    pub admissibility_margin_s: f64,
    pub max_people: usize,
    pub search_order: SearchOrder,
    /// Seconds between intention sweeps in the episode loop.
    pub period_s: f64,
    pub co_sim_robot: CoSimRobot,
}

impl Default for AtmConfig {
    fn default() -> Self {
        Self {
            gaze_min_deg: 10.0,
            gaze_max_deg: 50.0,
            gaze_samples: 3,
            actions: vec![ActionKind::MoveTo],
            admissibility_margin_s: 0.5,
            max_people: 4,
            search_order: SearchOrder::CollisionTime,
            period_s: 0.25,
            co_sim_robot: CoSimRobot::Driving,
        }
    }
}

impl AtmConfig {
    /// Uniform gaze samples in radians, endpoints included.
    pub fn gaze_samples_rad(&self) -> Vec<f64> {
        let (lo, hi) = (self.gaze_min_deg.to_radians(), self.gaze_max_deg.to_radians());
        if self.gaze_samples == 1 {
            return vec![lo];
        }
        let n = self.gaze_samples - 1;
        (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
    }

    pub fn gaze_max_rad(&self) -> f64 {
        self.gaze_max_deg.to_radians()
    }

    pub fn gaze_min_rad(&self) -> f64 {
        self.gaze_min_deg.to_radians()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NavConfig {
    pub resolution_m: f64,
    pub margin_m: f64,
    pub lookahead_m: f64,
    /// The robot holds still while a person is within its stopping distance
    /// plus this much along its heading.
    pub robot_yield_m: f64,
}

impl Default for NavConfig {
    fn default() -> Self {
        Self {
            resolution_m: 0.05,
            margin_m: 0.05,
            lookahead_m: 0.3,
            robot_yield_m: 0.2,
        }
    }
}

impl NavConfig {
    pub fn grid_params(&self) -> GridParams {
        GridParams {
            resolution: self.resolution_m,
            margin: self.margin_m,
            walls: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub sensor_range_m: f64,
    pub pos_sigma_m: f64,
    pub size_inflation_sigma: f64,
    pub timeout_s: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            sensor_range_m: 10.0,
            pos_sigma_m: 0.0,
            size_inflation_sigma: 0.0,
            timeout_s: 1.0,
        }
    }
}

/// The person model shared by the internal simulator and the scripted
/// ground-truth person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub half_angle_deg: f64,
    pub view_range_m: f64,
    /// Bodies at least this tall are never hidden by a lowered gaze; the gaze
    /// cutoff only applies to floor-level bodies.
    pub tall_height_m: f64,
    pub person_speed_mps: f64,
    pub person_accel_mps2: f64,
    /// Extra clearance people keep from what they see, on top of their radius.
    pub person_margin_m: f64,
    pub standoff_m: f64,
    pub horizon_s: f64,
    /// A visible moving body triggers a re-plan once it has moved this far.
    pub replan_distance_m: f64,
    /// People hold still for a tick when a visible body that is moving would
    /// be touched within this distance along their heading. Zero disables.
    pub yield_distance_m: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            half_angle_deg: 60.0,
            view_range_m: 10.0,
            tall_height_m: 1.0,
            person_speed_mps: 0.5,
            person_accel_mps2: 10.0,
            person_margin_m: 0.1,
            standoff_m: 0.1,
            horizon_s: 60.0,
            replan_distance_m: 0.1,
            yield_distance_m: 0.3,
        }
    }
}

impl EngineConfig {
    pub fn frustum(&self, gaze: f64) -> Result<Frustum, GeometryError> {
        Frustum::new(self.half_angle_deg.to_radians(), self.view_range_m, gaze)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub dt_s: f64,
    /// Episodes end once the person has settled or this much time has passed.
    pub max_time_s: f64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            dt_s: 0.05,
            max_time_s: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HitlConfig {
    pub gaze_deg: f64,
    pub turn_rate_rad_s: f64,
    pub tick_hz: f64,
    /// Frames buffered per client before the oldest are dropped.
    pub client_queue: usize,
}

impl Default for HitlConfig {
    fn default() -> Self {
        Self {
            gaze_deg: 20.0,
            turn_rate_rad_s: 1.5,
            tick_hz: 20.0,
            client_queue: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub atm: AtmConfig,
    pub nav: NavConfig,
    pub perception: PerceptionConfig,
    pub engine: EngineConfig,
    pub harness: HarnessConfig,
    pub hitl: HitlConfig,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid(msg()))
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let a = &self.atm;
        check(a.gaze_min_deg < a.gaze_max_deg, || {
            format!("atm.gaze_min_deg ({}) must be below atm.gaze_max_deg ({})", a.gaze_min_deg, a.gaze_max_deg)
        })?;
        check(a.gaze_min_deg >= 0.0 && a.gaze_max_deg < 90.0, || {
            "atm gaze range must lie in [0, 90) degrees".into()
        })?;
        check(a.gaze_samples >= 1, || "atm.gaze_samples must be >= 1".into())?;
        check(!a.actions.is_empty(), || "atm.actions must not be empty".into())?;
        check(a.admissibility_margin_s >= 0.0, || "atm.admissibility_margin_s must be >= 0".into())?;
        check(a.max_people >= 1, || "atm.max_people must be >= 1".into())?;
        check(a.period_s > 0.0, || "atm.period_s must be > 0".into())?;
        let n = &self.nav;
        check(n.resolution_m > 0.0, || "nav.resolution_m must be > 0".into())?;
        check(n.margin_m >= 0.0, || "nav.margin_m must be >= 0".into())?;
        check(n.lookahead_m > 0.0, || "nav.lookahead_m must be > 0".into())?;
        let p = &self.perception;
        check(p.sensor_range_m > 0.0, || "perception.sensor_range_m must be > 0".into())?;
        check(p.pos_sigma_m >= 0.0 && p.size_inflation_sigma >= 0.0, || {
            "perception sigmas must be >= 0".into()
        })?;
        check(p.timeout_s >= 0.0, || "perception.timeout_s must be >= 0".into())?;
        let e = &self.engine;
        e.frustum(0.0).map_err(|err| ConfigError::Invalid(format!("engine view: {err}")))?;
        check(e.person_speed_mps > 0.0 && e.person_accel_mps2 > 0.0, || {
            "engine person speed and accel must be > 0".into()
        })?;
        check(e.person_margin_m >= 0.0 && e.standoff_m >= 0.0, || {
            "engine margins must be >= 0".into()
        })?;
        check(e.horizon_s > 0.0, || "engine.horizon_s must be > 0".into())?;
        check(self.harness.dt_s > 0.0 && self.harness.max_time_s > 0.0, || {
            "harness dt_s and max_time_s must be > 0".into()
        })?;
        check(self.hitl.tick_hz > 0.0 && self.hitl.client_queue >= 1, || {
            "hitl.tick_hz must be > 0 and hitl.client_queue >= 1".into()
        })?;
        check((0.0..90.0).contains(&self.hitl.gaze_deg), || "hitl.gaze_deg must lie in [0, 90)".into())?;
        Ok(())
    }
}
