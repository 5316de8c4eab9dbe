//! Fixtures shared by the benchmarks.

use atm_core::config::Config;
use atm_core::engine::Scene;
use atm_core::perception::{observe, NoiseModel, Publisher, RobotState};
use atm_core::wm::WorkingMemory;
use atm_core::world::{Scenario, WorldState};

pub const NOMINAL: &str = include_str!("../../../scenarios/nominal.toml");

pub fn nominal() -> Scenario {
    Scenario::from_toml(NOMINAL).expect("nominal scenario parses")
}

/// Working memory holding the robot's first view of `sc`.
pub fn perceived(sc: &Scenario, cfg: &Config) -> WorkingMemory {
    let world = WorldState::new(sc, cfg.harness.dt_s);
    let wm = WorkingMemory::new();
    let dets = observe(&world, &sc.robot().id, cfg.perception.sensor_range_m, &NoiseModel::none());
    Publisher::new(cfg.perception.timeout_s)
        .publish(0.0, &RobotState::from_world(&world), &dets, &wm)
        .expect("first publish");
    wm
}

pub fn scene(sc: &Scenario, cfg: &Config) -> Scene {
    Scene::from_snapshot(&perceived(sc, cfg).snapshot()).expect("scene resolves")
}
