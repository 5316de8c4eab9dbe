//! The live session behind the human-in-the-loop mode: a world whose person
//! is steered from outside, the robot stack running against it, and the
//! frames and messages of the wire protocol.
//!
//! The session is transport-free. A server owns one, feeds it client
//! messages and calls [`LiveSession::tick`] at the frame rate.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{guess_intentions, read_intention, select_action, AgentError, AgentRuntime, Selection};
use crate::config::Config;
use crate::engine::{robot_follower, Engine, EngineError, Scene};
use crate::geometry::{normalize_angle, Footprint, GeometryError, Vec2};
use crate::harness::{entity_of, noise_seed, robot_command};
use crate::navigation::{Follower, NavError};
use crate::perception::{observe, NoiseModel, Publisher, RobotState};
use crate::walker::{world_bodies, PersonModel};
use crate::wm::{NodeKind, WmError, WorkingMemory};
use crate::world::{PersonScript, Scenario, WorldError, WorldState};

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("scenario person is not human-steered")]
    NotSteered,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Wm(#[from] WmError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Nav(#[from] NavError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameEvent {
    None,
    RiskDetected,
    ActionCommitted,
    Collision,
    GoalReached,
}

/// A circle's radius or a box's half extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Extents {
    Radius(f64),
    HalfExtents([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub id: String,
    pub class: String,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub radius_or_extents: Extents,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntentionView {
    pub person: String,
    pub target: String,
    /// Any sampled gaze of this intention ends in a collision.
    pub risky: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub entities: Vec<EntityView>,
    pub subjective_visible_ids: Vec<String>,
    pub intentions: Vec<IntentionView>,
    pub robot_plan: Vec<[f64; 2]>,
    pub event: FrameEvent,
}

/// Body-frame velocity for the steered person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerCommand {
    pub vx: f64,
    pub vy: f64,
    #[serde(default)]
    pub session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Steer(SteerCommand),
    Reset,
    Start,
    Pause,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Paused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Frame(Frame),
    Ack {
        state: RunState,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn error(message: impl Into<String>) -> Self {
        Self::Error {
            message: message.into(),
        }
    }
}

/// How the robot's agents run alongside the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentMode {
    /// On their own threads, on wall-clock periods, as on the robot.
    Threaded,
    /// Inside [`LiveSession::tick`], every `atm.period_s` of simulated time.
    /// Reproducible; meant for tests and replays.
    Inline,
}

pub struct LiveSession {
    scenario: Scenario,
    cfg: Arc<Config>,
    mode: AgentMode,
    world: WorldState,
    wm: Arc<WorkingMemory>,
    publisher: Publisher,
    noise: NoiseModel,
    runtime: Option<AgentRuntime>,
    person_model: PersonModel,
    person_id: String,
    robot_id: String,
    /// Latest steering, body frame, already clamped.
    steer: Vec2,
    state: RunState,
    follower: Option<Follower>,
    plan: Vec<[f64; 2]>,
    selections_seen: usize,
    risk_seen: bool,
    contacts_seen: usize,
    pending: VecDeque<FrameEvent>,
}

impl LiveSession {
    /// A running session at t = 0.
    pub fn new(scenario: &Scenario, cfg: Arc<Config>, mode: AgentMode) -> Result<Self, LiveError> {
        if scenario.person_script != PersonScript::HumanSteered {
            return Err(LiveError::NotSteered);
        }
        let world = WorldState::new(scenario, cfg.harness.dt_s);
        let person = scenario.person();
        let person_model = PersonModel::from_config(
            &cfg,
            cfg.hitl.gaze_deg.to_radians(),
            person.radius(),
            person.shape.height,
            world.bounds,
        )?;
        let wm = Arc::new(WorkingMemory::new());
        let runtime = (mode == AgentMode::Threaded).then(|| AgentRuntime::spawn(wm.clone(), cfg.clone()));
        Ok(Self {
            person_id: person.id.clone(),
            robot_id: scenario.robot().id.clone(),
            scenario: scenario.clone(),
            noise: NoiseModel::from_config(&cfg.perception, noise_seed(scenario.seed)),
            publisher: Publisher::new(cfg.perception.timeout_s),
            cfg,
            mode,
            world,
            wm,
            runtime,
            person_model,
            steer: Vec2::ZERO,
            state: RunState::Running,
            follower: None,
            plan: Vec::new(),
            selections_seen: 0,
            risk_seen: false,
            contacts_seen: 0,
            pending: VecDeque::new(),
        })
    }

    pub fn state(&self) -> RunState {
        self.state
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn working_memory(&self) -> &Arc<WorkingMemory> {
        &self.wm
    }

    pub fn person_id(&self) -> &str {
        &self.person_id
    }

    /// Ticks per second of wall-clock time the session expects.
    pub fn tick_hz(&self) -> f64 {
        self.cfg.hitl.tick_hz
    }

    /// Applies a client message. Steering takes effect on the next tick,
    /// the last one received before it wins.
    pub fn apply(&mut self, msg: &ClientMessage) -> Result<RunState, LiveError> {
        match msg {
            ClientMessage::Steer(s) => {
                let v = Vec2::new(s.vx, s.vy);
                // NaN or infinite input is treated as a stop.
                self.steer = if v.x.is_finite() && v.y.is_finite() {
                    v.clamp_norm(self.person_model.limits.speed)
                } else {
                    Vec2::ZERO
                };
            }
            ClientMessage::Reset => self.reset()?,
            ClientMessage::Start => self.state = RunState::Running,
            ClientMessage::Pause => self.state = RunState::Paused,
        }
        Ok(self.state)
    }

    /// Reloads the scenario. The session comes back paused at t = 0.
    pub fn reset(&mut self) -> Result<(), LiveError> {
        if let Some(rt) = self.runtime.take() {
            rt.stop();
        }
        *self = Self::new(&self.scenario, self.cfg.clone(), self.mode)?;
        self.state = RunState::Paused;
        Ok(())
    }

    /// World-frame command for the steered person. The body frame is the
    /// person's heading; the commanded direction turns at most
    /// `hitl.turn_rate_rad_s` away from it per tick.
    fn person_command(&self) -> Vec2 {
        let speed = self.steer.norm();
        if speed == 0.0 {
            return Vec2::ZERO;
        }
        let theta = self.world.entity(&self.person_id).map_or(0.0, |e| e.pose.theta);
        let max_turn = self.cfg.hitl.turn_rate_rad_s * self.world.dt;
        let turn = normalize_angle(self.steer.angle()).clamp(-max_turn, max_turn);
        Vec2::from_polar(speed, theta + turn)
    }

    fn take_selection(&mut self, sel: &Selection) -> Result<(), LiveError> {
        if let Ok(path) = &sel.outcome.robot_plan {
            let scene = Scene::from_snapshot(&self.wm.snapshot())?;
            self.follower = Some(robot_follower(path, scene.robot_limits, self.cfg.nav.lookahead_m)?);
            self.plan = path.points().iter().map(|p| [p.x, p.y]).collect();
        }
        self.pending.push_back(FrameEvent::ActionCommitted);
        Ok(())
    }

    /// One world tick. Returns `None` while paused.
    pub fn tick(&mut self) -> Result<Option<Frame>, LiveError> {
        if self.state == RunState::Paused {
            return Ok(None);
        }
        let cfg = self.cfg.clone();
        let dets = observe(&self.world, &self.robot_id, cfg.perception.sensor_range_m, &self.noise);
        self.publisher
            .publish(self.world.time(), &RobotState::from_world(&self.world), &dets, &self.wm)?;

        match &self.runtime {
            Some(rt) => {
                let fresh: Vec<Selection> = {
                    let all = rt.selections.lock().unwrap_or_else(|p| p.into_inner());
                    all[self.selections_seen..].to_vec()
                };
                self.selections_seen += fresh.len();
                for sel in &fresh {
                    self.take_selection(sel)?;
                }
            }
            None => {
                let period = ((cfg.atm.period_s / self.world.dt).round() as u64).max(1);
                if self.world.tick.is_multiple_of(period) {
                    let engine = Engine::new(&cfg);
                    let sweep = guess_intentions(&self.wm, &cfg, &engine)?;
                    if sweep.risky().next().is_some() {
                        if let Some(sel) = select_action(&self.wm, &cfg, &engine)? {
                            self.take_selection(&sel)?;
                        }
                    }
                }
            }
        }

        let mut commands = BTreeMap::new();
        commands.insert(self.person_id.clone(), self.person_command());
        if let Some(f) = self.follower.as_mut() {
            match robot_command(&self.world, f, &dets, &cfg) {
                Some(c) => {
                    commands.insert(self.robot_id.clone(), c);
                }
                None => {
                    self.follower = None;
                    self.pending.push_back(FrameEvent::GoalReached);
                }
            }
        }
        self.world.advance(&commands, self.world.dt)?;

        let contacts = self.world.events_for(&self.person_id).count();
        if contacts > self.contacts_seen {
            self.contacts_seen = contacts;
            self.pending.push_back(FrameEvent::Collision);
        }
        Ok(Some(self.frame()))
    }

    /// The current state as a frame, consuming one pending event.
    pub fn frame(&mut self) -> Frame {
        let intentions = self.intentions();
        if !self.risk_seen && intentions.iter().any(|i| i.risky) {
            self.risk_seen = true;
            // Shown before the action that answers it.
            self.pending.push_front(FrameEvent::RiskDetected);
        }
        Frame {
            t: self.world.time(),
            entities: self.world.entities.iter().map(view).collect(),
            subjective_visible_ids: self.subjective_visible_ids(),
            intentions,
            robot_plan: self.plan.clone(),
            event: self.pending.pop_front().unwrap_or(FrameEvent::None),
        }
    }

    /// Entities the steered person sees at the fixed gaze.
    pub fn subjective_visible_ids(&self) -> Vec<String> {
        let pi = self.world.person_index();
        let eye = self.world.entities[pi].pose;
        let seen: BTreeSet<u64> = world_bodies(&self.world, pi)
            .iter()
            .filter(|b| self.person_model.sees(&eye, b))
            .map(|b| b.key)
            .collect();
        self.world
            .entities
            .iter()
            .filter(|e| seen.contains(&u64::from(e.key)))
            .map(|e| e.id.clone())
            .collect()
    }

    /// Person intentions in working memory, one per (person, target).
    fn intentions(&self) -> Vec<IntentionView> {
        let snapshot = self.wm.snapshot();
        let Ok(scene) = Scene::from_snapshot(&snapshot) else {
            return Vec::new();
        };
        let mut by_pair: BTreeMap<(String, String), bool> = BTreeMap::new();
        for node in snapshot.nodes_of(NodeKind::Intention) {
            let Some(rec) = read_intention(&snapshot, node) else {
                continue;
            };
            if scene.person(rec.subject).is_none() {
                continue;
            }
            let (Some(p), Some(t)) = (
                entity_of(&self.world, &scene, rec.subject),
                entity_of(&self.world, &scene, rec.target),
            ) else {
                continue;
            };
            *by_pair.entry((p, t)).or_default() |= rec.c == Some(true);
        }
        by_pair
            .into_iter()
            .map(|((person, target), risky)| IntentionView { person, target, risky })
            .collect()
    }
}

fn view(e: &crate::world::Entity) -> EntityView {
    EntityView {
        id: e.id.clone(),
        class: e.class.clone(),
        x: e.pose.x,
        y: e.pose.y,
        theta: e.pose.theta,
        radius_or_extents: match e.shape.footprint {
            Footprint::Circle { radius } => Extents::Radius(radius),
            Footprint::Box { half_x, half_y } => Extents::HalfExtents([half_x, half_y]),
        },
    }
}
