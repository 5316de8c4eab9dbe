//! Ground-truth world: scenario files, seeded sampling of initial positions,
//! fixed-tick kinematics and contact bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{disc_overlaps, swept_collision, Footprint, Pose2, Shape, Vec2, DEFAULT_COLLISION_STEP};
use crate::navigation::Bounds;

/// Redraws allowed per sampled entity before giving up.
pub const MAX_SAMPLE_ATTEMPTS: usize = 100;
/// Name used for the room boundary in contact events.
pub const WALL: &str = "wall";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("entity `{id}`: {reason}")]
    Entity { id: String, reason: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unsatisfiable sample: could not place `{0}` without overlap")]
    Unsatisfiable(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("command for static entity `{0}`")]
    StaticCommand(String),
    #[error("command for unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("dt must be > 0, got {0}")]
    BadDt(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeDoc {
    Circle { r: f64 },
    Box { hx: f64, hy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityDoc {
    id: String,
    class: String,
    pose: [f64; 3],
    shape: ShapeDoc,
    height: f64,
    #[serde(default)]
    dynamic: bool,
    #[serde(default)]
    speed_limit: f64,
    #[serde(default)]
    accel_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RoomDoc {
    width_m: f64,
    depth_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum ScriptDoc {
    Walk {
        target_id: String,
        #[serde(alias = "speed")]
        speed_mps: f64,
        #[serde(default)]
        gaze_deg: Option<f64>,
    },
    HumanSteered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SamplingDoc {
    radius_m: f64,
    ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    seed: u64,
    room: RoomDoc,
    entities: Vec<EntityDoc>,
    person_script: ScriptDoc,
    #[serde(default)]
    sampling: Option<SamplingDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Entity {
    /// Stable numeric handle, 1-based in file order. Doubles as the track id.
    pub key: u32,
    pub id: String,
    pub class: String,
    pub pose: Pose2,
    pub shape: Shape,
    pub dynamic: bool,
    pub speed_limit: f64,
    pub accel_limit: f64,
}

impl Entity {
    pub fn radius(&self) -> f64 {
        self.shape.bounding_radius()
    }

    pub fn is_person(&self) -> bool {
        self.class == "person"
    }

    pub fn is_robot(&self) -> bool {
        self.class == "robot"
    }

    pub fn limits(&self) -> Limits {
        Limits {
            speed: self.speed_limit,
            accel: self.accel_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PersonScript {
    Walk {
        target_id: String,
        speed: f64,
        /// Fixed gaze in radians; the configured minimum when absent.
        gaze: Option<f64>,
    },
    HumanSteered,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sampling {
    pub radius: f64,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub seed: u64,
    pub width: f64,
    pub depth: f64,
    pub entities: Vec<Entity>,
    pub person_script: PersonScript,
    pub sampling: Sampling,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let doc: ScenarioDoc = toml::from_str(text)?;
        Self::from_doc(doc)
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    fn from_doc(doc: ScenarioDoc) -> Result<Self, ScenarioError> {
        let RoomDoc { width_m, depth_m } = doc.room;
        if !(width_m > 0.0 && depth_m > 0.0 && width_m.is_finite() && depth_m.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "room must have positive size, got {width_m} x {depth_m}"
            )));
        }
        let mut entities = Vec::with_capacity(doc.entities.len());
        for (i, e) in doc.entities.into_iter().enumerate() {
            let bad = |reason: String| ScenarioError::Entity {
                id: e.id.clone(),
                reason,
            };
            let footprint = match e.shape {
                ShapeDoc::Circle { r } => Footprint::Circle { radius: r },
                ShapeDoc::Box { hx, hy } => Footprint::Box { half_x: hx, half_y: hy },
            };
            let shape = Shape::new(footprint, e.height).map_err(|err| bad(err.to_string()))?;
            if e.dynamic {
                if shape.circle_radius().is_none() {
                    return Err(bad("dynamic entities must be circles".into()));
                }
                if !(e.speed_limit > 0.0 && e.accel_limit > 0.0) {
                    return Err(bad("dynamic entities need positive speed_limit and accel_limit".into()));
                }
            }
            let [x, y, theta] = e.pose;
            entities.push(Entity {
                key: i as u32 + 1,
                id: e.id,
                class: e.class,
                pose: Pose2::new(x, y, theta),
                shape,
                dynamic: e.dynamic,
                speed_limit: e.speed_limit,
                accel_limit: e.accel_limit,
            });
        }
        let person_script = match doc.person_script {
            ScriptDoc::Walk {
                target_id,
                speed_mps,
                gaze_deg,
            } => PersonScript::Walk {
                target_id,
                speed: speed_mps,
                gaze: gaze_deg.map(f64::to_radians),
            },
            ScriptDoc::HumanSteered => PersonScript::HumanSteered,
        };
        let sampling = doc
            .sampling
            .map(|s| Sampling {
                radius: s.radius_m,
                ids: s.ids,
            })
            .unwrap_or(Sampling {
                radius: 0.0,
                ids: Vec::new(),
            });
        let scenario = Scenario {
            seed: doc.seed,
            width: width_m,
            depth: depth_m,
            entities,
            person_script,
            sampling,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let mut seen = BTreeSet::new();
        for e in &self.entities {
            if !seen.insert(e.id.as_str()) {
                return Err(ScenarioError::DuplicateId(e.id.clone()));
            }
            if !e.pose.is_finite() || !self.bounds().contains(e.pose.position()) {
                return Err(ScenarioError::Entity {
                    id: e.id.clone(),
                    reason: format!(
                        "pose ({:.3}, {:.3}) outside the {} x {} room",
                        e.pose.x, e.pose.y, self.width, self.depth
                    ),
                });
            }
        }
        let robots = self.entities.iter().filter(|e| e.is_robot()).count();
        let people = self.entities.iter().filter(|e| e.is_person()).count();
        if robots != 1 || people != 1 {
            return Err(ScenarioError::Invalid(format!(
                "expected exactly one robot and one person, found {robots} and {people}"
            )));
        }
        for e in self.entities.iter().filter(|e| e.is_robot() || e.is_person()) {
            if !e.dynamic {
                return Err(ScenarioError::Entity {
                    id: e.id.clone(),
                    reason: format!("a {} must be dynamic", e.class),
                });
            }
        }
        if let PersonScript::Walk { target_id, speed, gaze } = &self.person_script {
            let target = self.entity(target_id).ok_or_else(|| {
                ScenarioError::Invalid(format!("person_script target `{target_id}` does not exist"))
            })?;
            if target.is_person() || target.is_robot() {
                return Err(ScenarioError::Invalid(format!(
                    "person_script target `{target_id}` must be an object"
                )));
            }
            if !(*speed > 0.0) {
                return Err(ScenarioError::Invalid(format!("person_script speed must be > 0, got {speed}")));
            }
            if gaze.is_some_and(|g| !(0.0..std::f64::consts::FRAC_PI_2).contains(&g)) {
                return Err(ScenarioError::Invalid("person_script gaze_deg must lie in [0, 90)".into()));
            }
        }
        if !(self.sampling.radius >= 0.0 && self.sampling.radius.is_finite()) {
            return Err(ScenarioError::Invalid(format!(
                "sampling radius must be >= 0, got {}",
                self.sampling.radius
            )));
        }
        for id in &self.sampling.ids {
            if self.entity(id).is_none() {
                return Err(ScenarioError::Invalid(format!("sampling id `{id}` does not exist")));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::centered(self.width, self.depth)
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn robot(&self) -> &Entity {
        self.entities.iter().find(|e| e.is_robot()).expect("validated scenario has a robot")
    }

    pub fn person(&self) -> &Entity {
        self.entities.iter().find(|e| e.is_person()).expect("validated scenario has a person")
    }

    /// Target entity of a walking script.
    pub fn script_target(&self) -> Option<&Entity> {
        match &self.person_script {
            PersonScript::Walk { target_id, .. } => self.entity(target_id),
            PersonScript::HumanSteered => None,
        }
    }
}

/// Conservative overlap test between two placed bodies.
pub fn bodies_overlap(a: (&Pose2, &Shape), b: (&Pose2, &Shape)) -> bool {
    match (a.1.circle_radius(), b.1.circle_radius()) {
        (Some(r), _) => disc_overlaps(a.0.position(), r, b.0, b.1),
        (None, Some(r)) => disc_overlaps(b.0.position(), r, a.0, a.1),
        (None, None) => disc_overlaps(a.0.position(), a.1.bounding_radius(), b.0, b.1),
    }
}

fn fits_room(bounds: &Bounds, pose: &Pose2, shape: &Shape) -> bool {
    bounds.contains(pose.position()) && bounds.clearance(pose.position()) >= shape.bounding_radius()
}

/// Displaces every sampled entity by a uniform draw from the disc of the
/// sampling radius around its nominal position. Orientation is kept.
///
/// Placements overlapping another entity or poking through a wall are
/// redrawn, up to [`MAX_SAMPLE_ATTEMPTS`] times per entity.
pub fn sample_scenario(base: &Scenario, seed: u64) -> Result<Scenario, ScenarioError> {
    let mut out = base.clone();
    out.seed = seed;
    let radius = base.sampling.radius;
    if radius == 0.0 || base.sampling.ids.is_empty() {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = base.bounds();
    for id in &base.sampling.ids {
        let idx = out.entities.iter().position(|e| &e.id == id).expect("validated sampling id");
        let nominal = base.entities[idx].pose;
        let shape = out.entities[idx].shape;
        let mut placed = false;
        for _ in 0..MAX_SAMPLE_ATTEMPTS {
            let offset = sample_disc(&mut rng, radius);
            let pose = Pose2::new(nominal.x + offset.x, nominal.y + offset.y, nominal.theta);
            let clear = out
                .entities
                .iter()
                .enumerate()
                .all(|(j, other)| j == idx || !bodies_overlap((&pose, &shape), (&other.pose, &other.shape)));
            if clear && fits_room(&bounds, &pose, &shape) {
                out.entities[idx].pose = pose;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(ScenarioError::Unsatisfiable(id.clone()));
        }
    }
    Ok(out)
}

/// Uniform point in a disc of radius `r` (uniform in area).
pub fn sample_disc<R: Rng>(rng: &mut R, r: f64) -> Vec2 {
    let u: f64 = rng.random();
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Vec2::from_polar(r * u.sqrt(), angle)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub speed: f64,
    pub accel: f64,
}

/// One kinematic tick: the command is clamped to the speed limit, the change
/// in velocity to `accel·dt`, and the pose integrated with the new velocity.
/// Heading follows the direction of motion and is held while stationary.
pub fn integrate(pose: &Pose2, velocity: Vec2, command: Vec2, limits: Limits, dt: f64) -> (Pose2, Vec2) {
    let target = command.clamp_norm(limits.speed);
    let dv = (target - velocity).clamp_norm(limits.accel * dt);
    let v = (velocity + dv).clamp_norm(limits.speed);
    let p = pose.position() + v * dt;
    let theta = if v.norm() > 1e-9 { v.angle() } else { pose.theta };
    (Pose2::from_position(p, theta), v)
}

/// [`integrate`] followed by the room clamp, exactly as the world applies it.
/// Returns the new pose, the effective velocity and whether a wall stopped it.
pub fn kinematic_step(
    pose: &Pose2,
    velocity: Vec2,
    command: Vec2,
    limits: Limits,
    radius: f64,
    bounds: &Bounds,
    dt: f64,
) -> (Pose2, Vec2, bool) {
    let (next, v) = integrate(pose, velocity, command, limits, dt);
    let (p, clamped) = clamp_to_room(bounds, next.position(), radius);
    let v = if clamped { (p - pose.position()) * (1.0 / dt) } else { v };
    (Pose2::from_position(p, next.theta), v, clamped)
}

/// Keeps a body of radius `r` inside the room. Returns whether it was moved.
pub fn clamp_to_room(bounds: &Bounds, p: Vec2, r: f64) -> (Vec2, bool) {
    let lo = bounds.min + Vec2::new(r, r);
    let hi = bounds.max - Vec2::new(r, r);
    let q = Vec2::new(p.x.clamp(lo.x, hi.x.max(lo.x)), p.y.clamp(lo.y, hi.y.max(lo.y)));
    (q, q != p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContactEvent {
    pub time: f64,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub dt: f64,
    pub bounds: Bounds,
    pub entities: Vec<Entity>,
    pub velocities: Vec<Vec2>,
    pub collision_events: Vec<ContactEvent>,
    /// Pairs (by index, lower first) overlapping at the end of the last tick.
    in_contact: BTreeSet<(usize, usize)>,
    at_wall: BTreeSet<usize>,
}

impl WorldState {
    pub fn new(scenario: &Scenario, dt: f64) -> Self {
        let n = scenario.entities.len();
        let mut state = Self {
            tick: 0,
            dt,
            bounds: scenario.bounds(),
            entities: scenario.entities.clone(),
            velocities: vec![Vec2::ZERO; n],
            collision_events: Vec::new(),
            in_contact: BTreeSet::new(),
            at_wall: BTreeSet::new(),
        };
        for i in 0..n {
            for j in i + 1..n {
                if state.overlapping(i, j) {
                    state.in_contact.insert((i, j));
                    state.push_event(i, &state.entities[j].id.clone());
                }
            }
        }
        state
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.id == id)
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn robot_index(&self) -> usize {
        self.entities.iter().position(Entity::is_robot).expect("world has a robot")
    }

    pub fn person_index(&self) -> usize {
        self.entities.iter().position(Entity::is_person).expect("world has a person")
    }

    /// Bodies as (pose, shape) pairs, in entity order.
    pub fn bodies(&self) -> Vec<(Pose2, Shape)> {
        self.entities.iter().map(|e| (e.pose, e.shape)).collect()
    }

    fn overlapping(&self, i: usize, j: usize) -> bool {
        let (a, b) = (&self.entities[i], &self.entities[j]);
        bodies_overlap((&a.pose, &a.shape), (&b.pose, &b.shape))
    }

    fn push_event(&mut self, a: usize, b: &str) {
        let time = self.time();
        let a = self.entities[a].id.clone();
        self.collision_events.push(ContactEvent {
            time,
            a,
            b: b.to_string(),
        });
    }

    /// Contact events involving entity `id`, with the other party.
    pub fn events_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = (f64, &'a str)> + 'a {
        self.collision_events.iter().filter_map(move |e| {
            if e.a == id {
                Some((e.time, e.b.as_str()))
            } else if e.b == id {
                Some((e.time, e.a.as_str()))
            } else {
                None
            }
        })
    }

    /// Advances one tick. Commands are world-frame velocities by entity id;
    /// dynamic entities without a command are asked to stop.
    pub fn advance(&mut self, commands: &BTreeMap<String, Vec2>, dt: f64) -> Result<(), WorldError> {
        if !(dt > 0.0) {
            return Err(WorldError::BadDt(dt));
        }
        for id in commands.keys() {
            let e = self.entity(id).ok_or_else(|| WorldError::UnknownEntity(id.clone()))?;
            if !e.dynamic {
                return Err(WorldError::StaticCommand(id.clone()));
            }
        }
        self.dt = dt;
        let before: Vec<Pose2> = self.entities.iter().map(|e| e.pose).collect();
        let mut hit_wall = Vec::new();
        for (i, e) in self.entities.iter_mut().enumerate() {
            if !e.dynamic {
                continue;
            }
            let cmd = commands.get(&e.id).copied().unwrap_or(Vec2::ZERO);
            let (pose, v, clamped) =
                kinematic_step(&e.pose, self.velocities[i], cmd, e.limits(), e.radius(), &self.bounds, dt);
            e.pose = pose;
            self.velocities[i] = v;
            if clamped {
                hit_wall.push(i);
            }
        }
        self.tick += 1;

        for i in hit_wall.iter().copied() {
            if self.at_wall.insert(i) {
                self.push_event(i, WALL);
            }
        }
        self.at_wall.retain(|i| hit_wall.contains(i));

        let n = self.entities.len();
        let mut now = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.touched(i, j, &before) {
                    if !self.in_contact.contains(&(i, j)) {
                        let other = self.entities[j].id.clone();
                        self.push_event(i, &other);
                    }
                    if self.overlapping(i, j) {
                        now.insert((i, j));
                    }
                }
            }
        }
        self.in_contact = now;
        Ok(())
    }

    /// Whether `i` and `j` touched at any point during the last tick. A moving
    /// disc is swept along its segment against the other body's end pose.
    fn touched(&self, i: usize, j: usize, before: &[Pose2]) -> bool {
        if self.overlapping(i, j) {
            return true;
        }
        let sweep = |m: usize, o: usize| {
            let e = &self.entities[m];
            if before[m] == e.pose || e.shape.circle_radius().is_none() {
                return false;
            }
            let other = [(self.entities[o].pose, self.entities[o].shape)];
            swept_collision(&[before[m], e.pose], &e.shape, &other, DEFAULT_COLLISION_STEP)
                .ok()
                .flatten()
                .is_some()
        };
        sweep(i, j) || sweep(j, i)
    }
}

/// Functional form of [`WorldState::advance`].
pub fn step(state: &WorldState, commands: &BTreeMap<String, Vec2>, dt: f64) -> Result<WorldState, WorldError> {
    let mut next = state.clone();
    next.advance(commands, dt)?;
    Ok(next)
}
