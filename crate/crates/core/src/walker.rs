//! The person model used both to simulate intentions and to script the
//! ground-truth person, so that a simulation of the right intention at the
//! right gaze reproduces the world exactly.
//!
//! A walker plans on the occupancy grid of what it has seen so far. Seen
//! obstacles are remembered. It re-plans from its current pose when it first
//! sees an obstacle, or when a visible moving body has shifted by more than
//! the re-plan distance since the last plan.

use std::collections::{BTreeMap, BTreeSet};

use crate::config::{Config, EngineConfig};
use crate::geometry::{disc_overlaps, in_frustum, in_sector, Frustum, GeometryError, Pose2, Shape, Vec2};
use crate::navigation::{build_grid, plan, Bounds, Follower, GridParams, Path, Unreachable};
use crate::world::{Limits, PersonScript, Scenario, WorldState, WALL};

/// Anything a walker can see or bump into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Body {
    pub key: u64,
    pub pose: Pose2,
    pub shape: Shape,
    pub dynamic: bool,
}

impl Body {
    pub fn obstacle(&self) -> (Pose2, Shape) {
        (self.pose, self.shape)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonModel {
    pub frustum: Frustum,
    pub eye_height: f64,
    /// Bodies this tall are seen whenever they are inside the view sector.
    pub tall_height: f64,
    pub radius: f64,
    pub limits: Limits,
    pub lookahead: f64,
    pub grid: GridParams,
    pub standoff: f64,
    pub replan_distance: f64,
    pub yield_distance: f64,
    pub bounds: Bounds,
}

impl PersonModel {
    /// The configured person model at `gaze`, for a body of `radius` whose
    /// eyes are at `eye_height`.
    pub fn from_config(
        cfg: &Config,
        gaze: f64,
        radius: f64,
        eye_height: f64,
        bounds: Bounds,
    ) -> Result<Self, GeometryError> {
        let e: &EngineConfig = &cfg.engine;
        Ok(Self {
            frustum: e.frustum(gaze)?,
            eye_height,
            tall_height: e.tall_height_m,
            radius,
            limits: Limits {
                speed: e.person_speed_mps,
                accel: e.person_accel_mps2,
            },
            lookahead: cfg.nav.lookahead_m,
            grid: GridParams {
                resolution: cfg.nav.resolution_m,
                margin: e.person_margin_m,
                walls: true,
            },
            standoff: e.standoff_m,
            replan_distance: e.replan_distance_m,
            yield_distance: e.yield_distance_m,
            bounds,
        })
    }

    pub fn sees(&self, observer: &Pose2, body: &Body) -> bool {
        if body.shape.height >= self.tall_height {
            in_sector(observer, &self.frustum, &body.pose)
        } else {
            in_frustum(observer, self.eye_height, &self.frustum, &body.pose, &body.shape)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Walker {
    pub model: PersonModel,
    pub target: u64,
    pub goal: Vec2,
    /// Everything seen so far, at its last seen pose.
    seen: BTreeMap<u64, Body>,
    /// Positions of moving bodies as used by the current plan.
    planned_with: BTreeMap<u64, Vec2>,
    /// Dynamic bodies in view on the previous tick and where they were.
    last_view: BTreeMap<u64, Vec2>,
    follower: Option<Follower>,
    /// Outcome of the first plan.
    pub initial_plan: Result<Path, Unreachable>,
    pub current_plan: Option<Path>,
    pub replans: usize,
    /// Set while the last plan found no route. The walker stands still and
    /// retries whenever its view changes.
    pub blocked: Option<Unreachable>,
}

impl Walker {
    /// Looks around from `pose` and makes the first plan towards a standoff
    /// point next to `target`.
    pub fn new(model: PersonModel, pose: &Pose2, target: &Body, bodies: &[Body]) -> Self {
        let goal = target
            .shape
            .standoff_point(&target.pose, pose.position(), model.standoff);
        let mut walker = Self {
            model,
            target: target.key,
            goal,
            seen: BTreeMap::new(),
            planned_with: BTreeMap::new(),
            last_view: BTreeMap::new(),
            follower: None,
            initial_plan: Err(Unreachable::NoRoute),
            current_plan: None,
            replans: 0,
            blocked: None,
        };
        walker.look(pose, bodies);
        walker.initial_plan = walker.replan(pose);
        walker.replans = 0;
        walker
    }

    /// Ids currently in view.
    pub fn visible(&self, pose: &Pose2, bodies: &[Body]) -> BTreeSet<u64> {
        bodies
            .iter()
            .filter(|b| self.model.sees(pose, b))
            .map(|b| b.key)
            .collect()
    }

    pub fn seen(&self) -> impl Iterator<Item = &Body> {
        self.seen.values()
    }

    /// Updates memory from the current view and reports whether a re-plan is
    /// due. Bodies already in contact with the walker are felt, not seen, and
    /// do not count.
    fn look(&mut self, pose: &Pose2, bodies: &[Body]) -> bool {
        let mut trigger = false;
        for b in bodies.iter().filter(|b| b.key != self.target) {
            if !self.model.sees(pose, b) || disc_overlaps(pose.position(), self.model.radius, &b.pose, &b.shape) {
                continue;
            }
            match self.seen.insert(b.key, *b) {
                None => trigger = true,
                Some(_) if b.dynamic => {
                    let moved = self
                        .planned_with
                        .get(&b.key)
                        .is_none_or(|p| p.distance(b.pose.position()) > self.model.replan_distance);
                    trigger |= moved;
                }
                Some(_) => {}
            }
        }
        trigger
    }

    fn replan(&mut self, pose: &Pose2) -> Result<Path, Unreachable> {
        self.replans += 1;
        let obstacles: Vec<(Pose2, Shape)> = self.seen.values().map(Body::obstacle).collect();
        self.planned_with = self
            .seen
            .values()
            .filter(|b| b.dynamic)
            .map(|b| (b.key, b.pose.position()))
            .collect();
        let outcome = build_grid(&obstacles, self.model.radius, self.model.bounds, &self.model.grid)
            .ok()
            .and_then(|grid| plan(&grid, pose.position(), self.goal).ok())
            .unwrap_or(Err(Unreachable::StartBlocked));
        match &outcome {
            Ok(path) => {
                self.follower = Follower::new(path, self.model.limits.speed, self.model.lookahead)
                    .ok()
                    .map(|f| f.with_braking(self.model.limits.accel));
                self.current_plan = Some(path.clone());
                self.blocked = None;
            }
            Err(reason) => {
                self.follower = None;
                self.current_plan = None;
                self.blocked = Some(*reason);
            }
        }
        outcome
    }

    pub fn replanned(&self) -> bool {
        self.replans > 0
    }

    /// Arrived, or blocked with nothing in view that could change that.
    pub fn is_finished(&self) -> bool {
        self.blocked.is_some() || self.follower.as_ref().is_none_or(Follower::is_done)
    }

    pub fn arrived(&self) -> bool {
        self.blocked.is_none() && self.follower.as_ref().is_some_and(Follower::is_done)
    }

    /// Velocity command for this tick, or `None` when arrived or blocked.
    pub fn command(&mut self, pose: &Pose2, bodies: &[Body], dt: f64) -> Option<Vec2> {
        if self.look(pose, bodies) {
            let _ = self.replan(pose);
        }
        let moving = self.moving_in_view(pose, bodies);
        let cmd = self.follower.as_mut()?.command(pose.position(), dt)?;
        if moving.iter().any(|b| self.would_touch(pose.position(), cmd, b)) {
            return Some(Vec2::ZERO);
        }
        Some(cmd)
    }

    /// Visible dynamic bodies that moved since the previous tick.
    fn moving_in_view<'b>(&mut self, pose: &Pose2, bodies: &'b [Body]) -> Vec<&'b Body> {
        let previous = std::mem::take(&mut self.last_view);
        let mut moving = Vec::new();
        for b in bodies.iter().filter(|b| b.dynamic && b.key != self.target && self.model.sees(pose, b)) {
            let now = b.pose.position();
            if previous.get(&b.key).is_some_and(|p| p.distance(now) > 1e-9) {
                moving.push(b);
            }
            self.last_view.insert(b.key, now);
        }
        moving
    }

    fn would_touch(&self, p: Vec2, cmd: Vec2, body: &Body) -> bool {
        touches_ahead(p, self.model.radius, cmd, self.model.yield_distance, &body.pose, &body.shape)
    }
}

/// Whether a disc of `radius` at `p` moving along `cmd` would touch the
/// body within `reach`. Bodies already touching do not count, so a mover is
/// never frozen by a contact it is trying to leave.
pub fn touches_ahead(p: Vec2, radius: f64, cmd: Vec2, reach: f64, pose: &Pose2, shape: &Shape) -> bool {
    let Some(dir) = cmd.normalized() else {
        return false;
    };
    if reach <= 0.0 || disc_overlaps(p, radius, pose, shape) {
        return false;
    }
    let steps = (reach / 0.05).ceil().max(1.0) as usize;
    (1..=steps).any(|i| disc_overlaps(p + dir * (reach * i as f64 / steps as f64), radius, pose, shape))
}

/// World entities other than `skip`, as bodies keyed by entity key.
pub fn world_bodies(world: &WorldState, skip: usize) -> Vec<Body> {
    world
        .entities
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(_, e)| Body {
            key: e.key as u64,
            pose: e.pose,
            shape: e.shape,
            dynamic: e.dynamic,
        })
        .collect()
}

/// Gaze of the scripted person: the script's own, else the configured minimum.
pub fn script_gaze(scenario: &Scenario, cfg: &Config) -> f64 {
    match &scenario.person_script {
        PersonScript::Walk { gaze: Some(g), .. } => *g,
        _ => cfg.atm.gaze_min_rad(),
    }
}

/// The ground-truth person walking its scripted intention in the world.
#[derive(Debug, Clone)]
pub struct ScriptedPerson {
    pub index: usize,
    pub walker: Walker,
}

impl ScriptedPerson {
    /// `None` for scenarios whose person is steered by a human.
    pub fn new(scenario: &Scenario, world: &WorldState, cfg: &Config) -> Result<Option<Self>, GeometryError> {
        let PersonScript::Walk { target_id, speed, .. } = &scenario.person_script else {
            return Ok(None);
        };
        let index = world.person_index();
        let person = &world.entities[index];
        let target = world.entity(target_id).expect("validated script target");
        let mut model = PersonModel::from_config(
            cfg,
            script_gaze(scenario, cfg),
            person.radius(),
            person.shape.height,
            world.bounds,
        )?;
        model.limits = Limits {
            speed: *speed,
            accel: person.accel_limit,
        };
        let target = Body {
            key: target.key as u64,
            pose: target.pose,
            shape: target.shape,
            dynamic: target.dynamic,
        };
        let bodies = world_bodies(world, index);
        let walker = Walker::new(model, &person.pose, &target, &bodies);
        Ok(Some(Self { index, walker }))
    }

    pub fn id<'a>(&self, world: &'a WorldState) -> &'a str {
        &world.entities[self.index].id
    }

    pub fn command(&mut self, world: &WorldState) -> Option<Vec2> {
        let bodies = world_bodies(world, self.index);
        let pose = world.entities[self.index].pose;
        self.walker.command(&pose, &bodies, world.dt)
    }
}

/// First contact of the person with anything but its target and the walls.
pub fn first_person_collision(world: &WorldState, target_id: Option<&str>) -> Option<(f64, String)> {
    let person = &world.entities[world.person_index()].id;
    world
        .events_for(person)
        .find(|(_, other)| *other != WALL && Some(*other) != target_id)
        .map(|(t, other)| (t, other.to_string()))
}

#[derive(Debug, Clone)]
pub struct TruthReplay {
    pub collided: bool,
    pub first_collision: Option<(f64, String)>,
    pub arrived: bool,
    pub ticks: u64,
    pub world: WorldState,
}

/// Replays the scripted person in the untouched world: zero noise and a
/// robot that never moves. This is the ground-truth label of an episode.
pub fn truth_replay(scenario: &Scenario, cfg: &Config) -> Result<TruthReplay, GeometryError> {
    let dt = cfg.harness.dt_s;
    let mut world = WorldState::new(scenario, dt);
    let target_id = scenario.script_target().map(|e| e.id.clone());
    let Some(mut person) = ScriptedPerson::new(scenario, &world, cfg)? else {
        return Ok(TruthReplay {
            collided: false,
            first_collision: None,
            arrived: false,
            ticks: 0,
            world,
        });
    };
    let max_ticks = (cfg.harness.max_time_s / dt).ceil() as u64;
    let person_id = person.id(&world).to_string();
    while world.tick < max_ticks {
        let Some(cmd) = person.command(&world) else {
            break;
        };
        let commands = BTreeMap::from([(person_id.clone(), cmd)]);
        world.advance(&commands, dt).expect("person is dynamic");
    }
    let first_collision = first_person_collision(&world, target_id.as_deref());
    Ok(TruthReplay {
        collided: first_collision.is_some(),
        first_collision,
        arrived: person.walker.arrived(),
        ticks: world.tick,
        world,
    })
}
