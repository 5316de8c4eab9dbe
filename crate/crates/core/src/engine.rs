//! The consequence engine: runs intentions on a detached snapshot of working
//! memory and reports whether they end in a collision.
//!
//! A simulated person plans on what it can see at its gaze, then walks that
//! plan through the true scene. Contacts are judged exactly as the world
//! judges them, so simulating the right intention at the right gaze
//! reproduces the ground truth.

use std::sync::Mutex;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::{ActionKind, CoSimRobot, Config};
use crate::geometry::{swept_collision, GeometryError, Pose2, Shape, Vec2, DEFAULT_COLLISION_STEP};
use crate::navigation::{build_grid, plan, Bounds, Follower, NavError, OccupancyGrid, Path, Unreachable};
use crate::perception::attrs_shape;
use crate::walker::{touches_ahead, Body, PersonModel, Walker};
use crate::wm::{attrs_pose, EdgeLabel, Node, NodeId, NodeKind, Snapshot, Version};
use crate::world::{bodies_overlap, kinematic_step, Limits};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("node {0} is not in the snapshot")]
    MissingNode(NodeId),
    #[error("snapshot has no robot")]
    NoRobot,
    #[error("malformed node {0}: {1}")]
    Malformed(NodeId, String),
    #[error("simulation horizon exceeded")]
    Horizon,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Nav(#[from] NavError),
}

/// A body of the scene in world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneBody {
    pub node: NodeId,
    pub class: String,
    pub track_id: i64,
    pub pose: Pose2,
    pub shape: Shape,
    pub dynamic: bool,
}

impl SceneBody {
    pub fn body(&self) -> Body {
        Body {
            key: self.node,
            pose: self.pose,
            shape: self.shape,
            dynamic: self.dynamic,
        }
    }

    pub fn radius(&self) -> f64 {
        self.shape.bounding_radius()
    }
}

/// What the robot believes, resolved into world coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scene {
    pub version: Version,
    pub bounds: Bounds,
    pub robot: SceneBody,
    pub robot_limits: Limits,
    pub people: Vec<SceneBody>,
    pub objects: Vec<SceneBody>,
}

fn body_of(node: &Node, pose: Pose2, dynamic: bool) -> Result<SceneBody, EngineError> {
    let shape = attrs_shape(node).ok_or_else(|| EngineError::Malformed(node.id, "bad shape".into()))?;
    Ok(SceneBody {
        node: node.id,
        class: node.text("class").unwrap_or("unknown").to_string(),
        track_id: node.int("track_id").unwrap_or(-1),
        pose,
        shape,
        dynamic,
    })
}

impl Scene {
    /// Resolves every person and object through the robot's RT edges.
    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self, EngineError> {
        let robot = snapshot.nodes_of(NodeKind::Robot).next().ok_or(EngineError::NoRobot)?;
        let malformed = |what: &str| EngineError::Malformed(robot.id, what.to_string());
        let robot_pose = attrs_pose(&robot.attrs).ok_or_else(|| malformed("pose"))?;
        let radius = robot.real("radius").ok_or_else(|| malformed("radius"))?;
        let height = robot.real("height").ok_or_else(|| malformed("height"))?;
        let bounds = match robot.real_vec("bounds") {
            Some([x0, y0, x1, y1]) => Bounds::new(Vec2::new(*x0, *y0), Vec2::new(*x1, *y1)),
            _ => return Err(malformed("bounds")),
        };
        let robot_body = SceneBody {
            node: robot.id,
            class: "robot".into(),
            track_id: robot.int("track_id").unwrap_or(-1),
            pose: robot_pose,
            shape: Shape::circle(radius, height)?,
            dynamic: true,
        };
        let robot_limits = Limits {
            speed: robot.real("speed_limit").ok_or_else(|| malformed("speed_limit"))?,
            accel: robot.real("accel_limit").ok_or_else(|| malformed("accel_limit"))?,
        };
        let resolve = |kind: NodeKind| -> Result<Vec<SceneBody>, EngineError> {
            snapshot
                .nodes_of(kind)
                .map(|n| {
                    let rt = snapshot
                        .edge(robot.id, n.id, EdgeLabel::Rt)
                        .and_then(|e| attrs_pose(&e.attrs))
                        .ok_or_else(|| EngineError::Malformed(n.id, "no RT edge from the robot".into()))?;
                    body_of(n, robot_pose.compose(&rt), kind == NodeKind::Person)
                })
                .collect()
        };
        Ok(Self {
            version: snapshot.version,
            bounds,
            robot: robot_body,
            robot_limits,
            people: resolve(NodeKind::Person)?,
            objects: resolve(NodeKind::Object)?,
        })
    }

    pub fn person(&self, node: NodeId) -> Option<&SceneBody> {
        self.people.iter().find(|b| b.node == node)
    }

    pub fn object(&self, node: NodeId) -> Option<&SceneBody> {
        self.objects.iter().find(|b| b.node == node)
    }

    pub fn body(&self, node: NodeId) -> Option<&SceneBody> {
        if node == self.robot.node {
            return Some(&self.robot);
        }
        self.person(node).or_else(|| self.object(node))
    }

    /// Every body except `skip`, with the robot optionally moved.
    pub fn bodies(&self, skip: &[NodeId], robot_at: Option<Pose2>) -> Vec<Body> {
        let mut robot = self.robot.body();
        if let Some(p) = robot_at {
            robot.pose = p;
        }
        std::iter::once(robot)
            .chain(self.people.iter().map(SceneBody::body))
            .chain(self.objects.iter().map(SceneBody::body))
            .filter(|b| !skip.contains(&b.key))
            .collect()
    }
}

/// The unit both agents work on: a subject engaging a target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntentionRecord {
    pub subject: NodeId,
    pub target: NodeId,
    pub action: ActionKind,
    /// Sampled gaze depression; robot intentions carry none.
    pub gaze: Option<f64>,
    pub gaze_index: Option<usize>,
    pub c: Option<bool>,
    pub collision_time: Option<f64>,
    pub collision_xy: Option<Vec2>,
}

impl IntentionRecord {
    pub fn person(subject: NodeId, target: NodeId, action: ActionKind, gaze: f64, gaze_index: usize) -> Self {
        Self {
            subject,
            target,
            action,
            gaze: Some(gaze),
            gaze_index: Some(gaze_index),
            c: None,
            collision_time: None,
            collision_xy: None,
        }
    }

    pub fn robot(subject: NodeId, target: NodeId, action: ActionKind) -> Self {
        Self {
            subject,
            target,
            action,
            gaze: None,
            gaze_index: None,
            c: None,
            collision_time: None,
            collision_xy: None,
        }
    }

    /// Copy carrying the flag and collision fields of `outcome`.
    pub fn resolved(&self, outcome: &SimOutcome) -> Self {
        Self {
            c: Some(outcome.c),
            collision_time: outcome.collision_time,
            collision_xy: outcome.collision_xy,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimOutcome {
    pub c: bool,
    /// Arc length to the first contact divided by the subject's speed.
    pub collision_time: Option<f64>,
    /// Subject position at the first contact.
    pub collision_xy: Option<Vec2>,
    /// What was hit first.
    pub hit: Option<NodeId>,
    pub goal: Vec2,
    pub planned_path: Result<Path, Unreachable>,
    pub trajectory: Vec<Pose2>,
    pub replanned: bool,
}

impl SimOutcome {
    pub fn reachable(&self) -> bool {
        self.planned_path.is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoSimOutcome {
    /// Whether the person still collides with the robot in place.
    pub c: bool,
    pub robot_goal: Vec2,
    pub robot_plan: Result<Path, Unreachable>,
    /// Path length over robot speed.
    pub arrival_time: Option<f64>,
    pub admissible: bool,
    /// The person re-simulated with the robot at its goal, when admissible.
    pub person: Option<SimOutcome>,
}

/// Collects structured simulation records for episode traces.
#[derive(Debug, Default)]
pub struct TraceLog {
    records: Mutex<Vec<serde_json::Value>>,
}

impl TraceLog {
    pub fn push(&self, record: serde_json::Value) {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record);
    }

    pub fn take(&self) -> Vec<serde_json::Value> {
        std::mem::take(&mut *self.records.lock().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn xy(points: impl IntoIterator<Item = Vec2>) -> Vec<[f64; 2]> {
    points.into_iter().map(|p| [p.x, p.y]).collect()
}

#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub cfg: &'a Config,
    pub trace: Option<&'a TraceLog>,
}

impl<'a> Engine<'a> {
    pub fn new(cfg: &'a Config) -> Self {
        Self { cfg, trace: None }
    }

    pub fn with_trace(mut self, trace: &'a TraceLog) -> Self {
        self.trace = Some(trace);
        self
    }

    fn person_model(&self, scene: &Scene, person: &SceneBody, gaze: f64) -> Result<PersonModel, EngineError> {
        let radius = person
            .shape
            .circle_radius()
            .ok_or_else(|| EngineError::Malformed(person.node, "person is not a disc".into()))?;
        // A person's eyes are at the top of the body.
        Ok(PersonModel::from_config(self.cfg, gaze, radius, person.shape.height, scene.bounds)?)
    }

    /// The grid the person plans on at `gaze`: only what it sees, never its
    /// own target.
    pub fn subjective_grid(
        &self,
        scene: &Scene,
        person: NodeId,
        target: NodeId,
        gaze: f64,
        robot_at: Option<Pose2>,
    ) -> Result<OccupancyGrid, EngineError> {
        let p = scene.person(person).ok_or(EngineError::MissingNode(person))?;
        let model = self.person_model(scene, p, gaze)?;
        let obstacles: Vec<(Pose2, Shape)> = scene
            .bodies(&[person, target], robot_at)
            .iter()
            .filter(|b| model.sees(&p.pose, b))
            .map(Body::obstacle)
            .collect();
        Ok(build_grid(&obstacles, model.radius, scene.bounds, &model.grid)?)
    }

    /// Plans the person's intention on its subjective grid and walks it
    /// through the true scene, re-planning as new things come into view.
    pub fn simulate_intention(
        &self,
        scene: &Scene,
        intent: &IntentionRecord,
        robot_at: Option<Pose2>,
    ) -> Result<SimOutcome, EngineError> {
        let robot = match robot_at {
            Some(p) => RobotMotion::Parked(p),
            None => RobotMotion::AsSeen,
        };
        self.simulate_with(scene, intent, robot)
    }

    /// Runs the person's intention while the robot stays put or drives its
    /// plan. Both move on the same tick, as in the world, and contacts are
    /// checked both ways.
    pub fn simulate_with(&self, scene: &Scene, intent: &IntentionRecord, robot: RobotMotion) -> Result<SimOutcome, EngineError> {
        let person = scene.person(intent.subject).ok_or(EngineError::MissingNode(intent.subject))?;
        let target = scene.body(intent.target).ok_or(EngineError::MissingNode(intent.target))?;
        let gaze = intent.gaze.unwrap_or(self.cfg.atm.gaze_min_rad());
        let model = self.person_model(scene, person, gaze)?;
        let (robot_at, mut driver) = match robot {
            RobotMotion::AsSeen => (None, None),
            RobotMotion::Parked(p) => (Some(p), None),
            RobotMotion::Driving(f) => (None, Some(f)),
        };
        let mut others = scene.bodies(&[intent.subject], robot_at);
        let mut obstacles: Vec<(Pose2, Shape)> = others.iter().filter(|b| b.key != intent.target).map(Body::obstacle).collect();
        let keys: Vec<NodeId> = others.iter().filter(|b| b.key != intent.target).map(|b| b.key).collect();
        let robot_other = others.iter().position(|b| b.key == scene.robot.node);
        let robot_obstacle = keys.iter().position(|k| *k == scene.robot.node);
        let robot_limits = scene.robot_limits;
        let robot_radius = scene.robot.radius();
        let mut robot_pose = robot_at.unwrap_or(scene.robot.pose);
        let mut robot_velocity = Vec2::ZERO;
        let mut robot_track = vec![robot_pose];

        let limits = model.limits;
        let radius = model.radius;
        let mut walker = Walker::new(model, &person.pose, &target.body(), &others);
        let goal = walker.goal;
        let planned_path = walker.initial_plan.clone();

        let dt = self.cfg.harness.dt_s;
        let max_ticks = (self.cfg.engine.horizon_s / dt).ceil() as u64;
        let mut pose = person.pose;
        let mut velocity = Vec2::ZERO;
        let mut trajectory = vec![pose];
        let mut arc = 0.0;
        let mut contact: Option<(f64, Vec2, NodeId)> = obstacles
            .iter()
            .zip(&keys)
            .find(|((p, s), _)| bodies_overlap((&pose, &person.shape), (p, s)))
            .map(|(_, k)| (0.0, pose.position(), *k));
        let mut ticks = 0;
        while contact.is_none() {
            let cmd = walker.command(&pose, &others, dt);
            let robot_cmd = driver.as_mut().and_then(|f| f.command(robot_pose.position(), dt)).map(|c| {
                let yields = robot_yields(
                    robot_pose.position(),
                    robot_velocity,
                    c,
                    robot_radius,
                    robot_limits,
                    self.cfg.nav.robot_yield_m,
                    [(&pose, &person.shape)],
                );
                if yields {
                    Vec2::ZERO
                } else {
                    c
                }
            });
            let robot_moving = robot_velocity.norm() > 1e-12 || robot_cmd.is_some_and(|c| c.norm() > 0.0);
            if cmd.is_none() && !robot_moving {
                break;
            }
            if ticks >= max_ticks {
                return Err(EngineError::Horizon);
            }
            ticks += 1;
            let (next, v, _) = kinematic_step(&pose, velocity, cmd.unwrap_or(Vec2::ZERO), limits, radius, &scene.bounds, dt);
            let robot_before = robot_pose;
            if driver.is_some() {
                let (rp, rv, _) = kinematic_step(
                    &robot_pose,
                    robot_velocity,
                    robot_cmd.unwrap_or(Vec2::ZERO),
                    robot_limits,
                    robot_radius,
                    &scene.bounds,
                    dt,
                );
                robot_pose = rp;
                robot_velocity = rv;
                robot_track.push(rp);
                if let Some(i) = robot_obstacle {
                    obstacles[i].0 = rp;
                }
                if let Some(i) = robot_other {
                    others[i].pose = rp;
                }
            }
            let segment = [pose, next];
            let hit = swept_collision(&segment, &person.shape, &obstacles, DEFAULT_COLLISION_STEP)?;
            let ended_in = obstacles
                .iter()
                .position(|(p, s)| bodies_overlap((&next, &person.shape), (p, s)));
            // The robot sweeping into the person counts too.
            let run_over = robot_obstacle.filter(|_| robot_before != robot_pose).filter(|&i| {
                swept_collision(&[robot_before, robot_pose], &obstacles[i].1, &[(next, person.shape)], DEFAULT_COLLISION_STEP)
                    .ok()
                    .flatten()
                    .is_some()
            });
            let step_len = pose.position().distance(next.position());
            contact = match (hit, ended_in.or(run_over)) {
                (Some(h), _) => {
                    let at = pose.position().lerp(next.position(), if step_len > 0.0 { h.arc_length / step_len } else { 0.0 });
                    Some((arc + h.arc_length, at, keys[h.obstacle_index]))
                }
                (None, Some(i)) => Some((arc + step_len, next.position(), keys[i])),
                (None, None) => None,
            };
            arc += step_len;
            pose = next;
            velocity = v;
            trajectory.push(pose);
        }

        let outcome = SimOutcome {
            c: contact.is_some(),
            collision_time: contact.map(|(a, _, _)| a / limits.speed),
            collision_xy: contact.map(|(_, p, _)| p),
            hit: contact.map(|(_, _, k)| k),
            goal,
            planned_path,
            trajectory,
            replanned: walker.replanned(),
        };
        if let Some(trace) = self.trace {
            trace.push(json!({
                "kind": "simulate_intention",
                "snapshot_version": scene.version,
                "subject": intent.subject,
                "target": intent.target,
                "action": intent.action.as_str(),
                "gaze": gaze,
                "robot_at": robot_at.map(|p| [p.x, p.y, p.theta]),
                "robot_track": (robot_track.len() > 1).then(|| xy(robot_track.iter().map(Pose2::position))),
                "goal": [goal.x, goal.y],
                "planned_path": outcome.planned_path.as_ref().map(|p| xy(p.points())).map_err(|u| u.to_string()),
                "trajectory": xy(outcome.trajectory.iter().map(Pose2::position)),
                "replanned": outcome.replanned,
                "c": outcome.c,
                "collision_time": outcome.collision_time,
                "collision_xy": outcome.collision_xy.map(|p| [p.x, p.y]),
                "hit": outcome.hit,
            }));
        }
        Ok(outcome)
    }

    /// Where the robot would stand to act on `target`: just clear of its
    /// footprint, on the side facing `reference`.
    pub fn robot_goal(&self, scene: &Scene, target: &SceneBody, reference: Vec2) -> Vec2 {
        target
            .shape
            .standoff_point(&target.pose, reference, scene.robot.radius() + self.cfg.engine.standoff_m)
    }

    /// The robot's plan to `target` on the full scene, as used both to judge
    /// and to execute a robot intention.
    pub fn robot_plan(&self, scene: &Scene, goal: Vec2) -> Result<Result<Path, Unreachable>, EngineError> {
        let obstacles: Vec<(Pose2, Shape)> = scene
            .bodies(&[scene.robot.node], None)
            .iter()
            .map(Body::obstacle)
            .collect();
        let grid = build_grid(&obstacles, scene.robot.radius(), scene.bounds, &self.cfg.nav.grid_params())?;
        Ok(plan(&grid, scene.robot.pose.position(), goal)?)
    }

    /// Checks whether the robot carrying out `robot_intent` cancels the risk
    /// of `person_intent`. Standoff goals around the target are tried in
    /// turn, starting with the side facing the predicted collision. A goal
    /// works if the robot can get there in time and the person, re-simulated
    /// while the robot drives there, no longer collides with anything,
    /// the robot included.
    pub fn co_simulate(
        &self,
        scene: &Scene,
        robot_intent: &IntentionRecord,
        person_intent: &IntentionRecord,
    ) -> Result<CoSimOutcome, EngineError> {
        let target = scene.body(robot_intent.target).ok_or(EngineError::MissingNode(robot_intent.target))?;
        let person = scene.person(person_intent.subject).ok_or(EngineError::MissingNode(person_intent.subject))?;
        let reference = person_intent.collision_xy.unwrap_or(person.pose.position());
        let centre = target.pose.position();
        let deadline = person_intent.collision_time.unwrap_or(f64::INFINITY);
        let fresh = IntentionRecord {
            c: None,
            collision_time: None,
            collision_xy: None,
            ..person_intent.clone()
        };
        let mut first = None;
        for offset in STANDOFF_OFFSETS_DEG {
            let turned = centre + (reference - centre).rotated(offset.to_radians());
            let robot_goal = self.robot_goal(scene, target, turned);
            let robot_plan = self.robot_plan(scene, robot_goal)?;
            let arrival_time = robot_plan.as_ref().ok().map(|p| p.total_length / scene.robot_limits.speed);
            let admissible = arrival_time.is_some_and(|t| t + self.cfg.atm.admissibility_margin_s <= deadline);
            let person_outcome = match (&robot_plan, admissible) {
                (Ok(path), true) => {
                    let motion = match self.cfg.atm.co_sim_robot {
                        CoSimRobot::Driving => {
                            RobotMotion::Driving(robot_follower(path, scene.robot_limits, self.cfg.nav.lookahead_m)?)
                        }
                        CoSimRobot::Parked => {
                            let heading = (robot_goal - scene.robot.pose.position()).angle();
                            RobotMotion::Parked(Pose2::from_position(robot_goal, heading))
                        }
                    };
                    Some(self.simulate_with(scene, &fresh, motion)?)
                }
                _ => None,
            };
            let outcome = CoSimOutcome {
                c: person_outcome.as_ref().is_none_or(|o| o.c),
                robot_goal,
                robot_plan,
                arrival_time,
                admissible,
                person: person_outcome,
            };
            if let Some(trace) = self.trace {
                trace.push(json!({
                    "kind": "co_simulate",
                    "snapshot_version": scene.version,
                    "robot_target": robot_intent.target,
                    "person": person_intent.subject,
                    "person_target": person_intent.target,
                    "standoff_offset_deg": offset,
                    "robot_goal": [robot_goal.x, robot_goal.y],
                    "robot_plan": outcome.robot_plan.as_ref().map(|p| xy(p.points())).map_err(|u| u.to_string()),
                    "arrival_time": arrival_time,
                    "deadline": person_intent.collision_time,
                    "admissible": admissible,
                    "c": outcome.c,
                    "person_hit": outcome.person.as_ref().and_then(|o| o.hit),
                    "person_collision_time": outcome.person.as_ref().and_then(|o| o.collision_time),
                }));
            }
            if !outcome.c {
                return Ok(outcome);
            }
            first.get_or_insert(outcome);
        }
        Ok(first.expect("at least one standoff offset"))
    }
}

/// How the robot behaves while a person intention is simulated.
#[derive(Debug, Clone)]
pub enum RobotMotion {
    /// Where the snapshot has it.
    AsSeen,
    /// Moved there before the person starts.
    Parked(Pose2),
    /// Driving a plan from where the snapshot has it.
    Driving(Follower),
}

/// Standoff directions tried around a target, as turns away from the side
/// facing the predicted collision.
pub const STANDOFF_OFFSETS_DEG: [f64; 12] = [
    0.0, 30.0, -30.0, 60.0, -60.0, 90.0, -90.0, 120.0, -120.0, 150.0, -150.0, 180.0,
];

/// Whether the robot, at `position` with `velocity` and about to follow
/// `cmd`, must hold still for one of `people`: one of them lies within its
/// stopping distance plus `buffer` along the command.
pub fn robot_yields<'p>(
    position: Vec2,
    velocity: Vec2,
    cmd: Vec2,
    radius: f64,
    limits: Limits,
    buffer: f64,
    people: impl IntoIterator<Item = (&'p Pose2, &'p Shape)>,
) -> bool {
    let speed = velocity.norm();
    let reach = speed * speed / (2.0 * limits.accel) + buffer;
    people
        .into_iter()
        .any(|(pose, shape)| touches_ahead(position, radius, cmd, reach, pose, shape))
}

/// A follower for executing a robot plan in the world.
pub fn robot_follower(path: &Path, scene_limits: Limits, lookahead: f64) -> Result<Follower, NavError> {
    Ok(Follower::new(path, scene_limits.speed, lookahead)?.with_braking(scene_limits.accel))
}
