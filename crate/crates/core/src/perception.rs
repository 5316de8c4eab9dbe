//! Synthetic perception: ground truth turned into robot-frame detections with
//! perfect tracking and an optional noise model, published into working
//! memory.
//!
//! Noise only perturbs positions and sizes. Nothing is ever misclassified,
//! missed or invented.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::PerceptionConfig;
use crate::geometry::{Footprint, Pose2, Shape, Vec2};
use crate::navigation::Bounds;
use crate::wm::{attrs, AttrValue, Attrs, Edge, Edit, Node, NodeId, NodeKind, Version, WmError, WorkingMemory};
use crate::world::WorldState;

/// Size multipliers are clamped to this range.
pub const SIZE_CLAMP: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub pos_sigma: f64,
    pub size_inflation_sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            pos_sigma: 0.0,
            size_inflation_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn from_config(cfg: &PerceptionConfig, seed: u64) -> Self {
        Self {
            pos_sigma: cfg.pos_sigma_m,
            size_inflation_sigma: cfg.size_inflation_sigma,
            seed,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.pos_sigma == 0.0 && self.size_inflation_sigma == 0.0
    }

    /// Generator for one (tick, track) pair, independent of every other pair.
    pub fn rng(&self, tick: u64, track_id: u32) -> ChaCha8Rng {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ tick);
        h = splitmix64(h ^ u64::from(track_id));
        ChaCha8Rng::seed_from_u64(h)
    }

    /// Multiplicative size error, `clamp(1 + σz)`.
    pub fn size_multiplier(&self, rng: &mut ChaCha8Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (1.0 + self.size_inflation_sigma * z).clamp(SIZE_CLAMP.0, SIZE_CLAMP.1)
    }

    pub fn position_offset(&self, rng: &mut ChaCha8Rng) -> Vec2 {
        let x: f64 = StandardNormal.sample(rng);
        let y: f64 = StandardNormal.sample(rng);
        Vec2::new(x, y) * self.pos_sigma
    }
}

/// The splitmix64 finaliser, used to derive independent seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub track_id: u32,
    pub class: String,
    /// Pose in the robot frame.
    pub pose: Pose2,
    pub shape: Shape,
    pub orientation_valid: bool,
}

/// Detections of everything within `range` of the robot, in entity order.
pub fn observe(world: &WorldState, robot_id: &str, range: f64, noise: &NoiseModel) -> Vec<Detection> {
    let robot = world.entity(robot_id).expect("robot exists");
    let inverse = robot.pose.inverse();
    world
        .entities
        .iter()
        .filter(|e| e.id != robot.id)
        .filter(|e| robot.pose.position().distance(e.pose.position()) <= range)
        .map(|e| {
            let mut pose = e.pose;
            let mut shape = e.shape;
            if !noise.is_zero() {
                let mut rng = noise.rng(world.tick, e.key);
                let offset = noise.position_offset(&mut rng);
                let k = noise.size_multiplier(&mut rng);
                pose = Pose2::new(pose.x + offset.x, pose.y + offset.y, pose.theta);
                shape = shape.scaled(k);
            }
            Detection {
                track_id: e.key,
                class: e.class.clone(),
                pose: inverse.compose(&pose),
                shape,
                orientation_valid: true,
            }
        })
        .collect()
}

/// The robot's own state as reported by odometry. Never noisy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub name: String,
    pub track_id: u32,
    pub pose: Pose2,
    pub radius: f64,
    pub height: f64,
    pub speed_limit: f64,
    pub accel_limit: f64,
    pub bounds: Bounds,
}

impl RobotState {
    pub fn from_world(world: &WorldState) -> Self {
        let r = &world.entities[world.robot_index()];
        Self {
            name: r.id.clone(),
            track_id: r.key,
            pose: r.pose,
            radius: r.radius(),
            height: r.shape.height,
            speed_limit: r.speed_limit,
            accel_limit: r.accel_limit,
            bounds: world.bounds,
        }
    }

    fn attrs(&self) -> Attrs {
        let b = &self.bounds;
        attrs([
            ("name", self.name.as_str().into()),
            ("track_id", i64::from(self.track_id).into()),
            ("x", self.pose.x.into()),
            ("y", self.pose.y.into()),
            ("theta", self.pose.theta.into()),
            ("radius", self.radius.into()),
            ("height", self.height.into()),
            ("speed_limit", self.speed_limit.into()),
            ("accel_limit", self.accel_limit.into()),
            ("bounds", vec![b.min.x, b.min.y, b.max.x, b.max.y].into()),
        ])
    }
}

/// Attributes describing a body's footprint.
pub fn shape_attrs(shape: &Shape) -> Attrs {
    let (kind, extents) = match shape.footprint {
        Footprint::Circle { radius } => ("circle", vec![radius]),
        Footprint::Box { half_x, half_y } => ("box", vec![half_x, half_y]),
    };
    attrs([
        ("shape", kind.into()),
        ("extents", extents.into()),
        ("height", shape.height.into()),
    ])
}

/// Inverse of [`shape_attrs`].
pub fn attrs_shape(node: &Node) -> Option<Shape> {
    let extents = node.real_vec("extents")?;
    let height = node.real("height")?;
    match (node.text("shape")?, extents) {
        ("circle", [r]) => Shape::circle(*r, height).ok(),
        ("box", [hx, hy]) => Shape::rect(*hx, *hy, height).ok(),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
struct Track {
    node: NodeId,
    last_seen: f64,
}

/// Publishes detections into working memory, keeping one node per track.
#[derive(Debug, Clone)]
pub struct Publisher {
    pub timeout: f64,
    robot_node: Option<NodeId>,
    tracks: BTreeMap<u32, Track>,
}

impl Publisher {
    pub fn new(timeout: f64) -> Self {
        Self {
            timeout,
            robot_node: None,
            tracks: BTreeMap::new(),
        }
    }

    pub fn robot_node(&self) -> Option<NodeId> {
        self.robot_node
    }

    /// Node of a track, if it is currently published.
    pub fn node_of(&self, track_id: u32) -> Option<NodeId> {
        self.tracks.get(&track_id).map(|t| t.node)
    }

    pub fn track_of(&self, node: NodeId) -> Option<u32> {
        self.tracks.iter().find(|(_, t)| t.node == node).map(|(k, _)| *k)
    }

    /// One transaction: the robot node, an upsert per detection with its RT
    /// edge from the robot, and removal of tracks unseen for longer than the
    /// timeout.
    pub fn publish(
        &mut self,
        time: f64,
        robot: &RobotState,
        detections: &[Detection],
        wm: &WorkingMemory,
    ) -> Result<Version, WmError> {
        let robot_node = *self.robot_node.get_or_insert_with(|| wm.fresh_id());
        let mut edits = vec![Edit::UpsertNode(Node::new(robot_node, NodeKind::Robot, robot.attrs()))];
        let mut tracks = self.tracks.clone();
        for d in detections {
            let track = tracks.entry(d.track_id).or_insert_with(|| Track {
                node: wm.fresh_id(),
                last_seen: time,
            });
            track.last_seen = time;
            let kind = if d.class == "person" {
                NodeKind::Person
            } else {
                NodeKind::Object
            };
            let mut a = shape_attrs(&d.shape);
            a.insert("class".into(), d.class.as_str().into());
            a.insert("track_id".into(), AttrValue::Int(i64::from(d.track_id)));
            a.insert("orientation_valid".into(), d.orientation_valid.into());
            edits.push(Edit::UpsertNode(Node::new(track.node, kind, a)));
            edits.push(Edit::UpsertEdge(Edge::rt(robot_node, track.node, &d.pose)));
        }
        let expired: Vec<u32> = tracks
            .iter()
            .filter(|(_, t)| time - t.last_seen > self.timeout + 1e-9)
            .map(|(k, _)| *k)
            .collect();
        for k in &expired {
            let t = tracks.remove(k).expect("listed above");
            edits.push(Edit::RemoveNode {
                id: t.node,
                cascade: true,
            });
        }
        // Tracks only change when the store accepted the transaction.
        let version = wm.transact(edits)?;
        self.tracks = tracks;
        Ok(version)
    }
}
