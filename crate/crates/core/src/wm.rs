//! The shared working memory: a typed attributed graph that agents edit with
//! all-or-nothing transactions.
//!
//! Committed graphs are immutable and shared behind an `Arc`, so a snapshot is
//! an O(1) detach of the current version. Every commit is appended to a log
//! (edits plus wall-clock commit instant) which can be replayed from empty.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2;

pub type NodeId = u64;
pub type Version = u64;

/// Default per-subscriber buffer before the overflow signal kicks in.
pub const DEFAULT_SUBSCRIPTION_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Robot,
    Person,
    Object,
    Intention,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EdgeLabel {
    #[serde(rename = "RT")]
    Rt,
    #[serde(rename = "has_intention")]
    HasIntention,
    #[serde(rename = "target")]
    Target,
    #[serde(rename = "collision")]
    Collision,
    #[serde(rename = "approaching")]
    Approaching,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrValue {
    Int(i64),
    Real(f64),
    Text(String),
    Bool(bool),
    RealVec(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AttrType {
    Int,
    Real,
    Text,
    Bool,
    RealVec,
}

impl AttrValue {
    fn ty(&self) -> AttrType {
        match self {
            AttrValue::Int(_) => AttrType::Int,
            AttrValue::Real(_) => AttrType::Real,
            AttrValue::Text(_) => AttrType::Text,
            AttrValue::Bool(_) => AttrType::Bool,
            AttrValue::RealVec(_) => AttrType::RealVec,
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            AttrValue::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            AttrValue::Text(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_real_vec(&self) -> Option<&[f64]> {
        match self {
            AttrValue::RealVec(v) => Some(v),
            _ => None,
        }
    }
}

impl From<f64> for AttrValue {
    fn from(v: f64) -> Self {
        AttrValue::Real(v)
    }
}

impl From<i64> for AttrValue {
    fn from(v: i64) -> Self {
        AttrValue::Int(v)
    }
}

impl From<bool> for AttrValue {
    fn from(v: bool) -> Self {
        AttrValue::Bool(v)
    }
}

impl From<&str> for AttrValue {
    fn from(v: &str) -> Self {
        AttrValue::Text(v.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(v: String) -> Self {
        AttrValue::Text(v)
    }
}

impl From<Vec<f64>> for AttrValue {
    fn from(v: Vec<f64>) -> Self {
        AttrValue::RealVec(v)
    }
}

pub type Attrs = BTreeMap<String, AttrValue>;

/// Builds an attribute map from `(name, value)` pairs.
pub fn attrs<const N: usize>(pairs: [(&str, AttrValue); N]) -> Attrs {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Attribute map holding an SE(2) value, as carried by RT edges.
pub fn pose_attrs(pose: &Pose2) -> Attrs {
    attrs([
        ("x", pose.x.into()),
        ("y", pose.y.into()),
        ("theta", pose.theta.into()),
    ])
}

/// Reads the SE(2) value stored in `x`, `y`, `theta` attributes.
pub fn attrs_pose(attrs: &Attrs) -> Option<Pose2> {
    let get = |k: &str| attrs.get(k).and_then(AttrValue::as_real);
    Some(Pose2::new(get("x")?, get("y")?, get("theta")?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub attrs: Attrs,
}

impl Node {
    pub fn new(id: NodeId, kind: NodeKind, attrs: Attrs) -> Self {
        Self { id, kind, attrs }
    }

    pub fn real(&self, key: &str) -> Option<f64> {
        self.attrs.get(key).and_then(AttrValue::as_real)
    }

    pub fn int(&self, key: &str) -> Option<i64> {
        self.attrs.get(key).and_then(AttrValue::as_int)
    }

    pub fn boolean(&self, key: &str) -> Option<bool> {
        self.attrs.get(key).and_then(AttrValue::as_bool)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).and_then(AttrValue::as_text)
    }

    pub fn real_vec(&self, key: &str) -> Option<&[f64]> {
        self.attrs.get(key).and_then(AttrValue::as_real_vec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey {
    pub from: NodeId,
    pub to: NodeId,
    pub label: EdgeLabel,
}

impl EdgeKey {
    pub fn new(from: NodeId, to: NodeId, label: EdgeLabel) -> Self {
        Self { from, to, label }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeId,
    pub to: NodeId,
    pub label: EdgeLabel,
    pub attrs: Attrs,
}

impl Edge {
    pub fn new(from: NodeId, to: NodeId, label: EdgeLabel, attrs: Attrs) -> Self {
        Self { from, to, label, attrs }
    }

    pub fn rt(from: NodeId, to: NodeId, pose: &Pose2) -> Self {
        Self::new(from, to, EdgeLabel::Rt, pose_attrs(pose))
    }

    pub fn key(&self) -> EdgeKey {
        EdgeKey::new(self.from, self.to, self.label)
    }
}

/// One edit inside a transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Edit {
    AddNode(Node),
    /// Merges `attrs` into an existing node.
    UpdateNode { id: NodeId, attrs: Attrs },
    /// Adds the node, or merges its attributes into the existing one of the same kind.
    UpsertNode(Node),
    /// With `cascade`, incident edges are removed too; otherwise they must already be gone.
    RemoveNode { id: NodeId, cascade: bool },
    AddEdge(Edge),
    UpdateEdge { key: EdgeKey, attrs: Attrs },
    UpsertEdge(Edge),
    RemoveEdge(EdgeKey),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WmError {
    #[error("node {0} does not exist")]
    MissingNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("node {id} is a {existing:?}, cannot be changed to {requested:?}")]
    KindChange {
        id: NodeId,
        existing: NodeKind,
        requested: NodeKind,
    },
    #[error("edge {0:?} does not exist")]
    MissingEdge(EdgeKey),
    #[error("duplicate edge {0:?}")]
    DuplicateEdge(EdgeKey),
    #[error("dangling endpoint: edge {key:?} references missing node {node}")]
    DanglingEndpoint { key: EdgeKey, node: NodeId },
    #[error("schema violation on {target}: {reason}")]
    Schema { target: String, reason: String },
}

struct AttrSpec {
    name: &'static str,
    ty: AttrType,
    required: bool,
}

const fn req(name: &'static str, ty: AttrType) -> AttrSpec {
    AttrSpec { name, ty, required: true }
}

const fn opt(name: &'static str, ty: AttrType) -> AttrSpec {
    AttrSpec { name, ty, required: false }
}

const BODY_SCHEMA: &[AttrSpec] = &[
    req("class", AttrType::Text),
    req("track_id", AttrType::Int),
    req("shape", AttrType::Text),
    req("extents", AttrType::RealVec),
    req("height", AttrType::Real),
    opt("orientation_valid", AttrType::Bool),
];

const ROBOT_SCHEMA: &[AttrSpec] = &[
    req("name", AttrType::Text),
    req("track_id", AttrType::Int),
    req("x", AttrType::Real),
    req("y", AttrType::Real),
    req("theta", AttrType::Real),
    req("radius", AttrType::Real),
    req("height", AttrType::Real),
    req("speed_limit", AttrType::Real),
    req("accel_limit", AttrType::Real),
    opt("bounds", AttrType::RealVec),
];

const INTENTION_SCHEMA: &[AttrSpec] = &[
    req("action", AttrType::Text),
    opt("gaze", AttrType::Real),
    opt("gaze_index", AttrType::Int),
    opt("c", AttrType::Bool),
    opt("collision_time", AttrType::Real),
    opt("collision_xy", AttrType::RealVec),
    opt("reachable", AttrType::Bool),
    opt("replanned", AttrType::Bool),
    opt("error", AttrType::Text),
    opt("goal", AttrType::RealVec),
    opt("path", AttrType::RealVec),
    opt("cancels", AttrType::Int),
];

const COLLISION_SCHEMA: &[AttrSpec] = &[req("time", AttrType::Real), req("xy", AttrType::RealVec)];

const RT_SCHEMA: &[AttrSpec] = &[
    req("x", AttrType::Real),
    req("y", AttrType::Real),
    req("theta", AttrType::Real),
];

fn node_schema(kind: NodeKind) -> &'static [AttrSpec] {
    match kind {
        NodeKind::Robot => ROBOT_SCHEMA,
        NodeKind::Person | NodeKind::Object => BODY_SCHEMA,
        NodeKind::Intention => INTENTION_SCHEMA,
        NodeKind::Collision => COLLISION_SCHEMA,
    }
}

fn edge_schema(label: EdgeLabel) -> &'static [AttrSpec] {
    match label {
        EdgeLabel::Rt => RT_SCHEMA,
        _ => &[],
    }
}

fn check_schema(target: String, schema: &[AttrSpec], attrs: &Attrs, strict_keys: bool) -> Result<(), WmError> {
    for (name, value) in attrs {
        match schema.iter().find(|s| s.name == name) {
            Some(spec) if spec.ty == value.ty() => {
                if let AttrValue::Real(v) = value {
                    if !v.is_finite() {
                        return Err(WmError::Schema {
                            target,
                            reason: format!("attribute `{name}` is not finite"),
                        });
                    }
                }
            }
            Some(spec) => {
                return Err(WmError::Schema {
                    target,
                    reason: format!("attribute `{name}` expects {:?}, got {:?}", spec.ty, value.ty()),
                })
            }
            None if strict_keys => {
                return Err(WmError::Schema {
                    target,
                    reason: format!("unknown attribute `{name}`"),
                })
            }
            None => {}
        }
    }
    if let Some(missing) = schema.iter().find(|s| s.required && !attrs.contains_key(s.name)) {
        return Err(WmError::Schema {
            target,
            reason: format!("missing required attribute `{}`", missing.name),
        });
    }
    Ok(())
}

/// Immutable-by-convention graph content. Iteration order is by id, so every
/// derived list is deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Graph {
    nodes: BTreeMap<NodeId, Node>,
    edges: BTreeMap<EdgeKey, Edge>,
}

impl Graph {
    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(move |n| n.kind == kind)
    }

    pub fn edge(&self, from: NodeId, to: NodeId, label: EdgeLabel) -> Option<&Edge> {
        self.edges.get(&EdgeKey::new(from, to, label))
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edges_from(&self, from: NodeId, label: EdgeLabel) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(move |e| e.from == from && e.label == label)
    }

    pub fn edges_to(&self, to: NodeId, label: EdgeLabel) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(move |e| e.to == to && e.label == label)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Full scan for edges whose endpoints are missing.
    pub fn dangling_edges(&self) -> Vec<EdgeKey> {
        self.edges
            .keys()
            .filter(|k| !self.nodes.contains_key(&k.from) || !self.nodes.contains_key(&k.to))
            .copied()
            .collect()
    }

    fn apply(&mut self, edit: &Edit, changes: &mut Vec<Change>) -> Result<(), WmError> {
        match edit {
            Edit::AddNode(node) => {
                if self.nodes.contains_key(&node.id) {
                    return Err(WmError::DuplicateNode(node.id));
                }
                check_schema(format!("node {}", node.id), node_schema(node.kind), &node.attrs, true)?;
                self.nodes.insert(node.id, node.clone());
                changes.push(Change::NodeAdded(node.clone()));
            }
            Edit::UpdateNode { id, attrs } => {
                let node = self.nodes.get_mut(id).ok_or(WmError::MissingNode(*id))?;
                let mut merged = node.attrs.clone();
                merged.extend(attrs.iter().map(|(k, v)| (k.clone(), v.clone())));
                check_schema(format!("node {id}"), node_schema(node.kind), &merged, true)?;
                node.attrs = merged;
                changes.push(Change::NodeUpdated(node.clone()));
            }
            Edit::UpsertNode(node) => match self.nodes.get(&node.id) {
                Some(existing) if existing.kind != node.kind => {
                    return Err(WmError::KindChange {
                        id: node.id,
                        existing: existing.kind,
                        requested: node.kind,
                    })
                }
                Some(_) => {
                    return self.apply(
                        &Edit::UpdateNode {
                            id: node.id,
                            attrs: node.attrs.clone(),
                        },
                        changes,
                    )
                }
                None => return self.apply(&Edit::AddNode(node.clone()), changes),
            },
            Edit::RemoveNode { id, cascade } => {
                let node = self.nodes.remove(id).ok_or(WmError::MissingNode(*id))?;
                if *cascade {
                    let incident: Vec<EdgeKey> = self
                        .edges
                        .keys()
                        .filter(|k| k.from == *id || k.to == *id)
                        .copied()
                        .collect();
                    for key in incident {
                        if let Some(edge) = self.edges.remove(&key) {
                            changes.push(Change::EdgeRemoved(edge));
                        }
                    }
                }
                changes.push(Change::NodeRemoved {
                    id: node.id,
                    kind: node.kind,
                });
            }
            Edit::AddEdge(edge) => {
                let key = edge.key();
                if self.edges.contains_key(&key) {
                    return Err(WmError::DuplicateEdge(key));
                }
                check_schema(format!("edge {key:?}"), edge_schema(edge.label), &edge.attrs, false)?;
                self.edges.insert(key, edge.clone());
                changes.push(Change::EdgeAdded(edge.clone()));
            }
            Edit::UpdateEdge { key, attrs } => {
                let edge = self.edges.get_mut(key).ok_or(WmError::MissingEdge(*key))?;
                let mut merged = edge.attrs.clone();
                merged.extend(attrs.iter().map(|(k, v)| (k.clone(), v.clone())));
                check_schema(format!("edge {key:?}"), edge_schema(key.label), &merged, false)?;
                edge.attrs = merged;
                changes.push(Change::EdgeUpdated(edge.clone()));
            }
            Edit::UpsertEdge(edge) => {
                let key = edge.key();
                if self.edges.contains_key(&key) {
                    return self.apply(
                        &Edit::UpdateEdge {
                            key,
                            attrs: edge.attrs.clone(),
                        },
                        changes,
                    );
                }
                return self.apply(&Edit::AddEdge(edge.clone()), changes);
            }
            Edit::RemoveEdge(key) => {
                let edge = self.edges.remove(key).ok_or(WmError::MissingEdge(*key))?;
                changes.push(Change::EdgeRemoved(edge));
            }
        }
        Ok(())
    }

    /// Applies a whole transaction to a copy, validating referential integrity
    /// at the end. On error `self` is untouched.
    fn applied(&self, edits: &[Edit]) -> Result<(Graph, Vec<Change>), WmError> {
        let mut next = self.clone();
        let mut changes = Vec::with_capacity(edits.len());
        for edit in edits {
            next.apply(edit, &mut changes)?;
        }
        for key in next.edges.keys() {
            for endpoint in [key.from, key.to] {
                if !next.nodes.contains_key(&endpoint) {
                    return Err(WmError::DanglingEndpoint {
                        key: *key,
                        node: endpoint,
                    });
                }
            }
        }
        Ok((next, changes))
    }

    /// Rebuilds a graph by replaying committed transactions in order.
    pub fn replay<'a>(log: impl IntoIterator<Item = &'a LogEntry>) -> Result<Graph, WmError> {
        let mut graph = Graph::default();
        for entry in log {
            graph = graph.applied(&entry.edits)?.0;
        }
        Ok(graph)
    }
}

/// What a committed edit did, as seen by subscribers.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Change {
    NodeAdded(Node),
    NodeUpdated(Node),
    NodeRemoved { id: NodeId, kind: NodeKind },
    EdgeAdded(Edge),
    EdgeUpdated(Edge),
    EdgeRemoved(Edge),
}

impl Change {
    pub fn node_kind(&self) -> Option<NodeKind> {
        match self {
            Change::NodeAdded(n) | Change::NodeUpdated(n) => Some(n.kind),
            Change::NodeRemoved { kind, .. } => Some(*kind),
            _ => None,
        }
    }

    pub fn edge_label(&self) -> Option<EdgeLabel> {
        match self {
            Change::EdgeAdded(e) | Change::EdgeUpdated(e) | Change::EdgeRemoved(e) => Some(e.label),
            _ => None,
        }
    }

    /// The node written by this change, if any.
    pub fn written_node(&self) -> Option<&Node> {
        match self {
            Change::NodeAdded(n) | Change::NodeUpdated(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta {
    pub version: Version,
    pub changes: Vec<Change>,
}

/// Which changes a subscriber wants to see. An empty filter matches nothing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Filter {
    pub kinds: BTreeSet<NodeKind>,
    pub labels: BTreeSet<EdgeLabel>,
}

impl Filter {
    pub fn kinds(kinds: impl IntoIterator<Item = NodeKind>) -> Self {
        Self {
            kinds: kinds.into_iter().collect(),
            labels: BTreeSet::new(),
        }
    }

    pub fn labels(mut self, labels: impl IntoIterator<Item = EdgeLabel>) -> Self {
        self.labels.extend(labels);
        self
    }

    pub fn everything() -> Self {
        Self::kinds([
            NodeKind::Robot,
            NodeKind::Person,
            NodeKind::Object,
            NodeKind::Intention,
            NodeKind::Collision,
        ])
        .labels([
            EdgeLabel::Rt,
            EdgeLabel::HasIntention,
            EdgeLabel::Target,
            EdgeLabel::Collision,
            EdgeLabel::Approaching,
        ])
    }

    pub fn matches(&self, change: &Change) -> bool {
        change.node_kind().is_some_and(|k| self.kinds.contains(&k))
            || change.edge_label().is_some_and(|l| self.labels.contains(&l))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Notification {
    Delta(Delta),
    /// The buffer filled up; `missed` matching deltas were not queued. Delivery
    /// resumes with the next commit after this signal is consumed.
    Overflow { missed: u64 },
}

struct SubState {
    queue: VecDeque<Delta>,
    missed: u64,
}

struct SubShared {
    filter: Filter,
    capacity: usize,
    state: Mutex<SubState>,
    ready: Condvar,
}

impl SubShared {
    fn offer(&self, version: Version, changes: &[Change]) {
        let matching: Vec<Change> = changes.iter().filter(|c| self.filter.matches(c)).cloned().collect();
        if matching.is_empty() {
            return;
        }
        let mut state = lock(&self.state);
        if state.missed > 0 || state.queue.len() >= self.capacity {
            state.missed += 1;
        } else {
            state.queue.push_back(Delta {
                version,
                changes: matching,
            });
        }
        drop(state);
        self.ready.notify_all();
    }
}

/// Receiving end of a change subscription. Dropping it unsubscribes.
pub struct Subscription {
    shared: Arc<SubShared>,
}

impl Subscription {
    fn pop(state: &mut SubState) -> Option<Notification> {
        if let Some(delta) = state.queue.pop_front() {
            return Some(Notification::Delta(delta));
        }
        if state.missed > 0 {
            let missed = std::mem::take(&mut state.missed);
            return Some(Notification::Overflow { missed });
        }
        None
    }

    pub fn try_recv(&self) -> Option<Notification> {
        Self::pop(&mut lock(&self.shared.state))
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Notification> {
        let deadline = Instant::now() + timeout;
        let mut state = lock(&self.shared.state);
        loop {
            if let Some(n) = Self::pop(&mut state) {
                return Some(n);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            state = self
                .shared
                .ready
                .wait_timeout(state, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    pub fn drain(&self) -> Vec<Notification> {
        let mut state = lock(&self.shared.state);
        std::iter::from_fn(|| Self::pop(&mut state)).collect()
    }
}

/// A committed transaction.
#[derive(Debug, Clone)]
pub struct LogEntry {
    pub version: Version,
    pub committed_at: Instant,
    pub edits: Vec<Edit>,
}

/// Point-in-time view of the graph. Cheap to clone and share across threads.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub version: Version,
    graph: Arc<Graph>,
}

impl Snapshot {
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Two snapshots with identical content, regardless of version.
    pub fn same_content(&self, other: &Snapshot) -> bool {
        Arc::ptr_eq(&self.graph, &other.graph) || *self.graph == *other.graph
    }
}

impl std::ops::Deref for Snapshot {
    type Target = Graph;
    fn deref(&self) -> &Graph {
        &self.graph
    }
}

struct Inner {
    graph: Arc<Graph>,
    version: Version,
    log: Vec<LogEntry>,
    subscribers: Vec<Weak<SubShared>>,
}

pub struct WorkingMemory {
    inner: Mutex<Inner>,
    next_id: AtomicU64,
    created_at: Instant,
}

impl Default for WorkingMemory {
    fn default() -> Self {
        Self::new()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl WorkingMemory {
    pub fn new() -> Self {
        Self {
            inner: Mutex::new(Inner {
                graph: Arc::new(Graph::default()),
                version: 0,
                log: Vec::new(),
                subscribers: Vec::new(),
            }),
            next_id: AtomicU64::new(1),
            created_at: Instant::now(),
        }
    }

    /// Allocates an id that no node has used in this store.
    pub fn fresh_id(&self) -> NodeId {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }

    pub fn version(&self) -> Version {
        lock(&self.inner).version
    }

    /// Applies `edits` atomically. Subscribers are notified once, after the
    /// new version is visible.
    pub fn transact(&self, edits: Vec<Edit>) -> Result<Version, WmError> {
        let mut inner = lock(&self.inner);
        let (next, changes) = inner.graph.applied(&edits)?;
        for edit in &edits {
            if let Edit::AddNode(n) | Edit::UpsertNode(n) = edit {
                self.next_id.fetch_max(n.id + 1, Ordering::Relaxed);
            }
        }
        inner.version += 1;
        let version = inner.version;
        // Commit instants are strictly increasing even on coarse clocks.
        let mut committed_at = Instant::now();
        if let Some(last) = inner.log.last() {
            if committed_at <= last.committed_at {
                committed_at = last.committed_at + Duration::from_nanos(1);
            }
        }
        inner.graph = Arc::new(next);
        inner.log.push(LogEntry {
            version,
            committed_at,
            edits,
        });
        inner.subscribers.retain(|w| w.strong_count() > 0);
        let subscribers: Vec<Arc<SubShared>> = inner.subscribers.iter().filter_map(Weak::upgrade).collect();
        // Deliver under the store lock so every subscriber sees versions in order.
        for sub in subscribers {
            sub.offer(version, &changes);
        }
        Ok(version)
    }

    pub fn snapshot(&self) -> Snapshot {
        let inner = lock(&self.inner);
        Snapshot {
            version: inner.version,
            graph: Arc::clone(&inner.graph),
        }
    }

    pub fn subscribe(&self, filter: Filter) -> Subscription {
        self.subscribe_with_capacity(filter, DEFAULT_SUBSCRIPTION_CAPACITY)
    }

    pub fn subscribe_with_capacity(&self, filter: Filter, capacity: usize) -> Subscription {
        let shared = Arc::new(SubShared {
            filter,
            capacity: capacity.max(1),
            state: Mutex::new(SubState {
                queue: VecDeque::new(),
                missed: 0,
            }),
            ready: Condvar::new(),
        });
        lock(&self.inner).subscribers.push(Arc::downgrade(&shared));
        Subscription { shared }
    }

    /// Copy of the transaction log.
    pub fn log(&self) -> Vec<LogEntry> {
        lock(&self.inner).log.clone()
    }

    /// Instant at which `version` was committed.
    pub fn commit_time(&self, version: Version) -> Option<Instant> {
        let inner = lock(&self.inner);
        let idx = version.checked_sub(1)? as usize;
        inner.log.get(idx).map(|e| e.committed_at)
    }

    /// Seconds elapsed between store creation and the commit of `version`.
    pub fn commit_offset(&self, version: Version) -> Option<f64> {
        self.commit_time(version)
            .map(|t| t.duration_since(self.created_at).as_secs_f64())
    }
}

pub fn query_people(snapshot: &Snapshot) -> Vec<&Node> {
    snapshot.nodes_of(NodeKind::Person).collect()
}

pub fn query_objects(snapshot: &Snapshot) -> Vec<&Node> {
    snapshot.nodes_of(NodeKind::Object).collect()
}

pub fn query_intentions(snapshot: &Snapshot) -> Vec<&Node> {
    snapshot.nodes_of(NodeKind::Intention).collect()
}

/// Structured text dump of a graph, used by traces and the live UI.
pub fn dump(snapshot: &Snapshot) -> serde_json::Value {
    serde_json::json!({
        "version": snapshot.version,
        "nodes": snapshot.graph().nodes().collect::<Vec<_>>(),
        "edges": snapshot.graph().edges().collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn body_attrs(class: &str, track: i64) -> Attrs {
        attrs([
            ("class", class.into()),
            ("track_id", track.into()),
            ("shape", "circle".into()),
            ("extents", vec![0.3].into()),
            ("height", 1.7.into()),
        ])
    }

    fn robot_node(id: NodeId) -> Node {
        Node::new(
            id,
            NodeKind::Robot,
            attrs([
                ("name", "robot".into()),
                ("track_id", 1i64.into()),
                ("x", 0.0.into()),
                ("y", 0.0.into()),
                ("theta", 0.0.into()),
                ("radius", 0.35.into()),
                ("height", 1.2.into()),
                ("speed_limit", 1.0.into()),
                ("accel_limit", 1.0.into()),
            ]),
        )
    }

    fn collision_node(id: NodeId) -> Node {
        Node::new(
            id,
            NodeKind::Collision,
            attrs([("time", 3.1.into()), ("xy", vec![0.0, 1.55].into())]),
        )
    }

    #[test]
    fn person_and_rt_edge_commit_together() {
        let wm = WorkingMemory::new();
        let v = wm
            .transact(vec![
                Edit::AddNode(robot_node(1)),
                Edit::AddNode(Node::new(2, NodeKind::Person, body_attrs("person", 2))),
                Edit::AddEdge(Edge::rt(1, 2, &Pose2::new(2.0, 0.0, 0.0))),
            ])
            .unwrap();
        let snap = wm.snapshot();
        assert_eq!(snap.version, v);
        assert!(snap.node(2).is_some());
        let rt = snap.edge(1, 2, EdgeLabel::Rt).unwrap();
        assert_eq!(attrs_pose(&rt.attrs), Some(Pose2::new(2.0, 0.0, 0.0)));
    }

    #[test]
    fn dangling_edge_rejects_whole_transaction() {
        let wm = WorkingMemory::new();
        let err = wm
            .transact(vec![
                Edit::AddNode(robot_node(1)),
                Edit::AddEdge(Edge::rt(1, 99, &Pose2::IDENTITY)),
            ])
            .unwrap_err();
        assert!(matches!(err, WmError::DanglingEndpoint { node: 99, .. }));
        assert_eq!(wm.version(), 0);
        assert_eq!(wm.snapshot().node_count(), 0);
    }

    #[test]
    fn duplicate_edge_is_rejected() {
        let wm = WorkingMemory::new();
        wm.transact(vec![
            Edit::AddNode(robot_node(1)),
            Edit::AddNode(Node::new(2, NodeKind::Object, body_attrs("ball", 2))),
            Edit::AddEdge(Edge::rt(1, 2, &Pose2::IDENTITY)),
        ])
        .unwrap();
        let err = wm.transact(vec![Edit::AddEdge(Edge::rt(1, 2, &Pose2::IDENTITY))]).unwrap_err();
        assert!(matches!(err, WmError::DuplicateEdge(_)));
    }

    #[test]
    fn removing_node_with_edges_requires_cascade() {
        let wm = WorkingMemory::new();
        wm.transact(vec![
            Edit::AddNode(robot_node(1)),
            Edit::AddNode(Node::new(2, NodeKind::Object, body_attrs("ball", 2))),
            Edit::AddEdge(Edge::rt(1, 2, &Pose2::IDENTITY)),
        ])
        .unwrap();
        assert!(wm.transact(vec![Edit::RemoveNode { id: 2, cascade: false }]).is_err());
        wm.transact(vec![Edit::RemoveNode { id: 2, cascade: true }]).unwrap();
        let snap = wm.snapshot();
        assert_eq!(snap.edge_count(), 0);
        assert!(snap.dangling_edges().is_empty());
    }

    #[test]
    fn versions_are_sequential() {
        let wm = WorkingMemory::new();
        let a = wm.transact(vec![Edit::AddNode(robot_node(1))]).unwrap();
        let b = wm.transact(vec![Edit::AddNode(collision_node(2))]).unwrap();
        assert_eq!(b, a + 1);
        assert!(wm.commit_time(b).unwrap() > wm.commit_time(a).unwrap());
    }

    #[test]
    fn schema_rejects_bad_attributes() {
        let wm = WorkingMemory::new();
        let mut bad = body_attrs("ball", 3);
        bad.insert("height".into(), AttrValue::Text("tall".into()));
        assert!(matches!(
            wm.transact(vec![Edit::AddNode(Node::new(3, NodeKind::Object, bad))]),
            Err(WmError::Schema { .. })
        ));
        let mut unknown = body_attrs("ball", 3);
        unknown.insert("colour".into(), "red".into());
        assert!(wm.transact(vec![Edit::AddNode(Node::new(3, NodeKind::Object, unknown))]).is_err());
        // RT edges must carry a pose.
        wm.transact(vec![
            Edit::AddNode(robot_node(1)),
            Edit::AddNode(Node::new(2, NodeKind::Object, body_attrs("ball", 2))),
        ])
        .unwrap();
        let no_pose = Edge::new(1, 2, EdgeLabel::Rt, attrs([("x", 1.0.into())]));
        assert!(wm.transact(vec![Edit::AddEdge(no_pose)]).is_err());
        let kind_change = Node::new(2, NodeKind::Person, body_attrs("ball", 2));
        assert!(matches!(
            wm.transact(vec![Edit::UpsertNode(kind_change)]),
            Err(WmError::KindChange { .. })
        ));
    }

    #[test]
    fn snapshot_is_isolated_from_later_edits() {
        let wm = WorkingMemory::new();
        wm.transact(vec![Edit::AddNode(collision_node(5))]).unwrap();
        let before = wm.snapshot();
        let again = wm.snapshot();
        assert!(before.same_content(&again));
        wm.transact(vec![Edit::RemoveNode { id: 5, cascade: false }]).unwrap();
        assert!(before.node(5).is_some());
        assert!(wm.snapshot().node(5).is_none());
    }

    #[test]
    fn collision_filter_sees_collision_nodes_only() {
        let wm = WorkingMemory::new();
        let sub = wm.subscribe(Filter::kinds([NodeKind::Collision]));
        wm.transact(vec![
            Edit::AddNode(robot_node(1)),
            Edit::AddNode(Node::new(2, NodeKind::Object, body_attrs("ball", 2))),
            Edit::AddEdge(Edge::rt(1, 2, &Pose2::IDENTITY)),
        ])
        .unwrap();
        wm.transact(vec![Edit::UpdateEdge {
            key: EdgeKey::new(1, 2, EdgeLabel::Rt),
            attrs: pose_attrs(&Pose2::new(1.0, 0.0, 0.0)),
        }])
        .unwrap();
        assert!(sub.try_recv().is_none());
        let v = wm.transact(vec![Edit::AddNode(collision_node(3))]).unwrap();
        match sub.try_recv() {
            Some(Notification::Delta(d)) => {
                assert_eq!(d.version, v);
                assert_eq!(d.changes.len(), 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(sub.try_recv().is_none());
    }

    #[test]
    fn overflow_is_signalled_not_silent() {
        let wm = WorkingMemory::new();
        let sub = wm.subscribe_with_capacity(Filter::kinds([NodeKind::Collision]), 2);
        for id in 1..=5 {
            wm.transact(vec![Edit::AddNode(collision_node(id))]).unwrap();
        }
        let got = sub.drain();
        assert_eq!(got.len(), 3);
        assert!(matches!(got[0], Notification::Delta(Delta { version: 1, .. })));
        assert!(matches!(got[1], Notification::Delta(Delta { version: 2, .. })));
        assert_eq!(got[2], Notification::Overflow { missed: 3 });
        wm.transact(vec![Edit::AddNode(collision_node(6))]).unwrap();
        assert!(matches!(sub.try_recv(), Some(Notification::Delta(Delta { version: 6, .. }))));
    }

    #[test]
    fn subscriber_sees_strictly_increasing_versions() {
        let wm = WorkingMemory::new();
        let sub = wm.subscribe_with_capacity(Filter::everything(), 2000);
        for id in 1..=1000 {
            wm.transact(vec![Edit::AddNode(collision_node(id))]).unwrap();
        }
        let versions: Vec<Version> = sub
            .drain()
            .into_iter()
            .map(|n| match n {
                Notification::Delta(d) => d.version,
                Notification::Overflow { .. } => panic!("unexpected overflow"),
            })
            .collect();
        assert_eq!(versions.len(), 1000);
        assert!(versions.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn queries_by_kind() {
        let wm = WorkingMemory::new();
        let empty = wm.snapshot();
        assert!(query_people(&empty).is_empty() && query_objects(&empty).is_empty());
        wm.transact(vec![
            Edit::AddNode(Node::new(2, NodeKind::Person, body_attrs("person", 2))),
            Edit::AddNode(Node::new(3, NodeKind::Object, body_attrs("ball", 3))),
            Edit::AddNode(Node::new(4, NodeKind::Object, body_attrs("couch", 4))),
        ])
        .unwrap();
        let snap = wm.snapshot();
        assert_eq!(query_people(&snap).len(), 1);
        assert_eq!(query_objects(&snap).len(), 2);
        assert!(query_intentions(&snap).is_empty());
    }

    #[test]
    fn log_replay_reproduces_graph() {
        let wm = WorkingMemory::new();
        wm.transact(vec![Edit::AddNode(robot_node(1))]).unwrap();
        wm.transact(vec![
            Edit::UpsertNode(Node::new(2, NodeKind::Object, body_attrs("ball", 2))),
            Edit::UpsertEdge(Edge::rt(1, 2, &Pose2::new(1.0, 2.0, 0.3))),
        ])
        .unwrap();
        wm.transact(vec![Edit::UpsertEdge(Edge::rt(1, 2, &Pose2::new(1.5, 2.0, 0.3)))])
            .unwrap();
        let _ = wm.transact(vec![Edit::RemoveNode { id: 7, cascade: true }]);
        let replayed = Graph::replay(&wm.log()).unwrap();
        assert_eq!(&replayed, wm.snapshot().graph());
        assert_eq!(wm.fresh_id(), 3);
    }
}
