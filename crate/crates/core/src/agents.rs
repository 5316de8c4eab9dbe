//! The two agents. The guesser attributes intentions to every person and
//! marks the risky ones; the selector looks for a robot intention that
//! cancels a risk and commits it. They only talk through working memory.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ActionKind, Config};
use crate::engine::{CoSimOutcome, Engine, EngineError, IntentionRecord, Scene, SimOutcome};
use crate::geometry::Vec2;
use crate::walker::PersonModel;
use crate::wm::{
    attrs, AttrValue, Attrs, Change, Edge, EdgeLabel, Edit, Filter, Node, NodeId, NodeKind, Notification, Snapshot,
    Version, WmError, WorkingMemory,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Wm(#[from] WmError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Identity of a person intention across sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct IntentionKey {
    pub person: NodeId,
    pub target: NodeId,
    pub action: ActionKind,
    pub gaze_index: usize,
}

/// One intention as committed by a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct Guess {
    pub node: NodeId,
    pub record: IntentionRecord,
    /// `None` when the simulation failed and the risk is unknown.
    pub outcome: Option<SimOutcome>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Sweep {
    /// `None` when there was nothing to commit.
    pub version: Option<Version>,
    pub guesses: Vec<Guess>,
    pub retired: Vec<NodeId>,
}

impl Sweep {
    pub fn risky(&self) -> impl Iterator<Item = &Guess> {
        self.guesses.iter().filter(|g| g.record.c == Some(true))
    }
}

fn action_of(text: &str) -> Option<ActionKind> {
    match text {
        "move_to" => Some(ActionKind::MoveTo),
        _ => None,
    }
}

/// Subject of an intention node: the source of its `has_intention` edge.
pub fn intention_subject(snapshot: &Snapshot, node: NodeId) -> Option<NodeId> {
    snapshot.edges_to(node, EdgeLabel::HasIntention).map(|e| e.from).next()
}

pub fn intention_target(snapshot: &Snapshot, node: NodeId) -> Option<NodeId> {
    snapshot.edges_from(node, EdgeLabel::Target).map(|e| e.to).next()
}

/// Rebuilds the record of an intention node.
pub fn read_intention(snapshot: &Snapshot, node: &Node) -> Option<IntentionRecord> {
    let xy = node.real_vec("collision_xy").and_then(|v| match v {
        [x, y] => Some(Vec2::new(*x, *y)),
        _ => None,
    });
    Some(IntentionRecord {
        subject: intention_subject(snapshot, node.id)?,
        target: intention_target(snapshot, node.id)?,
        action: action_of(node.text("action")?)?,
        gaze: node.real("gaze"),
        gaze_index: node.int("gaze_index").map(|i| i as usize),
        c: node.boolean("c"),
        collision_time: node.real("collision_time"),
        collision_xy: xy,
    })
}

fn is_person_intention(snapshot: &Snapshot, node: NodeId) -> bool {
    intention_subject(snapshot, node)
        .and_then(|s| snapshot.node(s))
        .is_none_or(|s| s.kind == NodeKind::Person)
}

fn flat(points: &[Vec2]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn intention_attrs(record: &IntentionRecord, outcome: Option<&SimOutcome>, error: Option<&str>) -> Attrs {
    let mut a = attrs([("action", record.action.as_str().into())]);
    if let Some(g) = record.gaze {
        a.insert("gaze".into(), g.into());
    }
    if let Some(i) = record.gaze_index {
        a.insert("gaze_index".into(), AttrValue::Int(i as i64));
    }
    if let Some(c) = record.c {
        a.insert("c".into(), c.into());
    }
    if let Some(t) = record.collision_time {
        a.insert("collision_time".into(), t.into());
    }
    if let Some(p) = record.collision_xy {
        a.insert("collision_xy".into(), vec![p.x, p.y].into());
    }
    if let Some(o) = outcome {
        a.insert("reachable".into(), o.reachable().into());
        a.insert("replanned".into(), o.replanned.into());
        a.insert("goal".into(), vec![o.goal.x, o.goal.y].into());
        if let Ok(path) = &o.planned_path {
            a.insert("path".into(), flat(&path.points()).into());
        }
    }
    if let Some(e) = error {
        a.insert("error".into(), e.into());
    }
    a
}

/// Edits that rewrite intention `node` from scratch, replacing any previous
/// version together with its collision annotation.
fn write_intention(
    snapshot: &Snapshot,
    wm: &WorkingMemory,
    node: NodeId,
    record: &IntentionRecord,
    attrs: Attrs,
    edits: &mut Vec<Edit>,
) {
    if snapshot.node(node).is_some() {
        remove_intention(snapshot, node, edits);
    }
    edits.push(Edit::AddNode(Node::new(node, NodeKind::Intention, attrs)));
    edits.push(Edit::AddEdge(Edge::new(record.subject, node, EdgeLabel::HasIntention, Attrs::new())));
    edits.push(Edit::AddEdge(Edge::new(node, record.target, EdgeLabel::Target, Attrs::new())));
    if let (Some(true), Some(t), Some(p)) = (record.c, record.collision_time, record.collision_xy) {
        let id = wm.fresh_id();
        let a = attrs_collision(t, p);
        edits.push(Edit::AddNode(Node::new(id, NodeKind::Collision, a)));
        edits.push(Edit::AddEdge(Edge::new(node, id, EdgeLabel::Collision, Attrs::new())));
    }
}

fn attrs_collision(time: f64, xy: Vec2) -> Attrs {
    attrs([("time", time.into()), ("xy", vec![xy.x, xy.y].into())])
}

fn remove_intention(snapshot: &Snapshot, node: NodeId, edits: &mut Vec<Edit>) {
    for e in snapshot.edges_from(node, EdgeLabel::Collision) {
        edits.push(Edit::RemoveNode {
            id: e.to,
            cascade: true,
        });
    }
    edits.push(Edit::RemoveNode { id: node, cascade: true });
}

/// Existing person intentions by key.
fn person_intentions(snapshot: &Snapshot) -> BTreeMap<IntentionKey, NodeId> {
    snapshot
        .nodes_of(NodeKind::Intention)
        .filter(|n| is_person_intention(snapshot, n.id))
        .filter_map(|n| {
            let r = read_intention(snapshot, n)?;
            Some((
                IntentionKey {
                    person: r.subject,
                    target: r.target,
                    action: r.action,
                    gaze_index: r.gaze_index?,
                },
                n.id,
            ))
        })
        .collect()
}

/// Candidate targets of a person: the objects it could see at the most
/// permissive sampled gaze.
pub fn candidate_targets(scene: &Scene, cfg: &Config, person: NodeId) -> Result<Vec<NodeId>, EngineError> {
    let p = scene.person(person).ok_or(EngineError::MissingNode(person))?;
    let radius = p.shape.circle_radius().unwrap_or(p.radius());
    let model = PersonModel::from_config(cfg, cfg.atm.gaze_max_rad(), radius, p.shape.height, scene.bounds)?;
    Ok(scene
        .objects
        .iter()
        .filter(|o| model.sees(&p.pose, &o.body()))
        .map(|o| o.node)
        .collect())
}

/// People considered by a sweep: nearest to the robot first, at most
/// `max_people`.
pub fn people_in_range(scene: &Scene, cfg: &Config) -> Vec<NodeId> {
    let robot = scene.robot.pose.position();
    let mut people: Vec<(f64, NodeId)> = scene
        .people
        .iter()
        .map(|p| (robot.distance(p.pose.position()), p.node))
        .collect();
    people.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    people.into_iter().take(cfg.atm.max_people).map(|(_, n)| n).collect()
}

/// Intention guessing and enacting. Every (person, visible target, action,
/// gaze sample) is simulated and committed with its risk flag in a single
/// transaction; intentions no longer generated are retired.
pub fn guess_intentions(wm: &WorkingMemory, cfg: &Config, engine: &Engine) -> Result<Sweep, AgentError> {
    let snapshot = wm.snapshot();
    let existing = person_intentions(&snapshot);
    let Ok(scene) = Scene::from_snapshot(&snapshot) else {
        return Ok(Sweep::default());
    };
    let gazes = cfg.atm.gaze_samples_rad();
    let mut records = Vec::new();
    for person in people_in_range(&scene, cfg) {
        for target in candidate_targets(&scene, cfg, person)? {
            for &action in &cfg.atm.actions {
                for (l, &gaze) in gazes.iter().enumerate() {
                    records.push(IntentionRecord::person(person, target, action, gaze, l));
                }
            }
        }
    }
    if records.is_empty() && existing.is_empty() {
        return Ok(Sweep::default());
    }
    let outcomes: Vec<Result<SimOutcome, EngineError>> = records
        .par_iter()
        .map(|r| engine.simulate_intention(&scene, r, None))
        .collect();

    let mut edits = Vec::new();
    let mut guesses = Vec::with_capacity(records.len());
    let mut kept = BTreeSet::new();
    for (record, outcome) in records.into_iter().zip(outcomes) {
        let key = IntentionKey {
            person: record.subject,
            target: record.target,
            action: record.action,
            gaze_index: record.gaze_index.unwrap_or(0),
        };
        let node = existing.get(&key).copied().unwrap_or_else(|| wm.fresh_id());
        kept.insert(node);
        let (record, outcome, error) = match outcome {
            Ok(o) => (record.resolved(&o), Some(o), None),
            // The risk stays unknown; the sweep carries on.
            Err(e) => (record, None, Some(e.to_string())),
        };
        let a = intention_attrs(&record, outcome.as_ref(), error.as_deref());
        write_intention(&snapshot, wm, node, &record, a, &mut edits);
        guesses.push(Guess {
            node,
            record,
            outcome,
            error,
        });
    }
    let retired: Vec<NodeId> = existing.values().copied().filter(|n| !kept.contains(n)).collect();
    for &node in &retired {
        remove_intention(&snapshot, node, &mut edits);
    }
    let version = wm.transact(edits)?;
    Ok(Sweep {
        version: Some(version),
        guesses,
        retired,
    })
}

/// A committed robot intention and how it was found.
#[derive(Debug, Clone, Serialize)]
pub struct Selection {
    pub node: NodeId,
    pub version: Version,
    /// Snapshot the decision was made on.
    pub snapshot_version: Version,
    pub record: IntentionRecord,
    /// The person intention it cancels.
    pub cancels: NodeId,
    pub risky: IntentionRecord,
    pub outcome: CoSimOutcome,
    /// Candidates tried before this one succeeded, this one included.
    pub tried: usize,
}

/// Risky person intentions not yet cancelled, soonest collision first.
pub fn open_risks(snapshot: &Snapshot) -> Vec<(NodeId, IntentionRecord)> {
    let cancelled: BTreeSet<NodeId> = snapshot
        .nodes_of(NodeKind::Intention)
        .filter_map(|n| n.int("cancels"))
        .map(|i| i as NodeId)
        .collect();
    let mut risky: Vec<(NodeId, IntentionRecord)> = snapshot
        .nodes_of(NodeKind::Intention)
        .filter(|n| n.boolean("c") == Some(true) && !cancelled.contains(&n.id))
        .filter(|n| is_person_intention(snapshot, n.id))
        .filter_map(|n| Some((n.id, read_intention(snapshot, n)?)))
        .collect();
    risky.sort_by(|a, b| {
        let ta = a.1.collision_time.unwrap_or(f64::INFINITY);
        let tb = b.1.collision_time.unwrap_or(f64::INFINITY);
        ta.total_cmp(&tb).then(a.0.cmp(&b.0))
    });
    risky
}

/// Candidate robot targets for a risk: objects by distance to the predicted
/// collision point, nearest first.
pub fn ordered_objects(scene: &Scene, risk: &IntentionRecord) -> Vec<NodeId> {
    let anchor = risk
        .collision_xy
        .or_else(|| scene.person(risk.subject).map(|p| p.pose.position()))
        .unwrap_or(Vec2::ZERO);
    let mut objects: Vec<(f64, NodeId)> = scene
        .objects
        .iter()
        .map(|o| (o.shape.distance_to_point(&o.pose, anchor), o.node))
        .collect();
    objects.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    objects.into_iter().map(|(_, n)| n).collect()
}

/// The search order the selector walks, without running any simulation.
pub fn candidates(scene: &Scene, cfg: &Config, risks: &[(NodeId, IntentionRecord)]) -> Vec<(NodeId, IntentionRecord)> {
    let mut out = Vec::new();
    for (risk_node, risk) in risks {
        for &action in &cfg.atm.actions {
            for object in ordered_objects(scene, risk) {
                out.push((*risk_node, IntentionRecord::robot(scene.robot.node, object, action)));
            }
        }
    }
    out
}

/// Action selection: walks the candidates in order and commits the first
/// robot intention whose co-simulation clears the risk.
pub fn select_action(wm: &WorkingMemory, cfg: &Config, engine: &Engine) -> Result<Option<Selection>, AgentError> {
    let snapshot = wm.snapshot();
    let risks = open_risks(&snapshot);
    if risks.is_empty() {
        return Ok(None);
    }
    let scene = Scene::from_snapshot(&snapshot)?;
    let by_node: BTreeMap<NodeId, IntentionRecord> = risks.iter().cloned().collect();
    for (tried, (risk_node, candidate)) in candidates(&scene, cfg, &risks).into_iter().enumerate() {
        let risk = &by_node[&risk_node];
        // A failed simulation is not a solution.
        let Ok(outcome) = engine.co_simulate(&scene, &candidate, risk) else {
            continue;
        };
        if outcome.c {
            continue;
        }
        let record = IntentionRecord {
            c: Some(false),
            ..candidate
        };
        let node = wm.fresh_id();
        let mut a = attrs([
            ("action", record.action.as_str().into()),
            ("c", false.into()),
            ("cancels", AttrValue::Int(risk_node as i64)),
            ("reachable", true.into()),
            ("goal", vec![outcome.robot_goal.x, outcome.robot_goal.y].into()),
        ]);
        if let Ok(path) = &outcome.robot_plan {
            a.insert("path".into(), flat(&path.points()).into());
        }
        let mut edits = Vec::new();
        write_intention(&snapshot, wm, node, &record, a, &mut edits);
        let version = wm.transact(edits)?;
        return Ok(Some(Selection {
            node,
            version,
            snapshot_version: snapshot.version,
            record,
            cancels: risk_node,
            risky: risk.clone(),
            outcome,
            tried: tried + 1,
        }));
    }
    Ok(None)
}

/// Time from detecting a risk to committing an action against it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reaction {
    pub intention: NodeId,
    /// First commit carrying the intention with `c = true`.
    pub detected: Version,
    pub action: Option<Version>,
    pub seconds: Option<f64>,
}

/// Reaction times of every intention ever committed as risky, measured
/// between commit instants in the store's log.
pub fn reaction_timer(wm: &WorkingMemory) -> Vec<Reaction> {
    let log = wm.log();
    let mut detected: BTreeMap<NodeId, Version> = BTreeMap::new();
    let mut cancelled: BTreeMap<NodeId, Version> = BTreeMap::new();
    for entry in &log {
        for edit in &entry.edits {
            let (Edit::AddNode(n) | Edit::UpsertNode(n)) = edit else {
                continue;
            };
            if n.kind != NodeKind::Intention {
                continue;
            }
            if n.boolean("c") == Some(true) {
                detected.entry(n.id).or_insert(entry.version);
            }
            if let Some(c) = n.int("cancels") {
                cancelled.entry(c as NodeId).or_insert(entry.version);
            }
        }
    }
    detected
        .into_iter()
        .map(|(intention, d)| {
            let action = cancelled.get(&intention).copied();
            let seconds = action.and_then(|a| {
                let (t0, t1) = (wm.commit_time(d)?, wm.commit_time(a)?);
                Some(t1.duration_since(t0).as_secs_f64())
            });
            Reaction {
                intention,
                detected: d,
                action,
                seconds,
            }
        })
        .collect()
}

/// Whether a delta carries a risky intention.
pub fn carries_risk(changes: &[Change]) -> bool {
    changes.iter().any(|c| {
        c.written_node()
            .is_some_and(|n| n.kind == NodeKind::Intention && n.boolean("c") == Some(true) && n.int("cancels").is_none())
    })
}

/// Both agents on their own threads, sharing only the working memory. The
/// guesser sweeps periodically; the selector wakes on risky deltas and runs
/// one search at a time.
pub struct AgentRuntime {
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    pub selections: Arc<Mutex<Vec<Selection>>>,
    pub errors: Arc<Mutex<Vec<String>>>,
}

impl AgentRuntime {
    pub fn spawn(wm: Arc<WorkingMemory>, cfg: Arc<Config>) -> Self {
        let stop = Arc::new(AtomicBool::new(false));
        let selections = Arc::new(Mutex::new(Vec::new()));
        let errors = Arc::new(Mutex::new(Vec::new()));
        let period = Duration::from_secs_f64(cfg.atm.period_s);

        let guesser = {
            let (wm, cfg, stop, errors) = (wm.clone(), cfg.clone(), stop.clone(), errors.clone());
            std::thread::spawn(move || {
                let engine = Engine::new(&cfg);
                while !stop.load(Ordering::Relaxed) {
                    let started = std::time::Instant::now();
                    if let Err(e) = guess_intentions(&wm, &cfg, &engine) {
                        errors.lock().unwrap_or_else(|p| p.into_inner()).push(e.to_string());
                    }
                    if let Some(rest) = period.checked_sub(started.elapsed()) {
                        std::thread::sleep(rest);
                    }
                }
            })
        };

        let selector = {
            let (stop, selections, errors) = (stop.clone(), selections.clone(), errors.clone());
            let sub = wm.subscribe(Filter::kinds([NodeKind::Intention]));
            std::thread::spawn(move || {
                let engine = Engine::new(&cfg);
                while !stop.load(Ordering::Relaxed) {
                    let due = match sub.recv_timeout(Duration::from_millis(50)) {
                        Some(Notification::Delta(d)) => carries_risk(&d.changes),
                        // Missed deltas might have carried a risk.
                        Some(Notification::Overflow { .. }) => true,
                        None => false,
                    };
                    // Deltas queued during a search are folded into the next one.
                    let due = due | sub.drain().iter().any(|n| match n {
                        Notification::Delta(d) => carries_risk(&d.changes),
                        Notification::Overflow { .. } => true,
                    });
                    if !due {
                        continue;
                    }
                    match select_action(&wm, &cfg, &engine) {
                        Ok(Some(s)) => selections.lock().unwrap_or_else(|p| p.into_inner()).push(s),
                        Ok(None) => {}
                        Err(e) => errors.lock().unwrap_or_else(|p| p.into_inner()).push(e.to_string()),
                    }
                }
            })
        };

        Self {
            stop,
            threads: vec![guesser, selector],
            selections,
            errors,
        }
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for AgentRuntime {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::{observe, NoiseModel, Publisher, RobotState};
    use crate::wm::query_intentions;
    use crate::world::{Scenario, WorldState};

    const NOMINAL: &str = include_str!("../../../scenarios/nominal.toml");

    fn published(sc: &Scenario) -> WorkingMemory {
        let w = WorldState::new(sc, 0.05);
        let wm = WorkingMemory::new();
        let dets = observe(&w, "robot", 10.0, &NoiseModel::none());
        Publisher::new(1.0)
            .publish(0.0, &RobotState::from_world(&w), &dets, &wm)
            .unwrap();
        wm
    }

    fn class_of(snapshot: &Snapshot, node: NodeId) -> String {
        snapshot.node(node).unwrap().text("class").unwrap().to_string()
    }

    #[test]
    fn nominal_sweep_flags_the_low_gazes() {
        let wm = published(&Scenario::from_toml(NOMINAL).unwrap());
        let cfg = Config::default();
        let sweep = guess_intentions(&wm, &cfg, &Engine::new(&cfg)).unwrap();
        let s = wm.snapshot();
        let targets: BTreeSet<String> = sweep.guesses.iter().map(|g| class_of(&s, g.record.target)).collect();
        assert!(targets.contains("couch") && targets.contains("door"), "{targets:?}");
        // One record per (target, gaze sample).
        assert_eq!(sweep.guesses.len(), targets.len() * 3);
        let couch: Vec<bool> = sweep
            .guesses
            .iter()
            .filter(|g| class_of(&s, g.record.target) == "couch")
            .map(|g| g.record.c.unwrap())
            .collect();
        // 10° and 30° are below the 35.9° the ball needs; 50° is above.
        assert_eq!(couch, [true, true, false]);
        assert_eq!(query_intentions(&s).len(), sweep.guesses.len());
        assert!(s.dangling_edges().is_empty());
    }

    #[test]
    fn sweeps_upsert_instead_of_duplicating() {
        let wm = published(&Scenario::from_toml(NOMINAL).unwrap());
        let cfg = Config::default();
        let engine = Engine::new(&cfg);
        let first = guess_intentions(&wm, &cfg, &engine).unwrap();
        let count = wm.snapshot().node_count();
        let second = guess_intentions(&wm, &cfg, &engine).unwrap();
        assert_eq!(wm.snapshot().node_count(), count);
        let ids = |s: &Sweep| s.guesses.iter().map(|g| g.node).collect::<Vec<_>>();
        assert_eq!(ids(&first), ids(&second));
        assert!(second.retired.is_empty());
    }

    #[test]
    fn empty_scene_commits_nothing() {
        let wm = WorkingMemory::new();
        let cfg = Config::default();
        let sweep = guess_intentions(&wm, &cfg, &Engine::new(&cfg)).unwrap();
        assert!(sweep.version.is_none());
        assert_eq!(wm.version(), 0);
        assert!(select_action(&wm, &cfg, &Engine::new(&cfg)).unwrap().is_none());
    }

    #[test]
    fn selector_sends_the_robot_to_the_ball() {
        let wm = published(&Scenario::from_toml(NOMINAL).unwrap());
        let cfg = Config::default();
        let engine = Engine::new(&cfg);
        guess_intentions(&wm, &cfg, &engine).unwrap();
        let sel = select_action(&wm, &cfg, &engine).unwrap().unwrap();
        let s = wm.snapshot();
        assert_eq!(class_of(&s, sel.record.target), "ball");
        assert!(!sel.outcome.c);
        // The committed intention hangs off the robot and names the risk it cancels.
        let node = s.node(sel.node).unwrap();
        assert_eq!(node.int("cancels"), Some(sel.cancels as i64));
        assert_eq!(intention_subject(&s, sel.node), Some(s.nodes_of(NodeKind::Robot).next().unwrap().id));
        // Cancelled risks are not searched again.
        let again = select_action(&wm, &cfg, &engine).unwrap();
        assert!(again.is_none_or(|a| a.cancels != sel.cancels));
    }

    #[test]
    fn reaction_is_measured_between_commits() {
        let wm = published(&Scenario::from_toml(NOMINAL).unwrap());
        let cfg = Config::default();
        let engine = Engine::new(&cfg);
        guess_intentions(&wm, &cfg, &engine).unwrap();
        let sel = select_action(&wm, &cfg, &engine).unwrap().unwrap();
        let reactions = reaction_timer(&wm);
        let r = reactions.iter().find(|r| r.intention == sel.cancels).unwrap();
        assert_eq!(r.action, Some(sel.version));
        assert!(r.seconds.unwrap() > 0.0);
        assert!(reactions.iter().filter(|r| r.intention != sel.cancels).all(|r| r.seconds.is_none()));
    }

    #[test]
    fn runtime_reacts_to_a_risk() {
        let wm = Arc::new(published(&Scenario::from_toml(NOMINAL).unwrap()));
        let cfg = Arc::new(Config::default());
        let rt = AgentRuntime::spawn(wm.clone(), cfg);
        let deadline = std::time::Instant::now() + Duration::from_secs(20);
        while rt.selections.lock().unwrap().is_empty() && std::time::Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(20));
        }
        let found = rt.selections.lock().unwrap().len();
        rt.stop();
        assert!(found >= 1);
    }
}
