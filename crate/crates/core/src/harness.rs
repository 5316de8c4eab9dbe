//! Batch experiments: seeded episodes, ground-truth labels, the confusion
//! matrix metrics and result files.
//!
//! Everything written to `episodes.csv` and `metrics.json` is a pure function
//! of the scenario, config and seed. Wall-clock reaction times go to
//! `timings.csv` and `timings.json`, which naturally vary between runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agents::{guess_intentions, reaction_timer, select_action, AgentError, Selection};
use crate::config::Config;
use crate::engine::{robot_follower, robot_yields, Engine, EngineError, IntentionRecord, Scene, TraceLog};
use crate::geometry::{GeometryError, Pose2, Shape, Vec2};
use crate::navigation::{Follower, NavError};
use crate::perception::{observe, splitmix64, Detection, NoiseModel, Publisher, RobotState};
use crate::walker::{first_person_collision, truth_replay, ScriptedPerson};
use crate::wm::{dump, WmError, WorkingMemory};
use crate::world::{sample_scenario, Scenario, ScenarioError, WorldError, WorldState};

/// Stride between episode seeds, the 64-bit golden ratio.
pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of episode `index` in a batch.
pub fn episode_seed(master_seed: u64, index: usize) -> u64 {
    splitmix64(master_seed.wrapping_add((index as u64 + 1).wrapping_mul(SEED_STRIDE)))
}

/// Seed of the perception noise of an episode.
pub fn noise_seed(episode_seed: u64) -> u64 {
    splitmix64(episode_seed ^ 0x6E6F_6973_6500_0000)
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario has no scripted person")]
    NotScripted,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub discarded: bool,
    pub truth_collision: bool,
    pub predicted_risky: Option<bool>,
    pub action_found: Option<bool>,
    /// Wall-clock seconds from the risky commit to the action commit.
    pub reaction_time: Option<f64>,
    pub selected_target: Option<String>,
    pub final_person_collided: bool,
    /// Simulated time of the first risky sweep.
    pub detect_time: Option<f64>,
    /// Simulated time the action was committed.
    pub action_time: Option<f64>,
    /// The committed action, re-checked by an independent co-simulation.
    pub action_verified: Option<bool>,
    /// Set when the episode could not be run; such episodes count as neither
    /// valid nor discarded.
    pub failure: Option<String>,
}

impl EpisodeResult {
    fn failed(seed: u64, err: impl std::fmt::Display) -> Self {
        Self {
            seed,
            discarded: false,
            truth_collision: false,
            predicted_risky: None,
            action_found: None,
            reaction_time: None,
            selected_target: None,
            final_person_collided: false,
            detect_time: None,
            action_time: None,
            action_verified: None,
            failure: Some(err.to_string()),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.discarded && self.failure.is_none()
    }
}

/// Full record of one episode, for the `trace` command.
#[derive(Debug, Default)]
pub struct EpisodeTrace {
    pub simulations: TraceLog,
    pub events: std::sync::Mutex<Vec<serde_json::Value>>,
}

impl EpisodeTrace {
    fn push(&self, v: serde_json::Value) {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).push(v);
    }

    pub fn to_json(&self, result: &EpisodeResult) -> serde_json::Value {
        json!({
            "result": result,
            "events": *self.events.lock().unwrap_or_else(|e| e.into_inner()),
            "simulations": self.simulations.take(),
        })
    }
}

/// Entity id behind a working-memory node, through its track id.
pub(crate) fn entity_of(world: &WorldState, scene: &Scene, node: u64) -> Option<String> {
    let track = scene.body(node)?.track_id;
    world
        .entities
        .iter()
        .find(|e| i64::from(e.key) == track)
        .map(|e| e.id.clone())
}

/// The robot's next velocity from its follower, held at zero while a person
/// it perceives stands within its stopping distance ahead.
pub fn robot_command(world: &WorldState, follower: &mut Follower, dets: &[Detection], cfg: &Config) -> Option<Vec2> {
    let ri = world.robot_index();
    let robot = &world.entities[ri];
    let c = follower.command(robot.pose.position(), world.dt)?;
    let people: Vec<(Pose2, Shape)> = dets
        .iter()
        .filter(|d| d.class == "person")
        .map(|d| (robot.pose.compose(&d.pose), d.shape))
        .collect();
    let yields = robot_yields(
        robot.pose.position(),
        world.velocities[ri],
        c,
        robot.radius(),
        robot.limits(),
        cfg.nav.robot_yield_m,
        people.iter().map(|(p, s)| (p, s)),
    );
    Some(if yields { Vec2::ZERO } else { c })
}

/// Runs one episode: the ground-truth label from an undisturbed replay, then
/// the full loop of perception, both agents and the robot acting in the
/// world while the scripted person walks.
pub fn run_episode(scenario: &Scenario, cfg: &Config, trace: Option<&EpisodeTrace>) -> Result<EpisodeResult, EpisodeError> {
    let truth = truth_replay(scenario, cfg)?;
    let dt = cfg.harness.dt_s;
    let max_ticks = (cfg.harness.max_time_s / dt).ceil() as u64;
    let period_ticks = ((cfg.atm.period_s / dt).round() as u64).max(1);

    let mut world = WorldState::new(scenario, dt);
    let robot_id = world.entities[world.robot_index()].id.clone();
    let target_id = scenario.script_target().map(|e| e.id.clone());
    let mut person = ScriptedPerson::new(scenario, &world, cfg)?.ok_or(EpisodeError::NotScripted)?;
    let person_id = person.id(&world).to_string();
    let noise = NoiseModel::from_config(&cfg.perception, noise_seed(scenario.seed));

    let mut engine = Engine::new(cfg);
    if let Some(t) = trace {
        engine = engine.with_trace(&t.simulations);
    }
    let wm = WorkingMemory::new();
    let mut publisher = Publisher::new(cfg.perception.timeout_s);

    let mut predicted = false;
    let mut detect_time = None;
    let mut selection: Option<(Selection, f64, String, bool)> = None;
    let mut follower: Option<Follower> = None;

    while world.tick < max_ticks {
        let dets = observe(&world, &robot_id, cfg.perception.sensor_range_m, &noise);
        publisher.publish(world.time(), &RobotState::from_world(&world), &dets, &wm)?;

        if selection.is_none() && world.tick.is_multiple_of(period_ticks) {
            let sweep = guess_intentions(&wm, cfg, &engine)?;
            if world.tick == 0 && sweep.guesses.is_empty() {
                // Nobody to attribute an intention to at the outset: the
                // episode is discarded and the robot never acts, so the world
                // would only replay the ground truth.
                return Ok(EpisodeResult {
                    seed: scenario.seed,
                    discarded: true,
                    truth_collision: truth.collided,
                    predicted_risky: None,
                    action_found: None,
                    reaction_time: None,
                    selected_target: None,
                    final_person_collided: truth.collided,
                    detect_time: None,
                    action_time: None,
                    action_verified: None,
                    failure: None,
                });
            }
            let risky = sweep.risky().count();
            if let Some(t) = trace {
                t.push(json!({
                    "kind": "sweep",
                    "time": world.time(),
                    "intentions": sweep.guesses.len(),
                    "risky": risky,
                    "wm": dump(&wm.snapshot()),
                }));
            }
            if risky > 0 {
                predicted = true;
                detect_time.get_or_insert(world.time());
                let snapshot = wm.snapshot();
                if let Some(sel) = select_action(&wm, cfg, &engine)? {
                    // Soundness check on the very snapshot the decision used.
                    let scene = Scene::from_snapshot(&snapshot)?;
                    let candidate = IntentionRecord {
                        c: None,
                        ..sel.record.clone()
                    };
                    let verified = !Engine::new(cfg).co_simulate(&scene, &candidate, &sel.risky)?.c;
                    let target = entity_of(&world, &scene, sel.record.target).unwrap_or_default();
                    if let Ok(path) = &sel.outcome.robot_plan {
                        follower = Some(robot_follower(path, scene.robot_limits, cfg.nav.lookahead_m)?);
                    }
                    if let Some(t) = trace {
                        t.push(json!({
                            "kind": "action",
                            "time": world.time(),
                            "target": target,
                            "selection": sel,
                            "verified": verified,
                            "wm": dump(&wm.snapshot()),
                        }));
                    }
                    selection = Some((sel, world.time(), target, verified));
                }
            }
        }

        let mut commands = BTreeMap::new();
        if let Some(c) = person.command(&world) {
            commands.insert(person_id.clone(), c);
        }
        let robot_cmd = follower.as_mut().and_then(|f| robot_command(&world, f, &dets, cfg));
        if let Some(c) = robot_cmd.filter(|c| c.norm() > 0.0) {
            commands.insert(robot_id.clone(), c);
        }
        if commands.is_empty() && world.velocities.iter().all(|v| v.norm() < 1e-12) {
            break;
        }
        world.advance(&commands, dt)?;
    }

    let final_collision = first_person_collision(&world, target_id.as_deref());
    if let Some(t) = trace {
        t.push(json!({
            "kind": "end",
            "time": world.time(),
            "collision": final_collision,
            "events": world.collision_events,
            "wm": dump(&wm.snapshot()),
        }));
    }
    let reaction_time = selection.as_ref().and_then(|(sel, ..)| {
        reaction_timer(&wm)
            .into_iter()
            .find(|r| r.intention == sel.cancels)
            .and_then(|r| r.seconds)
    });
    let (action_time, selected_target, action_verified) = match &selection {
        Some((_, t, target, v)) => (Some(*t), Some(target.clone()), Some(*v)),
        None => (None, None, None),
    };
    Ok(EpisodeResult {
        seed: scenario.seed,
        discarded: false,
        truth_collision: truth.collided,
        predicted_risky: Some(predicted),
        action_found: Some(selection.is_some()),
        reaction_time,
        selected_target,
        final_person_collided: final_collision.is_some(),
        detect_time,
        action_time,
        action_verified,
        failure: None,
    })
}

/// Samples and runs episode `index` of a batch. Never fails; problems are
/// recorded on the result.
pub fn run_indexed(base: &Scenario, cfg: &Config, master_seed: u64, index: usize) -> EpisodeResult {
    let seed = episode_seed(master_seed, index);
    match sample_scenario(base, seed) {
        Ok(sc) => run_episode(&sc, cfg, None).unwrap_or_else(|e| EpisodeResult::failed(seed, e)),
        Err(e) => EpisodeResult::failed(seed, e),
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub results: Vec<EpisodeResult>,
    pub report: Result<MetricsReport, MetricsError>,
}

/// `n` independent episodes, in index order whatever order they finish in.
pub fn run_batch(base: &Scenario, n: usize, cfg: &Config, master_seed: u64) -> Batch {
    let results: Vec<EpisodeResult> = (0..n)
        .into_par_iter()
        .map(|i| run_indexed(base, cfg, master_seed, i))
        .collect();
    let report = compute_metrics(&results);
    Batch { results, report }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// `(1+β²)·P·R / (β²·P + R)`, zero when both are zero.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    ratio((1.0 + b2) * precision * recall, b2 * precision + recall)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub accuracy: f64,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
}

impl RateSet {
    /// Rates over `valid` episodes. False-positive and false-negative rates
    /// are fractions of all valid episodes, not of the predicted positives.
    pub fn from_confusion(c: &Confusion) -> Self {
        let valid = c.total() as f64;
        let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            accuracy: ratio(tp + tn, valid),
            fp_rate: ratio(fp, valid),
            fn_rate: ratio(fn_, valid),
            precision,
            recall,
            f1: f_beta(precision, recall, 1.0),
            f2: f_beta(precision, recall, 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReactionStats {
    pub count: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation; zero for a single episode.
    pub std: Option<f64>,
}

impl ReactionStats {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            count: values.len(),
            mean: Some(mean),
            std: Some(var.sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub total: usize,
    pub discarded: usize,
    pub failed: usize,
    pub valid: usize,
    pub confusion: Confusion,
    pub rates: RateSet,
    /// Predicted-risky episodes in which an action was committed.
    pub detected_and_action_rate: f64,
    /// Ground-truth collisions that ended with an action and no collision.
    pub intervention_success_rate: f64,
    /// Committed actions that an independent co-simulation confirms.
    pub verified_rate: f64,
    /// Wall-clock, so not part of the deterministic report file.
    #[serde(skip)]
    pub reaction: ReactionStats,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no valid episodes")]
    NoValidEpisodes,
}

pub fn confusion_of(results: &[EpisodeResult]) -> Confusion {
    let mut c = Confusion::default();
    for r in results.iter().filter(|r| r.is_valid()) {
        match (r.truth_collision, r.predicted_risky == Some(true)) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    c
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<MetricsReport, MetricsError> {
    let valid: Vec<&EpisodeResult> = results.iter().filter(|r| r.is_valid()).collect();
    if valid.is_empty() {
        return Err(MetricsError::NoValidEpisodes);
    }
    let confusion = confusion_of(results);
    let predicted = valid.iter().filter(|r| r.predicted_risky == Some(true));
    let with_action = predicted.clone().filter(|r| r.action_found == Some(true)).count();
    let truth: Vec<&&EpisodeResult> = valid.iter().filter(|r| r.truth_collision).collect();
    let saved = truth
        .iter()
        .filter(|r| r.action_found == Some(true) && !r.final_person_collided)
        .count();
    let actions: Vec<&&EpisodeResult> = valid.iter().filter(|r| r.action_found == Some(true)).collect();
    let verified = actions.iter().filter(|r| r.action_verified == Some(true)).count();
    let reaction: Vec<f64> = valid.iter().filter_map(|r| r.reaction_time).collect();
    Ok(MetricsReport {
        total: results.len(),
        discarded: results.iter().filter(|r| r.discarded).count(),
        failed: results.iter().filter(|r| r.failure.is_some()).count(),
        valid: valid.len(),
        confusion,
        rates: RateSet::from_confusion(&confusion),
        detected_and_action_rate: ratio(with_action as f64, predicted.count() as f64),
        intervention_success_rate: ratio(saved as f64, truth.len() as f64),
        verified_rate: ratio(verified as f64, actions.len() as f64),
        reaction: ReactionStats::of(&reaction),
    })
}

/// One line of `episodes.csv`: every deterministic field, in type order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeRow {
    seed: u64,
    discarded: bool,
    truth_collision: bool,
    predicted_risky: Option<bool>,
    action_found: Option<bool>,
    selected_target: Option<String>,
    final_person_collided: bool,
    detect_time: Option<f64>,
    action_time: Option<f64>,
    action_verified: Option<bool>,
    failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingRow {
    seed: u64,
    reaction_time: Option<f64>,
}

pub const EPISODES_FILE: &str = "episodes.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const TIMING_SUMMARY_FILE: &str = "timings.json";

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: timings do not match the episodes")]
    Mismatch { path: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ResultsError + '_ {
    move |source| ResultsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> ResultsError + '_ {
    move |source| ResultsError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the result files into `dir`, creating it if needed.
pub fn write_results(dir: &Path, results: &[EpisodeResult], report: Option<&MetricsReport>) -> Result<(), ResultsError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(EPISODES_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for r in results {
        w.serialize(EpisodeRow {
            seed: r.seed,
            discarded: r.discarded,
            truth_collision: r.truth_collision,
            predicted_risky: r.predicted_risky,
            action_found: r.action_found,
            selected_target: r.selected_target.clone(),
            final_person_collided: r.final_person_collided,
            detect_time: r.detect_time,
            action_time: r.action_time,
            action_verified: r.action_verified,
            failure: r.failure.clone(),
        })
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(TIMINGS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    for r in results {
        w.serialize(TimingRow {
            seed: r.seed,
            reaction_time: r.reaction_time,
        })
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;

    if let Some(report) = report {
        let path = dir.join(METRICS_FILE);
        let text = serde_json::to_string_pretty(report).expect("report serializes");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
        let path = dir.join(TIMING_SUMMARY_FILE);
        let text = serde_json::to_string_pretty(&report.reaction).expect("stats serialize");
        fs::write(&path, text + "\n").map_err(io_err(&path))?;
    }
    Ok(())
}

/// Reads `episodes.csv` (a file, or the directory holding it) and the
/// wall-clock timings next to it when present.
pub fn read_results(path: &Path) -> Result<Vec<EpisodeResult>, ResultsError> {
    let episodes = if path.is_dir() {
        path.join(EPISODES_FILE)
    } else {
        path.to_path_buf()
    };
    let mut rd = csv::Reader::from_path(&episodes).map_err(csv_err(&episodes))?;
    let rows: Vec<EpisodeRow> = rd
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(csv_err(&episodes))?;
    let timings_path = episodes.with_file_name(TIMINGS_FILE);
    let timings: Vec<TimingRow> = if timings_path.exists() {
        let mut rd = csv::Reader::from_path(&timings_path).map_err(csv_err(&timings_path))?;
        let t: Vec<TimingRow> = rd
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(csv_err(&timings_path))?;
        if t.len() != rows.len() || t.iter().zip(&rows).any(|(t, r)| t.seed != r.seed) {
            return Err(ResultsError::Mismatch { path: timings_path });
        }
        t
    } else {
        Vec::new()
    };
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| EpisodeResult {
            seed: r.seed,
            discarded: r.discarded,
            truth_collision: r.truth_collision,
            predicted_risky: r.predicted_risky,
            action_found: r.action_found,
            reaction_time: timings.get(i).and_then(|t| t.reaction_time),
            selected_target: r.selected_target,
            final_person_collided: r.final_person_collided,
            detect_time: r.detect_time,
            action_time: r.action_time,
            action_verified: r.action_verified,
            failure: r.failure,
        })
        .collect())
}

/// Human-readable report, one metric per line.
pub fn format_report(report: &MetricsReport) -> String {
    let r = &report.rates;
    let c = &report.confusion;
    let ms = |v: Option<f64>| v.map_or("n/a".to_string(), |s| format!("{:.1} ms", s * 1000.0));
    format!(
        "episodes          {}\n\
         discarded         {}\n\
         failed            {}\n\
         valid             {}\n\
         confusion         TP={} FP={} TN={} FN={}\n\
         accuracy          {:.4}\n\
         false positives   {:.4}\n\
         false negatives   {:.4}\n\
         precision         {:.4}\n\
         recall            {:.4}\n\
         F1                {:.4}\n\
         F2                {:.4}\n\
         detected+action   {:.4}\n\
         interventions ok  {:.4}\n\
         actions verified  {:.4}\n\
         reaction mean     {}\n\
         reaction std      {}\n",
        report.total,
        report.discarded,
        report.failed,
        report.valid,
        c.tp,
        c.fp,
        c.tn,
        c.fn_,
        r.accuracy,
        r.fp_rate,
        r.fn_rate,
        r.precision,
        r.recall,
        r.f1,
        r.f2,
        report.detected_and_action_rate,
        report.intervention_success_rate,
        report.verified_rate,
        ms(report.reaction.mean),
        ms(report.reaction.std),
    )
}
