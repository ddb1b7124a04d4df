//! The closed perception/planning/grasping loop over a simulated scene.
//!
//! One tick: detect from the current view, merge into the scene snapshot,
//! build relations for the active grasp target, pick a strategy, take at
//! most one view-field step, ingest grasp observations and act on the
//! termination verdict.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::fusion::{ContactGrasp, Criterion, Decision, FusionConfig, GraspEngine, GraspId};
use crate::geom::{CameraPose, OrientedBox, Vec3};
use crate::nbv::{euler_step, planner_field, FieldSample, OccluderPoints};
use crate::relations::{
    compute_relations, decide_strategy, removal_order_or_fallback, RelationConfig, StrategyAction, StrategyRule,
};
use crate::scene::{designate_target_resolved, update_scene, ObjectId, SceneConfig, SceneSnapshot};
use crate::simenv::{
    execute_grasp, simulate_detections, simulate_grasp_observations, visibility, DetectorNoise, ExecutionModel,
    GraspNoise, GraspOutcome, GroundTruthScene,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub tick_hz: f64,
    pub max_ticks: u64,
    pub scene: SceneConfig,
    pub relations: RelationConfig,
    pub fusion: FusionConfig,
    /// Euler step as a fraction of the view-sphere radius.
    pub step: f64,
    /// Cap on view-field steps spent on one grasp target.
    pub max_steps: usize,
    pub eps_stag: f64,
    pub detector: DetectorNoise,
    pub grasp_noise: GraspNoise,
    pub execution: ExecutionModel,
    /// Ticks without camera progress after which the view counts as stagnant.
    pub patience_ticks: u64,
    /// Per-condition failure count that aborts the episode.
    pub max_failures: u32,
    pub history_len: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            tick_hz: 10.0,
            max_ticks: 600,
            scene: SceneConfig::default(),
            relations: RelationConfig::default(),
            fusion: FusionConfig::default(),
            step: 0.02,
            max_steps: 2000,
            eps_stag: 1e-3,
            detector: DetectorNoise::default(),
            grasp_noise: GraspNoise::default(),
            execution: ExecutionModel::default(),
            patience_ticks: 30,
            max_failures: 4,
            history_len: 20,
        }
    }
}

impl LoopConfig {
    /// The moderate noise setting used by the scripted-scene suite.
    pub fn moderate_noise() -> Self {
        Self {
            detector: DetectorNoise {
                sigma_center: 0.003,
                drop_prob: 0.05,
                mislabel_prob: 0.01,
                v_min: 0.1,
            },
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetargetReason {
    /// The prompt target is unseen; occluder inference picked this object.
    OcclusionInference,
    /// Termination asked for a new target; head of the removal order.
    Reprioritize,
    /// An occluder went away; back to the prompt target.
    Restore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    GraspFailures,
    Collisions,
    Disturbances,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    TargetUnseen { label: String },
    OcclusionHypothesis { ranking: Vec<(ObjectId, String, u32)> },
    Retarget { label: String, reason: RetargetReason },
    RemoveOccluder { target: String, occluder: String, id: ObjectId, rule: StrategyRule },
    TriggerNbv { target: String, occluders: Vec<String> },
    GraspTarget { target: String, rule: StrategyRule },
    GraspAttempt {
        label: String,
        grasp_id: GraspId,
        quality: f64,
        kappa: f64,
        criterion: Criterion,
        outcome: GraspOutcome,
    },
    Removed { label: String },
    TargetGrasped { label: String },
    Abort { reason: AbortReason },
    BudgetExhausted,
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::TargetUnseen { .. } => "target_unseen",
            Event::OcclusionHypothesis { .. } => "occlusion_hypothesis",
            Event::Retarget { .. } => "retarget",
            Event::RemoveOccluder { .. } => "remove_occluder",
            Event::TriggerNbv { .. } => "trigger_nbv",
            Event::GraspTarget { .. } => "grasp_target",
            Event::GraspAttempt { .. } => "grasp_attempt",
            Event::Removed { .. } => "removed",
            Event::TargetGrasped { .. } => "target_grasped",
            Event::Abort { .. } => "abort",
            Event::BudgetExhausted => "budget_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub tick: u64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub tick: u64,
    pub pose: CameraPose,
    pub field: Option<FieldSample>,
    pub active: String,
    /// Ground-truth visible fraction of the prompt target from this pose.
    pub target_visibility: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspRow {
    pub tick: u64,
    pub label: String,
    pub grasp: ContactGrasp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub final_success: bool,
    /// Attempts made up to and including the successful target grasp.
    pub grasp_attempts: u32,
    pub grasps_succeeded: u32,
    pub grasps_attempted: u32,
    pub ticks_used: u64,
    pub trajectory: Vec<TickRecord>,
    pub events: Vec<EventRecord>,
    pub grasp_rows: Vec<GraspRow>,
}

impl EpisodeResult {
    pub fn grasp_success_rate(&self) -> Option<f64> {
        (self.grasps_attempted > 0).then(|| self.grasps_succeeded as f64 / self.grasps_attempted as f64)
    }
}

struct Episode<'a> {
    cfg: &'a LoopConfig,
    seed: u64,
    prompt: String,
    gt: GroundTruthScene,
    snapshot: SceneSnapshot,
    history: Vec<SceneSnapshot>,
    engines: BTreeMap<String, GraspEngine>,
    active: String,
    last_region: Option<OrientedBox>,
    x: Vec3,
    still_ticks: u64,
    nbv_steps: usize,
    failures: u32,
    collisions: u32,
    disturbances: u32,
    result: EpisodeResult,
}

enum Flow {
    Continue,
    Stop,
}

impl Episode<'_> {
    fn log(&mut self, tick: u64, event: Event) {
        self.result.events.push(EventRecord { tick, event });
    }

    fn retarget(&mut self, tick: u64, label: String, reason: RetargetReason) {
        if label != self.active {
            self.active = label.clone();
            self.still_ticks = 0;
            self.nbv_steps = 0;
            self.log(tick, Event::Retarget { label, reason });
        }
    }

    fn label_of(&self, id: ObjectId) -> Option<String> {
        self.snapshot.get(id).map(|r| r.description.label.clone())
    }

    fn tick(&mut self, tick: u64) -> Flow {
        let cfg = self.cfg;
        let pose = look_at_focus(&self.x, self.focus());
        let detections = simulate_detections(&self.gt, &pose, &cfg.detector, self.seed, tick);
        let previous = core::mem::take(&mut self.snapshot);
        self.snapshot = update_scene(&previous, &detections, &cfg.scene);
        self.snapshot.tick = tick;

        let target_visibility = visibility(&self.gt, &pose, &self.prompt).map(|r| r.fraction).unwrap_or(0.0);
        let mut record = TickRecord {
            tick,
            pose,
            field: None,
            active: self.active.clone(),
            target_visibility,
        };
        let flow = self.decide(tick, &pose, &mut record);
        self.result.trajectory.push(record);

        self.history.push(self.snapshot.clone());
        if self.history.len() > cfg.history_len {
            self.history.remove(0);
        }
        flow
    }

    fn focus(&self) -> Vec3 {
        designate_target_resolved(&self.snapshot, &self.active)
            .target()
            .map(|r| r.bbox.center)
            .unwrap_or(self.gt.sphere.center)
    }

    fn decide(&mut self, tick: u64, pose: &CameraPose, record: &mut TickRecord) -> Flow {
        let cfg = self.cfg;
        let focused = designate_target_resolved(&self.snapshot, &self.active);
        let Some(target) = focused.target().cloned() else {
            if self.active == self.prompt {
                self.log(tick, Event::TargetUnseen { label: self.prompt.clone() });
                let hint = self.last_region.or(self.gt.target_hint);
                if let Ok(h) = crate::simenv::infer_occluders(&self.snapshot, &self.history, &self.prompt, hint.as_ref(), &pose.position) {
                    if let Some((_, label, _)) = h.best().cloned() {
                        self.log(tick, Event::OcclusionHypothesis { ranking: h.ranking.clone() });
                        self.retarget(tick, label, RetargetReason::OcclusionInference);
                    }
                }
            } else {
                let prompt = self.prompt.clone();
                self.retarget(tick, prompt, RetargetReason::Restore);
            }
            return Flow::Continue;
        };
        if self.active == self.prompt {
            self.last_region = Some(target.bbox);
        }

        let graph = compute_relations(&focused, &cfg.relations);
        let Ok(decision) = decide_strategy(&focused, &graph, &cfg.relations) else {
            return Flow::Continue;
        };
        let mut field_speed = f64::INFINITY;
        let mut next_x = self.x;
        match decision.action {
            StrategyAction::RemoveOccluder(id) => {
                if let Some(occluder) = self.label_of(id) {
                    self.log(
                        tick,
                        Event::RemoveOccluder {
                            target: self.active.clone(),
                            occluder: occluder.clone(),
                            id,
                            rule: decision.rationale,
                        },
                    );
                    self.active = occluder;
                    self.still_ticks = 0;
                    self.nbv_steps = 0;
                }
                return Flow::Continue;
            }
            StrategyAction::TriggerNbv(ids) => {
                let boxes: Vec<OrientedBox> = ids.iter().filter_map(|id| focused.get(*id)).map(|r| r.bbox).collect();
                if self.nbv_steps == 0 {
                    let occluders = ids.iter().filter_map(|id| self.label_of(*id)).collect();
                    self.log(tick, Event::TriggerNbv { target: self.active.clone(), occluders });
                }
                let occ = OccluderPoints::from_boxes(boxes.iter());
                match planner_field(&self.x, &self.gt.sphere, &target.bbox.center, &occ) {
                    Ok(sample) => {
                        record.field = Some(sample);
                        next_x = euler_step(&self.x, &sample, &self.gt.sphere, cfg.step * self.gt.sphere.radius);
                        self.nbv_steps += 1;
                        let moved = (next_x - self.x).norm();
                        if moved < 0.05 * cfg.step * self.gt.sphere.radius {
                            self.still_ticks += 1;
                        } else {
                            self.still_ticks = 0;
                        }
                        field_speed = sample.speed();
                        if self.still_ticks >= cfg.patience_ticks || self.nbv_steps >= cfg.max_steps {
                            field_speed = 0.0;
                        }
                    }
                    Err(_) => field_speed = 0.0,
                }
            }
            StrategyAction::GraspTarget => {
                if self.still_ticks == 0 {
                    self.log(tick, Event::GraspTarget { target: self.active.clone(), rule: decision.rationale });
                }
                self.still_ticks += 1;
                if self.still_ticks > cfg.patience_ticks {
                    field_speed = 0.0;
                }
            }
        }

        let observations = simulate_grasp_observations(
            &self.gt,
            pose,
            &[self.active.as_str()],
            &cfg.grasp_noise,
            cfg.fusion.bins,
            self.seed,
            tick,
        );
        let engine = self
            .engines
            .entry(self.active.clone())
            .or_insert_with(|| GraspEngine::new(cfg.fusion));
        engine.ingest(tick, &observations);
        let verdict = engine.evaluate_termination(field_speed, cfg.eps_stag);
        for g in engine.buffer() {
            self.result.grasp_rows.push(GraspRow {
                tick,
                label: self.active.clone(),
                grasp: g.clone(),
            });
        }
        let best = engine.best_grasp();
        self.x = next_x;

        match (verdict.decision, verdict.criterion) {
            (Decision::Execute(id), Some(criterion)) => {
                let Some(best) = best.filter(|b| b.id == id) else {
                    return Flow::Continue;
                };
                self.attempt(tick, id, best.quality, best.kappa, criterion)
            }
            (Decision::Reprioritize, _) => {
                let order = removal_order_or_fallback(&focused, &graph);
                if let Some(label) = order.first().and_then(|id| self.label_of(*id)) {
                    self.retarget(tick, label, RetargetReason::Reprioritize);
                } else {
                    self.still_ticks = 0;
                    self.nbv_steps = 0;
                }
                Flow::Continue
            }
            _ => Flow::Continue,
        }
    }

    fn attempt(&mut self, tick: u64, grasp_id: GraspId, quality: f64, kappa: f64, criterion: Criterion) -> Flow {
        let cfg = self.cfg;
        let label = self.active.clone();
        let Ok((outcome, after)) = execute_grasp(&self.gt, &label, quality, &cfg.execution, self.seed, tick) else {
            // The active label names nothing real (a mislabeled record).
            self.snapshot = drop_label(&self.snapshot, &label);
            let prompt = self.prompt.clone();
            self.retarget(tick, prompt, RetargetReason::Restore);
            return Flow::Continue;
        };
        self.result.grasps_attempted += 1;
        self.log(
            tick,
            Event::GraspAttempt {
                label: label.clone(),
                grasp_id,
                quality,
                kappa,
                criterion,
                outcome,
            },
        );
        match outcome {
            GraspOutcome::Success => {
                self.result.grasps_succeeded += 1;
                self.gt = after;
                self.snapshot = drop_label(&self.snapshot, &label);
                self.engines.remove(&label);
                self.log(tick, Event::Removed { label: label.clone() });
                if label == self.prompt {
                    self.result.final_success = true;
                    self.result.grasp_attempts = self.result.grasps_attempted;
                    self.log(tick, Event::TargetGrasped { label });
                    return Flow::Stop;
                }
                let prompt = self.prompt.clone();
                self.retarget(tick, prompt, RetargetReason::Restore);
                Flow::Continue
            }
            GraspOutcome::Failure => self.count(tick, AbortReason::GraspFailures),
            GraspOutcome::Collision => self.count(tick, AbortReason::Collisions),
            GraspOutcome::Disturbed => self.count(tick, AbortReason::Disturbances),
        }
    }

    fn count(&mut self, tick: u64, reason: AbortReason) -> Flow {
        let counter = match reason {
            AbortReason::GraspFailures => &mut self.failures,
            AbortReason::Collisions => &mut self.collisions,
            AbortReason::Disturbances => &mut self.disturbances,
        };
        *counter += 1;
        if *counter >= self.cfg.max_failures {
            self.log(tick, Event::Abort { reason });
            return Flow::Stop;
        }
        Flow::Continue
    }
}

fn drop_label(snapshot: &SceneSnapshot, label: &str) -> SceneSnapshot {
    let ids: Vec<ObjectId> = snapshot.find_label(label).map(|r| r.id).collect();
    ids.iter().fold(snapshot.clone(), |s, id| s.without(*id))
}

fn look_at_focus(x: &Vec3, focus: Vec3) -> CameraPose {
    CameraPose::look_at(*x, &focus)
}

pub fn run_episode(scene: &GroundTruthScene, cfg: &LoopConfig, seed: u64) -> EpisodeResult {
    let mut ep = Episode {
        cfg,
        seed,
        prompt: scene.target_label.clone(),
        gt: scene.clone(),
        snapshot: SceneSnapshot::default(),
        history: Vec::new(),
        engines: BTreeMap::new(),
        active: scene.target_label.clone(),
        last_region: None,
        x: scene.initial_camera_position(),
        still_ticks: 0,
        nbv_steps: 0,
        failures: 0,
        collisions: 0,
        disturbances: 0,
        result: EpisodeResult {
            final_success: false,
            grasp_attempts: 0,
            grasps_succeeded: 0,
            grasps_attempted: 0,
            ticks_used: 0,
            trajectory: Vec::new(),
            events: Vec::new(),
            grasp_rows: Vec::new(),
        },
    };
    let mut finished = false;
    for tick in 1..=cfg.max_ticks {
        ep.result.ticks_used = tick;
        if let Flow::Stop = ep.tick(tick) {
            finished = true;
            break;
        }
    }
    if !finished {
        ep.log(cfg.max_ticks, Event::BudgetExhausted);
    }
    if !ep.result.final_success {
        ep.result.grasp_attempts = ep.result.grasps_attempted;
    }
    ep.result
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub scene: usize,
    pub seed: u64,
    pub final_success: bool,
    pub grasp_attempts: u32,
    pub grasps_succeeded: u32,
    pub grasps_attempted: u32,
    pub ticks_used: u64,
}

impl EpisodeSummary {
    pub fn of(scene: usize, seed: u64, r: &EpisodeResult) -> Self {
        Self {
            scene,
            seed,
            final_success: r.final_success,
            grasp_attempts: r.grasp_attempts,
            grasps_succeeded: r.grasps_succeeded,
            grasps_attempted: r.grasps_attempted,
            ticks_used: r.ticks_used,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteMetrics {
    /// Fraction of episodes whose target was grasped.
    pub afsr: f64,
    /// Mean attempts over successful episodes only; `None` if none succeeded.
    pub aga: Option<f64>,
    /// Mean per-episode grasp success rate over episodes with an attempt.
    pub agsr: Option<f64>,
}

pub fn aggregate(episodes: &[EpisodeSummary]) -> SuiteMetrics {
    let n = episodes.len();
    let successes: Vec<&EpisodeSummary> = episodes.iter().filter(|e| e.final_success).collect();
    let afsr = if n == 0 { 0.0 } else { successes.len() as f64 / n as f64 };
    let aga = (!successes.is_empty())
        .then(|| successes.iter().map(|e| e.grasp_attempts as f64).sum::<f64>() / successes.len() as f64);
    let rates: Vec<f64> = episodes
        .iter()
        .filter(|e| e.grasps_attempted > 0)
        .map(|e| e.grasps_succeeded as f64 / e.grasps_attempted as f64)
        .collect();
    let agsr = (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64);
    SuiteMetrics { afsr, aga, agsr }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub episodes: Vec<EpisodeSummary>,
    pub metrics: SuiteMetrics,
}

/// Runs every scene under every seed, scene-major.
pub fn run_suite(scenes: &[GroundTruthScene], cfg: &LoopConfig, seeds: &[u64]) -> SuiteResult {
    let mut episodes = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        for &seed in seeds {
            episodes.push(EpisodeSummary::of(i, seed, &run_episode(scene, cfg, seed)));
        }
    }
    let metrics = aggregate(&episodes);
    SuiteResult { episodes, metrics }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbv::ViewSphere;
    use crate::scene::ObjectDescription;
    use crate::simenv::SceneObject;

    fn obj(label: &str, center: Vec3, half: Vec3) -> SceneObject {
        SceneObject {
            description: ObjectDescription::new(label),
            bbox: OrientedBox::axis_aligned(center, half),
        }
    }

    fn scene(objects: Vec<SceneObject>) -> GroundTruthScene {
        GroundTruthScene {
            objects,
            target_label: "target".into(),
            table_height: 0.0,
            sphere: ViewSphere::new(Vec3::new(0.0, 0.0, 0.05), 0.5).unwrap(),
            initial_view: (0.3, 0.87),
            target_hint: None,
            seed: 0,
        }
    }

    fn isolated() -> GroundTruthScene {
        scene(alloc::vec![obj("target", Vec3::new(0.0, 0.0, 0.04), Vec3::new(0.03, 0.03, 0.04))])
    }

    fn under_plate() -> GroundTruthScene {
        scene(alloc::vec![
            obj("target", Vec3::new(0.0, 0.0, 0.03), Vec3::repeat(0.03)),
            obj("post a", Vec3::new(-0.09, 0.0, 0.05), Vec3::new(0.01, 0.03, 0.05)),
            obj("post b", Vec3::new(0.09, 0.0, 0.05), Vec3::new(0.01, 0.03, 0.05)),
            obj("plate", Vec3::new(0.0, 0.0, 0.11), Vec3::new(0.11, 0.035, 0.01)),
        ])
    }

    #[test]
    fn isolated_target_one_attempt() {
        let cfg = LoopConfig {
            execution: ExecutionModel { disturb_prob: 0.0, ..Default::default() },
            ..Default::default()
        };
        let r = run_episode(&isolated(), &cfg, 7);
        assert!(r.final_success, "{:?}", r.events);
        assert_eq!(r.grasp_attempts, 1);
        assert_eq!(r.grasps_succeeded, 1);
        assert_eq!(r.trajectory.len() as u64, r.ticks_used);
    }

    #[test]
    fn one_tick_budget_is_well_formed() {
        let cfg = LoopConfig { max_ticks: 1, ..Default::default() };
        let r = run_episode(&under_plate(), &cfg, 1);
        assert!(!r.final_success);
        assert_eq!(r.ticks_used, 1);
        assert_eq!(r.trajectory.len(), 1);
        assert!(r.grasps_succeeded <= r.grasps_attempted);
        assert_eq!(r.events.last().unwrap().event, Event::BudgetExhausted);
    }

    #[test]
    fn plate_removed_before_target() {
        for seed in 0..5 {
            let r = run_episode(&under_plate(), &LoopConfig::default(), seed);
            assert!(r.final_success, "seed {seed}: {:?}", r.events);
            let removals: Vec<usize> = r
                .events
                .iter()
                .enumerate()
                .filter(|(_, e)| matches!(&e.event, Event::RemoveOccluder { target, .. } if target == "target"))
                .map(|(i, _)| i)
                .collect();
            let grasped = r.events.iter().position(|e| matches!(e.event, Event::TargetGrasped { .. })).unwrap();
            assert_eq!(removals.len(), 1, "seed {seed}: {:?}", r.events);
            assert!(removals[0] < grasped);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = LoopConfig::moderate_noise();
        assert_eq!(run_episode(&under_plate(), &cfg, 3), run_episode(&under_plate(), &cfg, 3));
    }

    fn summary(success: bool, attempts: u32, ok: u32) -> EpisodeSummary {
        EpisodeSummary {
            scene: 0,
            seed: 0,
            final_success: success,
            grasp_attempts: attempts,
            grasps_succeeded: ok,
            grasps_attempted: attempts,
            ticks_used: 1,
        }
    }

    #[test]
    fn aggregate_degenerate_cases() {
        let all = aggregate(&[summary(true, 1, 1), summary(true, 1, 1)]);
        assert_eq!(all.afsr, 1.0);
        assert_eq!(all.aga, Some(1.0));
        assert_eq!(all.agsr, Some(1.0));
        let half = aggregate(&[summary(true, 3, 2), summary(false, 4, 0)]);
        assert_eq!(half.afsr, 0.5);
        assert_eq!(half.aga, Some(3.0));
        assert_eq!(half.agsr, Some((2.0 / 3.0 + 0.0) / 2.0));
    }
}
