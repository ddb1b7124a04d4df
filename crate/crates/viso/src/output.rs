//! Episode, suite and field writers. Every float is written with 17
//! significant digits so that equal runs give byte-equal files.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};
use viso_core::fusion::{Criterion, KappaMode};
use viso_core::orchestrator::{AbortReason, EpisodeResult, Event, RetargetReason, SuiteResult};
use viso_core::simenv::GraspOutcome;

use crate::error::CliError;

/// `serde_json` formatter printing floats as `{:.16e}`.
pub struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value.serialize(&mut ser).expect("in-memory serialization");
    String::from_utf8(buf).expect("json is utf-8")
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn criterion_name(c: Criterion) -> &'static str {
    match c {
        Criterion::Confident => "confident",
        Criterion::Stagnation => "stagnation",
    }
}

fn outcome_name(o: GraspOutcome) -> &'static str {
    match o {
        GraspOutcome::Success => "success",
        GraspOutcome::Failure => "failure",
        GraspOutcome::Collision => "collision",
        GraspOutcome::Disturbed => "disturbed",
    }
}

fn reason_name(r: RetargetReason) -> &'static str {
    match r {
        RetargetReason::OcclusionInference => "occlusion_inference",
        RetargetReason::Reprioritize => "reprioritize",
        RetargetReason::Restore => "restore",
    }
}

fn abort_name(r: AbortReason) -> &'static str {
    match r {
        AbortReason::GraspFailures => "grasp_failures",
        AbortReason::Collisions => "collisions",
        AbortReason::Disturbances => "disturbances",
    }
}

pub fn event_json(tick: u64, event: &Event) -> Value {
    let detail = match event {
        Event::TargetUnseen { label } => json!({ "label": label }),
        Event::OcclusionHypothesis { ranking } => json!({
            "ranking": ranking
                .iter()
                .map(|(id, label, score)| json!({ "id": id, "label": label, "score": score }))
                .collect::<Vec<_>>()
        }),
        Event::Retarget { label, reason } => json!({ "label": label, "reason": reason_name(*reason) }),
        Event::RemoveOccluder { target, occluder, id, rule } => {
            json!({ "target": target, "occluder": occluder, "id": id, "rule": rule.tag() })
        }
        Event::TriggerNbv { target, occluders } => json!({ "target": target, "occluders": occluders }),
        Event::GraspTarget { target, rule } => json!({ "target": target, "rule": rule.tag() }),
        Event::GraspAttempt {
            label,
            grasp_id,
            quality,
            kappa,
            criterion,
            outcome,
        } => json!({
            "label": label,
            "grasp_id": grasp_id,
            "quality": quality,
            "kappa": kappa,
            "criterion": criterion_name(*criterion),
            "outcome": outcome_name(*outcome),
        }),
        Event::Removed { label } => json!({ "label": label }),
        Event::TargetGrasped { label } => json!({ "label": label }),
        Event::Abort { reason } => json!({ "reason": abort_name(*reason) }),
        Event::BudgetExhausted => json!({}),
    };
    json!({ "tick": tick, "event": event.kind(), "detail": detail })
}

pub fn trajectory_jsonl(result: &EpisodeResult) -> String {
    let mut out = String::new();
    for r in &result.trajectory {
        let p = r.pose.position;
        let q = r.pose.orientation.quaternion();
        let field = r.field.map(|f| {
            json!({
                "velocity": [f.velocity.x, f.velocity.y, f.velocity.z],
                "beta": f.beta,
                "truncated": f.truncated,
                "singular": f.singular,
            })
        });
        let line = json!({
            "tick": r.tick,
            "position": [p.x, p.y, p.z],
            "orientation": [q.w, q.i, q.j, q.k],
            "active": r.active,
            "target_visibility": r.target_visibility,
            "field": field,
        });
        out.push_str(&to_json(&line));
        out.push('\n');
    }
    out
}

pub fn events_jsonl(result: &EpisodeResult) -> String {
    let mut out = String::new();
    for e in &result.events {
        out.push_str(&to_json(&event_json(e.tick, &e.event)));
        out.push('\n');
    }
    out
}

pub fn grasps_csv(result: &EpisodeResult) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "tick", "label", "id", "cx", "cy", "cz", "mux", "muy", "muz", "kappa", "kappa_sum", "q", "w", "updates", "bins",
    ];
    let csv_err = |e: csv::Error| CliError::Usage(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for row in &result.grasp_rows {
        let g = &row.grasp;
        let mu = g.mean_direction().map(|m| m.into_inner());
        let mu_cols: [String; 3] = match mu {
            Some(m) => [fmt_f64(m.x), fmt_f64(m.y), fmt_f64(m.z)],
            None => Default::default(),
        };
        let bins: Vec<String> = g.approach_bins.iter().map(|b| fmt_f64(*b)).collect();
        let [mx, my, mz] = mu_cols;
        w.write_record([
            row.tick.to_string(),
            row.label.clone(),
            g.id.to_string(),
            fmt_f64(g.contact.x),
            fmt_f64(g.contact.y),
            fmt_f64(g.contact.z),
            mx,
            my,
            mz,
            fmt_f64(g.kappa(KappaMode::Natural)),
            fmt_f64(g.kappa_sum),
            fmt_f64(g.quality),
            fmt_f64(g.width),
            g.update_count.to_string(),
            bins.join(";"),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn metrics_json(scene: &str, seed: u64, result: &EpisodeResult) -> String {
    let v = json!({
        "scene": scene,
        "seed": seed,
        "final_success": result.final_success,
        "grasp_attempts": result.grasp_attempts,
        "grasps_succeeded": result.grasps_succeeded,
        "grasps_attempted": result.grasps_attempted,
        "grasp_success_rate": result.grasp_success_rate(),
        "ticks_used": result.ticks_used,
    });
    to_json(&v) + "\n"
}

pub const EPISODE_FILES: [&str; 4] = ["trajectory.jsonl", "grasps.csv", "events.jsonl", "metrics.json"];

pub fn write_episode(dir: &Path, scene: &str, seed: u64, result: &EpisodeResult) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join("trajectory.jsonl"), &trajectory_jsonl(result))?;
    write_file(&dir.join("grasps.csv"), &grasps_csv(result)?)?;
    write_file(&dir.join("events.jsonl"), &events_jsonl(result))?;
    write_file(&dir.join("metrics.json"), &metrics_json(scene, seed, result))
}

pub fn suite_json(names: &[String], suite: &SuiteResult) -> String {
    let episodes: Vec<Value> = suite
        .episodes
        .iter()
        .map(|e| {
            json!({
                "scene": names[e.scene],
                "seed": e.seed,
                "final_success": e.final_success,
                "grasp_attempts": e.grasp_attempts,
                "grasps_succeeded": e.grasps_succeeded,
                "grasps_attempted": e.grasps_attempted,
                "ticks_used": e.ticks_used,
            })
        })
        .collect();
    let m = &suite.metrics;
    to_json(&json!({
        "afsr": m.afsr,
        "aga": m.aga,
        "agsr": m.agsr,
        "episodes": episodes,
    })) + "\n"
}

pub fn write_suite(dir: &Path, names: &[String], suite: &SuiteResult) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join("suite_metrics.json"), &suite_json(names, suite))
}

pub fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    write_file(path, contents)
}
