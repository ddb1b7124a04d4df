//! Historical object list maintained across viewpoints.
//!
//! Detections are either merged into an existing record (same label, close
//! box centers) or appended as new records. Snapshots are plain values: every
//! update returns a fresh [`SceneSnapshot`].

use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::geom::{fit_oriented_box_hinted, OrientedBox, Vec3};

pub type ObjectId = u64;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObjectDescription {
    pub label: String,
    pub color: String,
    pub pattern: String,
    pub spatial_relation: String,
}

impl ObjectDescription {
    pub fn new(label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    pub fn with_color(mut self, color: impl Into<String>) -> Self {
        self.color = color.into();
        self
    }

    pub fn with_pattern(mut self, pattern: impl Into<String>) -> Self {
        self.pattern = pattern.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub description: ObjectDescription,
    pub bbox: OrientedBox,
    pub observation_count: u32,
    pub last_seen_tick: u64,
    pub is_target: bool,
}

impl ObjectRecord {
    pub fn label(&self) -> &str {
        &self.description.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub description: ObjectDescription,
    pub bbox: OrientedBox,
    pub source_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneSnapshot {
    pub tick: u64,
    pub objects: Vec<ObjectRecord>,
    pub target_id: Option<ObjectId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    /// Maximum box-center distance for two same-label boxes to be merged.
    pub match_radius: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { match_radius: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SceneError {
    #[error("{count} records share the label {label:?}")]
    AmbiguousTarget { label: String, count: usize },
}

impl SceneSnapshot {
    pub fn get(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn target(&self) -> Option<&ObjectRecord> {
        self.target_id.and_then(|id| self.get(id))
    }

    pub fn find_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a ObjectRecord> + 'a {
        self.objects.iter().filter(move |o| o.label() == label)
    }

    fn next_id(&self) -> ObjectId {
        self.objects.iter().map(|o| o.id + 1).max().unwrap_or(0)
    }

    /// Copy of the snapshot with one record dropped (the object left the
    /// scene). Clears the target if it was the dropped record.
    pub fn without(&self, id: ObjectId) -> SceneSnapshot {
        let mut out = self.clone();
        out.objects.retain(|o| o.id != id);
        if out.target_id == Some(id) {
            out.target_id = None;
        }
        out
    }

    fn set_target(&mut self, id: Option<ObjectId>) {
        self.target_id = id;
        for o in &mut self.objects {
            o.is_target = Some(o.id) == id;
        }
    }
}

fn matches(record: &ObjectRecord, det: &Detection, cfg: &SceneConfig) -> Option<f64> {
    if record.label() != det.description.label {
        return None;
    }
    let d = (record.bbox.center - det.bbox.center).norm();
    (d < cfg.match_radius).then_some(d)
}

/// Integrates one view's detections into the historical list.
pub fn update_scene(snapshot: &SceneSnapshot, detections: &[Detection], cfg: &SceneConfig) -> SceneSnapshot {
    let mut next = snapshot.clone();
    next.tick = snapshot.tick + 1;
    let mut next_id = snapshot.next_id();

    for det in detections {
        let best = next
            .objects
            .iter()
            .enumerate()
            .filter_map(|(i, r)| matches(r, det, cfg).map(|d| (i, d, r.id)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.2.cmp(&b.2)));
        match best {
            Some((i, _, _)) => {
                next.objects[i] = merge_records(&next.objects[i], det);
            }
            None => {
                next.objects.push(ObjectRecord {
                    id: next_id,
                    description: det.description.clone(),
                    bbox: det.bbox,
                    observation_count: 1,
                    last_seen_tick: det.source_tick,
                    is_target: false,
                });
                next_id += 1;
            }
        }
    }
    consolidate(&mut next, cfg);
    let target = next.target_id.filter(|id| next.get(*id).is_some());
    next.set_target(target);
    next
}

// Merging can pull a box center within the match radius of another
// same-label record; fold such pairs into the older record.
fn consolidate(snapshot: &mut SceneSnapshot, cfg: &SceneConfig) {
    loop {
        let objs = &snapshot.objects;
        let mut pair = None;
        'outer: for i in 0..objs.len() {
            for j in (i + 1)..objs.len() {
                if objs[i].label() == objs[j].label()
                    && (objs[i].bbox.center - objs[j].bbox.center).norm() < cfg.match_radius
                {
                    pair = Some((i, j));
                    break 'outer;
                }
            }
        }
        let Some((i, j)) = pair else { break };
        let (keep, drop) = if objs[i].id < objs[j].id { (i, j) } else { (j, i) };
        let other = snapshot.objects[drop].clone();
        let mut merged = merge_boxes_into(&snapshot.objects[keep], &other.bbox);
        merged.observation_count = snapshot.objects[keep].observation_count + other.observation_count;
        merged.last_seen_tick = snapshot.objects[keep].last_seen_tick.max(other.last_seen_tick);
        snapshot.objects[keep] = merged;
        if snapshot.target_id == Some(other.id) {
            snapshot.target_id = Some(snapshot.objects[keep].id);
        }
        snapshot.objects.remove(drop);
    }
}

fn merge_boxes_into(existing: &ObjectRecord, incoming: &OrientedBox) -> ObjectRecord {
    let mut out = existing.clone();
    out.bbox = merge_boxes(&existing.bbox, incoming);
    out
}

/// PCA refit over both boxes' corners. When the union's covariance is
/// (nearly) isotropic the PCA frame is arbitrary, so the existing frame is
/// kept whenever it gives the tighter box.
pub fn merge_boxes(existing: &OrientedBox, incoming: &OrientedBox) -> OrientedBox {
    let mut pts: Vec<Vec3> = existing.corners().to_vec();
    pts.extend_from_slice(&incoming.corners());
    let in_frame = OrientedBox::enclosing_in_frame(&pts, existing.rotation).expect("16 corners");
    match fit_oriented_box_hinted(&pts, &existing.rotation) {
        Ok(pca) if pca.volume() < in_frame.volume() - 1e-15 => pca,
        _ => in_frame,
    }
}

pub fn merge_records(existing: &ObjectRecord, incoming: &Detection) -> ObjectRecord {
    let mut out = merge_boxes_into(existing, &incoming.bbox);
    out.observation_count += 1;
    out.last_seen_tick = incoming.source_tick;
    let src = &incoming.description;
    let dst = &mut out.description;
    for (to, from) in [
        (&mut dst.color, &src.color),
        (&mut dst.pattern, &src.pattern),
        (&mut dst.spatial_relation, &src.spatial_relation),
    ] {
        if !from.is_empty() {
            to.clone_from(from);
        }
    }
    out
}

/// Marks the unique record with `label` as the target, or clears the target
/// when no record carries the label.
pub fn designate_target(snapshot: &SceneSnapshot, label: &str) -> Result<SceneSnapshot, SceneError> {
    let candidates: Vec<&ObjectRecord> = snapshot.find_label(label).collect();
    let mut out = snapshot.clone();
    match candidates.len() {
        0 => {
            out.set_target(None);
            Ok(out)
        }
        1 => {
            out.set_target(Some(candidates[0].id));
            Ok(out)
        }
        count => Err(SceneError::AmbiguousTarget {
            label: label.into(),
            count,
        }),
    }
}

/// Ambiguity resolution: highest observation count, then lowest id.
pub fn designate_target_resolved(snapshot: &SceneSnapshot, label: &str) -> SceneSnapshot {
    match designate_target(snapshot, label) {
        Ok(s) => s,
        Err(SceneError::AmbiguousTarget { .. }) => {
            let pick = snapshot
                .find_label(label)
                .max_by(|a, b| a.observation_count.cmp(&b.observation_count).then(b.id.cmp(&a.id)))
                .map(|r| r.id);
            let mut out = snapshot.clone();
            out.set_target(pick);
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn cube_at(x: f64) -> OrientedBox {
        OrientedBox::axis_aligned(Vec3::new(x, 0.0, 0.0), Vec3::new(0.5, 0.5, 0.5))
    }

    fn det(label: &str, x: f64, tick: u64) -> Detection {
        Detection {
            description: ObjectDescription::new(label).with_color("red"),
            bbox: OrientedBox::axis_aligned(Vec3::new(x, 0.0, 0.0), Vec3::new(0.03, 0.03, 0.05)),
            source_tick: tick,
        }
    }

    #[test]
    fn add_into_empty() {
        let s = update_scene(&SceneSnapshot::default(), &[det("red cup", 0.0, 1)], &SceneConfig::default());
        assert_eq!(s.tick, 1);
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects[0].observation_count, 1);
    }

    #[test]
    fn merge_close_same_label() {
        let cfg = SceneConfig::default();
        let s = update_scene(&SceneSnapshot::default(), &[det("red cup", 0.0, 1)], &cfg);
        let s = update_scene(&s, &[det("red cup", 0.01, 2)], &cfg);
        assert_eq!(s.objects.len(), 1);
        assert_eq!(s.objects[0].observation_count, 2);
        assert_eq!(s.objects[0].last_seen_tick, 2);
    }

    #[test]
    fn far_detection_adds_record() {
        let cfg = SceneConfig::default();
        let s = update_scene(&SceneSnapshot::default(), &[det("red cup", 0.0, 1)], &cfg);
        let s = update_scene(&s, &[det("red cup", 1.0, 2)], &cfg);
        assert_eq!(s.objects.len(), 2);
        // brute-force: no same-label pair within the radius
        for a in &s.objects {
            for b in &s.objects {
                if a.id != b.id {
                    assert!((a.bbox.center - b.bbox.center).norm() >= cfg.match_radius);
                }
            }
        }
    }

    #[test]
    fn empty_detections_only_advance_tick() {
        let s = SceneSnapshot { tick: 7, ..Default::default() };
        let n = update_scene(&s, &[], &SceneConfig::default());
        assert_eq!(n.tick, 8);
        assert!(n.objects.is_empty());
    }

    fn record(id: ObjectId, label: &str, b: OrientedBox, count: u32) -> ObjectRecord {
        ObjectRecord {
            id,
            description: ObjectDescription::new(label).with_color("red"),
            bbox: b,
            observation_count: count,
            last_seen_tick: 0,
            is_target: false,
        }
    }

    #[test]
    fn merge_identical_boxes_keeps_geometry() {
        let rot = *Rotation3::from_axis_angle(&Vec3::z_axis(), 0.4).matrix();
        let b = OrientedBox::new(Vec3::new(0.1, 0.2, 0.3), rot, Vec3::new(0.5, 0.5, 0.5)).unwrap();
        let r = record(0, "box", b, 1);
        let m = merge_records(&r, &Detection { description: ObjectDescription::new("box"), bbox: b, source_tick: 3 });
        assert_eq!(m.observation_count, 2);
        assert!((m.bbox.center - b.center).norm() < 1e-9);
        assert!((m.bbox.half_extents - b.half_extents).norm() < 1e-9);
        assert!((m.bbox.rotation - rot).abs().max() < 1e-9);
    }

    #[test]
    fn merge_offset_cubes_contains_all_corners() {
        let r = record(0, "box", cube_at(0.0), 1);
        let incoming = Detection { description: ObjectDescription::new("box"), bbox: cube_at(0.1), source_tick: 1 };
        let m = merge_records(&r, &incoming);
        for c in cube_at(0.0).corners().iter().chain(cube_at(0.1).corners().iter()) {
            assert!(m.bbox.contains(c, 1e-9));
        }
        assert!((m.bbox.half_extents - Vec3::new(0.55, 0.5, 0.5)).norm() < 1e-9);
    }

    #[test]
    fn merge_preserves_attribute_when_incoming_empty() {
        let r = record(0, "box", cube_at(0.0), 1);
        let mut d = ObjectDescription::new("box");
        d.pattern = "striped".into();
        let m = merge_records(&r, &Detection { description: d, bbox: cube_at(0.0), source_tick: 1 });
        assert_eq!(m.description.color, "red");
        assert_eq!(m.description.pattern, "striped");
    }

    #[test]
    fn designate_target_cases() {
        let s = SceneSnapshot {
            tick: 0,
            objects: alloc::vec![record(0, "red cup", cube_at(0.0), 1), record(1, "ball", cube_at(2.0), 1)],
            target_id: None,
        };
        let t = designate_target(&s, "red cup").unwrap();
        assert_eq!(t.target_id, Some(0));
        assert!(t.objects[0].is_target && !t.objects[1].is_target);
        let none = designate_target(&t, "green pear").unwrap();
        assert_eq!(none.target_id, None);
        assert!(none.objects.iter().all(|o| !o.is_target));
    }

    #[test]
    fn ambiguous_target_resolution() {
        let s = SceneSnapshot {
            tick: 0,
            objects: alloc::vec![
                record(0, "red cup", cube_at(0.0), 1),
                record(1, "red cup", cube_at(2.0), 3),
                record(2, "red cup", cube_at(4.0), 3),
            ],
            target_id: None,
        };
        assert_eq!(
            designate_target(&s, "red cup"),
            Err(SceneError::AmbiguousTarget { label: "red cup".into(), count: 3 })
        );
        // enumeration oracle: best count, then lowest id
        let mut cands: Vec<(u32, ObjectId)> = s.objects.iter().map(|o| (o.observation_count, o.id)).collect();
        cands.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        assert_eq!(designate_target_resolved(&s, "red cup").target_id, Some(cands[0].1));
        assert_eq!(cands[0].1, 1);
    }

    #[test]
    fn without_clears_target() {
        let s = SceneSnapshot {
            tick: 0,
            objects: alloc::vec![record(4, "red cup", cube_at(0.0), 1)],
            target_id: Some(4),
        };
        let w = s.without(4);
        assert!(w.objects.is_empty());
        assert_eq!(w.target_id, None);
    }
}
