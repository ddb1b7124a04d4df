//! Deterministic synthetic tabletop: ground-truth boxes, ray-cast
//! visibility, a noisy detector, a synthetic grasp generator and a voting
//! occluder oracle. Every random draw comes from a ChaCha stream keyed by
//! `(seed, tick, purpose)`, so results are bit-identical for equal inputs.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::fusion::GraspObservation;
use crate::geom::{ray_box_intersect, CameraPose, OrientedBox, UnitVec3, Vec3};
use crate::nbv::ViewSphere;
use crate::relations::{boxes_intersect, convex_polygons_overlap, xy_footprint};
use crate::scene::{Detection, ObjectDescription, ObjectId, SceneSnapshot};

/// Samples per face edge of the visibility grid.
pub const VISIBILITY_GRID: usize = 8;
/// Concentration used when an "infinite" kappa is requested.
pub const KAPPA_CLAMP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no object labeled {0:?}")]
    UnknownLabel(String),
    #[error("no occluder hypothesis: no target region and no history")]
    NoHypothesis,
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub description: ObjectDescription,
    pub bbox: OrientedBox,
}

impl SceneObject {
    pub fn label(&self) -> &str {
        &self.description.label
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub objects: Vec<SceneObject>,
    pub target_label: String,
    pub table_height: f64,
    pub sphere: ViewSphere,
    /// Initial camera azimuth and elevation on the sphere, radians.
    pub initial_view: (f64, f64),
    /// Prompted region where the target is expected, if any.
    pub target_hint: Option<OrientedBox>,
    pub seed: u64,
}

impl GroundTruthScene {
    pub fn validate(&self) -> Result<(), SimError> {
        if !self.objects.iter().any(|o| o.label() == self.target_label) {
            return Err(SimError::InvalidScene(alloc::format!(
                "target {:?} is not among the objects",
                self.target_label
            )));
        }
        for o in &self.objects {
            if o.label().is_empty() {
                return Err(SimError::InvalidScene("empty object label".into()));
            }
            if o.bbox.min_z() < self.table_height - 1e-6 {
                return Err(SimError::InvalidScene(alloc::format!("{:?} extends below the table", o.label())));
            }
        }
        Ok(())
    }

    pub fn find(&self, label: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.label() == label)
    }

    pub fn target(&self) -> Option<&SceneObject> {
        self.find(&self.target_label)
    }

    pub fn initial_camera_position(&self) -> Vec3 {
        self.sphere.point_at(self.initial_view.0, self.initial_view.1)
    }
}

/// splitmix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, tick: u64, purpose: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ tick) ^ purpose))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityReport {
    pub fraction: f64,
    pub sample_count: usize,
    /// Nearest blocking object per blocked sample, sorted.
    pub blocked_by: Vec<String>,
}

/// Stratified samples on the faces of `b` that face `eye`.
pub fn facing_samples(b: &OrientedBox, eye: &Vec3, grid: usize) -> Vec<Vec3> {
    let mut out = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let normal = b.axis(axis) * sign;
            let face_center = b.center + normal * b.half_extents[axis];
            if normal.dot(&(eye - face_center)) <= 0.0 {
                continue;
            }
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..grid {
                for j in 0..grid {
                    let su = ((i as f64 + 0.5) / grid as f64 * 2.0 - 1.0) * b.half_extents[u];
                    let sv = ((j as f64 + 0.5) / grid as f64 * 2.0 - 1.0) * b.half_extents[v];
                    out.push(face_center + b.axis(u) * su + b.axis(v) * sv);
                }
            }
        }
    }
    out
}

fn visibility_of(objects: &[SceneObject], index: usize, eye: &Vec3, grid: usize) -> VisibilityReport {
    let samples = facing_samples(&objects[index].bbox, eye, grid);
    let mut blocked_by = Vec::new();
    for p in &samples {
        let to = p - eye;
        let dist = to.norm();
        if dist < 1e-12 {
            continue;
        }
        let dir = Unit::new_unchecked(to / dist);
        let nearest = objects
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != index)
            .filter_map(|(_, o)| ray_box_intersect(eye, &dir, &o.bbox).map(|t| (t, o)))
            .filter(|(t, _)| *t < dist - 1e-9)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, o)) = nearest {
            blocked_by.push(o.description.label.clone());
        }
    }
    blocked_by.sort();
    let n = samples.len();
    VisibilityReport {
        fraction: if n == 0 { 0.0 } else { (n - blocked_by.len()) as f64 / n as f64 },
        sample_count: n,
        blocked_by,
    }
}

pub fn visibility(scene: &GroundTruthScene, camera: &CameraPose, label: &str) -> Result<VisibilityReport, SimError> {
    let idx = scene
        .objects
        .iter()
        .position(|o| o.label() == label)
        .ok_or_else(|| SimError::UnknownLabel(label.into()))?;
    Ok(visibility_of(&scene.objects, idx, &camera.position, VISIBILITY_GRID))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorNoise {
    pub sigma_center: f64,
    pub drop_prob: f64,
    pub mislabel_prob: f64,
    /// Objects at or below this visible fraction are not detected.
    pub v_min: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        Self {
            sigma_center: 0.0,
            drop_prob: 0.0,
            mislabel_prob: 0.0,
            v_min: 0.1,
        }
    }
}

const PURPOSE_DETECT: u64 = 1;
const PURPOSE_GRASP: u64 = 2;
const PURPOSE_EXECUTE: u64 = 3;

fn gaussian3(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    let x: f64 = rng.sample(StandardNormal);
    let y: f64 = rng.sample(StandardNormal);
    let z: f64 = rng.sample(StandardNormal);
    Vec3::new(x, y, z) * sigma
}

pub fn simulate_detections(
    scene: &GroundTruthScene,
    camera: &CameraPose,
    noise: &DetectorNoise,
    seed: u64,
    tick: u64,
) -> Vec<Detection> {
    let mut rng = stream_rng(seed, tick, PURPOSE_DETECT);
    let mut labels: Vec<&str> = scene.objects.iter().map(|o| o.label()).collect();
    labels.sort_unstable();
    labels.dedup();

    let mut out = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        let vis = visibility_of(&scene.objects, i, &camera.position, VISIBILITY_GRID);
        if vis.fraction <= noise.v_min {
            continue;
        }
        let drop_u: f64 = rng.random();
        let mislabel_u: f64 = rng.random();
        let pick: f64 = rng.random();
        let offset = gaussian3(&mut rng, noise.sigma_center);
        if drop_u < noise.drop_prob {
            continue;
        }
        let mut description = obj.description.clone();
        if mislabel_u < noise.mislabel_prob && labels.len() > 1 {
            let others: Vec<&str> = labels.iter().copied().filter(|l| *l != obj.label()).collect();
            let k = ((pick * others.len() as f64) as usize).min(others.len() - 1);
            description.label = others[k].into();
        }
        let mut bbox = obj.bbox;
        bbox.center += offset;
        out.push(Detection {
            description,
            bbox,
            source_tick: tick,
        });
    }
    out
}

/// Exact vMF sample on the 2-sphere (Wood's scheme, closed-form for 3D).
pub fn sample_vmf<R: Rng + ?Sized>(rng: &mut R, mu: &UnitVec3, kappa: f64) -> UnitVec3 {
    let kappa = kappa.min(KAPPA_CLAMP);
    let u: f64 = rng.random();
    let v: f64 = rng.random();
    let w = if kappa <= 1e-12 {
        2.0 * u - 1.0
    } else {
        // inverse CDF of the cosine: w = 1 + ln(u + (1 - u) e^{-2 kappa}) / kappa
        let u = u.max(f64::MIN_POSITIVE);
        (1.0 + libm::log(u + (1.0 - u) * libm::exp(-2.0 * kappa)) / kappa).clamp(-1.0, 1.0)
    };
    let (e1, e2) = orthonormal_pair(mu);
    let phi = 2.0 * PI * v;
    let r = libm::sqrt((1.0 - w * w).max(0.0));
    Unit::new_normalize(mu.into_inner() * w + (e1 * libm::cos(phi) + e2 * libm::sin(phi)) * r)
}

fn orthonormal_pair(n: &UnitVec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = n.cross(&helper).normalize();
    let e2 = n.cross(&e1);
    (e1, e2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspNoise {
    pub sigma_contact: f64,
    pub kappa_obs: f64,
    pub q_base: f64,
    pub q_visibility_gain: f64,
    /// Observations emitted per ground-truth grasp and tick.
    pub per_grasp: usize,
    /// Widest graspable extent, meters.
    pub max_width: f64,
}

impl Default for GraspNoise {
    fn default() -> Self {
        Self {
            sigma_contact: 0.002,
            kappa_obs: 20.0,
            q_base: 0.4,
            q_visibility_gain: 0.55,
            per_grasp: 2,
            max_width: 0.085,
        }
    }
}

/// Antipodal top-down grasp across one pair of box faces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueGrasp {
    pub contact: Vec3,
    pub baseline: UnitVec3,
    pub approach_bin: usize,
    pub width: f64,
}

/// Grasps across every horizontal-ish box axis not wider than `max_width`.
/// The approach is the direction perpendicular to the baseline closest to
/// straight down, quantized into `bins` sectors of a half-turn.
pub fn ground_truth_grasps(b: &OrientedBox, max_width: f64, bins: usize) -> Vec<TrueGrasp> {
    let mut out = Vec::new();
    for i in 0..3 {
        let axis = b.axis(i);
        let width = 2.0 * b.half_extents[i];
        if width > max_width || axis.z.abs() > 0.9 {
            continue;
        }
        let down = -Vec3::z();
        let approach = (down - axis * down.dot(&axis)).normalize();
        let reference = b.axis((i + 1) % 3);
        let other = axis.cross(&reference);
        let mut angle = libm::atan2(approach.dot(&other), approach.dot(&reference));
        if angle < 0.0 {
            angle += PI;
        }
        if angle >= PI {
            angle -= PI;
        }
        let bin = ((angle / PI * bins as f64) as usize).min(bins.saturating_sub(1));
        out.push(TrueGrasp {
            contact: b.center - axis * b.half_extents[i],
            baseline: Unit::new_normalize(axis),
            approach_bin: bin,
            width,
        });
    }
    out
}

/// One-hot approach scores with a quarter of the mass on each neighbor.
pub fn smeared_bins(bin: usize, bins: usize) -> Vec<f64> {
    let mut v = alloc::vec![0.0; bins];
    if bins == 0 {
        return v;
    }
    v[bin] = 1.0;
    if bins > 1 {
        v[(bin + 1) % bins] += 0.25;
        v[(bin + bins - 1) % bins] += 0.25;
    }
    v
}

#[allow(clippy::too_many_arguments)]
pub fn simulate_grasp_observations(
    scene: &GroundTruthScene,
    camera: &CameraPose,
    labels: &[&str],
    noise: &GraspNoise,
    bins: usize,
    seed: u64,
    tick: u64,
) -> Vec<GraspObservation> {
    let mut rng = stream_rng(seed, tick, PURPOSE_GRASP);
    let mut out = Vec::new();
    for (i, obj) in scene.objects.iter().enumerate() {
        if !labels.contains(&obj.label()) {
            continue;
        }
        let vis = visibility_of(&scene.objects, i, &camera.position, VISIBILITY_GRID).fraction;
        if vis <= 0.0 {
            continue;
        }
        let quality = (noise.q_base + noise.q_visibility_gain * vis).clamp(0.0, 1.0);
        for g in ground_truth_grasps(&obj.bbox, noise.max_width, bins) {
            for _ in 0..noise.per_grasp {
                let contact = g.contact + gaussian3(&mut rng, noise.sigma_contact);
                let mu = sample_vmf(&mut rng, &g.baseline, noise.kappa_obs);
                out.push(GraspObservation {
                    contact,
                    mu,
                    kappa: noise.kappa_obs.min(KAPPA_CLAMP),
                    approach_bins: smeared_bins(g.approach_bin, bins),
                    width: g.width,
                    quality,
                    tick,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expert {
    XyOverlap,
    LineOfSight,
    Proximity,
}

impl Expert {
    pub fn name(self) -> &'static str {
        match self {
            Expert::XyOverlap => "xy-overlap",
            Expert::LineOfSight => "line-of-sight",
            Expert::Proximity => "proximity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccluderVote {
    pub expert: Expert,
    pub candidates: Vec<(ObjectId, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionHypothesis {
    pub region: OrientedBox,
    pub votes: Vec<OccluderVote>,
    /// `(id, label, Borda score)`, best first.
    pub ranking: Vec<(ObjectId, String, u32)>,
}

impl OcclusionHypothesis {
    pub fn best(&self) -> Option<&(ObjectId, String, u32)> {
        self.ranking.first()
    }
}

fn polygon_area(poly: &[(f64, f64)]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        let (x0, y0) = poly[i];
        let (x1, y1) = poly[(i + 1) % n];
        a += x0 * y1 - x1 * y0;
    }
    (a * 0.5).abs()
}

/// Sutherland-Hodgman clip of `subject` by the counter-clockwise convex
/// polygon `clip`.
fn clip_convex(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = subject.to_vec();
    let n = clip.len();
    for k in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[k];
        let b = clip[(k + 1) % n];
        let side = |p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
        let input = core::mem::take(&mut out);
        for i in 0..input.len() {
            let cur = input[i];
            let prev = input[(i + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    let t = sp / (sp - sc);
                    out.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                let t = sp / (sp - sc);
                out.push((prev.0 + t * (cur.0 - prev.0), prev.1 + t * (cur.1 - prev.1)));
            }
        }
    }
    out
}

pub fn xy_overlap_area(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let pa = xy_footprint(a);
    let pb = xy_footprint(b);
    if !convex_polygons_overlap(&pa, &pb) {
        return 0.0;
    }
    polygon_area(&clip_convex(&pa, &pb))
}

fn region_for(
    snapshot: &SceneSnapshot,
    history: &[SceneSnapshot],
    target_label: &str,
    last_target_region: Option<&OrientedBox>,
) -> Result<OrientedBox, SimError> {
    if let Some(r) = last_target_region {
        return Ok(*r);
    }
    if history.is_empty() {
        return Err(SimError::NoHypothesis);
    }
    for past in history.iter().rev() {
        if let Some(rec) = past.find_label(target_label).max_by_key(|r| r.observation_count) {
            return Ok(rec.bbox);
        }
    }
    // Never seen: the whole observed clutter is the hypothesis region.
    let corners: Vec<Vec3> = snapshot.objects.iter().flat_map(|o| o.bbox.corners()).collect();
    OrientedBox::enclosing_in_frame(&corners, nalgebra::Matrix3::identity()).ok_or(SimError::NoHypothesis)
}

fn ranked(mut scored: Vec<(f64, ObjectId, String)>, descending: bool) -> Vec<(ObjectId, String)> {
    scored.sort_by(|a, b| {
        let c = if descending { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) };
        c.then(a.1.cmp(&b.1))
    });
    scored.into_iter().map(|(_, id, l)| (id, l)).collect()
}

/// Borda aggregation: with `n` candidates, rank `p` (0-based) earns
/// `n - p` points; unranked candidates earn nothing. Ties go to lower ids.
pub fn borda(candidates: &[(ObjectId, String)], votes: &[OccluderVote]) -> Vec<(ObjectId, String, u32)> {
    let n = candidates.len() as u32;
    let mut scores: Vec<(ObjectId, String, u32)> = candidates.iter().map(|(id, l)| (*id, l.clone(), 0)).collect();
    for vote in votes {
        for (p, (id, _)) in vote.candidates.iter().enumerate() {
            if let Some(s) = scores.iter_mut().find(|s| s.0 == *id) {
                s.2 += n.saturating_sub(p as u32);
            }
        }
    }
    scores.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    scores
}

/// Ranks the objects of `snapshot` by how likely they hide the target.
pub fn infer_occluders(
    snapshot: &SceneSnapshot,
    history: &[SceneSnapshot],
    target_label: &str,
    last_target_region: Option<&OrientedBox>,
    camera: &Vec3,
) -> Result<OcclusionHypothesis, SimError> {
    let region = region_for(snapshot, history, target_label, last_target_region)?;
    let candidates: Vec<(ObjectId, String)> = snapshot
        .objects
        .iter()
        .filter(|o| o.label() != target_label)
        .map(|o| (o.id, o.description.label.clone()))
        .collect();
    let objects: Vec<_> = snapshot.objects.iter().filter(|o| o.label() != target_label).collect();

    let overlap: Vec<(f64, ObjectId, String)> = objects
        .iter()
        .map(|o| (xy_overlap_area(&o.bbox, &region), o.id, o.description.label.clone()))
        .filter(|(a, _, _)| *a > 0.0)
        .collect();

    let mut probes: Vec<Vec3> = region.corners().to_vec();
    probes.push(region.center);
    let sight: Vec<(f64, ObjectId, String)> = objects
        .iter()
        .map(|o| {
            let hits = probes
                .iter()
                .filter(|p| {
                    let to = *p - camera;
                    let d = to.norm();
                    d > 1e-12
                        && ray_box_intersect(camera, &Unit::new_unchecked(to / d), &o.bbox).is_some_and(|t| t < d - 1e-9)
                })
                .count();
            (hits as f64, o.id, o.description.label.clone())
        })
        .filter(|(h, _, _)| *h > 0.0)
        .collect();

    let near: Vec<(f64, ObjectId, String)> = objects
        .iter()
        .map(|o| ((o.bbox.center - region.center).norm(), o.id, o.description.label.clone()))
        .collect();

    let votes = alloc::vec![
        OccluderVote { expert: Expert::XyOverlap, candidates: ranked(overlap, true) },
        OccluderVote { expert: Expert::LineOfSight, candidates: ranked(sight, true) },
        OccluderVote { expert: Expert::Proximity, candidates: ranked(near, false) },
    ];
    let ranking = borda(&candidates, &votes);
    Ok(OcclusionHypothesis { region, votes, ranking })
}

pub fn remove_object(scene: &GroundTruthScene, label: &str) -> Result<GroundTruthScene, SimError> {
    let idx = scene
        .objects
        .iter()
        .position(|o| o.label() == label)
        .ok_or_else(|| SimError::UnknownLabel(label.into()))?;
    let mut out = scene.clone();
    out.objects.remove(idx);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutionModel {
    /// Chance that a successful pick also disturbs a neighbor.
    pub disturb_prob: f64,
    /// Finger clearance: a taller neighbor inside this margin is hit.
    pub collision_clearance: f64,
}

impl Default for ExecutionModel {
    fn default() -> Self {
        Self {
            disturb_prob: 0.02,
            collision_clearance: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspOutcome {
    Success,
    Failure,
    Collision,
    Disturbed,
}

/// Whether grasping `label` would hit a taller neighbor within the finger
/// clearance.
pub fn grasp_collides(scene: &GroundTruthScene, label: &str, clearance: f64) -> Result<bool, SimError> {
    let obj = scene.find(label).ok_or_else(|| SimError::UnknownLabel(label.into()))?;
    let grown = obj.bbox.expanded(clearance);
    let top = obj.bbox.max_z();
    Ok(scene
        .objects
        .iter()
        .filter(|o| o.label() != label)
        .any(|o| o.bbox.max_z() > top && boxes_intersect(&grown, &o.bbox)))
}

/// Simulated pick of `label`: succeeds with probability `quality`. On
/// success the object leaves the scene unless the pick disturbed a
/// neighbor, in which case the scene is reset.
pub fn execute_grasp(
    scene: &GroundTruthScene,
    label: &str,
    quality: f64,
    model: &ExecutionModel,
    seed: u64,
    tick: u64,
) -> Result<(GraspOutcome, GroundTruthScene), SimError> {
    if grasp_collides(scene, label, model.collision_clearance)? {
        return Ok((GraspOutcome::Collision, scene.clone()));
    }
    let mut rng = stream_rng(seed, tick, PURPOSE_EXECUTE);
    let pick: f64 = rng.random();
    let disturb: f64 = rng.random();
    if pick >= quality.clamp(0.0, 1.0) {
        return Ok((GraspOutcome::Failure, scene.clone()));
    }
    if disturb < model.disturb_prob {
        return Ok((GraspOutcome::Disturbed, scene.clone()));
    }
    Ok((GraspOutcome::Success, remove_object(scene, label)?))
}
