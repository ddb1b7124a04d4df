//! Rule-based spatial relations between oriented boxes and the grasp
//! strategy derived from them.
//!
//! Relations are stored per ordered pair `(i, j)` and read as
//! "`i` is <relation> relative to `j`":
//!
//! * `PROXIMITY`: the two boxes intersect after growing every half-extent by
//!   `proximity_expansion` (symmetric).
//! * `BELOW`: `min_z(j) - max_z(i) > gamma_below` and the xy footprints
//!   overlap.
//! * `HIGH` / `LOW`: `max_z(i) - max_z(j)` above `gamma_hl` / below
//!   `-gamma_hl`.

use alloc::vec::Vec;

use thiserror::Error;

use crate::geom::{OrientedBox, Vec3};
use crate::scene::{ObjectId, SceneSnapshot};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelationConfig {
    pub proximity_expansion: f64,
    pub gamma_below: f64,
    pub gamma_hl: f64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            proximity_expansion: 0.02,
            gamma_below: 0.01,
            gamma_hl: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RelationSet(u8);

impl RelationSet {
    pub const EMPTY: Self = Self(0);
    pub const PROXIMITY: Self = Self(1);
    pub const BELOW: Self = Self(2);
    pub const HIGH: Self = Self(4);
    pub const LOW: Self = Self(8);

    pub fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn insert(&mut self, other: Self) {
        self.0 |= other.0;
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl core::ops::BitOr for RelationSet {
    type Output = Self;
    fn bitor(self, rhs: Self) -> Self {
        Self(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    ids: Vec<ObjectId>,
    rels: Vec<RelationSet>,
}

impl RelationGraph {
    pub fn ids(&self) -> &[ObjectId] {
        &self.ids
    }

    fn index(&self, id: ObjectId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Relations of `i` relative to `j`; empty for unknown ids.
    pub fn get(&self, i: ObjectId, j: ObjectId) -> RelationSet {
        match (self.index(i), self.index(j)) {
            (Some(a), Some(b)) => self.rels[a * self.ids.len() + b],
            _ => RelationSet::EMPTY,
        }
    }

    pub fn has(&self, i: ObjectId, j: ObjectId, rel: RelationSet) -> bool {
        self.get(i, j).contains(rel)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StrategyAction {
    GraspTarget,
    RemoveOccluder(ObjectId),
    TriggerNbv(Vec<ObjectId>),
}

/// Which strategy rule produced the decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyRule {
    /// The target is below another object; that object goes first.
    TargetBelow,
    /// High objects in proximity; view planning is needed.
    HighOccluder,
    /// Only low neighbors, which do not obstruct the grasp.
    LowIgnored,
    /// No relation affects the target.
    Unobstructed,
}

impl StrategyRule {
    pub fn tag(self) -> &'static str {
        match self {
            StrategyRule::TargetBelow => "i",
            StrategyRule::HighOccluder => "ii+iv",
            StrategyRule::LowIgnored => "iii",
            StrategyRule::Unobstructed => "-",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategyDecision {
    pub action: StrategyAction,
    pub rationale: StrategyRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelationError {
    #[error("snapshot has no designated target")]
    NoTarget,
    #[error("the below relation contains a cycle")]
    CycleDetected { fallback: Vec<ObjectId> },
}

type P2 = (f64, f64);

fn cross2(o: P2, a: P2, b: P2) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull (counter-clockwise, no collinear points) of the box corners
/// projected on the xy-plane.
pub fn xy_footprint(b: &OrientedBox) -> Vec<P2> {
    let mut pts: Vec<P2> = b.corners().iter().map(|c| (c.x, c.y)).collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<P2> = Vec::with_capacity(pts.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Vec<P2> = if pass == 0 { pts.clone() } else { pts.iter().rev().copied().collect() };
        for p in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

fn project_interval(poly: &[P2], axis: P2) -> (f64, f64) {
    poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.0 * axis.0 + p.1 * axis.1;
        (lo.min(d), hi.max(d))
    })
}

/// Closed overlap test of two convex polygons via separating axes.
pub fn convex_polygons_overlap(a: &[P2], b: &[P2]) -> bool {
    for poly in [a, b] {
        let n = poly.len();
        for k in 0..n {
            let p = poly[k];
            let q = poly[(k + 1) % n];
            let axis = (q.1 - p.1, p.0 - q.0);
            if axis.0 == 0.0 && axis.1 == 0.0 {
                continue;
            }
            let (a_lo, a_hi) = project_interval(a, axis);
            let (b_lo, b_hi) = project_interval(b, axis);
            if a_hi < b_lo || b_hi < a_lo {
                return false;
            }
        }
    }
    true
}

pub fn xy_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    convex_polygons_overlap(&xy_footprint(a), &xy_footprint(b))
}

/// Closed intersection test of two oriented boxes (15-axis separating axis
/// theorem).
pub fn boxes_intersect(a: &OrientedBox, b: &OrientedBox) -> bool {
    let t = b.center - a.center;
    let mut axes: Vec<Vec3> = Vec::with_capacity(15);
    for i in 0..3 {
        axes.push(a.axis(i));
        axes.push(b.axis(i));
    }
    for i in 0..3 {
        for j in 0..3 {
            let c = a.axis(i).cross(&b.axis(j));
            if c.norm() > 1e-9 {
                axes.push(c.normalize());
            }
        }
    }
    axes.iter()
        .all(|l| t.dot(l).abs() <= a.support_radius(l) + b.support_radius(l))
}

pub fn compute_relations(snapshot: &SceneSnapshot, cfg: &RelationConfig) -> RelationGraph {
    let objs = &snapshot.objects;
    let n = objs.len();
    let expanded: Vec<OrientedBox> = objs.iter().map(|o| o.bbox.expanded(cfg.proximity_expansion)).collect();
    let footprints: Vec<Vec<P2>> = objs.iter().map(|o| xy_footprint(&o.bbox)).collect();
    let zs: Vec<(f64, f64)> = objs.iter().map(|o| (o.bbox.min_z(), o.bbox.max_z())).collect();
    let mut rels = alloc::vec![RelationSet::EMPTY; n * n];

    for i in 0..n {
        for j in (i + 1)..n {
            let mut ij = RelationSet::EMPTY;
            let mut ji = RelationSet::EMPTY;
            if boxes_intersect(&expanded[i], &expanded[j]) {
                ij.insert(RelationSet::PROXIMITY);
                ji.insert(RelationSet::PROXIMITY);
            }
            let below_ij = zs[j].0 - zs[i].1 > cfg.gamma_below;
            let below_ji = zs[i].0 - zs[j].1 > cfg.gamma_below;
            if (below_ij || below_ji) && convex_polygons_overlap(&footprints[i], &footprints[j]) {
                if below_ij {
                    ij.insert(RelationSet::BELOW);
                }
                if below_ji {
                    ji.insert(RelationSet::BELOW);
                }
            }
            let h = zs[i].1 - zs[j].1;
            if h > cfg.gamma_hl {
                ij.insert(RelationSet::HIGH);
                ji.insert(RelationSet::LOW);
            } else if h < -cfg.gamma_hl {
                ij.insert(RelationSet::LOW);
                ji.insert(RelationSet::HIGH);
            }
            rels[i * n + j] = ij;
            rels[j * n + i] = ji;
        }
    }
    RelationGraph {
        ids: objs.iter().map(|o| o.id).collect(),
        rels,
    }
}

pub fn decide_strategy(
    snapshot: &SceneSnapshot,
    graph: &RelationGraph,
    _cfg: &RelationConfig,
) -> Result<StrategyDecision, RelationError> {
    let target = snapshot.target().ok_or(RelationError::NoTarget)?;
    let t = target.id;
    let top = target.bbox.max_z();

    let above = snapshot
        .objects
        .iter()
        .filter(|o| o.id != t && graph.has(t, o.id, RelationSet::BELOW))
        .map(|o| (o.bbox.min_z() - top, o.id))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if let Some((_, id)) = above {
        return Ok(StrategyDecision {
            action: StrategyAction::RemoveOccluder(id),
            rationale: StrategyRule::TargetBelow,
        });
    }

    let mut high = Vec::new();
    let mut low_seen = false;
    for o in snapshot.objects.iter().filter(|o| o.id != t) {
        let rel = graph.get(o.id, t);
        if !rel.contains(RelationSet::PROXIMITY) {
            continue;
        }
        if rel.contains(RelationSet::HIGH) {
            high.push(o.id);
        } else if rel.contains(RelationSet::LOW) {
            low_seen = true;
        }
    }
    if !high.is_empty() {
        return Ok(StrategyDecision {
            action: StrategyAction::TriggerNbv(high),
            rationale: StrategyRule::HighOccluder,
        });
    }
    Ok(StrategyDecision {
        action: StrategyAction::GraspTarget,
        rationale: if low_seen {
            StrategyRule::LowIgnored
        } else {
            StrategyRule::Unobstructed
        },
    })
}

/// Removal sequence for every non-target object: whatever rests above goes
/// first; otherwise taller objects first, then lower ids.
pub fn removal_order(snapshot: &SceneSnapshot, graph: &RelationGraph) -> Result<Vec<ObjectId>, RelationError> {
    let objs = &snapshot.objects;
    let key = |i: usize| (objs[i].bbox.max_z(), objs[i].id);
    let better = |a: usize, b: usize| {
        let (za, ia) = key(a);
        let (zb, ib) = key(b);
        zb.total_cmp(&za).then(ia.cmp(&ib))
    };

    let n = objs.len();
    let mut done = alloc::vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        // free: nothing unprocessed rests above it
        let next = (0..n)
            .filter(|&i| !done[i])
            .filter(|&i| !(0..n).any(|j| !done[j] && j != i && graph.has(objs[i].id, objs[j].id, RelationSet::BELOW)))
            .min_by(|&a, &b| better(a, b));
        match next {
            Some(i) => {
                done[i] = true;
                order.push(i);
            }
            None => {
                let mut fallback: Vec<usize> = (0..n).collect();
                fallback.sort_by(|&a, &b| better(a, b));
                return Err(RelationError::CycleDetected {
                    fallback: fallback
                        .into_iter()
                        .map(|i| objs[i].id)
                        .filter(|id| Some(*id) != snapshot.target_id)
                        .collect(),
                });
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|i| objs[i].id)
        .filter(|id| Some(*id) != snapshot.target_id)
        .collect())
}

/// [`removal_order`] with the cycle fallback applied.
pub fn removal_order_or_fallback(snapshot: &SceneSnapshot, graph: &RelationGraph) -> Vec<ObjectId> {
    match removal_order(snapshot, graph) {
        Ok(v) => v,
        Err(RelationError::CycleDetected { fallback }) => fallback,
        Err(RelationError::NoTarget) => Vec::new(),
    }
}
