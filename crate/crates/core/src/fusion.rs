//! Multi-view contact-grasp fusion with von Mises-Fisher baselines.
//!
//! Each fused grasp keeps the natural parameter `eta = sum(kappa * mu)` of
//! its baseline distribution, so conjugate updates are plain additions and
//! the fused mean direction is `eta / |eta|`. Incoming observations are
//! either cross-fused into the nearest compatible grasp of the buffer or
//! clustered among themselves (DBSCAN over contact points) and appended.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::PI;

use nalgebra::Unit;

use crate::geom::{UnitVec3, Vec3};

pub type GraspId = u64;

/// How the fused concentration is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KappaMode {
    /// `kappa = |eta|`: discordant observations deflate confidence.
    #[default]
    Natural,
    /// `kappa = sum of all observed kappas`.
    Additive,
}

/// Direction of the baseline-similarity test for cross-fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProximalGate {
    /// Fuse when the cosine distance is below `gamma_theta`.
    #[default]
    Similar,
    /// Fuse when the cosine distance exceeds `gamma_theta`.
    Dissimilar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub gamma_d: f64,
    pub gamma_theta: f64,
    pub q_max: f64,
    pub kappa_max: f64,
    pub dbscan_eps: f64,
    pub dbscan_min_pts: usize,
    pub bins: usize,
    pub kappa_mode: KappaMode,
    pub gate: ProximalGate,
    /// Single-observation grasps unseen for longer than this are dropped.
    pub stale_ticks: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            gamma_d: 0.02,
            gamma_theta: 0.1,
            q_max: 0.9,
            kappa_max: 50.0,
            dbscan_eps: 0.01,
            dbscan_min_pts: 2,
            bins: 6,
            kappa_mode: KappaMode::Natural,
            gate: ProximalGate::Similar,
            stale_ticks: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspObservation {
    pub contact: Vec3,
    pub mu: UnitVec3,
    pub kappa: f64,
    pub approach_bins: Vec<f64>,
    pub width: f64,
    pub quality: f64,
    pub tick: u64,
}

impl GraspObservation {
    fn eta(&self) -> Vec3 {
        self.mu.into_inner() * self.kappa
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactGrasp {
    pub id: GraspId,
    pub contact: Vec3,
    /// Natural parameter of the baseline vMF.
    pub eta: Vec3,
    /// Sum of every concentration fused so far.
    pub kappa_sum: f64,
    pub approach_bins: Vec<f64>,
    pub width: f64,
    pub quality: f64,
    pub update_count: u32,
    pub last_seen_tick: u64,
}

impl ContactGrasp {
    /// Flat prior: no direction information, no quality weight.
    pub fn flat(id: GraspId, bins: usize) -> Self {
        Self {
            id,
            contact: Vec3::zeros(),
            eta: Vec3::zeros(),
            kappa_sum: 0.0,
            approach_bins: alloc::vec![0.0; bins],
            width: 0.0,
            quality: 0.0,
            update_count: 0,
            last_seen_tick: 0,
        }
    }

    pub fn kappa(&self, mode: KappaMode) -> f64 {
        match mode {
            KappaMode::Natural => self.eta.norm(),
            KappaMode::Additive => self.kappa_sum,
        }
    }

    pub fn mean_direction(&self) -> Option<UnitVec3> {
        Unit::try_new(self.eta, 1e-300)
    }

    /// The kappa-weighted average of observed directions, not renormalized.
    pub fn weighted_mean(&self) -> Option<Vec3> {
        (self.kappa_sum > 0.0).then(|| self.eta / self.kappa_sum)
    }
}

fn cosine_distance(a: &Vec3, b: &Vec3) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - a.dot(b) / (na * nb)
}

fn gate_passes(cfg: &FusionConfig, grasp: &ContactGrasp, obs: &GraspObservation) -> Option<f64> {
    let dist = (obs.contact - grasp.contact).norm();
    if !(dist < cfg.gamma_d) {
        return None;
    }
    let cd = cosine_distance(&grasp.eta, &obs.mu.into_inner());
    let ok = match cfg.gate {
        ProximalGate::Similar => cd < cfg.gamma_theta,
        ProximalGate::Dissimilar => cd > cfg.gamma_theta,
    };
    ok.then_some(dist)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Categorization {
    /// `(observation index, grasp id)` for every proximal observation.
    pub proximal: Vec<(usize, GraspId)>,
    /// Indices of observations that match no fused grasp.
    pub new: Vec<usize>,
}

/// Splits observations into cross-fusion assignments (nearest compatible
/// grasp, ties to the lower id) and the new set.
pub fn categorize(buffer: &[ContactGrasp], incoming: &[GraspObservation], cfg: &FusionConfig) -> Categorization {
    let mut out = Categorization::default();
    for (j, obs) in incoming.iter().enumerate() {
        let best = buffer
            .iter()
            .filter_map(|g| gate_passes(cfg, g, obs).map(|d| (d, g.id)))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        match best {
            Some((_, id)) => out.proximal.push((j, id)),
            None => out.new.push(j),
        }
    }
    out
}

/// DBSCAN over points; returns clusters of point indices in discovery
/// order. Noise points come back as singleton clusters after the real ones.
pub fn dbscan(points: &[Vec3], eps: f64, min_pts: usize) -> Vec<Vec<usize>> {
    const UNVISITED: usize = usize::MAX;
    const NOISE: usize = usize::MAX - 1;
    let n = points.len();
    let neighbors = |i: usize| -> Vec<usize> { (0..n).filter(|&j| (points[i] - points[j]).norm() <= eps).collect() };
    let mut label = alloc::vec![UNVISITED; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();

    for i in 0..n {
        if label[i] != UNVISITED {
            continue;
        }
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            label[i] = NOISE;
            continue;
        }
        let c = clusters.len();
        clusters.push(alloc::vec![i]);
        label[i] = c;
        let mut queue: Vec<usize> = seeds;
        let mut k = 0;
        while k < queue.len() {
            let q = queue[k];
            k += 1;
            if label[q] == NOISE {
                label[q] = c;
                clusters[c].push(q);
                continue;
            }
            if label[q] != UNVISITED {
                continue;
            }
            label[q] = c;
            clusters[c].push(q);
            let nq = neighbors(q);
            if nq.len() >= min_pts {
                queue.extend(nq);
            }
        }
    }
    for (i, l) in label.iter().enumerate() {
        if *l == NOISE {
            clusters.push(alloc::vec![i]);
        }
    }
    for c in &mut clusters {
        c.sort_unstable();
    }
    clusters
}

/// Quality-weighted mean; plain mean when every weight is zero.
fn qmean_vec(items: &[(f64, Vec3)]) -> Vec3 {
    let w: f64 = items.iter().map(|(q, _)| q).sum();
    if w > 0.0 {
        items.iter().fold(Vec3::zeros(), |acc, (q, v)| acc + v * *q) / w
    } else {
        items.iter().fold(Vec3::zeros(), |acc, (_, v)| acc + v) / items.len() as f64
    }
}

fn qmean(items: &[(f64, f64)]) -> f64 {
    let w: f64 = items.iter().map(|(q, _)| q).sum();
    if w > 0.0 {
        items.iter().map(|(q, v)| q * v).sum::<f64>() / w
    } else {
        items.iter().map(|(_, v)| v).sum::<f64>() / items.len() as f64
    }
}

/// Conjugate update of a grasp with a group of observations.
///
/// Contact and width use the quality-weighted average with the prior's
/// fused quality as its weight. Quality becomes the quality-weighted mean
/// of all qualities in the pool, capped to `[0, 1]`. A prior with
/// `update_count == 0` is flat and contributes nothing.
pub fn fuse_cluster(prior: &ContactGrasp, obs: &[GraspObservation]) -> ContactGrasp {
    let mut out = prior.clone();
    if obs.is_empty() {
        return out;
    }
    let with_prior = prior.update_count > 0;

    let mut contacts: Vec<(f64, Vec3)> = Vec::with_capacity(obs.len() + 1);
    let mut widths: Vec<(f64, f64)> = Vec::with_capacity(obs.len() + 1);
    if with_prior {
        contacts.push((prior.quality, prior.contact));
        widths.push((prior.quality, prior.width));
    }
    for o in obs {
        contacts.push((o.quality, o.contact));
        widths.push((o.quality, o.width));
    }
    out.contact = qmean_vec(&contacts);
    out.width = qmean(&widths);
    let q_pool: Vec<(f64, f64)> = contacts.iter().map(|(q, _)| (*q, *q)).collect();
    out.quality = qmean(&q_pool).clamp(0.0, 1.0);

    for o in obs {
        out.eta += o.eta();
        out.kappa_sum += o.kappa;
        for (dst, src) in out.approach_bins.iter_mut().zip(&o.approach_bins) {
            *dst += src;
        }
    }
    out.update_count += obs.len() as u32;
    out.last_seen_tick = obs.iter().map(|o| o.tick).max().unwrap_or(prior.last_seen_tick).max(prior.last_seen_tick);
    out
}

/// Clusters brand-new observations and fuses each cluster from a flat
/// prior. Ids are assigned sequentially from `first_id`.
pub fn self_fuse(new_obs: &[GraspObservation], cfg: &FusionConfig, first_id: GraspId) -> Vec<ContactGrasp> {
    let contacts: Vec<Vec3> = new_obs.iter().map(|o| o.contact).collect();
    dbscan(&contacts, cfg.dbscan_eps, cfg.dbscan_min_pts.max(1))
        .into_iter()
        .enumerate()
        .map(|(k, members)| {
            let group: Vec<GraspObservation> = members.iter().map(|&i| new_obs[i].clone()).collect();
            fuse_cluster(&ContactGrasp::flat(first_id + k as u64, cfg.bins), &group)
        })
        .collect()
}

fn cmp_vec(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Total order used to make ingestion independent of input order.
fn cmp_observation(a: &GraspObservation, b: &GraspObservation) -> Ordering {
    a.tick
        .cmp(&b.tick)
        .then_with(|| cmp_vec(&a.contact, &b.contact))
        .then_with(|| cmp_vec(&a.mu, &b.mu))
        .then_with(|| a.kappa.total_cmp(&b.kappa))
        .then_with(|| a.quality.total_cmp(&b.quality))
        .then_with(|| a.width.total_cmp(&b.width))
        .then_with(|| {
            a.approach_bins
                .iter()
                .zip(&b.approach_bins)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(a.approach_bins.len().cmp(&b.approach_bins.len()))
        })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestGrasp {
    pub id: GraspId,
    pub quality: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Execute(GraspId),
    Continue,
    Reprioritize,
}

/// Which execution criterion fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    /// Quality and concentration both above threshold.
    Confident,
    /// The view field stagnated.
    Stagnation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TerminationVerdict {
    pub decision: Decision,
    pub criterion: Option<Criterion>,
}

/// Buffer of fused grasps. `ingest` takes `&mut self`, queries take
/// `&self`, so a query always sees a whole tick.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspEngine {
    cfg: FusionConfig,
    buffer: Vec<ContactGrasp>,
    next_id: GraspId,
    tick: u64,
}

impl GraspEngine {
    pub fn new(cfg: FusionConfig) -> Self {
        Self {
            cfg,
            buffer: Vec::new(),
            next_id: 0,
            tick: 0,
        }
    }

    pub fn config(&self) -> &FusionConfig {
        &self.cfg
    }

    pub fn buffer(&self) -> &[ContactGrasp] {
        &self.buffer
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn get(&self, id: GraspId) -> Option<&ContactGrasp> {
        self.buffer.iter().find(|g| g.id == id)
    }

    pub fn ingest(&mut self, tick: u64, incoming: &[GraspObservation]) {
        self.tick = self.tick.max(tick);
        let mut obs: Vec<GraspObservation> = incoming.to_vec();
        obs.sort_by(cmp_observation);

        let cat = categorize(&self.buffer, &obs, &self.cfg);
        let mut groups: Vec<(GraspId, Vec<GraspObservation>)> = Vec::new();
        for (j, id) in &cat.proximal {
            match groups.iter_mut().find(|(g, _)| g == id) {
                Some((_, v)) => v.push(obs[*j].clone()),
                None => groups.push((*id, alloc::vec![obs[*j].clone()])),
            }
        }
        for (id, group) in &groups {
            if let Some(g) = self.buffer.iter_mut().find(|g| g.id == *id) {
                *g = fuse_cluster(g, group);
            }
        }

        let fresh: Vec<GraspObservation> = cat.new.iter().map(|&j| obs[j].clone()).collect();
        let fused = self_fuse(&fresh, &self.cfg, self.next_id);
        self.next_id += fused.len() as u64;
        self.buffer.extend(fused);

        let now = self.tick;
        let stale = self.cfg.stale_ticks;
        self.buffer
            .retain(|g| g.update_count > 1 || now.saturating_sub(g.last_seen_tick) <= stale);
    }

    /// Highest quality; ties go to larger kappa, then lower id.
    pub fn best_grasp(&self) -> Option<BestGrasp> {
        let mode = self.cfg.kappa_mode;
        self.buffer
            .iter()
            .max_by(|a, b| {
                a.quality
                    .total_cmp(&b.quality)
                    .then(a.kappa(mode).total_cmp(&b.kappa(mode)))
                    .then(b.id.cmp(&a.id))
            })
            .map(|g| BestGrasp {
                id: g.id,
                quality: g.quality,
                kappa: g.kappa(mode),
            })
    }

    pub fn evaluate_termination(&self, field_speed: f64, eps_stag: f64) -> TerminationVerdict {
        let best = self.best_grasp();
        let cfg = &self.cfg;
        if let Some(b) = best {
            if b.quality > cfg.q_max && b.kappa > cfg.kappa_max {
                return TerminationVerdict {
                    decision: Decision::Execute(b.id),
                    criterion: Some(Criterion::Confident),
                };
            }
        }
        if field_speed < eps_stag {
            let decision = match best {
                Some(b) if b.quality > cfg.q_max => Decision::Execute(b.id),
                _ => Decision::Reprioritize,
            };
            return TerminationVerdict {
                decision,
                criterion: Some(Criterion::Stagnation),
            };
        }
        TerminationVerdict {
            decision: Decision::Continue,
            criterion: None,
        }
    }
}

/// vMF density on the 2-sphere, `kappa / (4 pi sinh kappa) * exp(kappa mu.b)`,
/// evaluated in a form that does not overflow for large kappa.
pub fn vmf_density(b: &UnitVec3, mu: &UnitVec3, kappa: f64) -> f64 {
    if kappa <= 0.0 {
        return 1.0 / (4.0 * PI);
    }
    let t = b.dot(mu);
    // kappa / (4 pi sinh kappa) * e^{kappa t}
    //   = kappa / (2 pi (1 - e^{-2 kappa})) * e^{kappa (t - 1)}
    let norm = kappa / (2.0 * PI * -libm::expm1(-2.0 * kappa));
    norm * libm::exp(kappa * (t - 1.0))
}

/// Mean resultant length of a 3D vMF: `coth(kappa) - 1/kappa`.
pub fn vmf_mean_resultant_length(kappa: f64) -> f64 {
    if kappa < 1e-6 {
        return kappa / 3.0;
    }
    1.0 / libm::tanh(kappa) - 1.0 / kappa
}
