use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viso_core::fusion::vmf_mean_resultant_length;
use viso_core::geom::{CameraPose, OrientedBox, Vec3};
use viso_core::nbv::ViewSphere;
use viso_core::relations::{compute_relations, removal_order, RelationConfig, RelationGraph, RelationSet};
use viso_core::scene::{ObjectDescription, ObjectRecord, SceneSnapshot};
use viso_core::simenv::*;

fn obj(label: &str, center: Vec3, half: Vec3) -> SceneObject {
    SceneObject {
        description: ObjectDescription::new(label),
        bbox: OrientedBox::axis_aligned(center, half),
    }
}

fn scene(objects: Vec<SceneObject>, target: &str) -> GroundTruthScene {
    GroundTruthScene {
        objects,
        target_label: target.into(),
        table_height: 0.0,
        sphere: ViewSphere::new(Vec3::new(0.0, 0.0, 0.05), 0.6).unwrap(),
        initial_view: (0.0, 0.8),
        target_hint: None,
        seed: 0,
    }
}

fn cam(p: Vec3) -> CameraPose {
    CameraPose::look_at(p, &Vec3::new(0.0, 0.0, 0.05))
}

/// Slab test for axis-aligned boxes.
fn aabb_hit(origin: &Vec3, dir: &Vec3, b: &OrientedBox) -> Option<f64> {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        let (min, max) = (b.center[k] - b.half_extents[k], b.center[k] + b.half_extents[k]);
        if dir[k].abs() < 1e-15 {
            if origin[k] < min || origin[k] > max {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((min - origin[k]) / dir[k], (max - origin[k]) / dir[k]);
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    (lo <= hi).then_some(lo)
}

#[test]
fn half_wall_visibility_matches_dense_sampling() {
    let target = obj("target", Vec3::new(0.0, 0.0, 0.05), Vec3::repeat(0.05));
    let wall = obj("wall", Vec3::new(0.3, -0.25, 0.05), Vec3::new(0.005, 0.25, 0.3));
    let s = scene(vec![target, wall], "target");
    let eye = Vec3::new(1.0, 0.0, 0.05);
    let got = visibility(&s, &CameraPose::look_at(eye, &Vec3::new(0.0, 0.0, 0.05)), "target").unwrap();

    // frontal camera: only the +x face is visible
    let n = 100;
    let mut free = 0;
    for i in 0..n {
        for j in 0..n {
            let y = -0.05 + 0.1 * (i as f64 + 0.5) / n as f64;
            let z = 0.1 * (j as f64 + 0.5) / n as f64;
            let p = Vec3::new(0.05, y, z);
            let d = p - eye;
            let dist = d.norm();
            if aabb_hit(&eye, &(d / dist), &s.objects[1].bbox).is_none_or(|t| t >= dist) {
                free += 1;
            }
        }
    }
    let dense = free as f64 / (n * n) as f64;
    assert!((dense - 0.5).abs() <= 0.1, "dense {dense}");
    assert!((got.fraction - 0.5).abs() <= 0.1, "grid {}", got.fraction);
    assert!((got.fraction - dense).abs() <= 0.1);
    assert!(got.blocked_by.iter().all(|l| l == "wall"));
}

#[test]
fn removal_never_decreases_visibility() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..200 {
        let mut objects = vec![obj("target", Vec3::new(0.0, 0.0, 0.04), Vec3::repeat(0.04))];
        for k in 0..rng.random_range(1..6) {
            let c = Vec3::new(rng.random_range(-0.25..0.25), rng.random_range(-0.25..0.25), rng.random_range(0.02..0.2));
            let h = Vec3::new(rng.random_range(0.01..0.08), rng.random_range(0.01..0.08), rng.random_range(0.01..0.08));
            objects.push(obj(&format!("o{k}"), c, h));
        }
        let s = scene(objects, "target");
        let eye = s.sphere.point_at(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.1..1.4));
        let before = visibility(&s, &cam(eye), "target").unwrap();
        for k in 1..s.objects.len() {
            let label = s.objects[k].label().to_string();
            let after = visibility(&remove_object(&s, &label).unwrap(), &cam(eye), "target").unwrap();
            assert!(after.fraction >= before.fraction);
            assert_eq!(after.sample_count, before.sample_count);
        }
    }
}

#[test]
fn center_noise_matches_gaussian_statistics() {
    let s = scene(vec![obj("cup", Vec3::new(0.0, 0.0, 0.05), Vec3::repeat(0.04))], "cup");
    let noise = DetectorNoise { sigma_center: 0.01, ..Default::default() };
    let camera = cam(Vec3::new(0.3, 0.2, 0.4));
    let mut abs_sum = 0.0;
    let mut count = 0;
    for seed in 0..1000 {
        let d = simulate_detections(&s, &camera, &noise, seed, 1);
        assert_eq!(d.len(), 1);
        let e = d[0].bbox.center - s.objects[0].bbox.center;
        abs_sum += e.x.abs() + e.y.abs() + e.z.abs();
        count += 3;
    }
    let mean = abs_sum / count as f64;
    let expected = 0.01 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((0.0075..=0.0125).contains(&mean), "{mean}");
    assert!((mean - expected).abs() < 0.05 * expected, "{mean} vs {expected}");
}

#[test]
fn vmf_samples_have_the_right_resultant_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mu = Unit::new_normalize(Vec3::new(0.2, -0.7, 0.4));
    let n = 1000;
    let sum = (0..n).fold(Vec3::zeros(), |acc, _| acc + sample_vmf(&mut rng, &mu, 20.0).into_inner());
    let r = (sum / n as f64).norm();
    let expected = 1.0 / 20f64.tanh() - 1.0 / 20.0;
    assert!((r - expected).abs() < 0.01, "{r} vs {expected}");
    assert!((vmf_mean_resultant_length(20.0) - expected).abs() < 1e-15);
}

#[test]
fn simulated_grasps_follow_the_vmf_relation() {
    // only the 6 cm axis is graspable
    let s = scene(vec![obj("box", Vec3::new(0.0, 0.0, 0.05), Vec3::new(0.03, 0.06, 0.05))], "box");
    let noise = GraspNoise { per_grasp: 2000, ..Default::default() };
    let obs = simulate_grasp_observations(&s, &cam(Vec3::new(0.3, 0.1, 0.4)), &["box"], &noise, 6, 4, 2);
    assert_eq!(obs.len(), 2000);
    let cosines: Vec<f64> = obs.iter().map(|o| o.mu.dot(&Vec3::x())).collect();
    let n = cosines.len() as f64;
    let mean = cosines.iter().sum::<f64>() / n;
    let var = cosines.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0);
    let a = vmf_mean_resultant_length(noise.kappa_obs);
    assert!((mean - a).abs() < 3.0 * (var / n).sqrt(), "{mean} vs {a}");
    for o in &obs {
        assert!((0.0..=1.0).contains(&o.quality));
        assert_eq!(o.approach_bins.iter().sum::<f64>(), 1.5);
    }
}

fn record(id: u64, label: &str, bbox: OrientedBox) -> ObjectRecord {
    ObjectRecord {
        id,
        description: ObjectDescription::new(label),
        bbox,
        observation_count: 1,
        last_seen_tick: 0,
        is_target: false,
    }
}

/// Rank positions of an expert vote, by brute force.
fn borda_oracle(candidates: &[u64], votes: &[Vec<u64>]) -> Vec<(u64, u32)> {
    let n = candidates.len() as u32;
    let mut scores: Vec<(u64, u32)> = candidates
        .iter()
        .map(|&c| {
            let s = votes
                .iter()
                .map(|v| v.iter().position(|&x| x == c).map_or(0, |p| n - p as u32))
                .sum();
            (c, s)
        })
        .collect();
    // exhaustive: a candidate precedes another iff it scores more, or ties
    // with a lower id
    let mut out = Vec::new();
    while !scores.is_empty() {
        let k = (0..scores.len())
            .find(|&i| scores.iter().all(|o| scores[i].1 > o.1 || (scores[i].1 == o.1 && scores[i].0 <= o.0)))
            .unwrap();
        out.push(scores.remove(k));
    }
    out
}

#[test]
fn borda_matches_enumeration_on_random_votes() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..500 {
        let n = rng.random_range(1..7u64);
        let candidates: Vec<(u64, String)> = (0..n).map(|i| (i * 3 + 1, format!("c{i}"))).collect();
        let ids: Vec<u64> = candidates.iter().map(|c| c.0).collect();
        let mut votes = Vec::new();
        let mut raw = Vec::new();
        for expert in [Expert::XyOverlap, Expert::LineOfSight, Expert::Proximity] {
            let mut v: Vec<u64> = ids.iter().copied().filter(|_| rng.random_bool(0.7)).collect();
            for i in (1..v.len()).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            votes.push(OccluderVote {
                expert,
                candidates: v.iter().map(|&id| (id, format!("c{}", (id - 1) / 3))).collect(),
            });
            raw.push(v);
        }
        let got: Vec<(u64, u32)> = borda(&candidates, &votes).into_iter().map(|(id, _, s)| (id, s)).collect();
        assert_eq!(got, borda_oracle(&ids, &raw));
    }
}

#[test]
fn disagreeing_experts_resolve_by_borda() {
    let region = OrientedBox::axis_aligned(Vec3::new(0.0, 0.0, 0.03), Vec3::repeat(0.03));
    let camera = Vec3::new(0.5, 0.0, 0.3);
    let boxes = [
        ("plate", Vec3::new(-0.02, 0.0, 0.2), Vec3::new(0.05, 0.05, 0.01)),
        ("box", Vec3::new(0.25, 0.0, 0.16), Vec3::repeat(0.02)),
        ("can", Vec3::new(0.0, 0.08, 0.03), Vec3::repeat(0.02)),
    ];
    let snap = SceneSnapshot {
        tick: 3,
        objects: boxes
            .iter()
            .enumerate()
            .map(|(i, (l, c, h))| record(i as u64, l, OrientedBox::axis_aligned(*c, *h)))
            .collect(),
        target_id: None,
    };
    let hyp = infer_occluders(&snap, &[], "ball", Some(&region), &camera).unwrap();

    // independent experts: grid overlap, slab line of sight, distance
    let overlap = |b: &OrientedBox| {
        let mut hits = 0;
        for i in 0..200 {
            for j in 0..200 {
                let x = -0.03 + 0.06 * (i as f64 + 0.5) / 200.0;
                let y = -0.03 + 0.06 * (j as f64 + 0.5) / 200.0;
                if (x - b.center.x).abs() <= b.half_extents.x && (y - b.center.y).abs() <= b.half_extents.y {
                    hits += 1;
                }
            }
        }
        hits
    };
    let mut probes: Vec<Vec3> = region.corners().to_vec();
    probes.push(region.center);
    let sight = |b: &OrientedBox| {
        probes
            .iter()
            .filter(|p| {
                let d = *p - camera;
                aabb_hit(&camera, &(d / d.norm()), b).is_some_and(|t| t < d.norm())
            })
            .count()
    };
    let rank = |score: &dyn Fn(&OrientedBox) -> f64| {
        let mut v: Vec<(f64, u64)> = snap.objects.iter().map(|o| (score(&o.bbox), o.id)).filter(|s| s.0.is_finite()).collect();
        v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        v.into_iter().map(|s| s.1).collect::<Vec<u64>>()
    };
    let by_overlap = rank(&|b| if overlap(b) > 0 { overlap(b) as f64 } else { f64::NAN });
    let by_sight = rank(&|b| if sight(b) > 0 { sight(b) as f64 } else { f64::NAN });
    let by_distance = rank(&|b| -(b.center - region.center).norm());
    assert_eq!(by_overlap, vec![0]);
    assert_eq!(by_sight, vec![1]);
    assert_eq!(by_distance, vec![2, 0, 1]);

    let expected = borda_oracle(&[0, 1, 2], &[by_overlap, by_sight, by_distance]);
    let got: Vec<(u64, u32)> = hyp.ranking.iter().map(|(id, _, s)| (*id, *s)).collect();
    assert_eq!(got, expected);
    assert_eq!(hyp.best().unwrap().1, "plate");
}

#[test]
fn unanimous_cover_ranks_first() {
    let region = OrientedBox::axis_aligned(Vec3::new(0.0, 0.0, 0.03), Vec3::repeat(0.03));
    let snap = SceneSnapshot {
        tick: 1,
        objects: vec![
            record(4, "lid", OrientedBox::axis_aligned(Vec3::new(0.0, 0.0, 0.08), Vec3::new(0.05, 0.05, 0.01))),
            record(1, "far", OrientedBox::axis_aligned(Vec3::new(0.4, 0.4, 0.03), Vec3::repeat(0.02))),
        ],
        target_id: None,
    };
    let hyp = infer_occluders(&snap, &[], "ball", Some(&region), &Vec3::new(0.0, 0.1, 0.5)).unwrap();
    for v in &hyp.votes {
        assert_eq!(v.candidates[0].0, 4, "{}", v.expert.name());
    }
    assert_eq!(hyp.best().unwrap().0, 4);
}

fn snapshot_of(s: &GroundTruthScene) -> SceneSnapshot {
    let objects: Vec<ObjectRecord> = s
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let mut r = record(i as u64, o.label(), o.bbox);
            r.is_target = o.label() == s.target_label;
            r
        })
        .collect();
    let target_id = objects.iter().find(|o| o.is_target).map(|o| o.id);
    SceneSnapshot { tick: 0, objects, target_id }
}

/// Objects covering the target or standing close and taller.
fn occluders(snap: &SceneSnapshot, g: &RelationGraph) -> Vec<String> {
    let t = snap.target_id.unwrap();
    snap.objects
        .iter()
        .filter(|o| o.id != t)
        .filter(|o| {
            g.has(t, o.id, RelationSet::BELOW)
                || g.get(o.id, t).contains(RelationSet::PROXIMITY) && g.get(o.id, t).contains(RelationSet::HIGH)
        })
        .map(|o| o.label().to_string())
        .collect()
}

fn occluders_of(s: &GroundTruthScene) -> Vec<String> {
    let snap = snapshot_of(s);
    occluders(&snap, &compute_relations(&snap, &RelationConfig::default()))
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head.clone());
            out.push(p);
        }
    }
    out
}

fn removals_to_clear(s: &GroundTruthScene, order: &[String]) -> usize {
    let mut cur = s.clone();
    for (k, label) in order.iter().enumerate() {
        if occluders_of(&cur).is_empty() {
            return k;
        }
        cur = remove_object(&cur, label).unwrap();
    }
    if occluders_of(&cur).is_empty() { order.len() } else { usize::MAX }
}

#[test]
fn cup_under_ball_beside_block_clears_in_two() {
    let s = scene(
        vec![
            obj("cup", Vec3::new(0.0, 0.0, 0.04), Vec3::new(0.03, 0.03, 0.04)),
            obj("ball", Vec3::new(0.0, 0.0, 0.125), Vec3::repeat(0.03)),
            obj("block", Vec3::new(0.065, 0.0, 0.09), Vec3::new(0.02, 0.04, 0.09)),
            obj("sponge", Vec3::new(-0.2, 0.1, 0.015), Vec3::new(0.03, 0.02, 0.015)),
        ],
        "cup",
    );
    let mut initial = occluders_of(&s);
    initial.sort();
    assert_eq!(initial, vec!["ball", "block"]);

    let snap = snapshot_of(&s);
    let g = compute_relations(&snap, &RelationConfig::default());
    let order: Vec<String> = removal_order(&snap, &g)
        .unwrap()
        .into_iter()
        .map(|id| snap.get(id).unwrap().label().to_string())
        .collect();
    let planned = removals_to_clear(&s, &order);
    assert!(planned <= 2, "order {order:?} needs {planned}");

    let others: Vec<String> = s.objects.iter().map(|o| o.label().to_string()).filter(|l| l != "cup").collect();
    let best = permutations(&others).iter().map(|p| removals_to_clear(&s, p)).min().unwrap();
    assert_eq!(planned, best);
}

#[test]
fn simulation_is_bit_deterministic() {
    let s = scene(
        vec![
            obj("cup", Vec3::new(0.0, 0.0, 0.04), Vec3::new(0.03, 0.03, 0.04)),
            obj("box", Vec3::new(0.07, 0.02, 0.06), Vec3::new(0.02, 0.03, 0.06)),
        ],
        "cup",
    );
    let noise = DetectorNoise { sigma_center: 0.003, drop_prob: 0.1, mislabel_prob: 0.1, v_min: 0.1 };
    let camera = cam(Vec3::new(-0.3, 0.2, 0.4));
    for seed in 0..20 {
        for tick in 0..5 {
            assert_eq!(simulate_detections(&s, &camera, &noise, seed, tick), simulate_detections(&s, &camera, &noise, seed, tick));
            let a = simulate_grasp_observations(&s, &camera, &["cup", "box"], &GraspNoise::default(), 6, seed, tick);
            let b = simulate_grasp_observations(&s, &camera, &["cup", "box"], &GraspNoise::default(), 6, seed, tick);
            assert_eq!(a, b);
            let ea = execute_grasp(&s, "cup", 0.7, &ExecutionModel::default(), seed, tick).unwrap();
            let eb = execute_grasp(&s, "cup", 0.7, &ExecutionModel::default(), seed, tick).unwrap();
            assert_eq!(ea, eb);
        }
    }
}

#[test]
fn pick_success_rate_tracks_quality() {
    let s = scene(vec![obj("cup", Vec3::new(0.0, 0.0, 0.04), Vec3::new(0.03, 0.03, 0.04))], "cup");
    let model = ExecutionModel { disturb_prob: 0.0, ..Default::default() };
    let n = 4000;
    let ok = (0..n)
        .filter(|&seed| execute_grasp(&s, "cup", 0.7, &model, seed, 1).unwrap().0 == GraspOutcome::Success)
        .count();
    let rate = ok as f64 / n as f64;
    // three standard errors
    assert!((rate - 0.7).abs() < 3.0 * (0.7f64 * 0.3 / n as f64).sqrt(), "{rate}");
}
