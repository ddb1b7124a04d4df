use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viso_core::geom::{OrientedBox, Vec3};
use viso_core::scene::*;

fn det(label: &str, c: Vec3) -> Detection {
    Detection {
        description: ObjectDescription::new(label),
        bbox: OrientedBox::axis_aligned(c, Vec3::repeat(0.02)),
        source_tick: 1,
    }
}

/// After any update, no two same-label records are within the match
/// radius (brute force over all pairs).
#[test]
fn no_mergeable_pair_survives() {
    let cfg = SceneConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let mut snap = SceneSnapshot::default();
        for _ in 0..5 {
            let dets: Vec<Detection> = (0..rng.random_range(0..6))
                .map(|_| {
                    let label = ["cup", "ball", "box"][rng.random_range(0..3)];
                    det(label, Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.02))
                })
                .collect();
            snap = update_scene(&snap, &dets, &cfg);
            for (i, a) in snap.objects.iter().enumerate() {
                for b in &snap.objects[i + 1..] {
                    if a.label() == b.label() {
                        assert!((a.bbox.center - b.bbox.center).norm() > cfg.match_radius);
                    }
                    assert_ne!(a.id, b.id);
                }
            }
        }
    }
}

#[test]
fn far_same_label_detection_is_a_new_record() {
    let cfg = SceneConfig { match_radius: 0.05 };
    let s = update_scene(&SceneSnapshot::default(), &[det("red cup", Vec3::zeros())], &cfg);
    let s = update_scene(&s, &[det("red cup", Vec3::new(1.0, 0.0, 0.0))], &cfg);
    assert_eq!(s.objects.len(), 2);
    let pairs_within = s
        .objects
        .iter()
        .enumerate()
        .flat_map(|(i, a)| s.objects[i + 1..].iter().map(move |b| (a, b)))
        .filter(|(a, b)| (a.bbox.center - b.bbox.center).norm() <= cfg.match_radius)
        .count();
    assert_eq!(pairs_within, 0);
}

#[test]
fn ambiguous_target_tie_rule_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.random_range(2..6);
        let objects: Vec<ObjectRecord> = (0..n)
            .map(|i| ObjectRecord {
                id: rng.random_range(0..50) * 10 + i,
                description: ObjectDescription::new(if rng.random_bool(0.7) { "red cup" } else { "ball" }),
                bbox: OrientedBox::axis_aligned(Vec3::new(i as f64, 0.0, 0.0), Vec3::repeat(0.02)),
                observation_count: rng.random_range(1..4),
                last_seen_tick: 0,
                is_target: false,
            })
            .collect();
        let snap = SceneSnapshot {
            tick: 0,
            objects,
            target_id: None,
        };
        let cups: Vec<&ObjectRecord> = snap.objects.iter().filter(|o| o.label() == "red cup").collect();
        let resolved = designate_target_resolved(&snap, "red cup");
        let expected = cups
            .iter()
            .find(|c| cups.iter().all(|o| (c.observation_count, std::cmp::Reverse(c.id)) >= (o.observation_count, std::cmp::Reverse(o.id))))
            .map(|c| c.id);
        assert_eq!(resolved.target_id, expected);
        if cups.len() > 1 {
            assert!(matches!(designate_target(&snap, "red cup"), Err(SceneError::AmbiguousTarget { .. })));
        }
    }
}
