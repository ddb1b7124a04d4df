use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use viso_core::geom::Vec3;
use viso_core::nbv::*;

struct Query {
    sphere: ViewSphere,
    x: Vec3,
    target: Vec3,
    occluder: Vec3,
}

fn inside(rng: &mut ChaCha8Rng, center: &Vec3, r: f64) -> Vec3 {
    center + Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn query(rng: &mut ChaCha8Rng) -> Query {
    let center = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.5));
    let radius = rng.random_range(0.3..2.0);
    let sphere = ViewSphere::new(center, radius).unwrap();
    let x = sphere.point_at(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..1.5));
    Query {
        sphere,
        x,
        target: inside(rng, &center, 0.4 * radius),
        occluder: inside(rng, &center, 0.4 * radius),
    }
}

#[test]
fn beta_range_and_tangency() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20_000 {
        let q = query(&mut rng);
        let f = field_single(&q.x, &q.sphere, &q.target, &q.occluder).unwrap();
        let e_rad = (q.x - q.sphere.center) / q.sphere.radius;
        assert!((0.0..=1.0).contains(&f.beta));
        assert!(f.velocity.dot(&e_rad).abs() < 1e-9);
        let t = planner_field(&q.x, &q.sphere, &q.target, &OccluderPoints(vec![q.occluder])).unwrap();
        assert!(t.velocity.dot(&e_rad).abs() < 1e-9);
        if q.sphere.elevation(&q.x) < std::f64::consts::FRAC_PI_4 {
            assert!(t.velocity.z >= -1e-12);
        }
    }
}

#[test]
fn beta_vanishes_exactly_on_the_target_side_ray() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5_000 {
        let q = query(&mut rng);
        let e = (q.target - q.occluder).normalize();
        // ray p_oc + s e meets the sphere where |p_oc + s e - c| = R
        let d = q.occluder - q.sphere.center;
        let b = d.dot(&e);
        let s = -b + (b * b - d.norm_squared() + q.sphere.radius * q.sphere.radius).sqrt();
        let x = q.occluder + e * s;
        let f = field_single(&x, &q.sphere, &q.target, &q.occluder).unwrap();
        assert!(f.beta < 1e-6, "beta {}", f.beta);
        assert!(f.speed() < 1e-6);
        // and off the ray it is positive
        let g = field_single(&q.x, &q.sphere, &q.target, &q.occluder).unwrap();
        if g.beta < 1e-6 {
            assert!((q.x - q.occluder).normalize().dot(&e) > 1.0 - 1e-9);
        }
    }
}

#[test]
fn beta_is_continuous() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5_000 {
        let q = query(&mut rng);
        let delta = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let y = q.sphere.project(&(q.x + delta.normalize() * 1e-6));
        let a = field_single(&q.x, &q.sphere, &q.target, &q.occluder).unwrap().beta;
        let b = field_single(&y, &q.sphere, &q.target, &q.occluder).unwrap().beta;
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn superposition_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5_000 {
        let q = query(&mut rng);
        let n = rng.random_range(1..10);
        let occ: Vec<Vec3> = (0..n).map(|_| inside(&mut rng, &q.sphere.center, 0.4 * q.sphere.radius)).collect();
        let multi = field_multi(&q.x, &q.sphere, &q.target, &OccluderPoints(occ.clone())).unwrap();
        let mut sum = Vec3::zeros();
        let mut beta = 0.0;
        for p in &occ {
            let f = field_single(&q.x, &q.sphere, &q.target, p).unwrap();
            sum += f.velocity;
            beta += f.beta;
        }
        assert!((multi.velocity - sum).norm() < 1e-12);
        assert!((multi.beta - beta / n as f64).abs() < 1e-12);
    }
}

#[test]
fn single_occluder_descent_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut steps, mut violations) = (0usize, 0usize);
    for _ in 0..50 {
        let mut q = query(&mut rng);
        // view sphere centered on the target
        q.sphere = ViewSphere::new(q.target, q.sphere.radius).unwrap();
        q.x = q.sphere.point_at(rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..1.5));
        let occ = OccluderPoints(vec![q.occluder]);
        let params = IntegrationParams::for_sphere(&q.sphere);
        let traj = integrate_trajectory(&q.x, &q.sphere, &q.target, &occ, &params).unwrap();
        for w in traj.samples.windows(2) {
            steps += 1;
            if w[1].beta > w[0].beta + 1e-12 {
                violations += 1;
            }
        }
    }
    assert!(steps > 0);
    assert!(violations * 100 <= steps, "{violations} of {steps} steps increased beta");
}
