//! Velocity-field next-best-view planning on a view sphere.
//!
//! Each occluder point `p_oc` pushes the camera along the tangent direction
//! of `e = normalize(p_target - p_oc)` with strength
//! `beta = acos(e . normalize(x - p_oc)) / pi`. The field vanishes on the
//! ray from the occluder through the target, which is where the camera
//! sees the target past the occluder. Several occluder points superpose
//! linearly.

use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_4, PI};

use thiserror::Error;

use crate::geom::{elevation, tangent_basis, GeomError, OrientedBox, Vec3};

/// Tolerance for "x lies on the sphere".
const ON_SPHERE_TOL: f64 = 1e-6;
/// Below this norm the tangential rejection is treated as singular.
const REJECTION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum NbvError {
    #[error("target and occluder points coincide")]
    DegenerateGeometry,
    #[error("camera position is {distance} from the sphere surface")]
    OffSphere { distance: f64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSphere {
    pub center: Vec3,
    pub radius: f64,
}

impl ViewSphere {
    pub fn new(center: Vec3, radius: f64) -> Option<Self> {
        (radius > 0.0 && radius.is_finite()).then_some(Self { center, radius })
    }

    /// Radial projection onto the sphere, clamped to the upper hemisphere.
    pub fn project(&self, p: &Vec3) -> Vec3 {
        let mut d = p - self.center;
        if d.z < 0.0 {
            d.z = 0.0;
        }
        let n = d.norm();
        if n < 1e-15 {
            return self.center + Vec3::z() * self.radius;
        }
        self.center + d * (self.radius / n)
    }

    /// Point at the given azimuth and elevation (radians).
    pub fn point_at(&self, azimuth: f64, elevation: f64) -> Vec3 {
        let (se, ce) = libm::sincos(elevation);
        let (sa, ca) = libm::sincos(azimuth);
        self.center + Vec3::new(ce * ca, ce * sa, se) * self.radius
    }

    pub fn elevation(&self, x: &Vec3) -> f64 {
        elevation(x, &self.center)
    }

    fn check_on_sphere(&self, x: &Vec3) -> Result<(), NbvError> {
        let distance = ((x - self.center).norm() - self.radius).abs();
        if distance > ON_SPHERE_TOL {
            return Err(NbvError::OffSphere { distance });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub velocity: Vec3,
    pub beta: f64,
    pub truncated: bool,
    /// Number of contributions whose tangential direction was undefined.
    pub singular: u32,
}

impl FieldSample {
    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }
}

/// Occluder points: center and the eight corners of every box.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OccluderPoints(pub Vec<Vec3>);

impl OccluderPoints {
    pub fn from_boxes<'a>(boxes: impl IntoIterator<Item = &'a OrientedBox>) -> Self {
        let mut pts = Vec::new();
        for b in boxes {
            pts.push(b.center);
            pts.extend_from_slice(&b.corners());
        }
        Self(pts)
    }

    pub fn centers<'a>(boxes: impl IntoIterator<Item = &'a OrientedBox>) -> Self {
        Self(boxes.into_iter().map(|b| b.center).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

struct Contribution {
    beta: f64,
    direction: Option<Vec3>,
}

fn contribution(x: &Vec3, sphere: &ViewSphere, p_target: &Vec3, p_oc: &Vec3) -> Result<Contribution, NbvError> {
    let to_target = p_target - p_oc;
    let to_camera = x - p_oc;
    if to_target.norm() < 1e-12 || to_camera.norm() < 1e-12 {
        return Err(NbvError::DegenerateGeometry);
    }
    let e_oc = to_target.normalize();
    let e_rad = (x - sphere.center) / sphere.radius;
    let rej = e_oc - e_rad * e_oc.dot(&e_rad);
    let cos = e_oc.dot(&to_camera.normalize()).clamp(-1.0, 1.0);
    let beta = libm::acos(cos) / PI;
    let n = rej.norm();
    let direction = (n >= REJECTION_EPS).then(|| rej / n);
    Ok(Contribution { beta, direction })
}

/// Deterministic tangent used where the rejection vanishes: the azimuthal
/// direction, or +x projected on the tangent plane at the poles.
fn fallback_tangent(x: &Vec3, sphere: &ViewSphere) -> Vec3 {
    match tangent_basis(x, &sphere.center) {
        Ok(tb) => tb.azimuth,
        Err(_) => {
            let e_rad = (x - sphere.center).normalize();
            let t = Vec3::x() - e_rad * e_rad.x;
            t.normalize()
        }
    }
}

pub fn field_single(x: &Vec3, sphere: &ViewSphere, p_target: &Vec3, p_oc: &Vec3) -> Result<FieldSample, NbvError> {
    sphere.check_on_sphere(x)?;
    let c = contribution(x, sphere, p_target, p_oc)?;
    let (dir, singular) = match c.direction {
        Some(d) => (d, 0),
        None => (fallback_tangent(x, sphere), 1),
    };
    Ok(FieldSample {
        velocity: dir * c.beta,
        beta: c.beta,
        truncated: false,
        singular,
    })
}

/// Superposed field of all occluder points. Singular or degenerate
/// contributions add no velocity; singular ones still count in the mean
/// `beta`.
pub fn field_multi(x: &Vec3, sphere: &ViewSphere, p_target: &Vec3, occ: &OccluderPoints) -> Result<FieldSample, NbvError> {
    sphere.check_on_sphere(x)?;
    let mut velocity = Vec3::zeros();
    let mut beta_sum = 0.0;
    let mut counted = 0u32;
    let mut singular = 0u32;
    for p in &occ.0 {
        let Ok(c) = contribution(x, sphere, p_target, p) else {
            continue;
        };
        beta_sum += c.beta;
        counted += 1;
        match c.direction {
            Some(d) => velocity += d * c.beta,
            None => singular += 1,
        }
    }
    if counted == 0 {
        return Err(NbvError::DegenerateGeometry);
    }
    Ok(FieldSample {
        velocity,
        beta: beta_sum / counted as f64,
        truncated: false,
        singular,
    })
}

/// Removes the downward meridian component of the field below 45 degrees
/// of elevation. The result stays tangent to the sphere.
pub fn truncate_downward(sample: &FieldSample, x: &Vec3, sphere: &ViewSphere) -> Result<FieldSample, NbvError> {
    if sphere.elevation(x) >= FRAC_PI_4 {
        return Ok(FieldSample {
            truncated: false,
            ..*sample
        });
    }
    let tb = tangent_basis(x, &sphere.center)?;
    let up = sample.velocity.dot(&tb.up);
    let az = sample.velocity.dot(&tb.azimuth);
    if up >= 0.0 {
        return Ok(FieldSample {
            truncated: false,
            ..*sample
        });
    }
    Ok(FieldSample {
        velocity: tb.azimuth * az,
        truncated: true,
        ..*sample
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationParams {
    pub step: f64,
    pub max_steps: usize,
    pub eps_stag: f64,
}

impl IntegrationParams {
    /// Step of 2% of the radius, 2000 steps, stagnation at speed 1e-3.
    pub fn for_sphere(sphere: &ViewSphere) -> Self {
        Self {
            step: 0.02 * sphere.radius,
            max_steps: 2000,
            eps_stag: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Stagnated,
    Budget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Camera positions after each accepted step (the start is excluded).
    pub points: Vec<Vec3>,
    /// Field sample evaluated at the start of each accepted step.
    pub samples: Vec<FieldSample>,
    /// Sample at the final position.
    pub last: Option<FieldSample>,
    pub status: TrajectoryStatus,
}

/// Field with truncation, evaluated where the camera currently is.
pub fn planner_field(x: &Vec3, sphere: &ViewSphere, p_target: &Vec3, occ: &OccluderPoints) -> Result<FieldSample, NbvError> {
    let raw = field_multi(x, sphere, p_target, occ)?;
    truncate_downward(&raw, x, sphere)
}

/// One explicit Euler step followed by re-projection onto the sphere.
pub fn euler_step(x: &Vec3, sample: &FieldSample, sphere: &ViewSphere, step: f64) -> Vec3 {
    sphere.project(&(x + sample.velocity * step))
}

pub fn integrate_trajectory(
    x0: &Vec3,
    sphere: &ViewSphere,
    p_target: &Vec3,
    occ: &OccluderPoints,
    params: &IntegrationParams,
) -> Result<Trajectory, NbvError> {
    let mut x = sphere.project(x0);
    let mut traj = Trajectory {
        points: Vec::new(),
        samples: Vec::new(),
        last: None,
        status: TrajectoryStatus::Budget,
    };
    for _ in 0..params.max_steps {
        let sample = planner_field(&x, sphere, p_target, occ)?;
        traj.last = Some(sample);
        if sample.speed() < params.eps_stag {
            traj.status = TrajectoryStatus::Stagnated;
            return Ok(traj);
        }
        x = euler_step(&x, &sample, sphere, params.step);
        traj.samples.push(sample);
        traj.points.push(x);
    }
    if params.max_steps > 0 {
        traj.last = Some(planner_field(&x, sphere, p_target, occ)?);
    }
    Ok(traj)
}
