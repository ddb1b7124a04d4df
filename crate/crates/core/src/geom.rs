//! Core 3D geometry: pinhole camera model, PCA oriented boxes, slab ray
//! casting and the tangent frame of the view sphere.
//!
//! All vectors are `f64` nalgebra types. The camera convention is
//! right-handed with +z along the optical axis and the image origin at the
//! top-left corner (u to the right, v downward).

use alloc::vec::Vec;

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;

/// Minimum half-extent of any fitted box, in meters.
pub const EPS_BOX: f64 = 1e-4;

/// Eigenvalues closer than this (relative to the largest) are treated as tied.
const EIGEN_TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeomError {
    #[error("pixel ({u}, {v}) outside {width}x{height} image")]
    OutOfBounds { u: u32, v: u32, width: u32, height: u32 },
    #[error("invalid depth at pixel ({u}, {v})")]
    InvalidDepth { u: u32, v: u32 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("degenerate point set for box fitting")]
    DegenerateInput,
    #[error("tangent frame undefined at the sphere pole")]
    PoleSingularity,
    #[error("point coincides with the sphere center")]
    CoincidentPoints,
    #[error("focal lengths must be positive")]
    InvalidIntrinsics,
    #[error("box rotation must be orthonormal with positive half-extents")]
    InvalidBox,
    #[error("depth buffer has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeomError> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(GeomError::InvalidIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy })
    }
}

/// Camera optical frame in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl CameraPose {
    /// Pose at `position` with the optical axis pointing at `target` and the
    /// image "down" direction as close to world -z as possible.
    pub fn look_at(position: Vec3, target: &Vec3) -> Self {
        let forward = target - position;
        let z = if forward.norm() > 1e-12 {
            forward.normalize()
        } else {
            Vec3::new(0.0, 0.0, -1.0)
        };
        let mut x = z.cross(&Vec3::z());
        if x.norm() < 1e-9 {
            x = z.cross(&Vec3::y());
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
        Self {
            position,
            orientation: UnitQuaternion::from_rotation_matrix(&rot),
        }
    }

    pub fn optical_axis(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.orientation.inverse() * (p - self.position)
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }
}

/// Row-major depth buffer in meters; zero marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self, GeomError> {
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(GeomError::DimensionMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, depth: f64) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            data: alloc::vec![depth; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        if u >= self.width || v >= self.height {
            return None;
        }
        Some(self.data[v as usize * self.width as usize + u as usize])
    }

    pub fn set(&mut self, u: u32, v: u32, depth: f64) {
        if u < self.width && v < self.height {
            self.data[v as usize * self.width as usize + u as usize] = depth;
        }
    }
}

/// Lifts a (sub)pixel with known depth into camera coordinates:
/// `depth * K^-1 * (u, v, 1)`.
pub fn backproject_point(u: f64, v: f64, depth: f64, k: &CameraIntrinsics) -> Vec3 {
    Vec3::new(
        depth * (u - k.cx) / k.fx,
        depth * (v - k.cy) / k.fy,
        depth,
    )
}

pub fn backproject(
    u: u32,
    v: u32,
    depth: &DepthImage,
    k: &CameraIntrinsics,
) -> Result<Vec3, GeomError> {
    let d = depth.get(u, v).ok_or(GeomError::OutOfBounds {
        u,
        v,
        width: depth.width,
        height: depth.height,
    })?;
    if !(d > 0.0) {
        return Err(GeomError::InvalidDepth { u, v });
    }
    Ok(backproject_point(u as f64, v as f64, d, k))
}

/// Pinhole projection of a camera-frame point. Returns `(u, v, depth)`.
pub fn project(p: &Vec3, k: &CameraIntrinsics) -> Result<(f64, f64, f64), GeomError> {
    if !(p.z > 0.0) {
        return Err(GeomError::BehindCamera { z: p.z });
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
}

/// Box with center, orthonormal frame (columns are the box axes) and
/// half-extents along those axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    pub rotation: Matrix3<f64>,
    pub half_extents: Vec3,
}

impl OrientedBox {
    pub fn new(center: Vec3, rotation: Matrix3<f64>, half_extents: Vec3) -> Result<Self, GeomError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let ok = ortho < 1e-9
            && (rotation.determinant() - 1.0).abs() < 1e-9
            && half_extents.iter().all(|h| *h > 0.0 && h.is_finite())
            && center.iter().all(|c| c.is_finite());
        if !ok {
            return Err(GeomError::InvalidBox);
        }
        Ok(Self {
            center,
            rotation,
            half_extents,
        })
    }

    pub fn axis_aligned(center: Vec3, half_extents: Vec3) -> Self {
        Self {
            center,
            rotation: Matrix3::identity(),
            half_extents,
        }
    }

    pub fn from_quaternion(center: Vec3, q: &UnitQuaternion<f64>, half_extents: Vec3) -> Result<Self, GeomError> {
        Self::new(center, *q.to_rotation_matrix().matrix(), half_extents)
    }

    pub fn axis(&self, i: usize) -> Vec3 {
        self.rotation.column(i).into_owned()
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.center)
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let mut out = [Vec3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vec3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.center + self.rotation * s.component_mul(&self.half_extents);
        }
        out
    }

    /// Closed containment test with an absolute slack in each box axis.
    pub fn contains(&self, p: &Vec3, slack: f64) -> bool {
        let local = self.to_local(p);
        (0..3).all(|i| local[i].abs() <= self.half_extents[i] + slack)
    }

    /// Half-size of the box projected on a world direction.
    pub fn support_radius(&self, dir: &Vec3) -> f64 {
        (0..3)
            .map(|i| self.axis(i).dot(dir).abs() * self.half_extents[i])
            .sum()
    }

    pub fn min_z(&self) -> f64 {
        self.center.z - self.support_radius(&Vec3::z())
    }

    pub fn max_z(&self) -> f64 {
        self.center.z + self.support_radius(&Vec3::z())
    }

    /// Box grown by `margin` on every half-extent.
    pub fn expanded(&self, margin: f64) -> Self {
        Self {
            half_extents: self.half_extents.add_scalar(margin),
            ..*self
        }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.x * self.half_extents.y * self.half_extents.z
    }

    /// Smallest box with the given frame that contains `points`.
    pub fn enclosing_in_frame(points: &[Vec3], rotation: Matrix3<f64>) -> Option<Self> {
        let first = points.first()?;
        let rt = rotation.transpose();
        let mut lo = rt * first;
        let mut hi = lo;
        for p in &points[1..] {
            let l = rt * p;
            lo = lo.inf(&l);
            hi = hi.sup(&l);
        }
        let mid = (lo + hi) * 0.5;
        let half = ((hi - lo) * 0.5).map(|h| h.max(EPS_BOX));
        Some(Self {
            center: rotation * mid,
            rotation,
            half_extents: half,
        })
    }
}

/// PCA box over `points` with canonical axis ordering and signs.
pub fn fit_oriented_box(points: &[Vec3]) -> Result<OrientedBox, GeomError> {
    fit_oriented_box_hinted(points, &Matrix3::identity())
}

/// Like [`fit_oriented_box`], but eigen-subspaces with tied eigenvalues are
/// spanned by the projections of `hint`'s columns instead of the world axes.
pub fn fit_oriented_box_hinted(points: &[Vec3], hint: &Matrix3<f64>) -> Result<OrientedBox, GeomError> {
    if points.len() < 3 {
        return Err(GeomError::DegenerateInput);
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = [
        eig.eigenvalues[order[0]].max(0.0),
        eig.eigenvalues[order[1]].max(0.0),
        eig.eigenvalues[order[2]].max(0.0),
    ];
    let scale = vals[0];
    if !(scale > 0.0) || vals[1] <= 1e-12 * scale {
        return Err(GeomError::DegenerateInput);
    }
    let mut axes = [
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ];

    // Replace every tied eigen-subspace by a basis built from the hint axes.
    let tol = EIGEN_TIE_RTOL * scale;
    let mut start = 0;
    while start < 3 {
        let mut end = start + 1;
        while end < 3 && (vals[start] - vals[end]).abs() <= tol {
            end += 1;
        }
        if end - start > 1 {
            let span: Vec<Vec3> = axes[start..end].to_vec();
            let mut basis: Vec<Vec3> = Vec::new();
            for h in 0..3 {
                if basis.len() == span.len() {
                    break;
                }
                let a = hint.column(h).into_owned();
                let mut v = span.iter().fold(Vec3::zeros(), |acc, s| acc + s * s.dot(&a));
                for b in &basis {
                    v -= b * b.dot(&v);
                }
                if v.norm() > 1e-6 {
                    basis.push(v.normalize());
                }
            }
            axes[start..end].copy_from_slice(&basis);
        }
        start = end;
    }

    for axis in axes.iter_mut().take(2) {
        canonicalize_sign(axis);
    }
    axes[1] = (axes[1] - axes[0] * axes[0].dot(&axes[1])).normalize();
    axes[2] = axes[0].cross(&axes[1]);

    let rotation = Matrix3::from_columns(&axes);
    Ok(OrientedBox::enclosing_in_frame(points, rotation).expect("non-empty"))
}

/// PCA fit with the axis-aligned fallback for degenerate inputs.
pub fn fit_oriented_box_or_aabb(points: &[Vec3]) -> Option<OrientedBox> {
    match fit_oriented_box(points) {
        Ok(b) => Some(b),
        Err(_) => OrientedBox::enclosing_in_frame(points, Matrix3::identity()),
    }
}

fn canonicalize_sign(v: &mut Vec3) {
    let max = v.amax();
    let lead = (0..3).find(|&i| v[i].abs() >= max - 1e-12).unwrap_or(0);
    if v[lead] < 0.0 {
        *v = -*v;
    }
}

/// Distance along the ray to the first point inside the box. Zero when the
/// origin is already inside (boundary counts as inside).
pub fn ray_box_intersect(origin: &Vec3, dir: &UnitVec3, b: &OrientedBox) -> Option<f64> {
    let o = b.to_local(origin);
    let d = b.rotation.transpose() * dir.into_inner();
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for i in 0..3 {
        let h = b.half_extents[i];
        if d[i].abs() < 1e-15 {
            if o[i].abs() > h {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let mut t0 = (-h - o[i]) * inv;
        let mut t1 = (h - o[i]) * inv;
        if t0 > t1 {
            core::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    if t_far < 0.0 {
        None
    } else {
        Some(t_near.max(0.0))
    }
}

/// Orthonormal frame at a point of a sphere: radial, "up" along the meridian
/// and azimuthal along the parallel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentBasis {
    pub radial: Vec3,
    pub up: Vec3,
    pub azimuth: Vec3,
}

pub fn radial_direction(x: &Vec3, center: &Vec3) -> Result<Vec3, GeomError> {
    let r = x - center;
    let n = r.norm();
    if !(n > 1e-12) {
        return Err(GeomError::CoincidentPoints);
    }
    Ok(r / n)
}

pub fn tangent_basis(x: &Vec3, center: &Vec3) -> Result<TangentBasis, GeomError> {
    let radial = radial_direction(x, center)?;
    if radial.z.abs() >= 1.0 - 1e-9 {
        return Err(GeomError::PoleSingularity);
    }
    let azimuth = Vec3::z().cross(&radial).normalize();
    let up = radial.cross(&azimuth);
    Ok(TangentBasis {
        radial,
        up,
        azimuth,
    })
}

/// Elevation of `x` above the horizontal plane through `center`, radians.
pub fn elevation(x: &Vec3, center: &Vec3) -> f64 {
    match radial_direction(x, center) {
        Ok(r) => libm::asin(r.z.clamp(-1.0, 1.0)),
        Err(_) => 0.0,
    }
}
