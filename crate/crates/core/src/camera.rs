//! Pinhole camera and planar homography types.

use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::field_model::WorldPoint;

pub type Pixel = Point2<f64>;

/// Zero-skew intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image center.
    pub fn centered(focal: f64, width: f64, height: f64) -> Self {
        Self { fx: focal, fy: focal, cx: width / 2.0, cy: height / 2.0 }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn principal_point(&self) -> Pixel {
        Pixel::new(self.cx, self.cy)
    }
}

/// Full camera: `x ~ K R (X - t)` with `t` the camera center in world
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    pub intrinsics: Intrinsics,
    pub rotation: Rotation3<f64>,
    pub center: WorldPoint,
}

impl CameraParams {
    pub fn new(intrinsics: Intrinsics, rotation: Rotation3<f64>, center: WorldPoint) -> Self {
        Self { intrinsics, rotation, center }
    }

    /// Camera oriented so that it looks at `target` with the image `v` axis
    /// pointing towards world `+z` (down) and roll applied about the optical
    /// axis afterwards.
    pub fn look_at(intrinsics: Intrinsics, center: WorldPoint, target: WorldPoint, roll: f64) -> Option<Self> {
        let forward = (target - center).try_normalize(1e-12)?;
        let down = Vector3::z();
        let right = down.cross(&forward).try_normalize(1e-9)?;
        let image_down = forward.cross(&right);
        let base = Matrix3::from_rows(&[right.transpose(), image_down.transpose(), forward.transpose()]);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), roll) * Rotation3::from_matrix_unchecked(base);
        Some(Self::new(intrinsics, rot, center))
    }

    pub fn to_camera(&self, p: &WorldPoint) -> Vector3<f64> {
        self.rotation * (p - self.center)
    }

    /// Depth along the optical axis.
    pub fn depth(&self, p: &WorldPoint) -> f64 {
        self.to_camera(p).z
    }

    /// Perspective projection; `None` for points not strictly in front.
    pub fn project(&self, p: &WorldPoint) -> Option<Pixel> {
        let c = self.to_camera(p);
        if c.z <= 1e-12 {
            return None;
        }
        Some(self.project_camera(&c))
    }

    /// Projection ignoring the depth sign (used once points are clipped).
    pub fn project_unchecked(&self, p: &WorldPoint) -> Pixel {
        self.project_camera(&self.to_camera(p))
    }

    fn project_camera(&self, c: &Vector3<f64>) -> Pixel {
        let k = &self.intrinsics;
        Pixel::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy)
    }

    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let kr = self.intrinsics.matrix() * self.rotation.matrix();
        let col = -(kr * self.center.coords);
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&kr);
        p.set_column(3, &col);
        p
    }

    /// Optical axis direction in world coordinates.
    pub fn principal_ray(&self) -> Vector3<f64> {
        self.rotation.inverse() * Vector3::z()
    }

    /// Back-projects a pixel onto the plane `z = 0`; `None` if the ray does
    /// not hit the ground in front of the camera.
    pub fn backproject_ground(&self, px: &Pixel) -> Option<WorldPoint> {
        let ray_cam = self.intrinsics.inverse() * Vector3::new(px.x, px.y, 1.0);
        let ray = self.rotation.inverse() * ray_cam;
        if ray.z.abs() < 1e-12 {
            return None;
        }
        let s = -self.center.z / ray.z;
        (s > 0.0).then(|| self.center + ray * s)
    }
}

/// Plane-to-image homography normalized to unit Frobenius norm with a
/// non-negative bottom-right entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Option<Self> {
        let n = m.norm();
        if !(n.is_finite() && n > 0.0) {
            return None;
        }
        let mut h = m / n;
        if h[(2, 2)] < 0.0 || (h[(2, 2)] == 0.0 && first_nonzero(&h) < 0.0) {
            h = -h;
        }
        Some(Self(h))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.0.try_inverse().and_then(Homography::new)
    }

    /// Maps a plane point; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: &Pixel) -> Option<Pixel> {
        apply_h(&self.0, p)
    }

    pub fn compose(&self, other: &Homography) -> Option<Homography> {
        Homography::new(self.0 * other.0)
    }
}

fn first_nonzero(m: &Matrix3<f64>) -> f64 {
    m.iter().copied().find(|v| *v != 0.0).unwrap_or(0.0)
}

pub fn apply_h(h: &Matrix3<f64>, p: &Pixel) -> Option<Pixel> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < 1e-300 {
        return None;
    }
    Some(Pixel::new(v.x / v.z, v.y / v.z))
}

/// Geodesic angle between two rotations, radians.
pub fn rotation_angle_between(a: &Rotation3<f64>, b: &Rotation3<f64>) -> f64 {
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&(a.inverse() * b));
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// Nearest rotation in Frobenius norm.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    Rotation3::from_matrix_unchecked(u * d * vt)
}

pub fn world(x: f64, y: f64, z: f64) -> WorldPoint {
    Point3::new(x, y, z)
}
