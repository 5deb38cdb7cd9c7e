//! Plane homography <-> camera pose conversions.

use nalgebra::{Matrix3, Vector3};

use super::{EstimationError, PlaneFrame};
use crate::camera::{nearest_rotation, CameraParams, Homography, Intrinsics, Pixel};

/// `H ~ K R [m1 m2 (o - t)]` for a plane with origin `o` and in-plane axes
/// `m1, m2`. For the ground plane this is `K R [e1 e2 -t]`.
pub fn plane_homography(params: &CameraParams, plane: &PlaneFrame) -> Result<Homography, EstimationError> {
    let m = plane.basis;
    let cols = Matrix3::from_columns(&[m.column(0).into_owned(), m.column(1).into_owned(), plane.origin - params.center]);
    let h = params.intrinsics.matrix() * params.rotation.matrix() * cols;
    let scale = h.norm();
    if !(scale.is_finite() && scale > 0.0) || h.determinant().abs() < 1e-12 * scale.powi(3) {
        return Err(EstimationError::Degenerate("camera center lies on the plane".into()));
    }
    Homography::new(h).ok_or_else(|| EstimationError::Degenerate("non-finite homography".into()))
}

/// Ground-plane homography from full camera parameters.
pub fn homography_from_projection(params: &CameraParams) -> Result<Homography, EstimationError> {
    plane_homography(params, &PlaneFrame::ground())
}

/// Recovers `(R, t)` from a plane homography given `K`. The overall sign is
/// fixed so that the plane point seen at `reference` has positive depth.
pub fn decompose_plane_homography(
    h: &Homography,
    k: &Intrinsics,
    plane: &PlaneFrame,
    reference: &Pixel,
) -> Result<CameraParams, EstimationError> {
    let hm = h.matrix();
    let a = k.inverse() * hm;
    let (a1, a2, a3): (Vector3<f64>, Vector3<f64>, Vector3<f64>) =
        (a.column(0).into(), a.column(1).into(), a.column(2).into());
    let hinv = hm.try_inverse().ok_or_else(|| EstimationError::Degenerate("singular homography".into()))?;
    let w = (hinv * Vector3::new(reference.x, reference.y, 1.0)).z;
    if w.abs() < 1e-300 {
        return Err(EstimationError::Degenerate("reference pixel maps to infinity".into()));
    }
    let mut lambda = 2.0 / (a1.norm() + a2.norm());
    if w < 0.0 {
        lambda = -lambda;
    }
    let r1 = a1 * lambda;
    let r2 = a2 * lambda;
    let rg = nearest_rotation(&Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]));
    let tg = -(rg.inverse() * (a3 * lambda));
    let rotation = nalgebra::Rotation3::from_matrix_unchecked(rg.matrix() * plane.basis.transpose());
    let center = plane.origin + plane.basis * tg;
    Ok(CameraParams::new(*k, rotation, center))
}

/// Ground-plane decomposition; rejects cameras on or below the ground.
pub fn decompose_homography(h: &Homography, k: &Intrinsics, reference: &Pixel) -> Result<CameraParams, EstimationError> {
    let cam = decompose_plane_homography(h, k, &PlaneFrame::ground(), reference)?;
    if cam.center.z >= 0.0 {
        return Err(EstimationError::NonPhysical(format!("camera height {:.3} is not above the ground", -cam.center.z)));
    }
    Ok(cam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::world;
    use crate::field_model::{FieldModel, Side};

    fn cam() -> CameraParams {
        let k = Intrinsics::centered(1700.0, 1920.0, 1080.0);
        CameraParams::look_at(k, world(-8.0, 58.0, -16.0), world(-20.0, 5.0, 0.0), 0.02).unwrap()
    }

    #[test]
    fn canonical_pose() {
        let k = Intrinsics { fx: 1.0, fy: 1.0, cx: 0.0, cy: 0.0 };
        let h = Homography::new(Matrix3::identity()).unwrap();
        let c = decompose_homography(&h, &k, &Pixel::new(0.0, 0.0)).unwrap();
        assert!((c.rotation.matrix() - Matrix3::identity()).norm() < 1e-12);
        assert!((c.center - world(0.0, 0.0, -1.0)).norm() < 1e-12);
        let back = homography_from_projection(&c).unwrap();
        assert!((back.matrix() - h.matrix()).norm() < 1e-12);
    }

    #[test]
    fn ground_round_trip() {
        let c = cam();
        let h = homography_from_projection(&c).unwrap();
        let d = decompose_homography(&h, &c.intrinsics, &c.intrinsics.principal_point()).unwrap();
        assert!((d.rotation.matrix() - c.rotation.matrix()).norm() < 1e-8);
        assert!((d.center - c.center).norm() < 1e-8);
    }

    #[test]
    fn goal_plane_round_trip() {
        let c = cam();
        let model = FieldModel::default();
        let plane = PlaneFrame::goal(&model, Side::Left);
        let h = plane_homography(&c, &plane).unwrap();
        let reference = c.project(&world(-52.5, 0.0, -1.0)).unwrap();
        let d = decompose_plane_homography(&h, &c.intrinsics, &plane, &reference).unwrap();
        assert!((d.rotation.matrix() - c.rotation.matrix()).norm() < 1e-8);
        assert!((d.center - c.center).norm() < 1e-7);
    }

    #[test]
    fn reflection_is_non_physical() {
        let c = cam();
        let h = homography_from_projection(&c).unwrap();
        let flip = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        let hr = Homography::new(h.matrix() * flip).unwrap();
        let err = decompose_homography(&hr, &c.intrinsics, &c.intrinsics.principal_point()).unwrap_err();
        assert!(matches!(err, EstimationError::NonPhysical(_)));
    }

    #[test]
    fn camera_on_ground_is_degenerate() {
        let k = Intrinsics::centered(1000.0, 1280.0, 720.0);
        let c = CameraParams::look_at(k, world(0.0, 50.0, -10.0), world(0.0, 0.0, 0.0), 0.0).unwrap();
        let on_ground = CameraParams::new(k, c.rotation, world(0.0, 50.0, 0.0));
        assert!(homography_from_projection(&on_ground).is_err());
    }
}
