//! Focal length from plane homographies via the image of the absolute conic.
//!
//! With zero skew and the principal point at the image center, each plane
//! homography `H = [h1 h2 h3]` gives two linear constraints on
//! `w = K^-T K^-1`: `h1' w h2 = 0` and `h1' w h1 = h2' w h2`.

use nalgebra::{Matrix3, Vector3};

use super::EstimationError;
use crate::camera::{Homography, Intrinsics};

/// Each row holds `(coef_a, coef_b, rhs)` for `coef_a * a + coef_b * b = rhs`
/// where `a = (s/fx)^2`, `b = (s/fy)^2` in centered, scaled pixels.
fn constraint_rows(h: &Matrix3<f64>, cx: f64, cy: f64, s: f64) -> [[f64; 3]; 2] {
    let n = Matrix3::new(1.0 / s, 0.0, -cx / s, 0.0, 1.0 / s, -cy / s, 0.0, 0.0, 1.0);
    let hp = n * h;
    let hp = hp / hp.norm();
    let (h1, h2): (Vector3<f64>, Vector3<f64>) = (hp.column(0).into(), hp.column(1).into());
    [
        [h1.x * h2.x, h1.y * h2.y, -h1.z * h2.z],
        [h1.x * h1.x - h2.x * h2.x, h1.y * h1.y - h2.y * h2.y, -(h1.z * h1.z - h2.z * h2.z)],
    ]
}

/// Plausible focal range relative to the larger image side.
const FOCAL_RANGE: (f64, f64) = (0.05, 50.0);

pub fn estimate_intrinsics(
    homographies: &[Homography],
    width: f64,
    height: f64,
    lock_aspect: bool,
) -> Result<Intrinsics, EstimationError> {
    if homographies.is_empty() {
        return Err(EstimationError::UnsolvableIntrinsics("no plane homography".into()));
    }
    let (cx, cy) = (width / 2.0, height / 2.0);
    let s = width.max(height);
    let rows: Vec<[f64; 3]> =
        homographies.iter().flat_map(|h| constraint_rows(h.matrix(), cx, cy, s)).collect();

    let (a, b) = if lock_aspect {
        let (num, den) = rows.iter().fold((0.0, 0.0), |(n, d), r| {
            let c = r[0] + r[1];
            (n + c * r[2], d + c * c)
        });
        if den < 1e-14 {
            return Err(EstimationError::UnsolvableIntrinsics("fronto-parallel or degenerate view".into()));
        }
        let a = num / den;
        (a, a)
    } else {
        if rows.len() < 2 {
            return Err(EstimationError::UnsolvableIntrinsics("not enough constraints".into()));
        }
        let mut ata = nalgebra::Matrix2::zeros();
        let mut atb = nalgebra::Vector2::zeros();
        for r in &rows {
            let v = nalgebra::Vector2::new(r[0], r[1]);
            ata += v * v.transpose();
            atb += v * r[2];
        }
        if ata.determinant().abs() < 1e-20 {
            return Err(EstimationError::UnsolvableIntrinsics("rank-deficient constraints".into()));
        }
        let sol = ata.try_inverse().expect("checked determinant") * atb;
        (sol.x, sol.y)
    };
    if !(a > 0.0 && b > 0.0) {
        return Err(EstimationError::UnsolvableIntrinsics(format!("non-positive 1/f^2 estimate ({a:.3e}, {b:.3e})")));
    }
    let (fx, fy) = (s / a.sqrt(), s / b.sqrt());
    for f in [fx, fy] {
        if !(f > FOCAL_RANGE.0 * s && f < FOCAL_RANGE.1 * s) {
            return Err(EstimationError::UnsolvableIntrinsics(format!("focal {f:.1} px outside plausible range")));
        }
    }
    Ok(Intrinsics { fx, fy, cx, cy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{world, CameraParams};
    use crate::estimation::homography_from_projection;

    #[test]
    fn recovers_focal_from_ground_homography() {
        let k = Intrinsics::centered(2000.0, 1920.0, 1080.0);
        let cam = CameraParams::look_at(k, world(10.0, 55.0, -18.0), world(-5.0, 0.0, 0.0), 0.01).unwrap();
        let h = homography_from_projection(&cam).unwrap();
        let est = estimate_intrinsics(&[h], 1920.0, 1080.0, true).unwrap();
        assert!((est.fx - 2000.0).abs() / 2000.0 < 1e-3);
    }

    #[test]
    fn fronto_parallel_is_unsolvable() {
        let k = Intrinsics::centered(1000.0, 1280.0, 720.0);
        let cam = CameraParams::new(k, nalgebra::Rotation3::identity(), world(3.0, 2.0, -30.0));
        let h = homography_from_projection(&cam).unwrap();
        assert!(matches!(
            estimate_intrinsics(&[h], 1280.0, 720.0, true),
            Err(EstimationError::UnsolvableIntrinsics(_))
        ));
    }
}
