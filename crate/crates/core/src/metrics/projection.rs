//! Pixel-sampled projection and reprojection errors between homographies.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::camera::{Homography, Pixel};

pub const DEFAULT_SAMPLES: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionErrors {
    /// Mean ground-plane distance (field units) of the two back-projections.
    pub projection: f64,
    /// Mean image distance of the forward projections divided by the image
    /// height.
    pub reprojection: f64,
}

fn signed(h: &Homography) -> Matrix3<f64> {
    let m = *h.matrix();
    if m[(2, 2)] < 0.0 {
        -m
    } else {
        m
    }
}

fn apply(m: &Matrix3<f64>, p: &Pixel) -> Option<(Pixel, f64)> {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    (v.z.abs() > 1e-300).then(|| (Pixel::new(v.x / v.z, v.y / v.z), v.z))
}

/// Ground point seen at `p` under the ground truth, if it is in front of
/// the camera and on the field.
fn visible_field_point(ginv: &Matrix3<f64>, p: &Pixel, field: (f64, f64)) -> Option<Pixel> {
    let (x, w) = apply(ginv, p)?;
    (w > 0.0 && x.x.abs() <= field.0 / 2.0 && x.y.abs() <= field.1 / 2.0).then_some(x)
}

fn errors_at(
    pinv: &Matrix3<f64>,
    pred: &Matrix3<f64>,
    world: &Pixel,
    pixel: &Pixel,
    height: f64,
) -> (f64, f64) {
    let proj = apply(pinv, pixel).map_or(f64::INFINITY, |(x, _)| (x - world).norm());
    let reproj = apply(pred, world).map_or(f64::INFINITY, |(x, _)| (x - pixel).norm() / height);
    (proj, reproj)
}

/// Mean errors over `n` pixels drawn uniformly from the part of the image
/// that shows the field under the ground truth.
pub fn evaluate_projection_errors(
    pred: &Homography,
    gt: &Homography,
    image: (f64, f64),
    field: (f64, f64),
    n: usize,
    seed: u64,
) -> Result<ProjectionErrors, MetricsError> {
    let (pm, gm) = (signed(pred), signed(gt));
    let pinv = pm.try_inverse().ok_or(MetricsError::Singular)?;
    let ginv = gm.try_inverse().ok_or(MetricsError::Singular)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sp, mut sr, mut k) = (0.0, 0.0, 0usize);
    let max_tries = n.max(1) * 1000;
    for _ in 0..max_tries {
        if k == n {
            break;
        }
        let p = Pixel::new(rng.random_range(0.0..image.0), rng.random_range(0.0..image.1));
        let Some(world) = visible_field_point(&ginv, &p, field) else { continue };
        let (a, b) = errors_at(&pinv, &pm, &world, &p, image.1);
        sp += a;
        sr += b;
        k += 1;
    }
    if k == 0 {
        return Err(MetricsError::NoVisibleField);
    }
    Ok(ProjectionErrors { projection: sp / k as f64, reprojection: sr / k as f64 })
}

/// Same errors averaged over a regular pixel grid with `step` spacing.
pub fn grid_projection_errors(
    pred: &Homography,
    gt: &Homography,
    image: (f64, f64),
    field: (f64, f64),
    step: f64,
) -> Result<ProjectionErrors, MetricsError> {
    let (pm, gm) = (signed(pred), signed(gt));
    let pinv = pm.try_inverse().ok_or(MetricsError::Singular)?;
    let ginv = gm.try_inverse().ok_or(MetricsError::Singular)?;
    let (mut sp, mut sr, mut k) = (0.0, 0.0, 0usize);
    let mut v = step / 2.0;
    while v < image.1 {
        let mut u = step / 2.0;
        while u < image.0 {
            let p = Pixel::new(u, v);
            if let Some(world) = visible_field_point(&ginv, &p, field) {
                let (a, b) = errors_at(&pinv, &pm, &world, &p, image.1);
                sp += a;
                sr += b;
                k += 1;
            }
            u += step;
        }
        v += step;
    }
    if k == 0 {
        return Err(MetricsError::NoVisibleField);
    }
    Ok(ProjectionErrors { projection: sp / k as f64, reprojection: sr / k as f64 })
}
