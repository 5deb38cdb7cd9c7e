//! Area overlap of warped regions, computed with exact convex clipping.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::camera::{Homography, Pixel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouMode {
    /// Visible part of the field in the frame.
    Part,
    /// Whole field template.
    Whole,
}

/// Shoelace area, positive for counter-clockwise polygons.
pub fn signed_area(poly: &[Pixel]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        a.x * b.y - b.x * a.y
    }).sum::<f64>() / 2.0
}

pub fn area(poly: &[Pixel]) -> f64 {
    signed_area(poly).abs()
}

fn ccw(mut poly: Vec<Pixel>) -> Vec<Pixel> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Keeps the part of `poly` where `f >= 0`, `f` affine.
fn clip_half_plane(poly: &[Pixel], f: impl Fn(&Pixel) -> f64) -> Vec<Pixel> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let (fa, fb) = (f(&a), f(&b));
        if fa >= 0.0 {
            out.push(a);
        }
        if (fa >= 0.0) != (fb >= 0.0) {
            let s = fa / (fa - fb);
            out.push(a + (b - a) * s);
        }
    }
    out
}

/// Intersection of two convex polygons (Sutherland-Hodgman).
pub fn convex_intersection(subject: &[Pixel], clip: &[Pixel]) -> Vec<Pixel> {
    let clip = ccw(clip.to_vec());
    let mut out = ccw(subject.to_vec());
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        out = clip_half_plane(&out, |p| (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x));
    }
    out
}

/// Maps a convex polygon through `m`, first cutting it to the side where
/// the homogeneous coordinate is positive.
fn warp_polygon(poly: &[Pixel], m: &Matrix3<f64>) -> Vec<Pixel> {
    let scale = poly.iter().map(|p| p.x.abs().max(p.y.abs())).fold(1.0, f64::max);
    let row = m.row(2);
    let tol = 1e-9 * (row[0].abs() * scale + row[1].abs() * scale + row[2].abs());
    let front = clip_half_plane(poly, |p| row[0] * p.x + row[1] * p.y + row[2] - tol);
    front
        .iter()
        .map(|p| {
            let v = m * Vector3::new(p.x, p.y, 1.0);
            Pixel::new(v.x / v.z, v.y / v.z)
        })
        .collect()
}

fn iou_of(a: &[Pixel], b: &[Pixel]) -> f64 {
    let (aa, ab) = (area(a), area(b));
    if aa + ab <= 0.0 {
        return 0.0;
    }
    let inter = if a.len() >= 3 && b.len() >= 3 { area(&convex_intersection(a, b)) } else { 0.0 };
    let union = aa + ab - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Raw inverse keeping the sign convention that points in front of the
/// camera get a positive homogeneous coordinate.
fn raw(h: &Homography) -> Matrix3<f64> {
    let m = *h.matrix();
    if m[(2, 2)] < 0.0 {
        -m
    } else {
        m
    }
}

fn raw_inverse(h: &Homography) -> Result<Matrix3<f64>, MetricsError> {
    raw(h).try_inverse().ok_or(MetricsError::Singular)
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Pixel> {
    vec![Pixel::new(x0, y0), Pixel::new(x1, y0), Pixel::new(x1, y1), Pixel::new(x0, y1)]
}

/// IoU of two field-to-image homographies. `field` is the template
/// `(length, width)` centered on the origin. Part mode compares the frame
/// back-projected into the template; whole mode compares the template with
/// its image under `pred^-1 * gt`, averaged over both directions.
pub fn evaluate_iou(
    pred: &Homography,
    gt: &Homography,
    field: (f64, f64),
    image: (f64, f64),
    mode: IouMode,
) -> Result<f64, MetricsError> {
    let (l, w) = field;
    let template = rect(-l / 2.0, -w / 2.0, l / 2.0, w / 2.0);
    let (pinv, ginv) = (raw_inverse(pred)?, raw_inverse(gt)?);
    match mode {
        IouMode::Part => {
            let frame = rect(0.0, 0.0, image.0, image.1);
            let region = |inv: &Matrix3<f64>| {
                let p = warp_polygon(&frame, inv);
                if p.len() < 3 {
                    vec![]
                } else {
                    convex_intersection(&p, &template)
                }
            };
            let (a, b) = (region(&pinv), region(&ginv));
            if area(&b) <= 0.0 {
                return Err(MetricsError::NoVisibleField);
            }
            Ok(iou_of(&a, &b))
        }
        IouMode::Whole => {
            // Straight through the plane-to-plane map: going via the image
            // would lose whatever part of the field is behind the camera.
            let one_way = |to: &Matrix3<f64>, from: &Homography| {
                let back = warp_polygon(&template, &(to * raw(from)));
                iou_of(&template, &back)
            };
            Ok(0.5 * (one_way(&pinv, gt) + one_way(&ginv, pred)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(x: f64, y: f64) -> Pixel {
        Pixel::new(x, y)
    }

    #[test]
    fn shoelace() {
        assert_eq!(signed_area(&rect(0.0, 0.0, 2.0, 3.0)), 6.0);
        let tri = [px(0.0, 0.0), px(0.0, 1.0), px(1.0, 0.0)];
        assert_eq!(signed_area(&tri), -0.5);
    }

    #[test]
    fn square_overlap() {
        let a = rect(0.0, 0.0, 2.0, 2.0);
        let b = rect(1.0, 1.0, 3.0, 3.0);
        assert!((area(&convex_intersection(&a, &b)) - 1.0).abs() < 1e-12);
        assert!((iou_of(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou_of(&a, &rect(5.0, 5.0, 6.0, 6.0)), 0.0);
    }

    fn side_camera() -> Homography {
        use crate::camera::{world, CameraParams, Intrinsics};
        let k = Intrinsics::centered(1500.0, 1920.0, 1080.0);
        let cam = CameraParams::look_at(k, world(0.0, 45.0, -15.0), world(40.0, 20.0, 0.0), 0.0).unwrap();
        assert!(cam.depth(&world(-52.5, 34.0, 0.0)) < 0.0);
        crate::estimation::homography_from_projection(&cam).unwrap()
    }

    #[test]
    fn whole_field_partly_behind_camera() {
        let h = side_camera();
        let iou = evaluate_iou(&h, &h, (105.0, 68.0), (1920.0, 1080.0), IouMode::Whole).unwrap();
        assert!((iou - 1.0).abs() < 1e-9, "{iou}");
    }

    #[test]
    fn one_yard_shift() {
        let gt = side_camera();
        let shift = Matrix3::new(1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let pred = Homography::new(gt.matrix() * shift).unwrap();
        let iou = evaluate_iou(&pred, &gt, (115.0, 74.0), (1920.0, 1080.0), IouMode::Whole).unwrap();
        assert!((iou - 114.0 / 116.0).abs() < 1e-9, "{iou}");
    }
}
