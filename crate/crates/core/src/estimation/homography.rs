//! DLT, RANSAC and LM refinement for plane-to-image homographies.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EstimationError;
use crate::camera::{apply_h, Homography, Pixel};
use crate::lm::{self, LmConfig};

/// Similarity moving the centroid to the origin with mean distance sqrt(2).
fn hartley(points: &[Pixel]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_d = points.iter().map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
    if !(mean_d > 1e-12 && mean_d.is_finite()) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_d;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

/// Twice the signed area of a triangle relative to its squared edge scale.
fn relative_area(a: &Pixel, b: &Pixel, c: &Pixel) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let area = ab.x * ac.y - ab.y * ac.x;
    let scale = ab.norm_squared().max(ac.norm_squared()).max((c - b).norm_squared());
    if scale == 0.0 {
        0.0
    } else {
        area / scale
    }
}

/// True if some three of the points are (nearly) collinear.
pub fn has_collinear_triple(points: &[Pixel], tol: f64) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if relative_area(&points[i], &points[j], &points[k]).abs() < tol {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized DLT. `src` are plane coordinates, `dst` image pixels.
pub fn dlt_homography(src: &[Pixel], dst: &[Pixel]) -> Result<Homography, EstimationError> {
    let n = src.len();
    if n != dst.len() {
        return Err(EstimationError::Degenerate("correspondence count mismatch".into()));
    }
    if n < 4 {
        return Err(EstimationError::InsufficientPoints { needed: 4, got: n });
    }
    if n == 4 && (has_collinear_triple(src, 1e-9) || has_collinear_triple(dst, 1e-9)) {
        return Err(EstimationError::Degenerate("collinear minimal sample".into()));
    }
    let ts = hartley(src).ok_or_else(|| EstimationError::Degenerate("coincident plane points".into()))?;
    let td = hartley(dst).ok_or_else(|| EstimationError::Degenerate("coincident image points".into()))?;
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = apply_h(&ts, s).expect("affine");
        let d = apply_h(&td, d).expect("affine");
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * i, c)] = r0[c];
            a[(2 * i + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| EstimationError::Degenerate("svd failed".into()))?;
    let sv = &svd.singular_values;
    let (imin, _) = sv.argmin();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if sorted[7] <= 1e-10 * sorted[0] {
        return Err(EstimationError::Degenerate("rank-deficient DLT system".into()));
    }
    let h = vt.row(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().expect("similarity");
    let m = td_inv * hn * ts;
    if m.determinant().abs() < 1e-14 * m.norm().powi(3) {
        return Err(EstimationError::Degenerate("singular homography".into()));
    }
    Homography::new(m).ok_or_else(|| EstimationError::Degenerate("non-finite homography".into()))
}

/// Forward transfer error in pixels.
pub fn transfer_error(h: &Homography, src: &Pixel, dst: &Pixel) -> f64 {
    h.apply(src).map_or(f64::INFINITY, |p| (p - dst).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub homography: Homography,
    pub inliers: Vec<bool>,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|b| **b).count()
    }
}

pub const RANSAC_CONFIDENCE: f64 = 0.999;

/// Seeded RANSAC over minimal 4-point samples with an adaptive iteration
/// count, followed by a refit on the consensus set. `threshold = None`
/// returns the plain DLT over all points with every point marked inlier.
pub fn ransac_homography(
    src: &[Pixel],
    dst: &[Pixel],
    threshold: Option<f64>,
    max_iters: usize,
    seed: u64,
) -> Result<RansacResult, EstimationError> {
    let n = src.len();
    if n < 4 {
        return Err(EstimationError::InsufficientPoints { needed: 4, got: n });
    }
    let Some(th) = threshold else {
        let h = dlt_homography(src, dst)?;
        return Ok(RansacResult { homography: h, inliers: vec![true; n] });
    };
    let mask_for = |h: &Homography| -> (Vec<bool>, f64) {
        let mut err = 0.0;
        let mask = src
            .iter()
            .zip(dst)
            .map(|(s, d)| {
                let e = transfer_error(h, s, d);
                let ok = e < th;
                if ok {
                    err += e;
                }
                ok
            })
            .collect();
        (mask, err)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Homography)> = None;
    let mut needed = max_iters;
    let mut it = 0;
    while it < needed.min(max_iters) {
        it += 1;
        let idx = sample(&mut rng, n, 4).into_vec();
        let s: Vec<Pixel> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<Pixel> = idx.iter().map(|&i| dst[i]).collect();
        let Ok(h) = dlt_homography(&s, &d) else { continue };
        let (mask, err) = mask_for(&h);
        let count = mask.iter().filter(|b| **b).count();
        let better = match &best {
            None => true,
            Some((bc, be, _)) => count > *bc || (count == *bc && err < *be),
        };
        if better {
            best = Some((count, err, h));
            let w = count as f64 / n as f64;
            let denom = (1.0 - w.powi(4)).ln();
            needed = if denom >= 0.0 || !denom.is_finite() {
                it
            } else {
                (((1.0 - RANSAC_CONFIDENCE).ln() / denom).ceil() as usize).max(it)
            };
        }
    }
    let (count, _, mut h) = best.ok_or(EstimationError::NoConsensus)?;
    if count < 4 {
        return Err(EstimationError::NoConsensus);
    }
    let (mut mask, _) = mask_for(&h);
    for _ in 0..3 {
        let s: Vec<Pixel> = src.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
        let d: Vec<Pixel> = dst.iter().zip(&mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
        let Ok(refit) = dlt_homography(&s, &d) else { break };
        let (new_mask, _) = mask_for(&refit);
        if new_mask.iter().filter(|b| **b).count() < 4 {
            break;
        }
        h = refit;
        let stable = new_mask == mask;
        mask = new_mask;
        if stable {
            break;
        }
    }
    Ok(RansacResult { homography: h, inliers: mask })
}

/// Sum of squared forward transfer errors.
pub fn transfer_cost(h: &Homography, src: &[Pixel], dst: &[Pixel]) -> f64 {
    src.iter().zip(dst).map(|(s, d)| transfer_error(h, s, d).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedHomography {
    pub homography: Homography,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Set when refinement could not improve and the input was returned.
    pub diverged: bool,
}

/// LM on the 8 free entries (scale fixed through the current largest entry),
/// minimizing forward transfer error.
pub fn refine_homography_lm(h: &Homography, src: &[Pixel], dst: &[Pixel]) -> RefinedHomography {
    let initial_cost = transfer_cost(h, src, dst);
    let m = *h.matrix();
    let (fix, _) = m.iter().enumerate().fold((0, 0.0), |acc, (i, v)| if v.abs() > acc.1 { (i, v.abs()) } else { acc });
    let base = m / m[fix];
    let free: Vec<usize> = (0..9).filter(|i| *i != fix).collect();
    let to_matrix = |p: &DVector<f64>| {
        let mut mm = SMatrix::<f64, 3, 3>::zeros();
        mm[fix] = 1.0;
        for (k, &i) in free.iter().enumerate() {
            mm[i] = p[k];
        }
        mm
    };
    let residual = |p: &DVector<f64>| {
        let mm = to_matrix(p);
        let mut r = DVector::zeros(2 * src.len());
        for (i, (s, d)) in src.iter().zip(dst).enumerate() {
            match apply_h(&mm, s) {
                Some(q) => {
                    r[2 * i] = q.x - d.x;
                    r[2 * i + 1] = q.y - d.y;
                }
                None => {
                    r[2 * i] = f64::INFINITY;
                }
            }
        }
        r
    };
    let x0 = DVector::from_iterator(8, free.iter().map(|&i| base[i]));
    let rep = lm::minimize(residual, x0, &LmConfig::default());
    match Homography::new(to_matrix(&rep.params)) {
        Some(hn) => {
            let final_cost = transfer_cost(&hn, src, dst);
            if final_cost <= initial_cost {
                RefinedHomography { homography: hn, initial_cost, final_cost, diverged: false }
            } else {
                RefinedHomography { homography: *h, initial_cost, final_cost: initial_cost, diverged: true }
            }
        }
        None => RefinedHomography { homography: *h, initial_cost, final_cost: initial_cost, diverged: true },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(x: f64, y: f64) -> Pixel {
        Pixel::new(x, y)
    }

    #[test]
    fn unit_square_identity() {
        let sq = [px(0.0, 0.0), px(1.0, 0.0), px(1.0, 1.0), px(0.0, 1.0)];
        let h = dlt_homography(&sq, &sq).unwrap();
        let id = Homography::new(Matrix3::identity()).unwrap();
        assert!((h.matrix() - id.matrix()).norm() < 1e-12);
    }

    #[test]
    fn collinear_is_degenerate() {
        let src = [px(0.0, 0.0), px(1.0, 0.0), px(2.0, 0.0), px(3.0, 0.0)];
        let dst = [px(0.0, 0.0), px(1.0, 1.0), px(2.0, 3.0), px(3.0, 0.0)];
        assert!(matches!(dlt_homography(&src, &dst), Err(EstimationError::Degenerate(_))));
        let src5 = [px(0.0, 0.0), px(1.0, 0.0), px(2.0, 0.0), px(3.0, 0.0), px(4.0, 0.0)];
        assert!(dlt_homography(&src5, &src5).is_err());
    }

    #[test]
    fn too_few_points() {
        let s = [px(0.0, 0.0), px(1.0, 0.0), px(1.0, 1.0)];
        assert!(matches!(dlt_homography(&s, &s), Err(EstimationError::InsufficientPoints { .. })));
    }

    #[test]
    fn ransac_without_threshold_is_dlt() {
        let src: Vec<Pixel> = (0..10).map(|i| px(i as f64, (i * i % 7) as f64)).collect();
        let dst: Vec<Pixel> = src.iter().map(|p| px(2.0 * p.x + 1.0 + 0.01 * p.y * p.y, p.y - 3.0)).collect();
        let r = ransac_homography(&src, &dst, None, 100, 1).unwrap();
        assert!(r.inliers.iter().all(|b| *b));
        assert_eq!(r.homography, dlt_homography(&src, &dst).unwrap());
    }
}
