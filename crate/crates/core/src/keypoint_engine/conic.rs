//! Image lines and ellipses: fitting, intersections and tangents.

use nalgebra::{Matrix2, Matrix3, Vector3};

use super::KeypointError;
use crate::camera::Pixel;

/// `a u + b v + c = 0` with `a^2 + b^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2D {
    pub fn from_coeffs(a: f64, b: f64, c: f64) -> Option<Self> {
        let n = (a * a + b * b).sqrt();
        (n > 1e-300 && n.is_finite()).then(|| Self { a: a / n, b: b / n, c: c / n })
    }

    pub fn through(p: &Pixel, q: &Pixel) -> Option<Self> {
        let h = Vector3::new(p.x, p.y, 1.0).cross(&Vector3::new(q.x, q.y, 1.0));
        Self::from_coeffs(h.x, h.y, h.z)
    }

    pub fn homogeneous(&self) -> Vector3<f64> {
        Vector3::new(self.a, self.b, self.c)
    }

    pub fn signed_distance(&self, p: &Pixel) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }

    /// Unit direction along the line.
    pub fn direction(&self) -> nalgebra::Vector2<f64> {
        nalgebra::Vector2::new(-self.b, self.a)
    }

    /// Point of the line closest to `p`.
    pub fn project(&self, p: &Pixel) -> Pixel {
        let d = self.signed_distance(p);
        Pixel::new(p.x - d * self.a, p.y - d * self.b)
    }

    /// Acute angle between two lines, radians.
    pub fn angle_to(&self, other: &Line2D) -> f64 {
        let cross = (self.a * other.b - self.b * other.a).abs();
        let dot = (self.a * other.a + self.b * other.b).abs();
        cross.atan2(dot)
    }

    pub fn intersect(&self, other: &Line2D) -> Option<Pixel> {
        let h = self.homogeneous().cross(&other.homogeneous());
        (h.z.abs() > 1e-15).then(|| Pixel::new(h.x / h.z, h.y / h.z))
    }

    /// Angle of the line direction to the image horizontal, in `[0, pi/2]`.
    pub fn inclination(&self) -> f64 {
        self.a.abs().atan2(self.b.abs())
    }
}

/// Total least squares line. Returns the line and the RMS orthogonal
/// residual.
pub fn fit_line(points: &[Pixel]) -> Result<(Line2D, f64), KeypointError> {
    if points.len() < 2 {
        return Err(KeypointError::TooFewPoints { needed: 2, got: points.len() });
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = nalgebra::Vector2::new(p.x - mx, p.y - my);
        cov += d * d.transpose();
    }
    if cov.trace() < 1e-18 {
        return Err(KeypointError::Degenerate("coincident points".into()));
    }
    let eig = cov.symmetric_eigen();
    let (imin, _) = eig.eigenvalues.argmin();
    let normal = eig.eigenvectors.column(imin);
    let line = Line2D::from_coeffs(normal[0], normal[1], -(normal[0] * mx + normal[1] * my))
        .ok_or_else(|| KeypointError::Degenerate("no line direction".into()))?;
    let rms = (points.iter().map(|p| line.signed_distance(p).powi(2)).sum::<f64>() / n).sqrt();
    Ok((line, rms))
}

/// Proper ellipse as a symmetric conic matrix with unit Frobenius norm,
/// signed so that interior points evaluate negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse2D {
    m: Matrix3<f64>,
}

impl Ellipse2D {
    /// Wraps a conic matrix; rejects non-ellipses.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, KeypointError> {
        let m = (m + m.transpose()) * 0.5;
        let n = m.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(KeypointError::Degenerate("zero conic".into()));
        }
        let m = m / n;
        let (a, b, c) = (m[(0, 0)], 2.0 * m[(0, 1)], m[(1, 1)]);
        if b * b - 4.0 * a * c >= 0.0 {
            return Err(KeypointError::Degenerate("conic is not an ellipse".into()));
        }
        let mut e = Self { m };
        let center = e.center();
        if e.eval(&center) > 0.0 {
            e.m = -e.m;
        }
        if e.eval(&center) == 0.0 {
            return Err(KeypointError::Degenerate("degenerate point conic".into()));
        }
        Ok(e)
    }

    /// Axis-aligned ellipse with semi-axes `(ra, rb)`.
    pub fn axis_aligned(center: Pixel, ra: f64, rb: f64) -> Result<Self, KeypointError> {
        let (a, c) = (1.0 / (ra * ra), 1.0 / (rb * rb));
        let m = Matrix3::new(
            a,
            0.0,
            -a * center.x,
            0.0,
            c,
            -c * center.y,
            -a * center.x,
            -c * center.y,
            a * center.x * center.x + c * center.y * center.y - 1.0,
        );
        Self::from_matrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn eval(&self, p: &Pixel) -> f64 {
        let v = Vector3::new(p.x, p.y, 1.0);
        v.dot(&(self.m * v))
    }

    pub fn is_inside(&self, p: &Pixel) -> bool {
        self.eval(p) < 0.0
    }

    pub fn center(&self) -> Pixel {
        let q = Matrix2::new(self.m[(0, 0)], self.m[(0, 1)], self.m[(1, 0)], self.m[(1, 1)]);
        let rhs = -nalgebra::Vector2::new(self.m[(0, 2)], self.m[(1, 2)]);
        let c = q.try_inverse().map(|qi| qi * rhs).unwrap_or_else(nalgebra::Vector2::zeros);
        Pixel::new(c.x, c.y)
    }

    /// Semi-axis lengths, larger first.
    pub fn semi_axes(&self) -> (f64, f64) {
        let q = Matrix2::new(self.m[(0, 0)], self.m[(0, 1)], self.m[(1, 0)], self.m[(1, 1)]);
        let f = self.eval(&self.center());
        let ev = q.symmetric_eigen().eigenvalues;
        let (a1, a2) = ((-f / ev[0]).sqrt(), (-f / ev[1]).sqrt());
        (a1.max(a2), a1.min(a2))
    }
}

/// Direct least-squares ellipse fit on centered, scaled data using the
/// partitioned scatter matrix. Returns the ellipse and per-point algebraic
/// residuals.
pub fn fit_ellipse(points: &[Pixel]) -> Result<(Ellipse2D, Vec<f64>), KeypointError> {
    if points.len() < 5 {
        return Err(KeypointError::TooFewPoints { needed: 5, got: points.len() });
    }
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
    let (mx, my) = (sx / n, sy / n);
    let scale = points.iter().map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt()).sum::<f64>() / n;
    if !(scale > 1e-12) {
        return Err(KeypointError::Degenerate("coincident points".into()));
    }
    let norm: Vec<(f64, f64)> = points.iter().map(|p| ((p.x - mx) / scale, (p.y - my) / scale)).collect();

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(x, y) in &norm {
        let d1 = Vector3::new(x * x, x * y, y * y);
        let d2 = Vector3::new(x, y, 1.0);
        s1 += d1 * d1.transpose();
        s2 += d1 * d2.transpose();
        s3 += d2 * d2.transpose();
    }
    if (s3.determinant() / n.powi(3)).abs() < 1e-14 {
        return Err(KeypointError::Degenerate("collinear points".into()));
    }
    let t = -(s3.try_inverse().expect("checked determinant") * s2.transpose());
    let reduced = s1 + s2 * t;
    let c1_inv = Matrix3::new(0.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.5, 0.0, 0.0);
    let mm = c1_inv * reduced;

    let mut best: Option<(f64, Vector3<f64>)> = None;
    for ev in mm.complex_eigenvalues().iter() {
        let lam = ev.re;
        let shifted = mm - Matrix3::identity() * lam;
        let svd = shifted.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let (imin, _) = svd.singular_values.argmin();
        let a1: Vector3<f64> = vt.row(imin).transpose();
        let cond = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if cond <= 0.0 {
            continue;
        }
        // Algebraic cost of this candidate under the constraint normalization.
        let a2 = t * a1;
        let cost = norm
            .iter()
            .map(|&(x, y)| {
                (a1[0] * x * x + a1[1] * x * y + a1[2] * y * y + a2[0] * x + a2[1] * y + a2[2]).powi(2)
            })
            .sum::<f64>()
            / cond;
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, a1));
        }
    }
    let (_, a1) = best.ok_or_else(|| KeypointError::Degenerate("no elliptical solution".into()))?;
    let a2 = t * a1;
    let cn = Matrix3::new(
        a1[0],
        a1[1] / 2.0,
        a2[0] / 2.0,
        a1[1] / 2.0,
        a1[2],
        a2[1] / 2.0,
        a2[0] / 2.0,
        a2[1] / 2.0,
        a2[2],
    );
    let nmat = Matrix3::new(1.0 / scale, 0.0, -mx / scale, 0.0, 1.0 / scale, -my / scale, 0.0, 0.0, 1.0);
    let ellipse = Ellipse2D::from_matrix(nmat.transpose() * cn * nmat)?;
    let residuals = points.iter().map(|p| ellipse.eval(p)).collect();
    Ok((ellipse, residuals))
}

/// Real intersections of a line with an ellipse: two points, one for a
/// tangent line, none otherwise. Two points come sorted by `(u, v)`.
pub fn line_ellipse_intersections(line: &Line2D, ellipse: &Ellipse2D) -> Vec<Pixel> {
    let p0 = line.project(&ellipse.center());
    let d = line.direction();
    let c = ellipse.matrix();
    let hp = Vector3::new(p0.x, p0.y, 1.0);
    let hd = Vector3::new(d.x, d.y, 0.0);
    let alpha = hd.dot(&(c * hd));
    let beta = 2.0 * hd.dot(&(c * hp));
    let gamma = hp.dot(&(c * hp));
    if alpha.abs() < 1e-300 {
        return vec![];
    }
    let disc = beta * beta - 4.0 * alpha * gamma;
    let tol = 1e-12 * (beta * beta + (4.0 * alpha * gamma).abs());
    let at = |s: f64| Pixel::new(p0.x + s * d.x, p0.y + s * d.y);
    if disc.abs() <= tol {
        return vec![at(-beta / (2.0 * alpha))];
    }
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    // Numerically stable root pair.
    let q = -0.5 * (beta + beta.signum() * sq);
    let (s1, s2) = if q.abs() > 1e-300 { (q / alpha, gamma / q) } else { (sq / (2.0 * alpha), -sq / (2.0 * alpha)) };
    let mut pts = vec![at(s1), at(s2)];
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts
}

/// Contact points of the two tangents from an external point: the
/// intersections of the polar line `C p` with the conic.
pub fn ellipse_tangent_points(external: &Pixel, ellipse: &Ellipse2D) -> Result<[Pixel; 2], KeypointError> {
    let p = Vector3::new(external.x, external.y, 1.0);
    let v = p.dot(&(ellipse.matrix() * p)) / p.norm_squared();
    if v <= 1e-14 {
        return Err(KeypointError::InteriorPoint);
    }
    let polar = ellipse.matrix() * p;
    let line = Line2D::from_coeffs(polar.x, polar.y, polar.z).ok_or(KeypointError::InteriorPoint)?;
    match line_ellipse_intersections(&line, ellipse).as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(KeypointError::InteriorPoint),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(x: f64, y: f64) -> Pixel {
        Pixel::new(x, y)
    }

    fn unit_circle() -> Ellipse2D {
        Ellipse2D::axis_aligned(px(0.0, 0.0), 1.0, 1.0).unwrap()
    }

    #[test]
    fn axis_lines() {
        let (l, r) = fit_line(&[px(0.0, 0.0), px(10.0, 0.0)]).unwrap();
        assert!(l.a.abs() < 1e-12 && (l.b.abs() - 1.0).abs() < 1e-12 && l.c.abs() < 1e-12);
        assert!(r < 1e-12);
        let (l, _) = fit_line(&[px(0.0, 0.0), px(0.0, 5.0), px(0.0, 9.0)]).unwrap();
        assert!((l.a.abs() - 1.0).abs() < 1e-12 && l.b.abs() < 1e-12 && l.c.abs() < 1e-12);
        assert!(fit_line(&[px(1.0, 1.0), px(1.0, 1.0)]).is_err());
    }

    #[test]
    fn noisy_line_residual_matches_brute_force() {
        let pts = [px(0.0, 0.0), px(1.0, 1.0), px(2.0, 2.1)];
        let (_, rms) = fit_line(&pts).unwrap();
        // Brute force over line angles and offsets.
        let mut best = f64::INFINITY;
        for i in 0..20000 {
            let th = i as f64 / 20000.0 * std::f64::consts::PI;
            let (a, b) = (th.cos(), th.sin());
            let c = -(pts.iter().map(|p| a * p.x + b * p.y).sum::<f64>() / 3.0);
            let e = (pts.iter().map(|p| (a * p.x + b * p.y + c).powi(2)).sum::<f64>() / 3.0).sqrt();
            best = best.min(e);
        }
        assert!(rms < 0.05);
        assert!(rms <= best + 1e-9);
    }

    #[test]
    fn exact_circle_fit() {
        let pts: Vec<Pixel> = (0..8)
            .map(|i| {
                let t = i as f64 * std::f64::consts::PI / 4.0;
                px(100.0 + 50.0 * t.cos(), 100.0 + 50.0 * t.sin())
            })
            .collect();
        let (e, res) = fit_ellipse(&pts).unwrap();
        assert!((e.center() - px(100.0, 100.0)).norm() < 1e-6);
        let (a, b) = e.semi_axes();
        assert!((a - 50.0).abs() < 1e-6 && (b - 50.0).abs() < 1e-6, "{a} {b}");
        assert!(res.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn collinear_ellipse_is_degenerate() {
        let pts: Vec<Pixel> = (0..5).map(|i| px(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(fit_ellipse(&pts), Err(KeypointError::Degenerate(_))));
        assert!(matches!(fit_ellipse(&pts[..4]), Err(KeypointError::TooFewPoints { .. })));
    }

    #[test]
    fn unit_circle_intersections() {
        let c = unit_circle();
        let secant = line_ellipse_intersections(&Line2D::from_coeffs(0.0, 1.0, 0.0).unwrap(), &c);
        assert_eq!(secant.len(), 2);
        assert!((secant[0] - px(-1.0, 0.0)).norm() < 1e-12 && (secant[1] - px(1.0, 0.0)).norm() < 1e-12);
        let tangent = line_ellipse_intersections(&Line2D::from_coeffs(0.0, 1.0, -1.0).unwrap(), &c);
        assert_eq!(tangent.len(), 1);
        assert!((tangent[0] - px(0.0, 1.0)).norm() < 1e-12);
        assert!(line_ellipse_intersections(&Line2D::from_coeffs(0.0, 1.0, -2.0).unwrap(), &c).is_empty());
    }

    #[test]
    fn unit_circle_tangents() {
        let c = unit_circle();
        let [a, b] = ellipse_tangent_points(&px(2.0, 0.0), &c).unwrap();
        let s3 = 3f64.sqrt() / 2.0;
        let mut ys = [a.y, b.y];
        ys.sort_by(f64::total_cmp);
        assert!((a.x - 0.5).abs() < 1e-12 && (b.x - 0.5).abs() < 1e-12);
        assert!((ys[0] + s3).abs() < 1e-12 && (ys[1] - s3).abs() < 1e-12);
        assert!(matches!(ellipse_tangent_points(&px(0.5, 0.0), &c), Err(KeypointError::InteriorPoint)));
    }
}
