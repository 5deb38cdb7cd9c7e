//! Joint point and line pose refinement with fixed intrinsics.

use nalgebra::{DVector, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraParams, Pixel};
use crate::detect_io::LineObservation;
use crate::field_model::{FieldModel, SegmentGeometry, SegmentId, WorldPoint};
use crate::keypoint_engine::{fit_line, Line2D};
use crate::lm::{minimize, LmConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnlError {
    #[error("principal ray does not meet the ground in front of the camera")]
    NoGroundIntersection,
    #[error("both segment endpoints are behind the camera plane")]
    BehindCamera,
    #[error("projected line has coincident endpoints")]
    ZeroLengthLine,
    #[error("no residual terms")]
    NoResiduals,
}

/// Plane through the camera center, normal to the principal ray. Points
/// are projected only once they are at least `epsilon` ahead of it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPlane {
    pub anchor: WorldPoint,
    pub normal: Vector3<f64>,
    pub epsilon: f64,
}

impl CameraPlane {
    pub fn signed_distance(&self, p: &WorldPoint) -> f64 {
        (p - self.anchor).dot(&self.normal)
    }
}

/// Normal from the camera center toward the ground point hit by the
/// principal ray.
pub fn build_camera_plane(params: &CameraParams, epsilon: f64) -> Result<CameraPlane, PnlError> {
    let d = params.principal_ray();
    let t = params.center;
    if d.z.abs() < 1e-12 {
        return Err(PnlError::NoGroundIntersection);
    }
    let s = -t.z / d.z;
    if s <= 0.0 {
        return Err(PnlError::NoGroundIntersection);
    }
    let hit = t + d * s;
    let normal = (hit - t).normalize();
    Ok(CameraPlane { anchor: t, normal, epsilon })
}

/// Moves `q` along the segment toward `p` until it is `epsilon` ahead of the
/// camera plane. Points already that far ahead are returned unchanged.
pub fn clip_endpoint(p: &WorldPoint, q: &WorldPoint, plane: &CameraPlane) -> Result<WorldPoint, PnlError> {
    let dq = plane.signed_distance(q);
    if dq >= plane.epsilon {
        return Ok(*q);
    }
    let dp = plane.signed_distance(p);
    if dp < plane.epsilon {
        return Err(PnlError::BehindCamera);
    }
    let s = (plane.epsilon + plane.normal.dot(&(plane.anchor - q))) / plane.normal.dot(&(p - q));
    Ok(q + (p - q) * s)
}

/// Both endpoints of a straight model segment after clipping.
pub fn clipped_segment(
    id: SegmentId,
    params: &CameraParams,
    model: &FieldModel,
    epsilon: f64,
) -> Result<Option<[WorldPoint; 2]>, PnlError> {
    let Ok(SegmentGeometry::Line { start, end }) = model.segment(id) else { return Ok(None) };
    let plane = build_camera_plane(params, epsilon)?;
    let a = clip_endpoint(end, start, &plane)?;
    let b = clip_endpoint(start, end, &plane)?;
    Ok(Some([a, b]))
}

/// Model line projected into the image, with its endpoints moved to the
/// image border.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedLine {
    pub segment: SegmentId,
    pub endpoints: [Pixel; 2],
    pub line: Line2D,
}

/// Intersections of an infinite line with the rectangle `[0,w] x [0,h]`,
/// ordered along the line direction.
pub fn clip_line_to_rect(line: &Line2D, width: f64, height: f64) -> Option<[Pixel; 2]> {
    let d = line.direction();
    let p0 = line.project(&Pixel::new(width / 2.0, height / 2.0));
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (o, dir, max) in [(p0.x, d.x, width), (p0.y, d.y, height)] {
        if dir.abs() < 1e-15 {
            if o < 0.0 || o > max {
                return None;
            }
            continue;
        }
        let (a, b) = ((0.0 - o) / dir, (max - o) / dir);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    if hi - lo <= 1e-9 {
        return None;
    }
    let at = |s: f64| Pixel::new(p0.x + s * d.x, p0.y + s * d.y);
    Some([at(lo), at(hi)])
}

pub fn project_model_line(
    id: SegmentId,
    params: &CameraParams,
    model: &FieldModel,
    width: f64,
    height: f64,
    epsilon: f64,
) -> Option<ProjectedLine> {
    let [a, b] = clipped_segment(id, params, model, epsilon).ok()??;
    let (pa, pb) = (params.project_unchecked(&a), params.project_unchecked(&b));
    let line = Line2D::through(&pa, &pb)?;
    if (pa - pb).norm() < 1e-9 {
        return None;
    }
    let endpoints = clip_line_to_rect(&line, width, height)?;
    Some(ProjectedLine { segment: id, endpoints, line })
}

/// Sum of the distances from the two detected extremities to the line
/// through `pb` and `qb`.
pub fn endpoint_line_distance(pb: &Pixel, qb: &Pixel, pd: &Pixel, qd: &Pixel) -> Result<f64, PnlError> {
    let dy = qb.y - pb.y;
    let dx = qb.x - pb.x;
    let norm = (dy * dy + dx * dx).sqrt();
    if norm < 1e-12 {
        return Err(PnlError::ZeroLengthLine);
    }
    let k = qb.x * pb.y - qb.y * pb.x;
    Ok(((dy * pd.x - dx * pd.y + k).abs() + (dy * qd.x - dx * qd.y + k).abs()) / norm)
}

pub fn line_distance(l: &ProjectedLine, obs: &LineObservation) -> Result<f64, PnlError> {
    let [pd, qd] = obs.extremities;
    endpoint_line_distance(&l.endpoints[0], &l.endpoints[1], &pd, &qd)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    /// Weight of the line terms; points get `1 - alpha`.
    pub alpha: f64,
    /// Detected lines whose extremities are farther than this (px) from the
    /// projected model line are ignored.
    pub line_gate_threshold: f64,
    /// Clearance (meters) ahead of the camera plane.
    pub epsilon: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    /// Outer reweighting iterations.
    pub irls_iters: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        let lm = LmConfig::default();
        Self {
            alpha: 0.6,
            line_gate_threshold: 30.0,
            epsilon: 0.5,
            max_iters: lm.max_iters,
            grad_tol: lm.grad_tol,
            step_tol: lm.step_tol,
            irls_iters: 20,
        }
    }
}

impl RefinementConfig {
    fn lm(&self) -> LmConfig {
        LmConfig { max_iters: self.max_iters, grad_tol: self.grad_tol, step_tol: self.step_tol, ..LmConfig::default() }
    }
}

/// Keypoint observation used by the refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTerm {
    pub world: WorldPoint,
    pub image: Pixel,
}

/// Line distance for one observation at `params`. Unprojectable lines get
/// a large constant distance.
const UNPROJECTABLE: f64 = 1e4;

fn line_pair(params: &CameraParams, obs: &LineObservation, model: &FieldModel, eps: f64) -> [f64; 2] {
    let Ok(Some([a, b])) = clipped_segment(obs.segment, params, model, eps) else {
        return [UNPROJECTABLE; 2];
    };
    let (pa, pb) = (params.project_unchecked(&a), params.project_unchecked(&b));
    let Some(l) = Line2D::through(&pa, &pb) else { return [UNPROJECTABLE; 2] };
    if (pa - pb).norm() < 1e-12 {
        return [UNPROJECTABLE; 2];
    }
    [l.signed_distance(&obs.extremities[0]), l.signed_distance(&obs.extremities[1])]
}

fn point_residual(params: &CameraParams, p: &PointTerm) -> [f64; 2] {
    if params.depth(&p.world) <= 1e-9 {
        return [UNPROJECTABLE; 2];
    }
    let x = params.project_unchecked(&p.world);
    [p.image.x - x.x, p.image.y - x.y]
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnlCost {
    pub cost: f64,
    /// Unweighted sum of line distances.
    pub line_cost: f64,
    /// Unweighted sum of point residual norms.
    pub point_cost: f64,
    /// Per-term contributions: `alpha * d` per line then
    /// `(1 - alpha) * |e|` per point.
    pub terms: Vec<f64>,
}

/// `alpha * sum(line distances) + (1 - alpha) * sum(point residual norms)`.
pub fn pnl_cost(
    params: &CameraParams,
    lines: &[LineObservation],
    points: &[PointTerm],
    model: &FieldModel,
    cfg: &RefinementConfig,
) -> Result<PnlCost, PnlError> {
    if lines.is_empty() && points.is_empty() {
        return Err(PnlError::NoResiduals);
    }
    let ld: Vec<f64> = lines
        .iter()
        .map(|o| line_pair(params, o, model, cfg.epsilon).iter().map(|d| d.abs()).sum())
        .collect();
    let pd: Vec<f64> = points.iter().map(|p| {
        let [x, y] = point_residual(params, p);
        x.hypot(y)
    }).collect();
    let line_cost: f64 = ld.iter().sum();
    let point_cost: f64 = pd.iter().sum();
    let terms = ld.iter().map(|d| cfg.alpha * d).chain(pd.iter().map(|d| (1.0 - cfg.alpha) * d)).collect();
    Ok(PnlCost { cost: cfg.alpha * line_cost + (1.0 - cfg.alpha) * point_cost, line_cost, point_cost, terms })
}

/// Keeps lines whose two extremities both lie within `threshold` px of the
/// projected model line.
pub fn gate_lines(
    observations: &[LineObservation],
    params: &CameraParams,
    model: &FieldModel,
    threshold: f64,
    epsilon: f64,
) -> Vec<LineObservation> {
    observations
        .iter()
        .filter(|o| !o.segment.is_conic())
        .filter(|o| line_pair(params, o, model, epsilon).iter().all(|d| d.abs() <= threshold))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub params: CameraParams,
    /// Cost of the initial and returned pose on the final gated line set.
    pub initial_cost: f64,
    pub final_cost: f64,
    pub lines_used: usize,
    /// The optimizer could not lower the cost; `params` is the input.
    pub diverged: bool,
}

fn pose_at(base: &CameraParams, x: &DVector<f64>) -> CameraParams {
    let dr = Rotation3::new(Vector3::new(x[0], x[1], x[2]));
    CameraParams::new(base.intrinsics, dr * base.rotation, WorldPoint::new(x[3], x[4], x[5]))
}

fn optimize(
    initial: &CameraParams,
    lines: &[LineObservation],
    points: &[PointTerm],
    model: &FieldModel,
    cfg: &RefinementConfig,
) -> CameraParams {
    let alpha = cfg.alpha;
    let t = initial.center;
    let mut x = DVector::from_vec(vec![0.0, 0.0, 0.0, t.x, t.y, t.z]);
    let base = *initial;
    let lm = cfg.lm();
    let mut prev = f64::INFINITY;
    for _ in 0..cfg.irls_iters.max(1) {
        let cam = pose_at(&base, &x);
        let lw: Vec<[f64; 2]> = lines
            .iter()
            .map(|o| line_pair(&cam, o, model, cfg.epsilon).map(|d| (alpha / d.abs().max(1e-3)).sqrt()))
            .collect();
        let pw: Vec<f64> = points
            .iter()
            .map(|p| {
                let [a, b] = point_residual(&cam, p);
                ((1.0 - alpha) / a.hypot(b).max(1e-3)).sqrt()
            })
            .collect();
        let residual = |v: &DVector<f64>| {
            let cam = pose_at(&base, v);
            let mut r = Vec::with_capacity(2 * (lines.len() + points.len()));
            for (o, w) in lines.iter().zip(&lw) {
                let d = line_pair(&cam, o, model, cfg.epsilon);
                r.push(w[0] * d[0]);
                r.push(w[1] * d[1]);
            }
            for (p, w) in points.iter().zip(&pw) {
                let e = point_residual(&cam, p);
                r.push(w * e[0]);
                r.push(w * e[1]);
            }
            DVector::from_vec(r)
        };
        let rep = minimize(residual, x.clone(), &lm);
        x = rep.params;
        let cost = pnl_cost(&pose_at(&base, &x), lines, points, model, cfg).map_or(f64::INFINITY, |c| c.cost);
        if prev.is_finite() && (prev - cost).abs() <= 1e-9 * prev.max(1e-12) {
            break;
        }
        prev = cost;
    }
    pose_at(&base, &x)
}

/// Moves the extremities onto the total least squares line through all
/// samples. Observations with only two points are returned unchanged.
pub fn snap_to_fit(obs: &LineObservation) -> LineObservation {
    if obs.points.len() < 3 {
        return obs.clone();
    }
    let Ok((line, _)) = fit_line(&obs.points) else { return obs.clone() };
    let mut out = obs.clone();
    out.extremities = obs.extremities.map(|p| line.project(&p));
    out
}

/// Levenberg-Marquardt over rotation and camera center with the intrinsics
/// fixed. The absolute-value cost is handled by iterative reweighting.
/// Lines are gated at the initial pose, and gated again once after
/// convergence; a changed set triggers one more optimization.
pub fn refine_pose(
    initial: &CameraParams,
    observations: &[LineObservation],
    points: &[PointTerm],
    model: &FieldModel,
    cfg: &RefinementConfig,
) -> Result<RefineOutcome, PnlError> {
    let has_terms = |lines: &[LineObservation]| {
        (cfg.alpha > 0.0 && !lines.is_empty()) || (cfg.alpha < 1.0 && !points.is_empty())
    };
    let mut lines = gate_lines(observations, initial, model, cfg.line_gate_threshold, cfg.epsilon);
    if !has_terms(&lines) {
        return Err(PnlError::NoResiduals);
    }
    let mut params = optimize(initial, &lines, points, model, cfg);
    let regated = gate_lines(observations, &params, model, cfg.line_gate_threshold, cfg.epsilon);
    if regated != lines && has_terms(&regated) {
        lines = regated;
        params = optimize(&params, &lines, points, model, cfg);
    }
    let initial_cost = pnl_cost(initial, &lines, points, model, cfg)?.cost;
    let final_cost = pnl_cost(&params, &lines, points, model, cfg)?.cost;
    if !(final_cost <= initial_cost) {
        return Ok(RefineOutcome {
            params: *initial,
            initial_cost,
            final_cost: initial_cost,
            lines_used: lines.len(),
            diverged: true,
        });
    }
    Ok(RefineOutcome { params, initial_cost, final_cost, lines_used: lines.len(), diverged: false })
}
