//! Synthetic broadcast cameras and degraded detections.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraParams, Intrinsics, Pixel};
use crate::detect_io::{ConicObservation, DetectionFrame, GtPolylines, KeypointObservation, LineObservation};
use crate::field_model::{FieldModel, SegmentGeometry, SegmentId, WorldPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no acceptable camera after {0} samples")]
    NoFeasiblePose(usize),
    #[error("no visible segments")]
    NoVisibleSegments,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewPreset {
    Main,
    Offside,
    BehindGoal,
    Random,
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

/// Camera sampling ranges. Pan 0 looks along `-y` and grows toward `+x`;
/// tilt is the angle below the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSamplerConfig {
    pub preset: ViewPreset,
    pub x: Range,
    pub y: Range,
    pub z: Range,
    pub pan_deg: Range,
    pub tilt_deg: Range,
    pub roll_deg: Range,
    pub focal: Range,
    pub width: f64,
    pub height: f64,
    pub min_keypoints: usize,
    pub min_segments: usize,
    pub require_middle_line: bool,
}

impl PoseSamplerConfig {
    pub fn preset(preset: ViewPreset) -> Self {
        let base = Self {
            preset,
            x: Range::new(-10.0, 10.0),
            y: Range::new(45.0, 70.0),
            z: Range::new(-25.0, -10.0),
            pan_deg: Range::new(-30.0, 30.0),
            tilt_deg: Range::new(8.0, 25.0),
            roll_deg: Range::new(-2.0, 2.0),
            focal: Range::new(1000.0, 2200.0),
            width: 1920.0,
            height: 1080.0,
            min_keypoints: 8,
            min_segments: 4,
            require_middle_line: true,
        };
        match preset {
            ViewPreset::Main => base,
            ViewPreset::Offside => Self {
                x: Range::new(-20.0, 20.0),
                pan_deg: Range::new(-50.0, 50.0),
                require_middle_line: false,
                ..base
            },
            ViewPreset::BehindGoal => Self {
                x: Range::new(-75.0, -62.0),
                y: Range::new(-12.0, 12.0),
                z: Range::new(-15.0, -6.0),
                pan_deg: Range::new(60.0, 120.0),
                tilt_deg: Range::new(10.0, 30.0),
                require_middle_line: false,
                ..base
            },
            ViewPreset::Random => Self {
                x: Range::new(-60.0, 60.0),
                y: Range::new(40.0, 75.0),
                z: Range::new(-40.0, -6.0),
                pan_deg: Range::new(-60.0, 60.0),
                tilt_deg: Range::new(5.0, 45.0),
                require_middle_line: false,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ranges = [self.x, self.y, self.z, self.pan_deg, self.tilt_deg, self.roll_deg, self.focal];
        if ranges.iter().any(|r| !(r.min <= r.max) || !r.min.is_finite() || !r.max.is_finite()) {
            return Err(SynthError::Config("range with min > max or non-finite bound".into()));
        }
        if self.focal.min <= 0.0 || self.width <= 0.0 || self.height <= 0.0 {
            return Err(SynthError::Config("focal and image size must be positive".into()));
        }
        if self.z.max >= 0.0 {
            return Err(SynthError::Config("camera must be above the ground (z < 0)".into()));
        }
        Ok(())
    }
}

impl Default for PoseSamplerConfig {
    fn default() -> Self {
        Self::preset(ViewPreset::Main)
    }
}

/// Camera from position and pan/tilt/roll in degrees.
pub fn camera_from_angles(intrinsics: Intrinsics, center: WorldPoint, pan: f64, tilt: f64, roll: f64) -> Option<CameraParams> {
    let (pan, tilt) = (pan.to_radians(), tilt.to_radians());
    let heading = Vector3::new(pan.sin(), -pan.cos(), 0.0);
    let forward = heading * tilt.cos() + Vector3::z() * tilt.sin();
    CameraParams::look_at(intrinsics, center, center + forward, roll.to_radians())
}

fn inside(p: &Pixel, w: f64, h: f64) -> bool {
    (0.0..=w).contains(&p.x) && (0.0..=h).contains(&p.y)
}

/// Depth (meters) a point must have to be observed.
const MIN_DEPTH: f64 = 0.5;

/// Shortest visible image length (px) for a segment to be detected.
const MIN_SEGMENT_PX: f64 = 20.0;

fn visible_keypoints(params: &CameraParams, model: &FieldModel, w: f64, h: f64) -> Vec<(crate::field_model::KeypointId, Pixel)> {
    model
        .keypoints()
        .filter(|d| params.depth(&d.point) > MIN_DEPTH)
        .filter_map(|d| Some((d.id, params.project(&d.point)?)))
        .filter(|(_, p)| inside(p, w, h))
        .collect()
}

/// Liang-Barsky clip of the segment `a b` to the image rectangle.
fn clip_segment(a: Pixel, b: Pixel, w: f64, h: f64) -> Option<[Pixel; 2]> {
    let d = b - a;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, a.x), (d.x, w - a.x), (-d.y, a.y), (d.y, h - a.y)] {
        if p.abs() < 1e-15 {
            if q < 0.0 {
                return None;
            }
            continue;
        }
        let r = q / p;
        if p < 0.0 {
            t0 = t0.max(r);
        } else {
            t1 = t1.min(r);
        }
    }
    (t1 > t0).then(|| [a + d * t0, a + d * t1])
}

/// Visible image part of a straight model segment.
fn visible_line(params: &CameraParams, start: &WorldPoint, end: &WorldPoint, w: f64, h: f64) -> Option<[Pixel; 2]> {
    let (da, db) = (params.depth(start), params.depth(end));
    if da < MIN_DEPTH && db < MIN_DEPTH {
        return None;
    }
    let cut = |p: &WorldPoint, q: &WorldPoint, dp: f64, dq: f64| {
        if dq >= MIN_DEPTH {
            *q
        } else {
            q + (p - q) * ((MIN_DEPTH - dq) / (dp - dq))
        }
    };
    let a = cut(end, start, db, da);
    let b = cut(start, end, da, db);
    let seg = clip_segment(params.project_unchecked(&a), params.project_unchecked(&b), w, h)?;
    ((seg[1] - seg[0]).norm() >= MIN_SEGMENT_PX).then_some(seg)
}

/// In-image polyline of a segment sampled at `spacing`, including the
/// points where it crosses the image border.
fn visible_polyline(params: &CameraParams, model: &FieldModel, id: SegmentId, spacing: f64, w: f64, h: f64) -> Vec<Vec<Pixel>> {
    let Ok(samples) = model.sample_segment_polyline(id, spacing) else { return vec![] };
    let mut runs = vec![];
    let mut run: Vec<Pixel> = vec![];
    let mut prev: Option<Pixel> = None;
    // First projected sample, if it is inside the image.
    let run_start = samples
        .first()
        .filter(|s| params.depth(s) > MIN_DEPTH)
        .map(|s| params.project_unchecked(s))
        .filter(|p| inside(p, w, h));
    for s in &samples {
        let p = (params.depth(s) > MIN_DEPTH).then(|| params.project_unchecked(s));
        match (prev, p) {
            (Some(a), Some(b)) => {
                let (ia, ib) = (inside(&a, w, h), inside(&b, w, h));
                if ia && ib {
                    run.push(b);
                } else if let Some([c0, c1]) = clip_segment(a, b, w, h) {
                    if !ia {
                        run.push(c0);
                    }
                    if ib {
                        run.push(b);
                    } else {
                        run.push(c1);
                        runs.push(std::mem::take(&mut run));
                    }
                }
            }
            (None, Some(b)) if inside(&b, w, h) => run.push(b),
            (_, None) if !run.is_empty() => runs.push(std::mem::take(&mut run)),
            _ => {}
        }
        prev = p;
    }
    let closed = samples.len() > 2 && (samples[0] - samples[samples.len() - 1]).norm() < 1e-9;
    let wraps = !run.is_empty() && runs.first().is_some_and(|r: &Vec<Pixel>| Some(&r[0]) == run_start.as_ref());
    if closed && wraps {
        // The visible arc straddles the seam of a closed polyline.
        let head = runs.remove(0);
        run.extend(head.into_iter().skip(1));
    }
    if !run.is_empty() {
        runs.push(run);
    }
    runs.retain(|r| r.len() >= 2);
    runs
}

fn polyline_length(p: &[Pixel]) -> f64 {
    p.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Exact in-image ground-truth polylines for every evaluated segment.
pub fn ground_truth_polylines(params: &CameraParams, model: &FieldModel, w: f64, h: f64) -> GtPolylines {
    SegmentId::ALL
        .iter()
        .filter(|s| s.is_evaluated())
        .filter_map(|&s| {
            let runs = visible_polyline(params, model, s, 0.1, w, h);
            let best = runs.into_iter().max_by(|a, b| polyline_length(a).total_cmp(&polyline_length(b)))?;
            (polyline_length(&best) > 0.0).then_some((s, best))
        })
        .collect()
}

fn visible_segment_count(params: &CameraParams, model: &FieldModel, w: f64, h: f64) -> (usize, bool) {
    let gt = ground_truth_polylines(params, model, w, h);
    let long: Vec<SegmentId> = gt.iter().filter(|(_, p)| polyline_length(p) >= MIN_SEGMENT_PX).map(|(s, _)| *s).collect();
    (long.len(), long.contains(&SegmentId::MiddleLine))
}

/// Rejection-samples a camera satisfying the preset's visibility rules.
pub fn sample_camera(cfg: &PoseSamplerConfig, model: &FieldModel, seed: u64) -> Result<CameraParams, SynthError> {
    cfg.validate()?;
    const TRIES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..TRIES {
        let center = WorldPoint::new(cfg.x.sample(&mut rng), cfg.y.sample(&mut rng), cfg.z.sample(&mut rng));
        let (pan, tilt, roll) = (cfg.pan_deg.sample(&mut rng), cfg.tilt_deg.sample(&mut rng), cfg.roll_deg.sample(&mut rng));
        let k = Intrinsics::centered(cfg.focal.sample(&mut rng), cfg.width, cfg.height);
        let Some(cam) = camera_from_angles(k, center, pan, tilt, roll) else { continue };
        if visible_keypoints(&cam, model, cfg.width, cfg.height).len() < cfg.min_keypoints {
            continue;
        }
        let (segments, middle) = visible_segment_count(&cam, model, cfg.width, cfg.height);
        if segments < cfg.min_segments || (cfg.require_middle_line && !middle) {
            continue;
        }
        return Ok(cam);
    }
    Err(SynthError::NoFeasiblePose(TRIES))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationConfig {
    pub keypoint_sigma: f64,
    pub line_sigma: f64,
    pub dropout: f64,
    pub outlier_rate: f64,
    /// Displacement (px) of an outlier; `None` redraws it uniformly in the
    /// image.
    pub outlier_magnitude: Option<f64>,
    /// Intermediate samples per line observation besides the extremities.
    pub line_samples: usize,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            keypoint_sigma: 0.0,
            line_sigma: 0.0,
            dropout: 0.0,
            outlier_rate: 0.0,
            outlier_magnitude: None,
            line_samples: 3,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if !rate(self.dropout) || !rate(self.outlier_rate) {
            return Err(SynthError::Config("rates must lie in [0, 1]".into()));
        }
        if !(self.keypoint_sigma >= 0.0 && self.line_sigma >= 0.0) {
            return Err(SynthError::Config("noise sigma must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticFrame {
    pub frame: DetectionFrame,
    pub gt: GtPolylines,
}

struct Degrader {
    rng: ChaCha8Rng,
    cfg: DegradationConfig,
    w: f64,
    h: f64,
}

impl Degrader {
    fn drop(&mut self) -> bool {
        self.cfg.dropout > 0.0 && self.rng.random_bool(self.cfg.dropout)
    }

    fn noisy(&mut self, p: Pixel, sigma: f64) -> Pixel {
        if sigma == 0.0 {
            return p;
        }
        let n = Normal::new(0.0, sigma).expect("sigma is finite");
        Pixel::new(p.x + n.sample(&mut self.rng), p.y + n.sample(&mut self.rng))
    }

    /// Returns the outlier displacement to apply, if any.
    fn outlier(&mut self, at: Pixel) -> Option<nalgebra::Vector2<f64>> {
        if !(self.cfg.outlier_rate > 0.0 && self.rng.random_bool(self.cfg.outlier_rate)) {
            return None;
        }
        Some(match self.cfg.outlier_magnitude {
            Some(m) => {
                let a: f64 = self.rng.random_range(0.0..std::f64::consts::TAU);
                nalgebra::Vector2::new(m * a.cos(), m * a.sin())
            }
            None => {
                let q = Pixel::new(self.rng.random_range(0.0..self.w), self.rng.random_range(0.0..self.h));
                q - at
            }
        })
    }
}

/// Projects the model with `params` and degrades the observations.
/// Keypoints, line extremities and conic samples are emitted only for
/// points in front of the camera and inside the image.
pub fn synthesize_frame(
    params: &CameraParams,
    model: &FieldModel,
    deg: &DegradationConfig,
    width: f64,
    height: f64,
    frame_id: &str,
) -> Result<SyntheticFrame, SynthError> {
    deg.validate()?;
    let gt = ground_truth_polylines(params, model, width, height);
    if gt.is_empty() {
        return Err(SynthError::NoVisibleSegments);
    }
    let mut d = Degrader { rng: ChaCha8Rng::seed_from_u64(deg.seed), cfg: *deg, w: width, h: height };
    let mut frame = DetectionFrame::empty(frame_id, width, height);

    for (id, p) in visible_keypoints(params, model, width, height) {
        if d.drop() {
            continue;
        }
        let mut q = d.noisy(p, deg.keypoint_sigma);
        if let Some(off) = d.outlier(q) {
            q += off;
        }
        frame.keypoints.push(KeypointObservation { id, pixel: q, confidence: 1.0 });
    }

    for (id, geom) in model.segments() {
        if d.drop() {
            continue;
        }
        match geom {
            SegmentGeometry::Line { start, end } => {
                let Some([a, b]) = visible_line(params, start, end, width, height) else { continue };
                let n = deg.line_samples;
                let mut pts: Vec<Pixel> = (0..n + 2).map(|i| a + (b - a) * (i as f64 / (n + 1) as f64)).collect();
                pts = pts.into_iter().map(|p| d.noisy(p, deg.line_sigma)).collect();
                if let Some(off) = d.outlier(pts[0]) {
                    // Move the whole line; a misdetection keeps its shape.
                    let off = if deg.outlier_magnitude.is_some() { off } else { off.normalize() * 100.0 };
                    pts.iter_mut().for_each(|p| *p += off);
                }
                if let Ok(obs) = LineObservation::new(id, pts) {
                    frame.lines.push(obs);
                }
            }
            SegmentGeometry::Arc { .. } => {
                let runs = visible_polyline(params, model, id, 0.5, width, height);
                let Some(run) = runs.into_iter().max_by_key(|r| r.len()) else { continue };
                if polyline_length(&run) < MIN_SEGMENT_PX {
                    continue;
                }
                let points: Vec<Pixel> = run.into_iter().map(|p| d.noisy(p, deg.line_sigma)).collect();
                frame.conics.push(ConicObservation { segment: id, points });
            }
        }
    }
    Ok(SyntheticFrame { frame, gt })
}

/// Rotates by exactly `rot_deg` about a random axis and moves the center by
/// exactly `trans` meters in a random direction.
pub fn perturb_pose(params: &CameraParams, rot_deg: f64, trans: f64, seed: u64) -> CameraParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || loop {
        let v = Vector3::new(
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        );
        if let Some(u) = Unit::try_new(v, 1e-9) {
            return u;
        }
    };
    let axis = unit();
    let dir = unit();
    let rotation = Rotation3::from_axis_angle(&axis, rot_deg.to_radians()) * params.rotation;
    CameraParams::new(params.intrinsics, rotation, params.center + dir.into_inner() * trans)
}
