//! Per-frame observations and calibration records, JSON in and out.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Point3, Rotation3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraParams, Homography, Intrinsics, Pixel};
use crate::estimation::CalibrationStatus;
use crate::field_model::{KeypointId, SegmentId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectIoError {
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("duplicate keypoint id {0}")]
    DuplicateKeypoint(KeypointId),
    #[error("duplicate segment {0}")]
    DuplicateSegment(SegmentId),
    #[error("non-finite coordinate in {0}")]
    NonFinite(String),
    #[error("segment {segment} is malformed: {reason}")]
    MalformedSegment { segment: String, reason: String },
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("invalid calibration record: {0}")]
    InvalidRecord(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointObservation {
    pub id: KeypointId,
    pub pixel: Pixel,
    pub confidence: f64,
}

/// Straight segment seen in the image: two extremities plus any
/// intermediate samples.
#[derive(Debug, Clone, PartialEq)]
pub struct LineObservation {
    pub segment: SegmentId,
    pub extremities: [Pixel; 2],
    pub points: Vec<Pixel>,
}

impl LineObservation {
    pub fn new(segment: SegmentId, points: Vec<Pixel>) -> Result<Self, DetectIoError> {
        let malformed = |reason: &str| DetectIoError::MalformedSegment { segment: segment.to_string(), reason: reason.into() };
        if segment.is_conic() {
            return Err(malformed("conic segments are not lines"));
        }
        if points.len() < 2 {
            return Err(malformed("fewer than 2 points"));
        }
        let extremities = [points[0], points[points.len() - 1]];
        if (extremities[1] - extremities[0]).norm() < 1.0 {
            return Err(malformed("extremities closer than 1 px"));
        }
        Ok(Self { segment, extremities, points })
    }

    /// Extremities and intermediate points together.
    pub fn all_points(&self) -> &[Pixel] {
        &self.points
    }
}

/// Sampled conic marking (center circle, penalty arcs, corner arcs).
#[derive(Debug, Clone, PartialEq)]
pub struct ConicObservation {
    pub segment: SegmentId,
    pub points: Vec<Pixel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionFrame {
    pub frame_id: String,
    pub width: f64,
    pub height: f64,
    pub keypoints: Vec<KeypointObservation>,
    pub lines: Vec<LineObservation>,
    pub conics: Vec<ConicObservation>,
}

impl DetectionFrame {
    pub fn empty(frame_id: impl Into<String>, width: f64, height: f64) -> Self {
        Self { frame_id: frame_id.into(), width, height, keypoints: vec![], lines: vec![], conics: vec![] }
    }

    /// Checks the uniqueness and finiteness invariants.
    pub fn validate(&self) -> Result<(), DetectIoError> {
        if !(self.width > 0.0 && self.height > 0.0 && self.width.is_finite() && self.height.is_finite()) {
            return Err(DetectIoError::Schema("image size must be positive".into()));
        }
        let mut ids = BTreeSet::new();
        for k in &self.keypoints {
            if !(k.pixel.x.is_finite() && k.pixel.y.is_finite()) {
                return Err(DetectIoError::NonFinite(format!("keypoint {}", k.id)));
            }
            if !(0.0..=1.0).contains(&k.confidence) {
                return Err(DetectIoError::Schema(format!("confidence of {} outside [0, 1]", k.id)));
            }
            if !ids.insert(k.id) {
                return Err(DetectIoError::DuplicateKeypoint(k.id));
            }
        }
        let mut segs = BTreeSet::new();
        for (seg, pts) in self
            .lines
            .iter()
            .map(|l| (l.segment, &l.points))
            .chain(self.conics.iter().map(|c| (c.segment, &c.points)))
        {
            if pts.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
                return Err(DetectIoError::NonFinite(format!("segment {seg}")));
            }
            if !segs.insert(seg) {
                return Err(DetectIoError::DuplicateSegment(seg));
            }
        }
        Ok(())
    }

    pub fn line(&self, id: SegmentId) -> Option<&LineObservation> {
        self.lines.iter().find(|l| l.segment == id)
    }

    pub fn keypoint(&self, id: KeypointId) -> Option<&KeypointObservation> {
        self.keypoints.iter().find(|k| k.id == id)
    }

    /// Number of distinct labeled segments (lines and conics).
    pub fn labeled_segment_count(&self) -> usize {
        self.lines.len() + self.conics.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CoordMode {
    #[default]
    Pixel,
    Normalized,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawKeypoint {
    id: KeypointId,
    u: f64,
    v: f64,
    #[serde(default = "one")]
    conf: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
struct RawLine {
    segment: String,
    points: Vec<[f64; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawFrame {
    frame_id: String,
    width: f64,
    height: f64,
    #[serde(default)]
    coords: CoordMode,
    #[serde(default)]
    keypoints: Vec<RawKeypoint>,
    #[serde(default)]
    lines: Vec<RawLine>,
}

fn to_pixel(u: f64, v: f64, mode: CoordMode, w: f64, h: f64) -> Pixel {
    match mode {
        CoordMode::Pixel => Pixel::new(u, v),
        CoordMode::Normalized => Pixel::new(u * w, v * h),
    }
}

/// Parses a detection frame; conic segments listed under `lines` are kept
/// as conic observations.
pub fn parse_detection_frame(bytes: &[u8]) -> Result<DetectionFrame, DetectIoError> {
    let raw: RawFrame = serde_json::from_slice(bytes).map_err(|e| DetectIoError::Schema(e.to_string()))?;
    let (w, h) = (raw.width, raw.height);
    let mut frame = DetectionFrame::empty(raw.frame_id, w, h);
    frame.keypoints = raw
        .keypoints
        .iter()
        .map(|k| KeypointObservation { id: k.id, pixel: to_pixel(k.u, k.v, raw.coords, w, h), confidence: k.conf })
        .collect();
    for l in &raw.lines {
        let seg: SegmentId = l.segment.parse().map_err(|_| DetectIoError::UnknownSegment(l.segment.clone()))?;
        let pts: Vec<Pixel> = l.points.iter().map(|p| to_pixel(p[0], p[1], raw.coords, w, h)).collect();
        if pts.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(DetectIoError::NonFinite(format!("segment {seg}")));
        }
        if seg.is_conic() {
            frame.conics.push(ConicObservation { segment: seg, points: pts });
        } else {
            frame.lines.push(LineObservation::new(seg, pts)?);
        }
    }
    frame.validate()?;
    Ok(frame)
}

/// Serializes a frame in pixel coordinates.
pub fn write_detection_frame(frame: &DetectionFrame) -> Vec<u8> {
    let raw = RawFrame {
        frame_id: frame.frame_id.clone(),
        width: frame.width,
        height: frame.height,
        coords: CoordMode::Pixel,
        keypoints: frame
            .keypoints
            .iter()
            .map(|k| RawKeypoint { id: k.id, u: k.pixel.x, v: k.pixel.y, conf: k.confidence })
            .collect(),
        lines: frame
            .lines
            .iter()
            .map(|l| (l.segment, &l.points))
            .chain(frame.conics.iter().map(|c| (c.segment, &c.points)))
            .map(|(s, pts)| RawLine { segment: s.name().to_string(), points: pts.iter().map(|p| [p.x, p.y]).collect() })
            .collect(),
    };
    serde_json::to_vec_pretty(&raw).expect("frame serializes")
}

/// Ground-truth image polylines per segment.
pub type GtPolylines = BTreeMap<SegmentId, Vec<Pixel>>;

#[derive(Debug, Serialize, Deserialize)]
struct NormPoint {
    x: f64,
    y: f64,
}

/// Parses a segment-name -> normalized point list mapping. Straight
/// segments also yield line observations from their polyline endpoints.
pub fn parse_gt_annotations(
    bytes: &[u8],
    frame_id: &str,
    width: f64,
    height: f64,
) -> Result<(DetectionFrame, GtPolylines), DetectIoError> {
    let raw: BTreeMap<String, Vec<NormPoint>> =
        serde_json::from_slice(bytes).map_err(|e| DetectIoError::Schema(e.to_string()))?;
    let mut frame = DetectionFrame::empty(frame_id, width, height);
    let mut gt = GtPolylines::new();
    for (name, pts) in raw {
        let seg: SegmentId = name.parse().map_err(|_| DetectIoError::UnknownSegment(name.clone()))?;
        if pts.len() < 2 {
            return Err(DetectIoError::MalformedSegment { segment: name, reason: "fewer than 2 points".into() });
        }
        let pix: Vec<Pixel> = pts.iter().map(|p| Pixel::new(p.x * width, p.y * height)).collect();
        if pix.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(DetectIoError::NonFinite(format!("segment {seg}")));
        }
        if gt.contains_key(&seg) {
            return Err(DetectIoError::DuplicateSegment(seg));
        }
        if seg.is_conic() {
            frame.conics.push(ConicObservation { segment: seg, points: pix.clone() });
        } else if let Ok(line) = LineObservation::new(seg, pix.clone()) {
            frame.lines.push(line);
        }
        gt.insert(seg, pix);
    }
    Ok((frame, gt))
}

/// Inverse of [`parse_gt_annotations`].
pub fn write_gt_annotations(gt: &GtPolylines, width: f64, height: f64) -> Vec<u8> {
    let raw: BTreeMap<String, Vec<NormPoint>> = gt
        .iter()
        .map(|(s, pts)| (s.name().to_string(), pts.iter().map(|p| NormPoint { x: p.x / width, y: p.y / height }).collect()))
        .collect();
    serde_json::to_vec_pretty(&raw).expect("annotations serialize")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraBlock {
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub x0: f64,
    pub y0: f64,
    pub skew: f64,
    /// Row-major rotation.
    pub rotation: [f64; 9],
    /// Camera center in world coordinates.
    pub center: [f64; 3],
}

impl CameraBlock {
    pub fn from_params(p: &CameraParams) -> Self {
        let r = p.rotation.matrix();
        Self {
            alpha_x: p.intrinsics.fx,
            alpha_y: p.intrinsics.fy,
            x0: p.intrinsics.cx,
            y0: p.intrinsics.cy,
            skew: 0.0,
            rotation: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            center: [p.center.x, p.center.y, p.center.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }

    pub fn to_params(&self) -> CameraParams {
        CameraParams::new(
            Intrinsics { fx: self.alpha_x, fy: self.alpha_y, cx: self.x0, cy: self.y0 },
            Rotation3::from_matrix_unchecked(self.rotation_matrix()),
            Point3::new(self.center[0], self.center[1], self.center[2]),
        )
    }

    pub fn validate(&self) -> Result<(), DetectIoError> {
        let r = self.rotation_matrix();
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        if !(ortho < 1e-6) {
            return Err(DetectIoError::InvalidRecord(format!("rotation not orthonormal (|R'R - I| = {ortho:.3e})")));
        }
        if r.determinant() < 0.0 {
            return Err(DetectIoError::InvalidRecord("rotation has determinant -1".into()));
        }
        if !(self.alpha_x > 0.0 && self.alpha_y > 0.0) {
            return Err(DetectIoError::InvalidRecord("focal lengths must be positive".into()));
        }
        if self.skew != 0.0 {
            return Err(DetectIoError::InvalidRecord("skew must be zero".into()));
        }
        if self.center.iter().chain([self.x0, self.y0].iter()).any(|v| !v.is_finite()) {
            return Err(DetectIoError::InvalidRecord("non-finite camera parameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ResidualSummary {
    /// Mean keypoint reprojection error of the selected cell, pixels.
    pub mean_reprojection_px: Option<f64>,
    pub inliers: usize,
    /// Winning voting cell, e.g. `full-keypoints@10`.
    pub cell: Option<String>,
    pub pnl_cost_initial: Option<f64>,
    pub pnl_cost_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub frame_id: String,
    pub status: CalibrationStatus,
    pub image_width: f64,
    pub image_height: f64,
    /// Empty for failed and homography-only frames.
    pub camera: Option<CameraBlock>,
    /// Row-major ground-to-image homography.
    pub homography: Option<[f64; 9]>,
    pub refined: bool,
    pub residuals: ResidualSummary,
}

impl CalibrationRecord {
    pub fn failed(frame_id: impl Into<String>, width: f64, height: f64, reason: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.into(),
            status: CalibrationStatus::Failed,
            image_width: width,
            image_height: height,
            camera: None,
            homography: None,
            refined: false,
            residuals: ResidualSummary { notes: vec![reason.into()], ..Default::default() },
        }
    }

    pub fn params(&self) -> Option<CameraParams> {
        self.camera.as_ref().map(CameraBlock::to_params)
    }

    pub fn homography(&self) -> Option<Homography> {
        self.homography.and_then(|h| Homography::new(Matrix3::from_row_slice(&h)))
    }

    pub fn validate(&self) -> Result<(), DetectIoError> {
        if let Some(cam) = &self.camera {
            cam.validate()?;
        }
        if self.status == CalibrationStatus::Calibrated && self.camera.is_none() {
            return Err(DetectIoError::InvalidRecord("calibrated record without camera".into()));
        }
        Ok(())
    }
}

pub fn homography_to_row_major(h: &Homography) -> [f64; 9] {
    let m = h.matrix();
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 0)], m[(1, 1)], m[(1, 2)], m[(2, 0)], m[(2, 1)], m[(2, 2)]]
}

pub fn write_calibration(record: &CalibrationRecord) -> Result<Vec<u8>, DetectIoError> {
    record.validate()?;
    Ok(serde_json::to_vec_pretty(record).expect("record serializes"))
}

pub fn parse_calibration(bytes: &[u8]) -> Result<CalibrationRecord, DetectIoError> {
    let rec: CalibrationRecord = serde_json::from_slice(bytes).map_err(|e| DetectIoError::Schema(e.to_string()))?;
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_model::KeypointSet;

    #[test]
    fn normalized_keypoint_scaled() {
        let json = br#"{"frame_id":"a","width":1920,"height":1080,"coords":"normalized",
            "keypoints":[{"id":"Kp:3","u":0.5,"v":0.5,"conf":0.9}],"lines":[]}"#;
        let f = parse_detection_frame(json).unwrap();
        assert_eq!(f.keypoints[0].pixel, Pixel::new(960.0, 540.0));
        assert_eq!(f.keypoints[0].id, KeypointId::new(KeypointSet::Kp, 3));
    }

    #[test]
    fn duplicate_keypoint_rejected() {
        let json = br#"{"frame_id":"a","width":100,"height":100,
            "keypoints":[{"id":"Kp:3","u":1,"v":1},{"id":"Kp:3","u":2,"v":2}]}"#;
        assert!(matches!(parse_detection_frame(json), Err(DetectIoError::DuplicateKeypoint(_))));
    }

    #[test]
    fn lines_only_frame() {
        let json = br#"{"frame_id":"a","width":100,"height":100,"keypoints":[],
            "lines":[{"segment":"Middle line","points":[[10,0],[12,90]]},
                     {"segment":"Side line top","points":[[0,5],[99,7]]}]}"#;
        let f = parse_detection_frame(json).unwrap();
        assert!(f.keypoints.is_empty());
        assert_eq!(f.lines.len(), 2);
        let back = parse_detection_frame(&write_detection_frame(&f)).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn non_finite_and_schema_errors() {
        assert!(parse_detection_frame(b"{\"width\":1}").is_err());
        let json = br#"{"frame_id":"a","width":100,"height":100,"lines":[{"segment":"Nope","points":[[0,0],[5,5]]}]}"#;
        assert!(matches!(parse_detection_frame(json), Err(DetectIoError::UnknownSegment(_))));
    }

    #[test]
    fn gt_annotations() {
        let json = br#"{"Side line top":[{"x":0.0,"y":0.1},{"x":1.0,"y":0.2}],
            "Circle central":[{"x":0.4,"y":0.5},{"x":0.45,"y":0.55},{"x":0.5,"y":0.56},{"x":0.55,"y":0.55},
            {"x":0.6,"y":0.5},{"x":0.55,"y":0.45},{"x":0.5,"y":0.44},{"x":0.45,"y":0.45},{"x":0.4,"y":0.5}]}"#;
        let (f, gt) = parse_gt_annotations(json, "x", 1000.0, 500.0).unwrap();
        assert_eq!(f.lines.len(), 1);
        assert_eq!(f.lines[0].extremities, [Pixel::new(0.0, 50.0), Pixel::new(1000.0, 100.0)]);
        assert!(f.lines.iter().all(|l| !l.segment.is_conic()));
        assert_eq!(gt[&SegmentId::CircleCentral].len(), 9);
        let bad = br#"{"Side line top":[{"x":0.0,"y":0.1}]}"#;
        assert!(matches!(parse_gt_annotations(bad, "x", 10.0, 10.0), Err(DetectIoError::MalformedSegment { .. })));
    }

    fn record(rot: Matrix3<f64>, status: CalibrationStatus) -> CalibrationRecord {
        CalibrationRecord {
            frame_id: "f".into(),
            status,
            image_width: 1920.0,
            image_height: 1080.0,
            camera: Some(CameraBlock {
                alpha_x: 1000.0,
                alpha_y: 1000.0,
                x0: 960.0,
                y0: 540.0,
                skew: 0.0,
                rotation: rot.transpose().as_slice().try_into().unwrap(),
                center: [0.0, 0.0, 0.0],
            }),
            homography: None,
            refined: false,
            residuals: ResidualSummary::default(),
        }
    }

    #[test]
    fn calibration_round_trip() {
        let r = record(Matrix3::identity(), CalibrationStatus::Calibrated);
        let back = parse_calibration(&write_calibration(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        let rot = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let r = record(*rot.matrix(), CalibrationStatus::Calibrated);
        let back = parse_calibration(&write_calibration(&r).unwrap()).unwrap();
        assert_eq!(back, r);
        assert!((back.params().unwrap().rotation.matrix() - rot.matrix()).norm() < 1e-15);
    }

    #[test]
    fn reflection_rejected() {
        let r = record(Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0), CalibrationStatus::Calibrated);
        assert!(matches!(write_calibration(&r), Err(DetectIoError::InvalidRecord(_))));
    }

    #[test]
    fn failed_record_has_no_parameters() {
        let r = CalibrationRecord::failed("f", 10.0, 10.0, "too few keypoints");
        let json = String::from_utf8(write_calibration(&r).unwrap()).unwrap();
        assert!(json.contains("\"camera\": null"));
        assert_eq!(parse_calibration(json.as_bytes()).unwrap(), r);
    }
}
