//! Evaluation metrics: segment Jaccard, completeness, final score, IoU and
//! projection errors.

mod iou;
mod jaccard;
mod projection;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use iou::{area, convex_intersection, evaluate_iou, signed_area, IouMode};
pub use jaccard::{
    evaluate_jaccard, jaccard_from_outcomes, point_polyline_distance, project_segments, Classification, JaccardResult,
    SegmentOutcome, SAMPLING_SPACING,
};
pub use projection::{evaluate_projection_errors, grid_projection_errors, ProjectionErrors, DEFAULT_SAMPLES};

use crate::detect_io::{CalibrationRecord, GtPolylines};
use crate::estimation::CalibrationStatus;
use crate::field_model::FieldModel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("ground truth has no evaluated segment")]
    EmptyGroundTruth,
    #[error("no eligible frames")]
    NoEligibleFrames,
    #[error("homography is not invertible")]
    Singular,
    #[error("no visible field pixels")]
    NoVisibleField,
}

/// Tolerance (px) of the final score.
pub const FINAL_SCORE_GAMMA: f64 = 5.0;

/// Frames with more than this many annotated segments count toward the
/// completeness rate.
pub const MIN_SEGMENTS_ELIGIBLE: usize = 4;

/// `(CR, FS)` from per-frame `(calibrated, JaC_5)` pairs of eligible frames.
/// `FS = CR * mean(JaC_5 over calibrated frames)`.
pub fn completeness_and_final_score(frames: &[(bool, f64)], eligible: usize) -> Result<(f64, f64), MetricsError> {
    if eligible == 0 {
        return Err(MetricsError::NoEligibleFrames);
    }
    let jacs: Vec<f64> = frames.iter().filter(|(c, _)| *c).map(|(_, j)| *j).collect();
    let cr = jacs.len() as f64 / eligible as f64;
    if jacs.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mean = jacs.iter().sum::<f64>() / jacs.len() as f64;
    Ok((cr, cr * mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvaluation {
    pub frame_id: String,
    pub eligible: bool,
    pub calibrated: bool,
    /// JaC per requested tolerance; empty if the frame has no annotation.
    pub jac: Vec<f64>,
    pub jac5: f64,
    pub iou_part: Option<f64>,
    pub iou_whole: Option<f64>,
    pub projection_error: Option<f64>,
    pub reprojection_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Summary { mean: v.iter().sum::<f64>() / n as f64, median, count: n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub eligible: usize,
    pub calibrated: usize,
    pub gammas: Vec<f64>,
    /// Mean JaC per tolerance over calibrated eligible frames.
    pub jac: Vec<f64>,
    pub jac5: f64,
    pub completeness: f64,
    pub final_score: f64,
    pub iou_part: Option<Summary>,
    pub iou_whole: Option<Summary>,
    pub projection_error: Option<Summary>,
    pub reprojection_error: Option<Summary>,
}

/// Scores one calibration record. `gt_h` is the ground-truth ground
/// homography when available.
pub fn evaluate_frame(
    record: &CalibrationRecord,
    gt: &GtPolylines,
    gt_h: Option<&crate::camera::Homography>,
    model: &FieldModel,
    gammas: &[f64],
) -> FrameEvaluation {
    let (w, h) = (record.image_width, record.image_height);
    let annotated = gt.keys().filter(|s| s.is_evaluated()).count();
    let calibrated = record.status == CalibrationStatus::Calibrated;
    let params = if calibrated { record.params() } else { None };
    let mut all: Vec<f64> = gammas.to_vec();
    all.push(FINAL_SCORE_GAMMA);
    let jr = evaluate_jaccard(params.as_ref(), gt, model, w, h, &all).ok();
    let (jac, jac5) = match jr {
        Some(r) => (r.jac[..gammas.len()].to_vec(), r.jac[gammas.len()]),
        None => (vec![], 0.0),
    };
    let field = (model.dims().length, model.dims().width);
    let pred_h = record.homography();
    let both = pred_h.zip(gt_h);
    let iou = |mode| both.and_then(|(p, g)| evaluate_iou(&p, g, field, (w, h), mode).ok());
    let errs = both.and_then(|(p, g)| evaluate_projection_errors(&p, g, (w, h), field, DEFAULT_SAMPLES, 0).ok());
    FrameEvaluation {
        frame_id: record.frame_id.clone(),
        eligible: annotated > MIN_SEGMENTS_ELIGIBLE,
        calibrated,
        jac,
        jac5,
        iou_part: iou(IouMode::Part),
        iou_whole: iou(IouMode::Whole),
        projection_error: errs.map(|e| e.projection),
        reprojection_error: errs.map(|e| e.reprojection),
    }
}

pub fn aggregate(frames: &[FrameEvaluation], gammas: &[f64]) -> Result<EvalReport, MetricsError> {
    let eligible: Vec<&FrameEvaluation> = frames.iter().filter(|f| f.eligible).collect();
    let pairs: Vec<(bool, f64)> = eligible.iter().map(|f| (f.calibrated, f.jac5)).collect();
    let (completeness, final_score) = completeness_and_final_score(&pairs, eligible.len())?;
    let cal: Vec<&&FrameEvaluation> = eligible.iter().filter(|f| f.calibrated).collect();
    let mean = |v: Vec<f64>| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let jac = (0..gammas.len()).map(|i| mean(cal.iter().map(|f| f.jac[i]).collect())).collect();
    let jac5 = mean(cal.iter().map(|f| f.jac5).collect());
    Ok(EvalReport {
        frames: frames.len(),
        eligible: eligible.len(),
        calibrated: cal.len(),
        gammas: gammas.to_vec(),
        jac,
        jac5,
        completeness,
        final_score,
        iou_part: Summary::of(frames.iter().filter_map(|f| f.iou_part)),
        iou_whole: Summary::of(frames.iter().filter_map(|f| f.iou_whole)),
        projection_error: Summary::of(frames.iter().filter_map(|f| f.projection_error)),
        reprojection_error: Summary::of(frames.iter().filter_map(|f| f.reprojection_error)),
    })
}

impl EvalReport {
    /// Aligned text table, one metric per row.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "{k:<24} {v:>12}");
        };
        row("frames", self.frames.to_string());
        row("eligible", self.eligible.to_string());
        row("calibrated", self.calibrated.to_string());
        for (g, j) in self.gammas.iter().zip(&self.jac) {
            row(&format!("JaC@{g}"), format!("{:.2}", 100.0 * j));
        }
        row("CR", format!("{:.2}", 100.0 * self.completeness));
        row("FS", format!("{:.2}", 100.0 * self.final_score));
        let mut summary = |k: &str, v: &Option<Summary>, scale: f64| {
            if let Some(v) = v {
                row(&format!("{k} mean"), format!("{:.4}", scale * v.mean));
                row(&format!("{k} median"), format!("{:.4}", scale * v.median));
            }
        };
        summary("IoU_part", &self.iou_part, 100.0);
        summary("IoU_whole", &self.iou_whole, 100.0);
        summary("proj. error", &self.projection_error, 1.0);
        summary("reproj. error", &self.reprojection_error, 1.0);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cr_and_fs() {
        let all = vec![(true, 1.0); 10];
        assert_eq!(completeness_and_final_score(&all, 10).unwrap(), (1.0, 1.0));
        let half: Vec<(bool, f64)> = (0..10).map(|i| (i < 5, 0.8)).collect();
        let (cr, fs) = completeness_and_final_score(&half, 10).unwrap();
        assert_eq!(cr, 0.5);
        assert!((fs - 0.4).abs() < 1e-15);
        assert_eq!(completeness_and_final_score(&[(false, 0.0)], 1).unwrap(), (0.0, 0.0));
        assert_eq!(completeness_and_final_score(&[], 0), Err(MetricsError::NoEligibleFrames));
    }

    #[test]
    fn summary_median() {
        let s = Summary::of([3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!(s.median, 2.5);
        assert_eq!(s.mean, 4.0);
        assert!(Summary::of([]).is_none());
    }
}
