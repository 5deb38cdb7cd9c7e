//! Segment-level calibration accuracy.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::camera::{CameraParams, Pixel};
use crate::detect_io::GtPolylines;
use crate::field_model::{FieldModel, SegmentId};

/// Model sampling step (meters) before projection.
pub const SAMPLING_SPACING: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    TruePositive,
    FalsePositive,
    FalseNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentOutcome {
    pub segment: SegmentId,
    pub classification: Classification,
    /// Largest distance of a predicted point to the annotation; infinite
    /// when one side is missing.
    pub max_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardResult {
    pub gammas: Vec<f64>,
    pub jac: Vec<f64>,
    /// Outcomes per gamma for the labeling that scored best.
    pub outcomes: Vec<Vec<SegmentOutcome>>,
}

fn point_segment_distance(p: &Pixel, a: &Pixel, b: &Pixel) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 < 1e-24 {
        return (p - a).norm();
    }
    let s = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * s)).norm()
}

/// Minimum distance from `p` to a polyline.
pub fn point_polyline_distance(p: &Pixel, polyline: &[Pixel]) -> f64 {
    match polyline {
        [] => f64::INFINITY,
        [a] => (p - a).norm(),
        _ => polyline.windows(2).map(|w| point_segment_distance(p, &w[0], &w[1])).fold(f64::INFINITY, f64::min),
    }
}

fn inside(p: &Pixel, width: f64, height: f64) -> bool {
    (0.0..=width).contains(&p.x) && (0.0..=height).contains(&p.y)
}

/// Dense in-image projection of every evaluated model segment.
pub fn project_segments(
    params: &CameraParams,
    model: &FieldModel,
    width: f64,
    height: f64,
) -> Vec<(SegmentId, Vec<Pixel>)> {
    SegmentId::ALL
        .iter()
        .filter(|s| s.is_evaluated())
        .filter_map(|&s| {
            let pts: Vec<Pixel> = model
                .sample_segment_polyline(s, SAMPLING_SPACING)
                .ok()?
                .iter()
                .filter_map(|w| params.project(w))
                .filter(|p| inside(p, width, height))
                .collect();
            (!pts.is_empty()).then_some((s, pts))
        })
        .collect()
}

/// All points of the polyline lie within `margin` of the image border, so
/// whether the segment is visible at all is below the tolerance.
fn marginal(points: &[Pixel], width: f64, height: f64, margin: f64) -> bool {
    points.iter().all(|p| p.x.min(width - p.x).min(p.y).min(height - p.y) < margin)
}

fn classify(
    pred: &[(SegmentId, Vec<Pixel>)],
    gt: &GtPolylines,
    gamma: f64,
    width: f64,
    height: f64,
) -> Vec<SegmentOutcome> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (seg, pts) in pred {
        seen.insert(*seg);
        match gt.get(seg) {
            Some(line) => {
                let max_distance = pts.iter().map(|p| point_polyline_distance(p, line)).fold(0.0, f64::max);
                let classification =
                    if max_distance < gamma { Classification::TruePositive } else { Classification::FalsePositive };
                out.push(SegmentOutcome { segment: *seg, classification, max_distance });
            }
            None if marginal(pts, width, height, gamma) => {}
            None => out.push(SegmentOutcome {
                segment: *seg,
                classification: Classification::FalsePositive,
                max_distance: f64::INFINITY,
            }),
        }
    }
    for (seg, pts) in gt {
        if seg.is_evaluated() && !seen.contains(seg) && !marginal(pts, width, height, gamma) {
            out.push(SegmentOutcome {
                segment: *seg,
                classification: Classification::FalseNegative,
                max_distance: f64::INFINITY,
            });
        }
    }
    out
}

/// `TP / (TP + FN + FP)`; an empty outcome list scores 1.
pub fn jaccard_from_outcomes(outcomes: &[SegmentOutcome]) -> f64 {
    let count = |c| outcomes.iter().filter(|o| o.classification == c).count() as f64;
    let tp = count(Classification::TruePositive);
    let total = tp + count(Classification::FalsePositive) + count(Classification::FalseNegative);
    if total == 0.0 {
        1.0
    } else {
        tp / total
    }
}

/// Scores a prediction against annotated polylines at each tolerance. The
/// annotation and its half-turn relabeling are both scored and the better
/// one kept, per tolerance. A missing prediction scores 0.
pub fn evaluate_jaccard(
    pred: Option<&CameraParams>,
    gt: &GtPolylines,
    model: &FieldModel,
    width: f64,
    height: f64,
    gammas: &[f64],
) -> Result<JaccardResult, MetricsError> {
    if gt.keys().all(|s| !s.is_evaluated()) {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let Some(params) = pred else {
        return Ok(JaccardResult {
            gammas: gammas.to_vec(),
            jac: vec![0.0; gammas.len()],
            outcomes: vec![vec![]; gammas.len()],
        });
    };
    let projected = project_segments(params, model, width, height);
    let mirrored: GtPolylines = gt.iter().map(|(s, p)| (s.half_turn(), p.clone())).collect();
    let mut jac = Vec::with_capacity(gammas.len());
    let mut outcomes = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let a = classify(&projected, gt, g, width, height);
        let b = classify(&projected, &mirrored, g, width, height);
        let (ja, jb) = (jaccard_from_outcomes(&a), jaccard_from_outcomes(&b));
        if jb > ja {
            jac.push(jb);
            outcomes.push(b);
        } else {
            jac.push(ja);
            outcomes.push(a);
        }
    }
    Ok(JaccardResult { gammas: gammas.to_vec(), jac, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(x: f64, y: f64) -> Pixel {
        Pixel::new(x, y)
    }

    #[test]
    fn one_of_each() {
        let o = |c| SegmentOutcome { segment: SegmentId::MiddleLine, classification: c, max_distance: 0.0 };
        let v = [o(Classification::TruePositive), o(Classification::FalsePositive), o(Classification::FalseNegative)];
        assert_eq!(jaccard_from_outcomes(&v), 1.0 / 3.0);
    }

    #[test]
    fn classification_rule() {
        let gt: GtPolylines = [
            (SegmentId::MiddleLine, vec![px(100.0, 100.0), px(100.0, 500.0)]),
            (SegmentId::SideLineTop, vec![px(200.0, 200.0), px(600.0, 200.0)]),
        ]
        .into_iter()
        .collect();
        let pred = vec![
            (SegmentId::MiddleLine, vec![px(103.0, 120.0), px(98.0, 400.0)]),
            (SegmentId::CircleCentral, vec![px(300.0, 300.0)]),
        ];
        let out = classify(&pred, &gt, 5.0, 1000.0, 1000.0);
        assert_eq!(out.len(), 3);
        assert_eq!(jaccard_from_outcomes(&out), 1.0 / 3.0);
        let out = classify(&pred, &gt, 2.0, 1000.0, 1000.0);
        assert_eq!(jaccard_from_outcomes(&out), 0.0);
    }

    #[test]
    fn polyline_distance() {
        let line = [px(0.0, 0.0), px(10.0, 0.0), px(10.0, 10.0)];
        assert_eq!(point_polyline_distance(&px(5.0, 3.0), &line), 3.0);
        assert_eq!(point_polyline_distance(&px(12.0, 5.0), &line), 2.0);
        assert_eq!(point_polyline_distance(&px(-3.0, -4.0), &line), 5.0);
    }
}
