//! Left/right labeling check for views along the pitch axis.

use std::collections::BTreeMap;

use super::{EngineConfig, Line2D};
use crate::detect_io::{ConicObservation, DetectionFrame, KeypointObservation, LineObservation};
use crate::field_model::{FieldModel, FieldOrientation, SegmentId, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlipDecision {
    pub flip: bool,
    /// No line of one of the two orientations was observed.
    pub insufficient: bool,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A view is along the pitch axis when lines running along the length look
/// steeper than lines across it by more than the configured margin. Such a
/// view with mostly right-hand labels is relabeled.
pub fn left_right_flip_check(
    frame: &DetectionFrame,
    lines: &BTreeMap<SegmentId, Line2D>,
    cfg: &EngineConfig,
) -> FlipDecision {
    let incl = |o: FieldOrientation| -> Vec<f64> {
        lines
            .iter()
            .filter(|(s, _)| s.field_orientation() == Some(o))
            .map(|(_, l)| l.inclination())
            .collect()
    };
    let (h, v) = (incl(FieldOrientation::AlongLength), incl(FieldOrientation::AlongWidth));
    if h.is_empty() || v.is_empty() {
        return FlipDecision { flip: false, insufficient: true };
    }
    let axis_view = median(h) > median(v) + cfg.flip_angle_deg.to_radians();
    let (mut left, mut right) = (0usize, 0usize);
    let segs = frame.lines.iter().map(|l| l.segment).chain(frame.conics.iter().map(|c| c.segment));
    for side in segs.filter_map(SegmentId::side) {
        match side {
            Side::Left => left += 1,
            Side::Right => right += 1,
        }
    }
    FlipDecision { flip: axis_view && right > left, insufficient: false }
}

/// Relabels every observation under the half-turn of the pitch. Keypoints
/// without a registry image are dropped.
pub fn relabel_half_turn(frame: &DetectionFrame, model: &FieldModel) -> DetectionFrame {
    DetectionFrame {
        frame_id: frame.frame_id.clone(),
        width: frame.width,
        height: frame.height,
        keypoints: frame
            .keypoints
            .iter()
            .filter_map(|k| Some(KeypointObservation { id: model.half_turn(k.id)?, ..*k }))
            .collect(),
        lines: frame
            .lines
            .iter()
            .map(|l| LineObservation { segment: l.segment.half_turn(), ..l.clone() })
            .collect(),
        conics: frame
            .conics
            .iter()
            .map(|c| ConicObservation { segment: c.segment.half_turn(), points: c.points.clone() })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pixel;

    fn obs(seg: SegmentId, a: (f64, f64), b: (f64, f64)) -> LineObservation {
        LineObservation::new(seg, vec![Pixel::new(a.0, a.1), Pixel::new(b.0, b.1)]).unwrap()
    }

    fn frame(lines: Vec<LineObservation>) -> DetectionFrame {
        DetectionFrame { lines, ..DetectionFrame::empty("f", 1920.0, 1080.0) }
    }

    fn check(f: &DetectionFrame) -> FlipDecision {
        left_right_flip_check(f, &super::super::fitted_lines(f), &EngineConfig::default())
    }

    #[test]
    fn axis_view_with_right_labels_flips() {
        let f = frame(vec![
            obs(SegmentId::BigRectRightTop, (800.0, 1000.0), (900.0, 300.0)),
            obs(SegmentId::BigRectRightBottom, (1300.0, 1000.0), (1100.0, 300.0)),
            obs(SegmentId::BigRectRightMain, (700.0, 500.0), (1400.0, 520.0)),
        ]);
        assert_eq!(check(&f), FlipDecision { flip: true, insufficient: false });
    }

    #[test]
    fn side_view_does_not_flip() {
        let f = frame(vec![
            obs(SegmentId::SideLineTop, (0.0, 200.0), (1900.0, 260.0)),
            obs(SegmentId::BigRectRightMain, (1500.0, 200.0), (1300.0, 900.0)),
        ]);
        assert_eq!(check(&f), FlipDecision { flip: false, insufficient: false });
    }

    #[test]
    fn missing_orientation_is_flagged() {
        let f = frame(vec![obs(SegmentId::SideLineTop, (0.0, 200.0), (1900.0, 260.0))]);
        assert_eq!(check(&f), FlipDecision { flip: false, insufficient: true });
    }

    #[test]
    fn half_turn_relabel_is_involution() {
        let m = FieldModel::default();
        let f = frame(vec![obs(SegmentId::SideLineLeft, (0.0, 0.0), (10.0, 10.0))]);
        let g = relabel_half_turn(&f, &m);
        assert_eq!(g.lines[0].segment, SegmentId::SideLineRight);
        assert_eq!(relabel_half_turn(&g, &m), f);
    }
}
