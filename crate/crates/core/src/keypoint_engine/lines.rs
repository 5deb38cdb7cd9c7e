//! Line-line intersections (Kp and Kpe) from fitted segment lines.

use std::collections::BTreeMap;

use super::{fit_line, EngineConfig, KeypointBundle, Line2D, Provenance};
use crate::detect_io::DetectionFrame;
use crate::field_model::{FieldModel, KeypointOrigin, KeypointSet, SegmentId};

/// Total least squares line per observed straight segment.
pub fn fitted_lines(frame: &DetectionFrame) -> BTreeMap<SegmentId, Line2D> {
    frame
        .lines
        .iter()
        .filter_map(|l| fit_line(l.all_points()).ok().map(|(line, _)| (l.segment, line)))
        .collect()
}

/// Intersections of registered line pairs. Near-parallel pairs are skipped
/// and intersections farther than `extension` times the image size outside
/// the image are dropped.
pub fn line_line_intersections(
    lines: &BTreeMap<SegmentId, Line2D>,
    model: &FieldModel,
    width: f64,
    height: f64,
    cfg: &EngineConfig,
) -> KeypointBundle {
    let mut bundle = KeypointBundle::default();
    let min_angle = cfg.min_intersection_angle_deg.to_radians();
    let (mx, my) = (cfg.extension * width, cfg.extension * height);
    for def in model.keypoints().filter(|d| matches!(d.id.set, KeypointSet::Kp | KeypointSet::Kpe)) {
        let KeypointOrigin::LineLine(a, b) = def.origin else { continue };
        let (Some(la), Some(lb)) = (lines.get(&a), lines.get(&b)) else { continue };
        if la.angle_to(lb) < min_angle {
            continue;
        }
        let Some(p) = la.intersect(lb) else { continue };
        if p.x < -mx || p.x > width + mx || p.y < -my || p.y > height + my {
            continue;
        }
        bundle.insert(def.id, p, Provenance::LineIntersection);
    }
    bundle
}
