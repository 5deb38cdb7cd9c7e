//! Conic keypoint candidates, pair disambiguation and grid completion.

use std::collections::BTreeMap;

use super::{
    ellipse_tangent_points, fit_ellipse, line_ellipse_intersections, CandidatePair, EngineConfig, KeypointBundle,
    KeypointError, Line2D, Provenance,
};
use crate::camera::{Homography, Pixel};
use crate::detect_io::DetectionFrame;
use crate::estimation::{dlt_homography, ransac_homography, transfer_error};
use crate::field_model::{FieldModel, KeypointId, KeypointOrigin, KeypointSet, SegmentId};

/// Bundle with every candidate pair assigned, and the homographies fitted
/// from the anchors (`h`), after Kp1 (`h1`) and after Kp2 (`h2`).
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub bundle: KeypointBundle,
    pub h: Option<Homography>,
    pub h1: Option<Homography>,
    pub h2: Option<Homography>,
}

fn ground_xy(model: &FieldModel, id: KeypointId) -> Option<Pixel> {
    let def = model.keypoint_def(id).ok()?;
    def.is_ground().then(|| Pixel::new(def.point.x, def.point.y))
}

fn in_bounds(p: &Pixel, width: f64, height: f64, ext: f64) -> bool {
    let (mx, my) = (ext * width, ext * height);
    p.x >= -mx && p.x <= width + mx && p.y >= -my && p.y <= height + my
}

/// Unordered Kp1 (line x conic) and Kp2 (tangent contact) pairs. Pairs with
/// an already resolved member are skipped.
pub fn conic_candidates(
    frame: &DetectionFrame,
    lines: &BTreeMap<SegmentId, Line2D>,
    bundle: &KeypointBundle,
    model: &FieldModel,
    cfg: &EngineConfig,
) -> Vec<CandidatePair> {
    let ellipses: BTreeMap<SegmentId, _> = frame
        .conics
        .iter()
        .filter(|c| c.points.len() >= cfg.min_conic_points)
        .filter_map(|c| fit_ellipse(&c.points).ok().map(|(e, _)| (c.segment, e)))
        .collect();
    let mut out = Vec::new();
    for def in model.keypoints() {
        let Some(partner) = def.partner else { continue };
        if partner < def.id || bundle.contains(def.id) || bundle.contains(partner) {
            continue;
        }
        let (pixels, provenance) = match def.origin {
            KeypointOrigin::LineConic(line, conic) => {
                let (Some(l), Some(e)) = (lines.get(&line), ellipses.get(&conic)) else { continue };
                match line_ellipse_intersections(l, e).as_slice() {
                    [a, b] => ([*a, *b], Provenance::LineEllipse),
                    _ => continue,
                }
            }
            KeypointOrigin::Tangent { external, conic } => {
                let (Some(ext), Some(e)) = (bundle.resolved.get(&external), ellipses.get(&conic)) else { continue };
                match ellipse_tangent_points(&ext.pixel(), e) {
                    Ok(p) => (p, Provenance::Tangent),
                    Err(_) => continue,
                }
            }
            _ => continue,
        };
        if pixels.iter().any(|p| !in_bounds(p, frame.width, frame.height, cfg.extension)) {
            continue;
        }
        out.push(CandidatePair {
            ids: [def.id, partner],
            pixels: [[pixels[0].x, pixels[0].y], [pixels[1].x, pixels[1].y]],
            provenance,
        });
    }
    out
}

/// True when `h` preserves orientation at every world point, which holds
/// for the ground homography of any camera above the pitch.
pub fn orientation_consistent(h: &Homography, world: &[Pixel]) -> bool {
    let m = h.matrix();
    let det = m.determinant();
    world.iter().all(|p| {
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        det / (w * w * w) > 0.0
    })
}

struct Anchors {
    world: Vec<Pixel>,
    image: Vec<Pixel>,
}

impl Anchors {
    fn from_bundle(bundle: &KeypointBundle, model: &FieldModel) -> Self {
        let (world, image) = bundle
            .resolved
            .values()
            .filter_map(|r| Some((ground_xy(model, r.id)?, r.pixel())))
            .unzip();
        Self { world, image }
    }

    fn fit(&self, cfg: &EngineConfig) -> Option<Homography> {
        ransac_homography(&self.world, &self.image, Some(cfg.validation_threshold), 1000, cfg.seed)
            .ok()
            .map(|r| r.homography)
    }

    fn with(&self, extra: &[(Pixel, Pixel)]) -> Anchors {
        let mut a = Anchors { world: self.world.clone(), image: self.image.clone() };
        for (w, i) in extra {
            a.world.push(*w);
            a.image.push(*i);
        }
        a
    }
}

/// Orders of a pair as (world, image) correspondences; `swap` exchanges
/// the image points.
fn ordered(pair: &CandidatePair, model: &FieldModel, swap: bool) -> Option<[(Pixel, Pixel); 2]> {
    let w0 = ground_xy(model, pair.ids[0])?;
    let w1 = ground_xy(model, pair.ids[1])?;
    let (p0, p1) = if swap { (pair.pixel(1), pair.pixel(0)) } else { (pair.pixel(0), pair.pixel(1)) };
    Some([(w0, p0), (w1, p1)])
}

/// Chooses the pair order that agrees best with `h`. Near ties go to the
/// order whose refit keeps the orientation.
fn assign_with(pair: &CandidatePair, h: &Homography, anchors: &Anchors, model: &FieldModel) -> Option<bool> {
    let cost = |swap| {
        let o = ordered(pair, model, swap)?;
        Some(o.iter().map(|(w, i)| transfer_error(h, w, i)).sum::<f64>())
    };
    let (c0, c1) = (cost(false)?, cost(true)?);
    if (c0 - c1).abs() > 1e-6 * c0.min(c1).max(1.0) {
        return Some(c1 < c0);
    }
    let keeps = |swap| {
        let Some(o) = ordered(pair, model, swap) else { return false };
        let a = anchors.with(&o);
        dlt_homography(&a.world, &a.image).is_ok_and(|hh| orientation_consistent(&hh, &a.world))
    };
    Some(!keeps(false) && keeps(true))
}

fn commit(bundle: &mut KeypointBundle, pair: &CandidatePair, swap: bool) {
    let (a, b) = if swap { (1, 0) } else { (0, 1) };
    bundle.resolved.insert(pair.ids[0], super::ResolvedKeypoint::new(pair.ids[0], pair.pixel(a), pair.provenance));
    bundle.resolved.insert(pair.ids[1], super::ResolvedKeypoint::new(pair.ids[1], pair.pixel(b), pair.provenance));
}

/// Exhaustive search over pair orders when the anchors alone cannot fix a
/// homography. Returns the chosen swaps and the fitted homography.
fn grid_search(
    anchors: &Anchors,
    pairs: &[CandidatePair],
    model: &FieldModel,
    cfg: &EngineConfig,
) -> Option<(Vec<bool>, Homography)> {
    let pairs = &pairs[..pairs.len().min(cfg.max_grid_pairs)];
    let mut best: Option<(f64, bool, Vec<bool>, Homography)> = None;
    for mask in 0u32..(1u32 << pairs.len()) {
        let swaps: Vec<bool> = (0..pairs.len()).map(|i| mask >> i & 1 == 1).collect();
        let extra: Option<Vec<(Pixel, Pixel)>> =
            pairs.iter().zip(&swaps).map(|(p, s)| ordered(p, model, *s)).collect::<Option<Vec<_>>>().map(|v| v.concat());
        let Some(extra) = extra else { continue };
        let a = anchors.with(&extra);
        if a.world.len() < 4 {
            continue;
        }
        let Ok(h) = dlt_homography(&a.world, &a.image) else { continue };
        let cost: f64 = a.world.iter().zip(&a.image).map(|(w, i)| transfer_error(&h, w, i).powi(2)).sum();
        if !cost.is_finite() {
            continue;
        }
        let orient = orientation_consistent(&h, &a.world);
        let better = match &best {
            None => true,
            Some((bc, bo, _, _)) => {
                if (cost - bc).abs() <= 1e-6 * bc.max(1.0) {
                    orient && !bo
                } else {
                    cost < *bc
                }
            }
        };
        if better {
            best = Some((cost, orient, swaps, h));
        }
    }
    best.map(|(_, _, s, h)| (s, h))
}

/// Assigns Kp1 pairs with the anchor homography, Kp2 pairs with the
/// homography refitted after Kp1, then drops derived points that disagree
/// with the final homography by more than the validation threshold.
pub fn resolve_ambiguities(
    bundle: &KeypointBundle,
    model: &FieldModel,
    cfg: &EngineConfig,
) -> Result<Resolution, KeypointError> {
    let mut out = KeypointBundle { resolved: bundle.resolved.clone(), candidate_pairs: vec![] };
    let pairs = &bundle.candidate_pairs;
    let anchors = Anchors::from_bundle(&out, model);

    let h = if anchors.world.len() >= 4 {
        anchors.fit(cfg)
    } else if pairs.is_empty() {
        None
    } else {
        let (swaps, h) = grid_search(&anchors, pairs, model, cfg).ok_or(KeypointError::Unresolvable)?;
        for (p, s) in pairs.iter().zip(swaps) {
            commit(&mut out, p, s);
        }
        Some(h)
    };
    let Some(h) = h else {
        return if pairs.is_empty() {
            Ok(Resolution { bundle: out, h: None, h1: None, h2: None })
        } else {
            Err(KeypointError::Unresolvable)
        };
    };

    let stage = |out: &mut KeypointBundle, set: KeypointSet, h: &Homography| {
        let anchors = Anchors::from_bundle(out, model);
        let todo: Vec<&CandidatePair> = pairs.iter().filter(|p| p.set() == set && !out.contains(p.ids[0])).collect();
        for p in todo {
            if let Some(swap) = assign_with(p, h, &anchors, model) {
                commit(out, p, swap);
            }
        }
        Anchors::from_bundle(out, model).fit(cfg)
    };
    let h1 = stage(&mut out, KeypointSet::Kp1, &h).unwrap_or(h);
    let h2 = stage(&mut out, KeypointSet::Kp2, &h1).unwrap_or(h1);

    out.resolved.retain(|id, r| {
        if r.provenance == Provenance::Detected {
            return true;
        }
        ground_xy(model, *id).is_none_or(|w| transfer_error(&h2, &w, &r.pixel()) <= cfg.validation_threshold)
    });
    let h2 = Anchors::from_bundle(&out, model).fit(cfg).unwrap_or(h2);
    Ok(Resolution { bundle: out, h: Some(h), h1: Some(h1), h2: Some(h2) })
}

/// Projects Kp3 and missing ground Kp/Kpe points through `h` and keeps those
/// inside the image and on the same side of the horizon as the anchors.
pub fn complete_grid(
    bundle: &KeypointBundle,
    h: &Homography,
    model: &FieldModel,
    width: f64,
    height: f64,
) -> KeypointBundle {
    let m = h.matrix();
    let w_of = |p: &Pixel| m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
    let anchor_w: f64 = bundle.resolved.keys().filter_map(|id| ground_xy(model, *id)).map(|p| w_of(&p).signum()).sum();
    let sign = if anchor_w < 0.0 { -1.0 } else { 1.0 };
    let mut out = bundle.clone();
    for def in model.keypoints() {
        if !matches!(def.id.set, KeypointSet::Kp | KeypointSet::Kpe | KeypointSet::Kp3)
            || !def.is_ground()
            || out.contains(def.id)
        {
            continue;
        }
        let wp = Pixel::new(def.point.x, def.point.y);
        if w_of(&wp) * sign <= 0.0 {
            continue;
        }
        let Some(p) = h.apply(&wp) else { continue };
        if (0.0..=width).contains(&p.x) && (0.0..=height).contains(&p.y) {
            out.insert(def.id, p, Provenance::GridCompletion);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{world, CameraParams, Intrinsics};
    use crate::estimation::homography_from_projection;

    fn camera() -> CameraParams {
        CameraParams::look_at(Intrinsics::centered(1500.0, 1920.0, 1080.0), world(0.0, 60.0, -15.0), world(0.0, 0.0, 0.0), 0.0)
            .unwrap()
    }

    fn project(cam: &CameraParams, model: &FieldModel, id: KeypointId) -> Pixel {
        cam.project(&model.keypoint(id).unwrap()).unwrap()
    }

    #[test]
    fn ground_homography_preserves_orientation() {
        let h = homography_from_projection(&camera()).unwrap();
        let pts = [Pixel::new(0.0, 0.0), Pixel::new(30.0, -20.0), Pixel::new(-40.0, 30.0)];
        assert!(orientation_consistent(&h, &pts));
        let flip = Homography::new(h.matrix() * nalgebra::Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0)).unwrap();
        assert!(!orientation_consistent(&flip, &pts));
    }

    #[test]
    fn swapped_pair_is_reordered() {
        let m = FieldModel::default();
        let cam = camera();
        let mut b = KeypointBundle::default();
        for idx in [14u16, 15, 2, 3, 18, 19] {
            let id = KeypointId::new(KeypointSet::Kp, idx);
            b.insert(id, project(&cam, &m, id), Provenance::Detected);
        }
        let (a, c) = (KeypointId::new(KeypointSet::Kp1, 0), KeypointId::new(KeypointSet::Kp1, 1));
        let (pa, pc) = (project(&cam, &m, a), project(&cam, &m, c));
        b.candidate_pairs.push(CandidatePair { ids: [a, c], pixels: [[pc.x, pc.y], [pa.x, pa.y]], provenance: Provenance::LineEllipse });
        let r = resolve_ambiguities(&b, &m, &EngineConfig::default()).unwrap();
        assert!((r.bundle.resolved[&a].pixel() - pa).norm() < 1e-9);
        assert!((r.bundle.resolved[&c].pixel() - pc).norm() < 1e-9);
    }

    #[test]
    fn grid_search_with_few_anchors() {
        let m = FieldModel::default();
        let cam = camera();
        let mut b = KeypointBundle::default();
        let id = KeypointId::new(KeypointSet::Kp, 14);
        b.insert(id, project(&cam, &m, id), Provenance::Detected);
        let mut truth = vec![];
        for (i, j) in [(0u16, 1u16), (2, 3)] {
            let (a, c) = (KeypointId::new(KeypointSet::Kp2, i), KeypointId::new(KeypointSet::Kp2, j));
            let (pa, pc) = (project(&cam, &m, a), project(&cam, &m, c));
            truth.push((a, pa));
            truth.push((c, pc));
            b.candidate_pairs.push(CandidatePair { ids: [a, c], pixels: [[pc.x, pc.y], [pa.x, pa.y]], provenance: Provenance::Tangent });
        }
        let r = resolve_ambiguities(&b, &m, &EngineConfig::default()).unwrap();
        for (id, p) in truth {
            assert!((r.bundle.resolved[&id].pixel() - p).norm() < 1e-6, "{id}");
        }
    }

    #[test]
    fn completion_adds_visible_points_only() {
        let m = FieldModel::default();
        let cam = camera();
        let h = homography_from_projection(&cam).unwrap();
        let mut b = KeypointBundle::default();
        for idx in [14u16, 15] {
            let id = KeypointId::new(KeypointSet::Kp, idx);
            b.insert(id, project(&cam, &m, id), Provenance::Detected);
        }
        let out = complete_grid(&b, &h, &m, 1920.0, 1080.0);
        let center = KeypointId::new(KeypointSet::Kp3, 4);
        assert_eq!(out.resolved[&center].provenance, Provenance::GridCompletion);
        for r in out.resolved.values() {
            assert!((0.0..=1920.0).contains(&r.pixel[0]) && (0.0..=1080.0).contains(&r.pixel[1]));
            let truth = project(&cam, &m, r.id);
            assert!((truth - r.pixel()).norm() < 1e-6);
        }
    }
}
