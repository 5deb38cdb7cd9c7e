//! Per-frame calibration: keypoints, voting, refinement, record.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraParams, Homography, Pixel};
use crate::detect_io::{homography_to_row_major, CalibrationRecord, CameraBlock, DetectionFrame, LineObservation};
use crate::estimation::{
    decompose_homography, estimate_intrinsics, heuristic_vote, homography_from_projection, transfer_error,
    CalibrationStatus, Correspondence, VoteConfig,
};
use crate::field_model::FieldModel;
use crate::keypoint_engine::{
    fitted_lines, generate_keypoints, left_right_flip_check, relabel_half_turn, EngineConfig,
    Provenance,
};
use crate::pnl_refine::{refine_pose, snap_to_fit, PointTerm, RefineOutcome, RefinementConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub engine: EngineConfig,
    pub vote: VoteConfig,
    pub refinement: RefinementConfig,
    pub pnl: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { engine: EngineConfig::default(), vote: VoteConfig::default(), refinement: RefinementConfig::default(), pnl: true }
    }
}

/// Record plus intermediate results useful for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub record: CalibrationRecord,
    /// Voting result before refinement, in actual field labels.
    pub initial: Option<CameraParams>,
    pub refinement: Option<RefineOutcome>,
    pub flipped: bool,
}

/// Half-turn about the vertical axis through the pitch center.
fn half_turn() -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::PI)
}

/// Pose estimated against half-turned labels, expressed in the actual ones.
fn unflip_params(p: &CameraParams) -> CameraParams {
    let rz = half_turn();
    CameraParams::new(p.intrinsics, p.rotation * rz, rz * p.center)
}

fn unflip_homography(h: &Homography) -> Option<Homography> {
    Homography::new(h.matrix() * Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)))
}

fn ground_error(h: &Homography, corrs: &[Correspondence]) -> f64 {
    let g: Vec<f64> = corrs
        .iter()
        .filter(|c| c.is_ground())
        .map(|c| transfer_error(h, &Pixel::new(c.world.x, c.world.y), &c.image))
        .collect();
    if g.is_empty() {
        f64::INFINITY
    } else {
        g.iter().sum::<f64>() / g.len() as f64
    }
}

fn point_terms(corrs: &[Correspondence], keep: impl Fn(&Correspondence) -> bool) -> Vec<PointTerm> {
    corrs.iter().filter(|c| keep(c)).map(|c| PointTerm { world: c.world, image: c.image }).collect()
}

/// Refines a homography-only estimate through a camera recovered from it.
/// The refined homography is kept only if it fits the ground keypoints at
/// least as well.
fn refine_planar(
    h: &Homography,
    frame: &DetectionFrame,
    lines: &[LineObservation],
    corrs: &[Correspondence],
    model: &FieldModel,
    cfg: &PipelineConfig,
) -> Option<(Homography, RefineOutcome)> {
    let k = estimate_intrinsics(&[*h], frame.width, frame.height, cfg.vote.calibration.lock_aspect).ok()?;
    let reference = corrs.iter().find(|c| c.is_ground())?.image;
    let cam = decompose_homography(h, &k, &reference).ok()?;
    let pts = point_terms(corrs, |c| {
        c.is_ground() && transfer_error(h, &Pixel::new(c.world.x, c.world.y), &c.image) <= cfg.engine.validation_threshold
    });
    let out = refine_pose(&cam, lines, &pts, model, &cfg.refinement).ok()?;
    let refined = homography_from_projection(&out.params).ok()?;
    (ground_error(&refined, corrs) <= ground_error(h, corrs)).then_some((refined, out))
}

/// Full calibration of one detection frame. Never fails: problems end up
/// in the record status and notes.
pub fn process_frame(frame: &DetectionFrame, model: &FieldModel, cfg: &PipelineConfig) -> FrameResult {
    let (w, h) = (frame.width, frame.height);
    if let Err(e) = frame.validate() {
        return FrameResult {
            record: CalibrationRecord::failed(&frame.frame_id, w, h, e.to_string()),
            initial: None,
            refinement: None,
            flipped: false,
        };
    }
    let mut notes = vec![];
    let decision = left_right_flip_check(frame, &fitted_lines(frame), &cfg.engine);
    let work = if decision.flip {
        notes.push("left/right labels flipped".to_string());
        relabel_half_turn(frame, model)
    } else {
        frame.clone()
    };
    if decision.insufficient {
        notes.push("flip check: lines of one orientation missing".to_string());
    }
    let engine = generate_keypoints(&work, model, &cfg.engine);
    let lines: Vec<_> = work.lines.iter().map(snap_to_fit).collect();
    if engine.unresolved {
        notes.push("keypoint ambiguities unresolved".to_string());
    }
    let corrs = engine.bundle.correspondences(model);
    let vote = heuristic_vote(&corrs, model, w, h, &cfg.vote);

    let mut record = CalibrationRecord::failed(&frame.frame_id, w, h, "");
    record.residuals.notes.clear();
    record.status = vote.status;
    let mut initial = None;
    let mut refinement = None;

    match vote.status {
        CalibrationStatus::Calibrated => {
            let (cell, est) = vote.best.as_ref().expect("calibrated frames have a best cell");
            let mut params = est.params;
            initial = Some(params);
            record.residuals.cell = Some(format!(
                "{}@{}",
                cell.subset.name(),
                cell.threshold.map_or("none".to_string(), |t| t.to_string())
            ));
            record.residuals.inliers = est.inliers.len();
            record.residuals.mean_reprojection_px = Some(est.mean_error);
            if cfg.pnl {
                // Grid-completed points are projections of the voting
                // estimate, not observations.
                let observed = |c: &Correspondence| {
                    engine.bundle.resolved.get(&c.id).is_some_and(|r| r.provenance != Provenance::GridCompletion)
                };
                let pts = point_terms(&corrs, |c| est.inliers.contains(&c.id) && observed(c));
                match refine_pose(&params, &lines, &pts, model, &cfg.refinement) {
                    Ok(out) => {
                        if out.diverged {
                            notes.push("refinement did not lower the cost".to_string());
                        }
                        record.refined = !out.diverged;
                        record.residuals.pnl_cost_initial = Some(out.initial_cost);
                        record.residuals.pnl_cost_final = Some(out.final_cost);
                        params = out.params;
                        let errs: Vec<f64> = corrs
                            .iter()
                            .filter(|c| est.inliers.contains(&c.id))
                            .filter_map(|c| params.project(&c.world).map(|p| (p - c.image).norm()))
                            .collect();
                        if !errs.is_empty() {
                            record.residuals.mean_reprojection_px = Some(errs.iter().sum::<f64>() / errs.len() as f64);
                        }
                        refinement = Some(out);
                    }
                    Err(e) => notes.push(format!("refinement skipped: {e}")),
                }
            }
            if decision.flip {
                params = unflip_params(&params);
                initial = initial.map(|p| unflip_params(&p));
            }
            record.camera = Some(CameraBlock::from_params(&params));
            record.homography = homography_from_projection(&params).ok().map(|h| homography_to_row_major(&h));
        }
        CalibrationStatus::HomographyOnly => {
            let mut hg = vote.ground_homography.expect("homography-only frames have a homography");
            notes.push("camera parameters unavailable; planar estimate only".to_string());
            if cfg.pnl {
                if let Some((refined, out)) = refine_planar(&hg, &work, &lines, &corrs, model, cfg) {
                    hg = refined;
                    record.refined = true;
                    record.residuals.pnl_cost_initial = Some(out.initial_cost);
                    record.residuals.pnl_cost_final = Some(out.final_cost);
                    refinement = Some(out);
                }
            }
            let e = ground_error(&hg, &corrs);
            record.residuals.mean_reprojection_px = e.is_finite().then_some(e);
            if decision.flip {
                hg = unflip_homography(&hg).unwrap_or(hg);
            }
            record.homography = Some(homography_to_row_major(&hg));
        }
        CalibrationStatus::Failed => {
            let reason = vote
                .outcomes
                .iter()
                .find_map(|o| o.result.as_ref().err())
                .map_or("no correspondences".to_string(), |e| e.to_string());
            notes.push(format!("calibration failed: {reason}"));
        }
    }
    record.residuals.notes = notes;
    FrameResult { record, initial, refinement, flipped: decision.flip }
}

/// Processes frames in parallel with at most `jobs` workers (0 = all
/// cores). Results are ordered by frame id.
pub fn process_batch(frames: &[DetectionFrame], model: &FieldModel, cfg: &PipelineConfig, jobs: usize) -> Vec<FrameResult> {
    let run = || frames.par_iter().map(|f| process_frame(f, model, cfg)).collect::<Vec<_>>();
    let mut out = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    out.sort_by(|a, b| a.record.frame_id.cmp(&b.record.frame_id));
    out
}

/// Same as [`process_frame`] with PnL refinement of an existing record.
/// The record's camera is used as the initial estimate.
pub fn refine_record(
    record: &CalibrationRecord,
    frame: &DetectionFrame,
    model: &FieldModel,
    cfg: &PipelineConfig,
) -> CalibrationRecord {
    let mut out = record.clone();
    let Some(params) = record.params() else { return out };
    let engine = generate_keypoints(frame, model, &cfg.engine);
    let corrs = engine.bundle.correspondences(model);
    let pts = point_terms(&corrs, |c| {
        params.project(&c.world).is_some_and(|p| (p - c.image).norm() <= cfg.engine.validation_threshold)
    });
    let lines: Vec<_> = frame.lines.iter().map(snap_to_fit).collect();
    match refine_pose(&params, &lines, &pts, model, &cfg.refinement) {
        Ok(r) => {
            out.camera = Some(CameraBlock::from_params(&r.params));
            out.homography = homography_from_projection(&r.params).ok().map(|h| homography_to_row_major(&h));
            out.refined = !r.diverged;
            out.residuals.pnl_cost_initial = Some(r.initial_cost);
            out.residuals.pnl_cost_final = Some(r.final_cost);
        }
        Err(e) => out.residuals.notes.push(format!("refinement skipped: {e}")),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::world;

    #[test]
    fn unflip_maps_projection() {
        let cam = CameraParams::look_at(
            crate::camera::Intrinsics::centered(1500.0, 1920.0, 1080.0),
            world(-70.0, 5.0, -12.0),
            world(-30.0, 0.0, 0.0),
            0.0,
        )
        .unwrap();
        // Camera that sees half-turned world points where `cam` sees the
        // actual ones.
        let rz = half_turn();
        let rel = CameraParams::new(cam.intrinsics, cam.rotation * rz.inverse(), rz * cam.center);
        let back = unflip_params(&rel);
        let x = world(-40.0, 10.0, 0.0);
        assert!((back.project(&x).unwrap() - cam.project(&x).unwrap()).norm() < 1e-9);
        assert!((rel.project(&(rz * x)).unwrap() - cam.project(&x).unwrap()).norm() < 1e-9);
    }
}
