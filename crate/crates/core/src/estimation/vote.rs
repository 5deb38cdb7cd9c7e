//! Heuristic voting over subset x threshold cells.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrate::reprojection_error;
use super::{calibrate_pose, ransac_homography, select_subset, CalibrationConfig, CellSpec, Correspondence, EstimationError, PoseEstimate, Subset};
use crate::camera::{Homography, Pixel};
use crate::field_model::FieldModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationStatus {
    Calibrated,
    HomographyOnly,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VoteConfig {
    pub cells: Vec<CellSpec>,
    /// Maximum mean reprojection error to declare a frame calibrated.
    pub max_error: f64,
    /// Errors within this margin count as ties.
    pub tie_tolerance: f64,
    /// Cells are compared by their mean reprojection error over all
    /// correspondences, each error capped at this value (px).
    pub score_cap: f64,
    pub parallel: bool,
    pub calibration: CalibrationConfig,
}

pub const DEFAULT_THRESHOLDS: [Option<f64>; 6] = [None, Some(5.0), Some(10.0), Some(15.0), Some(25.0), Some(50.0)];

/// The full 3 x 6 grid.
pub fn default_cells() -> Vec<CellSpec> {
    Subset::ALL
        .iter()
        .flat_map(|&subset| DEFAULT_THRESHOLDS.iter().map(move |&threshold| CellSpec { subset, threshold }))
        .collect()
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self {
            cells: default_cells(),
            max_error: 25.0,
            tie_tolerance: 1e-6,
            score_cap: 50.0,
            parallel: false,
            calibration: CalibrationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub cell: CellSpec,
    pub result: Result<PoseEstimate, EstimationError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteResult {
    pub status: CalibrationStatus,
    pub best: Option<(CellSpec, PoseEstimate)>,
    pub ground_homography: Option<Homography>,
    pub outcomes: Vec<CellOutcome>,
}

type Scored<'a> = (CellSpec, &'a PoseEstimate, f64);

fn better(a: &Scored, b: &Scored, tol: f64) -> bool {
    let (ea, eb) = (a.2, b.2);
    if (ea - eb).abs() > tol {
        return ea < eb;
    }
    let (pa, pb) = (a.0.subset.priority(), b.0.subset.priority());
    if pa != pb {
        return pa < pb;
    }
    a.1.inliers.len() > b.1.inliers.len()
}

/// Mean capped reprojection error of a pose over every correspondence.
pub fn vote_score(params: &crate::camera::CameraParams, corrs: &[Correspondence], cap: f64) -> f64 {
    if corrs.is_empty() {
        return f64::INFINITY;
    }
    corrs.iter().map(|c| reprojection_error(params, c).min(cap)).sum::<f64>() / corrs.len() as f64
}

/// Runs every cell and keeps the lowest mean reprojection error, measured
/// on the common correspondence set with capped errors so that cells with
/// small inlier sets are not favored. Ties go to the higher-priority
/// subset, then to the larger inlier set. Cells are reduced in grid order,
/// so the result does not depend on `parallel`.
pub fn heuristic_vote(
    corrs: &[Correspondence],
    model: &FieldModel,
    width: f64,
    height: f64,
    cfg: &VoteConfig,
) -> VoteResult {
    let run = |cell: &CellSpec| CellOutcome {
        cell: *cell,
        result: calibrate_pose(corrs, model, width, height, *cell, &cfg.calibration),
    };
    let outcomes: Vec<CellOutcome> =
        if cfg.parallel { cfg.cells.par_iter().map(run).collect() } else { cfg.cells.iter().map(run).collect() };

    let mut best: Option<Scored> = None;
    for o in &outcomes {
        if let Ok(est) = &o.result {
            let cand = (o.cell, est, vote_score(&est.params, corrs, cfg.score_cap));
            if best.as_ref().is_none_or(|b| better(&cand, b, cfg.tie_tolerance)) {
                best = Some(cand);
            }
        }
    }
    let best = best.map(|(c, e, _)| (c, e.clone()));

    let ground_homography = best
        .as_ref()
        .and_then(|(_, e)| e.ground_homography)
        .or_else(|| outcomes.iter().find_map(|o| o.result.as_ref().ok().and_then(|e| e.ground_homography)))
        .or_else(|| fallback_ground_homography(corrs, &cfg.calibration));

    let status = match &best {
        Some((_, e)) if e.mean_error <= cfg.max_error => CalibrationStatus::Calibrated,
        _ if ground_homography.is_some() => CalibrationStatus::HomographyOnly,
        _ => CalibrationStatus::Failed,
    };
    VoteResult { status, best, ground_homography, outcomes }
}

fn fallback_ground_homography(corrs: &[Correspondence], cfg: &CalibrationConfig) -> Option<Homography> {
    let ground = select_subset(corrs, Subset::GroundPlaneKeypoints);
    let src: Vec<Pixel> = ground.iter().map(|c| Pixel::new(c.world.x, c.world.y)).collect();
    let dst: Vec<Pixel> = ground.iter().map(|c| c.image).collect();
    ransac_homography(&src, &dst, Some(10.0), cfg.ransac_max_iters, cfg.seed).ok().map(|r| r.homography)
}
