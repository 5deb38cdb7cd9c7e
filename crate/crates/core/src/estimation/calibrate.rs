//! Full camera calibration from keypoint correspondences.

use nalgebra::{DVector, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    decompose_homography, decompose_plane_homography, estimate_intrinsics, ransac_homography, refine_homography_lm,
    Correspondence, EstimationError, PlaneFrame,
};
use crate::camera::{CameraParams, Homography, Intrinsics, Pixel};
use crate::field_model::{FieldModel, KeypointId, Side};
use crate::lm::{self, LmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    /// Every resolved keypoint.
    FullKeypoints,
    /// Line-line intersections of the annotated segments only.
    MainKeypoints,
    /// Points on the ground plane.
    GroundPlaneKeypoints,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::FullKeypoints, Subset::MainKeypoints, Subset::GroundPlaneKeypoints];

    /// Tie-break priority, lower wins.
    pub fn priority(self) -> u8 {
        match self {
            Subset::FullKeypoints => 0,
            Subset::MainKeypoints => 1,
            Subset::GroundPlaneKeypoints => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::FullKeypoints => "full-keypoints",
            Subset::MainKeypoints => "main-keypoints",
            Subset::GroundPlaneKeypoints => "ground-plane-keypoints",
        }
    }
}

impl std::str::FromStr for Subset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" | "full-keypoints" => Ok(Subset::FullKeypoints),
            "main" | "main-keypoints" => Ok(Subset::MainKeypoints),
            "ground" | "ground-plane" | "ground-plane-keypoints" => Ok(Subset::GroundPlaneKeypoints),
            other => Err(format!("unknown subset `{other}`")),
        }
    }
}

/// One cell of the voting grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub subset: Subset,
    /// RANSAC / reprojection inlier threshold in pixels; `None` keeps all.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    /// Enforce `fx = fy`.
    pub lock_aspect: bool,
    pub ransac_max_iters: usize,
    pub seed: u64,
    /// Inlier re-selection rounds after the first pose refinement.
    pub inlier_rounds: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { lock_aspect: true, ransac_max_iters: 2000, seed: 0, inlier_rounds: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub params: CameraParams,
    pub inliers: Vec<KeypointId>,
    /// Mean reprojection error over the inliers, pixels.
    pub mean_error: f64,
    /// Ground-plane homography from RANSAC + LM, when available.
    pub ground_homography: Option<Homography>,
}

pub fn select_subset(corrs: &[Correspondence], subset: Subset) -> Vec<Correspondence> {
    corrs
        .iter()
        .filter(|c| match subset {
            Subset::FullKeypoints => true,
            Subset::MainKeypoints => c.main,
            Subset::GroundPlaneKeypoints => c.is_ground(),
        })
        .copied()
        .collect()
}

/// Focal guesses relative to image width, used when the closed form fails.
const FOCAL_GUESSES: [f64; 5] = [0.6, 1.0, 1.6, 2.5, 4.0];

/// Residual assigned to points that fall behind the camera.
const BEHIND_PENALTY: f64 = 1e4;

struct PlaneFit {
    plane: PlaneFrame,
    homography: Homography,
    inliers: Vec<usize>,
    reference: Pixel,
}

fn fit_plane(
    pts: &[Correspondence],
    plane: PlaneFrame,
    threshold: Option<f64>,
    cfg: &CalibrationConfig,
    seed: u64,
) -> Option<PlaneFit> {
    let idx: Vec<usize> = (0..pts.len()).filter(|&i| plane.contains(&pts[i].world)).collect();
    if idx.len() < 4 {
        return None;
    }
    let src: Vec<Pixel> = idx.iter().map(|&i| plane.to_plane(&pts[i].world)).collect();
    let dst: Vec<Pixel> = idx.iter().map(|&i| pts[i].image).collect();
    let res = ransac_homography(&src, &dst, threshold, cfg.ransac_max_iters, seed).ok()?;
    let keep: Vec<usize> = (0..idx.len()).filter(|&j| res.inliers[j]).collect();
    let s: Vec<Pixel> = keep.iter().map(|&j| src[j]).collect();
    let d: Vec<Pixel> = keep.iter().map(|&j| dst[j]).collect();
    let refined = refine_homography_lm(&res.homography, &s, &d);
    let n = d.len() as f64;
    let reference = Pixel::new(d.iter().map(|p| p.x).sum::<f64>() / n, d.iter().map(|p| p.y).sum::<f64>() / n);
    Some(PlaneFit { plane, homography: refined.homography, inliers: keep.iter().map(|&j| idx[j]).collect(), reference })
}

/// Pose parametrization for LM: scaled focal(s), incremental rotation vector
/// and camera center.
struct PoseParam {
    base_rotation: Rotation3<f64>,
    scale: f64,
    cx: f64,
    cy: f64,
    lock_aspect: bool,
}

impl PoseParam {
    fn encode(&self, cam: &CameraParams) -> DVector<f64> {
        let mut v = vec![cam.intrinsics.fx / self.scale];
        if !self.lock_aspect {
            v.push(cam.intrinsics.fy / self.scale);
        }
        v.extend([0.0, 0.0, 0.0, cam.center.x, cam.center.y, cam.center.z]);
        DVector::from_vec(v)
    }

    fn decode(&self, p: &DVector<f64>) -> CameraParams {
        let (fx, off) = (p[0] * self.scale, 1);
        let (fy, off) = if self.lock_aspect { (fx, off) } else { (p[1] * self.scale, off + 1) };
        let delta = Vector3::new(p[off], p[off + 1], p[off + 2]);
        let rot = Rotation3::new(delta) * self.base_rotation;
        let center = nalgebra::Point3::new(p[off + 3], p[off + 4], p[off + 5]);
        CameraParams::new(Intrinsics { fx, fy, cx: self.cx, cy: self.cy }, rot, center)
    }
}

pub(crate) fn reprojection_error(cam: &CameraParams, c: &Correspondence) -> f64 {
    if cam.depth(&c.world) <= 1e-9 {
        return f64::INFINITY;
    }
    (cam.project_unchecked(&c.world) - c.image).norm()
}

fn refine_full(cam: &CameraParams, pts: &[Correspondence], lock_aspect: bool) -> CameraParams {
    let param = PoseParam {
        base_rotation: cam.rotation,
        scale: 2.0 * cam.intrinsics.cx.max(1.0),
        cx: cam.intrinsics.cx,
        cy: cam.intrinsics.cy,
        lock_aspect,
    };
    let residual = |p: &DVector<f64>| {
        let c = param.decode(p);
        let mut r = DVector::zeros(2 * pts.len());
        for (i, k) in pts.iter().enumerate() {
            let v = c.to_camera(&k.world);
            if v.z <= 1e-9 {
                r[2 * i] = BEHIND_PENALTY;
                r[2 * i + 1] = BEHIND_PENALTY;
                continue;
            }
            let q = c.project_unchecked(&k.world);
            r[2 * i] = q.x - k.image.x;
            r[2 * i + 1] = q.y - k.image.y;
        }
        r
    };
    let rep = lm::minimize(residual, param.encode(cam), &LmConfig::default());
    param.decode(&rep.params)
}

fn mean_error(cam: &CameraParams, pts: &[Correspondence], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| reprojection_error(cam, &pts[i])).sum::<f64>() / idx.len() as f64
}

/// Refines from one initial pose, re-selecting inliers by reprojection.
fn refine_with_inliers(
    init: CameraParams,
    pts: &[Correspondence],
    initial_inliers: Vec<usize>,
    threshold: Option<f64>,
    cfg: &CalibrationConfig,
) -> Option<(CameraParams, Vec<usize>, f64)> {
    let mut inliers = initial_inliers;
    let mut cam = init;
    for _ in 0..=cfg.inlier_rounds {
        let sel: Vec<Correspondence> = inliers.iter().map(|&i| pts[i]).collect();
        cam = refine_full(&cam, &sel, cfg.lock_aspect);
        let next: Vec<usize> = match threshold {
            None => (0..pts.len()).collect(),
            Some(th) => (0..pts.len()).filter(|&i| reprojection_error(&cam, &pts[i]) < th).collect(),
        };
        if next.len() < 4 {
            break;
        }
        let stable = next == inliers;
        inliers = next;
        if stable {
            break;
        }
    }
    if inliers.len() < 4 {
        return None;
    }
    let err = mean_error(&cam, pts, &inliers);
    err.is_finite().then_some((cam, inliers, err))
}

/// Closed-form initialization from plane homographies followed by LM over
/// focal length and pose, for one subset/threshold cell.
pub fn calibrate_pose(
    corrs: &[Correspondence],
    model: &FieldModel,
    width: f64,
    height: f64,
    cell: CellSpec,
    cfg: &CalibrationConfig,
) -> Result<PoseEstimate, EstimationError> {
    let pts = select_subset(corrs, cell.subset);
    if pts.len() < 4 {
        return Err(EstimationError::InsufficientPoints { needed: 4, got: pts.len() });
    }
    let seed = cfg.seed;
    let ground = fit_plane(&pts, PlaneFrame::ground(), cell.threshold, cfg, seed);
    let goals: Vec<PlaneFit> = [Side::Left, Side::Right]
        .into_iter()
        .filter_map(|side| {
            let plane = PlaneFrame::goal(model, side);
            // The plane needs at least one point off the goal line.
            let off_line = pts.iter().any(|c| plane.contains(&c.world) && c.world.z != 0.0);
            if !off_line {
                return None;
            }
            fit_plane(&pts, plane, cell.threshold, cfg, seed.wrapping_add(1 + side as u64))
        })
        .collect();
    let fits: Vec<&PlaneFit> = ground.iter().chain(goals.iter()).collect();
    if fits.is_empty() {
        return Err(EstimationError::InsufficientPoints { needed: 4, got: pts.len() });
    }

    let homs: Vec<Homography> = fits.iter().map(|f| f.homography).collect();
    let closed_form = estimate_intrinsics(&homs, width, height, cfg.lock_aspect).ok();
    let guesses: Vec<Intrinsics> =
        FOCAL_GUESSES.iter().map(|g| Intrinsics::centered(g * width, width, height)).collect();

    let try_candidates = |ks: &[Intrinsics]| -> Option<(CameraParams, Vec<usize>, f64)> {
        let mut best: Option<(CameraParams, Vec<usize>, f64)> = None;
        for k in ks {
            for fit in &fits {
                let init = if fit.plane == PlaneFrame::ground() {
                    decompose_homography(&fit.homography, k, &fit.reference)
                } else {
                    decompose_plane_homography(&fit.homography, k, &fit.plane, &fit.reference)
                };
                let Ok(init) = init else { continue };
                if init.center.z >= 0.0 {
                    continue;
                }
                let Some(cand) = refine_with_inliers(init, &pts, fit.inliers.clone(), cell.threshold, cfg) else {
                    continue;
                };
                if best.as_ref().is_none_or(|b| cand.2 < b.2) {
                    best = Some(cand);
                }
            }
        }
        best
    };

    let mut best = closed_form.and_then(|k| try_candidates(&[k]));
    let good_enough = cell.threshold.unwrap_or(5.0).min(5.0);
    if best.as_ref().is_none_or(|b| b.2 > good_enough) {
        if let Some(alt) = try_candidates(&guesses) {
            if best.as_ref().is_none_or(|b| alt.2 < b.2) {
                best = Some(alt);
            }
        }
    }
    let (params, inliers, mean_error) = best.ok_or(EstimationError::NonConvergent)?;
    if params.center.z >= 0.0 || params.intrinsics.fx <= 0.0 || params.intrinsics.fy <= 0.0 {
        return Err(EstimationError::NonPhysical("refined camera left the valid region".into()));
    }
    Ok(PoseEstimate {
        params,
        inliers: inliers.iter().map(|&i| pts[i].id).collect(),
        mean_error,
        ground_homography: ground.map(|g| g.homography),
    })
}
