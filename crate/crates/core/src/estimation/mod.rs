//! Initial calibration: homographies, intrinsics, pose and subset voting.

mod calibrate;
mod decompose;
mod homography;
mod intrinsics;
mod vote;

use nalgebra::{Matrix3, Point3};
use thiserror::Error;

use crate::camera::Pixel;
use crate::field_model::{FieldModel, KeypointId, Side, WorldPoint};

pub use calibrate::{calibrate_pose, select_subset, CalibrationConfig, CellSpec, PoseEstimate, Subset};
pub use decompose::{
    decompose_homography, decompose_plane_homography, homography_from_projection, plane_homography,
};
pub use homography::{
    dlt_homography, has_collinear_triple, ransac_homography, refine_homography_lm, transfer_cost, transfer_error,
    RansacResult, RefinedHomography,
};
pub use intrinsics::estimate_intrinsics;
pub use vote::{default_cells, heuristic_vote, vote_score, CalibrationStatus, CellOutcome, VoteConfig, VoteResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("no consensus model with at least 4 inliers")]
    NoConsensus,
    #[error("intrinsics unsolvable: {0}")]
    UnsolvableIntrinsics(String),
    #[error("non-physical decomposition: {0}")]
    NonPhysical(String),
    #[error("refinement did not converge")]
    NonConvergent,
}

/// 2D-3D keypoint correspondence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub id: KeypointId,
    pub world: WorldPoint,
    pub image: Pixel,
    /// Line-line intersection from the annotated segments, either detected
    /// directly or recomputed from fitted lines.
    pub main: bool,
}

impl Correspondence {
    pub fn is_ground(&self) -> bool {
        self.world.z == 0.0
    }
}

/// World plane with origin `o` and rotation `basis = [m1 m2 n]`; plane
/// coordinates `(u, v)` map to `o + u m1 + v m2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFrame {
    pub origin: WorldPoint,
    pub basis: Matrix3<f64>,
}

impl PlaneFrame {
    pub fn ground() -> Self {
        Self { origin: Point3::origin(), basis: Matrix3::identity() }
    }

    /// Vertical plane through a goal line, coordinates `(y, z)`.
    pub fn goal(model: &FieldModel, side: Side) -> Self {
        // Columns e_y, e_z, e_x: a proper rotation.
        let basis = Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        Self { origin: Point3::new(model.goal_line_x(side), 0.0, 0.0), basis }
    }

    /// Plane coordinates of a world point (its offset from the plane is
    /// dropped).
    pub fn to_plane(&self, p: &WorldPoint) -> Pixel {
        let local = self.basis.transpose() * (p - self.origin);
        Pixel::new(local.x, local.y)
    }

    pub fn contains(&self, p: &WorldPoint) -> bool {
        let local = self.basis.transpose() * (p - self.origin);
        local.z.abs() < 1e-9
    }
}
