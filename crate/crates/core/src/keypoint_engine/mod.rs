//! Hierarchical keypoint generation from detections.
//!
//! Detected keypoints come first. Missing Kp/Kpe points are recovered from
//! fitted lines, Kp1/Kp2 candidate pairs from fitted ellipses, and the pairs
//! are disambiguated with intermediate homographies before the grid is
//! completed.

mod conic;
mod flip;
mod lines;
mod resolve;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Homography, Pixel};
use crate::detect_io::DetectionFrame;
use crate::estimation::Correspondence;
use crate::field_model::{FieldModel, KeypointId, KeypointSet};

pub use conic::{ellipse_tangent_points, fit_ellipse, fit_line, line_ellipse_intersections, Ellipse2D, Line2D};
pub use flip::{left_right_flip_check, relabel_half_turn, FlipDecision};
pub use lines::{fitted_lines, line_line_intersections};
pub use resolve::{complete_grid, conic_candidates, orientation_consistent, resolve_ambiguities, Resolution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KeypointError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate fit: {0}")]
    Degenerate(String),
    #[error("external point is inside or on the ellipse")]
    InteriorPoint,
    #[error("no feasible keypoint assignment")]
    Unresolvable,
}

/// How a keypoint position was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Detected,
    LineIntersection,
    LineEllipse,
    Tangent,
    /// Projected through the final homography.
    GridCompletion,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolvedKeypoint {
    pub id: KeypointId,
    pub pixel: [f64; 2],
    pub provenance: Provenance,
}

impl ResolvedKeypoint {
    pub fn new(id: KeypointId, pixel: Pixel, provenance: Provenance) -> Self {
        Self { id, pixel: [pixel.x, pixel.y], provenance }
    }

    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.pixel[0], self.pixel[1])
    }
}

/// Two image points known to be the images of two partner keypoints, in an
/// unknown order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub ids: [KeypointId; 2],
    pub pixels: [[f64; 2]; 2],
    pub provenance: Provenance,
}

impl CandidatePair {
    pub fn pixel(&self, i: usize) -> Pixel {
        Pixel::new(self.pixels[i][0], self.pixels[i][1])
    }

    pub fn set(&self) -> KeypointSet {
        self.ids[0].set
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KeypointBundle {
    pub resolved: BTreeMap<KeypointId, ResolvedKeypoint>,
    pub candidate_pairs: Vec<CandidatePair>,
}

impl KeypointBundle {
    pub fn insert(&mut self, id: KeypointId, pixel: Pixel, provenance: Provenance) -> bool {
        if self.resolved.contains_key(&id) || self.candidate_pairs.iter().any(|p| p.ids.contains(&id)) {
            return false;
        }
        self.resolved.insert(id, ResolvedKeypoint::new(id, pixel, provenance));
        true
    }

    pub fn contains(&self, id: KeypointId) -> bool {
        self.resolved.contains_key(&id)
    }

    /// Correspondences for calibration, in registry order.
    pub fn correspondences(&self, model: &FieldModel) -> Vec<Correspondence> {
        self.resolved
            .values()
            .filter_map(|r| {
                let world = model.keypoint(r.id).ok()?;
                let main = r.id.set == KeypointSet::Kp
                    && matches!(r.provenance, Provenance::Detected | Provenance::LineIntersection);
                Some(Correspondence { id: r.id, world, image: r.pixel(), main })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Maximum reprojection error (px) for a derived keypoint to be kept.
    pub validation_threshold: f64,
    /// Line pairs meeting at a smaller angle (degrees) are not intersected.
    pub min_intersection_angle_deg: f64,
    /// Intersections may lie this fraction of the image size outside it.
    pub extension: f64,
    /// Minimum number of points to fit an ellipse.
    pub min_conic_points: usize,
    /// Angle margin (degrees) for the left/right flip decision.
    pub flip_angle_deg: f64,
    /// Upper bound on pairs enumerated by the grid search.
    pub max_grid_pairs: usize,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            validation_threshold: 10.0,
            min_intersection_angle_deg: 0.5,
            extension: 0.5,
            min_conic_points: 5,
            flip_angle_deg: 20.0,
            max_grid_pairs: 12,
            seed: 0,
        }
    }
}

/// Output of the whole keypoint stage for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOutput {
    pub bundle: KeypointBundle,
    pub homography: Option<Homography>,
    pub h1: Option<Homography>,
    pub h2: Option<Homography>,
    pub unresolved: bool,
}

/// Detected points, line intersections, conic candidates, disambiguation
/// and grid completion.
pub fn generate_keypoints(frame: &DetectionFrame, model: &FieldModel, cfg: &EngineConfig) -> EngineOutput {
    let mut bundle = KeypointBundle::default();
    for k in &frame.keypoints {
        if model.keypoint(k.id).is_ok() {
            bundle.insert(k.id, k.pixel, Provenance::Detected);
        }
    }
    let lines = fitted_lines(frame);
    let from_lines = line_line_intersections(&lines, model, frame.width, frame.height, cfg);
    for r in from_lines.resolved.values() {
        bundle.insert(r.id, r.pixel(), r.provenance);
    }
    let pairs = conic_candidates(frame, &lines, &bundle, model, cfg);
    for p in pairs {
        bundle.candidate_pairs.push(p);
    }
    match resolve_ambiguities(&bundle, model, cfg) {
        Ok(res) => {
            let completed = match res.h2 {
                Some(h2) => complete_grid(&res.bundle, &h2, model, frame.width, frame.height),
                None => res.bundle,
            };
            EngineOutput { bundle: completed, homography: res.h, h1: res.h1, h2: res.h2, unresolved: false }
        }
        Err(_) => {
            let mut plain = bundle;
            plain.candidate_pairs.clear();
            EngineOutput { bundle: plain, homography: None, h1: None, h2: None, unresolved: true }
        }
    }
}
