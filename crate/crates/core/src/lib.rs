//! Broadcast soccer camera calibration from field keypoints and lines.
pub mod camera;
pub mod detect_io;
pub mod estimation;
pub mod field_model;
pub mod keypoint_engine;
pub mod lm;
pub mod metrics;
pub mod pnl_refine;
pub mod synth;
pub mod pipeline;
