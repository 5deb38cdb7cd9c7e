//! Pitch geometry and the keypoint registry.
//!
//! World frame: origin at the pitch center, `x` along the touchlines (length),
//! `y` along the goal lines (width) and `z` pointing into the ground, so the
//! frame is right-handed and a camera above the pitch has a negative `z`.
//! The ground plane is `z = 0`; goal frames stand at `z = -goal_height`.
//!
//! Keypoint registry (canonical, default options):
//!
//! | set | count | contents                                                         |
//! |-----|-------|------------------------------------------------------------------|
//! | Kp  | 30    | adjacent line-line intersections incl. post bases and crossbars  |
//! | Kpe | 16    | extended intersections of non-adjacent lines around each box     |
//! | Kp1 | 6     | center circle x halfway line, penalty arcs x penalty-box lines    |
//! | Kp2 | 12    | circle tangent contacts from touchline and penalty-box corners    |
//! | Kp3 | 13    | nine central-axis points plus four diagonal center-circle points |
//!
//! Kp1 and Kp2 entries come in ambiguity pairs (`partner`). Enabling
//! `corner_arc_keypoints` appends 16 Kp1 entries from the corner arcs.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type WorldPoint = Point3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid field dimensions: {0}")]
    InvalidDims(String),
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("unknown keypoint `{0}`")]
    UnknownKeypoint(String),
    #[error("sampling spacing must be positive, got {0}")]
    InvalidSpacing(f64),
    #[error("malformed field config: {0}")]
    Config(String),
}

/// Pitch dimensions. All values in one length unit (meters for the default
/// template, yards for the 115x74 template).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldDims {
    pub length: f64,
    pub width: f64,
    pub goal_width: f64,
    pub goal_height: f64,
    pub penalty_area_length: f64,
    pub penalty_area_width: f64,
    pub goal_area_length: f64,
    pub goal_area_width: f64,
    pub center_circle_radius: f64,
    pub penalty_arc_radius: f64,
    pub penalty_spot_distance: f64,
    pub corner_arc_radius: f64,
}

impl Default for FieldDims {
    fn default() -> Self {
        Self::fifa_meters()
    }
}

impl FieldDims {
    /// 105 x 68 m pitch with standard markings.
    pub fn fifa_meters() -> Self {
        Self {
            length: 105.0,
            width: 68.0,
            goal_width: 7.32,
            goal_height: 2.44,
            penalty_area_length: 16.5,
            penalty_area_width: 40.32,
            goal_area_length: 5.5,
            goal_area_width: 18.32,
            center_circle_radius: 9.15,
            penalty_arc_radius: 9.15,
            penalty_spot_distance: 11.0,
            corner_arc_radius: 1.0,
        }
    }

    /// 115 x 74 yd template used by homography benchmarks.
    pub fn template_yards() -> Self {
        Self {
            length: 115.0,
            width: 74.0,
            goal_width: 8.0,
            goal_height: 8.0 / 3.0,
            penalty_area_length: 18.0,
            penalty_area_width: 44.0,
            goal_area_length: 6.0,
            goal_area_width: 20.0,
            center_circle_radius: 10.0,
            penalty_arc_radius: 10.0,
            penalty_spot_distance: 12.0,
            corner_arc_radius: 1.0,
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, FieldError> {
        let dims: FieldDims =
            serde_json::from_slice(bytes).map_err(|e| FieldError::Config(e.to_string()))?;
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let all = [
            ("length", self.length),
            ("width", self.width),
            ("goal_width", self.goal_width),
            ("goal_height", self.goal_height),
            ("penalty_area_length", self.penalty_area_length),
            ("penalty_area_width", self.penalty_area_width),
            ("goal_area_length", self.goal_area_length),
            ("goal_area_width", self.goal_area_width),
            ("center_circle_radius", self.center_circle_radius),
            ("penalty_arc_radius", self.penalty_arc_radius),
            ("penalty_spot_distance", self.penalty_spot_distance),
            ("corner_arc_radius", self.corner_arc_radius),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(FieldError::InvalidDims(format!("{name} must be positive, got {v}")));
            }
        }
        let nested = [
            (self.penalty_area_length > self.goal_area_length, "penalty area length must exceed goal area length"),
            (self.penalty_area_width > self.goal_area_width, "penalty area width must exceed goal area width"),
            (self.goal_area_width > self.goal_width, "goal area width must exceed goal width"),
            (self.penalty_area_width < self.width, "penalty area must fit inside the pitch width"),
            (2.0 * self.penalty_area_length < self.length, "penalty areas must not overlap"),
            (self.center_circle_radius < self.width / 2.0, "center circle radius must be below half the width"),
            (
                self.penalty_spot_distance < self.penalty_area_length
                    && self.penalty_spot_distance + self.penalty_arc_radius > self.penalty_area_length,
                "penalty arc must cross the penalty area line",
            ),
            (
                self.penalty_area_length - self.penalty_spot_distance < self.penalty_arc_radius
                    && self.penalty_arc_radius < self.penalty_area_width / 2.0,
                "penalty arc must stay within the penalty area width",
            ),
        ];
        for (ok, msg) in nested {
            if !ok {
                return Err(FieldError::InvalidDims(msg.to_string()));
            }
        }
        Ok(())
    }
}

/// Side of the pitch along `x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Side {
    Left,
    Right,
}

/// Field markings plus goal frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SegmentId {
    SideLineTop,
    SideLineBottom,
    SideLineLeft,
    SideLineRight,
    MiddleLine,
    BigRectLeftTop,
    BigRectLeftMain,
    BigRectLeftBottom,
    BigRectRightTop,
    BigRectRightMain,
    BigRectRightBottom,
    SmallRectLeftTop,
    SmallRectLeftMain,
    SmallRectLeftBottom,
    SmallRectRightTop,
    SmallRectRightMain,
    SmallRectRightBottom,
    GoalLeftCrossbar,
    GoalLeftPostLeft,
    GoalLeftPostRight,
    GoalRightCrossbar,
    GoalRightPostLeft,
    GoalRightPostRight,
    CircleCentral,
    CircleLeft,
    CircleRight,
    CornerArcTopLeft,
    CornerArcBottomLeft,
    CornerArcTopRight,
    CornerArcBottomRight,
}

impl SegmentId {
    pub const ALL: [SegmentId; 30] = [
        SegmentId::SideLineTop,
        SegmentId::SideLineBottom,
        SegmentId::SideLineLeft,
        SegmentId::SideLineRight,
        SegmentId::MiddleLine,
        SegmentId::BigRectLeftTop,
        SegmentId::BigRectLeftMain,
        SegmentId::BigRectLeftBottom,
        SegmentId::BigRectRightTop,
        SegmentId::BigRectRightMain,
        SegmentId::BigRectRightBottom,
        SegmentId::SmallRectLeftTop,
        SegmentId::SmallRectLeftMain,
        SegmentId::SmallRectLeftBottom,
        SegmentId::SmallRectRightTop,
        SegmentId::SmallRectRightMain,
        SegmentId::SmallRectRightBottom,
        SegmentId::GoalLeftCrossbar,
        SegmentId::GoalLeftPostLeft,
        SegmentId::GoalLeftPostRight,
        SegmentId::GoalRightCrossbar,
        SegmentId::GoalRightPostLeft,
        SegmentId::GoalRightPostRight,
        SegmentId::CircleCentral,
        SegmentId::CircleLeft,
        SegmentId::CircleRight,
        SegmentId::CornerArcTopLeft,
        SegmentId::CornerArcBottomLeft,
        SegmentId::CornerArcTopRight,
        SegmentId::CornerArcBottomRight,
    ];

    pub fn name(self) -> &'static str {
        use SegmentId::*;
        match self {
            SideLineTop => "Side line top",
            SideLineBottom => "Side line bottom",
            SideLineLeft => "Side line left",
            SideLineRight => "Side line right",
            MiddleLine => "Middle line",
            BigRectLeftTop => "Big rect. left top",
            BigRectLeftMain => "Big rect. left main",
            BigRectLeftBottom => "Big rect. left bottom",
            BigRectRightTop => "Big rect. right top",
            BigRectRightMain => "Big rect. right main",
            BigRectRightBottom => "Big rect. right bottom",
            SmallRectLeftTop => "Small rect. left top",
            SmallRectLeftMain => "Small rect. left main",
            SmallRectLeftBottom => "Small rect. left bottom",
            SmallRectRightTop => "Small rect. right top",
            SmallRectRightMain => "Small rect. right main",
            SmallRectRightBottom => "Small rect. right bottom",
            GoalLeftCrossbar => "Goal left crossbar",
            GoalLeftPostLeft => "Goal left post left",
            GoalLeftPostRight => "Goal left post right",
            GoalRightCrossbar => "Goal right crossbar",
            GoalRightPostLeft => "Goal right post left",
            GoalRightPostRight => "Goal right post right",
            CircleCentral => "Circle central",
            CircleLeft => "Circle left",
            CircleRight => "Circle right",
            CornerArcTopLeft => "Corner arc top left",
            CornerArcBottomLeft => "Corner arc bottom left",
            CornerArcTopRight => "Corner arc top right",
            CornerArcBottomRight => "Corner arc bottom right",
        }
    }

    pub fn is_conic(self) -> bool {
        use SegmentId::*;
        matches!(
            self,
            CircleCentral
                | CircleLeft
                | CircleRight
                | CornerArcTopLeft
                | CornerArcBottomLeft
                | CornerArcTopRight
                | CornerArcBottomRight
        )
    }

    pub fn is_corner_arc(self) -> bool {
        use SegmentId::*;
        matches!(self, CornerArcTopLeft | CornerArcBottomLeft | CornerArcTopRight | CornerArcBottomRight)
    }

    /// Goal posts and crossbars.
    pub fn is_goal_frame(self) -> bool {
        use SegmentId::*;
        matches!(
            self,
            GoalLeftCrossbar | GoalLeftPostLeft | GoalLeftPostRight | GoalRightCrossbar | GoalRightPostLeft | GoalRightPostRight
        )
    }

    /// Segments scored by the segment-level calibration metric (the 26
    /// annotated classes; corner arcs are not annotated).
    pub fn is_evaluated(self) -> bool {
        !self.is_corner_arc()
    }

    /// Whether the segment runs along `y = const` (drawn horizontally in a
    /// top view). Conics and posts return `None`.
    pub fn field_orientation(self) -> Option<FieldOrientation> {
        use SegmentId::*;
        match self {
            SideLineTop | SideLineBottom | BigRectLeftTop | BigRectLeftBottom | BigRectRightTop
            | BigRectRightBottom | SmallRectLeftTop | SmallRectLeftBottom | SmallRectRightTop
            | SmallRectRightBottom => Some(FieldOrientation::AlongLength),
            SideLineLeft | SideLineRight | MiddleLine | BigRectLeftMain | BigRectRightMain
            | SmallRectLeftMain | SmallRectRightMain | GoalLeftCrossbar | GoalRightCrossbar => {
                Some(FieldOrientation::AlongWidth)
            }
            _ => None,
        }
    }

    pub fn side(self) -> Option<Side> {
        use SegmentId::*;
        match self {
            SideLineLeft | BigRectLeftTop | BigRectLeftMain | BigRectLeftBottom | SmallRectLeftTop
            | SmallRectLeftMain | SmallRectLeftBottom | GoalLeftCrossbar | GoalLeftPostLeft
            | GoalLeftPostRight | CircleLeft | CornerArcTopLeft | CornerArcBottomLeft => Some(Side::Left),
            SideLineRight | BigRectRightTop | BigRectRightMain | BigRectRightBottom | SmallRectRightTop
            | SmallRectRightMain | SmallRectRightBottom | GoalRightCrossbar | GoalRightPostLeft
            | GoalRightPostRight | CircleRight | CornerArcTopRight | CornerArcBottomRight => Some(Side::Right),
            _ => None,
        }
    }

    /// Label under a half-turn of the pitch about its center,
    /// `(x, y, z) -> (-x, -y, z)`. This is the left/right labeling ambiguity
    /// of a single broadcast view.
    pub fn half_turn(self) -> SegmentId {
        use SegmentId::*;
        match self {
            SideLineTop => SideLineBottom,
            SideLineBottom => SideLineTop,
            SideLineLeft => SideLineRight,
            SideLineRight => SideLineLeft,
            MiddleLine => MiddleLine,
            BigRectLeftTop => BigRectRightBottom,
            BigRectLeftMain => BigRectRightMain,
            BigRectLeftBottom => BigRectRightTop,
            BigRectRightTop => BigRectLeftBottom,
            BigRectRightMain => BigRectLeftMain,
            BigRectRightBottom => BigRectLeftTop,
            SmallRectLeftTop => SmallRectRightBottom,
            SmallRectLeftMain => SmallRectRightMain,
            SmallRectLeftBottom => SmallRectRightTop,
            SmallRectRightTop => SmallRectLeftBottom,
            SmallRectRightMain => SmallRectLeftMain,
            SmallRectRightBottom => SmallRectLeftTop,
            GoalLeftCrossbar => GoalRightCrossbar,
            GoalLeftPostLeft => GoalRightPostLeft,
            GoalLeftPostRight => GoalRightPostRight,
            GoalRightCrossbar => GoalLeftCrossbar,
            GoalRightPostLeft => GoalLeftPostLeft,
            GoalRightPostRight => GoalLeftPostRight,
            CircleCentral => CircleCentral,
            CircleLeft => CircleRight,
            CircleRight => CircleLeft,
            CornerArcTopLeft => CornerArcBottomRight,
            CornerArcBottomRight => CornerArcTopLeft,
            CornerArcBottomLeft => CornerArcTopRight,
            CornerArcTopRight => CornerArcBottomLeft,
        }
    }

    /// Label under the reflection `(x, y, z) -> (-x, y, z)`.
    pub fn mirror_x(self) -> SegmentId {
        use SegmentId::*;
        match self {
            BigRectLeftTop => BigRectRightTop,
            BigRectRightTop => BigRectLeftTop,
            BigRectLeftBottom => BigRectRightBottom,
            BigRectRightBottom => BigRectLeftBottom,
            SmallRectLeftTop => SmallRectRightTop,
            SmallRectRightTop => SmallRectLeftTop,
            SmallRectLeftBottom => SmallRectRightBottom,
            SmallRectRightBottom => SmallRectLeftBottom,
            GoalLeftPostLeft => GoalRightPostRight,
            GoalLeftPostRight => GoalRightPostLeft,
            GoalRightPostLeft => GoalLeftPostRight,
            GoalRightPostRight => GoalLeftPostLeft,
            CornerArcTopLeft => CornerArcTopRight,
            CornerArcTopRight => CornerArcTopLeft,
            CornerArcBottomLeft => CornerArcBottomRight,
            CornerArcBottomRight => CornerArcBottomLeft,
            SideLineTop | SideLineBottom | MiddleLine | CircleCentral => self,
            other => other.half_turn(),
        }
    }
}

impl fmt::Display for SegmentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SegmentId {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim();
        SegmentId::ALL
            .iter()
            .copied()
            .find(|id| id.name().eq_ignore_ascii_case(wanted))
            .ok_or_else(|| FieldError::UnknownSegment(s.to_string()))
    }
}

impl Serialize for SegmentId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for SegmentId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldOrientation {
    /// Constant `y`: touchlines and the long sides of the boxes.
    AlongLength,
    /// Constant `x`: goal lines, halfway line, box fronts, crossbars.
    AlongWidth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KeypointSet {
    Kp,
    Kpe,
    Kp1,
    Kp2,
    Kp3,
}

impl KeypointSet {
    pub const ALL: [KeypointSet; 5] =
        [KeypointSet::Kp, KeypointSet::Kpe, KeypointSet::Kp1, KeypointSet::Kp2, KeypointSet::Kp3];

    pub fn tag(self) -> &'static str {
        match self {
            KeypointSet::Kp => "Kp",
            KeypointSet::Kpe => "Kpe",
            KeypointSet::Kp1 => "Kp1",
            KeypointSet::Kp2 => "Kp2",
            KeypointSet::Kp3 => "Kp3",
        }
    }
}

/// Identifier of a registry keypoint, serialized as `"<set>:<index>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeypointId {
    pub set: KeypointSet,
    pub index: u16,
}

impl KeypointId {
    pub const fn new(set: KeypointSet, index: u16) -> Self {
        Self { set, index }
    }
}

impl fmt::Display for KeypointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.set.tag(), self.index)
    }
}

impl FromStr for KeypointId {
    type Err = FieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FieldError::UnknownKeypoint(s.to_string());
        let (tag, idx) = s.trim().split_once(':').ok_or_else(bad)?;
        let set = KeypointSet::ALL.iter().copied().find(|k| k.tag() == tag).ok_or_else(bad)?;
        let index = idx.parse().map_err(|_| bad())?;
        Ok(Self { set, index })
    }
}

impl Serialize for KeypointId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KeypointId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How a registry keypoint is derived from the field markings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeypointOrigin {
    /// Intersection of two straight segments (Kp, Kpe).
    LineLine(SegmentId, SegmentId),
    /// Intersection of a straight segment with a conic (Kp1).
    LineConic(SegmentId, SegmentId),
    /// Tangent contact on a conic seen from an external keypoint (Kp2).
    Tangent { external: KeypointId, conic: SegmentId },
    /// Grid completion point (Kp3).
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointDef {
    pub id: KeypointId,
    pub point: WorldPoint,
    pub origin: KeypointOrigin,
    /// Other member of a Kp1/Kp2 candidate pair.
    pub partner: Option<KeypointId>,
}

impl KeypointDef {
    pub fn is_ground(&self) -> bool {
        self.point.z == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentGeometry {
    Line { start: WorldPoint, end: WorldPoint },
    /// Arc on the ground plane, counter-clockwise in `(x, y)` from `start`
    /// to `end` (radians).
    Arc { center: WorldPoint, radius: f64, start: f64, end: f64 },
}

impl SegmentGeometry {
    pub fn length(&self) -> f64 {
        match *self {
            SegmentGeometry::Line { start, end } => (end - start).norm(),
            SegmentGeometry::Arc { radius, start, end, .. } => radius * (end - start),
        }
    }

    pub fn is_full_circle(&self) -> bool {
        matches!(*self, SegmentGeometry::Arc { start, end, .. } if (end - start - 2.0 * PI).abs() < 1e-12)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModelOptions {
    /// Add Kp1 pairs from the corner arcs. Off by default: the arcs are too
    /// small in most views to fit an ellipse reliably.
    pub corner_arc_keypoints: bool,
}

/// Immutable pitch model: dimensions, segment geometry and keypoint registry.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    dims: FieldDims,
    segments: BTreeMap<SegmentId, SegmentGeometry>,
    registry: BTreeMap<KeypointId, KeypointDef>,
}

impl Default for FieldModel {
    fn default() -> Self {
        FieldModel::new(FieldDims::default()).expect("default dims are valid")
    }
}

impl FieldModel {
    pub fn new(dims: FieldDims) -> Result<Self, FieldError> {
        Self::with_options(dims, ModelOptions::default())
    }

    pub fn with_options(dims: FieldDims, options: ModelOptions) -> Result<Self, FieldError> {
        dims.validate()?;
        let segments = build_segments(&dims);
        let registry = build_registry(&dims, options);
        Ok(Self { dims, segments, registry })
    }

    pub fn dims(&self) -> &FieldDims {
        &self.dims
    }

    pub fn segment(&self, id: SegmentId) -> Result<&SegmentGeometry, FieldError> {
        self.segments.get(&id).ok_or_else(|| FieldError::UnknownSegment(id.name().to_string()))
    }

    pub fn segments(&self) -> impl Iterator<Item = (SegmentId, &SegmentGeometry)> {
        self.segments.iter().map(|(k, v)| (*k, v))
    }

    pub fn keypoint(&self, id: KeypointId) -> Result<WorldPoint, FieldError> {
        self.keypoint_def(id).map(|d| d.point)
    }

    pub fn keypoint_def(&self, id: KeypointId) -> Result<&KeypointDef, FieldError> {
        self.registry.get(&id).ok_or_else(|| FieldError::UnknownKeypoint(id.to_string()))
    }

    pub fn keypoints(&self) -> impl Iterator<Item = &KeypointDef> {
        self.registry.values()
    }

    pub fn keypoints_in(&self, set: KeypointSet) -> impl Iterator<Item = &KeypointDef> {
        self.registry.values().filter(move |d| d.id.set == set)
    }

    pub fn partner(&self, id: KeypointId) -> Option<KeypointId> {
        self.registry.get(&id).and_then(|d| d.partner)
    }

    /// Registry id whose world point is the image of `id` under `map`.
    fn find_image(&self, id: KeypointId, map: impl Fn(&WorldPoint) -> WorldPoint) -> Option<KeypointId> {
        let p = map(&self.registry.get(&id)?.point);
        self.registry
            .values()
            .find(|d| d.id.set == id.set && (d.point - p).norm() < 1e-9)
            .map(|d| d.id)
    }

    /// Partner under the reflection `(x, y, z) -> (-x, y, z)`.
    pub fn mirror_x(&self, id: KeypointId) -> Option<KeypointId> {
        self.find_image(id, |p| WorldPoint::new(-p.x, p.y, p.z))
    }

    /// Partner under the half-turn `(x, y, z) -> (-x, -y, z)`.
    pub fn half_turn(&self, id: KeypointId) -> Option<KeypointId> {
        self.find_image(id, |p| WorldPoint::new(-p.x, -p.y, p.z))
    }

    /// Plane `x = const` through one goal line; contains posts and crossbar.
    pub fn goal_line_x(&self, side: Side) -> f64 {
        match side {
            Side::Left => -self.dims.length / 2.0,
            Side::Right => self.dims.length / 2.0,
        }
    }

    /// Samples a segment so that consecutive samples are at most `spacing`
    /// apart, endpoints included. Full circles repeat the first sample at the
    /// end so the polyline closes.
    pub fn sample_segment_polyline(&self, id: SegmentId, spacing: f64) -> Result<Vec<WorldPoint>, FieldError> {
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(FieldError::InvalidSpacing(spacing));
        }
        let geom = self.segment(id)?;
        let n = ((geom.length() / spacing).ceil() as usize).max(1);
        let pts = match *geom {
            SegmentGeometry::Line { start, end } => (0..=n)
                .map(|i| {
                    let s = i as f64 / n as f64;
                    start + (end - start) * s
                })
                .collect(),
            SegmentGeometry::Arc { center, radius, start, end } => (0..=n)
                .map(|i| {
                    let th = start + (end - start) * (i as f64 / n as f64);
                    WorldPoint::new(center.x + radius * th.cos(), center.y + radius * th.sin(), center.z)
                })
                .collect(),
        };
        Ok(pts)
    }
}

fn p3(x: f64, y: f64, z: f64) -> WorldPoint {
    WorldPoint::new(x, y, z)
}

fn build_segments(d: &FieldDims) -> BTreeMap<SegmentId, SegmentGeometry> {
    use SegmentId::*;
    let hl = d.length / 2.0;
    let hw = d.width / 2.0;
    let paw = d.penalty_area_width / 2.0;
    let gaw = d.goal_area_width / 2.0;
    let gw = d.goal_width / 2.0;
    let gz = -d.goal_height;
    let line = |a: WorldPoint, b: WorldPoint| SegmentGeometry::Line { start: a, end: b };
    let mut m = BTreeMap::new();
    m.insert(SideLineTop, line(p3(-hl, -hw, 0.0), p3(hl, -hw, 0.0)));
    m.insert(SideLineBottom, line(p3(-hl, hw, 0.0), p3(hl, hw, 0.0)));
    m.insert(SideLineLeft, line(p3(-hl, -hw, 0.0), p3(-hl, hw, 0.0)));
    m.insert(SideLineRight, line(p3(hl, -hw, 0.0), p3(hl, hw, 0.0)));
    m.insert(MiddleLine, line(p3(0.0, -hw, 0.0), p3(0.0, hw, 0.0)));

    for (sx, top, main, bottom, s_top, s_main, s_bottom) in [
        (-1.0, BigRectLeftTop, BigRectLeftMain, BigRectLeftBottom, SmallRectLeftTop, SmallRectLeftMain, SmallRectLeftBottom),
        (1.0, BigRectRightTop, BigRectRightMain, BigRectRightBottom, SmallRectRightTop, SmallRectRightMain, SmallRectRightBottom),
    ] {
        let gx = sx * hl;
        let bx = sx * (hl - d.penalty_area_length);
        let sxl = sx * (hl - d.goal_area_length);
        m.insert(top, line(p3(gx, -paw, 0.0), p3(bx, -paw, 0.0)));
        m.insert(main, line(p3(bx, -paw, 0.0), p3(bx, paw, 0.0)));
        m.insert(bottom, line(p3(gx, paw, 0.0), p3(bx, paw, 0.0)));
        m.insert(s_top, line(p3(gx, -gaw, 0.0), p3(sxl, -gaw, 0.0)));
        m.insert(s_main, line(p3(sxl, -gaw, 0.0), p3(sxl, gaw, 0.0)));
        m.insert(s_bottom, line(p3(gx, gaw, 0.0), p3(sxl, gaw, 0.0)));
    }

    // Left goal posts named from the attacker's view: facing -x, left is +y.
    m.insert(GoalLeftPostLeft, line(p3(-hl, gw, 0.0), p3(-hl, gw, gz)));
    m.insert(GoalLeftPostRight, line(p3(-hl, -gw, 0.0), p3(-hl, -gw, gz)));
    m.insert(GoalLeftCrossbar, line(p3(-hl, -gw, gz), p3(-hl, gw, gz)));
    m.insert(GoalRightPostLeft, line(p3(hl, -gw, 0.0), p3(hl, -gw, gz)));
    m.insert(GoalRightPostRight, line(p3(hl, gw, 0.0), p3(hl, gw, gz)));
    m.insert(GoalRightCrossbar, line(p3(hl, -gw, gz), p3(hl, gw, gz)));

    m.insert(
        CircleCentral,
        SegmentGeometry::Arc { center: p3(0.0, 0.0, 0.0), radius: d.center_circle_radius, start: 0.0, end: 2.0 * PI },
    );
    let half_arc = ((d.penalty_area_length - d.penalty_spot_distance) / d.penalty_arc_radius).acos();
    m.insert(
        CircleLeft,
        SegmentGeometry::Arc {
            center: p3(-hl + d.penalty_spot_distance, 0.0, 0.0),
            radius: d.penalty_arc_radius,
            start: -half_arc,
            end: half_arc,
        },
    );
    m.insert(
        CircleRight,
        SegmentGeometry::Arc {
            center: p3(hl - d.penalty_spot_distance, 0.0, 0.0),
            radius: d.penalty_arc_radius,
            start: PI - half_arc,
            end: PI + half_arc,
        },
    );
    let r = d.corner_arc_radius;
    for (id, cx, cy, start) in [
        (CornerArcTopLeft, -hl, -hw, 0.0),
        (CornerArcBottomLeft, -hl, hw, -FRAC_PI_2),
        (CornerArcTopRight, hl, -hw, FRAC_PI_2),
        (CornerArcBottomRight, hl, hw, PI),
    ] {
        m.insert(id, SegmentGeometry::Arc { center: p3(cx, cy, 0.0), radius: r, start, end: start + FRAC_PI_2 });
    }
    m
}

/// Tangent contacts on the circle `(center, r)` from an external ground
/// point, ordered `base + offset` then `base - offset`.
fn circle_tangent_contacts(center: WorldPoint, r: f64, external: WorldPoint) -> [WorldPoint; 2] {
    let v = Vector3::new(external.x - center.x, external.y - center.y, 0.0);
    let d2 = v.norm_squared();
    let base = center + v * (r * r / d2);
    let perp = Vector3::new(-v.y, v.x, 0.0) * (r * (d2 - r * r).sqrt() / d2);
    [base + perp, base - perp]
}

fn build_registry(d: &FieldDims, options: ModelOptions) -> BTreeMap<KeypointId, KeypointDef> {
    use KeypointSet::*;
    use SegmentId::*;
    let hl = d.length / 2.0;
    let hw = d.width / 2.0;
    let paw = d.penalty_area_width / 2.0;
    let gaw = d.goal_area_width / 2.0;
    let gw = d.goal_width / 2.0;
    let gz = -d.goal_height;
    let pa = d.penalty_area_length;
    let ga = d.goal_area_length;

    let mut reg = BTreeMap::new();
    fn push(
        reg: &mut BTreeMap<KeypointId, KeypointDef>,
        set: KeypointSet,
        index: u16,
        point: WorldPoint,
        origin: KeypointOrigin,
        partner: Option<u16>,
    ) {
        let id = KeypointId::new(set, index);
        reg.insert(id, KeypointDef { id, point, origin, partner: partner.map(|p| KeypointId::new(set, p)) });
    }
    let ll = KeypointOrigin::LineLine;

    // Kp: 14 per side, then the two halfway-line ends.
    struct SideLines {
        goal_line: SegmentId,
        big_top: SegmentId,
        big_main: SegmentId,
        big_bottom: SegmentId,
        small_top: SegmentId,
        small_main: SegmentId,
        small_bottom: SegmentId,
        post_neg: SegmentId,
        post_pos: SegmentId,
        crossbar: SegmentId,
        conic: SegmentId,
    }
    let left = SideLines {
        goal_line: SideLineLeft,
        big_top: BigRectLeftTop,
        big_main: BigRectLeftMain,
        big_bottom: BigRectLeftBottom,
        small_top: SmallRectLeftTop,
        small_main: SmallRectLeftMain,
        small_bottom: SmallRectLeftBottom,
        post_neg: GoalLeftPostRight,
        post_pos: GoalLeftPostLeft,
        crossbar: GoalLeftCrossbar,
        conic: CircleLeft,
    };
    let right = SideLines {
        goal_line: SideLineRight,
        big_top: BigRectRightTop,
        big_main: BigRectRightMain,
        big_bottom: BigRectRightBottom,
        small_top: SmallRectRightTop,
        small_main: SmallRectRightMain,
        small_bottom: SmallRectRightBottom,
        post_neg: GoalRightPostLeft,
        post_pos: GoalRightPostRight,
        crossbar: GoalRightCrossbar,
        conic: CircleRight,
    };

    for (offset, sx, s) in [(0u16, -1.0, &left), (16u16, 1.0, &right)] {
        let gx = sx * hl;
        let bx = sx * (hl - pa);
        let smx = sx * (hl - ga);
        let kp = [
            (p3(gx, -hw, 0.0), SideLineTop, s.goal_line),
            (p3(gx, hw, 0.0), SideLineBottom, s.goal_line),
            (p3(gx, -paw, 0.0), s.big_top, s.goal_line),
            (p3(bx, -paw, 0.0), s.big_top, s.big_main),
            (p3(bx, paw, 0.0), s.big_bottom, s.big_main),
            (p3(gx, paw, 0.0), s.big_bottom, s.goal_line),
            (p3(gx, -gaw, 0.0), s.small_top, s.goal_line),
            (p3(smx, -gaw, 0.0), s.small_top, s.small_main),
            (p3(smx, gaw, 0.0), s.small_bottom, s.small_main),
            (p3(gx, gaw, 0.0), s.small_bottom, s.goal_line),
            (p3(gx, -gw, 0.0), s.post_neg, s.goal_line),
            (p3(gx, gw, 0.0), s.post_pos, s.goal_line),
            (p3(gx, -gw, gz), s.crossbar, s.post_neg),
            (p3(gx, gw, gz), s.crossbar, s.post_pos),
        ];
        for (i, (pt, a, b)) in kp.into_iter().enumerate() {
            push(&mut reg, Kp, offset + i as u16, pt, ll(a, b), None);
        }
    }
    push(&mut reg, Kp, 14, p3(0.0, -hw, 0.0), ll(MiddleLine, SideLineTop), None);
    push(&mut reg, Kp, 15, p3(0.0, hw, 0.0), ll(MiddleLine, SideLineBottom), None);

    // Kpe: 8 per side.
    for (offset, sx, s) in [(0u16, -1.0, &left), (8u16, 1.0, &right)] {
        let bx = sx * (hl - pa);
        let smx = sx * (hl - ga);
        let kpe = [
            (p3(bx, -hw, 0.0), s.big_main, SideLineTop),
            (p3(bx, hw, 0.0), s.big_main, SideLineBottom),
            (p3(smx, -hw, 0.0), s.small_main, SideLineTop),
            (p3(smx, hw, 0.0), s.small_main, SideLineBottom),
            (p3(smx, -paw, 0.0), s.small_main, s.big_top),
            (p3(smx, paw, 0.0), s.small_main, s.big_bottom),
            (p3(bx, -gaw, 0.0), s.small_top, s.big_main),
            (p3(bx, gaw, 0.0), s.small_bottom, s.big_main),
        ];
        for (i, (pt, a, b)) in kpe.into_iter().enumerate() {
            push(&mut reg, Kpe, offset + i as u16, pt, ll(a, b), None);
        }
    }

    // Kp1: line-conic pairs.
    let r = d.center_circle_radius;
    push(&mut reg, Kp1, 0, p3(0.0, -r, 0.0), KeypointOrigin::LineConic(MiddleLine, CircleCentral), Some(1));
    push(&mut reg, Kp1, 1, p3(0.0, r, 0.0), KeypointOrigin::LineConic(MiddleLine, CircleCentral), Some(0));
    let arc_y = (d.penalty_arc_radius.powi(2) - (pa - d.penalty_spot_distance).powi(2)).sqrt();
    for (offset, sx, s) in [(2u16, -1.0, &left), (4u16, 1.0, &right)] {
        let bx = sx * (hl - pa);
        let origin = KeypointOrigin::LineConic(s.big_main, s.conic);
        push(&mut reg, Kp1, offset, p3(bx, -arc_y, 0.0), origin, Some(offset + 1));
        push(&mut reg, Kp1, offset + 1, p3(bx, arc_y, 0.0), origin, Some(offset));
    }
    if options.corner_arc_keypoints {
        let cr = d.corner_arc_radius;
        let mut idx = 6u16;
        for (arc, cx, cy, touch, goal) in [
            (CornerArcTopLeft, -hl, -hw, SideLineTop, SideLineLeft),
            (CornerArcBottomLeft, -hl, hw, SideLineBottom, SideLineLeft),
            (CornerArcTopRight, hl, -hw, SideLineTop, SideLineRight),
            (CornerArcBottomRight, hl, hw, SideLineBottom, SideLineRight),
        ] {
            for (line, pts) in [
                (touch, [p3(cx - cr, cy, 0.0), p3(cx + cr, cy, 0.0)]),
                (goal, [p3(cx, cy - cr, 0.0), p3(cx, cy + cr, 0.0)]),
            ] {
                let origin = KeypointOrigin::LineConic(line, arc);
                push(&mut reg, Kp1, idx, pts[0], origin, Some(idx + 1));
                push(&mut reg, Kp1, idx + 1, pts[1], origin, Some(idx));
                idx += 2;
            }
        }
    }

    // Kp2: tangent contacts.
    let center = p3(0.0, 0.0, 0.0);
    let mut idx = 0u16;
    for ext in [14u16, 15] {
        let ext_id = KeypointId::new(Kp, ext);
        let ext_pt = reg[&ext_id].point;
        for (j, c) in circle_tangent_contacts(center, r, ext_pt).into_iter().enumerate() {
            let partner = if j == 0 { idx + 1 } else { idx - 1 };
            push(&mut reg, Kp2, idx, c, KeypointOrigin::Tangent { external: ext_id, conic: CircleCentral }, Some(partner));
            idx += 1;
        }
    }
    for (sx, s, exts) in [(-1.0, &left, [3u16, 4]), (1.0, &right, [19u16, 20])] {
        let spot = p3(sx * (hl - d.penalty_spot_distance), 0.0, 0.0);
        for ext in exts {
            let ext_id = KeypointId::new(Kp, ext);
            let ext_pt = reg[&ext_id].point;
            for (j, c) in circle_tangent_contacts(spot, d.penalty_arc_radius, ext_pt).into_iter().enumerate() {
                let partner = if j == 0 { idx + 1 } else { idx - 1 };
                push(&mut reg, Kp2, idx, c, KeypointOrigin::Tangent { external: ext_id, conic: s.conic }, Some(partner));
                idx += 1;
            }
        }
    }

    // Kp3: central axis, then diagonal center-circle points.
    let spot = hl - d.penalty_spot_distance;
    let axis = [-hl, -(hl - ga), -spot, -(hl - pa), 0.0, hl - pa, spot, hl - ga, hl];
    for (i, x) in axis.into_iter().enumerate() {
        push(&mut reg, Kp3, i as u16, p3(x, 0.0, 0.0), KeypointOrigin::Grid, None);
    }
    let q = r / 2f64.sqrt();
    for (i, (x, y)) in [(-q, -q), (q, -q), (q, q), (-q, q)].into_iter().enumerate() {
        push(&mut reg, Kp3, 9 + i as u16, p3(x, y, 0.0), KeypointOrigin::Grid, None);
    }
    reg
}
