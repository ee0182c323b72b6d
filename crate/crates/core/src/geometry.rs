//! Points, oriented boxes and frames in the ego coordinate system.
//!
//! Coordinates are meters in the ego frame with x forward, y left and z up.
//! Inclination is measured from the xy-plane (positive up) and azimuth is
//! measured counter-clockwise from +x.

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate ray: point at the sensor origin has no direction")]
    DegenerateRay,
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("duplicate box uid {0} in frame")]
    DuplicateBoxUid(u64),
    #[error("invalid frame id {0:?}: must be non-empty and contain no whitespace")]
    InvalidFrameId(String),
    #[error("point {index} has ray index ({row}, {col}) outside the {rows}x{cols} image")]
    RayOutOfBounds {
        index: usize,
        row: u32,
        col: u32,
        rows: u32,
        cols: u32,
    },
    #[error("point {0} carries a ray index but the frame has no range-image shape")]
    RayWithoutShape(usize),
    #[error("point {0} has a non-finite coordinate or feature")]
    NonFinitePoint(usize),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
}

/// Object category of a labeled box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassId {
    Vehicle,
    Pedestrian,
    Cyclist,
    Sign,
}

impl ClassId {
    pub const ALL: [ClassId; 4] = [
        ClassId::Vehicle,
        ClassId::Pedestrian,
        ClassId::Cyclist,
        ClassId::Sign,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassId::Vehicle => "VEHICLE",
            ClassId::Pedestrian => "PEDESTRIAN",
            ClassId::Cyclist => "CYCLIST",
            ClassId::Sign => "SIGN",
        }
    }

    pub fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassId {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClassId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| GeometryError::UnknownClass(s.to_string()))
    }
}

/// `(row, col)` cell of the range image a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RayIndex {
    pub row: u32,
    pub col: u32,
}

impl RayIndex {
    pub fn new(row: u32, col: u32) -> Self {
        Self { row, col }
    }
}

/// A single lidar return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Reflectance in `[0, 1]`.
    pub intensity: f64,
    /// Pulse elongation in `[0, 1]`.
    pub elongation: f64,
    /// Range-image cell this point came from or was assigned to.
    pub ray: Option<RayIndex>,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            intensity: 0.0,
            elongation: 0.0,
            ray: None,
        }
    }

    pub fn with_features(mut self, intensity: f64, elongation: f64) -> Self {
        self.intensity = intensity;
        self.elongation = elongation;
        self
    }

    pub fn with_ray(mut self, row: u32, col: u32) -> Self {
        self.ray = Some(RayIndex::new(row, col));
        self
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn set_position(&mut self, [x, y, z]: [f64; 3]) {
        self.x = x;
        self.y = y;
        self.z = z;
    }

    /// Euclidean distance to the ego origin.
    pub fn range(&self) -> f64 {
        norm(self.position())
    }

    fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.intensity, self.elongation]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Bitwise equality on every field, distinguishing `-0.0` from `0.0`.
    pub fn bit_identical(&self, other: &Point) -> bool {
        self.x.to_bits() == other.x.to_bits()
            && self.y.to_bits() == other.y.to_bits()
            && self.z.to_bits() == other.z.to_bits()
            && self.intensity.to_bits() == other.intensity.to_bits()
            && self.elongation.to_bits() == other.elongation.to_bits()
            && self.ray == other.ray
    }
}

pub(crate) fn norm([x, y, z]: [f64; 3]) -> f64 {
    (x * x + y * y + z * z).sqrt()
}

/// Range, inclination and azimuth of a point as seen from the ego origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spherical {
    pub range: f64,
    /// Elevation above the xy-plane, in `[-pi/2, pi/2]`.
    pub inclination: f64,
    /// Counter-clockwise angle from +x, in `(-pi, pi]`.
    pub azimuth: f64,
}

impl Spherical {
    pub fn to_cartesian(&self) -> [f64; 3] {
        let (sin_t, cos_t) = self.inclination.sin_cos();
        let (sin_p, cos_p) = self.azimuth.sin_cos();
        [
            self.range * cos_t * cos_p,
            self.range * cos_t * sin_p,
            self.range * sin_t,
        ]
    }
}

pub fn spherical_coords(pt: &Point) -> Result<Spherical, GeometryError> {
    spherical_from_position(pt.position())
}

pub(crate) fn spherical_from_position([x, y, z]: [f64; 3]) -> Result<Spherical, GeometryError> {
    let range = norm([x, y, z]);
    if range <= 0.0 || !range.is_finite() {
        return Err(GeometryError::DegenerateRay);
    }
    // atan2 keeps the inclination well conditioned near the poles, where
    // asin(z / r) loses half the mantissa.
    let inclination = z.atan2(x.hypot(y));
    let mut azimuth = y.atan2(x);
    if azimuth == -PI {
        azimuth = PI;
    }
    Ok(Spherical {
        range,
        inclination,
        azimuth,
    })
}

/// Maps an angle into `(-pi, pi]`. Angles already in range are returned as-is.
pub fn normalize_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Smallest absolute angular difference between two angles, in `[0, pi]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

/// A 7-DOF labeled box: center, size and heading about +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub cx: f64,
    pub cy: f64,
    pub cz: f64,
    /// Extent along the heading direction.
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Yaw in `(-pi, pi]`.
    pub heading: f64,
    pub class: ClassId,
    pub uid: u64,
}

impl Box3D {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        center: [f64; 3],
        length: f64,
        width: f64,
        height: f64,
        heading: f64,
        class: ClassId,
        uid: u64,
    ) -> Result<Self, GeometryError> {
        let b = Self {
            cx: center[0],
            cy: center[1],
            cz: center[2],
            length,
            width,
            height,
            heading: normalize_angle(heading),
            class,
            uid,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(GeometryError::InvalidBox(format!(
                "box {} has non-positive size {}x{}x{}",
                self.uid, self.length, self.width, self.height
            )));
        }
        let all_finite = [
            self.cx,
            self.cy,
            self.cz,
            self.length,
            self.width,
            self.height,
            self.heading,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(GeometryError::InvalidBox(format!(
                "box {} has a non-finite field",
                self.uid
            )));
        }
        if !(self.heading > -PI && self.heading <= PI) {
            return Err(GeometryError::InvalidBox(format!(
                "box {} heading {} outside (-pi, pi]",
                self.uid, self.heading
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; 3] {
        [self.cx, self.cy, self.cz]
    }

    pub fn half_extents(&self) -> [f64; 3] {
        [self.length / 2.0, self.width / 2.0, self.height / 2.0]
    }

    /// Expresses a world position in the box's heading-aligned frame.
    pub fn to_local(&self, [x, y, z]: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.heading.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        [c * dx + s * dy, -s * dx + c * dy, z - self.cz]
    }

    pub fn to_world(&self, [lx, ly, lz]: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.heading.sin_cos();
        [
            self.cx + c * lx - s * ly,
            self.cy + s * lx + c * ly,
            self.cz + lz,
        ]
    }

    /// Whether a box-local position lies within the box; faces count as inside.
    pub fn contains_local(&self, [lx, ly, lz]: [f64; 3]) -> bool {
        let [hl, hw, hh] = self.half_extents();
        lx.abs() <= hl && ly.abs() <= hw && lz.abs() <= hh
    }

    pub fn contains(&self, pt: &Point) -> bool {
        self.contains_local(self.to_local(pt.position()))
    }

    /// Bird's-eye-view corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let [hl, hw, _] = self.half_extents();
        [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]].map(|[lx, ly]| {
            let [x, y, _] = self.to_world([lx, ly, 0.0]);
            [x, y]
        })
    }

    /// Separating-axis test on the two footprints. Touching edges overlap.
    pub fn bev_overlaps(&self, other: &Box3D) -> bool {
        let a = self.bev_corners();
        let b = other.bev_corners();
        let axes = [
            self.heading,
            self.heading + PI / 2.0,
            other.heading,
            other.heading + PI / 2.0,
        ];
        for angle in axes {
            let (s, c) = angle.sin_cos();
            let project = |pts: &[[f64; 2]; 4]| {
                pts.iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                        let d = p[0] * c + p[1] * s;
                        (lo.min(d), hi.max(d))
                    })
            };
            let (alo, ahi) = project(&a);
            let (blo, bhi) = project(&b);
            if ahi < blo || bhi < alo {
                return false;
            }
        }
        true
    }
}

/// True iff the point lies inside the box (faces inclusive).
pub fn point_in_box(pt: &Point, b: &Box3D) -> bool {
    b.contains(pt)
}

/// Dimensions of the range image a frame's ray indices refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ImageShape {
    pub rows: u32,
    pub cols: u32,
}

/// One lidar scan with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub points: Vec<Point>,
    pub boxes: Vec<Box3D>,
    /// Present when points carry ray indices into a range image.
    pub range_shape: Option<ImageShape>,
}

impl Frame {
    pub fn new(frame_id: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.into(),
            points: Vec::new(),
            boxes: Vec::new(),
            range_shape: None,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.frame_id.is_empty() || self.frame_id.chars().any(char::is_whitespace) {
            return Err(GeometryError::InvalidFrameId(self.frame_id.clone()));
        }
        let mut uids = HashSet::with_capacity(self.boxes.len());
        for b in &self.boxes {
            b.validate()?;
            if !uids.insert(b.uid) {
                return Err(GeometryError::DuplicateBoxUid(b.uid));
            }
        }
        for (index, p) in self.points.iter().enumerate() {
            if !p.is_finite() {
                return Err(GeometryError::NonFinitePoint(index));
            }
            if let Some(ray) = p.ray {
                let shape = self
                    .range_shape
                    .ok_or(GeometryError::RayWithoutShape(index))?;
                if ray.row >= shape.rows || ray.col >= shape.cols {
                    return Err(GeometryError::RayOutOfBounds {
                        index,
                        row: ray.row,
                        col: ray.col,
                        rows: shape.rows,
                        cols: shape.cols,
                    });
                }
            }
        }
        Ok(())
    }

    /// Smallest uid strictly greater than every uid in the frame.
    pub fn next_box_uid(&self) -> u64 {
        self.boxes.iter().map(|b| b.uid + 1).max().unwrap_or(0)
    }

    pub fn all_points_indexed(&self) -> bool {
        self.points.iter().all(|p| p.ray.is_some())
    }

    /// Bitwise equality of ids, shapes, every point and every box.
    pub fn bit_identical(&self, other: &Frame) -> bool {
        self.frame_id == other.frame_id
            && self.range_shape == other.range_shape
            && self.points.len() == other.points.len()
            && self.boxes.len() == other.boxes.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a.bit_identical(b))
            && self.boxes.iter().zip(&other.boxes).all(|(a, b)| {
                a.class == b.class
                    && a.uid == b.uid
                    && [a.cx, a.cy, a.cz, a.length, a.width, a.height, a.heading]
                        .iter()
                        .zip([b.cx, b.cy, b.cz, b.length, b.width, b.height, b.heading])
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}
