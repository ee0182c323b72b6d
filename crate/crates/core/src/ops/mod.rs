//! The ten frame augmentations.
//!
//! Every op is a pure function of `(frame, params, stream)`. A Bernoulli draw
//! with the op's probability gates it; when the gate stays closed the input
//! frame is handed back untouched. Box ops gate each class separately with
//! that class's probability.

mod boxes;
mod frustum;
mod global;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::geometry::{ClassId, Frame, GeometryError};
use crate::rangeview::RangeViewError;
use crate::rng::RngStream;

pub use boxes::{
    drop_box, paste_box, swap_background, ExemplarBank, ObjectExemplar, MAX_PASTE_ATTEMPTS,
};
pub use frustum::{
    draw_frustum, frustum_drop, frustum_drop_in, frustum_noise, frustum_noise_in, FrustumSpec,
};
pub use global::{
    draw_rotation_angle, draw_scale_factor, draw_translation, flip_frame, global_drop, global_flip,
    global_rotate, global_scale, global_translate, rotate_frame, scale_frame, translate_frame,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error("{op}: parameter {name} = {value} outside {allowed}")]
    InvalidParameter {
        op: OpKind,
        name: &'static str,
        value: f64,
        allowed: &'static str,
    },
    #[error("paste box: exemplar bank has no {0} objects")]
    EmptyBank(ClassId),
    #[error(transparent)]
    RangeView(#[from] RangeViewError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Augmentation identifiers, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    DropBox,
    PasteBox,
    SwapBackground,
    GlobalRot,
    GlobalScale,
    GlobalDrop,
    FrustumDrop,
    FrustumNoise,
    GlobalTranslate,
    GlobalFlip,
}

impl OpKind {
    /// The order in which the pipeline applies ops.
    pub const ORDER: [OpKind; 10] = [
        OpKind::DropBox,
        OpKind::PasteBox,
        OpKind::SwapBackground,
        OpKind::GlobalRot,
        OpKind::GlobalScale,
        OpKind::GlobalDrop,
        OpKind::FrustumDrop,
        OpKind::FrustumNoise,
        OpKind::GlobalTranslate,
        OpKind::GlobalFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::DropBox => "DropBox",
            OpKind::PasteBox => "PasteBox",
            OpKind::SwapBackground => "SwapBackground",
            OpKind::GlobalRot => "GlobalRot",
            OpKind::GlobalScale => "GlobalScale",
            OpKind::GlobalDrop => "GlobalDrop",
            OpKind::FrustumDrop => "FrustumDrop",
            OpKind::FrustumNoise => "FrustumNoise",
            OpKind::GlobalTranslate => "GlobalTranslate",
            OpKind::GlobalFlip => "GlobalFlip",
        }
    }

    /// Position in [`OpKind::ORDER`].
    pub fn index(self) -> u64 {
        self as u64
    }

    /// Stream an op receives from the pipeline for a given frame stream.
    pub fn stream(self, frame_stream: &RngStream) -> RngStream {
        frame_stream.derive(self.name(), self.index())
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ORDER
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op {s:?}"))
    }
}

/// Records that an op's gate opened (per class for box ops).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FireTag {
    pub op: OpKind,
    pub class: Option<ClassId>,
}

impl fmt::Display for FireTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.class {
            Some(c) => write!(f, "{}:{}", self.op, c),
            None => write!(f, "{}", self.op),
        }
    }
}

/// Output of one op application.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub frame: Frame,
    pub fires: Vec<FireTag>,
}

impl Applied {
    pub(crate) fn unchanged(frame: Frame) -> Self {
        Self {
            frame,
            fires: Vec::new(),
        }
    }

    pub(crate) fn fired(frame: Frame, op: OpKind) -> Self {
        Self {
            frame,
            fires: vec![FireTag { op, class: None }],
        }
    }

    pub fn did_fire(&self) -> bool {
        !self.fires.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalRotate {
    pub probability: f64,
    /// Half-width of the uniform yaw range, radians in `[0, pi]`.
    pub max_angle: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalScale {
    pub probability: f64,
    /// Half-width `s` of the factor range `[1 - s, 1 + s]`, in `[0, 1)`.
    pub scaling_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalTranslate {
    pub probability: f64,
    /// Standard deviation of the x and y offsets, meters.
    pub stdev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalFlip {
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalDrop {
    pub probability: f64,
    /// Fraction of points removed, in `[0, 0.8]`.
    pub drop_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumDrop {
    pub probability: f64,
    pub theta_width: f64,
    pub phi_width: f64,
    pub min_range: f64,
    pub drop_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumNoise {
    pub probability: f64,
    pub theta_width: f64,
    pub phi_width: f64,
    pub min_range: f64,
    /// Features are scaled by `1 + u`, `u ~ U[-max_noise, max_noise]`.
    pub max_noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwapBackground {
    pub probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassBoxParams {
    pub probability: f64,
    pub count: u32,
}

/// Per-class gate probability and box count for drop box and paste box.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoxCounts {
    pub per_class: BTreeMap<ClassId, ClassBoxParams>,
}

impl BoxCounts {
    pub fn new(entries: impl IntoIterator<Item = (ClassId, f64, u32)>) -> Self {
        Self {
            per_class: entries
                .into_iter()
                .map(|(c, probability, count)| (c, ClassBoxParams { probability, count }))
                .collect(),
        }
    }
}

/// Opens with probability `p`. Never opens for `p = 0`, always for `p = 1`.
pub(crate) fn gate(stream: &RngStream, index: u64, probability: f64) -> bool {
    let u: f64 = stream.derive("gate", index).rng().random();
    u < probability
}

pub(crate) fn check(
    op: OpKind,
    name: &'static str,
    value: f64,
    ok: bool,
    allowed: &'static str,
) -> Result<(), OpError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(OpError::InvalidParameter {
            op,
            name,
            value,
            allowed,
        })
    }
}

pub(crate) fn check_probability(op: OpKind, p: f64) -> Result<(), OpError> {
    check(op, "probability", p, (0.0..=1.0).contains(&p), "[0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_order_and_names_roundtrip() {
        for (i, k) in OpKind::ORDER.iter().enumerate() {
            assert_eq!(k.index(), i as u64);
            assert_eq!(k.name().parse::<OpKind>().unwrap(), *k);
        }
        assert!("Rotate".parse::<OpKind>().is_err());
    }

    #[test]
    fn gate_extremes() {
        let s = RngStream::new(1);
        for i in 0..200 {
            assert!(!gate(&s, i, 0.0));
            assert!(gate(&s, i, 1.0));
        }
    }

    #[test]
    fn fire_tag_display() {
        let t = FireTag {
            op: OpKind::PasteBox,
            class: Some(ClassId::Pedestrian),
        };
        assert_eq!(t.to_string(), "PasteBox:PEDESTRIAN");
        let t = FireTag {
            op: OpKind::GlobalFlip,
            class: None,
        };
        assert_eq!(t.to_string(), "GlobalFlip");
    }
}
