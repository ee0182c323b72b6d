//! Applies a resolved policy to one frame.

use rand::Rng;

use crate::geometry::Frame;
use crate::ops::{self, Applied, ExemplarBank, FireTag, OpError};
use crate::rangeview::{assign_rays, resolve_occlusion, RangeGeometry};
use crate::rng::RngStream;

use super::{resolve, PolicyError, PolicySpec, ResolvedOp, ResolvedPolicy};

/// Shared read-only inputs some ops need.
#[derive(Debug, Clone, Copy, Default)]
pub struct AugmentContext<'a> {
    /// Exemplars for paste box.
    pub bank: Option<&'a ExemplarBank>,
    /// Frames swap background draws its partner from.
    pub partners: &'a [Frame],
    /// Sensor layout; defaults to the standard layout of the frame's shape.
    pub geometry: Option<&'a RangeGeometry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub frame: Frame,
    pub fires: Vec<FireTag>,
}

pub fn apply_pipeline(
    frame: Frame,
    spec: &PolicySpec,
    m: f64,
    p: f64,
    stream: &RngStream,
    ctx: &AugmentContext<'_>,
) -> Result<Augmented, PolicyError> {
    let policy = resolve(spec, m, p)?;
    apply_resolved(frame, &policy, stream, ctx)
}

/// Fails when an enabled op lacks the bank or partner frames it needs.
pub fn check_inputs(policy: &ResolvedPolicy, ctx: &AugmentContext<'_>) -> Result<(), PolicyError> {
    for op in &policy.ops {
        match op {
            ResolvedOp::PasteBox(c) if ctx.bank.is_none() => {
                if c.per_class
                    .values()
                    .any(|cp| cp.probability > 0.0 && cp.count > 0)
                {
                    return Err(PolicyError::Config(
                        "paste box is enabled but no exemplar bank was given".into(),
                    ));
                }
            }
            ResolvedOp::SwapBackground(s) if s.probability > 0.0 && ctx.partners.is_empty() => {
                return Err(PolicyError::Config(
                    "swap background is enabled but no partner frames were given".into(),
                ));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Partner for swap background, never the frame itself when another exists.
fn pick_partner<'a>(frame: &Frame, partners: &'a [Frame], stream: &RngStream) -> &'a Frame {
    let others: Vec<&Frame> = partners
        .iter()
        .filter(|f| f.frame_id != frame.frame_id)
        .collect();
    let mut rng = stream.derive("partner", 0).rng();
    if others.is_empty() {
        &partners[rng.random_range(0..partners.len())]
    } else {
        others[rng.random_range(0..others.len())]
    }
}

/// Runs every op in order, each on its own stream `stream / op name`.
pub fn apply_resolved(
    frame: Frame,
    policy: &ResolvedPolicy,
    stream: &RngStream,
    ctx: &AugmentContext<'_>,
) -> Result<Augmented, PolicyError> {
    check_inputs(policy, ctx)?;
    let standard;
    let geometry = match (ctx.geometry, frame.range_shape) {
        (Some(g), _) => Some(g),
        (None, Some(shape)) => {
            standard =
                RangeGeometry::standard(shape).map_err(|e| PolicyError::Config(e.to_string()))?;
            Some(&standard)
        }
        (None, None) => None,
    };
    let empty_bank = ExemplarBank::default();
    let mut frame = frame;
    let mut fires = Vec::new();
    for op in &policy.ops {
        let kind = op.kind();
        let s = kind.stream(stream);
        let result: Result<Applied, OpError> = match op {
            ResolvedOp::DropBox(c) => ops::drop_box(frame, c, &s),
            ResolvedOp::PasteBox(c) => {
                ops::paste_box(frame, ctx.bank.unwrap_or(&empty_bank), c, geometry, &s)
            }
            ResolvedOp::SwapBackground(x) => {
                if x.probability > 0.0 {
                    let partner = pick_partner(&frame, ctx.partners, &s);
                    ops::swap_background(frame, partner, x, geometry, &s)
                } else {
                    Ok(Applied {
                        frame,
                        fires: Vec::new(),
                    })
                }
            }
            ResolvedOp::GlobalRot(x) => ops::global_rotate(frame, x, &s),
            ResolvedOp::GlobalScale(x) => ops::global_scale(frame, x, &s),
            ResolvedOp::GlobalDrop(x) => ops::global_drop(frame, x, &s),
            ResolvedOp::FrustumDrop(x) => ops::frustum_drop(frame, x, &s),
            ResolvedOp::FrustumNoise(x) => ops::frustum_noise(frame, x, &s),
            ResolvedOp::GlobalTranslate(x) => ops::global_translate(frame, x, &s),
            ResolvedOp::GlobalFlip(x) => ops::global_flip(frame, x, &s),
        };
        let applied = result.map_err(|source| PolicyError::Op { op: kind, source })?;
        frame = applied.frame;
        fires.extend(applied.fires);
    }
    if !fires.is_empty() && frame.range_shape.is_some() {
        if let Some(g) = geometry {
            let points = assign_rays(std::mem::take(&mut frame.points), g)?;
            frame.points = resolve_occlusion(points)?;
        }
    }
    Ok(Augmented { frame, fires })
}
