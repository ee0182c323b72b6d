use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    check, check_probability, gate, Applied, GlobalDrop, GlobalFlip, GlobalRotate, GlobalScale,
    GlobalTranslate, OpError, OpKind,
};
use crate::geometry::{normalize_angle, Frame};
use crate::rng::RngStream;

/// Yaw drawn by [`global_rotate`] from its stream, `U[-max_angle, max_angle]`.
pub fn draw_rotation_angle(max_angle: f64, stream: &RngStream) -> f64 {
    if max_angle == 0.0 {
        return 0.0;
    }
    stream
        .derive("angle", 0)
        .rng()
        .random_range(-max_angle..=max_angle)
}

/// Factor drawn by [`global_scale`], `U[1 - s, 1 + s]`.
pub fn draw_scale_factor(scaling_factor: f64, stream: &RngStream) -> f64 {
    if scaling_factor == 0.0 {
        return 1.0;
    }
    stream
        .derive("factor", 0)
        .rng()
        .random_range(1.0 - scaling_factor..=1.0 + scaling_factor)
}

/// Offset `(dx, dy)` drawn by [`global_translate`].
pub fn draw_translation(stdev: f64, stream: &RngStream) -> (f64, f64) {
    if stdev == 0.0 {
        return (0.0, 0.0);
    }
    let normal = Normal::new(0.0, stdev).expect("stdev validated");
    let mut rng = stream.derive("offset", 0).rng();
    (normal.sample(&mut rng), normal.sample(&mut rng))
}

/// Rotates points and boxes about the ego z-axis.
pub fn rotate_frame(mut frame: Frame, angle: f64) -> Frame {
    if angle == 0.0 {
        return frame;
    }
    let (s, c) = angle.sin_cos();
    for p in &mut frame.points {
        let (x, y) = (p.x, p.y);
        p.x = c * x - s * y;
        p.y = s * x + c * y;
    }
    for b in &mut frame.boxes {
        let (x, y) = (b.cx, b.cy);
        b.cx = c * x - s * y;
        b.cy = s * x + c * y;
        b.heading = normalize_angle(b.heading + angle);
    }
    frame
}

pub fn scale_frame(mut frame: Frame, factor: f64) -> Frame {
    if factor == 1.0 {
        return frame;
    }
    for p in &mut frame.points {
        p.x *= factor;
        p.y *= factor;
        p.z *= factor;
    }
    for b in &mut frame.boxes {
        b.cx *= factor;
        b.cy *= factor;
        b.cz *= factor;
        b.length *= factor;
        b.width *= factor;
        b.height *= factor;
    }
    frame
}

pub fn translate_frame(mut frame: Frame, dx: f64, dy: f64) -> Frame {
    if dx == 0.0 && dy == 0.0 {
        return frame;
    }
    for p in &mut frame.points {
        p.x += dx;
        p.y += dy;
    }
    for b in &mut frame.boxes {
        b.cx += dx;
        b.cy += dy;
    }
    frame
}

/// Mirrors across the xz-plane: `y -> -y`, `heading -> -heading`.
pub fn flip_frame(mut frame: Frame) -> Frame {
    for p in &mut frame.points {
        p.y = -p.y;
    }
    for b in &mut frame.boxes {
        b.cy = -b.cy;
        b.heading = normalize_angle(-b.heading);
    }
    frame
}

pub fn global_rotate(
    frame: Frame,
    params: &GlobalRotate,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::GlobalRot;
    check_probability(op, params.probability)?;
    let a = params.max_angle;
    check(op, "max_angle", a, (0.0..=PI).contains(&a), "[0, pi]")?;
    if !gate(stream, 0, params.probability) {
        return Ok(Applied::unchanged(frame));
    }
    let angle = draw_rotation_angle(a, stream);
    Ok(Applied::fired(rotate_frame(frame, angle), op))
}

pub fn global_scale(
    frame: Frame,
    params: &GlobalScale,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::GlobalScale;
    check_probability(op, params.probability)?;
    let s = params.scaling_factor;
    check(op, "scaling_factor", s, (0.0..1.0).contains(&s), "[0, 1)")?;
    if !gate(stream, 0, params.probability) {
        return Ok(Applied::unchanged(frame));
    }
    let factor = draw_scale_factor(s, stream);
    Ok(Applied::fired(scale_frame(frame, factor), op))
}

pub fn global_translate(
    frame: Frame,
    params: &GlobalTranslate,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::GlobalTranslate;
    check_probability(op, params.probability)?;
    check(op, "stdev", params.stdev, params.stdev >= 0.0, "[0, inf)")?;
    if !gate(stream, 0, params.probability) {
        return Ok(Applied::unchanged(frame));
    }
    let (dx, dy) = draw_translation(params.stdev, stream);
    Ok(Applied::fired(translate_frame(frame, dx, dy), op))
}

pub fn global_flip(
    frame: Frame,
    params: &GlobalFlip,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::GlobalFlip;
    let p = params.probability;
    check(op, "probability", p, (0.0..=0.5).contains(&p), "[0, 0.5]")?;
    if !gate(stream, 0, p) {
        return Ok(Applied::unchanged(frame));
    }
    Ok(Applied::fired(flip_frame(frame), op))
}

pub fn global_drop(
    mut frame: Frame,
    params: &GlobalDrop,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::GlobalDrop;
    check_probability(op, params.probability)?;
    let d = params.drop_ratio;
    check(op, "drop_ratio", d, (0.0..=0.8).contains(&d), "[0, 0.8]")?;
    if !gate(stream, 0, params.probability) {
        return Ok(Applied::unchanged(frame));
    }
    if d > 0.0 {
        let mut rng = stream.derive("drop", 0).rng();
        frame.points.retain(|_| rng.random::<f64>() >= d);
    }
    Ok(Applied::fired(frame, op))
}
