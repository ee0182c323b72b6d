use std::f64::consts::{PI, TAU};

use rand::Rng;

use super::{check, check_probability, gate, Applied, FrustumDrop, FrustumNoise, OpError, OpKind};
use crate::geometry::{angular_distance, spherical_coords, Frame, Point};
use crate::rng::RngStream;

/// Angular window beyond a minimum range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrustumSpec {
    pub center_theta: f64,
    pub center_phi: f64,
    pub theta_width: f64,
    pub phi_width: f64,
    pub min_range: f64,
}

impl FrustumSpec {
    /// Points at the origin are never inside.
    pub fn contains(&self, p: &Point) -> bool {
        let Ok(s) = spherical_coords(p) else {
            return false;
        };
        (s.inclination - self.center_theta).abs() <= self.theta_width / 2.0
            && angular_distance(s.azimuth, self.center_phi) <= self.phi_width / 2.0
            && s.range >= self.min_range
    }

    fn is_empty(&self) -> bool {
        self.theta_width == 0.0 || self.phi_width == 0.0
    }
}

fn check_window(
    op: OpKind,
    theta_width: f64,
    phi_width: f64,
    min_range: f64,
) -> Result<(), OpError> {
    check(
        op,
        "theta_width",
        theta_width,
        (0.0..=PI).contains(&theta_width),
        "[0, pi]",
    )?;
    check(
        op,
        "phi_width",
        phi_width,
        (0.0..=TAU).contains(&phi_width),
        "[0, 2pi]",
    )?;
    check(op, "min_range", min_range, min_range >= 0.0, "[0, inf)")
}

/// Frustum placed by the frustum ops: azimuth uniform on `(-pi, pi]`,
/// inclination uniform over the span the frame's points cover.
/// `None` when the frame has no point with a direction.
pub fn draw_frustum(
    frame: &Frame,
    theta_width: f64,
    phi_width: f64,
    min_range: f64,
    stream: &RngStream,
) -> Option<FrustumSpec> {
    let (lo, hi) = frame
        .points
        .iter()
        .filter_map(|p| spherical_coords(p).ok())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
            (lo.min(s.inclination), hi.max(s.inclination))
        });
    if lo > hi {
        return None;
    }
    let mut rng = stream.derive("center", 0).rng();
    let center_phi = PI - rng.random_range(0.0..TAU);
    let center_theta = if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    };
    Some(FrustumSpec {
        center_theta,
        center_phi,
        theta_width,
        phi_width,
        min_range,
    })
}

/// Drops each point inside `frustum` with probability `drop_ratio`.
pub fn frustum_drop_in(
    mut frame: Frame,
    frustum: &FrustumSpec,
    drop_ratio: f64,
    stream: &RngStream,
) -> Frame {
    if frustum.is_empty() || drop_ratio == 0.0 {
        return frame;
    }
    let mut rng = stream.derive("drop", 0).rng();
    frame
        .points
        .retain(|p| !frustum.contains(p) || rng.random::<f64>() >= drop_ratio);
    frame
}

/// Scales intensity and elongation of points inside `frustum` by independent
/// `1 + u`, `u ~ U[-max_noise, max_noise]`, clamped to `[0, 1]`.
pub fn frustum_noise_in(
    mut frame: Frame,
    frustum: &FrustumSpec,
    max_noise: f64,
    stream: &RngStream,
) -> Frame {
    if frustum.is_empty() || max_noise == 0.0 {
        return frame;
    }
    let mut rng = stream.derive("noise", 0).rng();
    for p in frame.points.iter_mut().filter(|p| frustum.contains(p)) {
        let ui: f64 = rng.random_range(-max_noise..=max_noise);
        let ue: f64 = rng.random_range(-max_noise..=max_noise);
        p.intensity = (p.intensity * (1.0 + ui)).clamp(0.0, 1.0);
        p.elongation = (p.elongation * (1.0 + ue)).clamp(0.0, 1.0);
    }
    frame
}

pub fn frustum_drop(
    frame: Frame,
    params: &FrustumDrop,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::FrustumDrop;
    check_probability(op, params.probability)?;
    check_window(op, params.theta_width, params.phi_width, params.min_range)?;
    let d = params.drop_ratio;
    check(op, "drop_ratio", d, (0.0..=0.8).contains(&d), "[0, 0.8]")?;
    if !gate(stream, 0, params.probability) {
        return Ok(Applied::unchanged(frame));
    }
    let frame = match draw_frustum(
        &frame,
        params.theta_width,
        params.phi_width,
        params.min_range,
        stream,
    ) {
        Some(fr) => frustum_drop_in(frame, &fr, d, stream),
        None => frame,
    };
    Ok(Applied::fired(frame, op))
}

pub fn frustum_noise(
    frame: Frame,
    params: &FrustumNoise,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::FrustumNoise;
    check_probability(op, params.probability)?;
    check_window(op, params.theta_width, params.phi_width, params.min_range)?;
    check(
        op,
        "max_noise",
        params.max_noise,
        params.max_noise >= 0.0,
        "[0, inf)",
    )?;
    if !gate(stream, 0, params.probability) {
        return Ok(Applied::unchanged(frame));
    }
    let frame = match draw_frustum(
        &frame,
        params.theta_width,
        params.phi_width,
        params.min_range,
        stream,
    ) {
        Some(fr) => frustum_noise_in(frame, &fr, params.max_noise, stream),
        None => frame,
    };
    Ok(Applied::fired(frame, op))
}
