//! Synthetic lidar scenes and a proxy evaluator.
//!
//! Scenes are a flat ground disk around the sensor with labeled objects
//! standing on it. Object returns are sampled on the box faces that face the
//! sensor, then projected into the standard range image so that occlusion
//! behaves as on real scans.

use std::collections::{HashMap, HashSet};
use std::f64::consts::{PI, TAU};

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{Box3D, ClassId, Frame, GeometryError, ImageShape, Point};
use crate::ops::ExemplarBank;
use crate::policy::{apply_pipeline, AugmentContext, PolicySpec};
use crate::rangeview::{assign_rays, resolve_occlusion, RangeGeometry, RangeViewError};
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scene config line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid scene config: {0}")]
    Invalid(String),
    #[error("could not place object {index} without overlap; lower n_objects or raise extent")]
    Crowded { index: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    RangeView(#[from] RangeViewError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub n_objects: usize,
    /// Relative class frequencies; need not sum to one.
    pub class_mix: Vec<(ClassId, f64)>,
    /// Radius of the ground disk, meters.
    pub extent: f64,
    /// No object center closer to the sensor than this.
    pub min_distance: f64,
    /// Object returns per box, drawn uniformly from the inclusive range.
    pub points_min: u32,
    pub points_max: u32,
    /// Ground returns per square meter.
    pub background_density: f64,
    pub ground_z: f64,
    pub rows: u32,
    pub cols: u32,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            n_objects: 50,
            class_mix: vec![
                (ClassId::Vehicle, 0.6),
                (ClassId::Pedestrian, 0.3),
                (ClassId::Cyclist, 0.1),
            ],
            extent: 60.0,
            min_distance: 4.0,
            points_min: 30,
            points_max: 120,
            background_density: 0.15,
            ground_z: -2.0,
            rows: 64,
            cols: 2650,
            seed: 0,
        }
    }
}

/// Gap between the ground plane and box bottoms.
const GROUND_CLEARANCE: f64 = 0.05;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

fn nominal_size(class: ClassId) -> [f64; 3] {
    match class {
        ClassId::Vehicle => [4.6, 2.0, 1.7],
        ClassId::Pedestrian => [0.8, 0.8, 1.8],
        ClassId::Cyclist => [1.8, 0.8, 1.7],
        ClassId::Sign => [0.4, 0.7, 2.4],
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.into()));
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return bad("extent must be > 0");
        }
        if !(self.min_distance.is_finite()
            && self.min_distance > 0.0
            && self.min_distance < self.extent)
        {
            return bad("min_distance must be within (0, extent)");
        }
        if self.points_min > self.points_max {
            return bad("points_min must not exceed points_max");
        }
        if !(self.background_density.is_finite() && self.background_density >= 0.0) {
            return bad("background_density must be >= 0");
        }
        if !self.ground_z.is_finite() || self.ground_z >= 0.0 {
            return bad("ground_z must be below the sensor");
        }
        if self.rows < 2 || self.cols < 1 {
            return bad("range image needs at least 2 rows and 1 column");
        }
        if self.n_objects > 0 {
            if self.class_mix.is_empty()
                || self
                    .class_mix
                    .iter()
                    .any(|(_, w)| !(w.is_finite() && *w >= 0.0))
            {
                return bad("class_mix weights must be finite and >= 0");
            }
            if self.class_mix.iter().map(|(_, w)| w).sum::<f64>() <= 0.0 {
                return bad("class_mix needs a positive weight");
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<RangeGeometry, SynthError> {
        Ok(RangeGeometry::standard(ImageShape {
            rows: self.rows,
            cols: self.cols,
        })?)
    }

    /// `key = value` lines; `#` starts a comment. Missing keys keep defaults.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let err = |message: String| SynthError::Parse { line, message };
            let (key, value) = l
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
                v.parse().map_err(|_| format!("bad value {v:?}"))
            }
            match key {
                "n_objects" => cfg.n_objects = num(value).map_err(err)?,
                "extent" => cfg.extent = num(value).map_err(err)?,
                "min_distance" => cfg.min_distance = num(value).map_err(err)?,
                "points_min" => cfg.points_min = num(value).map_err(err)?,
                "points_max" => cfg.points_max = num(value).map_err(err)?,
                "background_density" => cfg.background_density = num(value).map_err(err)?,
                "ground_z" => cfg.ground_z = num(value).map_err(err)?,
                "rows" => cfg.rows = num(value).map_err(err)?,
                "cols" => cfg.cols = num(value).map_err(err)?,
                "seed" => cfg.seed = num(value).map_err(err)?,
                "class_mix" => {
                    cfg.class_mix = value
                        .split_whitespace()
                        .map(|item| {
                            let (c, w) = item
                                .split_once(':')
                                .ok_or_else(|| format!("expected CLASS:weight, got {item:?}"))?;
                            let class: ClassId =
                                c.parse().map_err(|e: GeometryError| e.to_string())?;
                            Ok((class, num::<f64>(w)?))
                        })
                        .collect::<Result<_, String>>()
                        .map_err(err)?
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mix: Vec<String> = self
            .class_mix
            .iter()
            .map(|(c, w)| format!("{c}:{w}"))
            .collect();
        format!(
            "n_objects = {}\nclass_mix = {}\nextent = {}\nmin_distance = {}\npoints_min = {}\npoints_max = {}\n\
             background_density = {}\nground_z = {}\nrows = {}\ncols = {}\nseed = {}\n",
            self.n_objects,
            mix.join(" "),
            self.extent,
            self.min_distance,
            self.points_min,
            self.points_max,
            self.background_density,
            self.ground_z,
            self.rows,
            self.cols,
            self.seed
        )
    }

    fn pick_class(&self, u: f64) -> ClassId {
        let total: f64 = self.class_mix.iter().map(|(_, w)| w).sum();
        let mut acc = 0.0;
        for &(c, w) in &self.class_mix {
            acc += w / total;
            if u < acc {
                return c;
            }
        }
        self.class_mix
            .iter()
            .rev()
            .find(|(_, w)| *w > 0.0)
            .map(|(c, _)| *c)
            .unwrap_or(ClassId::Vehicle)
    }
}

/// Uniform point in the annulus `[r0, r1]`.
fn annulus(rng: &mut impl Rng, r0: f64, r1: f64) -> (f64, f64) {
    let r = (r0 * r0 + rng.random::<f64>() * (r1 * r1 - r0 * r0)).sqrt();
    let a = rng.random::<f64>() * TAU - PI;
    (r * a.cos(), r * a.sin())
}

/// Returns on the faces of `b` that face the origin, strictly inside `b`.
fn surface_points(b: &Box3D, n: u32, rng: &mut impl Rng) -> Vec<Point> {
    let [hl, hw, hh] = b.half_extents();
    let ego = b.to_local([0.0, 0.0, 0.0]);
    // (axis, sign, area) of each visible face; bottom faces the ground.
    let mut faces: Vec<(usize, f64, f64)> = Vec::new();
    let half = [hl, hw, hh];
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            if axis == 2 && sign < 0.0 {
                continue;
            }
            if sign * (ego[axis] - sign * half[axis]) > 0.0 {
                let (u, v) = match axis {
                    0 => (hw, hh),
                    1 => (hl, hh),
                    _ => (hl, hw),
                };
                faces.push((axis, sign, u * v));
            }
        }
    }
    if faces.is_empty() {
        return Vec::new();
    }
    let total: f64 = faces.iter().map(|f| f.2).sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random::<f64>() * total;
            let mut face = faces[faces.len() - 1];
            for f in &faces {
                if pick < f.2 {
                    face = *f;
                    break;
                }
                pick -= f.2;
            }
            let mut local = [0.0; 3];
            for (a, h) in half.iter().enumerate() {
                local[a] = if a == face.0 {
                    face.1 * h * 0.98
                } else {
                    (rng.random::<f64>() * 2.0 - 1.0) * h * 0.99
                };
            }
            let [x, y, z] = b.to_world(local);
            Point::new(x, y, z).with_features(rng.random(), rng.random::<f64>() * 0.5)
        })
        .collect()
}

/// One scene. Points come out in row-major ray order.
pub fn generate_frame(
    cfg: &SceneConfig,
    frame_id: &str,
    stream: &RngStream,
) -> Result<Frame, SynthError> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let mut frame = Frame::new(frame_id);
    let mut rng = stream.derive("boxes", 0).rng();
    for index in 0..cfg.n_objects {
        let class = cfg.pick_class(rng.random());
        let nominal = nominal_size(class);
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let (x, y) = annulus(&mut rng, cfg.min_distance, cfg.extent);
            let jitter =
                |rng: &mut rand_chacha::ChaCha12Rng, v: f64| v * (0.9 + 0.2 * rng.random::<f64>());
            let [l, w, h] = [
                jitter(&mut rng, nominal[0]),
                jitter(&mut rng, nominal[1]),
                jitter(&mut rng, nominal[2]),
            ];
            let heading = rng.random::<f64>() * TAU - PI;
            let z = cfg.ground_z + GROUND_CLEARANCE + h / 2.0;
            let b = Box3D::new([x, y, z], l, w, h, heading, class, index as u64)?;
            if b.bev_corners()
                .iter()
                .any(|c| c[0].hypot(c[1]) < cfg.min_distance / 2.0)
            {
                continue;
            }
            if frame.boxes.iter().all(|o| !o.bev_overlaps(&b)) {
                placed = Some(b);
                break;
            }
        }
        frame
            .boxes
            .push(placed.ok_or(SynthError::Crowded { index })?);
    }
    let mut rng = stream.derive("objects", 0).rng();
    for b in &frame.boxes {
        let n = rng.random_range(cfg.points_min..=cfg.points_max);
        frame.points.extend(surface_points(b, n, &mut rng));
    }
    let mut rng = stream.derive("ground", 0).rng();
    let n_ground = (cfg.background_density * PI * cfg.extent * cfg.extent).round() as usize;
    for _ in 0..n_ground {
        let (x, y) = annulus(&mut rng, 1.0, cfg.extent);
        frame.points.push(
            Point::new(x, y, cfg.ground_z)
                .with_features(rng.random::<f64>() * 0.3, rng.random::<f64>() * 0.1),
        );
    }
    let mut points = resolve_occlusion(assign_rays(frame.points, &geometry)?)?;
    points.sort_by_key(|p| p.ray.map(|r| (r.row, r.col)));
    frame.points = points;
    frame.range_shape = Some(geometry.shape());
    Ok(frame)
}

/// `n` scenes named `{prefix}{index:05}`, each on stream `seed / frame / index`.
pub fn generate_dataset(
    cfg: &SceneConfig,
    n: usize,
    prefix: &str,
) -> Result<Vec<Frame>, SynthError> {
    let root = RngStream::new(cfg.seed);
    (0..n)
        .into_par_iter()
        .map(|i| {
            generate_frame(
                cfg,
                &format!("{prefix}{i:05}"),
                &root.derive("frame", i as u64),
            )
        })
        .collect()
}

/// Settings of the proxy objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyConfig {
    pub scene: SceneConfig,
    pub frames: usize,
    /// Weight of the label-corruption penalty.
    pub corruption_weight: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                n_objects: 16,
                extent: 40.0,
                background_density: 0.08,
                ..SceneConfig::default()
            },
            frames: 32,
            corruption_weight: 4.0,
        }
    }
}

/// Fraction of a box's points that must vanish for its label to count as corrupted.
pub const CORRUPTION_LOSS: f64 = 0.9;

fn interior_counts(frame: &Frame) -> HashMap<u64, usize> {
    frame
        .boxes
        .iter()
        .map(|b| (b.uid, frame.points.iter().filter(|p| b.contains(p)).count()))
        .collect()
}

/// Side of a bird's-eye-view occupancy cell, meters.
const BEV_CELL: f64 = 2.0;

fn occupancy(frame: &Frame) -> HashSet<(i64, i64)> {
    frame
        .points
        .iter()
        .map(|p| {
            (
                (p.x / BEV_CELL).floor() as i64,
                (p.y / BEV_CELL).floor() as i64,
            )
        })
        .collect()
}

fn intensity_spread(frame: &Frame) -> f64 {
    let n = frame.points.len().max(1) as f64;
    let mean = frame.points.iter().map(|p| p.intensity).sum::<f64>() / n;
    (frame
        .points
        .iter()
        .map(|p| (p.intensity - mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Geometric change between a frame and its augmentation, `>= 0`: the
/// Jaccard distance of BEV occupancy, plus label turnover, plus the change
/// in intensity spread.
fn diversity(before: &Frame, a: &HashSet<(i64, i64)>, after: &Frame) -> f64 {
    let b = occupancy(after);
    let union = a.union(&b).count().max(1) as f64;
    let layout = 1.0 - a.intersection(&b).count() as f64 / union;
    let old: HashSet<u64> = before.boxes.iter().map(|b| b.uid).collect();
    let new: HashSet<u64> = after.boxes.iter().map(|b| b.uid).collect();
    let turnover = old.symmetric_difference(&new).count() as f64 / old.len().max(1) as f64;
    let features = (intensity_spread(after) - intensity_spread(before)).abs()
        / intensity_spread(before).max(1e-9);
    layout + turnover + features
}

/// Fraction of surviving labeled boxes that lost more than [`CORRUPTION_LOSS`] of their points.
fn corruption(old: &HashMap<u64, usize>, after: &Frame) -> f64 {
    let new = interior_counts(after);
    let mut total = 0usize;
    let mut bad = 0usize;
    for (uid, &n_old) in old {
        let Some(&n_new) = new.get(uid) else { continue };
        if n_old == 0 {
            continue;
        }
        total += 1;
        if (n_new as f64) < (1.0 - CORRUPTION_LOSS) * n_old as f64 {
            bad += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        bad as f64 / total as f64
    }
}

/// Frames, exemplar bank and cached interior counts for one proxy seed.
#[derive(Debug, Clone)]
pub struct ProxyData {
    cfg: ProxyConfig,
    seed: u64,
    frames: Vec<Frame>,
    bank: ExemplarBank,
    occupancy: Vec<HashSet<(i64, i64)>>,
    counts: Vec<HashMap<u64, usize>>,
}

impl ProxyData {
    pub fn new(cfg: &ProxyConfig, seed: u64) -> Result<Self, SynthError> {
        let scene = SceneConfig {
            seed,
            ..cfg.scene.clone()
        };
        let frames = generate_dataset(&scene, cfg.frames, "proxy-")?;
        let bank = ExemplarBank::from_frames(&frames, &ClassId::ALL);
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            occupancy: frames.iter().map(occupancy).collect(),
            counts: frames.iter().map(interior_counts).collect(),
            frames,
            bank,
        })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    /// Mean over frames of `diversity - weight * corruption`.
    pub fn score(&self, spec: &PolicySpec, m: f64, p: f64) -> Result<f64, String> {
        let ctx = AugmentContext {
            bank: Some(&self.bank),
            partners: &self.frames,
            geometry: None,
        };
        let root = RngStream::new(self.seed).derive("proxy", 0);
        let scores: Vec<f64> = self
            .frames
            .par_iter()
            .enumerate()
            .map(|(i, f)| {
                let out =
                    apply_pipeline(f.clone(), spec, m, p, &root.derive("frame", i as u64), &ctx)
                        .map_err(|e| e.to_string())?;
                let d = diversity(f, &self.occupancy[i], &out.frame);
                let c = corruption(&self.counts[i], &out.frame);
                Ok(d - self.cfg.corruption_weight * c)
            })
            .collect::<Result<_, String>>()?;
        Ok(scores.iter().sum::<f64>() / scores.len().max(1) as f64)
    }
}

/// Proxy objective at `(m, p)`. Deterministic; higher is better.
pub fn proxy_score_with(
    cfg: &ProxyConfig,
    spec: &PolicySpec,
    m: f64,
    p: f64,
    seed: u64,
) -> Result<f64, String> {
    ProxyData::new(cfg, seed)
        .map_err(|e| e.to_string())?
        .score(spec, m, p)
}

/// [`proxy_score_with`] at the default settings.
pub fn proxy_score(spec: &PolicySpec, m: f64, p: f64, seed: u64) -> Result<f64, String> {
    proxy_score_with(&ProxyConfig::default(), spec, m, p, seed)
}
