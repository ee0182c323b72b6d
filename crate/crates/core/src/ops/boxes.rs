use rand::seq::index::sample;
use rand::Rng;

use super::{
    check_probability, gate, Applied, BoxCounts, FireTag, OpError, OpKind, SwapBackground,
};
use crate::geometry::{Box3D, ClassId, Frame, Point};
use crate::rangeview::{assign_rays, resolve_occlusion, RangeGeometry};
use crate::rng::RngStream;

/// Placement attempts per requested paste before giving up on that box.
pub const MAX_PASTE_ATTEMPTS: usize = 20;

/// A labeled object cut out of some frame, ready to be pasted elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectExemplar {
    /// Pose in the source frame; pasting reuses it.
    pub bbox: Box3D,
    /// Points in the box's local frame, without ray indices.
    pub points: Vec<Point>,
    pub source_frame_id: String,
}

impl ObjectExemplar {
    /// Cuts the points inside `bbox` out of `frame`.
    pub fn extract(frame: &Frame, bbox: &Box3D) -> Self {
        let points = frame
            .points
            .iter()
            .filter(|p| bbox.contains(p))
            .map(|p| {
                let mut q = *p;
                q.set_position(bbox.to_local(p.position()));
                q.ray = None;
                q
            })
            .collect();
        Self {
            bbox: *bbox,
            points,
            source_frame_id: frame.frame_id.clone(),
        }
    }

    /// Points transformed to world coordinates at `pose`.
    pub fn placed_points(&self, pose: &Box3D) -> Vec<Point> {
        self.points
            .iter()
            .map(|p| {
                let mut q = *p;
                q.set_position(pose.to_world(p.position()));
                q
            })
            .collect()
    }
}

/// Exemplars available to paste box, in a fixed order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExemplarBank {
    pub exemplars: Vec<ObjectExemplar>,
}

impl ExemplarBank {
    pub fn new(exemplars: Vec<ObjectExemplar>) -> Self {
        Self { exemplars }
    }

    /// Every box of the requested classes, frame by frame, box by box.
    pub fn from_frames<'a>(
        frames: impl IntoIterator<Item = &'a Frame>,
        classes: &[ClassId],
    ) -> Self {
        let exemplars = frames
            .into_iter()
            .flat_map(|f| {
                f.boxes
                    .iter()
                    .filter(|b| classes.contains(&b.class))
                    .map(move |b| ObjectExemplar::extract(f, b))
            })
            .collect();
        Self { exemplars }
    }

    pub fn of_class(&self, class: ClassId) -> Vec<&ObjectExemplar> {
        self.exemplars
            .iter()
            .filter(|e| e.bbox.class == class)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.exemplars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exemplars.is_empty()
    }
}

fn check_counts(op: OpKind, params: &BoxCounts) -> Result<(), OpError> {
    params
        .per_class
        .values()
        .try_for_each(|c| check_probability(op, c.probability))
}

/// Gives every unindexed point a ray and keeps the nearest return per ray.
fn settle_rays(frame: &mut Frame, geometry: Option<&RangeGeometry>) -> Result<(), OpError> {
    let Some(g) = geometry else {
        return Ok(());
    };
    frame.range_shape = Some(g.shape());
    let points = assign_rays(std::mem::take(&mut frame.points), g)?;
    frame.points = resolve_occlusion(points)?;
    Ok(())
}

/// Removes up to `count` boxes per class, chosen uniformly without
/// replacement, together with every point inside them.
pub fn drop_box(
    mut frame: Frame,
    params: &BoxCounts,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::DropBox;
    check_counts(op, params)?;
    let mut fires = Vec::new();
    let mut removed = vec![false; frame.boxes.len()];
    for (&class, cp) in &params.per_class {
        if !gate(stream, class.index(), cp.probability) {
            continue;
        }
        fires.push(FireTag {
            op,
            class: Some(class),
        });
        let candidates: Vec<usize> = (0..frame.boxes.len())
            .filter(|&i| frame.boxes[i].class == class)
            .collect();
        let k = (cp.count as usize).min(candidates.len());
        let mut rng = stream.derive("select", class.index()).rng();
        for j in sample(&mut rng, candidates.len(), k) {
            removed[candidates[j]] = true;
        }
    }
    if removed.iter().any(|&r| r) {
        let gone: Vec<Box3D> = frame
            .boxes
            .iter()
            .zip(&removed)
            .filter_map(|(b, &r)| r.then_some(*b))
            .collect();
        frame.points.retain(|p| !gone.iter().any(|b| b.contains(p)));
        let mut flags = removed.iter();
        frame.boxes.retain(|_| !*flags.next().unwrap());
    }
    Ok(Applied { frame, fires })
}

/// Pastes up to `count` exemplars per class at their recorded poses.
///
/// A placement whose footprint overlaps an existing box is rejected and a new
/// exemplar drawn, up to [`MAX_PASTE_ATTEMPTS`] times. Scene points inside an
/// accepted box are removed. With a geometry, pasted points get ray indices
/// and occluded returns are dropped.
pub fn paste_box(
    mut frame: Frame,
    bank: &ExemplarBank,
    params: &BoxCounts,
    geometry: Option<&RangeGeometry>,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::PasteBox;
    check_counts(op, params)?;
    for (&class, cp) in &params.per_class {
        if cp.probability > 0.0 && cp.count > 0 && bank.of_class(class).is_empty() {
            return Err(OpError::EmptyBank(class));
        }
    }
    let mut fires = Vec::new();
    let mut pasted_any = false;
    for (&class, cp) in &params.per_class {
        if !gate(stream, class.index(), cp.probability) {
            continue;
        }
        fires.push(FireTag {
            op,
            class: Some(class),
        });
        let pool = bank.of_class(class);
        if pool.is_empty() {
            continue;
        }
        let mut rng = stream.derive("pick", class.index()).rng();
        for _ in 0..cp.count {
            for _ in 0..MAX_PASTE_ATTEMPTS {
                let ex = pool[rng.random_range(0..pool.len())];
                let mut pose = ex.bbox;
                if frame.boxes.iter().any(|b| b.bev_overlaps(&pose)) {
                    continue;
                }
                pose.uid = frame.next_box_uid();
                frame.points.retain(|p| !pose.contains(p));
                frame
                    .points
                    .extend(ex.placed_points(&pose).into_iter().map(|mut p| {
                        p.ray = None;
                        p
                    }));
                frame.boxes.push(pose);
                pasted_any = true;
                break;
            }
        }
    }
    if pasted_any {
        settle_rays(&mut frame, geometry)?;
    }
    Ok(Applied { frame, fires })
}

/// Keeps `frame`'s boxes and the points inside them, and replaces the rest
/// with `partner`'s background (its points outside all of its boxes).
/// Partner points that would land inside one of `frame`'s boxes are dropped.
pub fn swap_background(
    frame: Frame,
    partner: &Frame,
    params: &SwapBackground,
    geometry: Option<&RangeGeometry>,
    stream: &RngStream,
) -> Result<Applied, OpError> {
    let op = OpKind::SwapBackground;
    check_probability(op, params.probability)?;
    if !gate(stream, 0, params.probability) {
        return Ok(Applied::unchanged(frame));
    }
    let same_sensor = partner.range_shape == frame.range_shape;
    let mut out = frame;
    let boxes = out.boxes.clone();
    out.points.retain(|p| boxes.iter().any(|b| b.contains(p)));
    out.points.extend(
        partner
            .points
            .iter()
            .filter(|p| {
                !partner.boxes.iter().any(|b| b.contains(p)) && !boxes.iter().any(|b| b.contains(p))
            })
            .map(|p| {
                let mut q = *p;
                if !same_sensor {
                    q.ray = None;
                }
                q
            }),
    );
    settle_rays(&mut out, geometry)?;
    Ok(Applied::fired(out, op))
}
