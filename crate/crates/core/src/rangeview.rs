//! Coherent point-view / range-view representation.
//!
//! Every point carries the `(row, col)` of the range-image cell it belongs
//! to, so augmented points scatter back to the image without re-projection.
//! When augmentation puts several points on one ray, only the return closest
//! to the sensor survives; the others are occluded.
//!
//! A cell stores the exact Cartesian position of its return, and the cell's
//! range is derived from that position. This makes point → image → point
//! conversion lossless in both directions.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use thiserror::Error;

use crate::geometry::{
    norm, normalize_angle, spherical_from_position, ImageShape, Point, RayIndex,
};

/// Default lidar image size.
pub const DEFAULT_ROWS: u32 = 64;
pub const DEFAULT_COLS: u32 = 2650;
/// Vertical field of view of the default sensor, degrees.
pub const DEFAULT_FOV_DEG: (f64, f64) = (-17.6, 2.4);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RangeViewError {
    #[error("point {0} has no ray index; assign rays before scattering to a range image")]
    MissingRay(usize),
    #[error("point {index} ray ({row}, {col}) is outside the {rows}x{cols} image")]
    RayOutOfBounds {
        index: usize,
        row: u32,
        col: u32,
        rows: u32,
        cols: u32,
    },
    #[error("point {0} is at the sensor origin and has no ray direction")]
    DegenerateRay(usize),
    #[error("invalid range geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid return at ({row}, {col}): {reason}")]
    InvalidReturn { row: u32, col: u32, reason: String },
}

/// Beam layout of a spinning lidar: one inclination per row, uniform azimuth bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeGeometry {
    inclinations: Vec<f64>,
    cols: u32,
    azimuth_origin: f64,
}

impl RangeGeometry {
    /// `inclinations[r]` is the elevation of row `r`; must be strictly monotonic.
    /// Column `c` points at azimuth `azimuth_origin + c * 2pi / cols`.
    pub fn new(
        inclinations: Vec<f64>,
        cols: u32,
        azimuth_origin: f64,
    ) -> Result<Self, RangeViewError> {
        let bad = |msg: String| Err(RangeViewError::InvalidGeometry(msg));
        if inclinations.is_empty() || inclinations.len() > u32::MAX as usize {
            return bad(format!("row count {} out of range", inclinations.len()));
        }
        if cols == 0 {
            return bad("cols must be positive".into());
        }
        if !azimuth_origin.is_finite() {
            return bad("azimuth origin must be finite".into());
        }
        if inclinations
            .iter()
            .any(|t| !t.is_finite() || t.abs() > PI / 2.0)
        {
            return bad("inclinations must be finite and within [-pi/2, pi/2]".into());
        }
        let increasing = inclinations.windows(2).all(|w| w[0] < w[1]);
        let decreasing = inclinations.windows(2).all(|w| w[0] > w[1]);
        if !(increasing || decreasing) {
            return bad("inclination table must be strictly monotonic".into());
        }
        Ok(Self {
            inclinations,
            cols,
            azimuth_origin,
        })
    }

    /// Evenly spaced rows from `top` (row 0) down to `bottom`, in radians.
    pub fn uniform(rows: u32, cols: u32, top: f64, bottom: f64) -> Result<Self, RangeViewError> {
        if rows == 0 {
            return Err(RangeViewError::InvalidGeometry(
                "rows must be positive".into(),
            ));
        }
        let table = if rows == 1 {
            vec![top]
        } else {
            let step = (top - bottom) / f64::from(rows - 1);
            (0..rows).map(|r| top - step * f64::from(r)).collect()
        };
        Self::new(table, cols, 0.0)
    }

    /// Uniform geometry over the default field of view with the given size.
    pub fn standard(shape: ImageShape) -> Result<Self, RangeViewError> {
        let (bottom, top) = DEFAULT_FOV_DEG;
        Self::uniform(
            shape.rows,
            shape.cols,
            top.to_radians(),
            bottom.to_radians(),
        )
    }

    pub fn rows(&self) -> u32 {
        self.inclinations.len() as u32
    }

    pub fn cols(&self) -> u32 {
        self.cols
    }

    pub fn shape(&self) -> ImageShape {
        ImageShape {
            rows: self.rows(),
            cols: self.cols,
        }
    }

    pub fn inclinations(&self) -> &[f64] {
        &self.inclinations
    }

    pub fn azimuth_origin(&self) -> f64 {
        self.azimuth_origin
    }

    fn azimuth_step(&self) -> f64 {
        TAU / f64::from(self.cols)
    }

    pub fn column_azimuth(&self, col: u32) -> f64 {
        normalize_angle(self.azimuth_origin + f64::from(col) * self.azimuth_step())
    }

    /// Unit vector of the beam through cell `(row, col)`.
    pub fn beam_direction(&self, row: u32, col: u32) -> [f64; 3] {
        let (sin_t, cos_t) = self.inclinations[row as usize].sin_cos();
        let (sin_p, cos_p) = self.column_azimuth(col).sin_cos();
        [cos_t * cos_p, cos_t * sin_p, sin_t]
    }

    /// Row whose inclination is closest to `theta`; ties go to the lower row.
    pub fn nearest_row(&self, theta: f64) -> u32 {
        let t = &self.inclinations;
        let ascending = t.len() < 2 || t[0] < t[1];
        // First index on the far side of theta in table order.
        let i = if ascending {
            t.partition_point(|&v| v < theta)
        } else {
            t.partition_point(|&v| v > theta)
        };
        if i == 0 {
            return 0;
        }
        if i == t.len() {
            return (t.len() - 1) as u32;
        }
        if (theta - t[i - 1]).abs() <= (t[i] - theta).abs() {
            (i - 1) as u32
        } else {
            i as u32
        }
    }

    /// Azimuth bin whose center is closest to `phi`. A value exactly between
    /// two bin centers goes to the preceding bin (the lower index, except
    /// across the seam between the last column and column 0).
    pub fn nearest_col(&self, phi: f64) -> u32 {
        let t = (phi - self.azimuth_origin).rem_euclid(TAU) / self.azimuth_step();
        let c = (t - 0.5).ceil();
        if c <= 0.0 || c >= f64::from(self.cols) {
            0
        } else {
            c as u32
        }
    }

    pub fn ray_for_position(&self, position: [f64; 3]) -> Option<RayIndex> {
        let s = spherical_from_position(position).ok()?;
        Some(RayIndex::new(
            self.nearest_row(s.inclination),
            self.nearest_col(s.azimuth),
        ))
    }
}

impl Default for RangeGeometry {
    fn default() -> Self {
        Self::standard(ImageShape {
            rows: DEFAULT_ROWS,
            cols: DEFAULT_COLS,
        })
        .expect("default geometry is valid")
    }
}

/// One return stored in a range-image cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeReturn {
    pub position: [f64; 3],
    pub intensity: f64,
    pub elongation: f64,
}

impl RangeReturn {
    pub fn range(&self) -> f64 {
        norm(self.position)
    }

    fn bit_identical(&self, other: &RangeReturn) -> bool {
        self.position
            .iter()
            .zip(other.position)
            .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.intensity.to_bits() == other.intensity.to_bits()
            && self.elongation.to_bits() == other.elongation.to_bits()
    }
}

/// Row-major grid of at most one return per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    geometry: RangeGeometry,
    cells: Vec<Option<RangeReturn>>,
}

impl RangeImage {
    pub fn new(geometry: RangeGeometry) -> Self {
        let n = geometry.rows() as usize * geometry.cols() as usize;
        Self {
            geometry,
            cells: vec![None; n],
        }
    }

    pub fn geometry(&self) -> &RangeGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> u32 {
        self.geometry.rows()
    }

    pub fn cols(&self) -> u32 {
        self.geometry.cols()
    }

    fn offset(&self, row: u32, col: u32) -> Option<usize> {
        (row < self.rows() && col < self.cols())
            .then(|| row as usize * self.cols() as usize + col as usize)
    }

    pub fn get(&self, row: u32, col: u32) -> Option<&RangeReturn> {
        self.offset(row, col).and_then(|i| self.cells[i].as_ref())
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> &[Option<RangeReturn>] {
        &self.cells
    }

    pub fn occupied(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn set(
        &mut self,
        row: u32,
        col: u32,
        value: Option<RangeReturn>,
    ) -> Result<(), RangeViewError> {
        let invalid = |reason: &str| RangeViewError::InvalidReturn {
            row,
            col,
            reason: reason.to_string(),
        };
        let i = self
            .offset(row, col)
            .ok_or_else(|| invalid("cell out of bounds"))?;
        if let Some(r) = &value {
            let finite = r
                .position
                .iter()
                .chain([&r.intensity, &r.elongation])
                .all(|v| v.is_finite());
            if !finite {
                return Err(invalid("non-finite value"));
            }
            if r.range() <= 0.0 {
                return Err(invalid("range must be positive"));
            }
        }
        self.cells[i] = value;
        Ok(())
    }

    /// Stores a sensor return given as a range along the cell's beam.
    pub fn set_beam_return(
        &mut self,
        row: u32,
        col: u32,
        range: f64,
        intensity: f64,
        elongation: f64,
    ) -> Result<(), RangeViewError> {
        if row >= self.rows() || col >= self.cols() {
            return Err(RangeViewError::InvalidReturn {
                row,
                col,
                reason: "cell out of bounds".into(),
            });
        }
        let dir = self.geometry.beam_direction(row, col);
        let position = dir.map(|d| d * range);
        self.set(
            row,
            col,
            Some(RangeReturn {
                position,
                intensity,
                elongation,
            }),
        )
    }

    /// One point per occupied cell, in row-major order, tagged with its cell.
    pub fn to_points(&self) -> Vec<Point> {
        let cols = self.cols() as usize;
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, c)| {
                c.map(|r| Point {
                    x: r.position[0],
                    y: r.position[1],
                    z: r.position[2],
                    intensity: r.intensity,
                    elongation: r.elongation,
                    ray: Some(RayIndex::new((i / cols) as u32, (i % cols) as u32)),
                })
            })
            .collect()
    }

    /// Scatters points to their carried cells, keeping the closest return per cell.
    pub fn from_points(points: &[Point], geometry: RangeGeometry) -> Result<Self, RangeViewError> {
        Self::scatter(points, geometry).map(|(img, _)| img)
    }

    /// As [`RangeImage::from_points`], also returning how many points were occluded.
    pub fn scatter(
        points: &[Point],
        geometry: RangeGeometry,
    ) -> Result<(Self, usize), RangeViewError> {
        let shape = geometry.shape();
        check_rays(points, Some(shape))?;
        let keep = closest_per_ray(points)?;
        let mut img = RangeImage::new(geometry);
        let mut kept = 0;
        for (p, _) in points.iter().zip(&keep).filter(|(_, k)| **k) {
            let ray = p.ray.expect("checked above");
            img.set(
                ray.row,
                ray.col,
                Some(RangeReturn {
                    position: p.position(),
                    intensity: p.intensity,
                    elongation: p.elongation,
                }),
            )?;
            kept += 1;
        }
        Ok((img, points.len() - kept))
    }

    /// Same geometry and bitwise-equal cells.
    pub fn bit_identical(&self, other: &RangeImage) -> bool {
        self.geometry.cols == other.geometry.cols
            && self.geometry.azimuth_origin.to_bits() == other.geometry.azimuth_origin.to_bits()
            && self.geometry.inclinations.len() == other.geometry.inclinations.len()
            && self
                .geometry
                .inclinations
                .iter()
                .zip(&other.geometry.inclinations)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| match (a, b) {
                    (None, None) => true,
                    (Some(a), Some(b)) => a.bit_identical(b),
                    _ => false,
                })
    }
}

fn check_rays(points: &[Point], shape: Option<ImageShape>) -> Result<(), RangeViewError> {
    for (index, p) in points.iter().enumerate() {
        let ray = p.ray.ok_or(RangeViewError::MissingRay(index))?;
        if let Some(s) = shape {
            if ray.row >= s.rows || ray.col >= s.cols {
                return Err(RangeViewError::RayOutOfBounds {
                    index,
                    row: ray.row,
                    col: ray.col,
                    rows: s.rows,
                    cols: s.cols,
                });
            }
        }
    }
    Ok(())
}

/// Marks, per ray, the earliest point with the smallest range.
fn closest_per_ray(points: &[Point]) -> Result<Vec<bool>, RangeViewError> {
    let mut best: HashMap<RayIndex, (usize, f64)> = HashMap::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let ray = p.ray.ok_or(RangeViewError::MissingRay(i))?;
        let r = p.range();
        best.entry(ray)
            .and_modify(|e| {
                if r < e.1 {
                    *e = (i, r);
                }
            })
            .or_insert((i, r));
    }
    let mut keep = vec![false; points.len()];
    for (i, _) in best.values() {
        keep[*i] = true;
    }
    Ok(keep)
}

/// Gives every unindexed point the cell nearest its direction. Indexed points
/// are left alone.
pub fn assign_rays(
    mut points: Vec<Point>,
    geometry: &RangeGeometry,
) -> Result<Vec<Point>, RangeViewError> {
    for (index, p) in points.iter_mut().enumerate() {
        if p.ray.is_none() {
            p.ray = Some(
                geometry
                    .ray_for_position(p.position())
                    .ok_or(RangeViewError::DegenerateRay(index))?,
            );
        }
    }
    Ok(points)
}

/// Keeps only the closest point on each ray. Exact range ties keep the
/// earliest point; survivors keep their input order.
pub fn resolve_occlusion(points: Vec<Point>) -> Result<Vec<Point>, RangeViewError> {
    let keep = closest_per_ray(&points)?;
    Ok(points
        .into_iter()
        .zip(keep)
        .filter_map(|(p, k)| k.then_some(p))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn tiny_geometry() -> RangeGeometry {
        RangeGeometry::new(vec![0.0, -0.1, -0.2], 8, 0.0).unwrap()
    }

    #[test]
    fn empty_image_gives_no_points() {
        assert!(RangeImage::new(tiny_geometry()).to_points().is_empty());
    }

    #[test]
    fn single_axis_aligned_cell() {
        let mut img = RangeImage::new(tiny_geometry());
        img.set_beam_return(0, 0, 10.0, 0.5, 0.25).unwrap();
        let pts = img.to_points();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].position(), [10.0, 0.0, 0.0]);
        assert_eq!(pts[0].ray, Some(RayIndex::new(0, 0)));
        assert_eq!((pts[0].intensity, pts[0].elongation), (0.5, 0.25));
    }

    #[test]
    fn closest_return_wins_a_conflict() {
        let g = tiny_geometry();
        let far = Point::new(20.0, 0.0, 0.0).with_ray(1, 2);
        let near = Point::new(10.0, 0.0, 0.0).with_ray(1, 2);
        let img = RangeImage::from_points(&[far, near], g).unwrap();
        assert_eq!(img.get(1, 2).unwrap().range(), 10.0);
        assert_eq!(img.occupied(), 1);
    }

    #[test]
    fn scatter_requires_rays() {
        let p = Point::new(1.0, 0.0, 0.0);
        assert_eq!(
            RangeImage::from_points(&[p], tiny_geometry()),
            Err(RangeViewError::MissingRay(0))
        );
        let p = p.with_ray(3, 0);
        assert!(matches!(
            RangeImage::from_points(&[p], tiny_geometry()),
            Err(RangeViewError::RayOutOfBounds { .. })
        ));
    }

    #[test]
    fn geometry_validation() {
        assert!(RangeGeometry::new(vec![], 4, 0.0).is_err());
        assert!(RangeGeometry::new(vec![0.1], 0, 0.0).is_err());
        assert!(RangeGeometry::new(vec![0.1, 0.1], 4, 0.0).is_err());
        assert!(RangeGeometry::new(vec![0.1, 0.2, 0.15], 4, 0.0).is_err());
        assert!(RangeGeometry::new(vec![0.1, 0.2, 0.3], 4, 0.0).is_ok());
        let d = RangeGeometry::default();
        assert_eq!((d.rows(), d.cols()), (64, 2650));
    }

    #[test]
    fn assign_leaves_indexed_points_untouched() {
        let g = tiny_geometry();
        let p = Point::new(0.0, 5.0, 0.0).with_ray(2, 7);
        assert_eq!(
            assign_rays(vec![p], &g).unwrap()[0].ray,
            Some(RayIndex::new(2, 7))
        );
    }

    #[test]
    fn assign_rejects_origin() {
        assert_eq!(
            assign_rays(vec![Point::new(0.0, 0.0, 0.0)], &tiny_geometry()),
            Err(RangeViewError::DegenerateRay(0))
        );
    }

    #[test]
    fn azimuth_tie_goes_to_lower_bin() {
        let g = RangeGeometry::new(vec![0.0], 4, 0.0).unwrap();
        // Bin centers at 0, pi/2, pi, 3pi/2.
        assert_eq!(g.nearest_col(PI / 4.0), 0);
        assert_eq!(g.nearest_col(3.0 * PI / 4.0), 1);
        assert_eq!(g.nearest_col(PI / 4.0 + 1e-9), 1);
        assert_eq!(g.nearest_col(-PI / 4.0 + 1e-9), 0);
        assert_eq!(g.nearest_col(-PI / 4.0 - 1e-9), 3);
        assert_eq!(g.nearest_col(PI), 2);
    }

    #[test]
    fn inclination_tie_goes_to_lower_row() {
        let g = RangeGeometry::new(vec![0.5, 0.25, 0.0], 4, 0.0).unwrap();
        assert_eq!(g.nearest_row(0.375), 0);
        assert_eq!(g.nearest_row(0.125), 1);
        let g = RangeGeometry::new(vec![0.0, 0.25, 0.5], 4, 0.0).unwrap();
        assert_eq!(g.nearest_row(0.125), 0);
        assert_eq!(g.nearest_row(-1.0), 0);
        assert_eq!(g.nearest_row(1.0), 2);
    }

    #[test]
    fn nearest_row_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for descending in [false, true] {
            let mut table: Vec<f64> = (0..40).map(|_| rng.random_range(-0.4..0.2)).collect();
            table.sort_by(|a, b| a.partial_cmp(b).unwrap());
            table.dedup();
            if descending {
                table.reverse();
            }
            let g = RangeGeometry::new(table.clone(), 16, 0.0).unwrap();
            for _ in 0..5000 {
                let theta: f64 = rng.random_range(-0.6..0.4);
                let mut best = 0usize;
                for (r, v) in table.iter().enumerate() {
                    if (theta - v).abs() < (theta - table[best]).abs() {
                        best = r;
                    }
                }
                let got = g.nearest_row(theta) as usize;
                assert!(
                    (theta - table[got]).abs() == (theta - table[best]).abs(),
                    "theta {theta}: got row {got}, scan row {best}"
                );
            }
        }
    }

    #[test]
    fn wall_behind_pasted_car_is_removed() {
        // A wall at 20 m and a car at 10 m share three rays.
        let wall: Vec<Point> = (0..6)
            .map(|c| Point::new(20.0, c as f64, 0.0).with_ray(0, c))
            .collect();
        let car: Vec<Point> = (2..5)
            .map(|c| Point::new(10.0, c as f64 / 2.0, 0.0).with_ray(0, c))
            .collect();
        let all: Vec<Point> = wall.iter().chain(&car).copied().collect();
        let out = resolve_occlusion(all).unwrap();
        assert_eq!(out.len(), 6);
        let cols: Vec<u32> = out.iter().map(|p| p.ray.unwrap().col).collect();
        assert_eq!(cols, vec![0, 1, 5, 2, 3, 4]);
        assert!(out[3..].iter().all(|p| p.x == 10.0));
    }

    #[test]
    fn resolve_keeps_distinct_rays_and_requires_indices() {
        let pts: Vec<Point> = (0..5)
            .map(|c| Point::new(1.0 + c as f64, 0.0, 0.0).with_ray(0, c))
            .collect();
        assert_eq!(resolve_occlusion(pts.clone()).unwrap(), pts);
        assert_eq!(
            resolve_occlusion(vec![Point::new(1.0, 0.0, 0.0)]),
            Err(RangeViewError::MissingRay(0))
        );
    }

    /// Independent group-by-min oracle: sort candidates per ray, pick (range, position).
    fn occlusion_oracle(points: &[Point]) -> Vec<Point> {
        let mut groups: BTreeMap<RayIndex, Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            groups.entry(p.ray.unwrap()).or_default().push(i);
        }
        let mut winners: Vec<usize> = groups
            .values()
            .map(|idx| {
                *idx.iter()
                    .min_by(|&&a, &&b| {
                        points[a]
                            .range()
                            .partial_cmp(&points[b].range())
                            .unwrap()
                            .then(a.cmp(&b))
                    })
                    .unwrap()
            })
            .collect();
        winners.sort_unstable();
        winners.into_iter().map(|i| points[i]).collect()
    }

    #[test]
    fn resolve_matches_oracle_with_exact_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut pts = Vec::new();
        for _ in 0..10_000 {
            let row = rng.random_range(0..8);
            let col = rng.random_range(0..16);
            // Coarse ranges guarantee plenty of exact ties.
            let r = f64::from(rng.random_range(1..6u32));
            pts.push(
                Point::new(r, 0.0, 0.0)
                    .with_features(rng.random(), 0.0)
                    .with_ray(row, col),
            );
        }
        assert_eq!(
            resolve_occlusion(pts.clone()).unwrap(),
            occlusion_oracle(&pts)
        );
    }

    fn random_image(rng: &mut ChaCha8Rng) -> RangeImage {
        let rows = rng.random_range(1..6);
        let cols = rng.random_range(1..12);
        let g = RangeGeometry::uniform(rows, cols, 0.05, -0.3).unwrap();
        let mut img = RangeImage::new(g);
        for r in 0..rows {
            for c in 0..cols {
                if rng.random_bool(0.6) {
                    img.set_beam_return(
                        r,
                        c,
                        rng.random_range(0.5..80.0),
                        rng.random(),
                        rng.random(),
                    )
                    .unwrap();
                }
            }
        }
        img
    }

    #[test]
    fn image_point_image_roundtrip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let img = random_image(&mut rng);
            let back = RangeImage::from_points(&img.to_points(), img.geometry().clone()).unwrap();
            assert!(back.bit_identical(&img));
        }
    }

    proptest! {
        #[test]
        fn resolve_is_idempotent_subset_without_duplicates(
            raw in proptest::collection::vec((0u32..4, 0u32..6, 1u32..50), 0..200)
        ) {
            let pts: Vec<Point> = raw.iter().map(|&(r, c, d)| Point::new(f64::from(d) / 3.0, 0.0, 0.0).with_ray(r, c)).collect();
            let once = resolve_occlusion(pts.clone()).unwrap();
            let twice = resolve_occlusion(once.clone()).unwrap();
            prop_assert_eq!(&once, &twice);
            let mut rays: Vec<RayIndex> = once.iter().map(|p| p.ray.unwrap()).collect();
            let n = rays.len();
            rays.sort();
            rays.dedup();
            prop_assert_eq!(rays.len(), n);
            // Subset, in order.
            let mut it = pts.iter();
            for p in &once {
                prop_assert!(it.any(|q| q.bit_identical(p)));
            }
        }
    }
}
