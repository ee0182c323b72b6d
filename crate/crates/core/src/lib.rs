//! Lidar point-cloud augmentation with a two-knob search space.
//!
//! The crate provides ten frame-level augmentations (global rotate, scale,
//! translate, flip and drop; frustum drop and noise; drop box, paste box and
//! swap background), a range-view projection that keeps point and range
//! representations coherent, and a normalized policy space in which every
//! augmentation parameter is a clipped linear function of a global magnitude
//! `m` or probability `p`.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: points, oriented boxes, frames, spherical coordinates.
//! - [`rng`]: splittable, path-addressed random streams.
//! - [`rangeview`]: point cloud / range image conversion and occlusion.
//! - [`ops`]: the ten augmentations.
//! - [`policy`]: formulas, resolution of `(m, p)`, the full pipeline.
//! - [`tune`]: per-op alignment and the joint `(m, p)` grid search.
//! - [`synth`]: synthetic scenes and the proxy evaluator.
//! - [`format`]: text file formats for frames, banks, range images.

pub mod exact;
pub mod format;
pub mod geometry;
pub mod ops;
pub mod policy;
pub mod rangeview;
pub mod rng;
pub mod synth;
pub mod tune;

pub use geometry::{Box3D, ClassId, Frame, ImageShape, Point, RayIndex, Spherical};
pub use policy::{default_policy, resolve, PolicySpec, ResolvedPolicy};
pub use rangeview::{RangeGeometry, RangeImage};
pub use rng::RngStream;
