//! Promptable 3D segmentation by multi-axis slicing.
//!
//! Sparse 3D polylines are intersected with slice planes taken along several
//! rotationally spread axes; each prompted slice goes to a 2D promptable
//! segmenter; the 2D masks are turned back into 3D points and voted into a
//! voxel mask, so that a mistake on one slice is outvoted by the other axes.

pub mod backends;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod recompose;
pub mod slicing;
pub mod volume;

pub use error::{Error, Result};
