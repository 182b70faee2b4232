//! Individual tree segmentation for discrete-return airborne LiDAR.
//!
//! - [`cloud`], [`dem`], [`grid`], [`geom`]: point-cloud primitives, height
//!   normalization, surface point extraction and smoothing.
//! - [`treeseg`]: profile-based crown segmentation of a single canopy layer.
//! - [`strata`]: vertical canopy stratification into layers.
//! - [`occlusion`]: layer density fractions and the logarithmic-series model
//!   of how point density decays with canopy depth.
//! - [`eval`]: matching crowns to field stems and accuracy metrics.
//! - [`dist`]: master/worker tiled segmentation with boundary unification.
//! - [`forge`]: synthetic forests with ground truth.
//! - [`io`]: text formats for clouds, DEMs, crowns, stems and layouts.

pub mod cloud;
pub mod dem;
pub mod dist;
pub mod error;
pub mod eval;
pub mod forge;
pub mod geom;
pub mod grid;
pub mod io;
pub mod occlusion;
pub mod pipeline;
pub mod strata;
pub mod treeseg;

pub use error::{Error, Result};
