//! Two-phase segmentation workflow for man-made objects around reservoirs.
//!
//! Phase 1 segments the reservoir from tiled mosaics and cleans the map with
//! morphology and object-level rules ([`components::postprocess_reservoir`]).
//! The region of interest around the reservoir is then cut out
//! ([`roiar`]) and phase 2 segments man-made objects inside it. Losses,
//! metrics and a small fully-convolutional training harness support both
//! phases.

pub mod components;
pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod morphology;
pub mod raster;
pub mod roiar;
pub mod synthetic;
pub mod tiling;
pub mod trainer;

pub use error::{Error, Result};
pub use raster::{threshold, BinaryMask, GeoMeta, Grid, ProbMap, Raster};
