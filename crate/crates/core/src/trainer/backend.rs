//! Segmenter backends and tiled inference over a mosaic.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{ProbMap, Raster};
use crate::tiling::{assemble, extract_patches, patch_id, PatchGrid};

use super::model::TinyFcn;

/// Anything that turns a patch into a same-sized probability map.
pub trait SegmenterBackend: Sync {
    fn predict(&self, patch: &Raster) -> Result<ProbMap>;
}

impl SegmenterBackend for TinyFcn {
    fn predict(&self, patch: &Raster) -> Result<ProbMap> {
        self.predict_map(patch)
    }
}

/// Returns the same probability everywhere.
#[derive(Debug, Clone, Copy)]
pub struct ConstantBackend(pub f32);

impl SegmenterBackend for ConstantBackend {
    fn predict(&self, patch: &Raster) -> Result<ProbMap> {
        ProbMap::filled(patch.height(), patch.width(), self.0, patch.meta())
    }
}

/// Per-pixel mean intensity scaled to [0, 1]; optionally inverted so dark
/// pixels (water) score high.
#[derive(Debug, Clone, Copy)]
pub struct IntensityBackend {
    pub invert: bool,
}

impl SegmenterBackend for IntensityBackend {
    fn predict(&self, patch: &Raster) -> Result<ProbMap> {
        let c = patch.channels();
        let probs = patch
            .data()
            .chunks_exact(c)
            .map(|px| {
                let mean = px.iter().map(|&v| v as f32).sum::<f32>() / (255.0 * c as f32);
                if self.invert {
                    1.0 - mean
                } else {
                    mean
                }
            })
            .collect();
        ProbMap::new(patch.height(), patch.width(), probs, patch.meta())
    }
}

/// Reads precomputed maps `<dir>/<patch id>.f32` (little-endian f32, patch
/// dimensions, row-major) produced by an external model.
#[derive(Debug, Clone)]
pub struct ExternalBackend {
    dir: PathBuf,
}

impl ExternalBackend {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ExternalBackend { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl SegmenterBackend for ExternalBackend {
    fn predict(&self, patch: &Raster) -> Result<ProbMap> {
        let id = patch_id(&patch.meta());
        let path = self.dir.join(format!("{id}.f32"));
        if !path.is_file() {
            return Err(Error::UnknownId(format!(
                "patch {id}: no map at {}",
                path.display()
            )));
        }
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let (h, w) = (patch.height(), patch.width());
        if bytes.len() != h * w * 4 {
            return Err(Error::invalid(
                "external map",
                format!(
                    "patch {id}: {} holds {} bytes, expected {} for {h}x{w}",
                    path.display(),
                    bytes.len(),
                    h * w * 4
                ),
            ));
        }
        let probs = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        ProbMap::new(h, w, probs, patch.meta())
    }
}

/// Predicts each `ph×pw` patch of `mosaic` and reassembles the mosaic map.
/// Zero-padded patch areas are set to probability 0 before assembly.
pub fn predict_patches(
    backend: &dyn SegmenterBackend,
    mosaic: &Raster,
    ph: usize,
    pw: usize,
) -> Result<Vec<ProbMap>> {
    let layout = PatchGrid::new(mosaic.height(), mosaic.width(), ph, pw)?;
    let base = mosaic.meta();
    let patches = extract_patches(mosaic, ph, pw)?;
    patches
        .par_iter()
        .map(|patch| {
            let map = backend.predict(patch)?;
            if map.dims() != (ph, pw) {
                return Err(Error::DimensionMismatch {
                    expected: (ph, pw),
                    got: map.dims(),
                });
            }
            let meta = patch.meta();
            let origin = (
                meta.origin_row - base.origin_row,
                meta.origin_col - base.origin_col,
            );
            let (vh, vw) = layout.valid_extent(origin);
            let mut probs = map.probs().to_vec();
            for r in 0..ph {
                for c in 0..pw {
                    if r >= vh || c >= vw {
                        probs[r * pw + c] = 0.0;
                    }
                }
            }
            ProbMap::new(ph, pw, probs, meta)
        })
        .collect()
}

pub fn predict_tiled(
    backend: &dyn SegmenterBackend,
    mosaic: &Raster,
    ph: usize,
    pw: usize,
) -> Result<ProbMap> {
    let maps = predict_patches(backend, mosaic, ph, pw)?;
    assemble(&maps, mosaic.height(), mosaic.width(), mosaic.meta())
}
