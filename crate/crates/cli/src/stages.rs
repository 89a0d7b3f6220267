//! One function per workflow stage. The subcommands and `pipeline` call the
//! same functions, so a pipeline run writes the same bytes as running the
//! stages one by one.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use resseg::components::{postprocess_stages, PostprocessParams};
use resseg::io::{
    read_mask, read_prob_map, read_raster, write_atomic, write_mask, write_prob_map, write_raster,
};
use resseg::metrics::{class_report, format_json_lines, format_tsv, region_report, ClassReport};
use resseg::roiar::{apply_roi, extract_roi, RoiSpec};
use resseg::tiling::{assemble, extract_patches, patch_id, PatchGrid};
use resseg::trainer::{
    format_history, train_with, SegmenterBackend, TinyFcn, TrainConfig, TrainItem, TrainOutcome,
};
use resseg::{BinaryMask, GeoMeta, ProbMap};
use serde::{Deserialize, Serialize};

pub const MANIFEST: &str = "manifest.json";
pub const MOSAIC_MAP: &str = "mosaic.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEntry {
    pub id: String,
    pub origin_row: usize,
    pub origin_col: usize,
    pub valid_height: usize,
    pub valid_width: usize,
}

/// Layout of a tiled mosaic; origins are relative to the mosaic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mosaic_height: usize,
    pub mosaic_width: usize,
    pub channels: usize,
    pub meta: GeoMeta,
    pub patch_height: usize,
    pub patch_width: usize,
    pub patches: Vec<PatchEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| resseg::Error::Io {
            path: path.clone(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| {
            resseg::Error::Parse {
                offset: 0,
                msg: format!("{}: {e}", path.display()),
            }
            .into()
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        resseg::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn patch_file(dir: &Path, id: &str, ext: &str) -> PathBuf {
    dir.join(format!("{id}.{ext}"))
}

/// Cuts `input` into `ph×pw` patches under `out` and writes the manifest.
pub fn tile(input: &Path, ph: usize, pw: usize, out: &Path) -> Result<Manifest> {
    let raster = read_raster(input).with_context(|| format!("reading {}", input.display()))?;
    let layout = PatchGrid::new(raster.height(), raster.width(), ph, pw)?;
    let patches = extract_patches(&raster, ph, pw)?;
    create_dir(out)?;
    let base = raster.meta();
    let entries = patches
        .par_iter()
        .map(|patch| {
            let id = patch_id(&patch.meta());
            write_raster(patch, &patch_file(out, &id, "pnm"))?;
            let origin = (
                patch.meta().origin_row - base.origin_row,
                patch.meta().origin_col - base.origin_col,
            );
            let (valid_height, valid_width) = layout.valid_extent(origin);
            Ok(PatchEntry {
                id,
                origin_row: origin.0,
                origin_col: origin.1,
                valid_height,
                valid_width,
            })
        })
        .collect::<resseg::Result<Vec<_>>>()?;
    let manifest = Manifest {
        mosaic_height: raster.height(),
        mosaic_width: raster.width(),
        channels: raster.channels(),
        meta: base,
        patch_height: ph,
        patch_width: pw,
        patches: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&out.join(MANIFEST), text.as_bytes())?;
    info!(
        "{}: {} patches of {ph}x{pw} in {}",
        input.display(),
        manifest.patches.len(),
        out.display()
    );
    Ok(manifest)
}

/// Predicts every patch listed in `tiles/manifest.json`, writes one map per
/// patch and the assembled `mosaic.f32` under `out`. Padding gets probability 0.
pub fn predict(backend: &dyn SegmenterBackend, tiles: &Path, out: &Path) -> Result<ProbMap> {
    let manifest = Manifest::read(tiles)?;
    create_dir(out)?;
    let (ph, pw) = (manifest.patch_height, manifest.patch_width);
    let maps = manifest
        .patches
        .par_iter()
        .map(|entry| {
            let patch = read_raster(&patch_file(tiles, &entry.id, "pnm"))?;
            if (patch.height(), patch.width()) != (ph, pw) {
                return Err(resseg::Error::DimensionMismatch {
                    expected: (ph, pw),
                    got: (patch.height(), patch.width()),
                });
            }
            let map = backend.predict(&patch)?;
            if map.dims() != (ph, pw) {
                return Err(resseg::Error::DimensionMismatch {
                    expected: (ph, pw),
                    got: map.dims(),
                });
            }
            let mut probs = map.probs().to_vec();
            for r in 0..ph {
                for c in 0..pw {
                    if r >= entry.valid_height || c >= entry.valid_width {
                        probs[r * pw + c] = 0.0;
                    }
                }
            }
            let map = ProbMap::new(ph, pw, probs, patch.meta())?;
            write_prob_map(&map, &patch_file(out, &entry.id, "f32"))?;
            Ok(map)
        })
        .collect::<resseg::Result<Vec<_>>>()?;
    let mosaic = assemble(
        &maps,
        manifest.mosaic_height,
        manifest.mosaic_width,
        manifest.meta,
    )?;
    write_prob_map(&mosaic, &out.join(MOSAIC_MAP))?;
    info!("predicted {} patches into {}", maps.len(), out.display());
    Ok(mosaic)
}

/// Runs the reservoir clean-up chain on a probability map. With `within`, the
/// result is restricted to that mask. `debug` receives every intermediate map.
pub fn postprocess(
    probs: &Path,
    params: &PostprocessParams,
    within: Option<&Path>,
    out: &Path,
    debug: Option<&Path>,
) -> Result<BinaryMask> {
    let map = read_prob_map(probs).with_context(|| format!("reading {}", probs.display()))?;
    let stages = postprocess_stages(&map, map.meta(), params)?;
    let mut result = stages.result().clone();
    if let Some(path) = within {
        result = result.and(&read_mask(path)?)?;
    }
    write_mask(&result, out)?;
    if let Some(dir) = debug {
        create_dir(dir)?;
        for (k, (name, mask)) in stages.named().into_iter().enumerate() {
            write_mask(mask, &dir.join(format!("{}_{name}.pgm", k + 1)))?;
        }
    }
    info!(
        "{}: {} of {} pixels kept after post-processing",
        out.display(),
        result.count(),
        result.bits().len()
    );
    Ok(result)
}

/// Region of interest around a reservoir mask; optionally also blanks the
/// mosaic outside it.
pub fn roiar(
    reservoir: &Path,
    spec: &RoiSpec,
    out: &Path,
    masked: Option<(&Path, &Path, u8)>,
) -> Result<BinaryMask> {
    let mask = read_mask(reservoir).with_context(|| format!("reading {}", reservoir.display()))?;
    if mask.is_empty() {
        warn!(
            "{}: reservoir mask is empty, the region of interest will be empty",
            reservoir.display()
        );
    }
    let roi = extract_roi(&mask, spec)?;
    write_mask(&roi, out)?;
    if let Some((mosaic, masked_out, fill)) = masked {
        let raster =
            read_raster(mosaic).with_context(|| format!("reading {}", mosaic.display()))?;
        write_raster(&apply_roi(&raster, &roi, fill)?, masked_out)?;
    }
    Ok(roi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Tsv,
    JsonLines,
}

/// Scores `pred` against `gt` over `scope`, overall and per region label.
pub fn evaluate(
    pred: &Path,
    gt: &Path,
    scope: Option<&Path>,
    regions: Option<&Path>,
    names: [&str; 2],
    format: ReportFormat,
) -> Result<String> {
    let pred = read_mask(pred)?;
    let gt = read_mask(gt)?;
    let scope = scope.map(read_mask).transpose()?;
    let mut reports: Vec<(String, ClassReport)> = vec![(
        "all".into(),
        class_report(&pred, &gt, scope.as_ref(), names)?,
    )];
    if let Some(path) = regions {
        let regions = read_raster(path)?;
        for (label, rep) in region_report(&pred, &gt, &regions, scope.as_ref(), names)? {
            reports.push((label.to_string(), rep));
        }
    }
    Ok(match format {
        ReportFormat::Tsv => format_tsv(&reports),
        ReportFormat::JsonLines => format_json_lines(&reports),
    })
}

/// Training items from `<dir>/images/*.pnm` with labels in
/// `<dir>/labels/<stem>.pgm` and optional validity masks in
/// `<dir>/valid/<stem>.pgm`, in file-name order.
pub fn load_items(dir: &Path) -> Result<Vec<TrainItem>> {
    let images = dir.join("images");
    let listing = fs::read_dir(&images).map_err(|e| resseg::Error::Io {
        path: images.clone(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = listing
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pnm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(resseg::Error::Validation {
            what: "dataset",
            msg: format!("no .pnm images in {}", images.display()),
        }
        .into());
    }
    paths
        .iter()
        .map(|img| {
            let stem = img
                .file_stem()
                .expect("listed files have names")
                .to_string_lossy()
                .into_owned();
            let raster = read_raster(img)?;
            let mask = read_mask(&dir.join("labels").join(format!("{stem}.pgm")))?;
            let valid_path = dir.join("valid").join(format!("{stem}.pgm"));
            let valid = if valid_path.is_file() {
                Some(read_mask(&valid_path)?)
            } else {
                None
            };
            Ok(TrainItem::new(raster, mask, valid)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: resseg::trainer::DEFAULT_WIDTHS.to_vec(),
            seed: 0,
        }
    }
}

pub fn train(
    cfg: &TrainConfig,
    model: &ModelConfig,
    train_dir: &Path,
    val_dir: &Path,
    out: &Path,
    history: &Path,
) -> Result<TrainOutcome> {
    let train_set = load_items(train_dir)?;
    let val_set = load_items(val_dir)?;
    info!(
        "training on {} patches, validating on {}",
        train_set.len(),
        val_set.len()
    );
    let net = TinyFcn::new(&model.widths, model.seed)?;
    let outcome = train_with(net, &train_set, &val_set, cfg, |row| {
        info!(
            "epoch {} train {:.6} val {:.6} lr {:e}",
            row.epoch, row.train_loss, row.val_loss, row.lr
        );
    })?;
    outcome.model.save(out)?;
    write_atomic(history, format_history(&outcome.history).as_bytes())?;
    if outcome.stopped_early {
        info!("stopped early after {} epochs", outcome.history.len());
    }
    Ok(outcome)
}
