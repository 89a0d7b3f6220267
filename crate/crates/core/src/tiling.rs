//! Non-overlapping tiling of mosaics into fixed-size patches, reassembly,
//! dataset splitting, oversampling and flip augmentation.
//!
//! Edge patches are zero-padded to the full patch size. Each patch records its
//! absolute position in the mosaic through [`GeoMeta`] `origin_row/origin_col`;
//! [`valid_mask`] marks the non-padded part.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GeoMeta, Grid};

/// Layout of a non-overlapping tiling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_height: usize,
    pub patch_width: usize,
    pub mosaic_height: usize,
    pub mosaic_width: usize,
}

impl PatchGrid {
    pub fn new(
        mosaic_height: usize,
        mosaic_width: usize,
        patch_height: usize,
        patch_width: usize,
    ) -> Result<Self> {
        if patch_height == 0 || patch_width == 0 {
            return Err(Error::invalid(
                "patch size",
                format!("patch sides must be positive, got {patch_height}x{patch_width}"),
            ));
        }
        if mosaic_height == 0 || mosaic_width == 0 {
            return Err(Error::invalid("mosaic size", "mosaic must be non-empty"));
        }
        Ok(PatchGrid {
            patch_height,
            patch_width,
            mosaic_height,
            mosaic_width,
        })
    }

    pub fn rows(&self) -> usize {
        self.mosaic_height.div_ceil(self.patch_height)
    }

    pub fn cols(&self) -> usize {
        self.mosaic_width.div_ceil(self.patch_width)
    }

    /// Patch origins (relative to the mosaic) in row-major order.
    pub fn origins(&self) -> Vec<(usize, usize)> {
        (0..self.rows())
            .flat_map(|i| {
                (0..self.cols()).map(move |j| (i * self.patch_height, j * self.patch_width))
            })
            .collect()
    }

    /// Size of the real (non-padded) content of the patch at `origin`.
    pub fn valid_extent(&self, origin: (usize, usize)) -> (usize, usize) {
        (
            self.patch_height.min(self.mosaic_height - origin.0),
            self.patch_width.min(self.mosaic_width - origin.1),
        )
    }
}

/// Stable identifier of a patch derived from its absolute origin.
pub fn patch_id(meta: &GeoMeta) -> String {
    format!("r{}_c{}", meta.origin_row, meta.origin_col)
}

/// Cuts `grid` into `ph×pw` patches. Patch metadata carries the absolute
/// origin (the mosaic's own origin plus the patch offset).
pub fn extract_patches<G: Grid>(grid: &G, ph: usize, pw: usize) -> Result<Vec<G>> {
    let layout = PatchGrid::new(grid.grid_height(), grid.grid_width(), ph, pw)?;
    let spp = grid.samples_per_pixel();
    let base = grid.grid_meta();
    let src = grid.samples();
    let w = grid.grid_width();
    layout
        .origins()
        .into_iter()
        .map(|(r0, c0)| {
            let (vh, vw) = layout.valid_extent((r0, c0));
            let mut samples = vec![G::Sample::default(); ph * pw * spp];
            for r in 0..vh {
                let from = ((r0 + r) * w + c0) * spp;
                samples[r * pw * spp..(r * pw + vw) * spp]
                    .copy_from_slice(&src[from..from + vw * spp]);
            }
            let meta = base.with_origin(base.origin_row + r0, base.origin_col + c0);
            G::from_samples(ph, pw, spp, samples, meta)
        })
        .collect()
}

/// Pastes patches back into a `height×width` grid placed at `meta`.
///
/// Every mosaic pixel must be covered by exactly one patch; padding that falls
/// outside the mosaic is discarded. The result does not depend on patch order.
pub fn assemble<G: Grid>(patches: &[G], height: usize, width: usize, meta: GeoMeta) -> Result<G> {
    let Some(first) = patches.first() else {
        return Err(Error::Coverage {
            msg: "no patches",
            offsets: vec![],
        });
    };
    let spp = first.samples_per_pixel();
    let mut out = vec![G::Sample::default(); height * width * spp];
    let mut covered = vec![0u8; height * width];
    let mut overlapping = Vec::new();
    for patch in patches {
        let pm = patch.grid_meta();
        let (Some(r0), Some(c0)) = (
            pm.origin_row.checked_sub(meta.origin_row),
            pm.origin_col.checked_sub(meta.origin_col),
        ) else {
            return Err(Error::Coverage {
                msg: "patch lies before the mosaic origin",
                offsets: vec![(pm.origin_row, pm.origin_col)],
            });
        };
        if patch.samples_per_pixel() != spp {
            return Err(Error::invalid("patch", "patches disagree on channel count"));
        }
        let (ph, pw) = (patch.grid_height(), patch.grid_width());
        if r0 >= height || c0 >= width {
            return Err(Error::Coverage {
                msg: "patch lies outside the mosaic",
                offsets: vec![(r0, c0)],
            });
        }
        let vh = ph.min(height - r0);
        let vw = pw.min(width - c0);
        let mut clash = false;
        for r in 0..vh {
            let row = (r0 + r) * width + c0;
            for cov in &mut covered[row..row + vw] {
                clash |= *cov > 0;
                *cov = cov.saturating_add(1);
            }
            let src = patch.samples();
            out[row * spp..(row + vw) * spp]
                .copy_from_slice(&src[r * pw * spp..(r * pw + vw) * spp]);
        }
        if clash {
            overlapping.push((r0, c0));
        }
    }
    if !overlapping.is_empty() {
        overlapping.sort_unstable();
        return Err(Error::Coverage {
            msg: "overlapping patches",
            offsets: overlapping,
        });
    }
    if covered.contains(&0) {
        let (ph, pw) = (first.grid_height(), first.grid_width());
        let mut missing: Vec<(usize, usize)> = covered
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| ((i / width) / ph * ph, (i % width) / pw * pw))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        return Err(Error::Coverage {
            msg: "missing patches",
            offsets: missing,
        });
    }
    G::from_samples(height, width, spp, out, meta)
}

/// Mask of the non-padded pixels of a patch produced by [`extract_patches`].
pub fn valid_mask(layout: &PatchGrid, origin: (usize, usize), meta: GeoMeta) -> BinaryMask {
    let (vh, vw) = layout.valid_extent(origin);
    BinaryMask::from_fn(layout.patch_height, layout.patch_width, meta, |r, c| {
        r < vh && c < vw
    })
    .expect("patch dims are non-zero")
}

/// Fractions and seed for a train/validation/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub rng_seed: u64,
    pub stratify_by_source: bool,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64, rng_seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train_frac,
            val_frac,
            test_frac,
            rng_seed,
            stratify_by_source: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fracs = [self.train_frac, self.val_frac, self.test_frac];
        if fracs.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::invalid(
                "split",
                format!("fractions {fracs:?} must lie in [0, 1]"),
            ));
        }
        let sum: f64 = fracs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "split",
                format!("fractions sum to {sum}, expected 1"),
            ));
        }
        Ok(())
    }
}

/// A dataset item: patch id plus the mosaic it was cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Item {
    pub id: String,
    pub source: String,
}

impl Item {
    pub fn new(id: impl Into<String>, source: impl Into<String>) -> Self {
        Item {
            id: id.into(),
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Seeded split. Within each group (a source mosaic when stratifying, else
/// the whole set) the items are shuffled, `round(n·val)` go to validation,
/// `round(n·test)` to test and the remainder to train. Output lists keep the
/// input order.
pub fn split_dataset(items: &[Item], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if items.is_empty() {
        return Err(Error::invalid("split", "no items to split"));
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let key = if spec.stratify_by_source {
            item.source.as_str()
        } else {
            ""
        };
        groups.entry(key).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    // 0 = train, 1 = val, 2 = test
    let mut assignment = vec![0u8; items.len()];
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_val = (((n as f64) * spec.val_frac).round() as usize).min(n);
        let n_test = (((n as f64) * spec.test_frac).round() as usize).min(n - n_val);
        for &i in &members[..n_val] {
            assignment[i] = 1;
        }
        for &i in &members[n_val..n_val + n_test] {
            assignment[i] = 2;
        }
    }
    let mut split = Split::default();
    for (item, &a) in items.iter().zip(&assignment) {
        let list = match a {
            1 => &mut split.val,
            2 => &mut split.test,
            _ => &mut split.train,
        };
        list.push(item.id.clone());
    }
    Ok(split)
}

/// Repeats ids whose label mask has at least `min_positive_px` foreground
/// pixels `copies` times in total (adjacent); others appear once.
pub fn oversample(
    train_ids: &[String],
    label_masks: &HashMap<String, BinaryMask>,
    min_positive_px: usize,
    copies: usize,
) -> Result<Vec<String>> {
    let mut out = Vec::with_capacity(train_ids.len());
    for id in train_ids {
        let mask = label_masks
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.clone()))?;
        let n = if mask.count() >= min_positive_px {
            copies.max(1)
        } else {
            1
        };
        out.extend(std::iter::repeat_n(id.clone(), n));
    }
    Ok(out)
}

/// Mirrors a grid left-right (`horizontal`) and/or top-bottom (`vertical`).
pub fn augment_flip<G: Grid>(grid: &G, horizontal: bool, vertical: bool) -> G {
    let (h, w, spp) = (
        grid.grid_height(),
        grid.grid_width(),
        grid.samples_per_pixel(),
    );
    let src = grid.samples();
    let mut out = Vec::with_capacity(src.len());
    for r in 0..h {
        let sr = if vertical { h - 1 - r } else { r };
        for c in 0..w {
            let sc = if horizontal { w - 1 - c } else { c };
            let i = (sr * w + sc) * spp;
            out.extend_from_slice(&src[i..i + spp]);
        }
    }
    G::from_samples(h, w, spp, out, grid.grid_meta()).expect("dims unchanged")
}
