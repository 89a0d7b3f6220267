//! Generated data for experiments and end-to-end checks: a blob segmentation
//! dataset and a lake scene with a noisy oracle segmenter.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, GeoMeta, ProbMap, Raster};
use crate::trainer::{SegmenterBackend, TrainItem};

/// Smooth background texture: a few random plane waves plus per-pixel grain.
fn texture(rng: &mut impl Rng, h: usize, w: usize, base: f64, amp: f64, grain: f64) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let freq = rng.gen_range(0.05..0.4);
            (
                freq * angle.cos(),
                freq * angle.sin(),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let wave: f64 = waves
                .iter()
                .map(|(fr, fc, ph)| (fr * r as f64 + fc * c as f64 + ph).sin())
                .sum::<f64>()
                / 4.0;
            out.push(base + amp * wave + rng.gen_range(-grain..grain));
        }
    }
    out
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobConfig {
    pub size: usize,
    pub max_blobs: usize,
    pub radius: (f64, f64),
    /// Small bright specks that are not part of the positive class.
    pub max_specks: usize,
    pub speck_side: usize,
    /// Half-width of the brightness ramp at blob edges, relative to the radius.
    pub rim: f64,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            size: 64,
            max_blobs: 3,
            radius: (4.0, 9.0),
            max_specks: 30,
            speck_side: 4,
            rim: 0.4,
        }
    }
}

/// One RGB patch with bright elliptical blobs (positive) on a textured
/// background sprinkled with bright specks (negative).
pub fn blob_patch(rng: &mut impl Rng, cfg: &BlobConfig) -> TrainItem {
    let n = cfg.size;
    let meta = GeoMeta::default();
    let base = texture(rng, n, n, 80.0, 35.0, 18.0);
    let mut labels = vec![false; n * n];
    let mut value = base.clone();

    let blobs = rng.gen_range(0..=cfg.max_blobs);
    for _ in 0..blobs {
        let (cr, cc) = (rng.gen_range(0.0..n as f64), rng.gen_range(0.0..n as f64));
        let (ra, rb) = (
            rng.gen_range(cfg.radius.0..cfg.radius.1),
            rng.gen_range(cfg.radius.0..cfg.radius.1),
        );
        let bright = rng.gen_range(140.0..190.0);
        for r in 0..n {
            for c in 0..n {
                let d = (((r as f64 - cr) / ra).powi(2) + ((c as f64 - cc) / rb).powi(2)).sqrt();
                if d <= 1.0 {
                    labels[r * n + c] = true;
                }
                // brightness fades across the rim, so edge pixels are ambiguous
                let t = ((1.0 + cfg.rim - d) / (2.0 * cfg.rim)).clamp(0.0, 1.0);
                if t > 0.0 {
                    let v = &mut value[r * n + c];
                    *v = *v * (1.0 - t) + (bright + rng.gen_range(-15.0..15.0)) * t;
                }
            }
        }
    }
    let specks = rng.gen_range(0..=cfg.max_specks);
    for _ in 0..specks {
        let (sr, sc) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let side = rng.gen_range(1..=cfg.speck_side);
        let bright = rng.gen_range(140.0..190.0);
        for r in sr..(sr + side).min(n) {
            for c in sc..(sc + side).min(n) {
                if !labels[r * n + c] {
                    value[r * n + c] = bright;
                }
            }
        }
    }

    let tint = [1.0, 0.95, 0.85];
    let data = value
        .iter()
        .flat_map(|&v| tint.map(|t| to_u8(v * t)))
        .collect();
    let raster = Raster::new(n, n, 3, data, meta).expect("valid patch");
    let mask = BinaryMask::new(n, n, labels, meta).expect("valid mask");
    TrainItem::new(raster, mask, None).expect("matching dims")
}

pub fn blob_dataset(count: usize, cfg: &BlobConfig, seed: u64) -> Vec<TrainItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| blob_patch(&mut rng, cfg)).collect()
}

/// Fraction of positive pixels across `items`.
pub fn positive_fraction(items: &[TrainItem]) -> f64 {
    let pos: usize = items.iter().map(|i| i.mask.count()).sum();
    let total: usize = items.iter().map(|i| i.mask.bits().len()).sum();
    pos as f64 / total.max(1) as f64
}

/// A mosaic with a reservoir and the ground truth for both phases, plus the
/// water probabilities a decent but imperfect segmenter would output.
#[derive(Debug, Clone)]
pub struct LakeScene {
    pub mosaic: Raster,
    pub reservoir: BinaryMask,
    pub manmade: BinaryMask,
    /// Noisy water probabilities: true lake with a missed hole, plus
    /// speckles, a thin river and a small pond that are not the reservoir.
    pub water_probs: ProbMap,
    /// Noisy man-made probabilities over the whole frame.
    pub manmade_probs: ProbMap,
}

fn ellipse(r: usize, c: usize, center: (f64, f64), radii: (f64, f64)) -> bool {
    ((r as f64 - center.0) / radii.0).powi(2) + ((c as f64 - center.1) / radii.1).powi(2) <= 1.0
}

/// Builds the scene on a `size×size` frame at `resolution` m/px. Feature sizes
/// scale with the frame; `size` must be at least 128.
pub fn lake_scene(size: usize, resolution: f64, seed: u64) -> Result<LakeScene> {
    if size < 128 {
        return Err(Error::invalid("scene size", format!("{size} is below 128")));
    }
    let meta = GeoMeta::new(resolution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let lake_c = (0.45 * s, 0.45 * s);
    let lake_r = (0.27 * s, 0.21 * s);
    let hole_c = (lake_c.0 + 0.05 * s, lake_c.1 - 0.04 * s);
    let hole_r = 0.025 * s;
    let pond_c = (0.85 * s, 0.85 * s);
    let pond_r = 0.06 * s;

    let reservoir = BinaryMask::from_fn(size, size, meta, |r, c| ellipse(r, c, lake_c, lake_r))?;
    let river = BinaryMask::from_fn(size, size, meta, |r, c| {
        let centre = 0.93 * s + 0.02 * s * (c as f64 / (0.08 * s)).sin();
        (r as f64 - centre).abs() < 1.0 && (c as f64) < 0.6 * s
    })?;
    let pond = BinaryMask::from_fn(size, size, meta, |r, c| {
        ellipse(r, c, pond_c, (pond_r, pond_r))
    })?;

    // buildings: rectangles scattered on land, some near the shore
    let mut manmade = BinaryMask::empty(size, size, meta)?;
    let mut placed = 0;
    while placed < 24 {
        let (bh, bw) = (rng.gen_range(4..12), rng.gen_range(4..12));
        let (r0, c0) = (rng.gen_range(0..size - bh), rng.gen_range(0..size - bw));
        let clear = (r0..r0 + bh).all(|r| {
            (c0..c0 + bw).all(|c| !reservoir.get(r, c) && !pond.get(r, c) && !river.get(r, c))
        });
        if !clear {
            continue;
        }
        for r in r0..r0 + bh {
            for c in c0..c0 + bw {
                manmade.set(r, c, true);
            }
        }
        placed += 1;
    }
    // a road along the shore band
    let road_row = (lake_c.0 + lake_r.0 + 0.05 * s) as usize;
    for c in (0.2 * s) as usize..(0.7 * s) as usize {
        for r in road_row..road_row + 3 {
            if !reservoir.get(r, c) && !pond.get(r, c) && !river.get(r, c) {
                manmade.set(r, c, true);
            }
        }
    }

    let land = texture(&mut rng, size, size, 110.0, 30.0, 15.0);
    let mut data = Vec::with_capacity(size * size * 3);
    let mut water_p = Vec::with_capacity(size * size);
    let mut made_p = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let i = r * size + c;
            let is_water = reservoir.bits()[i] || pond.bits()[i] || river.bits()[i];
            let in_hole = ellipse(r, c, hole_c, (hole_r, hole_r));
            let px = if is_water {
                [30.0, 60.0, 90.0].map(|v| v + rng.gen_range(-8.0..8.0))
            } else if manmade.bits()[i] {
                [170.0, 165.0, 160.0].map(|v| v + rng.gen_range(-12.0..12.0))
            } else {
                [0.9, 1.0, 0.7].map(|t| land[i] * t)
            };
            data.extend(px.map(to_u8));

            let speck = !is_water && rng.gen_bool(0.004);
            let wp = if (reservoir.bits()[i] && !in_hole)
                || pond.bits()[i]
                || river.bits()[i]
                || speck
            {
                rng.gen_range(0.6..0.95)
            } else {
                rng.gen_range(0.02..0.4)
            };
            water_p.push(wp as f32);

            let mp = if manmade.bits()[i] {
                rng.gen_range(0.35..0.95)
            } else {
                rng.gen_range(0.0..0.6)
            };
            made_p.push(mp as f32);
        }
    }
    // spread speckles to a few pixels each
    let seeds: Vec<usize> = (0..size * size)
        .filter(|&i| {
            water_p[i] >= 0.6 && !reservoir.bits()[i] && !pond.bits()[i] && !river.bits()[i]
        })
        .collect();
    for i in seeds {
        for j in [i + 1, i + size, i + size + 1] {
            if j < size * size && j % size != 0 {
                water_p[j] = water_p[j].max(0.7);
            }
        }
    }

    Ok(LakeScene {
        mosaic: Raster::new(size, size, 3, data, meta)?,
        reservoir,
        manmade,
        water_probs: ProbMap::new(size, size, water_p, meta)?,
        manmade_probs: ProbMap::new(size, size, made_p, meta)?,
    })
}

/// Serves crops of a precomputed mosaic-wide probability map, located by the
/// patch origin. Padding outside the map reads as 0.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    map: ProbMap,
}

impl OracleBackend {
    pub fn new(map: ProbMap) -> Self {
        OracleBackend { map }
    }
}

impl SegmenterBackend for OracleBackend {
    fn predict(&self, patch: &Raster) -> Result<ProbMap> {
        let meta = patch.meta();
        let base = self.map.meta();
        let (h, w) = (patch.height(), patch.width());
        let (r0, c0) = (
            meta.origin_row.checked_sub(base.origin_row),
            meta.origin_col.checked_sub(base.origin_col),
        );
        let (Some(r0), Some(c0)) = (r0, c0) else {
            return Err(Error::invalid(
                "patch origin",
                "patch lies before the map origin",
            ));
        };
        let mut probs = vec![0.0f32; h * w];
        for r in 0..h {
            for c in 0..w {
                let (mr, mc) = (r0 + r, c0 + c);
                if mr < self.map.height() && mc < self.map.width() {
                    probs[r * w + c] = self.map.get(mr, mc);
                }
            }
        }
        ProbMap::new(h, w, probs, meta)
    }
}
