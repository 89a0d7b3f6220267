//! Raster, mask and probability-map value types.
//!
//! All grids are row-major. Every type carries a [`GeoMeta`] that records the
//! ground resolution and the grid's offset inside its parent mosaic; operations
//! in this crate propagate it unchanged unless they change the grid's origin.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground resolution and placement of a grid inside its parent mosaic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoMeta {
    pub resolution_m_per_px: f64,
    pub origin_row: usize,
    pub origin_col: usize,
}

impl Default for GeoMeta {
    fn default() -> Self {
        GeoMeta {
            resolution_m_per_px: 1.0,
            origin_row: 0,
            origin_col: 0,
        }
    }
}

impl GeoMeta {
    pub fn new(resolution_m_per_px: f64) -> Result<Self> {
        let meta = GeoMeta {
            resolution_m_per_px,
            ..GeoMeta::default()
        };
        meta.validate()?;
        Ok(meta)
    }

    pub fn with_origin(self, origin_row: usize, origin_col: usize) -> Self {
        GeoMeta {
            origin_row,
            origin_col,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.resolution_m_per_px;
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::invalid(
                "resolution",
                format!("resolution must be a positive number of meters per pixel, got {r}"),
            ));
        }
        Ok(())
    }

    /// Converts a ground distance in meters to (fractional) pixels.
    pub fn meters_to_px(&self, meters: f64) -> f64 {
        meters / self.resolution_m_per_px
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(
            "dimensions",
            format!("grid must be non-empty, got {height}x{width}"),
        ));
    }
    Ok(())
}

/// An 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<u8>,
    meta: GeoMeta,
}

impl Raster {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<u8>,
        meta: GeoMeta,
    ) -> Result<Self> {
        check_dims(height, width)?;
        meta.validate()?;
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(
                "channels",
                format!("expected 1 or 3 channels, got {channels}"),
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::invalid(
                "raster",
                format!(
                    "data length {} does not match {height}x{width}x{channels}",
                    data.len()
                ),
            ));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
            meta,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: u8,
        meta: GeoMeta,
    ) -> Result<Self> {
        Raster::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
            meta,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn meta(&self) -> GeoMeta {
        self.meta
    }

    pub fn set_meta(&mut self, meta: GeoMeta) {
        self.meta = meta;
    }

    /// The channel samples of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[u8] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [u8] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Samples scaled to the unit interval, channel-planar (`C×H×W`).
    pub fn to_unit_planar(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                out[c * plane + i] = f64::from(v) / 255.0;
            }
        }
        out
    }
}

/// A boolean grid: reservoir maps, regions of interest, class maps.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    meta: GeoMeta,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>, meta: GeoMeta) -> Result<Self> {
        check_dims(height, width)?;
        meta.validate()?;
        if bits.len() != height * width {
            return Err(Error::invalid(
                "mask",
                format!("bit count {} does not match {height}x{width}", bits.len()),
            ));
        }
        Ok(BinaryMask {
            height,
            width,
            bits,
            meta,
        })
    }

    pub fn empty(height: usize, width: usize, meta: GeoMeta) -> Result<Self> {
        BinaryMask::new(height, width, vec![false; height * width], meta)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        meta: GeoMeta,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        BinaryMask::new(height, width, bits, meta)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn meta(&self) -> GeoMeta {
        self.meta
    }

    pub fn set_meta(&mut self, meta: GeoMeta) {
        self.meta = meta;
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Out-of-frame coordinates read as `false`.
    pub fn get_signed(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.bits[row as usize * self.width + col as usize]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<BinaryMask> {
        self.ensure_same_dims(other.dims())?;
        Ok(BinaryMask {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.clone()
        })
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a || b)
    }

    /// Set difference `self − other`.
    pub fn minus(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip_with(other, |a, b| a && !b)
    }

    /// `true` when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub(crate) fn ensure_same_dims(&self, got: (usize, usize)) -> Result<()> {
        if self.dims() != got {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got,
            });
        }
        Ok(())
    }
}

/// Per-pixel foreground probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    height: usize,
    width: usize,
    probs: Vec<f32>,
    meta: GeoMeta,
}

impl ProbMap {
    pub fn new(height: usize, width: usize, probs: Vec<f32>, meta: GeoMeta) -> Result<Self> {
        check_dims(height, width)?;
        meta.validate()?;
        if probs.len() != height * width {
            return Err(Error::invalid(
                "probability map",
                format!(
                    "value count {} does not match {height}x{width}",
                    probs.len()
                ),
            ));
        }
        if let Some((i, v)) = probs
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::invalid(
                "probability map",
                format!("value {v} at index {i} is outside [0, 1]"),
            ));
        }
        Ok(ProbMap {
            height,
            width,
            probs,
            meta,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32, meta: GeoMeta) -> Result<Self> {
        ProbMap::new(height, width, vec![value; height * width], meta)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.probs[row * self.width + col]
    }

    pub fn meta(&self) -> GeoMeta {
        self.meta
    }

    pub fn set_meta(&mut self, meta: GeoMeta) {
        self.meta = meta;
    }
}

/// Binarizes a probability map; pixels with `prob >= t` are foreground.
///
/// The comparison runs at the map's `f32` precision, so a map of `0.7`
/// thresholded at `0.7` is all foreground.
pub fn threshold(p: &ProbMap, t: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(
            "threshold",
            format!("threshold {t} is outside [0, 1]"),
        ));
    }
    let t = t as f32;
    let bits = p.probs.iter().map(|&v| v >= t).collect();
    BinaryMask::new(p.height, p.width, bits, p.meta)
}

/// Row-major grids whose per-pixel samples can be cut and reassembled
/// generically (used by tiling and flips).
pub trait Grid: Sized {
    type Sample: Copy + Default;

    fn grid_height(&self) -> usize;
    fn grid_width(&self) -> usize;
    fn samples_per_pixel(&self) -> usize;
    fn samples(&self) -> &[Self::Sample];
    fn grid_meta(&self) -> GeoMeta;
    fn from_samples(
        height: usize,
        width: usize,
        samples_per_pixel: usize,
        samples: Vec<Self::Sample>,
        meta: GeoMeta,
    ) -> Result<Self>;
}

impl Grid for Raster {
    type Sample = u8;

    fn grid_height(&self) -> usize {
        self.height
    }
    fn grid_width(&self) -> usize {
        self.width
    }
    fn samples_per_pixel(&self) -> usize {
        self.channels
    }
    fn samples(&self) -> &[u8] {
        &self.data
    }
    fn grid_meta(&self) -> GeoMeta {
        self.meta
    }
    fn from_samples(h: usize, w: usize, c: usize, samples: Vec<u8>, meta: GeoMeta) -> Result<Self> {
        Raster::new(h, w, c, samples, meta)
    }
}

impl Grid for BinaryMask {
    type Sample = bool;

    fn grid_height(&self) -> usize {
        self.height
    }
    fn grid_width(&self) -> usize {
        self.width
    }
    fn samples_per_pixel(&self) -> usize {
        1
    }
    fn samples(&self) -> &[bool] {
        &self.bits
    }
    fn grid_meta(&self) -> GeoMeta {
        self.meta
    }
    fn from_samples(
        h: usize,
        w: usize,
        _c: usize,
        samples: Vec<bool>,
        meta: GeoMeta,
    ) -> Result<Self> {
        BinaryMask::new(h, w, samples, meta)
    }
}

impl Grid for ProbMap {
    type Sample = f32;

    fn grid_height(&self) -> usize {
        self.height
    }
    fn grid_width(&self) -> usize {
        self.width
    }
    fn samples_per_pixel(&self) -> usize {
        1
    }
    fn samples(&self) -> &[f32] {
        &self.probs
    }
    fn grid_meta(&self) -> GeoMeta {
        self.meta
    }
    fn from_samples(
        h: usize,
        w: usize,
        _c: usize,
        samples: Vec<f32>,
        meta: GeoMeta,
    ) -> Result<Self> {
        ProbMap::new(h, w, samples, meta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(values: Vec<f32>, h: usize, w: usize) -> ProbMap {
        ProbMap::new(h, w, values, GeoMeta::default()).unwrap()
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = ProbMap::filled(3, 4, 0.7, GeoMeta::default()).unwrap();
        assert!(threshold(&p, 0.5).unwrap().bits().iter().all(|&b| b));
        assert!(threshold(&p, 0.7).unwrap().bits().iter().all(|&b| b));
        assert!(threshold(&p, 0.71).unwrap().is_empty());
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        let p = ProbMap::filled(1, 1, 0.5, GeoMeta::default()).unwrap();
        assert!(threshold(&p, -0.1).is_err());
        assert!(threshold(&p, 1.5).is_err());
    }

    #[test]
    fn threshold_propagates_meta() {
        let meta = GeoMeta::new(2.0).unwrap().with_origin(4, 8);
        let p = ProbMap::filled(2, 2, 0.1, meta).unwrap();
        assert_eq!(threshold(&p, 0.5).unwrap().meta(), meta);
    }

    #[test]
    fn constructors_validate() {
        assert!(Raster::new(2, 2, 2, vec![0; 8], GeoMeta::default()).is_err());
        assert!(Raster::new(2, 2, 1, vec![0; 3], GeoMeta::default()).is_err());
        assert!(BinaryMask::new(0, 2, vec![], GeoMeta::default()).is_err());
        assert!(ProbMap::new(1, 2, vec![0.5, 1.25], GeoMeta::default()).is_err());
        assert!(ProbMap::new(1, 1, vec![f32::NAN], GeoMeta::default()).is_err());
        assert!(GeoMeta::new(0.0).is_err());
        assert!(GeoMeta::new(-1.0).is_err());
    }

    proptest! {
        #[test]
        fn threshold_matches_elementwise(values in prop::collection::vec(0.0f32..=1.0, 48), t in 0.0f64..=1.0) {
            let p = map(values.clone(), 6, 8);
            let m = threshold(&p, t).unwrap();
            for (i, v) in values.iter().enumerate() {
                prop_assert_eq!(m.bits()[i], *v >= t as f32);
            }
        }

        #[test]
        fn threshold_is_monotone(values in prop::collection::vec(0.0f32..=1.0, 30), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = map(values, 5, 6);
            let m_hi = threshold(&p, hi).unwrap();
            let m_lo = threshold(&p, lo).unwrap();
            prop_assert!(m_hi.is_subset_of(&m_lo));
        }
    }
}
