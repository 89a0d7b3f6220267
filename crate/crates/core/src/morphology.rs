//! Binary morphology with centered rectangular structuring elements.
//!
//! Pixels outside the frame are `false`. Every operator equals its
//! unbounded-plane counterpart applied to the zero-extended mask and cropped
//! back to the frame, so erosion shrinks objects at the image edge while
//! closing stays extensive there. Rectangles are separable, so each operator
//! runs as a row pass followed by a column pass with sliding-window counts;
//! cost is independent of the element size.

use crate::error::{Error, Result};
use crate::raster::BinaryMask;

/// A rectangle of ones anchored at its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    height: usize,
    width: usize,
}

impl StructuringElement {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height.is_multiple_of(2) || width.is_multiple_of(2) {
            return Err(Error::invalid(
                "structuring element",
                format!("sides must be odd and positive, got {height}x{width}"),
            ));
        }
        Ok(StructuringElement { height, width })
    }

    pub fn square(side: usize) -> Result<Self> {
        StructuringElement::new(side, side)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Half-extents `(rows, cols)` around the anchor.
    pub fn radii(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }
}

/// Square element covering roughly `meters` of ground at the given resolution.
///
/// The side is `round(meters / resolution)`, bumped to the next odd number when
/// even, so 100 m at 1 m/px gives 101×101 and at 2 m/px gives 51×51.
pub fn se_from_resolution(meters: f64, resolution_m_per_px: f64) -> Result<StructuringElement> {
    if !(resolution_m_per_px.is_finite() && resolution_m_per_px > 0.0) {
        return Err(Error::invalid(
            "resolution",
            format!("resolution must be positive, got {resolution_m_per_px}"),
        ));
    }
    if !(meters.is_finite() && meters >= 0.0) {
        return Err(Error::invalid(
            "kernel size",
            format!("kernel size must be a non-negative number of meters, got {meters}"),
        ));
    }
    let mut side = (meters / resolution_m_per_px).round() as usize;
    if side.is_multiple_of(2) {
        side += 1;
    }
    StructuringElement::square(side)
}

#[derive(Clone, Copy)]
enum Op {
    Dilate,
    Erode,
}

/// One separable pass along rows (`along_rows`) or columns.
fn pass(bits: &[bool], h: usize, w: usize, radius: usize, along_rows: bool, op: Op) -> Vec<bool> {
    if radius == 0 {
        return bits.to_vec();
    }
    let (lines, len) = if along_rows { (h, w) } else { (w, h) };
    let index = |line: usize, k: usize| {
        if along_rows {
            line * w + k
        } else {
            k * w + line
        }
    };
    let window = 2 * radius + 1;
    let mut out = vec![false; bits.len()];
    let mut prefix = vec![0usize; len + 1];
    for line in 0..lines {
        for k in 0..len {
            prefix[k + 1] = prefix[k] + usize::from(bits[index(line, k)]);
        }
        for k in 0..len {
            let lo = k.saturating_sub(radius);
            let hi = (k + radius).min(len - 1);
            let count = prefix[hi + 1] - prefix[lo];
            out[index(line, k)] = match op {
                Op::Dilate => count > 0,
                // out-of-frame samples are false, so the full window must fit
                Op::Erode => count == window,
            };
        }
    }
    out
}

fn apply(mask: &BinaryMask, se: StructuringElement, op: Op) -> BinaryMask {
    let (h, w) = mask.dims();
    let (rr, cr) = se.radii();
    let rows = pass(mask.bits(), h, w, cr, true, op);
    let bits = pass(&rows, h, w, rr, false, op);
    BinaryMask::new(h, w, bits, mask.meta()).expect("dims unchanged")
}

pub fn dilate(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    apply(mask, se, Op::Dilate)
}

pub fn erode(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    apply(mask, se, Op::Erode)
}

/// Erosion followed by dilation; removes foreground the element cannot fit in.
pub fn open(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    dilate(&erode(mask, se), se)
}

/// Dilation followed by erosion; fills background gaps narrower than the element.
///
/// The intermediate dilation is computed on a frame padded by the element's
/// radii, so foreground touching the border is not eroded away.
pub fn close(mask: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (h, w) = mask.dims();
    let (rr, cr) = se.radii();
    let (ph, pw) = (h + 2 * rr, w + 2 * cr);
    let mut padded = vec![false; ph * pw];
    for r in 0..h {
        let src = &mask.bits()[r * w..(r + 1) * w];
        padded[(r + rr) * pw + cr..(r + rr) * pw + cr + w].copy_from_slice(src);
    }
    let rows = pass(&padded, ph, pw, cr, true, Op::Dilate);
    let dilated = pass(&rows, ph, pw, rr, false, Op::Dilate);
    let rows = pass(&dilated, ph, pw, cr, true, Op::Erode);
    let closed = pass(&rows, ph, pw, rr, false, Op::Erode);
    let mut bits = Vec::with_capacity(h * w);
    for r in 0..h {
        bits.extend_from_slice(&closed[(r + rr) * pw + cr..(r + rr) * pw + cr + w]);
    }
    BinaryMask::new(h, w, bits, mask.meta()).expect("dims unchanged")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::GeoMeta;

    fn mask(rows: &[&str]) -> BinaryMask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows
            .iter()
            .flat_map(|r| r.chars().map(|c| c == '#'))
            .collect();
        BinaryMask::new(h, w, bits, GeoMeta::default()).unwrap()
    }

    fn se(side: usize) -> StructuringElement {
        StructuringElement::square(side).unwrap()
    }

    #[test]
    fn se_sizes() {
        assert_eq!(se_from_resolution(100.0, 1.0).unwrap(), se(101));
        assert_eq!(se_from_resolution(100.0, 2.0).unwrap(), se(51));
        assert_eq!(se_from_resolution(0.0, 1.0).unwrap(), se(1));
        assert_eq!(se_from_resolution(100.0, 1.5).unwrap(), se(67));
        assert!(se_from_resolution(100.0, 0.0).is_err());
        assert!(se_from_resolution(100.0, -2.0).is_err());
        assert!(StructuringElement::new(2, 3).is_err());
        assert!(StructuringElement::new(0, 1).is_err());
    }

    #[test]
    fn dilate_single_pixel() {
        let m = mask(&[".....", ".....", "..#..", ".....", "....."]);
        let d = dilate(&m, se(3));
        assert_eq!(d, mask(&[".....", ".###.", ".###.", ".###.", "....."]));
        assert!(dilate(&BinaryMask::empty(4, 4, GeoMeta::default()).unwrap(), se(3)).is_empty());
    }

    #[test]
    fn erode_shrinks_at_border() {
        let full = mask(&["#####"; 5]);
        let e = erode(&full, se(3));
        assert_eq!(e, mask(&[".....", ".###.", ".###.", ".###.", "....."]));
    }

    #[test]
    fn non_square_element() {
        let m = mask(&[".....", "..#..", "....."]);
        let d = dilate(&m, StructuringElement::new(1, 5).unwrap());
        assert_eq!(d, mask(&[".....", "#####", "....."]));
    }

    #[test]
    fn open_removes_isolated_pixel_and_keeps_fitting_block() {
        let m = mask(&[".....", ".....", "..#..", ".....", "....."]);
        assert!(open(&m, se(3)).is_empty());

        let block = BinaryMask::from_fn(14, 14, GeoMeta::default(), |r, c| {
            (2..12).contains(&r) && (2..12).contains(&c)
        })
        .unwrap();
        assert_eq!(open(&block, se(3)), block);
    }

    #[test]
    fn close_fills_single_hole() {
        let m = mask(&["#####", "#####", "##.##", "#####", "#####"]);
        assert_eq!(close(&m, se(3)), mask(&["#####"; 5]));
        assert!(close(&BinaryMask::empty(3, 3, GeoMeta::default()).unwrap(), se(3)).is_empty());
    }

    #[test]
    fn close_keeps_border_pixels() {
        let m = mask(&["#....", ".....", "....."]);
        assert_eq!(close(&m, se(3)), m);
    }

    #[test]
    fn meta_propagates() {
        let meta = GeoMeta::new(2.0).unwrap().with_origin(1, 1);
        let m = BinaryMask::empty(3, 3, meta).unwrap();
        for out in [
            dilate(&m, se(3)),
            erode(&m, se(3)),
            open(&m, se(3)),
            close(&m, se(3)),
        ] {
            assert_eq!(out.meta(), meta);
        }
    }
}
