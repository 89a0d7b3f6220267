//! Region of interest around the reservoir: a land-only band within a fixed
//! ground distance of the reservoir.
//!
//! Two constructions are provided. The box method traces each reservoir
//! outline, simplifies it with Douglas–Peucker and takes the union of the
//! axis-aligned boxes spanned by consecutive corners, each grown by the margin.
//! The morphological method dilates the reservoir with a square element and
//! removes the reservoir itself. Both return the band minus the reservoir.

use std::str::FromStr;

use crate::components::{label_components, Connectivity};
use crate::error::{Error, Result};
use crate::morphology::{dilate, StructuringElement};
use crate::raster::{BinaryMask, Raster};

/// A polygon or polyline with `(row, col)` vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<(f64, f64)>,
    closed: bool,
}

impl Polygon {
    /// Closed polygons need at least three vertices; open polylines at least
    /// one. Consecutive vertices (including last→first when closed) must differ.
    pub fn new(vertices: Vec<(f64, f64)>, closed: bool) -> Result<Self> {
        let n = vertices.len();
        if closed && n < 3 {
            return Err(Error::invalid(
                "polygon",
                format!("a closed polygon needs at least 3 vertices, got {n}"),
            ));
        }
        if n == 0 {
            return Err(Error::invalid("polygon", "no vertices"));
        }
        let wrap = if closed { n } else { n - 1 };
        for i in 0..wrap {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::invalid(
                    "polygon",
                    format!("consecutive vertices {i} and {} coincide", (i + 1) % n),
                ));
            }
        }
        Ok(Polygon { vertices, closed })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Consecutive vertex pairs, including the closing pair for polygons. A
    /// single-vertex polyline yields one degenerate pair.
    pub fn edges(&self) -> Vec<((f64, f64), (f64, f64))> {
        let n = self.vertices.len();
        if n == 1 {
            return vec![(self.vertices[0], self.vertices[0])];
        }
        let count = if self.closed { n } else { n - 1 };
        (0..count)
            .map(|i| (self.vertices[i], self.vertices[(i + 1) % n]))
            .collect()
    }

    /// Shoelace area; positive when the outline runs counterclockwise as
    /// displayed (rows growing downward).
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (r0, c0) = self.vertices[i];
            let (r1, c1) = self.vertices[(i + 1) % n];
            acc += r0 * c1 - r1 * c0;
        }
        acc / 2.0
    }
}

// Clockwise as displayed, starting east.
const RING: [(isize, isize); 8] = [
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
    (-1, 0),
    (-1, 1),
];
const WEST: usize = 4;

fn ring_index(from: (usize, usize), to: (usize, usize)) -> usize {
    let d = (
        to.0 as isize - from.0 as isize,
        to.1 as isize - from.1 as isize,
    );
    RING.iter()
        .position(|&o| o == d)
        .expect("neighbouring pixels")
}

/// Outer boundary of each 8-connected foreground component, one polygon per
/// component in label order, with vertices on boundary pixel centers and
/// counterclockwise orientation. Components whose boundary has fewer than
/// three vertices (one or two pixels) come back as open polylines.
pub fn trace_contours(mask: &BinaryMask) -> Vec<Polygon> {
    let (h, w) = mask.dims();
    let cs = label_components(mask, Connectivity::Eight);
    let labels = cs.label_map();
    let neighbour = |p: (usize, usize), dir: usize, label: u32| -> Option<(usize, usize)> {
        let (dr, dc) = RING[dir];
        let (r, c) = (p.0 as isize + dr, p.1 as isize + dc);
        if r < 0 || c < 0 || r as usize >= h || c as usize >= w {
            return None;
        }
        let q = (r as usize, c as usize);
        (labels[q.0 * w + q.1] == label).then_some(q)
    };

    let mut polygons = Vec::with_capacity(cs.count());
    for comp in cs.components() {
        let label = comp.label;
        // first pixel in raster order; its west neighbour is background
        let row = comp.bbox.min_row;
        let col = (0..w)
            .find(|&c| labels[row * w + c] == label)
            .expect("component row");
        let start = (row, col);

        let first = (0..8).find_map(|k| neighbour(start, (WEST + k) % 8, label));
        let Some(first) = first else {
            polygons.push(Polygon::new(vec![(row as f64, col as f64)], false).expect("one vertex"));
            continue;
        };

        let mut vertices = Vec::new();
        let (mut prev, mut cur) = (first, start);
        loop {
            vertices.push(cur);
            let back = ring_index(cur, prev);
            let next = (1..=8)
                .find_map(|k| neighbour(cur, (back + 8 - k) % 8, label))
                .expect("prev is always a neighbour");
            if next == start && cur == first {
                break;
            }
            prev = cur;
            cur = next;
        }

        let pts: Vec<(f64, f64)> = vertices
            .iter()
            .map(|&(r, c)| (r as f64, c as f64))
            .collect();
        let closed = pts.len() >= 3;
        let mut poly = Polygon::new(pts, closed).expect("traced contour is valid");
        if closed && poly.signed_area() < 0.0 {
            poly.vertices[1..].reverse();
        }
        polygons.push(poly);
    }
    polygons
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dr, dc) = (b.0 - a.0, b.1 - a.1);
    let len2 = dr * dr + dc * dc;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dr + (p.1 - a.1) * dc) / len2).clamp(0.0, 1.0)
    };
    let (qr, qc) = (a.0 + t * dr, a.1 + t * dc);
    ((p.0 - qr).powi(2) + (p.1 - qc).powi(2)).sqrt()
}

/// Douglas–Peucker over `pts[lo..=hi]`; marks the retained indices.
fn douglas_peucker(pts: &[(f64, f64)], lo: usize, hi: usize, epsilon: f64, keep: &mut [bool]) {
    keep[lo] = true;
    keep[hi] = true;
    let mut stack = vec![(lo, hi)];
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (mut far, mut far_d) = (a, -1.0);
        for i in a + 1..b {
            let d = point_segment_distance(pts[i], pts[a], pts[b]);
            if d > far_d {
                far = i;
                far_d = d;
            }
        }
        if far_d > epsilon {
            keep[far] = true;
            stack.push((a, far));
            stack.push((far, b));
        }
    }
}

/// Douglas–Peucker simplification. Every dropped vertex lies within
/// `epsilon_px` of the segment that replaced it. A closed polygon is split at
/// its first vertex and the vertex farthest from it; if it collapses below
/// three vertices the result is returned as an open polyline.
pub fn simplify_polygon(poly: &Polygon, epsilon_px: f64) -> Result<Polygon> {
    if !(epsilon_px.is_finite() && epsilon_px > 0.0) {
        return Err(Error::invalid(
            "epsilon",
            format!("must be positive, got {epsilon_px}"),
        ));
    }
    let n = poly.vertices.len();
    if n < 3 {
        return Err(Error::invalid(
            "polygon",
            format!("cannot simplify a polygon with {n} vertices"),
        ));
    }
    if !poly.closed {
        let mut keep = vec![false; n];
        douglas_peucker(&poly.vertices, 0, n - 1, epsilon_px, &mut keep);
        let pts = select(&poly.vertices, &keep);
        return Polygon::new(pts, false);
    }

    let v0 = poly.vertices[0];
    let split = (1..n)
        .max_by(|&a, &b| {
            let da = dist2(poly.vertices[a], v0);
            let db = dist2(poly.vertices[b], v0);
            da.total_cmp(&db).then(b.cmp(&a))
        })
        .expect("n >= 3");
    // unroll the ring so the second chain ends back at v0
    let mut ring = poly.vertices.clone();
    ring.push(v0);
    let mut keep = vec![false; n + 1];
    douglas_peucker(&ring, 0, split, epsilon_px, &mut keep);
    douglas_peucker(&ring, split, n, epsilon_px, &mut keep);
    keep.truncate(n);
    let pts = select(&poly.vertices, &keep);
    let closed = pts.len() >= 3;
    Polygon::new(pts, closed)
}

fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)
}

fn select(pts: &[(f64, f64)], keep: &[bool]) -> Vec<(f64, f64)> {
    pts.iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&p, _)| p)
        .collect()
}

fn check_margin(margin_m: f64) -> Result<()> {
    if !(margin_m.is_finite() && margin_m > 0.0) {
        return Err(Error::invalid(
            "margin",
            format!("must be positive, got {margin_m}"),
        ));
    }
    Ok(())
}

/// Union of the boxes spanned by consecutive polygon corners, each grown by
/// `margin_m` on every side, clipped to the frame, minus the reservoir.
///
/// A pixel belongs to a box when its center lies inside it. The reservoir
/// mask supplies the frame and the resolution.
pub fn boxes_roi(polys: &[Polygon], reservoir: &BinaryMask, margin_m: f64) -> Result<BinaryMask> {
    check_margin(margin_m)?;
    let (h, w) = reservoir.dims();
    let m = reservoir.meta().meters_to_px(margin_m);
    let mut out = BinaryMask::empty(h, w, reservoir.meta())?;
    for poly in polys {
        for (a, b) in poly.edges() {
            let r_lo = (a.0.min(b.0) - m).ceil().max(0.0);
            let r_hi = (a.0.max(b.0) + m).floor().min(h as f64 - 1.0);
            let c_lo = (a.1.min(b.1) - m).ceil().max(0.0);
            let c_hi = (a.1.max(b.1) + m).floor().min(w as f64 - 1.0);
            if r_lo > r_hi || c_lo > c_hi {
                continue;
            }
            for r in r_lo as usize..=r_hi as usize {
                for c in c_lo as usize..=c_hi as usize {
                    out.set(r, c, true);
                }
            }
        }
    }
    out.minus(reservoir)
}

/// Pixel radius used by the morphological method: `round(margin_m / resolution)`.
pub fn margin_px(margin_m: f64, resolution_m_per_px: f64) -> usize {
    (margin_m / resolution_m_per_px).round() as usize
}

/// Dilation by a square of side `2·round(margin/res)+1`, minus the reservoir:
/// every pixel within that Chebyshev distance of the reservoir but outside it.
pub fn morph_roi(mask: &BinaryMask, margin_m: f64) -> Result<BinaryMask> {
    check_margin(margin_m)?;
    let k = margin_px(margin_m, mask.meta().resolution_m_per_px);
    let se = StructuringElement::square(2 * k + 1)?;
    dilate(mask, se).minus(mask)
}

/// Keeps raster pixels inside `roi` and sets all others to `fill_value`.
pub fn apply_roi(raster: &Raster, roi: &BinaryMask, fill_value: u8) -> Result<Raster> {
    roi.ensure_same_dims((raster.height(), raster.width()))?;
    let mut out = raster.clone();
    for r in 0..raster.height() {
        for c in 0..raster.width() {
            if !roi.get(r, c) {
                out.pixel_mut(r, c).fill(fill_value);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiMethod {
    Boxes,
    Morphological,
}

impl FromStr for RoiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boxes" => Ok(RoiMethod::Boxes),
            "morph" | "morphological" => Ok(RoiMethod::Morphological),
            other => Err(Error::invalid(
                "roi method",
                format!("unknown method `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiSpec {
    pub method: RoiMethod,
    pub margin_m: f64,
    pub simplify_epsilon_px: f64,
}

impl Default for RoiSpec {
    fn default() -> Self {
        RoiSpec {
            method: RoiMethod::Morphological,
            margin_m: 200.0,
            simplify_epsilon_px: 10.0,
        }
    }
}

impl RoiSpec {
    pub fn validate(&self) -> Result<()> {
        check_margin(self.margin_m)?;
        if self.method == RoiMethod::Boxes
            && (self.simplify_epsilon_px.is_nan() || self.simplify_epsilon_px <= 0.0)
        {
            return Err(Error::invalid(
                "epsilon",
                format!("must be positive, got {}", self.simplify_epsilon_px),
            ));
        }
        Ok(())
    }
}

/// Region of interest around `reservoir` using the configured method.
pub fn extract_roi(reservoir: &BinaryMask, spec: &RoiSpec) -> Result<BinaryMask> {
    spec.validate()?;
    match spec.method {
        RoiMethod::Morphological => morph_roi(reservoir, spec.margin_m),
        RoiMethod::Boxes => {
            let polys = trace_contours(reservoir)
                .iter()
                .map(|p| {
                    if p.is_closed() {
                        simplify_polygon(p, spec.simplify_epsilon_px)
                    } else {
                        Ok(p.clone())
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            boxes_roi(&polys, reservoir, spec.margin_m)
        }
    }
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

    #[test]
    fn block_contour_visits_ring() {
        let m = mask(&[".....", ".###.", ".###.", ".###.", "....."]);
        let polys = trace_contours(&m);
        assert_eq!(polys.len(), 1);
        let p = &polys[0];
        assert!(p.is_closed());
        assert_eq!(p.len(), 8);
        assert!(p.signed_area() > 0.0);
        assert!(!p.vertices().contains(&(2.0, 2.0)));
        assert_eq!(p.vertices()[0], (1.0, 1.0));
    }

    #[test]
    fn separate_blocks_and_tiny_components() {
        let m = mask(&["##...#", "##....", "......", "...##."]);
        let polys = trace_contours(&m);
        assert_eq!(polys.len(), 3);
        assert!(polys[0].is_closed());
        assert_eq!(polys[1].vertices(), &[(0.0, 5.0)]);
        assert!(!polys[1].is_closed());
        assert_eq!(polys[2].len(), 2);
        assert!(trace_contours(&mask(&["...", "..."])).is_empty());
    }

    #[test]
    fn thin_line_backtracks() {
        let m = mask(&["###"]);
        let polys = trace_contours(&m);
        assert_eq!(
            polys[0].vertices(),
            &[(0.0, 0.0), (0.0, 1.0), (0.0, 2.0), (0.0, 1.0)]
        );
    }

    #[test]
    fn polygon_validation() {
        assert!(Polygon::new(vec![(0.0, 0.0), (1.0, 1.0)], true).is_err());
        assert!(Polygon::new(vec![(0.0, 0.0), (0.0, 0.0), (1.0, 1.0)], false).is_err());
        assert!(Polygon::new(vec![(0.0, 0.0), (1.0, 1.0), (0.0, 0.0)], true).is_err());
        assert!(Polygon::new(vec![], false).is_err());
    }

    #[test]
    fn collinear_chain_collapses_to_endpoints() {
        let line: Vec<_> = (0..10).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let p = Polygon::new(line, false).unwrap();
        let s = simplify_polygon(&p, 0.5).unwrap();
        assert_eq!(s.vertices(), &[(0.0, 0.0), (9.0, 18.0)]);

        // a closed square with collinear edge points keeps only its corners
        let mut sq = Vec::new();
        for c in 0..4 {
            sq.push((0.0, c as f64));
        }
        for r in 0..4 {
            sq.push((r as f64, 4.0));
        }
        for c in (1..=4).rev() {
            sq.push((4.0, c as f64));
        }
        for r in (1..=4).rev() {
            sq.push((r as f64, 0.0));
        }
        let p = Polygon::new(sq, true).unwrap();
        let s = simplify_polygon(&p, 0.1).unwrap();
        let mut v = s.vertices().to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(v, vec![(0.0, 0.0), (0.0, 4.0), (4.0, 0.0), (4.0, 4.0)]);
    }

    #[test]
    fn simplify_errors() {
        let p = Polygon::new(vec![(0.0, 0.0), (1.0, 0.0)], false).unwrap();
        assert!(simplify_polygon(&p, 1.0).is_err());
        let tri = Polygon::new(vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], true).unwrap();
        assert!(simplify_polygon(&tri, 0.0).is_err());
        assert!(simplify_polygon(&tri, -1.0).is_err());
    }

    #[test]
    fn single_edge_box() {
        let res = BinaryMask::empty(8, 16, GeoMeta::default()).unwrap();
        let edge = Polygon::new(vec![(0.0, 0.0), (0.0, 10.0)], false).unwrap();
        let roi = boxes_roi(&[edge], &res, 2.0).unwrap();
        // rows -2..=2 clipped to 0..=2, cols -2..=12 clipped to 0..=12
        let expect =
            BinaryMask::from_fn(8, 16, GeoMeta::default(), |r, c| r <= 2 && c <= 12).unwrap();
        assert_eq!(roi, expect);
        assert!(boxes_roi(&[], &res, 2.0).unwrap().is_empty());
        assert!(boxes_roi(&[], &res, 0.0).is_err());
    }

    #[test]
    fn morph_ring_of_single_pixel() {
        let m = mask(&[".....", ".....", "..#..", ".....", "....."]);
        let roi = morph_roi(&m, 1.0).unwrap();
        assert_eq!(roi, mask(&[".....", ".###.", ".#.#.", ".###.", "....."]));
        let empty = BinaryMask::empty(4, 4, GeoMeta::default()).unwrap();
        assert!(morph_roi(&empty, 200.0).unwrap().is_empty());
    }

    #[test]
    fn apply_roi_selects_pixels() {
        let r = Raster::new(1, 3, 3, (1..=9).collect(), GeoMeta::default()).unwrap();
        let roi = BinaryMask::new(1, 3, vec![true, false, true], GeoMeta::default()).unwrap();
        assert_eq!(
            apply_roi(&r, &roi, 0).unwrap().data(),
            &[1, 2, 3, 0, 0, 0, 7, 8, 9]
        );
        let full = BinaryMask::new(1, 3, vec![true; 3], GeoMeta::default()).unwrap();
        assert_eq!(apply_roi(&r, &full, 0).unwrap(), r);
        let none = BinaryMask::empty(1, 3, GeoMeta::default()).unwrap();
        assert!(apply_roi(&r, &none, 9)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 9));
        let wrong = BinaryMask::empty(3, 1, GeoMeta::default()).unwrap();
        assert!(matches!(
            apply_roi(&r, &wrong, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("boxes".parse::<RoiMethod>().unwrap(), RoiMethod::Boxes);
        assert_eq!(
            "morph".parse::<RoiMethod>().unwrap(),
            RoiMethod::Morphological
        );
        assert!("disc".parse::<RoiMethod>().is_err());
    }
}
