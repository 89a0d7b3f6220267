//! Brute-force reference implementations and generators shared by the
//! integration tests and the acceptance run.

#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use resseg::components::Connectivity;
use resseg::morphology::StructuringElement;
use resseg::{BinaryMask, GeoMeta};

pub fn random_mask(
    rng: &mut impl Rng,
    h: usize,
    w: usize,
    density: f64,
    meta: GeoMeta,
) -> BinaryMask {
    let bits = (0..h * w).map(|_| rng.gen_bool(density)).collect();
    BinaryMask::new(h, w, bits, meta).unwrap()
}

/// Union of random filled rectangles and discs: larger, more natural shapes
/// than independent noise.
pub fn blobby_mask(
    rng: &mut impl Rng,
    h: usize,
    w: usize,
    shapes: usize,
    meta: GeoMeta,
) -> BinaryMask {
    let mut m = BinaryMask::empty(h, w, meta).unwrap();
    for _ in 0..shapes {
        let (cr, cc) = (rng.gen_range(0..h) as f64, rng.gen_range(0..w) as f64);
        let rad = rng.gen_range(1.0..(h.min(w) as f64 / 4.0).max(1.5));
        let disc = rng.gen_bool(0.5);
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = ((r as f64 - cr).abs(), (c as f64 - cc).abs());
                let inside = if disc {
                    dr * dr + dc * dc <= rad * rad
                } else {
                    dr <= rad && dc <= rad * 0.6
                };
                if inside {
                    m.set(r, c, true);
                }
            }
        }
    }
    m
}

fn at(m: &BinaryMask, r: isize, c: isize) -> bool {
    m.get_signed(r, c)
}

pub fn brute_dilate(m: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (ry, rx) = se.radii();
    let (ry, rx) = (ry as isize, rx as isize);
    BinaryMask::from_fn(m.height(), m.width(), m.meta(), |r, c| {
        (-ry..=ry).any(|dr| (-rx..=rx).any(|dc| at(m, r as isize + dr, c as isize + dc)))
    })
    .unwrap()
}

/// Pixels outside the frame count as background.
pub fn brute_erode(m: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (ry, rx) = se.radii();
    let (ry, rx) = (ry as isize, rx as isize);
    BinaryMask::from_fn(m.height(), m.width(), m.meta(), |r, c| {
        (-ry..=ry).all(|dr| (-rx..=rx).all(|dc| at(m, r as isize + dr, c as isize + dc)))
    })
    .unwrap()
}

pub fn brute_open(m: &BinaryMask, se: StructuringElement) -> BinaryMask {
    brute_dilate(&brute_erode(m, se), se)
}

/// Closing of the mask extended by background to the whole plane, restricted
/// to the frame. The dilation is only nonzero within the element radii of the
/// frame, so it is evaluated on a frame padded by those radii and eroded there.
pub fn brute_close(m: &BinaryMask, se: StructuringElement) -> BinaryMask {
    let (ry, rx) = se.radii();
    let (h, w) = m.dims();
    let padded = BinaryMask::from_fn(h + 2 * ry, w + 2 * rx, m.meta(), |r, c| {
        m.get_signed(r as isize - ry as isize, c as isize - rx as isize)
    })
    .unwrap();
    let dilated = brute_dilate(&padded, se);
    BinaryMask::from_fn(h, w, m.meta(), |r, c| {
        let (ry, rx) = (ry as isize, rx as isize);
        let (pr, pc) = (r as isize + ry, c as isize + rx);
        (-ry..=ry).all(|dr| (-rx..=rx).all(|dc| at(&dilated, pr + dr, pc + dc)))
    })
    .unwrap()
}

pub fn neighbours(conn: Connectivity) -> &'static [(isize, isize)] {
    match conn {
        Connectivity::Four => &[(-1, 0), (0, -1), (0, 1), (1, 0)],
        Connectivity::Eight => &[
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ],
    }
}

/// Breadth-first flood fill of pixels where `pred` holds; labels follow the
/// raster order of each region's first pixel.
pub fn flood_labels(
    h: usize,
    w: usize,
    conn: Connectivity,
    pred: impl Fn(usize) -> bool,
) -> (Vec<u32>, u32) {
    let mut labels = vec![0u32; h * w];
    let mut next = 0;
    for start in 0..h * w {
        if !pred(start) || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in neighbours(conn) {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if pred(j) && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next)
}

/// Enumerates, for each background region, the set of foreground labels it
/// touches, and fills the enclosed regions that touch exactly one.
pub fn fill_oracle(m: &BinaryMask, conn: Connectivity) -> BinaryMask {
    let (h, w) = m.dims();
    let bits = m.bits();
    let (fg, _) = flood_labels(h, w, conn, |i| bits[i]);
    let (bg, nbg) = flood_labels(h, w, conn.complement(), |i| !bits[i]);
    let mut out = bits.to_vec();
    for region in 1..=nbg {
        let pixels: Vec<usize> = (0..h * w).filter(|&i| bg[i] == region).collect();
        let on_border = pixels
            .iter()
            .any(|&i| i / w == 0 || i % w == 0 || i / w == h - 1 || i % w == w - 1);
        let mut touching: Vec<u32> = Vec::new();
        for &i in &pixels {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in neighbours(Connectivity::Eight) {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && nr < h as isize && nc < w as isize {
                    let f = fg[nr as usize * w + nc as usize];
                    if f != 0 && !touching.contains(&f) {
                        touching.push(f);
                    }
                }
            }
        }
        if !on_border && touching.len() == 1 {
            for &i in &pixels {
                out[i] = true;
            }
        }
    }
    BinaryMask::new(h, w, out, m.meta()).unwrap()
}

/// Minimum center-to-center distance in pixels between two pixel sets, by
/// comparing all pairs.
pub fn all_pairs_distance_px(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    let mut best = f64::INFINITY;
    for &(r0, c0) in a {
        for &(r1, c1) in b {
            let d = ((r0 as f64 - r1 as f64).powi(2) + (c0 as f64 - c1 as f64).powi(2)).sqrt();
            best = best.min(d);
        }
    }
    best
}

/// Direct evaluation of the size and distance rules on 8-connected
/// components.
pub fn prune_oracle(m: &BinaryMask, size_ratio: f64, max_dist_m: f64) -> BinaryMask {
    let (h, w) = m.dims();
    let bits = m.bits();
    let (labels, n) = flood_labels(h, w, Connectivity::Eight, |i| bits[i]);
    if n == 0 {
        return m.clone();
    }
    let members: Vec<Vec<(usize, usize)>> = (1..=n)
        .map(|l| {
            (0..h * w)
                .filter(|&i| labels[i] == l)
                .map(|i| (i / w, i % w))
                .collect()
        })
        .collect();
    let mut largest = 0;
    for (k, px) in members.iter().enumerate() {
        if px.len() > members[largest].len() {
            largest = k;
        }
    }
    let big = members[largest].len() as f64;
    let res = m.meta().resolution_m_per_px;
    let mut out = BinaryMask::empty(h, w, m.meta()).unwrap();
    for (k, px) in members.iter().enumerate() {
        let keep = k == largest || {
            let small = (px.len() as f64) < size_ratio * big;
            let far = all_pairs_distance_px(px, &members[largest]) * res > max_dist_m;
            !(small || far)
        };
        if keep {
            for &(r, c) in px {
                out.set(r, c, true);
            }
        }
    }
    out
}

/// Pixels outside `m` whose Chebyshev distance to `m` is at most `k`.
pub fn chebyshev_band(m: &BinaryMask, k: usize) -> BinaryMask {
    let (h, w) = m.dims();
    let fg: Vec<(usize, usize)> = (0..h * w)
        .filter(|&i| m.bits()[i])
        .map(|i| (i / w, i % w))
        .collect();
    BinaryMask::from_fn(h, w, m.meta(), |r, c| {
        !m.get(r, c)
            && fg
                .iter()
                .any(|&(fr, fc)| r.abs_diff(fr).max(c.abs_diff(fc)) <= k)
    })
    .unwrap()
}

/// Boundary pixels of a foreground set: foreground with a 4-neighbour that is
/// background or outside the frame.
pub fn boundary_pixels(m: &BinaryMask, labels: &[u32], label: u32) -> Vec<(usize, usize)> {
    let (h, w) = m.dims();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if labels[r * w + c] != label {
                continue;
            }
            let edge = neighbours(Connectivity::Four).iter().any(|&(dr, dc)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                nr < 0
                    || nc < 0
                    || nr >= h as isize
                    || nc >= w as isize
                    || labels[nr as usize * w + nc as usize] != label
            });
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dr, dc) = (b.0 - a.0, b.1 - a.1);
    let len2 = dr * dr + dc * dc;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dr + (p.1 - a.1) * dc) / len2).clamp(0.0, 1.0)
    };
    ((p.0 - a.0 - t * dr).powi(2) + (p.1 - a.1 - t * dc).powi(2)).sqrt()
}

/// Distance from `p` to the nearest segment of a vertex chain.
pub fn distance_to_chain(p: (f64, f64), chain: &[(f64, f64)], closed: bool) -> f64 {
    if chain.len() == 1 {
        return point_segment_distance(p, chain[0], chain[0]);
    }
    let n = chain.len();
    let edges = if closed { n } else { n - 1 };
    (0..edges)
        .map(|i| point_segment_distance(p, chain[i], chain[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// A largest square component plus satellites whose sizes straddle
/// `ratio · largest` and whose gaps to the square straddle `max_dist_m`. Some
/// shapes are hollow, so hole filling has work to do.
pub fn component_layout(rng: &mut impl Rng, res: f64, ratio: f64, max_dist_m: f64) -> BinaryMask {
    let side = rng.gen_range(14..22usize);
    let big = (side * side) as f64;
    let gap_px = (max_dist_m / res).round() as usize;
    let (h, w) = (side + 90, side + gap_px + 60);
    let meta = GeoMeta::new(res).unwrap();
    let mut m = BinaryMask::empty(h, w, meta).unwrap();
    let top = 40;
    let hollow_big = rng.gen_bool(0.5);
    for r in top..top + side {
        for c in 2..2 + side {
            let inner = r > top + 3 && r < top + side - 4 && c > 5 && c < side - 2;
            if !(hollow_big && inner) {
                m.set(r, c, true);
            }
        }
    }
    let right_edge = 2 + side - 1;
    let mut row = 2;
    while row + 8 < h {
        let target = (ratio * big).round() as isize + rng.gen_range(-2..=2);
        let area = target.max(1) as usize;
        let sh = rng.gen_range(1..=area.min(8));
        let sw = area.div_ceil(sh);
        let gap = (gap_px as isize + rng.gen_range(-3..=3)).max(2) as usize;
        let c0 = right_edge + gap;
        if c0 + sw >= w {
            row += sh + 3;
            continue;
        }
        let mut left = area;
        for r in row..row + sh {
            for c in c0..c0 + sw {
                if left > 0 {
                    m.set(r, c, true);
                    left -= 1;
                }
            }
        }
        if sh >= 3 && sw >= 3 && rng.gen_bool(0.3) {
            m.set(row + 1, c0 + 1, false);
        }
        row += sh + 3;
    }
    m
}
