mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resseg::components::{fill_enclosed, label_components, Connectivity};
use resseg::roiar::{
    apply_roi, boxes_roi, extract_roi, margin_px, morph_roi, simplify_polygon, trace_contours,
    Polygon, RoiMethod, RoiSpec,
};
use resseg::{BinaryMask, GeoMeta, Raster};

use common::{blobby_mask, boundary_pixels, chebyshev_band, distance_to_chain, random_mask};

#[test]
fn contours_follow_outer_boundaries() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for case in 0..80 {
        let shapes = rng.gen_range(1..6);
        let m = blobby_mask(&mut rng, 36, 36, shapes, GeoMeta::default());
        let cs = label_components(&m, Connectivity::Eight);
        let polys = trace_contours(&m);
        assert_eq!(polys.len(), cs.count(), "case {case}");
        for (comp, poly) in cs.components().iter().zip(&polys) {
            let solid = fill_enclosed(&cs.mask_of(comp.label, m.meta()), Connectivity::Eight);
            let solid_labels: Vec<u32> = solid.bits().iter().map(|&b| b as u32).collect();
            let rim = boundary_pixels(&solid, &solid_labels, 1);
            for &(r, c) in poly.vertices() {
                assert!(
                    rim.contains(&(r as usize, c as usize)),
                    "case {case}: vertex ({r}, {c}) off the rim"
                );
            }
            for &(r, c) in &rim {
                let d = distance_to_chain((r as f64, c as f64), poly.vertices(), poly.is_closed());
                assert!(
                    d <= 1.0 + 1e-9,
                    "case {case}: rim pixel ({r}, {c}) is {d} px from the contour"
                );
            }
            if poly.is_closed() {
                assert!(poly.signed_area() >= 0.0);
            }
        }
    }
}

fn random_chain(rng: &mut impl Rng, n: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(n);
    let (mut r, mut c) = (0.0, 0.0);
    for _ in 0..n {
        r += rng.gen_range(-3.0..3.0);
        c += rng.gen_range(0.5..3.0);
        pts.push((r, c));
    }
    pts
}

#[test]
fn simplification_stays_within_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..300 {
        let n = rng.gen_range(3..60);
        let closed = rng.gen_bool(0.5);
        let mut pts = random_chain(&mut rng, n);
        if closed {
            // fold the chain into a loop by mirroring it back
            let back: Vec<_> = pts
                .iter()
                .rev()
                .skip(1)
                .take(n - 2)
                .map(|&(r, c)| (r + 10.0, c))
                .collect();
            pts.extend(back);
        }
        let poly = Polygon::new(pts.clone(), closed).unwrap();
        let eps = rng.gen_range(0.1..5.0);
        let s = simplify_polygon(&poly, eps).unwrap();
        assert!(s.len() <= poly.len());
        // retained vertices appear in their original order
        let mut from = 0;
        for v in s.vertices() {
            let at = pts[from..]
                .iter()
                .position(|p| p == v)
                .expect("vertex from input");
            from += at + 1;
        }
        for &p in &pts {
            let d = distance_to_chain(p, s.vertices(), s.is_closed());
            assert!(d <= eps + 1e-9, "{d} > {eps}");
        }
        assert_eq!(s.vertices()[0], pts[0]);
        if !closed {
            assert_eq!(*s.vertices().last().unwrap(), *pts.last().unwrap());
        }
    }
}

#[test]
fn tiny_epsilon_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let pts = random_chain(&mut rng, 20);
        let poly = Polygon::new(pts, false).unwrap();
        assert_eq!(simplify_polygon(&poly, 1e-12).unwrap(), poly);
    }
}

#[test]
fn morph_roi_is_the_chebyshev_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for case in 0..220 {
        let res = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let (h, w) = (rng.gen_range(4..28), rng.gen_range(4..28));
        let density = rng.gen_range(0.01..0.3);
        let m = random_mask(&mut rng, h, w, density, GeoMeta::new(res).unwrap());
        let margin = rng.gen_range(0.3..4.0) * res;
        let roi = morph_roi(&m, margin).unwrap();
        let k = margin_px(margin, res);
        assert_eq!(roi, chebyshev_band(&m, k), "case {case}");
        assert!(roi.and(&m).unwrap().is_empty());
    }
}

#[test]
fn boxes_cover_vertex_discs_and_exclude_reservoir() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for case in 0..60 {
        let res = [1.0, 2.0][rng.gen_range(0..2)];
        let meta = GeoMeta::new(res).unwrap();
        let shapes = rng.gen_range(1..5);
        let m = blobby_mask(&mut rng, 48, 48, shapes, meta);
        let margin = rng.gen_range(1.0..8.0) * res;
        let eps = rng.gen_range(0.5..4.0);
        let polys: Vec<Polygon> = trace_contours(&m)
            .iter()
            .map(|p| {
                if p.is_closed() {
                    simplify_polygon(p, eps).unwrap()
                } else {
                    p.clone()
                }
            })
            .collect();
        let roi = boxes_roi(&polys, &m, margin).unwrap();
        assert!(roi.and(&m).unwrap().is_empty(), "case {case}");
        let covered = roi.or(&m).unwrap();
        let rad = margin / res;
        for poly in &polys {
            for &(vr, vc) in poly.vertices() {
                for r in 0..48 {
                    for c in 0..48 {
                        let d2 = (r as f64 - vr).powi(2) + (c as f64 - vc).powi(2);
                        if d2 <= rad * rad {
                            assert!(
                                covered.get(r, c),
                                "case {case}: ({r}, {c}) uncovered near ({vr}, {vc})"
                            );
                        }
                    }
                }
            }
        }
        let mut shuffled = polys.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(boxes_roi(&shuffled, &m, margin).unwrap(), roi);
    }
}

#[test]
fn boxes_around_square_reservoir() {
    let meta = GeoMeta::new(2.0).unwrap();
    let m = BinaryMask::from_fn(40, 40, meta, |r, c| {
        (15..25).contains(&r) && (15..25).contains(&c)
    })
    .unwrap();
    let roi = extract_roi(
        &m,
        &RoiSpec {
            method: RoiMethod::Boxes,
            margin_m: 10.0,
            simplify_epsilon_px: 1.0,
        },
    )
    .unwrap();
    // the square's corners survive simplification, so the band is the 5-px frame
    let expect = BinaryMask::from_fn(40, 40, meta, |r, c| {
        (10..30).contains(&r) && (10..30).contains(&c)
    })
    .unwrap()
    .minus(&m)
    .unwrap();
    assert_eq!(roi, expect);
}

#[test]
fn empty_reservoir_gives_empty_roi() {
    let m = BinaryMask::empty(16, 16, GeoMeta::default()).unwrap();
    for method in [RoiMethod::Boxes, RoiMethod::Morphological] {
        let spec = RoiSpec {
            method,
            ..RoiSpec::default()
        };
        assert!(extract_roi(&m, &spec).unwrap().is_empty());
    }
}

proptest! {
    #[test]
    fn apply_roi_selects_per_pixel(seed in any::<u64>(), fill in any::<u8>(), channels in prop::sample::select(vec![1usize, 3])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (rng.gen_range(1..12), rng.gen_range(1..12));
        let meta = GeoMeta::new(3.0).unwrap().with_origin(5, 6);
        let data: Vec<u8> = (0..h * w * channels).map(|_| rng.gen()).collect();
        let raster = Raster::new(h, w, channels, data.clone(), meta).unwrap();
        let roi = random_mask(&mut rng, h, w, 0.5, meta);
        let out = apply_roi(&raster, &roi, fill).unwrap();
        prop_assert_eq!(out.meta(), meta);
        for i in 0..h * w {
            for k in 0..channels {
                let expect = if roi.bits()[i] { data[i * channels + k] } else { fill };
                prop_assert_eq!(out.data()[i * channels + k], expect);
            }
        }
    }
}
