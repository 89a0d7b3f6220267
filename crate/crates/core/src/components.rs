//! Connected components and the object-level refinement rules applied to the
//! reservoir map after morphological cleaning.
//!
//! Foreground uses 8-connectivity and background 4-connectivity by default
//! (the complementary pair), so a diagonal gap never connects both a hole and
//! the object around it.

use crate::error::{Error, Result};
use crate::morphology::{self, se_from_resolution};
use crate::raster::{threshold, BinaryMask, GeoMeta, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    /// The complementary connectivity used for the other phase.
    pub fn complement(self) -> Self {
        match self {
            Connectivity::Four => Connectivity::Eight,
            Connectivity::Eight => Connectivity::Four,
        }
    }

    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            _ => Err(Error::invalid(
                "connectivity",
                format!("expected 4 or 8, got {n}"),
            )),
        }
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    pub label: u32,
    pub size_px: usize,
    pub bbox: BoundingBox,
    pub touches_border: bool,
}

/// Labeled foreground components. Label 0 is background; component `k` has
/// label `k` and sits at index `k - 1` of [`ComponentSet::components`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    components: Vec<Component>,
}

impl ComponentSet {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn label_map(&self) -> &[u32] {
        &self.labels
    }

    pub fn label_at(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, label: u32) -> Result<&Component> {
        label
            .checked_sub(1)
            .and_then(|i| self.components.get(i as usize))
            .ok_or_else(|| Error::invalid("label", format!("no component with label {label}")))
    }

    /// Mask of the pixels carrying `label`.
    pub fn mask_of(&self, label: u32, meta: GeoMeta) -> BinaryMask {
        let bits = self.labels.iter().map(|&l| l == label).collect();
        BinaryMask::new(self.height, self.width, bits, meta).expect("dims match")
    }

    /// Label with the most pixels; ties go to the lowest label.
    pub fn largest(&self) -> Option<u32> {
        self.components
            .iter()
            .max_by(|a, b| a.size_px.cmp(&b.size_px).then(b.label.cmp(&a.label)))
            .map(|c| c.label)
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the older (smaller) id as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels the pixels where `fg(index)` holds. Labels follow raster-scan
/// discovery order.
fn label_where(
    height: usize,
    width: usize,
    connectivity: Connectivity,
    fg: impl Fn(usize) -> bool,
) -> ComponentSet {
    let mut provisional = vec![0u32; height * width];
    let mut uf = UnionFind::new();
    // already-visited neighbours in raster order
    let back: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
    };
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if !fg(i) {
                continue;
            }
            let mut current = 0u32;
            for &(dr, dc) in back {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc as usize >= width {
                    continue;
                }
                let n = provisional[nr as usize * width + nc as usize];
                if n == 0 {
                    continue;
                }
                if current == 0 {
                    current = n;
                } else {
                    uf.union(current, n);
                }
            }
            provisional[i] = if current == 0 { uf.make() } else { current };
        }
    }

    // Resolve roots, numbering components by first appearance.
    let mut final_of_root = vec![0u32; uf.parent.len()];
    let mut components: Vec<Component> = Vec::new();
    let mut labels = vec![0u32; height * width];
    for r in 0..height {
        for c in 0..width {
            let i = r * width + c;
            if provisional[i] == 0 {
                continue;
            }
            let root = uf.find(provisional[i]) as usize;
            if final_of_root[root] == 0 {
                let label = components.len() as u32 + 1;
                final_of_root[root] = label;
                components.push(Component {
                    label,
                    size_px: 0,
                    bbox: BoundingBox {
                        min_row: r,
                        min_col: c,
                        max_row: r,
                        max_col: c,
                    },
                    touches_border: false,
                });
            }
            let label = final_of_root[root];
            labels[i] = label;
            let comp = &mut components[label as usize - 1];
            comp.size_px += 1;
            comp.bbox.min_row = comp.bbox.min_row.min(r);
            comp.bbox.min_col = comp.bbox.min_col.min(c);
            comp.bbox.max_row = comp.bbox.max_row.max(r);
            comp.bbox.max_col = comp.bbox.max_col.max(c);
            if r == 0 || c == 0 || r + 1 == height || c + 1 == width {
                comp.touches_border = true;
            }
        }
    }
    ComponentSet {
        height,
        width,
        labels,
        components,
    }
}

/// Labels foreground components with a two-pass union-find scan.
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentSet {
    let bits = mask.bits();
    label_where(mask.height(), mask.width(), connectivity, |i| bits[i])
}

/// Fills background regions enclosed by a single foreground component.
///
/// `connectivity` is the foreground connectivity; background regions use the
/// complement. A background region is filled when it does not touch the image
/// border and every foreground pixel adjacent to it belongs to one component.
pub fn fill_enclosed(mask: &BinaryMask, connectivity: Connectivity) -> BinaryMask {
    let (h, w) = mask.dims();
    let fg = label_components(mask, connectivity);
    let bits = mask.bits();
    let bg_conn = connectivity.complement();
    let bg = label_where(h, w, bg_conn, |i| !bits[i]);

    // Per background region: the single adjacent foreground label, or a
    // marker when it borders none or several.
    const NONE: u32 = 0;
    const MANY: u32 = u32::MAX;
    let mut neighbour = vec![NONE; bg.count() + 1];
    for r in 0..h {
        for c in 0..w {
            let b = bg.labels[r * w + c];
            if b == 0 {
                continue;
            }
            for &(dr, dc) in bg_conn.offsets() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                    continue;
                }
                let f = fg.labels[nr as usize * w + nc as usize];
                if f == 0 {
                    continue;
                }
                let slot = &mut neighbour[b as usize];
                *slot = match *slot {
                    NONE => f,
                    s if s == f => s,
                    _ => MANY,
                };
            }
        }
    }

    let fill: Vec<bool> = bg
        .components
        .iter()
        .map(|comp| {
            let n = neighbour[comp.label as usize];
            !comp.touches_border && n != NONE && n != MANY
        })
        .collect();
    let out = bits
        .iter()
        .zip(&bg.labels)
        .map(|(&b, &l)| b || (l != 0 && fill[l as usize - 1]))
        .collect();
    BinaryMask::new(h, w, out, mask.meta()).expect("dims unchanged")
}

/// Exact squared Euclidean distance transform to the pixels where `seed`
/// holds (Felzenszwalb–Huttenlocher lower-envelope method). Pixels are
/// `f64::INFINITY` when there is no seed at all.
pub fn squared_distance_to(height: usize, width: usize, seed: impl Fn(usize) -> bool) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..height * width)
        .map(|i| if seed(i) { 0.0 } else { f64::INFINITY })
        .collect();
    let mut line = Vec::new();
    let mut out = Vec::new();
    for c in 0..width {
        line.clear();
        line.extend((0..height).map(|r| grid[r * width + c]));
        edt_1d(&line, &mut out);
        for r in 0..height {
            grid[r * width + c] = out[r];
        }
    }
    for r in 0..height {
        line.clear();
        line.extend_from_slice(&grid[r * width..(r + 1) * width]);
        edt_1d(&line, &mut out);
        grid[r * width..(r + 1) * width].copy_from_slice(&out);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut Vec<f64>) {
    let n = f.len();
    d.clear();
    d.resize(n, f64::INFINITY);
    // parabola vertices and the boundaries between them
    let mut v = vec![0usize; n];
    let mut z = vec![0f64; n + 1];
    let mut k: usize = 0;
    let Some(first) = f.iter().position(|v| v.is_finite()) else {
        return;
    };
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            let p = v[k];
            let s =
                ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k] {
                // k > 0 here: z[0] is -inf
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as f64 - p as f64;
        *out = dq * dq + f[p];
    }
}

/// Minimum pixel-center Euclidean distance between components `a` and `b`,
/// in meters.
pub fn min_component_distance(cs: &ComponentSet, a: u32, b: u32, geo: GeoMeta) -> Result<f64> {
    cs.component(a)?;
    cs.component(b)?;
    if a == b {
        return Err(Error::invalid(
            "label",
            format!("distance from {a} to itself"),
        ));
    }
    let dist2 = squared_distance_to(cs.height, cs.width, |i| cs.labels[i] == a);
    let best = cs
        .labels
        .iter()
        .zip(&dist2)
        .filter(|(&l, _)| l == b)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    Ok(best.sqrt() * geo.resolution_m_per_px)
}

/// Keeps the largest component plus every other component that is at least
/// `size_ratio` times its size and within `max_dist_m` of it.
pub fn prune_small_or_distant(
    mask: &BinaryMask,
    geo: GeoMeta,
    size_ratio: f64,
    max_dist_m: f64,
) -> BinaryMask {
    let cs = label_components(mask, Connectivity::Eight);
    let Some(largest) = cs.largest() else {
        return mask.clone();
    };
    let largest_size = cs.components[largest as usize - 1].size_px as f64;
    let dist2 = squared_distance_to(cs.height, cs.width, |i| cs.labels[i] == largest);
    let mut nearest = vec![f64::INFINITY; cs.count() + 1];
    for (&l, &d) in cs.labels.iter().zip(&dist2) {
        if l != 0 {
            nearest[l as usize] = nearest[l as usize].min(d);
        }
    }
    let keep: Vec<bool> = std::iter::once(false)
        .chain(cs.components.iter().map(|comp| {
            if comp.label == largest {
                return true;
            }
            let dist_m = nearest[comp.label as usize].sqrt() * geo.resolution_m_per_px;
            !((comp.size_px as f64) < size_ratio * largest_size || dist_m > max_dist_m)
        }))
        .collect();
    let bits = cs
        .labels
        .iter()
        .map(|&l| l != 0 && keep[l as usize])
        .collect();
    BinaryMask::new(cs.height, cs.width, bits, mask.meta()).expect("dims unchanged")
}

/// Parameters of the reservoir post-processing chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessParams {
    pub threshold: f64,
    /// Ground size of the square opening/closing element.
    pub kernel_m: f64,
    pub size_ratio: f64,
    pub max_dist_m: f64,
    /// When false, only threshold + opening + closing run.
    pub object_rules: bool,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        PostprocessParams {
            threshold: 0.5,
            kernel_m: 100.0,
            size_ratio: 0.2,
            max_dist_m: 300.0,
            object_rules: true,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(
                "threshold",
                format!("{} is outside [0, 1]", self.threshold),
            ));
        }
        if !(self.kernel_m.is_finite() && self.kernel_m >= 0.0) {
            return Err(Error::invalid(
                "kernel_m",
                format!("{} must be >= 0", self.kernel_m),
            ));
        }
        if !(0.0..=1.0).contains(&self.size_ratio) {
            return Err(Error::invalid(
                "size_ratio",
                format!("{} is outside [0, 1]", self.size_ratio),
            ));
        }
        if self.max_dist_m.is_nan() || self.max_dist_m < 0.0 {
            return Err(Error::invalid(
                "max_dist_m",
                format!("{} must be >= 0", self.max_dist_m),
            ));
        }
        Ok(())
    }
}

/// Every intermediate map of the post-processing chain.
#[derive(Debug, Clone)]
pub struct PostprocessStages {
    pub thresholded: BinaryMask,
    pub opened: BinaryMask,
    pub closed: BinaryMask,
    pub filled: BinaryMask,
    pub pruned: BinaryMask,
}

impl PostprocessStages {
    pub fn result(&self) -> &BinaryMask {
        &self.pruned
    }

    /// `(name, mask)` pairs in chain order.
    pub fn named(&self) -> [(&'static str, &BinaryMask); 5] {
        [
            ("thresholded", &self.thresholded),
            ("opened", &self.opened),
            ("closed", &self.closed),
            ("filled", &self.filled),
            ("pruned", &self.pruned),
        ]
    }
}

/// threshold → open → close → fill enclosed holes → prune, keeping every stage.
pub fn postprocess_stages(
    prob: &ProbMap,
    geo: GeoMeta,
    params: &PostprocessParams,
) -> Result<PostprocessStages> {
    params.validate()?;
    geo.validate()?;
    let se = se_from_resolution(params.kernel_m, geo.resolution_m_per_px)?;
    let thresholded = threshold(prob, params.threshold)?;
    let opened = morphology::open(&thresholded, se);
    let closed = morphology::close(&opened, se);
    let (filled, pruned) = if params.object_rules {
        let filled = fill_enclosed(&closed, Connectivity::Eight);
        let pruned = prune_small_or_distant(&filled, geo, params.size_ratio, params.max_dist_m);
        (filled, pruned)
    } else {
        (closed.clone(), closed.clone())
    };
    Ok(PostprocessStages {
        thresholded,
        opened,
        closed,
        filled,
        pruned,
    })
}

/// Final reservoir map from a probability map with default rule parameters.
pub fn postprocess_reservoir(prob: &ProbMap, threshold: f64, geo: GeoMeta) -> Result<BinaryMask> {
    let params = PostprocessParams {
        threshold,
        ..PostprocessParams::default()
    };
    Ok(postprocess_stages(prob, geo, &params)?.pruned)
}
