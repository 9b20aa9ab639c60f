//! Simple Linear Iterative Clustering.
//!
//! Pixels are clustered in a joint (color, position) space where each
//! cluster center only competes for pixels inside a `2S × 2S` window
//! around itself, `S = sqrt(H·W / K)` being the nominal grid spacing.
//! Distances follow `D = sqrt(dc² + (ds / S)² · m²)`.

use std::collections::{BTreeMap, VecDeque};

use crate::dataset::Image;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlicParams {
    /// Desired number of superpixels.
    pub k_segments: usize,
    /// Weight of spatial proximity relative to color proximity.
    pub compactness: f64,
    pub max_iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            k_segments: 75,
            compactness: 10.0,
            max_iters: 10,
        }
    }
}

impl SlicParams {
    pub fn with_k(k_segments: usize) -> Self {
        Self {
            k_segments,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_segments == 0 {
            return Err(Error::Param("k_segments must be at least 1".into()));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(Error::Param(format!(
                "compactness must be positive, got {}",
                self.compactness
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Param("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel segment labels in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentMap {
    height: usize,
    width: usize,
    n_segments: usize,
    labels: Vec<usize>,
}

impl SegmentMap {
    /// Wraps an explicit labelling. Labels must cover `0..n` with no gaps.
    pub fn from_labels(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} map needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        let n_segments = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; n_segments];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Param(format!("segment {missing} has no pixels")));
        }
        Ok(Self {
            height,
            width,
            n_segments,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn segment_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_segments];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Converts every pixel to the color space used for the SLIC color distance:
/// CIELAB for RGB input; intensity scaled to the L* range `[0, 100]` for
/// grayscale input so the compactness parameter keeps its usual meaning.
fn color_features(img: &Image) -> Vec<[f64; 3]> {
    img.pixels()
        .chunks_exact(img.channels())
        .map(|p| match p {
            [g] => [100.0 * g, 0.0, 0.0],
            [r, g, b] => rgb_to_lab(*r, *g, *b),
            _ => unreachable!(),
        })
        .collect()
}

/// sRGB in `[0, 1]` to CIELAB under the D65 white point.
pub fn rgb_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    fn linear(c: f64) -> f64 {
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let (r, g, b) = (linear(r), linear(g), linear(b));
    let x = (0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b) / 0.950_47;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = (0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b) / 1.088_83;
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[derive(Debug, Clone, Copy)]
struct Center {
    color: [f64; 3],
    y: f64,
    x: f64,
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Grid of roughly `k` cells whose aspect ratio follows the image.
fn grid_shape(k: usize, height: usize, width: usize) -> (usize, usize) {
    let cols = ((k as f64 * width as f64 / height as f64).sqrt().round() as usize).clamp(1, width);
    let rows = ((k as f64 / cols as f64).round() as usize).clamp(1, height);
    (rows, cols)
}

fn initial_centers(colors: &[[f64; 3]], height: usize, width: usize, k: usize) -> Vec<Center> {
    let (grid_rows, grid_cols) = grid_shape(k, height, width);
    let gradient = |y: usize, x: usize| -> f64 {
        let at = |yy: usize, xx: usize| &colors[yy * width + xx];
        let (xl, xr) = (x.saturating_sub(1), (x + 1).min(width - 1));
        let (yu, yd) = (y.saturating_sub(1), (y + 1).min(height - 1));
        sq_dist(at(y, xr), at(y, xl)) + sq_dist(at(yd, x), at(yu, x))
    };
    let mut centers = Vec::with_capacity(grid_rows * grid_cols);
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            let cy = ((gr as f64 + 0.5) * height as f64 / grid_rows as f64) as usize;
            let cx = ((gc as f64 + 0.5) * width as f64 / grid_cols as f64) as usize;
            let (mut by, mut bx) = (cy, cx);
            let mut best = gradient(cy, cx);
            for y in cy.saturating_sub(1)..=(cy + 1).min(height - 1) {
                for x in cx.saturating_sub(1)..=(cx + 1).min(width - 1) {
                    let g = gradient(y, x);
                    if g < best {
                        best = g;
                        by = y;
                        bx = x;
                    }
                }
            }
            centers.push(Center {
                color: colors[by * width + bx],
                y: by as f64,
                x: bx as f64,
            });
        }
    }
    centers
}

pub fn slic_segment(img: &Image, params: &SlicParams) -> Result<SegmentMap> {
    params.validate()?;
    let (height, width) = (img.height(), img.width());
    let n_pixels = height * width;
    if params.k_segments > n_pixels {
        return Err(Error::Param(format!(
            "k_segments {} exceeds pixel count {n_pixels}",
            params.k_segments
        )));
    }
    let colors = color_features(img);
    let step = (n_pixels as f64 / params.k_segments as f64).sqrt();
    let spatial_weight = (params.compactness / step).powi(2);
    let mut centers = initial_centers(&colors, height, width, params.k_segments);

    let mut assign = vec![usize::MAX; n_pixels];
    let mut dist = vec![f64::INFINITY; n_pixels];
    for _ in 0..params.max_iters {
        assign.fill(usize::MAX);
        dist.fill(f64::INFINITY);
        for (ci, c) in centers.iter().enumerate() {
            let y0 = (c.y - step).floor().max(0.0) as usize;
            let y1 = ((c.y + step).ceil() as usize).min(height - 1);
            let x0 = (c.x - step).floor().max(0.0) as usize;
            let x1 = ((c.x + step).ceil() as usize).min(width - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let p = y * width + x;
                    let ds = (y as f64 - c.y).powi(2) + (x as f64 - c.x).powi(2);
                    let d = sq_dist(&colors[p], &c.color) + ds * spatial_weight;
                    if d < dist[p] {
                        dist[p] = d;
                        assign[p] = ci;
                    }
                }
            }
        }
        // Pixels outside every window fall back to a global nearest-center search.
        for p in 0..n_pixels {
            if assign[p] == usize::MAX {
                let (y, x) = ((p / width) as f64, (p % width) as f64);
                let mut best = f64::INFINITY;
                for (ci, c) in centers.iter().enumerate() {
                    let ds = (y - c.y).powi(2) + (x - c.x).powi(2);
                    let d = sq_dist(&colors[p], &c.color) + ds * spatial_weight;
                    if d < best {
                        best = d;
                        assign[p] = ci;
                    }
                }
            }
        }

        let mut sums = vec![([0.0; 3], 0.0, 0.0, 0usize); centers.len()];
        for (p, &ci) in assign.iter().enumerate() {
            let s = &mut sums[ci];
            for (acc, v) in s.0.iter_mut().zip(colors[p]) {
                *acc += v;
            }
            s.1 += (p / width) as f64;
            s.2 += (p % width) as f64;
            s.3 += 1;
        }
        for (c, (color, y, x, n)) in centers.iter_mut().zip(sums) {
            if n > 0 {
                let n = n as f64;
                c.color = [color[0] / n, color[1] / n, color[2] / n];
                c.y = y / n;
                c.x = x / n;
            }
        }
    }

    let min_size = step * step / 4.0;
    Ok(enforce_connectivity(&assign, height, width, min_size))
}

/// Splits every label into 4-connected components, merges components smaller
/// than `min_size` into the neighbor they share the longest boundary with, and
/// renumbers the survivors in raster order of their first pixel.
pub(crate) fn enforce_connectivity(labels: &[usize], height: usize, width: usize, min_size: f64) -> SegmentMap {
    let n = labels.len();
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = (p / width, p % width);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < width {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - width);
            }
            if y + 1 < height {
                visit(p + width);
            }
        }
        sizes.push(size);
    }

    let n_comp = sizes.len();
    let mut adjacency: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); n_comp];
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            let mut link = |q: usize| {
                let (a, b) = (comp[p], comp[q]);
                if a != b {
                    *adjacency[a].entry(b).or_default() += 1;
                    *adjacency[b].entry(a).or_default() += 1;
                }
            };
            if x + 1 < width {
                link(p + 1);
            }
            if y + 1 < height {
                link(p + width);
            }
        }
    }

    let mut merged_into: Vec<usize> = (0..n_comp).collect();
    let mut alive = vec![true; n_comp];
    loop {
        let orphan = (0..n_comp)
            .filter(|&c| alive[c] && (sizes[c] as f64) < min_size && !adjacency[c].is_empty())
            .min_by_key(|&c| (sizes[c], c));
        let Some(small) = orphan else { break };
        let (&target, _) = adjacency[small]
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("orphan has a neighbor");
        let edges = std::mem::take(&mut adjacency[small]);
        for (other, count) in edges {
            adjacency[other].remove(&small);
            if other != target {
                *adjacency[target].entry(other).or_default() += count;
                *adjacency[other].entry(target).or_default() += count;
            }
        }
        sizes[target] += sizes[small];
        alive[small] = false;
        merged_into[small] = target;
    }

    let root = |mut c: usize| {
        while merged_into[c] != c {
            c = merged_into[c];
        }
        c
    };
    let mut relabel = vec![usize::MAX; n_comp];
    let mut next = 0;
    let mut out = Vec::with_capacity(n);
    for &c in &comp {
        let r = root(c);
        if relabel[r] == usize::MAX {
            relabel[r] = next;
            next += 1;
        }
        out.push(relabel[r]);
    }
    SegmentMap {
        height,
        width,
        n_segments: next,
        labels: out,
    }
}
