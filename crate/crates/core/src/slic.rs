//! SLIC superpixels over arbitrary-dimensional feature volumes.
//!
//! Works the same on raw spectra and on CNN feature maps: channels are
//! z-scored first so one compactness value fits both.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::hsio::RgbImage;
use crate::par;
use crate::volume::FeatureView;

#[derive(Debug, Clone, PartialEq)]
pub struct SlicParams {
    pub target_segments: usize,
    /// Spatial-vs-feature weight `m`.
    pub compactness: f64,
    pub max_iterations: usize,
    /// Components smaller than this fraction of the mean segment size are
    /// merged into a neighbour.
    pub connectivity_min_size: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        Self {
            target_segments: 600,
            compactness: 10.0,
            max_iterations: 10,
            connectivity_min_size: 0.25,
        }
    }
}

impl SlicParams {
    pub fn validate(&self) -> Result<()> {
        if self.target_segments < 2 {
            return Err(Error::InvalidArgument(format!(
                "target_segments = {} must be >= 2",
                self.target_segments
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.compactness > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "compactness {} must be > 0",
                self.compactness
            )));
        }
        if !(self.connectivity_min_size >= 0.0) {
            return Err(Error::InvalidArgument(
                "connectivity_min_size must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel segment ids, contiguous in `0..num_segments`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub num_segments: usize,
}

impl SuperpixelMap {
    /// Wraps raw labels, relabelling them contiguously by first appearance
    /// in row-major order.
    pub fn from_labels(height: usize, width: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != height * width || labels.is_empty() {
            return Err(Error::shape(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        let (labels, num_segments) = relabel_first_appearance(&labels);
        Ok(Self {
            height,
            width,
            labels,
            num_segments,
        })
    }

    #[inline]
    pub fn label(&self, row: usize, col: usize) -> usize {
        self.labels[row * self.width + col]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_segments];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }

    /// Pairs of segments that touch through a 4-neighbourhood, `a < b`.
    pub fn adjacency(&self) -> BTreeSet<(usize, usize)> {
        let mut edges = BTreeSet::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let a = self.label(y, x);
                if x + 1 < self.width {
                    let b = self.label(y, x + 1);
                    if a != b {
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
                if y + 1 < self.height {
                    let b = self.label(y + 1, x);
                    if a != b {
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
            }
        }
        edges
    }
}

fn relabel_first_appearance(labels: &[usize]) -> (Vec<usize>, usize) {
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut map = vec![usize::MAX; max + 1];
    let mut next = 0;
    let out = labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect();
    (out, next)
}

#[derive(Debug, Clone)]
struct Center {
    y: f64,
    x: f64,
    feat: Vec<f64>,
}

/// Result of the k-means phase before connectivity enforcement, with the
/// objective recorded after each assignment step.
#[derive(Debug, Clone)]
pub struct SlicTrace {
    pub raw_labels: Vec<usize>,
    pub objective: Vec<f64>,
}

/// SLIC: localized k-means in joint feature/position space followed by
/// [`enforce_connectivity`].
pub fn compute_superpixels(features: FeatureView<'_>, params: &SlicParams) -> Result<SuperpixelMap> {
    let trace = slic_kmeans(features, params)?;
    let raw = SuperpixelMap::from_labels(features.height, features.width, trace.raw_labels)?;
    Ok(enforce_connectivity(&raw, params.connectivity_min_size))
}

/// The k-means phase of [`compute_superpixels`].
pub fn slic_kmeans(features: FeatureView<'_>, params: &SlicParams) -> Result<SlicTrace> {
    params.validate()?;
    let (d, h, w) = (features.channels, features.height, features.width);
    if d == 0 || h == 0 || w == 0 {
        return Err(Error::shape("empty feature volume"));
    }
    let n = h * w;
    if params.target_segments > n {
        return Err(Error::InvalidArgument(format!(
            "target_segments {} exceeds pixel count {n}",
            params.target_segments
        )));
    }
    let std = features.standardized();
    let feat = |p: usize, c: usize| std[c * n + p];
    let step = (n as f64 / params.target_segments as f64).sqrt();
    let spatial = (params.compactness / step).powi(2);

    let mut centers = seed_centers(&std, d, h, w, params.target_segments);

    // Bucket grid for window lookups; a center within `step` of a pixel lies
    // in the pixel's bucket or an adjacent one.
    let (gh, gw) = ((h as f64 / step).ceil() as usize + 1, (w as f64 / step).ceil() as usize + 1);
    let bucket_of = |y: f64, x: f64| {
        let by = ((y / step).floor().max(0.0) as usize).min(gh - 1);
        let bx = ((x / step).floor().max(0.0) as usize).min(gw - 1);
        (by, bx)
    };

    let dist2 = |p: usize, c: &Center| -> f64 {
        let (py, px) = ((p / w) as f64, (p % w) as f64);
        let mut df = 0.0;
        for (ch, cf) in c.feat.iter().enumerate() {
            let t = feat(p, ch) - cf;
            df += t * t;
        }
        df + spatial * ((py - c.y).powi(2) + (px - c.x).powi(2))
    };

    let mut labels = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..params.max_iterations {
        let mut buckets = vec![Vec::<usize>::new(); gh * gw];
        for (i, c) in centers.iter().enumerate() {
            let (by, bx) = bucket_of(c.y, c.x);
            buckets[by * gw + bx].push(i);
        }
        let assigned: Vec<(usize, f64)> = par::map_range(n, |p| {
            let (py, px) = ((p / w) as f64, (p % w) as f64);
            let (by, bx) = bucket_of(py, px);
            let mut best = (f64::INFINITY, usize::MAX);
            for yy in by.saturating_sub(1)..=(by + 1).min(gh - 1) {
                for xx in bx.saturating_sub(1)..=(bx + 1).min(gw - 1) {
                    for &ci in &buckets[yy * gw + xx] {
                        let c = &centers[ci];
                        if (c.y - py).abs() > step || (c.x - px).abs() > step {
                            continue;
                        }
                        let dd = dist2(p, c);
                        if dd < best.0 || (dd == best.0 && ci < best.1) {
                            best = (dd, ci);
                        }
                    }
                }
            }
            if best.1 == usize::MAX {
                for (ci, c) in centers.iter().enumerate() {
                    let dd = dist2(p, c);
                    if dd < best.0 {
                        best = (dd, ci);
                    }
                }
            }
            (best.1, best.0)
        });
        let changed = assigned
            .iter()
            .zip(&labels)
            .any(|(&(a, _), &l)| a != l);
        for (l, &(a, _)) in labels.iter_mut().zip(&assigned) {
            *l = a;
        }

        // Update step: centers move to the mean of their members.
        let k = centers.len();
        let mut sums = vec![0.0; k * (d + 2)];
        let mut counts = vec![0usize; k];
        for (p, &l) in labels.iter().enumerate() {
            let s = &mut sums[l * (d + 2)..(l + 1) * (d + 2)];
            s[0] += (p / w) as f64;
            s[1] += (p % w) as f64;
            for c in 0..d {
                s[2 + c] += feat(p, c);
            }
            counts[l] += 1;
        }
        for (i, c) in centers.iter_mut().enumerate() {
            if counts[i] == 0 {
                continue;
            }
            let s = &sums[i * (d + 2)..(i + 1) * (d + 2)];
            let inv = 1.0 / counts[i] as f64;
            c.y = s[0] * inv;
            c.x = s[1] * inv;
            for ch in 0..d {
                c.feat[ch] = s[2 + ch] * inv;
            }
        }
        objective.push(
            labels
                .iter()
                .enumerate()
                .map(|(p, &l)| dist2(p, &centers[l]))
                .sum(),
        );
        if !changed {
            break;
        }
    }
    Ok(SlicTrace {
        raw_labels: labels,
        objective,
    })
}

/// Regular grid of `rows x cols ~ target` seeds, each nudged to the lowest
/// gradient pixel of the 3x3 window around it when that is strictly lower
/// than at the seed itself.
fn seed_centers(std: &[f64], d: usize, h: usize, w: usize, target: usize) -> Vec<Center> {
    let n = h * w;
    let rows = ((target as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let cols = ((target as f64 / rows as f64).round() as usize).clamp(1, w);
    let (sy, sx) = (h as f64 / rows as f64, w as f64 / cols as f64);

    let value = |y: usize, x: usize, c: usize| std[c * n + y * w + x];
    let gradient = |y: usize, x: usize| -> f64 {
        let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
        let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
        (0..d)
            .map(|c| {
                let gy = value(y1, x, c) - value(y0, x, c);
                let gx = value(y, x1, c) - value(y, x0, c);
                gy * gy + gx * gx
            })
            .sum()
    };

    let mut centers = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let cy = (r as f64 + 0.5) * sy - 0.5;
            let cx = (c as f64 + 0.5) * sx - 0.5;
            let py = (cy.round() as usize).min(h - 1);
            let px = (cx.round() as usize).min(w - 1);
            let mut best = (gradient(py, px), py, px);
            for yy in py.saturating_sub(1)..=(py + 1).min(h - 1) {
                for xx in px.saturating_sub(1)..=(px + 1).min(w - 1) {
                    let g = gradient(yy, xx);
                    if g < best.0 {
                        best = (g, yy, xx);
                    }
                }
            }
            let (y, x) = if (best.1, best.2) == (py, px) {
                (cy, cx)
            } else {
                (best.1 as f64, best.2 as f64)
            };
            let p = best.1 * w + best.2;
            centers.push(Center {
                y,
                x,
                feat: (0..d).map(|ch| std[ch * n + p]).collect(),
            });
        }
    }
    centers
}

/// Splits every label into its 4-connected components, then merges each
/// component smaller than `min_size * (pixels / num_segments)` into its
/// largest adjacent region (ties to the earliest component in row-major
/// order). Output ids are contiguous in order of first appearance.
pub fn enforce_connectivity(map: &SuperpixelMap, min_size: f64) -> SuperpixelMap {
    let (h, w) = (map.height, map.width);
    let n = h * w;
    let (comp, ncomp) = connected_components(h, w, &map.labels);
    let threshold = min_size * n as f64 / map.num_segments.max(1) as f64;

    let mut size = vec![0usize; ncomp];
    for &c in &comp {
        size[c] += 1;
    }
    let mut adj = vec![BTreeSet::<usize>::new(); ncomp];
    for y in 0..h {
        for x in 0..w {
            let a = comp[y * w + x];
            if x + 1 < w {
                let b = comp[y * w + x + 1];
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            if y + 1 < h {
                let b = comp[(y + 1) * w + x];
                if a != b {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
        }
    }

    let mut parent: Vec<usize> = (0..ncomp).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }

    for c in 0..ncomp {
        loop {
            let root = find(&mut parent, c);
            if (size[root] as f64) >= threshold {
                break;
            }
            let neighbours: BTreeSet<usize> = adj[root]
                .iter()
                .map(|&o| find(&mut parent, o))
                .filter(|&o| o != root)
                .collect();
            let Some(target) = neighbours
                .iter()
                .copied()
                .max_by(|&a, &b| size[a].cmp(&size[b]).then(b.cmp(&a)))
            else {
                break;
            };
            // Merge into the smaller root id so ids stay stable.
            let (keep, gone) = (root.min(target), root.max(target));
            parent[gone] = keep;
            size[keep] += size[gone];
            let moved = std::mem::take(&mut adj[gone]);
            adj[keep].extend(moved);
        }
    }

    let labels: Vec<usize> = comp.iter().map(|&c| find(&mut parent, c)).collect();
    SuperpixelMap::from_labels(h, w, labels).expect("non-empty map")
}

/// Row-major flood fill of 4-connected same-label regions.
fn connected_components(h: usize, w: usize, labels: &[usize]) -> (Vec<usize>, usize) {
    let mut comp = vec![usize::MAX; h * w];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != usize::MAX {
            continue;
        }
        let l = labels[start];
        comp[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == usize::MAX && labels[q] == l {
                    comp[q] = next;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        next += 1;
    }
    (comp, next)
}

/// Per-segment means of the features plus `(row, col)` centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    pub channels: usize,
    /// `num_segments x channels`, row-major.
    pub means: Vec<f64>,
    pub centroids: Vec<(f64, f64)>,
    pub sizes: Vec<usize>,
}

impl SegmentStats {
    pub fn mean(&self, segment: usize) -> &[f64] {
        &self.means[segment * self.channels..(segment + 1) * self.channels]
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }
}

pub fn segment_means(features: FeatureView<'_>, map: &SuperpixelMap) -> Result<SegmentStats> {
    if features.height != map.height || features.width != map.width {
        return Err(Error::shape(format!(
            "features are {}x{}, superpixels {}x{}",
            features.height, features.width, map.height, map.width
        )));
    }
    let (d, k) = (features.channels, map.num_segments);
    let sizes = map.sizes();
    let mut means = vec![0.0; k * d];
    par::for_each_chunk_mut(&mut means, k, |c, dst| {
        for (&l, &v) in map.labels.iter().zip(features.channel(c)) {
            dst[l] += v;
        }
    });
    // `means` is channel-major at this point; transpose to segment-major.
    let mut out = vec![0.0; k * d];
    for c in 0..d {
        for s in 0..k {
            out[s * d + c] = means[c * k + s] / sizes[s] as f64;
        }
    }
    let mut centroids = vec![(0.0, 0.0); k];
    for (p, &l) in map.labels.iter().enumerate() {
        centroids[l].0 += (p / map.width) as f64;
        centroids[l].1 += (p % map.width) as f64;
    }
    for (c, &s) in centroids.iter_mut().zip(&sizes) {
        c.0 /= s as f64;
        c.1 /= s as f64;
    }
    Ok(SegmentStats {
        channels: d,
        means: out,
        centroids,
        sizes,
    })
}

/// Replaces every label by the most frequent label in its segment, ties to
/// the smallest label.
pub fn majority_label(map: &SuperpixelMap, labels: &[usize]) -> Result<Vec<usize>> {
    if labels.len() != map.labels.len() {
        return Err(Error::shape(format!(
            "{} class labels for {} pixels",
            labels.len(),
            map.labels.len()
        )));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut hist = vec![0usize; map.num_segments * classes];
    for (&s, &l) in map.labels.iter().zip(labels) {
        hist[s * classes + l] += 1;
    }
    let modal: Vec<usize> = (0..map.num_segments)
        .map(|s| {
            let row = &hist[s * classes..(s + 1) * classes];
            let mut best = 0;
            for (l, &count) in row.iter().enumerate() {
                if count > row[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    Ok(map.labels.iter().map(|&s| modal[s]).collect())
}

/// Debug overlay: segment boundaries painted red over `base` (or black).
pub fn boundary_overlay(map: &SuperpixelMap, base: Option<&RgbImage>) -> RgbImage {
    let (h, w) = (map.height, map.width);
    let mut data = match base {
        Some(img) if img.height == h && img.width == w => img.data.clone(),
        _ => vec![0; h * w * 3],
    };
    for y in 0..h {
        for x in 0..w {
            let l = map.label(y, x);
            let edge = (x + 1 < w && map.label(y, x + 1) != l) || (y + 1 < h && map.label(y + 1, x) != l);
            if edge {
                data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&[255, 0, 0]);
            }
        }
    }
    RgbImage {
        height: h,
        width: w,
        data,
    }
}
