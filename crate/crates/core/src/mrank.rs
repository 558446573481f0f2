//! Two-stage graph manifold ranking over superpixels.
//!
//! Nodes are superpixels; edges join spatial neighbours, neighbours of
//! neighbours, and every pair of image-border segments. Ranking solves
//! `(D - alpha W) f = y`. Stage one queries each image side as background
//! and multiplies the complemented scores; stage two re-ranks against the
//! above-mean nodes of stage one as foreground queries.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hsio::SaliencyMap;
use crate::slic::{segment_means, SegmentStats, SuperpixelMap};
use crate::volume::FeatureView;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdRule {
    /// Foreground queries are the nodes whose stage-one score exceeds the
    /// stage-one mean.
    MeanOfStage1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrParams {
    pub alpha: f64,
    pub sigma_sq: f64,
    pub stage2_threshold_rule: ThresholdRule,
}

impl Default for MrParams {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            sigma_sq: 0.1,
            stage2_threshold_rule: ThresholdRule::MeanOfStage1,
        }
    }
}

impl MrParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha = {} must lie in (0, 1)",
                self.alpha
            )));
        }
        if !(self.sigma_sq > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma_sq = {} must be > 0",
                self.sigma_sq
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Top,
    Bottom,
    Left,
    Right,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Top, Side::Bottom, Side::Left, Side::Right];
}

/// Symmetric, non-negative, zero-diagonal affinity graph stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub nodes: usize,
    /// Row-major `nodes x nodes`.
    pub weights: Vec<f64>,
    pub degrees: Vec<f64>,
    /// Node ids touching each side, in [`Side::ALL`] order.
    pub sides: [Vec<usize>; 4],
}

impl AffinityGraph {
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.nodes + j]
    }

    pub fn side(&self, side: Side) -> &[usize] {
        &self.sides[side as usize]
    }

    /// Every node touching any image side, ascending.
    pub fn boundary(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.sides.iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    /// Builds a graph directly from a weight matrix (no side sets), mostly
    /// for tests and external callers that supply their own affinities.
    pub fn from_weights(nodes: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != nodes * nodes {
            return Err(Error::shape(format!(
                "{} weights for {nodes} nodes",
                weights.len()
            )));
        }
        for i in 0..nodes {
            if weights[i * nodes + i] != 0.0 {
                return Err(Error::InvalidArgument("diagonal weights must be zero".into()));
            }
            for j in 0..nodes {
                let w = weights[i * nodes + j];
                if !(w >= 0.0) || w != weights[j * nodes + i] {
                    return Err(Error::InvalidArgument(
                        "weights must be symmetric and non-negative".into(),
                    ));
                }
            }
        }
        let degrees = (0..nodes)
            .map(|i| weights[i * nodes..(i + 1) * nodes].iter().sum())
            .collect();
        Ok(Self {
            nodes,
            weights,
            degrees,
            sides: Default::default(),
        })
    }

    /// Plain-text sparse triplets `i j w` for `i < j` and `w > 0`.
    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for i in 0..self.nodes {
            for j in i + 1..self.nodes {
                let w = self.weight(i, j);
                if w > 0.0 {
                    let _ = writeln!(s, "{i} {j} {w}");
                }
            }
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Node ids touching each image side.
pub fn side_sets(map: &SuperpixelMap) -> [Vec<usize>; 4] {
    let (h, w) = (map.height, map.width);
    let collect = |it: &mut dyn Iterator<Item = usize>| -> Vec<usize> {
        it.collect::<BTreeSet<_>>().into_iter().collect()
    };
    [
        collect(&mut (0..w).map(|x| map.label(0, x))),
        collect(&mut (0..w).map(|x| map.label(h - 1, x))),
        collect(&mut (0..h).map(|y| map.label(y, 0))),
        collect(&mut (0..h).map(|y| map.label(y, w - 1))),
    ]
}

/// Edge set: adjacency, two-hop adjacency and the closed boundary loop.
pub fn graph_edges(map: &SuperpixelMap) -> BTreeSet<(usize, usize)> {
    let n = map.num_segments;
    let adjacent = map.adjacency();
    let mut neighbours = vec![BTreeSet::new(); n];
    for &(a, b) in &adjacent {
        neighbours[a].insert(b);
        neighbours[b].insert(a);
    }
    let mut edges = adjacent.clone();
    for (i, nb) in neighbours.iter().enumerate() {
        for &j in nb {
            for &k in &neighbours[j] {
                if k != i {
                    edges.insert((i.min(k), i.max(k)));
                }
            }
        }
    }
    let sides = side_sets(map);
    let boundary: BTreeSet<usize> = sides.iter().flatten().copied().collect();
    let boundary: Vec<usize> = boundary.into_iter().collect();
    for (a, &i) in boundary.iter().enumerate() {
        for &j in &boundary[a + 1..] {
            edges.insert((i, j));
        }
    }
    edges
}

/// Affinities `w_ij = exp(-d_ij / sigma_sq)`, where `d_ij` is the Euclidean
/// distance between segment features, min-max scaled to `[0, 1]` over the
/// graph's edges (all zero when every edge has the same distance).
pub fn build_graph(map: &SuperpixelMap, segments: &SegmentStats, params: &MrParams) -> Result<AffinityGraph> {
    params.validate()?;
    let n = map.num_segments;
    if n == 0 {
        return Err(Error::Degenerate("empty segmentation".into()));
    }
    if segments.len() != n {
        return Err(Error::shape(format!(
            "{} segment descriptors for {n} segments",
            segments.len()
        )));
    }
    if segments.means.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("segment features must be finite".into()));
    }
    let edges: Vec<(usize, usize)> = graph_edges(map).into_iter().collect();
    let dist: Vec<f64> = edges
        .iter()
        .map(|&(i, j)| {
            segments
                .mean(i)
                .iter()
                .zip(segments.mean(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    let (lo, hi) = dist
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let mut weights = vec![0.0; n * n];
    for (&(i, j), &d) in edges.iter().zip(&dist) {
        let scaled = if hi > lo { (d - lo) / (hi - lo) } else { 0.0 };
        let w = (-scaled / params.sigma_sq).exp();
        weights[i * n + j] = w;
        weights[j * n + i] = w;
    }
    let degrees = (0..n)
        .map(|i| weights[i * n..(i + 1) * n].iter().sum())
        .collect();
    Ok(AffinityGraph {
        nodes: n,
        weights,
        degrees,
        sides: side_sets(map),
    })
}

/// Factorized `D - alpha W`, reusable across queries.
pub struct Ranker<'g> {
    graph: &'g AffinityGraph,
    alpha: f64,
    system: DMatrix<f64>,
    factor: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

impl<'g> Ranker<'g> {
    pub fn new(graph: &'g AffinityGraph, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidArgument(format!("alpha = {alpha} must lie in [0, 1)")));
        }
        let n = graph.nodes;
        let system = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                graph.degrees[i]
            } else {
                -alpha * graph.weight(i, j)
            }
        });
        let factor = system
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("D - alpha W is not positive definite (isolated node?)".into()))?;
        Ok(Self {
            graph,
            alpha,
            system,
            factor,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Solves `(D - alpha W) f = y` for an indicator query, refining until
    /// `||residual||_inf <= 1e-8 ||y||_inf`.
    pub fn rank(&self, query: &[f64]) -> Result<Vec<f64>> {
        let n = self.graph.nodes;
        if query.len() != n {
            return Err(Error::shape(format!("query of length {} for {n} nodes", query.len())));
        }
        if query.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("query entries must be 0 or 1".into()));
        }
        let y_inf = query.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if y_inf == 0.0 {
            return Err(Error::InvalidArgument("query selects no nodes".into()));
        }
        let y = DVector::from_column_slice(query);
        let mut f = self.factor.solve(&y);
        let tol = 1e-8 * y_inf;
        for _ in 0..4 {
            let r = &y - &self.system * &f;
            if r.amax() <= tol {
                return Ok(f.as_slice().to_vec());
            }
            f += self.factor.solve(&r);
        }
        let r = &y - &self.system * &f;
        if r.amax() <= tol {
            Ok(f.as_slice().to_vec())
        } else {
            Err(Error::Singular(format!(
                "residual {:.3e} exceeds {tol:.3e}",
                r.amax()
            )))
        }
    }
}

/// One-shot manifold ranking, see [`Ranker::rank`].
pub fn rank(graph: &AffinityGraph, query: &[f64], alpha: f64) -> Result<Vec<f64>> {
    Ranker::new(graph, alpha)?.rank(query)
}

/// Min-max scale to `[0, 1]`; constant input maps to zeros.
pub fn normalize_unit(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; values.len()]
    }
}

fn indicator(n: usize, nodes: &[usize]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for &i in nodes {
        y[i] = 1.0;
    }
    y
}

/// Background-prior stage: product over the four sides of the complemented,
/// normalized side rankings, renormalized to `[0, 1]`. If a side has no
/// nodes, all border nodes form a single query instead.
pub fn stage1_background(graph: &AffinityGraph, params: &MrParams) -> Result<Vec<f64>> {
    let ranker = Ranker::new(graph, params.alpha)?;
    stage1_with(&ranker, graph)
}

fn stage1_with(ranker: &Ranker<'_>, graph: &AffinityGraph) -> Result<Vec<f64>> {
    let n = graph.nodes;
    if graph.sides.iter().any(|s| s.is_empty()) {
        let boundary = graph.boundary();
        if boundary.is_empty() {
            return Err(Error::Degenerate("graph has no boundary nodes".into()));
        }
        let f = normalize_unit(&ranker.rank(&indicator(n, &boundary))?);
        return Ok(normalize_unit(&f.iter().map(|v| 1.0 - v).collect::<Vec<_>>()));
    }
    let mut coarse = vec![1.0; n];
    for side in Side::ALL {
        let f = normalize_unit(&ranker.rank(&indicator(n, graph.side(side)))?);
        for (c, v) in coarse.iter_mut().zip(f) {
            *c *= 1.0 - v;
        }
    }
    Ok(normalize_unit(&coarse))
}

/// Foreground stage: ranks against nodes whose coarse score exceeds the
/// mean. Constant coarse scores are returned unchanged.
pub fn stage2_foreground(graph: &AffinityGraph, coarse: &[f64], params: &MrParams) -> Result<Vec<f64>> {
    let ranker = Ranker::new(graph, params.alpha)?;
    stage2_with(&ranker, coarse, params)
}

fn stage2_with(ranker: &Ranker<'_>, coarse: &[f64], params: &MrParams) -> Result<Vec<f64>> {
    if coarse.len() != ranker.graph.nodes {
        return Err(Error::shape(format!(
            "{} coarse scores for {} nodes",
            coarse.len(),
            ranker.graph.nodes
        )));
    }
    let ThresholdRule::MeanOfStage1 = params.stage2_threshold_rule;
    if coarse.iter().all(|&c| c == coarse[0]) {
        return Ok(coarse.to_vec());
    }
    let mean = coarse.iter().sum::<f64>() / coarse.len() as f64;
    let query: Vec<f64> = coarse
        .iter()
        .map(|&c| if c > mean { 1.0 } else { 0.0 })
        .collect();
    if query.iter().all(|&q| q == 0.0) {
        return Ok(coarse.to_vec());
    }
    Ok(normalize_unit(&ranker.rank(&query)?))
}

/// Per-node scores of both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct StageScores {
    pub stage1: Vec<f64>,
    pub stage2: Vec<f64>,
}

impl StageScores {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("node,stage1,stage2\n");
        for (i, (a, b)) in self.stage1.iter().zip(&self.stage2).enumerate() {
            let _ = writeln!(s, "{i},{a},{b}");
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Runs both stages on a prebuilt graph.
pub fn rank_saliency(graph: &AffinityGraph, params: &MrParams) -> Result<StageScores> {
    let ranker = Ranker::new(graph, params.alpha)?;
    let stage1 = stage1_with(&ranker, graph)?;
    let stage2 = stage2_with(&ranker, &stage1, params)?;
    Ok(StageScores { stage1, stage2 })
}

/// Features -> per-channel z-score -> segment means -> graph -> two-stage
/// ranking -> per-pixel broadcast.
pub fn saliency_from_features(
    features: FeatureView<'_>,
    map: &SuperpixelMap,
    params: &MrParams,
) -> Result<SaliencyMap> {
    let (_, scores) = saliency_graph(features, map, params)?;
    broadcast(map, &scores.stage2)
}

/// Like [`saliency_from_features`] but also returns the graph and the
/// per-node stage scores.
pub fn saliency_graph(
    features: FeatureView<'_>,
    map: &SuperpixelMap,
    params: &MrParams,
) -> Result<(AffinityGraph, StageScores)> {
    params.validate()?;
    if features.height != map.height || features.width != map.width {
        return Err(Error::shape(format!(
            "features are {}x{}, superpixels {}x{}",
            features.height, features.width, map.height, map.width
        )));
    }
    let standardized = features.standardized();
    let view = FeatureView {
        data: &standardized,
        ..features
    };
    let stats = segment_means(view, map)?;
    let graph = build_graph(map, &stats, params)?;
    if graph.nodes == 1 {
        let zeros = vec![0.0];
        return Ok((
            graph,
            StageScores {
                stage1: zeros.clone(),
                stage2: zeros,
            },
        ));
    }
    let scores = rank_saliency(&graph, params)?;
    Ok((graph, scores))
}

pub fn broadcast(map: &SuperpixelMap, node_scores: &[f64]) -> Result<SaliencyMap> {
    if node_scores.len() != map.num_segments {
        return Err(Error::shape(format!(
            "{} scores for {} segments",
            node_scores.len(),
            map.num_segments
        )));
    }
    SaliencyMap::new(
        map.height,
        map.width,
        map.labels.iter().map(|&l| node_scores[l]).collect(),
    )
}
