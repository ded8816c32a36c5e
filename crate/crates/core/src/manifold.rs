//! Neighbor-preserving geodesic embedding.
//!
//! Samples are the columns of a matrix. A kNN graph over them approximates
//! the data manifold, shortest paths on that graph give geodesic distances,
//! and a point is projected onto the manifold as a convex combination of its
//! geodesically nearest samples plus a shrunk, scaled residual.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use crate::error::{LrdError, Result};
use crate::exec::Execution;
use crate::ops::{shrink, svd, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldParams {
    /// Neighbor count for both the kNN graph and the embedding.
    pub k: usize,
    /// Shrinkage applied to the reconstruction residual.
    pub alpha: f64,
    /// Scale of the shrunk residual added back, in [0, 1].
    pub epsilon_prime: f64,
}

impl Default for ManifoldParams {
    fn default() -> Self {
        ManifoldParams {
            k: 7,
            alpha: 0.05,
            epsilon_prime: 0.85,
        }
    }
}

impl ManifoldParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(LrdError::InvalidArgument("K must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(LrdError::InvalidArgument(format!(
                "alpha must be non-negative, got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon_prime) {
            return Err(LrdError::InvalidArgument(format!(
                "epsilon' must lie in [0, 1], got {}",
                self.epsilon_prime
            )));
        }
        Ok(())
    }
}

/// Undirected kNN graph; `adjacency[i]` lists `(neighbor, euclidean length)`
/// sorted by neighbor index.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl KnnGraph {
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b, w) in edges {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
            list.dedup_by_key(|e| e.0);
        }
        KnnGraph { adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adjacency[i]
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a].iter().any(|e| e.0 == b)
    }
}

fn column_distance(a: &DenseMatrix, i: usize, b: &DenseMatrix, j: usize) -> f64 {
    a.column(i)
        .iter()
        .zip(b.column(j).iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Indices of the `k` smallest finite entries of `d`, skipping `skip`; ties
/// break toward the lower index.
fn k_smallest(d: &[f64], k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..d.len())
        .filter(|&j| Some(j) != skip && d[j].is_finite())
        .collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Connects every column of `samples` to its `k` Euclidean nearest columns
/// and symmetrizes by union.
pub fn build_knn_graph(samples: &DenseMatrix, k: usize, exec: Execution) -> Result<KnnGraph> {
    let n = samples.ncols();
    if k == 0 || k >= n {
        return Err(LrdError::InvalidArgument(format!(
            "K = {k} must satisfy 1 <= K < {n} samples"
        )));
    }
    let lists = exec.map(n, |i| {
        let d: Vec<f64> = (0..n)
            .map(|j| column_distance(samples, i, samples, j))
            .collect();
        k_smallest(&d, k, Some(i))
            .into_iter()
            .map(|j| (i, j, d[j]))
            .collect::<Vec<_>>()
    });
    let edges: Vec<_> = lists.into_iter().flatten().collect();
    Ok(KnnGraph::from_edges(n, &edges))
}

#[derive(Copy, Clone, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra(graph: &KnnGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.node_count()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Frontier {
        dist: 0.0,
        node: source,
    });
    while let Some(Frontier { dist: d, node }) = heap.pop() {
        if d > dist[node] {
            continue;
        }
        for &(next, w) in graph.neighbors(node) {
            let nd = d + w;
            if nd < dist[next] {
                dist[next] = nd;
                heap.push(Frontier {
                    dist: nd,
                    node: next,
                });
            }
        }
    }
    dist
}

/// All-pairs shortest-path lengths; unreachable pairs are `+inf`.
pub fn geodesic_distances(graph: &KnnGraph, exec: Execution) -> DenseMatrix {
    let n = graph.node_count();
    let rows = exec.map(n, |s| dijkstra(graph, s));
    // Sums along a path can differ in the last bit depending on direction.
    DenseMatrix::from_fn(n, n, |i, j| rows[i][j].min(rows[j][i]))
}

/// Weights of one sample's reconstruction from its neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingWeights {
    pub neighbor_indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Turns geodesic distances `g_j` into convex weights proportional to
/// `1 - g_j / (g_max + g_min)`.
pub fn weights_from_distances(g: &[f64]) -> Vec<f64> {
    if g.is_empty() {
        return Vec::new();
    }
    let gmax = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gmin = g.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = gmax + gmin;
    let raw: Vec<f64> = if scale > 0.0 {
        g.iter().map(|d| 1.0 - d / scale).collect()
    } else {
        vec![1.0; g.len()]
    };
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone)]
pub struct ManifoldModel {
    samples: DenseMatrix,
    knn: KnnGraph,
    geodesic: DenseMatrix,
    params: ManifoldParams,
}

impl ManifoldModel {
    pub fn build(samples: DenseMatrix, params: ManifoldParams, exec: Execution) -> Result<Self> {
        params.validate()?;
        let knn = build_knn_graph(&samples, params.k, exec)?;
        let geodesic = geodesic_distances(&knn, exec);
        Ok(ManifoldModel {
            samples,
            knn,
            geodesic,
            params,
        })
    }

    pub fn samples(&self) -> &DenseMatrix {
        &self.samples
    }

    pub fn knn(&self) -> &KnnGraph {
        &self.knn
    }

    pub fn geodesic(&self) -> &DenseMatrix {
        &self.geodesic
    }

    pub fn params(&self) -> &ManifoldParams {
        &self.params
    }

    fn select(&self, index: usize, g: &[f64], skip: Option<usize>) -> Result<EmbeddingWeights> {
        let k = self.params.k;
        let neighbor_indices = k_smallest(g, k, skip);
        if neighbor_indices.len() < k {
            return Err(LrdError::DisconnectedManifold {
                index,
                reachable: neighbor_indices.len(),
                needed: k,
            });
        }
        let dists: Vec<f64> = neighbor_indices.iter().map(|&j| g[j]).collect();
        Ok(EmbeddingWeights {
            weights: weights_from_distances(&dists),
            neighbor_indices,
        })
    }

    /// Weights for sample `x_index` from its K geodesically nearest other
    /// samples.
    pub fn embedding_weights(&self, x_index: usize) -> Result<EmbeddingWeights> {
        if x_index >= self.samples.ncols() {
            return Err(LrdError::InvalidArgument(format!(
                "sample {x_index} out of range"
            )));
        }
        let g: Vec<f64> = self.geodesic.row(x_index).iter().copied().collect();
        self.select(x_index, &g, Some(x_index))
    }

    /// Weights for an out-of-sample point: it is attached to its K Euclidean
    /// nearest samples and geodesics continue through the graph.
    pub fn weights_for_point(&self, x: &DVector<f64>) -> Result<EmbeddingWeights> {
        let n = self.samples.ncols();
        if x.len() != self.samples.nrows() {
            return Err(LrdError::ShapeMismatch {
                expected: (self.samples.nrows(), 1),
                got: (x.len(), 1),
            });
        }
        let xm = DenseMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let euclid: Vec<f64> = (0..n)
            .map(|j| column_distance(&xm, 0, &self.samples, j))
            .collect();
        let attach = k_smallest(&euclid, self.params.k, None);
        let g: Vec<f64> = (0..n)
            .map(|j| {
                attach
                    .iter()
                    .map(|&a| euclid[a] + self.geodesic[(a, j)])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        self.select(n, &g, None)
    }

    /// Projects an out-of-sample point onto the manifold.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let w = self.weights_for_point(x)?;
        Ok(apply_embedding(x, &self.samples, &w, &self.params))
    }
}

/// `M1 + eps' * S_alpha[x - M1]` with `M1 = Σ w_j samples_j`.
pub fn apply_embedding(
    x: &DVector<f64>,
    samples: &DenseMatrix,
    w: &EmbeddingWeights,
    params: &ManifoldParams,
) -> DVector<f64> {
    let mut m1 = DVector::zeros(x.len());
    for (&j, &wj) in w.neighbor_indices.iter().zip(&w.weights) {
        m1.axpy(wj, &samples.column(j), 1.0);
    }
    let mut out = m1.clone();
    for i in 0..x.len() {
        out[i] += params.epsilon_prime * shrink(x[i] - m1[i], params.alpha);
    }
    out
}

/// Weights of every column of `v` w.r.t. the other columns.
pub fn batch_weights(
    v: &DenseMatrix,
    params: ManifoldParams,
    exec: Execution,
) -> Result<Vec<EmbeddingWeights>> {
    if v.ncols() < params.k + 1 {
        return Err(LrdError::InvalidArgument(format!(
            "need at least K + 1 = {} columns, got {}",
            params.k + 1,
            v.ncols()
        )));
    }
    let model = ManifoldModel::build(v.clone(), params, exec)?;
    exec.try_map(v.ncols(), |i| model.embedding_weights(i))
}

/// Applies precomputed per-column weights to the columns of `v`.
pub fn project_with_weights(
    v: &DenseMatrix,
    weights: &[EmbeddingWeights],
    params: &ManifoldParams,
    exec: Execution,
) -> Result<DenseMatrix> {
    if weights.len() != v.ncols() {
        return Err(LrdError::InvalidArgument(format!(
            "{} weight sets for {} columns",
            weights.len(),
            v.ncols()
        )));
    }
    let cols = exec.map(v.ncols(), |i| {
        apply_embedding(&v.column(i).into_owned(), v, &weights[i], params)
    });
    Ok(DenseMatrix::from_columns(&cols))
}

/// Projects every column of `v` onto the manifold spanned by the other
/// columns.
pub fn project_batch(v: &DenseMatrix, params: ManifoldParams, exec: Execution) -> Result<DenseMatrix> {
    let weights = batch_weights(v, params, exec)?;
    project_with_weights(v, &weights, &params, exec)
}

/// Smallest PCA dimension whose leading eigenvalues carry at least `energy`
/// of the total variance of the columns of `samples`.
pub fn estimate_intrinsic_dim(samples: &DenseMatrix, energy: f64) -> Result<usize> {
    if samples.ncols() < 2 {
        return Err(LrdError::InvalidArgument(
            "need at least two samples".into(),
        ));
    }
    let mean = samples.column_mean();
    let mut centered = samples.clone();
    for mut c in centered.column_iter_mut() {
        c -= &mean;
    }
    let eig: Vec<f64> = svd(&centered)?.sigma.iter().map(|s| s * s).collect();
    let total: f64 = eig.iter().sum();
    if total <= 0.0 {
        return Ok(0);
    }
    let mut acc = 0.0;
    for (d, e) in eig.iter().enumerate() {
        acc += e;
        if acc >= energy * total {
            return Ok(d + 1);
        }
    }
    Ok(eig.len())
}

/// Closed-form projection `(Y + (σ* + μ) I)^{-1} (σ* + 2μ)` for a square
/// multiplier and diagonal penalty weights `sigma`. Kept as a reference; the
/// solver projects with the embedding instead.
pub fn closed_form_projection(y: &DenseMatrix, sigma: &[f64], mu: f64) -> Result<DenseMatrix> {
    let n = y.nrows();
    if y.ncols() != n || sigma.len() != n {
        return Err(LrdError::ShapeMismatch {
            expected: (n, n),
            got: (y.ncols(), sigma.len()),
        });
    }
    let mut lhs = y.clone();
    for i in 0..n {
        lhs[(i, i)] += sigma[i] + mu;
    }
    let inv = lhs
        .try_inverse()
        .ok_or_else(|| LrdError::Numeric("closed-form projection is singular".into()))?;
    let rhs = DenseMatrix::from_diagonal(&DVector::from_iterator(
        n,
        sigma.iter().map(|s| s + 2.0 * mu),
    ));
    Ok(inv * rhs)
}
