//! Moment estimation: the covariance-like or precision-like n x n matrix that
//! each classical method eigendecomposes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ProbDrError, Result};
use crate::graph_gp::{build_laplacian, LaplacianKind};
use crate::linalg::{
    double_center, inverse_pd, max_asymmetry, psd_project, sq_dists_rows, sym_eigen, symmetrize,
};
use crate::types::{ensure_finite, ensure_square, DataMatrix};

/// Whether a moment plays the role of a covariance or a precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    Covariance,
    Precision,
}

/// A symmetric n x n moment with its role and the method that produced it.
#[derive(Debug, Clone)]
pub struct MomentMatrix {
    pub values: DMatrix<f64>,
    pub kind: MomentKind,
    pub algorithm: &'static str,
    /// Known null vector of a Laplacian-type precision (unit norm).
    pub null_vector: Option<DVector<f64>>,
}

impl MomentMatrix {
    pub fn covariance(values: DMatrix<f64>, algorithm: &'static str) -> Self {
        Self { values, kind: MomentKind::Covariance, algorithm, null_vector: None }
    }

    pub fn precision(values: DMatrix<f64>, algorithm: &'static str) -> Self {
        Self { values, kind: MomentKind::Precision, algorithm, null_vector: None }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }
}

/// How neighbours are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Knn { k: usize },
    Epsilon { eps: f64 },
}

/// Directed neighbour edges. Weights are squared Euclidean distances.
#[derive(Debug, Clone)]
pub struct NeighborGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub spec: GraphSpec,
}

impl NeighborGraph {
    pub fn build(y: &DataMatrix, spec: GraphSpec) -> Result<Self> {
        let d2 = sq_dists_rows(y.values());
        Self::from_sq_dists(&d2, spec)
    }

    pub fn from_sq_dists(d2: &DMatrix<f64>, spec: GraphSpec) -> Result<Self> {
        let n = d2.nrows();
        let mut edges = Vec::new();
        match spec {
            GraphSpec::Knn { k } => {
                if k == 0 || k >= n {
                    return Err(ProbDrError::InvalidArgument(format!(
                        "neighbour count k={k} must satisfy 1 <= k < n={n}"
                    )));
                }
                for i in 0..n {
                    for j in nearest_neighbors(d2, i, k) {
                        edges.push((i, j, d2[(i, j)]));
                    }
                }
            }
            GraphSpec::Epsilon { eps } => {
                if !(eps > 0.0) {
                    return Err(ProbDrError::InvalidArgument(format!("epsilon must be > 0, got {eps}")));
                }
                let eps2 = eps * eps;
                for i in 0..n {
                    for j in 0..n {
                        if i != j && d2[(i, j)] < eps2 {
                            edges.push((i, j, d2[(i, j)]));
                        }
                    }
                }
            }
        }
        Ok(Self { n, edges, spec })
    }

    /// 0/1 adjacency, symmetrised by union.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j, _) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    /// Symmetric adjacency lists with Euclidean edge lengths.
    fn undirected_lengths(&self) -> Vec<Vec<(usize, f64)>> {
        let mut lengths = DMatrix::from_element(self.n, self.n, f64::INFINITY);
        for &(i, j, w) in &self.edges {
            let l = w.sqrt();
            lengths[(i, j)] = lengths[(i, j)].min(l);
            lengths[(j, i)] = lengths[(j, i)].min(l);
        }
        (0..self.n)
            .map(|i| {
                (0..self.n)
                    .filter(|&j| lengths[(i, j)].is_finite())
                    .map(|j| (j, lengths[(i, j)]))
                    .collect()
            })
            .collect()
    }

    pub fn component_count(&self) -> usize {
        let adj = self.undirected_lengths();
        let mut seen = vec![false; self.n];
        let mut components = 0;
        for start in 0..self.n {
            if seen[start] {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        components
    }
}

/// The `k` nearest other points of `i`, ties broken by index.
pub(crate) fn nearest_neighbors(d2: &DMatrix<f64>, i: usize, k: usize) -> Vec<usize> {
    let mut others: Vec<usize> = (0..d2.nrows()).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| d2[(i, a)].total_cmp(&d2[(i, b)]).then(a.cmp(&b)));
    others.truncate(k);
    others
}

/// Positive-definite kernels for kernel PCA.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Kernel {
    Rbf { lengthscale: f64 },
    Linear,
    Polynomial { degree: u32, offset: f64 },
}

impl Kernel {
    pub fn matrix(&self, y: &DataMatrix) -> Result<DMatrix<f64>> {
        let v = y.values();
        let gram = v * v.transpose();
        Ok(match *self {
            Kernel::Rbf { lengthscale } => {
                if !(lengthscale > 0.0) {
                    return Err(ProbDrError::InvalidArgument(format!(
                        "rbf lengthscale must be > 0, got {lengthscale}"
                    )));
                }
                let d2 = sq_dists_rows(v);
                d2.map(|s| (-s / (2.0 * lengthscale * lengthscale)).exp())
            }
            Kernel::Linear => gram,
            Kernel::Polynomial { degree, offset } => gram.map(|g| (g + offset).powi(degree as i32)),
        })
    }
}

fn center_columns(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = y.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Σ̂ = Y Yᵀ / d, optionally column-centering Y first.
pub fn pca_moment(y: &DataMatrix, center: bool) -> MomentMatrix {
    let yc = if center { center_columns(y.values()) } else { y.values().clone() };
    let s = symmetrize(&(&yc * yc.transpose() / y.d() as f64));
    MomentMatrix::covariance(s, "pca")
}

/// Classical MDS: psd_project(H(-D²/2)H).
pub fn cmds_moment(dist_sq: &DMatrix<f64>) -> Result<MomentMatrix> {
    ensure_square(dist_sq, "distance matrix")?;
    ensure_finite(dist_sq, "distance matrix")?;
    let scale = dist_sq.amax().max(1.0);
    let asym = max_asymmetry(dist_sq);
    if asym > 1e-9 * scale {
        return Err(ProbDrError::NotSymmetric { max_asymmetry: asym });
    }
    if dist_sq.iter().any(|&v| v < 0.0) {
        return Err(ProbDrError::InvalidArgument("squared distances must be non-negative".into()));
    }
    let k = dist_sq * -0.5;
    let s = psd_project(&double_center(&k)?)?;
    Ok(MomentMatrix::covariance(s, "cmds"))
}

#[derive(Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path (geodesic) distances on the union-symmetrised kNN graph.
pub fn geodesic_distances(y: &DataMatrix, k: usize) -> Result<DMatrix<f64>> {
    let graph = NeighborGraph::build(y, GraphSpec::Knn { k })?;
    let components = graph.component_count();
    if components > 1 {
        return Err(ProbDrError::Disconnected { components });
    }
    let adj = graph.undirected_lengths();
    let n = y.n();
    let mut out = DMatrix::zeros(n, n);
    for src in 0..n {
        let mut dist = vec![f64::INFINITY; n];
        dist[src] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Frontier { dist: 0.0, node: src });
        while let Some(Frontier { dist: du, node: u }) = heap.pop() {
            if du > dist[u] {
                continue;
            }
            for &(v, len) in &adj[u] {
                let cand = du + len;
                if cand < dist[v] {
                    dist[v] = cand;
                    heap.push(Frontier { dist: cand, node: v });
                }
            }
        }
        for (dst, d) in dist.into_iter().enumerate() {
            out[(src, dst)] = d;
        }
    }
    // shortest paths are symmetric up to summation order
    Ok(symmetrize(&out))
}

/// Isomap: classical MDS on squared geodesic distances.
pub fn isomap_moment(y: &DataMatrix, k: usize) -> Result<MomentMatrix> {
    let geo = geodesic_distances(y, k)?;
    let mut m = cmds_moment(&geo.map(|g| g * g))?;
    m.algorithm = "isomap";
    Ok(m)
}

/// Kernel PCA: psd_project(H K H).
pub fn kpca_moment(y: &DataMatrix, kernel: &Kernel) -> Result<MomentMatrix> {
    let k = kernel.matrix(y)?;
    let s = psd_project(&double_center(&k)?)?;
    Ok(MomentMatrix::covariance(s, "kpca"))
}

/// An externally estimated kernel (e.g. an MVU solution) routed through
/// centering and PSD projection.
pub fn external_kernel_moment(k: &DMatrix<f64>) -> Result<MomentMatrix> {
    let s = psd_project(&double_center(k)?)?;
    Ok(MomentMatrix::covariance(s, "external_kernel"))
}

fn laplacian_null_vector(adjacency: &DMatrix<f64>, kind: LaplacianKind) -> DVector<f64> {
    let n = adjacency.nrows();
    let v = match kind {
        LaplacianKind::Ordinary => DVector::from_element(n, 1.0),
        LaplacianKind::Normalized => {
            DVector::from_iterator(n, (0..n).map(|i| adjacency.row(i).sum().sqrt()))
        }
    };
    let norm = v.norm();
    if norm > 0.0 {
        v / norm
    } else {
        v
    }
}

/// Laplacian eigenmaps precision built from a neighbour graph.
pub fn le_precision(y: &DataMatrix, graph: GraphSpec, kind: LaplacianKind) -> Result<MomentMatrix> {
    let g = NeighborGraph::build(y, graph)?;
    let a = g.adjacency();
    if let GraphSpec::Epsilon { .. } = graph {
        let isolated: Vec<usize> = (0..a.nrows()).filter(|&i| a.row(i).sum() == 0.0).collect();
        if !isolated.is_empty() {
            return Err(ProbDrError::IsolatedNodes(isolated));
        }
    }
    let l = build_laplacian(&a, kind)?;
    let mut m = MomentMatrix::precision(l, "le");
    m.null_vector = Some(laplacian_null_vector(&a, kind));
    Ok(m)
}

/// Accepts a precomputed graph Laplacian as a precision moment.
pub fn laplacian_moment(l: &DMatrix<f64>) -> Result<MomentMatrix> {
    ensure_square(l, "laplacian")?;
    ensure_finite(l, "laplacian")?;
    let asym = max_asymmetry(l);
    if asym > 1e-9 * l.amax().max(1.0) {
        return Err(ProbDrError::NotSymmetric { max_asymmetry: asym });
    }
    let mut m = MomentMatrix::precision(symmetrize(l), "laplacian");
    let n = l.nrows();
    let ones = DVector::from_element(n, 1.0);
    if (l * &ones).amax() < 1e-9 * l.amax().max(1.0) {
        m.null_vector = Some(ones / (n as f64).sqrt());
    }
    Ok(m)
}

/// Σ̂ = H (Γ̂ + γI)⁻¹ H: the covariance form of a Laplacian precision.
pub fn le_covariance(precision: &MomentMatrix, gamma: f64) -> Result<MomentMatrix> {
    if precision.kind != MomentKind::Precision {
        return Err(ProbDrError::InvalidArgument("le_covariance needs a precision moment".into()));
    }
    if !(gamma > 0.0) {
        return Err(ProbDrError::InvalidArgument(format!("gamma must be > 0, got {gamma}")));
    }
    let n = precision.n();
    let inv = inverse_pd(&(&precision.values + DMatrix::identity(n, n) * gamma), "L + gamma I")?;
    let s = psd_project(&double_center(&inv)?)?;
    Ok(MomentMatrix::covariance(s, "le_covariance"))
}

/// Default LLE ridge, relative to trace(local Gram) / k.
pub const LLE_DEFAULT_RIDGE: f64 = 1e-3;

/// LLE reconstruction matrix W (n x n). Column i holds 1 at row i and minus
/// the reconstruction weights of point i on its neighbours.
pub fn lle_weights(y: &DataMatrix, k: usize, ridge: f64) -> Result<DMatrix<f64>> {
    let n = y.n();
    if k == 0 || k >= n {
        return Err(ProbDrError::InvalidArgument(format!("LLE needs 1 <= k < n, got k={k}, n={n}")));
    }
    if !(ridge >= 0.0) {
        return Err(ProbDrError::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let v = y.values();
    let d2 = sq_dists_rows(v);
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let nbrs = nearest_neighbors(&d2, i, k);
        let z = DMatrix::from_fn(k, y.d(), |a, c| v[(nbrs[a], c)] - v[(i, c)]);
        let mut gram = &z * z.transpose();
        let reg = ridge * gram.trace() / k as f64;
        for a in 0..k {
            gram[(a, a)] += reg;
        }
        let eig = sym_eigen(&gram)?;
        let (hi, lo) = (eig.eigenvalues[0], eig.eigenvalues[k - 1]);
        if !(hi > 0.0) || lo <= 1e-12 * hi {
            return Err(ProbDrError::Singular(format!(
                "local Gram of point {i} is singular; use a ridge > 0"
            )));
        }
        let sol = eig.reconstruct_with(|l| 1.0 / l) * DVector::from_element(k, 1.0);
        let total = sol.sum();
        w[(i, i)] = 1.0;
        for (a, &j) in nbrs.iter().enumerate() {
            w[(j, i)] = -sol[a] / total;
        }
    }
    Ok(w)
}

/// LLE precision Γ̂ = W Wᵀ.
pub fn lle_precision(y: &DataMatrix, k: usize, ridge: f64) -> Result<MomentMatrix> {
    let w = lle_weights(y, k, ridge)?;
    let mut m = MomentMatrix::precision(symmetrize(&(&w * w.transpose())), "lle");
    let n = y.n();
    m.null_vector = Some(DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    Ok(m)
}

/// Diffusion-map moment: the symmetric normalised Gaussian kernel
/// D^{-1/2} K D^{-1/2} raised to `steps`.
pub fn diffusion_moment(y: &DataMatrix, lengthscale: f64, steps: u32) -> Result<MomentMatrix> {
    if !(lengthscale > 0.0) {
        return Err(ProbDrError::InvalidArgument(format!("lengthscale must be > 0, got {lengthscale}")));
    }
    if steps == 0 {
        return Err(ProbDrError::InvalidArgument("steps must be >= 1".into()));
    }
    let base = diffusion_kernel(y, lengthscale);
    let mut result = DMatrix::identity(y.n(), y.n());
    let mut power = base;
    let mut e = steps;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &power;
        }
        e >>= 1;
        if e > 0 {
            power = &power * &power;
        }
    }
    let s = psd_project(&symmetrize(&result))?;
    Ok(MomentMatrix::covariance(s, "diffusion"))
}

/// D^{-1/2} K D^{-1/2} with K_ij = exp(-|y_i - y_j|² / 2ℓ²).
pub fn diffusion_kernel(y: &DataMatrix, lengthscale: f64) -> DMatrix<f64> {
    let d2 = sq_dists_rows(y.values());
    let k = d2.map(|s| (-s / (2.0 * lengthscale * lengthscale)).exp());
    let inv_sqrt: Vec<f64> = (0..k.nrows()).map(|i| 1.0 / k.row(i).sum().sqrt()).collect();
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| inv_sqrt[i] * k[(i, j)] * inv_sqrt[j])
}
