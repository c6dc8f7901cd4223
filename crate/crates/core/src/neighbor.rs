//! SNE, t-SNE and UMAP as KL minimisation between data affinities v and
//! latent affinities w.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ProbDrError, Result};
use crate::graph_gp::{build_laplacian, LaplacianKind};
use crate::linalg::sq_dists_rows;
use crate::moments::{nearest_neighbors, MomentMatrix};
use crate::rng::SeededRng;
use crate::spectral::mca_map;
use crate::types::{ensure_finite, DataMatrix, Embedding};

/// Probabilities below this (or above one minus this) are clamped inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Which neighbour-embedding objective an affinity matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Row-wise categorical (rows sum to one).
    Sne,
    /// Joint categorical over ordered pairs (whole matrix sums to one).
    Tsne,
    /// Independent Bernoulli per unordered pair.
    Umap,
}

/// Pairwise probabilities with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub probs: DMatrix<f64>,
    pub family: Family,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.probs.nrows()
    }
}

/// A point whose calibration target could not be met.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationWarning {
    pub point: usize,
    pub achieved: f64,
}

/// Per-point bandwidths found by calibration.
#[derive(Debug, Clone)]
pub struct PerplexityCalibration {
    pub target: f64,
    pub sigmas: Vec<f64>,
    /// Distance to the nearest neighbour (UMAP only; zeros otherwise).
    pub rhos: Vec<f64>,
    pub warnings: Vec<CalibrationWarning>,
}

const CALIBRATION_ITERS: usize = 200;

/// Entropy (bits) and probabilities of exp(-β d) over `dists`.
fn row_distribution(dists: &[f64], beta: f64) -> (f64, Vec<f64>) {
    let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = dists.iter().map(|&d| (-beta * (d - dmin)).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mean_shift: f64 = weights.iter().zip(dists).map(|(w, d)| w * (d - dmin)).sum::<f64>() / z;
    let entropy = (z.ln() + beta * mean_shift) / std::f64::consts::LN_2;
    (entropy, weights.into_iter().map(|w| w / z).collect())
}

/// Increases `param` while `too_low(param)` and decreases it otherwise,
/// doubling until bracketed and then bisecting.
fn bracket_search(mut param: f64, iters: usize, mut step: impl FnMut(f64) -> Option<bool>) -> f64 {
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for _ in 0..iters {
        match step(param) {
            None => break,
            Some(true) => {
                lo = param;
                param = if hi.is_finite() { 0.5 * (lo + hi) } else { param * 2.0 };
            }
            Some(false) => {
                hi = param;
                param = 0.5 * (lo + hi);
            }
        }
    }
    param
}

fn check_perplexity(n: usize, perplexity: f64) -> Result<()> {
    if !(perplexity > 1.0 && perplexity < n as f64) {
        return Err(ProbDrError::InvalidArgument(format!(
            "perplexity must lie in (1, n={n}), got {perplexity}"
        )));
    }
    Ok(())
}

/// Row-conditional SNE probabilities v_{j|i} ∝ exp(-|y_i - y_j|² / σ_i²),
/// with σ_i calibrated so that 2^{H_i} equals `perplexity`.
pub fn sne_affinities(y: &DataMatrix, perplexity: f64) -> Result<(AffinityMatrix, PerplexityCalibration)> {
    let n = y.n();
    check_perplexity(n, perplexity)?;
    let d2 = sq_dists_rows(y.values());
    let target = perplexity.log2();
    let mut probs = DMatrix::zeros(n, n);
    let mut sigmas = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let dists: Vec<f64> = others.iter().map(|&j| d2[(i, j)]).collect();
        let mean = dists.iter().sum::<f64>() / dists.len() as f64;
        let start = if mean > 0.0 { 1.0 / mean } else { 1.0 };
        let beta = bracket_search(start, CALIBRATION_ITERS, |b| {
            let (h, _) = row_distribution(&dists, b);
            if (h - target).abs() < 1e-12 {
                None
            } else {
                Some(h > target)
            }
        });
        let (h, row) = row_distribution(&dists, beta);
        if (h.exp2() - perplexity).abs() > 1e-3 {
            warnings.push(CalibrationWarning { point: i, achieved: h.exp2() });
        }
        for (k, &j) in others.iter().enumerate() {
            probs[(i, j)] = row[k];
        }
        sigmas.push(1.0 / beta.sqrt());
    }
    let calib = PerplexityCalibration { target: perplexity, sigmas, rhos: vec![0.0; n], warnings };
    Ok((AffinityMatrix { probs, family: Family::Sne }, calib))
}

/// Symmetric joint t-SNE probabilities (P + Pᵀ) / 2n.
pub fn tsne_affinities(y: &DataMatrix, perplexity: f64) -> Result<(AffinityMatrix, PerplexityCalibration)> {
    let (sne, calib) = sne_affinities(y, perplexity)?;
    Ok((tsne_from_conditional(&sne.probs), calib))
}

pub(crate) fn tsne_from_conditional(p: &DMatrix<f64>) -> AffinityMatrix {
    let n = p.nrows() as f64;
    AffinityMatrix { probs: (p + p.transpose()) / (2.0 * n), family: Family::Tsne }
}

/// Directed UMAP memberships v_{j|i} = exp(-max(0, |y_i - y_j| - ρ_i) / σ_i)
/// over the k nearest neighbours, with Σ_j v_{j|i} = log₂ k.
pub fn umap_conditional(y: &DataMatrix, n_neighbors: usize) -> Result<(DMatrix<f64>, PerplexityCalibration)> {
    let n = y.n();
    let k = n_neighbors;
    if k < 2 || k >= n {
        return Err(ProbDrError::InvalidArgument(format!("n_neighbors must satisfy 2 <= k < n={n}, got {k}")));
    }
    let d2 = sq_dists_rows(y.values());
    let target = (k as f64).log2();
    let mut cond = DMatrix::zeros(n, n);
    let mut sigmas = Vec::with_capacity(n);
    let mut rhos = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for i in 0..n {
        let nbrs = nearest_neighbors(&d2, i, k);
        let dists: Vec<f64> = nbrs.iter().map(|&j| d2[(i, j)].sqrt()).collect();
        let rho = dists[0];
        let excess: Vec<f64> = dists.iter().map(|d| (d - rho).max(0.0)).collect();
        let total = |sigma: f64| excess.iter().map(|e| (-e / sigma).exp()).sum::<f64>();
        let mean_excess = excess.iter().sum::<f64>() / k as f64;
        let start = if mean_excess > 0.0 { mean_excess } else { 1.0 };
        let sigma = bracket_search(start, CALIBRATION_ITERS, |s| {
            let v = total(s);
            if (v - target).abs() < 1e-12 {
                None
            } else {
                Some(v < target)
            }
        });
        let achieved = total(sigma);
        if (achieved - target).abs() > 1e-3 {
            warnings.push(CalibrationWarning { point: i, achieved });
        }
        for (a, &j) in nbrs.iter().enumerate() {
            cond[(i, j)] = (-excess[a] / sigma).exp();
        }
        sigmas.push(sigma);
        rhos.push(rho);
    }
    Ok((cond, PerplexityCalibration { target, sigmas, rhos, warnings }))
}

/// UMAP memberships symmetrised by probabilistic OR: a + aᵀ - a∘aᵀ.
pub fn umap_affinities(y: &DataMatrix, n_neighbors: usize) -> Result<(AffinityMatrix, PerplexityCalibration)> {
    let (cond, calib) = umap_conditional(y, n_neighbors)?;
    Ok((umap_from_conditional(&cond), calib))
}

pub(crate) fn umap_from_conditional(cond: &DMatrix<f64>) -> AffinityMatrix {
    let n = cond.nrows();
    let probs = DMatrix::from_fn(n, n, |i, j| 1.0 - (1.0 - cond[(i, j)]) * (1.0 - cond[(j, i)]));
    AffinityMatrix { probs, family: Family::Umap }
}

/// Data affinities for `family`; `param` is the perplexity for SNE/t-SNE
/// and the neighbour count for UMAP.
pub fn affinities(y: &DataMatrix, family: Family, param: f64) -> Result<(AffinityMatrix, PerplexityCalibration)> {
    match family {
        Family::Sne => sne_affinities(y, param),
        Family::Tsne => tsne_affinities(y, param),
        Family::Umap => {
            if param.fract() != 0.0 || param < 0.0 {
                return Err(ProbDrError::InvalidArgument(format!("n_neighbors must be an integer, got {param}")));
            }
            umap_affinities(y, param as usize)
        }
    }
}

fn kernel_from_sq(d2: &DMatrix<f64>, family: Family, a: f64, b: f64) -> DMatrix<f64> {
    let n = d2.nrows();
    match family {
        Family::Sne => {
            let mut w = DMatrix::zeros(n, n);
            for i in 0..n {
                let dmin = (0..n).filter(|&j| j != i).map(|j| d2[(i, j)]).fold(f64::INFINITY, f64::min);
                let mut z = 0.0;
                for j in (0..n).filter(|&j| j != i) {
                    let v = (-(d2[(i, j)] - dmin)).exp();
                    w[(i, j)] = v;
                    z += v;
                }
                w.row_mut(i).scale_mut(1.0 / z);
            }
            w
        }
        Family::Tsne => {
            let mut w = d2.map(|s| 1.0 / (1.0 + s));
            w.fill_diagonal(0.0);
            let z = w.sum();
            w / z
        }
        Family::Umap => {
            let mut w = d2.map(|s| 1.0 / (1.0 + a * s.powf(b)));
            w.fill_diagonal(0.0);
            w
        }
    }
}

fn check_shape_params(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0) {
        return Err(ProbDrError::InvalidArgument(format!("kernel parameters a, b must be > 0, got a={a}, b={b}")));
    }
    Ok(())
}

/// Latent affinities w for `family`. `a`, `b` only affect UMAP.
pub fn latent_kernel(x: &Embedding, family: Family, a: f64, b: f64) -> Result<AffinityMatrix> {
    check_shape_params(a, b)?;
    Ok(AffinityMatrix { probs: kernel_from_sq(&sq_dists_rows(x.values()), family, a, b), family })
}

/// KL objective value and how many probabilities had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlStats {
    pub value: f64,
    pub clamped: usize,
}

fn xlogx_over(v: f64, w: f64, clamped: &mut usize) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let wc = if w < PROB_CLAMP {
        *clamped += 1;
        PROB_CLAMP
    } else if w > 1.0 - PROB_CLAMP {
        *clamped += 1;
        1.0 - PROB_CLAMP
    } else {
        w
    };
    v * (v / wc).ln()
}

/// KL(v ‖ w) in the family's own form: Σ_i Σ_j v log(v/w) for SNE and t-SNE,
/// and the Bernoulli cross entropy over pairs i < j for UMAP.
pub fn kl_objective_with_stats(v: &AffinityMatrix, w: &AffinityMatrix) -> Result<KlStats> {
    if v.family != w.family {
        return Err(ProbDrError::FamilyMismatch(format!("{:?} vs {:?}", v.family, w.family)));
    }
    if v.probs.shape() != w.probs.shape() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{:?}", v.probs.shape()),
            got: format!("{:?}", w.probs.shape()),
        });
    }
    let n = v.n();
    let mut clamped = 0;
    let mut value = 0.0;
    match v.family {
        Family::Sne | Family::Tsne => {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    value += xlogx_over(v.probs[(i, j)], w.probs[(i, j)], &mut clamped);
                }
            }
        }
        Family::Umap => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let (vij, wij) = (v.probs[(i, j)], w.probs[(i, j)]);
                    value += xlogx_over(vij, wij, &mut clamped);
                    value += xlogx_over(1.0 - vij, 1.0 - wij, &mut clamped);
                }
            }
        }
    }
    Ok(KlStats { value, clamped })
}

pub fn kl_objective(v: &AffinityMatrix, w: &AffinityMatrix) -> Result<f64> {
    Ok(kl_objective_with_stats(v, w)?.value)
}

fn gradient_raw(v: &AffinityMatrix, x: &DMatrix<f64>, a: f64, b: f64) -> DMatrix<f64> {
    let n = x.nrows();
    let d2 = sq_dists_rows(x);
    let w = kernel_from_sq(&d2, v.family, a, b);
    let p = &v.probs;
    // coefficient c_ij such that grad_i = Σ_j c_ij (x_i - x_j)
    let coeff = match v.family {
        Family::Sne => (p - &w + p.transpose() - w.transpose()) * 2.0,
        Family::Tsne => DMatrix::from_fn(n, n, |i, j| 4.0 * (p[(i, j)] - w[(i, j)]) / (1.0 + d2[(i, j)])),
        Family::Umap => DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                return 0.0;
            }
            let (u, vij, wij) = (d2[(i, j)], p[(i, j)], w[(i, j)]);
            let mut c = 0.0;
            if vij > 0.0 && wij >= PROB_CLAMP {
                let attract = vij * a * b * u.powf(b - 1.0) * wij;
                if attract.is_finite() {
                    c += attract;
                }
            }
            if vij < 1.0 && wij <= 1.0 - PROB_CLAMP && u > 0.0 {
                c -= (1.0 - vij) * b * wij / u;
            }
            2.0 * c
        }),
    };
    let row_sums = DMatrix::from_fn(n, 1, |i, _| coeff.row(i).sum());
    let mut g = &coeff * x;
    for i in 0..n {
        let s = row_sums[(i, 0)];
        for c in 0..x.ncols() {
            g[(i, c)] = s * x[(i, c)] - g[(i, c)];
        }
    }
    g
}

/// Analytic gradient of [`kl_objective`] with respect to the latent points.
pub fn kl_gradient(v: &AffinityMatrix, x: &Embedding, a: f64, b: f64) -> Result<DMatrix<f64>> {
    check_shape_params(a, b)?;
    if x.n() != v.n() {
        return Err(ProbDrError::ShapeMismatch { expected: format!("{} rows", v.n()), got: format!("{} rows", x.n()) });
    }
    Ok(gradient_raw(v, x.values(), a, b))
}

/// How latent points are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Init {
    RandomGaussian { scale: f64 },
    /// Minor eigenvectors of the normalised Laplacian of v, scaled to unit
    /// root-mean-square.
    Spectral,
}

impl Default for Init {
    fn default() -> Self {
        Init::RandomGaussian { scale: 1e-2 }
    }
}

/// Optimiser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedConfig {
    pub q: usize,
    pub family: Family,
    pub a: f64,
    pub b: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub init: Init,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            q: 2,
            family: Family::Tsne,
            a: 1.0,
            b: 1.0,
            learning_rate: 0.1,
            momentum: 0.8,
            max_iters: 1000,
            seed: 0,
            init: Init::default(),
        }
    }
}

impl EmbedConfig {
    fn validate(&self) -> Result<()> {
        check_shape_params(self.a, self.b)?;
        if self.q == 0 {
            return Err(ProbDrError::InvalidArgument("q must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(ProbDrError::InvalidArgument(format!(
                "learning rate must be > 0 and momentum in [0, 1), got {} and {}",
                self.learning_rate, self.momentum
            )));
        }
        if let Init::RandomGaussian { scale } = self.init {
            if !(scale > 0.0) {
                return Err(ProbDrError::InvalidArgument(format!("init scale must be > 0, got {scale}")));
            }
        }
        Ok(())
    }
}

/// One optimiser step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Result of [`optimize_embedding`].
#[derive(Debug, Clone)]
pub struct EmbedResult {
    pub embedding: Embedding,
    pub trace: Vec<TraceEntry>,
    /// Clamped probabilities at the final iterate.
    pub clamped: usize,
}

fn loss_of(v: &AffinityMatrix, x: &DMatrix<f64>, cfg: &EmbedConfig) -> Result<KlStats> {
    let w = AffinityMatrix { probs: kernel_from_sq(&sq_dists_rows(x), v.family, cfg.a, cfg.b), family: v.family };
    kl_objective_with_stats(v, &w)
}

fn initial_positions(v: &AffinityMatrix, cfg: &EmbedConfig) -> Result<DMatrix<f64>> {
    let n = v.n();
    match cfg.init {
        Init::RandomGaussian { scale } => {
            let mut rng = SeededRng::new(cfg.seed);
            Ok(DMatrix::from_fn(n, cfg.q, |_, _| scale * rng.normal()))
        }
        Init::Spectral => {
            let sym = (&v.probs + v.probs.transpose()) * 0.5;
            let mut m = MomentMatrix::precision(build_laplacian(&sym, LaplacianKind::Normalized)?, "spectral_init");
            let deg = nalgebra::DVector::from_fn(n, |i, _| sym.row(i).sum().sqrt());
            let norm = deg.norm();
            if norm > 0.0 {
                m.null_vector = Some(deg / norm);
            }
            let x = mca_map(&m, cfg.q, true, 1e-8)?.embedding.into_inner();
            let rms = (x.norm_squared() / (n * cfg.q) as f64).sqrt();
            Ok(if rms > 0.0 { x / rms } else { x })
        }
    }
}

/// Shared momentum loop. `free` selects the rows that move.
fn descend(
    v: &AffinityMatrix,
    mut x: DMatrix<f64>,
    free: std::ops::Range<usize>,
    center: bool,
    cfg: &EmbedConfig,
) -> Result<(DMatrix<f64>, Vec<TraceEntry>, usize)> {
    let q = x.ncols();
    let mut velocity = DMatrix::zeros(free.len(), q);
    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    let total = cfg.max_iters.max(1) as f64;
    for it in 0..=cfg.max_iters {
        let stats = loss_of(v, &x, cfg)?;
        let grad_full = gradient_raw(v, &x, cfg.a, cfg.b);
        let grad = grad_full.rows(free.start, free.len()).into_owned();
        let gnorm = grad.norm();
        if !stats.value.is_finite() || !gnorm.is_finite() {
            return Err(ProbDrError::Diverged { iteration: it, loss: stats.value });
        }
        trace.push(TraceEntry { iteration: it, loss: stats.value, grad_norm: gnorm });
        if it == cfg.max_iters || free.is_empty() {
            return Ok((x, trace, stats.clamped));
        }
        let rms = gnorm / ((free.len() * q) as f64).sqrt();
        let step = if rms > 0.0 { cfg.learning_rate * (1.0 - it as f64 / total) / rms } else { 0.0 };
        velocity = velocity * cfg.momentum - grad * step;
        let mut block = x.rows_mut(free.start, free.len());
        block += &velocity;
        if center {
            for c in 0..q {
                let mean = x.column(c).mean();
                x.column_mut(c).add_scalar_mut(-mean);
            }
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// Minimises the KL objective over latent positions by momentum gradient
/// descent. Each step has root-mean-square length `learning_rate` scaled by a
/// linear decay to zero, and the embedding is recentred after every step.
pub fn optimize_embedding(v: &AffinityMatrix, cfg: &EmbedConfig) -> Result<EmbedResult> {
    cfg.validate()?;
    ensure_finite(&v.probs, "affinity matrix")?;
    if cfg.q >= v.n() {
        return Err(ProbDrError::InvalidArgument(format!("q={} must be < n={}", cfg.q, v.n())));
    }
    let x0 = initial_positions(v, cfg)?;
    let (x, trace, clamped) = descend(v, x0, 0..v.n(), true, cfg)?;
    Ok(EmbedResult { embedding: Embedding::new(x)?, trace, clamped })
}

/// Places test points given affinities over train + test rows (train first)
/// and a fixed training embedding. Training rows are never modified.
pub fn embed_out_of_sample(v_full: &AffinityMatrix, x_train: &Embedding, cfg: &EmbedConfig) -> Result<EmbedResult> {
    cfg.validate()?;
    let n_train = x_train.n();
    let n = v_full.n();
    if n < n_train || x_train.q() != cfg.q {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("affinities over >= {n_train} points and q = {}", cfg.q),
            got: format!("{n} points and q = {}", x_train.q()),
        });
    }
    let m = n - n_train;
    let xt = x_train.values();
    if m == 0 {
        return Ok(EmbedResult { embedding: Embedding::new(DMatrix::zeros(0, cfg.q))?, trace: Vec::new(), clamped: 0 });
    }
    let mut x = DMatrix::zeros(n, cfg.q);
    x.rows_mut(0, n_train).copy_from(xt);
    let train_mean = DMatrix::from_fn(1, cfg.q, |_, c| xt.column(c).mean());
    for t in 0..m {
        let row = n_train + t;
        let weights: Vec<f64> = (0..n_train).map(|j| v_full.probs[(row, j)] + v_full.probs[(j, row)]).collect();
        let total: f64 = weights.iter().sum();
        for c in 0..cfg.q {
            x[(row, c)] = if total > 0.0 {
                (0..n_train).map(|j| weights[j] * xt[(j, c)]).sum::<f64>() / total
            } else {
                train_mean[(0, c)]
            };
        }
    }
    let (x, trace, clamped) = descend(v_full, x, n_train..n, false, cfg)?;
    Ok(EmbedResult { embedding: Embedding::new(x.rows(n_train, m).into_owned())?, trace, clamped })
}

/// Pseudo-counts ⌊n v_ij / Σ_k v_ik⌋ for categorical families.
pub fn categorical_map_approx(v: &AffinityMatrix) -> Result<DMatrix<f64>> {
    if v.family == Family::Umap {
        return Err(ProbDrError::FamilyMismatch("pseudo-counts need a categorical family".into()));
    }
    let n = v.n();
    let mut counts = DMatrix::zeros(n, n);
    for i in 0..n {
        let total = v.probs.row(i).sum();
        if total <= 0.0 {
            continue;
        }
        for j in 0..n {
            counts[(i, j)] = (n as f64 * v.probs[(i, j)] / total).floor();
        }
    }
    Ok(counts)
}

/// Negative log-likelihood -Σ c_ij log w_ij of pseudo-counts under w.
pub fn categorical_nll(counts: &DMatrix<f64>, w: &AffinityMatrix) -> Result<f64> {
    if counts.shape() != w.probs.shape() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{:?}", w.probs.shape()),
            got: format!("{:?}", counts.shape()),
        });
    }
    Ok(counts
        .iter()
        .zip(w.probs.iter())
        .filter(|(c, _)| **c > 0.0)
        .map(|(c, wv)| -c * wv.max(PROB_CLAMP).ln())
        .sum())
}

/// Writes a loss trace as JSON lines.
pub fn write_trace_jsonl(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for entry in trace {
        let line = serde_json::to_string(entry).map_err(|e| ProbDrError::Data(e.to_string()))?;
        writeln!(file, "{line}")?;
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_data(n: usize, d: usize, seed: u64) -> DataMatrix {
        let mut rng = SeededRng::new(seed);
        let vals: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        DataMatrix::from_row_slice(n, d, &vals).unwrap()
    }

    fn random_embedding(n: usize, q: usize, seed: u64) -> Embedding {
        let mut rng = SeededRng::new(seed);
        Embedding::new(DMatrix::from_fn(n, q, |_, _| rng.normal())).unwrap()
    }

    fn entropy_bits(row: &[f64]) -> f64 {
        -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
    }

    #[test]
    fn sne_equidistant_points_uniform() {
        let h = 3f64.sqrt() / 2.0;
        let y = DataMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.5, h]).unwrap();
        let (v, _) = sne_affinities(&y, 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.0 } else { 0.5 };
                assert!((v.probs[(i, j)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sne_rows_normalised_and_calibrated() {
        let y = random_data(20, 5, 1);
        let (v, c) = sne_affinities(&y, 6.0).unwrap();
        for i in 0..20 {
            assert!((v.probs.row(i).sum() - 1.0).abs() < 1e-12);
            assert_eq!(v.probs[(i, i)], 0.0);
        }
        assert!(c.warnings.is_empty());
        let y = random_data(30, 3, 2);
        let (v, _) = sne_affinities(&y, 10.0).unwrap();
        for i in 0..30 {
            let row: Vec<f64> = v.probs.row(i).iter().copied().collect();
            assert!((entropy_bits(&row).exp2() - 10.0).abs() < 1e-2);
        }
    }

    #[test]
    fn sne_duplicates_warn() {
        let mut vals = vec![0.0; 10];
        vals.extend([5.0, 9.0]);
        let y = DataMatrix::from_row_slice(12, 1, &vals).unwrap();
        let (v, c) = sne_affinities(&y, 2.0).unwrap();
        assert!(!c.warnings.is_empty());
        for i in 0..12 {
            assert!((v.probs.row(i).sum() - 1.0).abs() < 1e-12);
        }
        assert!(sne_affinities(&y, 12.0).is_err());
    }

    #[test]
    fn tsne_joint_matches_formula() {
        let y = random_data(15, 3, 3);
        let (p, _) = sne_affinities(&y, 5.0).unwrap();
        let (v, _) = tsne_affinities(&y, 5.0).unwrap();
        assert!((v.probs.sum() - 1.0).abs() < 1e-12);
        for i in 0..15 {
            for j in 0..15 {
                assert_eq!(v.probs[(i, j)], v.probs[(j, i)]);
                let oracle = (p.probs[(i, j)] + p.probs[(j, i)]) / 30.0;
                assert!((v.probs[(i, j)] - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn umap_nearest_neighbour_membership_is_one() {
        let y = random_data(25, 4, 4);
        let (cond, calib) = umap_conditional(&y, 6).unwrap();
        let d2 = sq_dists_rows(y.values());
        for i in 0..25 {
            let nn = nearest_neighbors(&d2, i, 1)[0];
            assert_eq!(cond[(i, nn)], 1.0);
            assert!((cond.row(i).sum() - 6f64.log2()).abs() < 1e-3);
            assert!((calib.rhos[i] - d2[(i, nn)].sqrt()).abs() < 1e-12);
        }
        let (v, _) = umap_affinities(&y, 6).unwrap();
        for i in 0..25 {
            for j in 0..25 {
                assert_eq!(v.probs[(i, j)], v.probs[(j, i)]);
                assert!((0.0..=1.0).contains(&v.probs[(i, j)]));
                if cond[(i, j)] == 1.0 {
                    assert_eq!(v.probs[(i, j)], 1.0);
                }
            }
        }
    }

    #[test]
    fn latent_kernel_cases() {
        let x = Embedding::new(DMatrix::from_row_slice(2, 1, &[0.0, 1.0])).unwrap();
        let w = latent_kernel(&x, Family::Umap, 2.0, 1.0).unwrap();
        assert!((w.probs[(0, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let same = Embedding::new(DMatrix::zeros(4, 2)).unwrap();
        let w = latent_kernel(&same, Family::Tsne, 1.0, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 12.0 };
                assert!((w.probs[(i, j)] - want).abs() < 1e-15);
            }
        }
        let w = latent_kernel(&random_embedding(9, 2, 5), Family::Sne, 1.0, 1.0).unwrap();
        for i in 0..9 {
            assert!((w.probs.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_basic_values() {
        let x = random_embedding(6, 2, 6);
        let w = latent_kernel(&x, Family::Tsne, 1.0, 1.0).unwrap();
        assert!(kl_objective(&w, &w).unwrap().abs() < 1e-15);
        let v = AffinityMatrix { probs: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]), family: Family::Umap };
        let w = AffinityMatrix { probs: DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]), family: Family::Umap };
        assert!((kl_objective(&v, &w).unwrap() - 2f64.ln()).abs() < 1e-15);
        let s = AffinityMatrix { probs: w.probs.clone(), family: Family::Sne };
        assert!(matches!(kl_objective(&v, &s), Err(ProbDrError::FamilyMismatch(_))));
    }

    #[test]
    fn umap_single_pair_symbolic_gradient() {
        // L(x) = -v log w - (1 - v) log(1 - w), w = 1 / (1 + a (x1 - x0)^2)
        let (a, b, v) = (2.0, 1.0, 0.7);
        let x = Embedding::new(DMatrix::from_row_slice(2, 1, &[0.3, 1.1])).unwrap();
        let vm = AffinityMatrix { probs: DMatrix::from_row_slice(2, 2, &[0.0, v, v, 0.0]), family: Family::Umap };
        let g = kl_gradient(&vm, &x, a, b).unwrap();
        let delta: f64 = 0.3 - 1.1;
        let u = delta * delta;
        let w = 1.0 / (1.0 + a * u);
        let dl_dw = -v / w + (1.0 - v) / (1.0 - w);
        let dw_du = -a * w * w;
        let expected = dl_dw * dw_du * 2.0 * delta;
        assert!((g[(0, 0)] - expected).abs() < 1e-12);
        assert!((g[(1, 0)] + expected).abs() < 1e-12);
    }

    fn finite_difference_check(family: Family, v: &AffinityMatrix, x: &Embedding, a: f64, b: f64) {
        let g = kl_gradient(v, x, a, b).unwrap();
        let h = 1e-5;
        for r in 0..x.n() {
            for c in 0..x.q() {
                let mut plus = x.values().clone();
                plus[(r, c)] += h;
                let mut minus = x.values().clone();
                minus[(r, c)] -= h;
                let f = |m: DMatrix<f64>| {
                    kl_objective(v, &latent_kernel(&Embedding::new(m).unwrap(), family, a, b).unwrap()).unwrap()
                };
                let fd = (f(plus) - f(minus)) / (2.0 * h);
                if g[(r, c)].abs() > 1e-6 {
                    assert!(((fd - g[(r, c)]) / g[(r, c)]).abs() < 1e-4, "{family:?} {r},{c}: {fd} vs {}", g[(r, c)]);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let y = random_data(12, 4, 7);
        let x = random_embedding(12, 2, 8);
        let (v, _) = sne_affinities(&y, 4.0).unwrap();
        finite_difference_check(Family::Sne, &v, &x, 1.0, 1.0);
        let (v, _) = tsne_affinities(&y, 4.0).unwrap();
        finite_difference_check(Family::Tsne, &v, &x, 1.0, 1.0);
        let (v, _) = umap_affinities(&y, 4).unwrap();
        finite_difference_check(Family::Umap, &v, &x, 1.0, 1.0);
        finite_difference_check(Family::Umap, &v, &x, 2.0, 0.8);
    }

    #[test]
    fn gradient_vanishes_when_v_equals_w() {
        let x = random_embedding(7, 2, 9);
        for family in [Family::Sne, Family::Tsne, Family::Umap] {
            let w = latent_kernel(&x, family, 1.0, 1.0).unwrap();
            let g = kl_gradient(&w, &x, 1.0, 1.0).unwrap();
            assert!(g.norm() < 1e-10, "{family:?}");
        }
    }

    #[test]
    fn optimiser_is_deterministic_and_descends() {
        let y = random_data(20, 3, 10);
        let (v, _) = tsne_affinities(&y, 5.0).unwrap();
        let cfg = EmbedConfig { max_iters: 200, seed: 3, ..EmbedConfig::default() };
        let a = optimize_embedding(&v, &cfg).unwrap();
        let b = optimize_embedding(&v, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.embedding, b.embedding);
        assert!(a.trace.last().unwrap().loss <= a.trace[0].loss);
        assert_eq!(a.trace.len(), 201);
    }

    #[test]
    fn spectral_init_runs() {
        let y = random_data(20, 3, 11);
        let (v, _) = umap_affinities(&y, 5).unwrap();
        let cfg = EmbedConfig { family: Family::Umap, max_iters: 50, init: Init::Spectral, ..EmbedConfig::default() };
        let r = optimize_embedding(&v, &cfg).unwrap();
        assert!(r.trace.last().unwrap().loss <= r.trace[0].loss);
    }

    #[test]
    fn out_of_sample_keeps_train_fixed_and_handles_empty() {
        let y = random_data(15, 3, 12);
        let (v, _) = umap_affinities(&y, 4).unwrap();
        let x_train = random_embedding(15, 2, 13);
        let cfg = EmbedConfig { family: Family::Umap, max_iters: 10, ..EmbedConfig::default() };
        let r = embed_out_of_sample(&v, &x_train, &cfg).unwrap();
        assert_eq!(r.embedding.n(), 0);
        let bad = EmbedConfig { q: 3, ..cfg };
        assert!(embed_out_of_sample(&v, &x_train, &bad).is_err());
    }

    #[test]
    fn pseudo_counts_uniform_and_bounded() {
        let n = 10;
        let mut p = DMatrix::from_element(n, n, 1.0 / (n - 1) as f64);
        p.fill_diagonal(0.0);
        let v = AffinityMatrix { probs: p, family: Family::Sne };
        let c = categorical_map_approx(&v).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert_eq!(c[(i, j)], if i == j { 0.0 } else { 1.0 });
            }
        }
        let y = random_data(12, 3, 14);
        let (v, _) = tsne_affinities(&y, 4.0).unwrap();
        let c = categorical_map_approx(&v).unwrap();
        for i in 0..12 {
            assert!(c.row(i).sum() <= 12.0);
        }
    }

    #[test]
    fn trace_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.jsonl");
        let trace = vec![
            TraceEntry { iteration: 0, loss: 1.5, grad_norm: 0.25 },
            TraceEntry { iteration: 1, loss: 1.25, grad_norm: 0.125 },
        ];
        write_trace_jsonl(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: Vec<TraceEntry> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(back, trace);
    }
}
