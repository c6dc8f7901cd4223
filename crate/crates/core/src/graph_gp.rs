//! Graph Gaussian processes: adjacency sampling, Laplacians, Matérn graph
//! covariances, hyperparameter fitting and conditional prediction, plus the
//! Bayes-net and graph-convolutional covariances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{ProbDrError, Result};
use crate::linalg::{cholesky, expm_sym, inverse_pd, max_asymmetry, psd_factor, sq_dists_rows, sym_eigen, symmetrize};
use crate::neighbor::{latent_kernel, Family};
use crate::rng::SeededRng;
use crate::types::{ensure_finite, ensure_square, Embedding};

/// Ordinary D - A or normalised I - D^{-1/2} A D^{-1/2}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Ordinary,
    Normalized,
}

/// Graph Laplacian of a symmetric, non-negative, zero-diagonal weight
/// matrix. Zero-degree nodes get identity rows in the normalised form.
pub fn build_laplacian(a: &DMatrix<f64>, kind: LaplacianKind) -> Result<DMatrix<f64>> {
    ensure_square(a, "adjacency")?;
    ensure_finite(a, "adjacency")?;
    let asym = max_asymmetry(a);
    if asym > 1e-9 {
        return Err(ProbDrError::NotSymmetric { max_asymmetry: asym });
    }
    if a.iter().any(|&w| w < 0.0) {
        return Err(ProbDrError::InvalidArgument("adjacency weights must be non-negative".into()));
    }
    let n = a.nrows();
    if (0..n).any(|i| a[(i, i)] != 0.0) {
        return Err(ProbDrError::InvalidArgument("adjacency must have a zero diagonal".into()));
    }
    let a = symmetrize(a);
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    Ok(match kind {
        LaplacianKind::Ordinary => DMatrix::from_diagonal(&DVector::from_vec(deg)) - a,
        LaplacianKind::Normalized => {
            let inv_sqrt: Vec<f64> = deg.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
            DMatrix::from_fn(n, n, |i, j| {
                let off = inv_sqrt[i] * a[(i, j)] * inv_sqrt[j];
                if i == j {
                    1.0 - off
                } else {
                    -off
                }
            })
        }
    })
}

/// Graph-GP hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphGPHyper {
    /// Ridge of the Matérn-1 covariance (L + βI)⁻¹.
    pub beta: f64,
    /// Diffusion time of the Matérn-∞ covariance exp(-tL).
    pub t: f64,
    pub kappa: f64,
    pub sigma_s: f64,
    pub sigma_n: f64,
}

impl Default for GraphGPHyper {
    fn default() -> Self {
        Self { beta: 1.0, t: 1.0, kappa: 1.0, sigma_s: 1.0, sigma_n: 0.1 }
    }
}

impl GraphGPHyper {
    /// β tied to the lengthscale: 2 / κ².
    pub fn beta_from_kappa(&self) -> f64 {
        2.0 / (self.kappa * self.kappa)
    }
}

/// Matérn smoothness on a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaternNu {
    One,
    Inf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Matern1,
    MaternInf,
    Bayesnet,
    Gcgp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphCovariance {
    pub values: DMatrix<f64>,
    pub construction: CovarianceKind,
    pub normalized: bool,
}

/// (L + βI)⁻¹ for ν = 1 or exp(-tL) for ν = ∞.
pub fn matern_covariance(l: &DMatrix<f64>, hyper: &GraphGPHyper, nu: MaternNu) -> Result<GraphCovariance> {
    ensure_square(l, "laplacian")?;
    let n = l.nrows();
    match nu {
        MaternNu::One => {
            if !(hyper.beta > 0.0) {
                return Err(ProbDrError::InvalidArgument(format!("beta must be > 0, got {}", hyper.beta)));
            }
            let values = inverse_pd(&(l + DMatrix::identity(n, n) * hyper.beta), "L + beta I")?;
            Ok(GraphCovariance { values, construction: CovarianceKind::Matern1, normalized: false })
        }
        MaternNu::Inf => {
            if !(hyper.t >= 0.0) {
                return Err(ProbDrError::InvalidArgument(format!("t must be >= 0, got {}", hyper.t)));
            }
            let values = expm_sym(l, -hyper.t)?;
            Ok(GraphCovariance { values, construction: CovarianceKind::MaternInf, normalized: false })
        }
    }
}

/// diag(C)^{-1/2} C diag(C)^{-1/2}.
pub fn normalize_to_correlation(c: &GraphCovariance) -> Result<GraphCovariance> {
    let n = c.values.nrows();
    let diag = c.values.diagonal();
    if let Some(i) = (0..n).find(|&i| !(diag[i] > 0.0)) {
        return Err(ProbDrError::InvalidArgument(format!("covariance diagonal entry {i} is {}", diag[i])));
    }
    let s: Vec<f64> = diag.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut values = DMatrix::from_fn(n, n, |i, j| s[i] * c.values[(i, j)] * s[j]);
    values.fill_diagonal(1.0);
    Ok(GraphCovariance { values: symmetrize(&values), construction: c.construction, normalized: true })
}

/// The model law of the directed adjacency A′ given latents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdjacencyLaw {
    /// Independent edges with probability 1 / (1 + a d^{2b}) for each pair.
    Bernoulli { a: f64, b: f64 },
    /// One neighbour per row drawn from the SNE or t-SNE kernel.
    Categorical { family: Family },
}

/// A sampled directed adjacency and its OR-symmetrisation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySample {
    /// Bernoulli draws are stored strictly lower-triangular; categorical
    /// draws hold one entry per row.
    pub a_prime: DMatrix<f64>,
    pub a_sym: DMatrix<f64>,
}

impl AdjacencySample {
    fn from_prime(a_prime: DMatrix<f64>) -> Self {
        let t = a_prime.transpose();
        let a_sym = a_prime.zip_map(&t, |x, y| if x > 0.0 || y > 0.0 { 1.0 } else { 0.0 });
        Self { a_prime, a_sym }
    }

    /// Undirected edges (i < j).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.a_sym.nrows();
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|&(i, j)| self.a_sym[(i, j)] > 0.0).collect()
    }
}

pub fn sample_adjacency(x: &Embedding, law: AdjacencyLaw, rng: &mut SeededRng) -> Result<AdjacencySample> {
    let n = x.n();
    let mut a_prime = DMatrix::zeros(n, n);
    match law {
        AdjacencyLaw::Bernoulli { a, b } => {
            let w = latent_kernel(x, Family::Umap, a, b)?.probs;
            for i in 0..n {
                for j in 0..i {
                    if rng.bernoulli(w[(i, j)]) {
                        a_prime[(i, j)] = 1.0;
                    }
                }
            }
        }
        AdjacencyLaw::Categorical { family } => {
            if family == Family::Umap {
                return Err(ProbDrError::FamilyMismatch("categorical adjacency needs sne or tsne".into()));
            }
            let w = latent_kernel(x, family, 1.0, 1.0)?.probs;
            for i in 0..n {
                let row: Vec<f64> = w.row(i).iter().copied().collect();
                if let Some(j) = rng.categorical(&row) {
                    a_prime[(i, j)] = 1.0;
                }
            }
        }
    }
    Ok(AdjacencySample::from_prime(a_prime))
}

/// Configuration of the latent → graph → data chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub law: AdjacencyLaw,
    pub laplacian: LaplacianKind,
    pub nu: MaternNu,
    pub hyper: GraphGPHyper,
    pub columns: usize,
    pub normalize: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            law: AdjacencyLaw::Bernoulli { a: 1.0, b: 1.0 },
            laplacian: LaplacianKind::Normalized,
            nu: MaternNu::Inf,
            hyper: GraphGPHyper::default(),
            columns: 1,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PriorSample {
    pub adjacency: AdjacencySample,
    pub covariance: GraphCovariance,
    /// n x columns, each column an independent draw from N(0, C).
    pub y: DMatrix<f64>,
}

/// Draws one graph from the latents and `columns` Gaussian vectors on it.
pub fn prior_sample(x: &Embedding, cfg: &PriorConfig, rng: &mut SeededRng) -> Result<PriorSample> {
    let adjacency = sample_adjacency(x, cfg.law, rng)?;
    let l = build_laplacian(&adjacency.a_sym, cfg.laplacian)?;
    let mut covariance = matern_covariance(&l, &cfg.hyper, cfg.nu)?;
    if cfg.normalize {
        covariance = normalize_to_correlation(&covariance)?;
    }
    let f = psd_factor(&covariance.values)?;
    let n = x.n();
    let z = DMatrix::from_fn(n, cfg.columns, |_, _| rng.normal());
    Ok(PriorSample { adjacency, covariance, y: f * z })
}

/// Fitting controls for [`fit_hyperparams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    pub max_iters: usize,
    pub learning_rate: f64,
    /// Holds σ_n at this value instead of fitting it.
    pub fixed_sigma_n: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iters: 500, learning_rate: 0.05, fixed_sigma_n: None }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub hyper: GraphGPHyper,
    /// Log-likelihood per matrix element at each accepted iterate.
    pub trace: Vec<f64>,
}

/// Spectral summary of one graph: Laplacian eigenvalues and the squared
/// norms of the data projected on each eigenvector.
struct SpectralData {
    lambda: Vec<f64>,
    energy: Vec<f64>,
}

impl SpectralData {
    fn new(y: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<Self> {
        let eig = sym_eigen(l)?;
        let proj = eig.eigenvectors.transpose() * y;
        Ok(Self {
            lambda: eig.eigenvalues.iter().copied().collect(),
            energy: proj.row_iter().map(|r| r.norm_squared()).collect(),
        })
    }

    /// Log-likelihood and its gradient in (log κ, log σ_s, log σ_n).
    fn evaluate(&self, theta: [f64; 3], d: f64) -> (f64, [f64; 3]) {
        let [kappa, ss, sn] = theta.map(f64::exp);
        let (ss2, sn2) = (ss * ss, sn * sn);
        let ridge = 2.0 / (kappa * kappa);
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for (&lam, &s) in self.lambda.iter().zip(&self.energy) {
            let g = 1.0 / (lam.max(0.0) + ridge);
            let c = ss2 * g + sn2;
            value -= 0.5 * (d * c.ln() + s / c);
            let dl_dc = -0.5 * (d / c - s / (c * c));
            grad[0] += dl_dc * ss2 * 4.0 * g * g / (kappa * kappa);
            grad[1] += dl_dc * 2.0 * ss2 * g;
            grad[2] += dl_dc * 2.0 * sn2;
        }
        let n = self.lambda.len() as f64;
        value -= 0.5 * n * d * (2.0 * std::f64::consts::PI).ln();
        (value, grad)
    }
}

/// log MN(Y | 0, σ_s²(L + 2/κ² I)⁻¹ + σ_n² I, I).
pub fn graph_gp_loglik(y: &DMatrix<f64>, l: &DMatrix<f64>, hyper: &GraphGPHyper) -> Result<f64> {
    check_rows(y, l)?;
    let data = SpectralData::new(y, l)?;
    Ok(data.evaluate([hyper.kappa.ln(), hyper.sigma_s.ln(), hyper.sigma_n.ln()], y.ncols() as f64).0)
}

fn check_rows(y: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<()> {
    ensure_square(l, "laplacian")?;
    if y.nrows() != l.nrows() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{} rows", l.nrows()),
            got: format!("{} rows", y.nrows()),
        });
    }
    ensure_finite(y, "training data")
}

/// Maximises the graph-GP log-likelihood over (κ, σ_s, σ_n) with monotone
/// gradient ascent on log parameters (backtracking on failure, step growth on
/// success). β in the result is tied to κ as 2/κ².
pub fn fit_hyperparams(y: &DMatrix<f64>, l: &DMatrix<f64>, init: &GraphGPHyper, opts: &FitOptions) -> Result<FitResult> {
    fit_hyperparams_averaged(y, std::slice::from_ref(l), init, opts)
}

/// As [`fit_hyperparams`] with the objective averaged over several graphs.
pub fn fit_hyperparams_averaged(
    y: &DMatrix<f64>,
    laplacians: &[DMatrix<f64>],
    init: &GraphGPHyper,
    opts: &FitOptions,
) -> Result<FitResult> {
    if laplacians.is_empty() {
        return Err(ProbDrError::InvalidArgument("at least one laplacian is required".into()));
    }
    for p in [init.kappa, init.sigma_s, init.sigma_n] {
        if !(p > 0.0 && p.is_finite()) {
            return Err(ProbDrError::InvalidArgument(format!("initial hyperparameters must be positive, got {init:?}")));
        }
    }
    let data = laplacians
        .iter()
        .map(|l| {
            check_rows(y, l)?;
            SpectralData::new(y, l)
        })
        .collect::<Result<Vec<_>>>()?;
    let d = y.ncols() as f64;
    let scale = 1.0 / (y.nrows() as f64 * d * laplacians.len() as f64);
    let free_noise = opts.fixed_sigma_n.is_none();
    let eval = |theta: [f64; 3]| {
        let mut value = 0.0;
        let mut grad = [0.0; 3];
        for s in &data {
            let (v, g) = s.evaluate(theta, d);
            value += v * scale;
            for k in 0..3 {
                grad[k] += g[k] * scale;
            }
        }
        if !free_noise {
            grad[2] = 0.0;
        }
        (value, grad)
    };
    let snapshot = |theta: [f64; 3]| {
        let [kappa, sigma_s, sigma_n] = theta.map(f64::exp);
        GraphGPHyper { kappa, sigma_s, sigma_n, beta: 2.0 / (kappa * kappa), t: init.t }
    };
    let sigma_n0 = opts.fixed_sigma_n.unwrap_or(init.sigma_n);
    if !(sigma_n0 > 0.0) {
        return Err(ProbDrError::InvalidArgument(format!("sigma_n must be positive, got {sigma_n0}")));
    }
    let mut theta = [init.kappa.ln(), init.sigma_s.ln(), sigma_n0.ln()];
    let (mut value, mut grad) = eval(theta);
    if !value.is_finite() {
        return Err(ProbDrError::NonFiniteObjective(format!("at {:?}", snapshot(theta))));
    }
    let mut trace = vec![value];
    let mut step = opts.learning_rate;
    for _ in 0..opts.max_iters {
        let gsq: f64 = grad.iter().map(|g| g * g).sum();
        if gsq.sqrt() < 1e-10 {
            break;
        }
        let mut accepted = false;
        for _ in 0..60 {
            let cand = [theta[0] + step * grad[0], theta[1] + step * grad[1], theta[2] + step * grad[2]];
            let (cv, cg) = eval(cand);
            if cv.is_finite() && cv >= value + 1e-4 * step * gsq {
                theta = cand;
                value = cv;
                grad = cg;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        trace.push(value);
    }
    if !value.is_finite() || theta.iter().any(|t| !t.is_finite()) {
        return Err(ProbDrError::NonFiniteObjective(format!("at {:?}", snapshot(theta))));
    }
    Ok(FitResult { hyper: snapshot(theta), trace })
}

/// Conditional mean and per-point predictive variance at test rows.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DMatrix<f64>,
    pub variance: DVector<f64>,
}

/// E[Y_test | Y_train] = C_crossᵀ (C_train + σ_n² I)⁻¹ Y_train, where
/// `c_full` covers train rows first and then test rows.
pub fn predict_unseen(y_train: &DMatrix<f64>, c_full: &DMatrix<f64>, sigma_n: f64) -> Result<Prediction> {
    ensure_square(c_full, "joint covariance")?;
    let n_train = y_train.nrows();
    let n = c_full.nrows();
    if n < n_train {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("joint covariance of at least {n_train} rows"),
            got: format!("{n} rows"),
        });
    }
    let m = n - n_train;
    let noisy = c_full.view((0, 0), (n_train, n_train)) + DMatrix::identity(n_train, n_train) * (sigma_n * sigma_n);
    let chol = cholesky(&noisy, "C_train + sigma_n^2 I")?;
    let cross = c_full.view((0, n_train), (n_train, m)).into_owned();
    let alpha = chol.solve(y_train);
    let mean = cross.transpose() * alpha;
    let solved = chol.solve(&cross);
    let variance = DVector::from_fn(m, |t, _| {
        c_full[(n_train + t, n_train + t)] - cross.column(t).dot(&solved.column(t)) + sigma_n * sigma_n
    });
    Ok(Prediction { mean, variance })
}

/// Divides each row by its sum (zero rows stay zero).
pub fn row_normalize_lower(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for mut row in out.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        }
    }
    out
}

/// M Mᵀ with M = (I - A)⁻¹ for a strictly lower-triangular weight matrix.
pub fn bayesnet_covariance(a_lower: &DMatrix<f64>) -> Result<GraphCovariance> {
    ensure_square(a_lower, "parent weights")?;
    ensure_finite(a_lower, "parent weights")?;
    let n = a_lower.nrows();
    for i in 0..n {
        for j in i..n {
            if a_lower[(i, j)] != 0.0 {
                return Err(ProbDrError::InvalidArgument(format!(
                    "parent weights must be strictly lower-triangular; entry ({i}, {j}) is {}",
                    a_lower[(i, j)]
                )));
            }
        }
    }
    let m = bayesnet_transform(a_lower);
    Ok(GraphCovariance { values: symmetrize(&(&m * m.transpose())), construction: CovarianceKind::Bayesnet, normalized: false })
}

/// (I - A)⁻¹ for strictly lower-triangular A.
pub fn bayesnet_transform(a_lower: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a_lower.nrows();
    let unit = DMatrix::identity(n, n) - a_lower;
    unit.solve_lower_triangular(&DMatrix::identity(n, n)).expect("unit diagonal is invertible")
}

/// Σ_{k=0}^{depth} A^k.
pub fn neumann_power_sum(a: &DMatrix<f64>, depth: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let mut term = DMatrix::identity(n, n);
    let mut total = term.clone();
    for _ in 0..depth {
        term = &term * a;
        total += &term;
    }
    total
}

/// S^k C (S^k)ᵀ with S the symmetric degree normalisation of A + I.
pub fn gcgp_covariance(a_sym: &DMatrix<f64>, k: u32, base: &DMatrix<f64>) -> Result<GraphCovariance> {
    ensure_square(a_sym, "adjacency")?;
    if base.shape() != a_sym.shape() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{:?}", a_sym.shape()),
            got: format!("{:?}", base.shape()),
        });
    }
    let n = a_sym.nrows();
    let tilde = a_sym + DMatrix::identity(n, n);
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / tilde.row(i).sum().sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * tilde[(i, j)] * inv_sqrt[j]);
    let mut sk = DMatrix::identity(n, n);
    for _ in 0..k {
        sk = &sk * &s;
    }
    let values = symmetrize(&(&sk * base * sk.transpose()));
    Ok(GraphCovariance { values, construction: CovarianceKind::Gcgp, normalized: false })
}

/// Law of |y_i - y_j|² when the d columns of Y are i.i.d. N(0, K).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaLaw {
    pub shape: f64,
    pub scale: f64,
}

impl GammaLaw {
    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if self.scale == 0.0 {
            return 1.0;
        }
        Gamma::new(self.shape, 1.0 / self.scale).map(|g| g.cdf(x)).unwrap_or(f64::NAN)
    }
}

/// Gamma(d/2, 2(k_ii + k_jj - 2k_ij)).
pub fn normal_distance_gamma(k_ii: f64, k_jj: f64, k_ij: f64, d: usize) -> Result<GammaLaw> {
    let var = k_ii + k_jj - 2.0 * k_ij;
    if var < -1e-12 * (k_ii.abs() + k_jj.abs()).max(1.0) || !var.is_finite() {
        return Err(ProbDrError::InvalidArgument(format!("k_ii + k_jj - 2 k_ij = {var} is negative")));
    }
    if d == 0 {
        return Err(ProbDrError::InvalidArgument("dimension d must be >= 1".into()));
    }
    Ok(GammaLaw { shape: d as f64 / 2.0, scale: 2.0 * var.max(0.0) })
}

/// Latent-distance helper used by the prior-sample smoothness checks.
pub fn latent_sq_dists(x: &Embedding) -> DMatrix<f64> {
    sq_dists_rows(x.values())
}
