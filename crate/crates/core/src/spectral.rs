//! Wishart likelihoods and the closed-form MAP embeddings built on them.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{ProbDrError, Result};
use crate::graph_gp::LaplacianKind;
use crate::linalg::{cholesky, chol_log_det, pairwise_sq_dists, sym_eigen};
use crate::moments::{
    cmds_moment, diffusion_moment, isomap_moment, kpca_moment, le_covariance, le_precision,
    lle_precision, pca_moment, GraphSpec, Kernel, MomentKind, MomentMatrix, LLE_DEFAULT_RIDGE,
};
use crate::rng::SeededRng;
use crate::types::{ensure_square, DataMatrix, Embedding};

/// Ridge added to precision moments before inversion-based quantities.
pub const DEFAULT_PRECISION_RIDGE: f64 = 1e-8;

/// A MAP embedding and its fitted noise level (σ̂² or β̂).
#[derive(Debug, Clone)]
pub struct MapEmbedding {
    pub embedding: Embedding,
    pub noise: f64,
    /// Positions in the descending eigenvalue list, in column order.
    pub used_components: Vec<usize>,
    /// True when at least one radicand had to be clamped at zero.
    pub clamped: bool,
}

fn trace_solve(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, t: &DMatrix<f64>) -> f64 {
    chol.solve(t).trace()
}

/// -(dof/2) (tr(m⁻¹ t) + log|m|): the Wishart log density of dof·t with mean
/// parameter m, constants dropped.
pub fn wishart_logpdf(t: &DMatrix<f64>, m: &DMatrix<f64>, dof: f64) -> Result<f64> {
    ensure_square(t, "statistic")?;
    if t.shape() != m.shape() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{:?}", m.shape()),
            got: format!("{:?}", t.shape()),
        });
    }
    let chol = cholesky(m, "Wishart mean")?;
    Ok(-0.5 * dof * (trace_solve(&chol, t) + chol_log_det(&chol)))
}

/// Full log density of ρ·t̂ under W(m, ρ). The log|ρ t̂| term is skipped when
/// t̂ is singular since it does not depend on m.
pub fn scaled_wishart_logpdf(t_hat: &DMatrix<f64>, m: &DMatrix<f64>, rho: f64) -> Result<f64> {
    ensure_square(t_hat, "statistic")?;
    let n = t_hat.nrows() as f64;
    if !(rho >= n) {
        return Err(ProbDrError::InvalidArgument(format!("rho must be >= n = {n}, got {rho}")));
    }
    let chol = cholesky(m, "Wishart mean")?;
    let s = t_hat * rho;
    let log_det_s = nalgebra::Cholesky::new(s.clone()).map(|c| chol_log_det(&c));
    let mut value = -0.5 * trace_solve(&chol, &s)
        - 0.5 * rho * n * std::f64::consts::LN_2
        - 0.5 * rho * chol_log_det(&chol)
        - ln_multivariate_gamma(t_hat.nrows(), 0.5 * rho);
    if let Some(ld) = log_det_s {
        value += 0.5 * (rho - n - 1.0) * ld;
    }
    Ok(value)
}

fn ln_multivariate_gamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln()
        + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

fn check_q(q: usize, n: usize, reserved: usize) -> Result<()> {
    if q == 0 || q + reserved >= n {
        return Err(ProbDrError::InvalidArgument(format!(
            "latent dimension q={q} needs 1 <= q < n - {reserved} (n={n})"
        )));
    }
    Ok(())
}

/// Probabilistic PCA: X̂ = U_q (Λ_q - σ̂² I)^{1/2} with σ̂² the mean of the
/// trailing eigenvalues.
pub fn pca_map(moment: &MomentMatrix, q: usize) -> Result<MapEmbedding> {
    if moment.kind != MomentKind::Covariance {
        return Err(ProbDrError::InvalidArgument("pca_map needs a covariance moment".into()));
    }
    let n = moment.n();
    check_q(q, n, 0)?;
    let eig = sym_eigen(&moment.values)?;
    let sigma2 = eig.eigenvalues.rows(q, n - q).sum() / (n - q) as f64;
    let mut x = DMatrix::zeros(n, q);
    let mut clamped = false;
    for k in 0..q {
        let radicand = eig.eigenvalues[k] - sigma2;
        if radicand <= 0.0 {
            clamped = true;
        }
        x.set_column(k, &(eig.eigenvectors.column(k) * radicand.max(0.0).sqrt()));
    }
    Ok(MapEmbedding {
        embedding: Embedding::new(x)?,
        noise: sigma2,
        used_components: (0..q).collect(),
        clamped,
    })
}

/// Probabilistic MCA: X̂ = U_q (Λ_q⁻¹ - β̂ I)^{1/2} over the q smallest
/// eigenvalues, β̂ = (#remaining) / Σ remaining eigenvalues.
///
/// With `drop_null` the moment's null vector (or, failing that, the smallest
/// eigenvector) is excluded before selection.
pub fn mca_map(moment: &MomentMatrix, q: usize, drop_null: bool, ridge: f64) -> Result<MapEmbedding> {
    if moment.kind != MomentKind::Precision {
        return Err(ProbDrError::InvalidArgument("mca_map needs a precision moment".into()));
    }
    if !(ridge >= 0.0) {
        return Err(ProbDrError::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let n = moment.n();
    let reserved = usize::from(drop_null);
    check_q(q, n, reserved)?;
    let mut gamma = &moment.values + DMatrix::identity(n, n) * ridge;
    let deflated = match (&moment.null_vector, drop_null) {
        (Some(v), true) => {
            let shift = gamma.diagonal().abs().sum() + 1.0;
            gamma += (v * v.transpose()) * shift;
            true
        }
        _ => false,
    };
    let eig = sym_eigen(&gamma)?;
    // ascending positions in the descending list
    let mut ascending: Vec<usize> = (0..n).rev().collect();
    if deflated {
        ascending.retain(|&k| k != 0);
    } else if drop_null {
        ascending.remove(0);
    }
    let chosen = &ascending[..q];
    let rest = &ascending[q..];
    let rest_sum: f64 = rest.iter().map(|&k| eig.eigenvalues[k]).sum();
    if !(rest_sum > 0.0) {
        return Err(ProbDrError::Singular("trailing precision eigenvalues sum to zero".into()));
    }
    let beta = rest.len() as f64 / rest_sum;
    let mut x = DMatrix::zeros(n, q);
    let mut clamped = false;
    for (col, &k) in chosen.iter().enumerate() {
        let lambda = eig.eigenvalues[k];
        if !(lambda > 0.0) {
            return Err(ProbDrError::Singular(format!(
                "precision eigenvalue {lambda} is not positive; increase the ridge"
            )));
        }
        let radicand = 1.0 / lambda - beta;
        if radicand <= 0.0 {
            clamped = true;
        }
        x.set_column(col, &(eig.eigenvectors.column(k) * radicand.max(0.0).sqrt()));
    }
    Ok(MapEmbedding { embedding: Embedding::new(x)?, noise: beta, used_components: chosen.to_vec(), clamped })
}

fn default_true() -> bool {
    true
}

fn default_lle_ridge() -> f64 {
    LLE_DEFAULT_RIDGE
}

fn default_laplacian() -> LaplacianKind {
    LaplacianKind::Normalized
}

/// Spectral methods and their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectralAlgorithm {
    Pca {
        #[serde(default = "default_true")]
        center: bool,
    },
    Cmds,
    Isomap {
        k: usize,
    },
    Kpca {
        kernel: Kernel,
    },
    /// Laplacian eigenmaps. Without `gamma` the Laplacian is used as a
    /// precision; with it the covariance H(L + γI)⁻¹H is used instead.
    Le {
        graph: GraphSpec,
        #[serde(default = "default_laplacian")]
        laplacian: LaplacianKind,
        #[serde(default)]
        gamma: Option<f64>,
    },
    Lle {
        k: usize,
        #[serde(default = "default_lle_ridge")]
        ridge: f64,
    },
    Diffusion {
        lengthscale: f64,
        steps: u32,
    },
}

impl SpectralAlgorithm {
    pub fn tag(&self) -> &'static str {
        match self {
            SpectralAlgorithm::Pca { .. } => "pca",
            SpectralAlgorithm::Cmds => "cmds",
            SpectralAlgorithm::Isomap { .. } => "isomap",
            SpectralAlgorithm::Kpca { .. } => "kpca",
            SpectralAlgorithm::Le { .. } => "le",
            SpectralAlgorithm::Lle { .. } => "lle",
            SpectralAlgorithm::Diffusion { .. } => "diffusion",
        }
    }

    /// Step one: the moment matrix of `y`.
    pub fn moment(&self, y: &DataMatrix) -> Result<MomentMatrix> {
        match self {
            SpectralAlgorithm::Pca { center } => Ok(pca_moment(y, *center)),
            SpectralAlgorithm::Cmds => cmds_moment(&pairwise_sq_dists(y)),
            SpectralAlgorithm::Isomap { k } => isomap_moment(y, *k),
            SpectralAlgorithm::Kpca { kernel } => kpca_moment(y, kernel),
            SpectralAlgorithm::Le { graph, laplacian, gamma } => {
                let p = le_precision(y, *graph, *laplacian)?;
                match gamma {
                    Some(g) => le_covariance(&p, *g),
                    None => Ok(p),
                }
            }
            SpectralAlgorithm::Lle { k, ridge } => lle_precision(y, *k, *ridge),
            SpectralAlgorithm::Diffusion { lengthscale, steps } => {
                diffusion_moment(y, *lengthscale, *steps)
            }
        }
    }
}

/// Step two on a ready moment: major eigenvectors for covariances, minor
/// eigenvectors (null vector dropped) for precisions.
pub fn two_step_map_from_moment(moment: &MomentMatrix, q: usize) -> Result<MapEmbedding> {
    match moment.kind {
        MomentKind::Covariance => pca_map(moment, q),
        MomentKind::Precision => mca_map(moment, q, true, DEFAULT_PRECISION_RIDGE),
    }
}

/// Moment estimation followed by the closed-form MAP embedding.
pub fn two_step_map(y: &DataMatrix, algorithm: &SpectralAlgorithm, q: usize) -> Result<MapEmbedding> {
    two_step_map_from_moment(&algorithm.moment(y)?, q)
}

/// KL(W(q_mean, dof) ‖ W(p_mean, dof)) = (dof/2)(tr(P⁻¹Q) - n + log|P| - log|Q|).
pub fn wishart_kl(q_mean: &DMatrix<f64>, p_mean: &DMatrix<f64>, dof: f64) -> Result<f64> {
    if q_mean.shape() != p_mean.shape() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{:?}", p_mean.shape()),
            got: format!("{:?}", q_mean.shape()),
        });
    }
    let cp = cholesky(p_mean, "model mean")?;
    let cq = cholesky(q_mean, "variational mean")?;
    let n = q_mean.nrows() as f64;
    Ok(0.5 * dof * (trace_solve(&cp, q_mean) - n + chol_log_det(&cp) - chol_log_det(&cq)))
}

/// log MN(Y | 0, K, I): the GPLVM marginal likelihood with kernel matrix K.
pub fn gplvm_objective(y: &DataMatrix, kernel: &DMatrix<f64>) -> Result<f64> {
    if kernel.nrows() != y.n() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{} x {}", y.n(), y.n()),
            got: format!("{} x {}", kernel.nrows(), kernel.ncols()),
        });
    }
    let chol = cholesky(kernel, "kernel matrix")?;
    let (n, d) = (y.n() as f64, y.d() as f64);
    let quad = (chol.solve(y.values()).component_mul(y.values())).sum();
    Ok(-0.5 * n * d * (2.0 * std::f64::consts::PI).ln() - 0.5 * d * chol_log_det(&chol) - 0.5 * quad)
}

/// One draw from W(scale, dof) by the Bartlett decomposition.
pub fn sample_wishart(scale: &DMatrix<f64>, dof: f64, rng: &mut SeededRng) -> Result<DMatrix<f64>> {
    let n = scale.nrows();
    if !(dof > n as f64 - 1.0) {
        return Err(ProbDrError::InvalidArgument(format!("Wishart dof must exceed n - 1, got {dof}")));
    }
    let l = cholesky(scale, "Wishart scale")?.l();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = rng.chi_squared(dof - i as f64).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.normal();
        }
    }
    let la = l * a;
    Ok(&la * la.transpose())
}

/// Monte Carlo second moment of y drawn through S ~ W(XXᵀ + σ²I, ρ)/ρ and
/// y | S ~ N(0, S). Work is split over `workers` threads, each with its own
/// derived stream; the result depends only on the seed and worker count.
pub fn marginal_consistency_mc(
    x: &DMatrix<f64>,
    sigma2: f64,
    rho: f64,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let mean = x * x.transpose() + DMatrix::identity(n, n) * sigma2;
    cholesky(&mean, "model covariance")?;
    let workers = workers.max(1);
    let base = SeededRng::new(seed);
    let partials: Vec<Result<DMatrix<f64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let count = samples / workers + usize::from(w < samples % workers);
                let mut rng = base.derive(w as u64);
                let mean = &mean;
                scope.spawn(move || -> Result<DMatrix<f64>> {
                    let mut acc = DMatrix::zeros(n, n);
                    for _ in 0..count {
                        let s = sample_wishart(mean, rho, &mut rng)? / rho;
                        let l = cholesky(&s, "sampled covariance")?.l();
                        let z = DVector::from_fn(n, |_, _| rng.normal());
                        let y = l * z;
                        acc += &y * y.transpose();
                    }
                    Ok(acc)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut total = DMatrix::zeros(n, n);
    for p in partials {
        total += p?;
    }
    Ok(total / samples.max(1) as f64)
}
