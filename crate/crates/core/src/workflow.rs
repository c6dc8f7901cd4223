//! End-to-end pipelines shared by the command line and the FFI layer:
//! embedding, out-of-sample prediction and prior sampling.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ProbDrError, Result};
use crate::eval::{rmse, spearman};
use crate::graph_gp::{
    build_laplacian, fit_hyperparams, matern_covariance, predict_unseen, prior_sample, AdjacencyLaw, AdjacencySample,
    FitOptions, GraphGPHyper, LaplacianKind, MaternNu, PriorConfig,
};
use crate::moments::{GraphSpec, Kernel, LLE_DEFAULT_RIDGE};
use crate::neighbor::{
    embed_out_of_sample, optimize_embedding, sne_affinities, tsne_affinities, umap_affinities, EmbedConfig, Family,
    Init, TraceEntry,
};
use crate::rng::SeededRng;
use crate::spectral::{two_step_map, SpectralAlgorithm};
use crate::types::{DataMatrix, Embedding};

fn default_true() -> bool {
    true
}

fn default_lle_ridge() -> f64 {
    LLE_DEFAULT_RIDGE
}

fn default_laplacian() -> LaplacianKind {
    LaplacianKind::Normalized
}

fn default_perplexity() -> f64 {
    30.0
}

fn default_neighbors() -> usize {
    15
}

fn one() -> f64 {
    1.0
}

/// Every embedding method with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
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
    Sne {
        #[serde(default = "default_perplexity")]
        perplexity: f64,
    },
    Tsne {
        #[serde(default = "default_perplexity")]
        perplexity: f64,
    },
    Umap {
        #[serde(default = "default_neighbors")]
        n_neighbors: usize,
        #[serde(default = "one")]
        a: f64,
        #[serde(default = "one")]
        b: f64,
    },
}

impl Algorithm {
    pub fn tag(&self) -> &'static str {
        match self {
            Algorithm::Sne { .. } => "sne",
            Algorithm::Tsne { .. } => "tsne",
            Algorithm::Umap { .. } => "umap",
            other => other.as_spectral().map(|s| s.tag()).unwrap_or("unknown"),
        }
    }

    pub fn as_spectral(&self) -> Option<SpectralAlgorithm> {
        Some(match self.clone() {
            Algorithm::Pca { center } => SpectralAlgorithm::Pca { center },
            Algorithm::Cmds => SpectralAlgorithm::Cmds,
            Algorithm::Isomap { k } => SpectralAlgorithm::Isomap { k },
            Algorithm::Kpca { kernel } => SpectralAlgorithm::Kpca { kernel },
            Algorithm::Le { graph, laplacian, gamma } => SpectralAlgorithm::Le { graph, laplacian, gamma },
            Algorithm::Lle { k, ridge } => SpectralAlgorithm::Lle { k, ridge },
            Algorithm::Diffusion { lengthscale, steps } => SpectralAlgorithm::Diffusion { lengthscale, steps },
            Algorithm::Sne { .. } | Algorithm::Tsne { .. } | Algorithm::Umap { .. } => return None,
        })
    }
}

/// Optimiser settings for the neighbour-embedding methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_iters: usize,
    pub init: Init,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        let base = EmbedConfig::default();
        Self { learning_rate: base.learning_rate, momentum: base.momentum, max_iters: base.max_iters, init: base.init }
    }
}

impl OptimizerSettings {
    pub fn embed_config(&self, q: usize, family: Family, a: f64, b: f64, seed: u64) -> EmbedConfig {
        EmbedConfig {
            q,
            family,
            a,
            b,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            max_iters: self.max_iters,
            seed,
            init: self.init,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub embedding: Embedding,
    /// σ̂² or β̂ for spectral methods.
    pub noise: Option<f64>,
    pub clamped_radicand: bool,
    pub trace: Option<Vec<TraceEntry>>,
    pub calibration_warnings: usize,
    pub clamped_probabilities: usize,
}

pub fn run_embed(y: &DataMatrix, algorithm: &Algorithm, q: usize, opt: &OptimizerSettings, seed: u64) -> Result<EmbedOutcome> {
    if let Some(spectral) = algorithm.as_spectral() {
        let map = two_step_map(y, &spectral, q)?;
        return Ok(EmbedOutcome {
            embedding: map.embedding,
            noise: Some(map.noise),
            clamped_radicand: map.clamped,
            trace: None,
            calibration_warnings: 0,
            clamped_probabilities: 0,
        });
    }
    let (v, calib, family, a, b) = match *algorithm {
        Algorithm::Sne { perplexity } => {
            let (v, c) = sne_affinities(y, perplexity)?;
            (v, c, Family::Sne, 1.0, 1.0)
        }
        Algorithm::Tsne { perplexity } => {
            let (v, c) = tsne_affinities(y, perplexity)?;
            (v, c, Family::Tsne, 1.0, 1.0)
        }
        Algorithm::Umap { n_neighbors, a, b } => {
            let (v, c) = umap_affinities(y, n_neighbors)?;
            (v, c, Family::Umap, a, b)
        }
        _ => unreachable!("spectral algorithms handled above"),
    };
    let result = optimize_embedding(&v, &opt.embed_config(q, family, a, b, seed))?;
    Ok(EmbedOutcome {
        embedding: result.embedding,
        noise: None,
        clamped_radicand: false,
        trace: Some(result.trace),
        calibration_warnings: calib.warnings.len(),
        clamped_probabilities: result.clamped,
    })
}

/// Settings of the embed → fit → predict pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSettings {
    pub n_neighbors: usize,
    pub q: usize,
    pub a: f64,
    pub b: f64,
    pub laplacian: LaplacianKind,
    pub init: GraphGPHyper,
    pub fit: FitOptions,
    pub optimizer: OptimizerSettings,
}

impl Default for PredictSettings {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            q: 2,
            a: 1.0,
            b: 1.0,
            laplacian: LaplacianKind::Normalized,
            init: GraphGPHyper::default(),
            fit: FitOptions::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PredictOutcome {
    pub mean: DMatrix<f64>,
    pub variance: Vec<f64>,
    pub hyper: GraphGPHyper,
    pub fit_trace: Vec<f64>,
    pub x_train: Embedding,
    pub x_test: Embedding,
    pub train_mean: DMatrix<f64>,
}

impl PredictOutcome {
    /// RMSE of the predictions and of the train-mean baseline.
    pub fn score(&self, truth: &DMatrix<f64>) -> Result<(f64, f64)> {
        let baseline = DMatrix::from_fn(truth.nrows(), truth.ncols(), |_, c| self.train_mean[(0, c)]);
        Ok((rmse(&self.mean, truth)?, rmse(&baseline, truth)?))
    }
}

fn column_means(y: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(1, y.ncols(), |_, c| y.column(c).mean())
}

/// Embeds the training rows with UMAP, places the test rows out of sample,
/// fits graph-GP hyperparameters on the expected training graph and predicts
/// the test rows from the expected graph over all rows.
pub fn run_predict(y_train: &DataMatrix, y_test: &DataMatrix, cfg: &PredictSettings, seed: u64) -> Result<PredictOutcome> {
    if y_train.d() != y_test.d() {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{} test columns", y_train.d()),
            got: format!("{}", y_test.d()),
        });
    }
    let train_mean = column_means(y_train.values());
    let mut centered = y_train.values().clone();
    for mut row in centered.row_iter_mut() {
        row -= &train_mean;
    }
    let embed = cfg.optimizer.embed_config(cfg.q, Family::Umap, cfg.a, cfg.b, seed);
    let (v_train, _) = umap_affinities(y_train, cfg.n_neighbors)?;
    let x_train = optimize_embedding(&v_train, &embed)?.embedding;
    let full = y_train.vstack(y_test)?;
    let (v_full, _) = umap_affinities(&full, cfg.n_neighbors)?;
    let x_test = embed_out_of_sample(&v_full, &x_train, &embed)?.embedding;

    let l_train = build_laplacian(&v_train.probs, cfg.laplacian)?;
    let fit = fit_hyperparams(&centered, &l_train, &cfg.init, &cfg.fit)?;
    let hyper = fit.hyper;
    let l_full = build_laplacian(&v_full.probs, cfg.laplacian)?;
    let c_full = matern_covariance(&l_full, &hyper, MaternNu::One)?.values * (hyper.sigma_s * hyper.sigma_s);
    let pred = predict_unseen(&centered, &c_full, hyper.sigma_n)?;
    let mut mean = pred.mean;
    for mut row in mean.row_iter_mut() {
        row += &train_mean;
    }
    Ok(PredictOutcome {
        mean,
        variance: pred.variance.iter().copied().collect(),
        hyper,
        fit_trace: fit.trace,
        x_train,
        x_test,
        train_mean,
    })
}

/// Latent design and generative chain for prior sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSettings {
    pub n: usize,
    pub latent_dim: usize,
    /// Latents are drawn uniformly from [low, high] in each coordinate.
    pub low: f64,
    pub high: f64,
    pub prior: PriorConfig,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self { n: 100, latent_dim: 1, low: -3.0, high: 3.0, prior: PriorConfig::default() }
    }
}

impl SampleSettings {
    /// n = 200 one-dimensional latents from Uniform(-3, 3), edges from
    /// Bernoulli(1 / (1 + 2|x_i - x_j|²)), normalised Laplacian, exp(-12.5 L),
    /// 200 columns.
    pub fn fig5() -> Self {
        Self {
            n: 200,
            latent_dim: 1,
            low: -3.0,
            high: 3.0,
            prior: PriorConfig {
                law: AdjacencyLaw::Bernoulli { a: 2.0, b: 1.0 },
                laplacian: LaplacianKind::Normalized,
                nu: MaternNu::Inf,
                hyper: GraphGPHyper { t: 12.5, ..GraphGPHyper::default() },
                columns: 200,
                normalize: false,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub latent: Embedding,
    pub adjacency: AdjacencySample,
    pub y: DMatrix<f64>,
}

pub fn run_sample(cfg: &SampleSettings, seed: u64) -> Result<SampleOutcome> {
    if cfg.n < 2 || cfg.latent_dim == 0 || !(cfg.high > cfg.low) || cfg.prior.columns == 0 {
        return Err(ProbDrError::Config(format!(
            "sample needs n >= 2, latent_dim >= 1, high > low and columns >= 1 (got n={}, latent_dim={}, [{}, {}], columns={})",
            cfg.n, cfg.latent_dim, cfg.low, cfg.high, cfg.prior.columns
        )));
    }
    let mut rng = SeededRng::new(seed);
    let latent = Embedding::new(DMatrix::from_fn(cfg.n, cfg.latent_dim, |_, _| rng.uniform_range(cfg.low, cfg.high)))?;
    let s = prior_sample(&latent, &cfg.prior, &mut rng)?;
    Ok(SampleOutcome { latent, adjacency: s.adjacency, y: s.y })
}

/// Spearman correlation, over pairs i < j, between the empirical covariance
/// of rows i and j of `y` and the latent distance |x_i - x_j|.
pub fn smoothness_spearman(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if y.nrows() != n || y.ncols() < 2 {
        return Err(ProbDrError::ShapeMismatch {
            expected: format!("{n} rows and at least 2 columns"),
            got: format!("{:?}", y.shape()),
        });
    }
    let mut yc = y.clone();
    for mut row in yc.row_iter_mut() {
        let m = row.mean();
        row.add_scalar_mut(-m);
    }
    let cov = &yc * yc.transpose() / (y.ncols() - 1) as f64;
    let mut c = Vec::with_capacity(n * (n - 1) / 2);
    let mut dist = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            c.push(cov[(i, j)]);
            dist.push((x.row(i) - x.row(j)).norm());
        }
    }
    spearman(&c, &dist)
}
