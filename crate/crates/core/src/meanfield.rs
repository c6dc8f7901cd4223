//! Mean-field variational inference over edges of the UMAP-style generative
//! graph model: cavity covariances and coordinate-ascent updates.
//!
//! Each unordered edge (i, j) adds 2ρ(e_i - e_j)(e_i - e_j)ᵀ to the
//! Laplacian, so the model precision is βI + 2ρ(D - A). Expectations over the
//! remaining edges are taken by plugging in the expected adjacency, or by
//! averaging over sampled graphs.

use nalgebra::DMatrix;

use crate::error::{ProbDrError, Result};
use crate::linalg::{inverse_pd, max_asymmetry};
use crate::rng::SeededRng;
use crate::types::{ensure_finite, ensure_square};

/// How E[κ_ij] over the other edges is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaEstimator {
    /// Cavity distance under the expected Laplacian.
    PlugIn,
    /// Average over `samples` graphs drawn from the current edge marginals.
    MonteCarlo { samples: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct CaviState {
    /// q(A_ij = 1), symmetric with zero diagonal.
    pub edge_probs: DMatrix<f64>,
    /// Prior edge probabilities π_ij, strictly inside (0, 1) off the diagonal.
    pub prior: DMatrix<f64>,
    /// Squared data distances |y_i - y_j|².
    pub sq_dists: DMatrix<f64>,
    pub d: f64,
    pub rho: f64,
    pub beta: f64,
    pub estimator: KappaEstimator,
}

impl CaviState {
    /// Starts from q = π with ρ = 1/d and the plug-in estimator.
    pub fn new(sq_dists: DMatrix<f64>, prior: DMatrix<f64>, d: f64, beta: f64) -> Result<Self> {
        let state = Self {
            edge_probs: prior.clone(),
            prior,
            sq_dists,
            d,
            rho: 1.0 / d,
            beta,
            estimator: KappaEstimator::PlugIn,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn n(&self) -> usize {
        self.edge_probs.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        for (m, what) in [(&self.edge_probs, "edge probabilities"), (&self.prior, "prior"), (&self.sq_dists, "distances")] {
            ensure_square(m, what)?;
            ensure_finite(m, what)?;
            if m.nrows() != self.edge_probs.nrows() {
                return Err(ProbDrError::ShapeMismatch {
                    expected: format!("{n} x {n}", n = self.edge_probs.nrows()),
                    got: format!("{what} {:?}", m.shape()),
                });
            }
            let asym = max_asymmetry(m);
            if asym > 1e-12 {
                return Err(ProbDrError::NotSymmetric { max_asymmetry: asym });
            }
        }
        if !(self.d > 0.0 && self.rho > 0.0 && self.beta > 0.0) {
            return Err(ProbDrError::InvalidArgument(format!(
                "d, rho and beta must be positive, got {}, {}, {}",
                self.d, self.rho, self.beta
            )));
        }
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (q, p) = (self.edge_probs[(i, j)], self.prior[(i, j)]);
                if !(0.0..=1.0).contains(&q) {
                    return Err(ProbDrError::InvalidArgument(format!("edge probability ({i}, {j}) = {q}")));
                }
                if !(p > 0.0 && p < 1.0) {
                    return Err(ProbDrError::InvalidArgument(format!("prior ({i}, {j}) = {p} is not interior")));
                }
            }
        }
        Ok(())
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        if i == j || i >= self.n() || j >= self.n() {
            return Err(ProbDrError::InvalidArgument(format!("invalid pair ({i}, {j}) for n = {}", self.n())));
        }
        Ok(())
    }
}

/// βI + 2ρ(D - W) for symmetric edge weights W.
fn precision_from_weights(w: &DMatrix<f64>, rho: f64, beta: f64) -> DMatrix<f64> {
    let n = w.nrows();
    DMatrix::from_fn(n, n, |r, c| {
        if r == c {
            beta + 2.0 * rho * (w.row(r).sum() - w[(r, r)])
        } else {
            -2.0 * rho * w[(r, c)]
        }
    })
}

fn without_edge(w: &DMatrix<f64>, i: usize, j: usize) -> DMatrix<f64> {
    let mut out = w.clone();
    out[(i, j)] = 0.0;
    out[(j, i)] = 0.0;
    out
}

/// βI + L̂^{ij} under the expected adjacency.
pub fn cavity_precision(state: &CaviState, i: usize, j: usize) -> Result<DMatrix<f64>> {
    state.check_pair(i, j)?;
    Ok(precision_from_weights(&without_edge(&state.edge_probs, i, j), state.rho, state.beta))
}

/// Ĉ^{ij} = (βI + L̂^{ij})⁻¹.
pub fn cavity_covariance(state: &CaviState, i: usize, j: usize) -> Result<DMatrix<f64>> {
    inverse_pd(&cavity_precision(state, i, j)?, "cavity precision")
}

fn quadratic(c: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (c[(i, i)] + c[(j, j)] - 2.0 * c[(i, j)]).max(0.0)
}

/// κ_ij = (e_i - e_j)ᵀ Ĉ^{ij} (e_i - e_j).
pub fn cavity_distance(state: &CaviState, i: usize, j: usize) -> Result<f64> {
    Ok(quadratic(&cavity_covariance(state, i, j)?, i, j))
}

/// E[κ_ij] under the state's estimator.
pub fn expected_cavity_distance(state: &CaviState, i: usize, j: usize) -> Result<f64> {
    match state.estimator {
        KappaEstimator::PlugIn => cavity_distance(state, i, j),
        KappaEstimator::MonteCarlo { samples, seed } => {
            state.check_pair(i, j)?;
            if samples == 0 {
                return Err(ProbDrError::InvalidArgument("Monte Carlo estimator needs samples >= 1".into()));
            }
            let n = state.n();
            let mut rng = SeededRng::new(seed).derive((i * n + j) as u64);
            let mut total = 0.0;
            for _ in 0..samples {
                let mut w = DMatrix::zeros(n, n);
                for r in 0..n {
                    for c in 0..r {
                        if (r, c) != (j.max(i), j.min(i)) && rng.bernoulli(state.edge_probs[(r, c)]) {
                            w[(r, c)] = 1.0;
                            w[(c, r)] = 1.0;
                        }
                    }
                }
                let cov = inverse_pd(&precision_from_weights(&w, state.rho, state.beta), "sampled precision")?;
                total += quadratic(&cov, i, j);
            }
            Ok(total / samples as f64)
        }
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// σ(dρ κ̄ - ρ d_ij + logit π). With ρ = 1/d this is σ(κ̄ - d_ij/d + logit π).
pub fn cavi_logistic(kappa_bar: f64, sq_dist: f64, d: f64, rho: f64, prior: f64) -> f64 {
    sigmoid(d * rho * kappa_bar - rho * sq_dist + logit(prior))
}

/// New q(A_ij = 1) given the other edges.
pub fn cavi_update(state: &CaviState, i: usize, j: usize) -> Result<f64> {
    let kappa = expected_cavity_distance(state, i, j)?;
    Ok(cavi_logistic(kappa, state.sq_dists[(i, j)], state.d, state.rho, state.prior[(i, j)]))
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Largest absolute probability change in each sweep.
    pub max_changes: Vec<f64>,
    pub converged: bool,
}

/// Sequential updates over pairs i < j in lexicographic order until the
/// largest change in a sweep drops below `tol` or `max_sweeps` is reached.
pub fn cavi_sweep(state: &mut CaviState, max_sweeps: usize, tol: f64) -> Result<SweepReport> {
    state.validate()?;
    let n = state.n();
    let mut max_changes = Vec::new();
    for _ in 0..max_sweeps {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let q = cavi_update(state, i, j)?;
                worst = worst.max((q - state.edge_probs[(i, j)]).abs());
                state.edge_probs[(i, j)] = q;
                state.edge_probs[(j, i)] = q;
            }
        }
        max_changes.push(worst);
        if worst < tol {
            return Ok(SweepReport { max_changes, converged: true });
        }
    }
    Ok(SweepReport { max_changes, converged: false })
}

/// Convergence tolerance used by default.
pub const CAVI_TOL: f64 = 1e-5;
