//! Classical dimensionality reduction as probabilistic inference.
//!
//! Spectral methods (PCA, CMDS, Isomap, kernel PCA, Laplacian eigenmaps, LLE,
//! diffusion maps) are run as two-step MAP estimates under Wishart models;
//! SNE, t-SNE and UMAP are run as KL minimisation between data and latent
//! affinities. Graph Gaussian processes built from the same affinities give
//! prior samples and predictions at unseen points.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod graph_gp;
pub mod io;
pub mod linalg;
pub mod meanfield;
pub mod moments;
pub mod neighbor;
pub mod rng;
pub mod spectral;
pub mod types;
pub mod workflow;

pub use error::{ErrorClass, ProbDrError, Result};
pub use rng::SeededRng;
pub use types::{DataMatrix, Embedding};
