//! Multi-view representation learning with a product-of-experts variational
//! autoencoder, plus the genotype QC / GWAS feature-selection and regression
//! pipeline built around it.
//!
//! Module map:
//! - [`gaussians`]: diagonal Gaussian algebra (density, KL, PoE fusion, sampling)
//! - [`neuralnet`]: small MLP engine with exact backprop and Adam
//! - [`mvvae`]: the multi-view VAE, its ELBO and training loop
//! - [`genetics`]: genotype QC, PCA, covariate residualization, score-test GWAS
//! - [`pipeline`]: datasets, scaling, splits, linear head, metrics, grid search, synthetic cohorts
//! - [`cli`]: the `mvfuse` command-line verbs

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod gaussians;
pub mod genetics;
pub mod linalg;
pub mod mvvae;
pub mod neuralnet;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
pub use gaussians::DiagGaussian;
