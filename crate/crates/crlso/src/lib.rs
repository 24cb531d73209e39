//! Convexity-regularized latent-space optimization over DAG search spaces.
//!
//! A graph variational autoencoder embeds cell architectures into a
//! continuous latent space while an input convex neural network, trained
//! jointly on the score-prediction residual, pressures the encoder into a
//! latent geometry where performance is (approximately) convex. Candidates
//! are then found by seeded gradient ascent in that space, decoded back to
//! graphs, and scored by an oracle.
//!
//! Modules:
//! - [`graphspace`]: architecture DAGs, search spaces, canonical forms, IO
//! - [`gvae`]: GNN encoder, one-shot decoder, ELBO and the joint loss
//! - [`icnn`]: input convex network, projection, convexity verification
//! - [`predictor`]: semi-supervised GNN surrogate and rank correlations
//! - [`search`]: end-to-end training orchestration and the search loop
//! - [`oracle`]: synthetic benchmark, 2-D toy study, tabular adapter
//! - [`analysis`]: PCA projections, cosine similarity, separation report
//! - [`config`] / [`cli`]: flat config files and the command-line surface

pub mod analysis;
pub mod bundle;
pub mod cli;
pub mod config;
mod error;
pub mod graphspace;
pub mod gvae;
pub mod icnn;
pub mod nn;
pub mod oracle;
pub mod predictor;
pub mod search;

pub use error::{Error, Result};
