//! Diffusion Boosted Trees.
//!
//! A conditional distribution learner for tabular data: a denoising diffusion
//! model over a scalar response whose reverse process is parameterized by one
//! regression tree per timestep, with the trees trained sequentially so each
//! one sees inputs produced by its predecessor. Also provides the
//! independently trained per-timestep baseline, the evaluation metrics, data
//! handling and a command-line front end.

pub mod card_t;
pub mod cli;
pub mod data;
pub mod dbt;
pub mod diffusion;
pub mod error;
pub mod mean_estimator;
pub mod metrics;
pub mod model_file;
pub mod rng;
pub mod schedule;
pub mod tree;

pub use error::{Error, Result};
