//! Uncertainty-aware collaborative decision fusion for multi-exit classifiers.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffcore`]: reverse-mode differentiation used for training.
//! - [`evidential`]: logits to evidential opinions and the EDL loss.
//! - [`fusion`]: the sequential uncertainty-aware fusion and baseline fusers.
//! - [`model`]: a toy multi-exit MLP with cost accounting and checkpoints.
//! - [`training`]: EDL / cross-entropy training with last-exit JS guidance.
//! - [`inference`]: anytime and budgeted evaluation, threshold calibration.
//! - [`diversity`]: agreement, Q-statistic, correlation and KW variance.
//! - [`data`]: datasets, synthetic generators and the logits store.
//! - [`cli`]: the `gcdm` command-line front end.

pub mod cli;
pub mod data;
pub mod diffcore;
pub mod diversity;
pub mod error;
pub mod evidential;
pub mod fusion;
pub mod inference;
pub mod io;
pub mod model;
pub mod training;

pub use error::{Error, Result};
