//! Contrastive inter-sample diffusion augmentation for binary time-series
//! classification.
//!
//! The pipeline:
//!
//! 1. [`diffusion`] interpolates one series toward another while adding
//!    Gaussian noise, within a class and across classes.
//! 2. [`reverse`] trains one small CNN per diffusion step for each of the
//!    four (process, class) combinations and composes them to turn noisy
//!    mixtures into positive and negative samples for an anchor.
//! 3. [`classifier`] pretrains a base classifier with an uncertainty-weighted
//!    sum of cross-entropy, soft-nearest-neighbour and triplet losses
//!    ([`losses`]), then fine-tunes its head alone.
//! 4. [`simgen`] and [`dataio`] supply data; [`eval`] compares against the
//!    plain classifier and ranks methods across datasets.
//!
//! All numerics run on the small reverse-mode engine in [`tensor`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod dataio;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod losses;
pub mod reverse;
pub mod rng;
pub mod simgen;
pub mod tensor;

pub use error::{CdnetError, Result};
