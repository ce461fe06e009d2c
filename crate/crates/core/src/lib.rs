//! Distance-based out-of-distribution detection on classifier embeddings.
//!
//! The crate fits class-conditional Gaussians with a shared covariance on the
//! penultimate-layer activations of a small classifier and scores inputs with
//! the Mahalanobis distance (MD) or the relative Mahalanobis distance (RMD,
//! class distance minus distance to a global background Gaussian). Training the
//! classifier with label smoothing gives the MD-LS / RMD-LS variants.
//!
//! Modules:
//! - [`numerics`]: matrices, Cholesky, plane bases, seeded RNG
//! - [`gaussian`]: detector fitting and MD/RMD scoring
//! - [`trainer`]: classifier, label smoothing, backprop and Adam
//! - [`bench`]: synthetic near-OOD benchmark and k-fold splits
//! - [`metrics`]: AUROC, AUPR-In/Out, TPR-threshold precision/F1, accuracy
//! - [`viz`]: plane projections and score densities for plotting
//! - [`cli`]: pipeline config and the experiment runner

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops follow the linear-algebra notation.
#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod cli;
pub mod error;
pub mod gaussian;
pub mod metrics;
pub mod numerics;
pub mod table;
pub mod trainer;
pub mod viz;

pub use error::{Error, ErrorKind, Result};
pub use gaussian::{fit_gaussians, FeatureSet, GaussianOodModel, ScoreMethod, ScoreVector};
pub use numerics::Matrix;
