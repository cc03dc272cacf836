//! Pixel-wise modulated Dice loss and the segmentation loss and metric
//! toolkit around it.
//!
//! - [`field`]: channel-major probability and label fields, softmax and its VJP.
//! - [`losses`]: cross-entropy and Dice families with analytic gradients.
//! - [`metrics`]: overlap metrics and Normalized Surface Distance.
//! - [`verification`]: finite-difference and brute-force oracles.
//! - [`synth`]: imbalanced synthetic scenes and per-pixel features.
//! - [`trainer`]: linear per-pixel model trained with Adam.
//! - [`io`]: TNSR/PGM formats and the flat config schema.

pub mod error;
pub mod field;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synth;
pub mod trainer;
pub mod verification;

pub use error::{Error, Result};
pub use field::{one_hot, softmax, softmax_vjp, LabelField, Rng, ScalarField};
pub use losses::{evaluate, ClassGammas, Frozen, LossKind, LossParams, LossResult, LossSpec};
pub use metrics::{panel, MetricPanel};
