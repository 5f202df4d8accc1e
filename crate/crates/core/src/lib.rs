//! Cross-subject transfer learning for SSVEP classification.
//!
//! The pipeline decomposes each trial into a filter bank of sub-bands, learns
//! TRCA spatial filters per stimulus, and scores a test trial by combining a
//! subject-specific correlation with a subject-general one learned by CCA
//! between the target's and the selected source subjects' task-related
//! components.
//!
//! * [`numerics`]: covariance, generalized Rayleigh quotient, CCA.
//! * [`signal`]: Chebyshev band-pass design, zero-phase filtering, filter bank, epoching.
//! * [`trca`]: TRCA filters and task-related components.
//! * [`selection`]: similarity-triggered source subject selection.
//! * [`transfer`]: TRCA / iTRCA / SS-iTRCA training and classification.
//! * [`eval`]: leave-one-subject-out, leave-one-block-out evaluation.
//! * [`synth`]: synthetic multi-subject data with ground truth.
//! * [`dataio`]: tensor files, model containers, run configuration.

// `!(x > 0.0)` style guards deliberately reject NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod eval;
pub mod numerics;
pub mod selection;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod transfer;
pub mod trca;

pub use error::{Error, Result};
pub use numerics::{Matrix, Vector};
pub use tensor::EpochTensor;
pub use transfer::{Algorithm, TrainedModel};
