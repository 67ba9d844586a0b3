//! Transformer fusion of local trajectory densities into a multi-Bernoulli
//! density over current object states.
//!
//! The network embeds every input vector, runs a self-attention encoder,
//! picks `k` object queries from the highest-scoring encoder outputs, and
//! refines their states layer by layer in a decoder that cross-attends to
//! the encoder outputs. Training minimises the MB negative log-likelihood
//! of the ground truth in normalised coordinates.

pub mod checkpoint;
pub mod loss;
pub mod net;
pub mod tape;
pub mod train;

pub use loss::{mb_nll_loss, raw_nll, DEFAULT_UNMATCHED_PENALTY};
pub use net::{top_k, AttentionRecord, EmbeddingConfig, FusionNet, NetConfig, ParamStore};
pub use train::{train, LossPoint, TrainConfig, TrainSample, Trainer};

use crate::mb::{Estimate, FusionOutput};

/// Default existence threshold for transformer estimates.
pub const ESTIMATE_THRESHOLD: f64 = 0.75;

/// Components with existence strictly above `threshold`, in world coordinates.
pub fn extract_estimates(output: &FusionOutput, threshold: f64) -> Vec<Estimate> {
    output.extract(threshold)
}
