//! Reward-distilled query routing.
//!
//! Offline, every candidate backend answers a pool of training queries and a
//! reward source scores each answer. Those per-query reward vectors are
//! smoothed with tag-level means, softmax-normalized, and distilled into a
//! linear router over hashed n-gram features by minimizing KL divergence.
//! Online, the router picks exactly one backend per query from the text alone.
//!
//! Module map:
//!
//! - [`dataset`]: queries, the model registry, reward vectors and the
//!   line-delimited dataset format.
//! - [`rewards`]: decontamination, reward normalization, tag aggregation,
//!   label enhancement and reward entropy.
//! - [`featurizer`]: deterministic hashed word/char n-gram features.
//! - [`router`]: the trainable routing function and its training loop.
//! - [`checkpoint`]: the versioned binary checkpoint container.
//! - [`ranking`]: reward-model ranking and oracle baselines, reward sources
//!   and the synthetic benchmark generator.
//! - [`eval`]: mean task rank, uplift rate, routing accuracy, the entropy
//!   analysis and the β-ablation harness.
//! - [`gateway`]: the HTTP routing service.
//! - [`tagger`]: the keyword tagger used by the CLI.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod featurizer;
pub mod gateway;
pub mod ranking;
pub mod rewards;
pub mod router;
pub mod tagger;

mod hash;

pub use dataset::{ModelRegistry, ModelSpec, Query, RewardDataset, RewardRow, RewardVector};
pub use featurizer::{FeatureVector, FeaturizerConfig};
pub use hash::fnv1a64;
pub use rewards::{RoutingDistribution, TagRewardTable};
pub use router::{RouterModel, TrainConfig, TrainReport};

/// Index of the largest entry; ties resolve to the lowest index.
///
/// Returns `None` for an empty slice.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}
