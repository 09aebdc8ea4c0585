//! Explanation-guided kernel pruning and the baseline-vs-pruned comparison.
//!
//! Kernels are scored by [`crate::xai::kernel_importance`]; the weakest ones
//! are cut from each convolution and the next layer's inputs are rewired to
//! match. Dense layers are never pruned. One shot, no retraining unless asked.

mod measure;
mod prune;

pub use measure::{compare, fam_digest, measure, Measurement, PruningReport};
pub use prune::{prune, prune_and_tune, LayerPruning, PruneCriterion, PruningConfig};
