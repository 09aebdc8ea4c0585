//! Shapley-value explanations and convolution kernel importance.
//!
//! A coalition's value `v_x(S)` is the model output on `x` with the features
//! outside `S` replaced by their background means. Exact mode enumerates all
//! coalitions (p ≤ 20); sampled mode averages marginal contributions over
//! random feature orderings. Kernel importance is the validation accuracy lost
//! when a single kernel is switched off.

pub mod global;
pub mod kernel;
pub mod shap;

pub use global::{
    export_summary, global_importance, summary_csv, GlobalImportance, RankBy, ShapMatrix,
};
pub use kernel::{ablate_kernel, kernel_importance, KernelImportance, KernelScore};
pub use shap::{
    local_explain, sample_permutations, shap_exact, shap_sampled, target_index, value_function,
    Background, FnPredictor, LocalExplanation, Predictor, ShapConfig, ShapMode, Target,
    MAX_EXACT_FEATURES,
};
