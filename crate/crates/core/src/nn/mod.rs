//! Minimal deterministic neural-network kernel.
//!
//! Dense and 1-D convolution layers, elementwise activations, three losses,
//! hand-written reverse-mode gradients and SGD. Networks are small (tens of
//! thousands of weights), so the code favours per-sample loops over batched
//! linear algebra and keeps all arithmetic in `f64`.

pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;
pub mod params;
pub mod tensor;

pub use layer::{
    activation_apply, conv1d_forward, dense_forward, Activation, Conv1d, Dense, Layer, LayerSpec,
};
pub use loss::{loss_eval, sample_loss, softmax_cross_entropy, LossKind};
pub use network::{backprop, LayerGrads, Network, Trace};
pub use optim::{optimizer_step, Optimizer, OptimizerConfig, OptimizerKind};
pub use params::{params_deserialize, params_serialize, FetcError, ParamRole, ParameterSet};
pub use tensor::Tensor;
