//! Variational autoencoder pretraining and the semi-supervised classifier.

pub mod classifier;
pub mod io;
pub mod report;
pub mod vae;

pub use classifier::{
    argmax, build_classifier, classifier_gradients, evaluate, fine_tune, predict, predict_classes,
    CnnConfig, FineTuneConfig, SemiSupervisedModel,
};
pub use io::{read_model, write_model, ModelDescriptor, ModelKind};
pub use report::{ClassMetrics, EvaluationReport};
pub use vae::{
    kl_divergence, reparameterize, sample_epsilon, train_vae, train_vae_from, vae_encode,
    vae_eval_loss, vae_gradients, vae_loss, VaeConfig, VaeHistory, VaeLoss, VaeModel,
};
