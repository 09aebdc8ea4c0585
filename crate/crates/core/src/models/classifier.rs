//! Encoder + 1-D CNN + softmax classifier fine-tuned on labeled rows.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::report::EvaluationReport;
use super::vae::{gather_rows, VaeConfig, VaeModel};
use crate::data::Fam;
use crate::error::{Error, Result};
use crate::nn::{
    softmax_cross_entropy, Activation, Layer, LayerSpec, Network, Optimizer, OptimizerConfig,
    ParameterSet, Tensor,
};
use crate::rng;

/// Convolution stack applied to the latent vector viewed as a one-channel
/// signal of length `z_dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CnnConfig {
    pub channels: Vec<usize>,
    pub kernel_width: usize,
    pub stride: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 16, 8],
            kernel_width: 3,
            stride: 1,
        }
    }
}

impl CnnConfig {
    /// Conv + ReLU layers, flatten, dense to `num_classes`, softmax.
    pub fn head_specs(&self, z_dim: usize, num_classes: usize) -> Result<Vec<LayerSpec>> {
        if self.channels.is_empty()
            || self.channels.contains(&0)
            || self.kernel_width == 0
            || self.stride == 0
        {
            return Err(Error::Config(format!("invalid CNN configuration {self:?}")));
        }
        let mut specs = Vec::new();
        let mut in_ch = 1;
        let mut width = z_dim;
        for &out in &self.channels {
            let conv = LayerSpec::Conv1d {
                in_channels: in_ch,
                out_channels: out,
                kernel_width: self.kernel_width,
                stride: self.stride,
            };
            width = conv.output_width(width)?;
            specs.push(conv);
            specs.push(LayerSpec::act(Activation::Relu));
            in_ch = out;
        }
        specs.push(LayerSpec::dense(width, num_classes));
        specs.push(LayerSpec::act(Activation::Softmax));
        Ok(specs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

/// Classifier whose first `encoder_layers` layers are a VAE encoder trunk and
/// μ head (z = μ, no sampling), followed by the CNN stack and softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiSupervisedModel {
    network: Network,
    encoder_layers: usize,
    encoder_frozen: bool,
    class_names: Vec<String>,
}

/// Encoder copied from `vae`; CNN and head freshly initialized from `seed`.
pub fn build_classifier(
    vae: &VaeModel,
    class_names: Vec<String>,
    encoder_frozen: bool,
    cnn: &CnnConfig,
    seed: u64,
) -> Result<SemiSupervisedModel> {
    let mut model = SemiSupervisedModel::init(vae.config(), class_names, cnn, seed)?;
    model
        .network
        .load_layer_params(0, model.encoder_layers, &vae.encoder_parameters())?;
    model.encoder_frozen = encoder_frozen;
    Ok(model)
}

impl SemiSupervisedModel {
    /// Same architecture with every layer (encoder included) randomly
    /// initialized and trainable: the plain CNN baseline.
    pub fn init(
        vae: &VaeConfig,
        class_names: Vec<String>,
        cnn: &CnnConfig,
        seed: u64,
    ) -> Result<Self> {
        vae.validate()?;
        if class_names.len() < 2 {
            return Err(Error::Config(format!(
                "a classifier needs at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let mut specs = vae.encoder_specs();
        specs.push(LayerSpec::dense(
            *vae.hidden_dims.last().unwrap(),
            vae.z_dim,
        ));
        specs.extend(cnn.head_specs(vae.z_dim, class_names.len())?);
        let network = Network::from_specs(
            vae.input_dim,
            &specs,
            &mut rng::stream(seed, "classifier-init", 0),
        )?;
        Ok(Self {
            network,
            encoder_layers: vae.encoder_layer_count(),
            encoder_frozen: false,
            class_names,
        })
    }

    /// Reassemble from a full layer list, e.g. after loading or pruning.
    pub fn from_parts(
        network: Network,
        encoder_layers: usize,
        encoder_frozen: bool,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if network.output_width() != class_names.len() || class_names.len() < 2 {
            return Err(Error::Structural(format!(
                "classifier output width {} does not match {} classes",
                network.output_width(),
                class_names.len()
            )));
        }
        match network.layers().last() {
            Some(Layer::Activation(Activation::Softmax)) => {}
            _ => return Err(Error::Structural("classifier must end in softmax".into())),
        }
        if encoder_layers >= network.layers().len() {
            return Err(Error::Structural("encoder covers the whole network".into()));
        }
        Ok(Self {
            network,
            encoder_layers,
            encoder_frozen,
            class_names,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub(crate) fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn encoder_layers(&self) -> usize {
        self.encoder_layers
    }

    pub fn encoder_frozen(&self) -> bool {
        self.encoder_frozen
    }

    pub fn set_encoder_frozen(&mut self, frozen: bool) {
        self.encoder_frozen = frozen;
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_width()
    }

    pub fn parameters(&self) -> ParameterSet {
        self.network.parameters()
    }

    pub fn set_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        self.network.set_parameters(params)
    }

    pub fn param_count(&self) -> usize {
        self.network.param_count()
    }

    /// Class probabilities for one row.
    pub fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.network.forward(x)
    }

    pub(crate) fn predict_row_unchecked(&self, x: &[f64]) -> Vec<f64> {
        self.network.forward_unchecked(x)
    }

    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_row(x)?))
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for one row (`[input_dim]` → `[K]`) or a batch
/// (`[B, input_dim]` → `[B, K]`).
pub fn predict(model: &SemiSupervisedModel, x: &Tensor) -> Result<Tensor> {
    let w = model.input_dim();
    let k = model.num_classes();
    match x.shape() {
        [n] if *n == w => Ok(Tensor::from_vec(model.predict_row_unchecked(x.data()))),
        [b, n] if *n == w => {
            let mut out = Vec::with_capacity(b * k);
            for row in x.data().chunks(w) {
                out.extend(model.predict_row_unchecked(row));
            }
            Tensor::new(vec![*b, k], out)
        }
        s => Err(Error::Dimension {
            expected: vec![w],
            found: s.to_vec(),
        }),
    }
}

/// Mean cross-entropy (computed on the logits) over a batch and its
/// gradient. With a frozen encoder the encoder gradients are exactly zero.
pub fn classifier_gradients(
    model: &SemiSupervisedModel,
    x: &Tensor,
    labels: &[usize],
) -> Result<(f64, ParameterSet)> {
    let w = model.input_dim();
    if x.len() != labels.len() * w || labels.is_empty() {
        return Err(Error::Dimension {
            expected: vec![labels.len(), w],
            found: x.shape().to_vec(),
        });
    }
    let k = model.num_classes();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} outside [0, {k})")));
    }
    let net = &model.network;
    let n_layers = net.layers().len();
    let start = if model.encoder_frozen {
        model.encoder_layers
    } else {
        0
    };
    let mut grads = net.zero_grads();
    let mut total = 0.0;
    for (row, &label) in x.data().chunks(w).zip(labels) {
        let trace = net.forward_trace_unchecked(row);
        let logits = &trace.inputs[n_layers - 1];
        let (loss, g) = softmax_cross_entropy(logits, label);
        total += loss;
        net.backward_range(&trace, start, n_layers - 1, &g, &mut grads);
    }
    let inv = 1.0 / labels.len() as f64;
    grads.scale(inv);
    let mut out = ParameterSet::new();
    net.append_grads(0, &grads, &mut out);
    Ok((total * inv, out))
}

/// Minimize cross-entropy on the labeled rows; returns the mean loss of each
/// epoch.
pub fn fine_tune(
    model: &mut SemiSupervisedModel,
    data: &Fam,
    config: &FineTuneConfig,
) -> Result<Vec<f64>> {
    let labels = data.require_labels("fine-tuning")?;
    if data.width() != model.input_dim() {
        return Err(Error::Dimension {
            expected: vec![model.input_dim()],
            found: vec![data.width()],
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("fine-tuning data"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut opt = Optimizer::new(config.optimizer)?;
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(
            config.seed,
            "finetune-epoch",
            epoch as u64,
        ));
        let mut sum = 0.0;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = gather_rows(data, chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = classifier_gradients(model, &x, &y)?;
            if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            let next = opt.step(&model.parameters(), &grads)?;
            model.set_parameters(&next)?;
            sum += loss * chunk.len() as f64;
        }
        history.push(sum / data.len() as f64);
    }
    Ok(history)
}

/// Predicted class of every row.
pub fn predict_classes(model: &SemiSupervisedModel, data: &Fam) -> Result<Vec<usize>> {
    if data.width() != model.input_dim() {
        return Err(Error::Dimension {
            expected: vec![model.input_dim()],
            found: vec![data.width()],
        });
    }
    Ok(data
        .rows()
        .iter()
        .map(|r| argmax(&model.predict_row_unchecked(r)))
        .collect())
}

pub fn evaluate(model: &SemiSupervisedModel, test: &Fam) -> Result<EvaluationReport> {
    let labels = test.require_labels("evaluation")?;
    if test.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    if test.num_classes() > model.num_classes() {
        return Err(Error::Data(format!(
            "test set has {} classes, model has {}",
            test.num_classes(),
            model.num_classes()
        )));
    }
    let predicted = predict_classes(model, test)?;
    EvaluationReport::from_predictions(labels, &predicted, model.class_names())
}
