use serde::{Deserialize, Serialize};

use crate::data::Fam;
use crate::error::{Error, Result};
use crate::models::{fine_tune, FineTuneConfig, SemiSupervisedModel};
use crate::nn::{Conv1d, Dense, Layer, Network, Tensor};
use crate::xai::KernelImportance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneCriterion {
    /// Remove kernels scoring strictly below this value; ties survive.
    ImportanceThreshold(f64),
    /// Keep the ⌈fraction · C⌉ best kernels of each layer.
    KeepFraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruningConfig {
    pub criterion: PruneCriterion,
    pub min_kernels_per_layer: usize,
    /// Optional fine-tune after pruning; 0 leaves the pruned weights as they are.
    pub fine_tune_epochs: usize,
}

impl Default for PruningConfig {
    fn default() -> Self {
        Self {
            criterion: PruneCriterion::KeepFraction(0.5),
            min_kernels_per_layer: 1,
            fine_tune_epochs: 0,
        }
    }
}

impl PruningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_kernels_per_layer == 0 {
            return Err(Error::Config(
                "min_kernels_per_layer must be at least 1".into(),
            ));
        }
        match self.criterion {
            PruneCriterion::KeepFraction(f) if !(f > 0.0 && f <= 1.0) => Err(Error::Config(
                format!("keep_fraction must lie in (0, 1], got {f}"),
            )),
            PruneCriterion::ImportanceThreshold(t) if t.is_nan() => {
                Err(Error::Config("threshold is NaN".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Which kernels of one convolution survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerPruning {
    pub layer_index: usize,
    pub original: usize,
    /// Surviving kernel indices, ascending.
    pub kept: Vec<usize>,
}

/// Best `n` kernels by score, ties to the lower index, returned ascending.
fn top(scores: &[f64], n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(n);
    order.sort_unstable();
    order
}

fn select(scores: &[f64], config: &PruningConfig, layer_index: usize) -> Vec<usize> {
    let c = scores.len();
    let floor = config.min_kernels_per_layer.min(c);
    match config.criterion {
        PruneCriterion::KeepFraction(f) => {
            // The tolerance keeps exact products such as 0.5 · 16 from rounding up.
            let n = ((f * c as f64) - 1e-9).ceil() as usize;
            top(scores, n.clamp(floor, c))
        }
        PruneCriterion::ImportanceThreshold(t) => {
            let kept: Vec<usize> = (0..c).filter(|&i| !(scores[i] < t)).collect();
            if kept.len() < floor {
                log::warn!("threshold {t} would leave layer {layer_index} with {} kernels; keeping {floor}", kept.len());
                top(scores, floor)
            } else {
                kept
            }
        }
    }
}

fn conv_scores(scores: &KernelImportance, layer_index: usize, channels: usize) -> Result<Vec<f64>> {
    let mut out = vec![None; channels];
    for s in scores.for_layer(layer_index) {
        if let Some(slot) = out.get_mut(s.kernel) {
            *slot = Some(s.score);
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(k, s)| {
            s.ok_or_else(|| {
                Error::Config(format!(
                    "no importance score for kernel {k} of layer {layer_index}"
                ))
            })
        })
        .collect()
}

fn slice_conv(c: &Conv1d, keep_out: &[usize], keep_in: &[usize]) -> Conv1d {
    let (ic, k) = (c.in_channels(), c.kernel_width());
    let kd = c.kernels.data();
    let mut w = Vec::with_capacity(keep_out.len() * keep_in.len() * k);
    for &o in keep_out {
        for &i in keep_in {
            let at = (o * ic + i) * k;
            w.extend_from_slice(&kd[at..at + k]);
        }
    }
    Conv1d {
        kernels: Tensor::new(vec![keep_out.len(), keep_in.len(), k], w).expect("consistent shape"),
        bias: Tensor::from_vec(keep_out.iter().map(|&o| c.bias.data()[o]).collect()),
        stride: c.stride,
    }
}

/// Drop the input columns of removed channels from a dense layer that reads
/// a flattened `[channels, len]` signal.
fn slice_dense_inputs(d: &Dense, channels: usize, keep: &[usize]) -> Dense {
    let (out, inp) = (d.out_dim(), d.in_dim());
    let len = inp / channels;
    let mut w = Vec::with_capacity(out * keep.len() * len);
    for row in d.weight.data().chunks(inp) {
        for &c in keep {
            w.extend_from_slice(&row[c * len..(c + 1) * len]);
        }
    }
    Dense {
        weight: Tensor::new(vec![out, keep.len() * len], w).expect("consistent shape"),
        bias: d.bias.clone(),
    }
}

/// Remove low-importance kernels and rewire the following layer. Returns the
/// pruned model and the per-layer survivors.
pub fn prune(
    model: &SemiSupervisedModel,
    scores: &KernelImportance,
    config: &PruningConfig,
) -> Result<(SemiSupervisedModel, Vec<LayerPruning>)> {
    config.validate()?;
    let mut layers = Vec::with_capacity(model.network().layers().len());
    let mut summary = Vec::new();
    // Channels kept by the last convolution, with its original channel count.
    let mut carried: Option<(usize, Vec<usize>)> = None;
    for (li, layer) in model.network().layers().iter().enumerate() {
        match layer {
            Layer::Conv1d(c) => {
                let s = conv_scores(scores, li, c.out_channels())?;
                let keep_out = select(&s, config, li);
                let keep_in = match &carried {
                    Some((_, k)) => k.clone(),
                    None => (0..c.in_channels()).collect(),
                };
                layers.push(Layer::Conv1d(slice_conv(c, &keep_out, &keep_in)));
                summary.push(LayerPruning {
                    layer_index: li,
                    original: c.out_channels(),
                    kept: keep_out.clone(),
                });
                carried = Some((c.out_channels(), keep_out));
            }
            Layer::Dense(d) => match carried.take() {
                Some((channels, keep)) => {
                    layers.push(Layer::Dense(slice_dense_inputs(d, channels, &keep)))
                }
                None => layers.push(layer.clone()),
            },
            Layer::Activation(_) => layers.push(layer.clone()),
        }
    }
    let network = Network::new(model.input_dim(), layers)?;
    let pruned = SemiSupervisedModel::from_parts(
        network,
        model.encoder_layers(),
        model.encoder_frozen(),
        model.class_names().to_vec(),
    )?;
    Ok((pruned, summary))
}

/// [`prune`], then fine-tune for `config.fine_tune_epochs` on `labeled`.
pub fn prune_and_tune(
    model: &SemiSupervisedModel,
    scores: &KernelImportance,
    config: &PruningConfig,
    labeled: &Fam,
    tune: &FineTuneConfig,
) -> Result<(SemiSupervisedModel, Vec<LayerPruning>)> {
    let (mut pruned, summary) = prune(model, scores, config)?;
    if config.fine_tune_epochs > 0 {
        fine_tune(
            &mut pruned,
            labeled,
            &FineTuneConfig {
                epochs: config.fine_tune_epochs,
                ..*tune
            },
        )?;
    }
    Ok((pruned, summary))
}
