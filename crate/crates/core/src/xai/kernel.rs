use crate::data::Fam;
use crate::error::{Error, Result};
use crate::models::{evaluate, SemiSupervisedModel};
use crate::nn::Layer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelScore {
    /// Position of the convolution in the classifier's layer list.
    pub layer_index: usize,
    /// Output channel within that convolution.
    pub kernel: usize,
    /// Validation accuracy lost when this kernel's output is forced to zero.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelImportance {
    pub baseline_accuracy: f64,
    pub scores: Vec<KernelScore>,
}

impl KernelImportance {
    pub fn for_layer(&self, layer_index: usize) -> impl Iterator<Item = &KernelScore> {
        self.scores
            .iter()
            .filter(move |s| s.layer_index == layer_index)
    }
}

/// Zero the weights and bias of output channel `kernel` of convolution layer
/// `layer_index`, which forces that channel's output to zero.
pub fn ablate_kernel(
    model: &mut SemiSupervisedModel,
    layer_index: usize,
    kernel: usize,
) -> Result<()> {
    match model.network_mut().layers_mut().get_mut(layer_index) {
        Some(Layer::Conv1d(c)) if kernel < c.out_channels() => {
            let per = c.in_channels() * c.kernel_width();
            c.kernels.data_mut()[kernel * per..(kernel + 1) * per].fill(0.0);
            c.bias.data_mut()[kernel] = 0.0;
            Ok(())
        }
        _ => Err(Error::Config(format!(
            "no convolution kernel {kernel} at layer {layer_index}"
        ))),
    }
}

/// Score every convolution kernel by single-kernel ablation on `validation`.
/// Deterministic: no sampling is involved.
pub fn kernel_importance(
    model: &SemiSupervisedModel,
    validation: &Fam,
) -> Result<KernelImportance> {
    if validation.is_empty() {
        return Err(Error::Empty("kernel validation set"));
    }
    let baseline_accuracy = evaluate(model, validation)?.accuracy;
    let mut scores = Vec::new();
    for (layer_index, layer) in model.network().layers().iter().enumerate() {
        let Layer::Conv1d(c) = layer else { continue };
        for kernel in 0..c.out_channels() {
            let mut ablated = model.clone();
            ablate_kernel(&mut ablated, layer_index, kernel)?;
            let acc = evaluate(&ablated, validation)?.accuracy;
            scores.push(KernelScore {
                layer_index,
                kernel,
                score: baseline_accuracy - acc,
            });
        }
    }
    Ok(KernelImportance {
        baseline_accuracy,
        scores,
    })
}
