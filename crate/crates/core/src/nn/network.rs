use super::layer::{Layer, LayerSpec};
use super::loss::{sample_loss, LossKind};
use super::params::{ParamRole, ParameterSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A feed-forward stack operating on flattened vectors. Convolution layers
/// view their input as `[in_channels, len]`, so a dense layer after a
/// convolution sees the flattened `[channels × len]` map.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_width: usize,
    layers: Vec<Layer>,
}

/// Per-layer inputs recorded by a forward pass, plus the final output.
#[derive(Debug, Clone)]
pub struct Trace {
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Gradient accumulator mirroring a network's parameterized layers.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub(crate) grads: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl LayerGrads {
    pub fn scale(&mut self, s: f64) {
        for (w, b) in self.grads.iter_mut().flatten() {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= s);
        }
    }
}

impl Network {
    pub fn from_specs(input_width: usize, specs: &[LayerSpec], rng: &mut Rng) -> Result<Self> {
        let layers = specs.iter().map(|s| Layer::init(s, rng)).collect();
        Self::new(input_width, layers)
    }

    pub fn new(input_width: usize, layers: Vec<Layer>) -> Result<Self> {
        let mut w = input_width;
        for l in &layers {
            w = l.spec().output_width(w)?;
        }
        Ok(Self {
            input_width,
            layers,
        })
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers
            .iter()
            .try_fold(self.input_width, |w, l| l.spec().output_width(w))
            .expect("validated at construction")
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.spec().param_count()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_width {
            return Err(Error::Dimension {
                expected: vec![self.input_width],
                found: vec![x.len()],
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.forward(&h);
        }
        h
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        Ok(self.forward_trace_unchecked(x))
    }

    pub(crate) fn forward_trace_unchecked(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let next = l.forward(&h);
            inputs.push(h);
            h = next;
        }
        Trace { inputs, output: h }
    }

    pub fn zero_grads(&self) -> LayerGrads {
        LayerGrads {
            grads: self
                .layers
                .iter()
                .map(|l| {
                    l.params()
                        .map(|(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()]))
                })
                .collect(),
        }
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut LayerGrads) -> Vec<f64> {
        self.backward_range(trace, 0, self.layers.len(), grad_out, grads)
    }

    /// Backward through layers `start..end` only. `grad_out` is the gradient
    /// with respect to the output of layer `end - 1`; the result is the
    /// gradient with respect to the input of layer `start`.
    pub fn backward_range(
        &self,
        trace: &Trace,
        start: usize,
        end: usize,
        grad_out: &[f64],
        grads: &mut LayerGrads,
    ) -> Vec<f64> {
        let mut g = grad_out.to_vec();
        for i in (start..end).rev() {
            let input = &trace.inputs[i];
            g = match &self.layers[i] {
                Layer::Dense(d) => {
                    let (gw, gb) = grads.grads[i].as_mut().unwrap();
                    d.backward(input, &g, gw, gb)
                }
                Layer::Conv1d(c) => {
                    let (gw, gb) = grads.grads[i].as_mut().unwrap();
                    c.backward(input, &g, gw, gb)
                }
                Layer::Activation(a) => {
                    let output = trace.inputs.get(i + 1).unwrap_or(&trace.output);
                    a.backward(input, output, &g)
                }
            };
        }
        g
    }

    /// Parameters with layer indices offset by `base`.
    pub fn append_params(&self, base: u32, out: &mut ParameterSet) {
        for (i, l) in self.layers.iter().enumerate() {
            if let Some((w, b)) = l.params() {
                out.push(base + i as u32, ParamRole::Weight, w.clone())
                    .expect("canonical order");
                out.push(base + i as u32, ParamRole::Bias, b.clone())
                    .expect("canonical order");
            }
        }
    }

    pub fn append_grads(&self, base: u32, grads: &LayerGrads, out: &mut ParameterSet) {
        for (i, (l, g)) in self.layers.iter().zip(&grads.grads).enumerate() {
            if let (Some((w, b)), Some((gw, gb))) = (l.params(), g) {
                let gw = Tensor::new(w.shape().to_vec(), gw.clone()).unwrap();
                let gb = Tensor::new(b.shape().to_vec(), gb.clone()).unwrap();
                out.push(base + i as u32, ParamRole::Weight, gw)
                    .expect("canonical order");
                out.push(base + i as u32, ParamRole::Bias, gb)
                    .expect("canonical order");
            }
        }
    }

    /// Install parameters whose layer indices lie in `base..base + len`.
    pub fn load_params(&mut self, base: u32, params: &ParameterSet) -> Result<()> {
        let n = self.layers.len();
        self.load_layer_params(base, n, params)
    }

    /// Install parameters for the first `count` layers only.
    pub fn load_layer_params(
        &mut self,
        base: u32,
        count: usize,
        params: &ParameterSet,
    ) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate().take(count) {
            if let Some((w, b)) = l.params_mut() {
                let idx = base + i as u32;
                for (role, dst) in [(ParamRole::Weight, w), (ParamRole::Bias, b)] {
                    let src = params.get(idx, role).ok_or_else(|| {
                        Error::Structural(format!("missing parameter ({idx}, {role:?})"))
                    })?;
                    if src.shape() != dst.shape() {
                        return Err(Error::Structural(format!(
                            "parameter ({idx}, {role:?}) has shape {:?}, expected {:?}",
                            src.shape(),
                            dst.shape()
                        )));
                    }
                    dst.data_mut().copy_from_slice(src.data());
                }
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> ParameterSet {
        let mut p = ParameterSet::new();
        self.append_params(0, &mut p);
        p
    }

    pub fn set_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        self.parameters().check_compatible(params)?;
        self.load_params(0, params)
    }
}

/// Mean batch loss of `model` on `inputs` (`[batch, in]`) against `targets`
/// (`[batch, out]`), and its gradient with respect to every parameter.
pub fn backprop(
    model: &Network,
    inputs: &Tensor,
    targets: &Tensor,
    loss: LossKind,
) -> Result<(f64, ParameterSet)> {
    let batch = inputs.shape().first().copied().unwrap_or(0);
    if batch == 0 {
        return Err(Error::Empty("backprop batch"));
    }
    let out_w = model.output_width();
    if targets.len() != batch * out_w {
        return Err(Error::Dimension {
            expected: vec![batch, out_w],
            found: targets.shape().to_vec(),
        });
    }
    let mut grads = model.zero_grads();
    let mut total = 0.0;
    for (x, t) in inputs.rows().zip(targets.data().chunks(out_w)) {
        let trace = model.forward_trace(x)?;
        let (l, g) = sample_loss(loss, &trace.output, t)?;
        total += l;
        model.backward(&trace, &g, &mut grads);
    }
    let mean = total / batch as f64;
    if !mean.is_finite() {
        return Err(Error::Divergence { epoch: 0, batch: 0 });
    }
    grads.scale(1.0 / batch as f64);
    let mut out = ParameterSet::new();
    model.append_grads(0, &grads, &mut out);
    Ok((mean, out))
}
