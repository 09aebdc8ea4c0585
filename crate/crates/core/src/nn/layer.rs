use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    None,
}

impl Activation {
    pub(crate) fn forward(self, x: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Sigmoid => x.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Softmax => softmax(x),
            Activation::None => x.to_vec(),
        }
    }

    /// Vector-Jacobian product given the layer input, its output and the
    /// upstream gradient.
    pub(crate) fn backward(self, input: &[f64], output: &[f64], grad_out: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => input
                .iter()
                .zip(grad_out)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Sigmoid => output
                .iter()
                .zip(grad_out)
                .map(|(&s, &g)| g * s * (1.0 - s))
                .collect(),
            Activation::Softmax => {
                let dot: f64 = output.iter().zip(grad_out).map(|(s, g)| s * g).sum();
                output
                    .iter()
                    .zip(grad_out)
                    .map(|(&s, &g)| s * (g - dot))
                    .collect()
            }
            Activation::None => grad_out.to_vec(),
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Elementwise relu/sigmoid; softmax normalizes each row of the last axis.
pub fn activation_apply(kind: Activation, x: &Tensor) -> Tensor {
    let data = match kind {
        Activation::Softmax => {
            let width = x.shape().last().copied().unwrap_or(1).max(1);
            x.data().chunks(width).flat_map(softmax).collect()
        }
        other => other.forward(x.data()),
    };
    Tensor::new(x.shape().to_vec(), data).expect("activation preserves shape")
}

/// Architecture of one layer, as written to model descriptors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_width: usize,
        stride: usize,
    },
    Activation {
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense { in_dim, out_dim }
    }

    pub fn conv1d(in_channels: usize, out_channels: usize, kernel_width: usize) -> Self {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_width,
            stride: 1,
        }
    }

    pub fn act(activation: Activation) -> Self {
        LayerSpec::Activation { activation }
    }

    /// Width of this layer's flattened output for a flattened input of `input_width`.
    pub fn output_width(&self, input_width: usize) -> Result<usize> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if input_width != in_dim {
                    return Err(Error::Dimension {
                        expected: vec![in_dim],
                        found: vec![input_width],
                    });
                }
                Ok(out_dim)
            }
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_width,
                stride,
            } => {
                if in_channels == 0 || input_width % in_channels != 0 {
                    return Err(Error::Dimension {
                        expected: vec![in_channels, 0],
                        found: vec![input_width],
                    });
                }
                let len = input_width / in_channels;
                Ok(out_channels * conv_output_len(len, kernel_width, stride)?)
            }
            LayerSpec::Activation { .. } => Ok(input_width),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => in_dim * out_dim + out_dim,
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_width,
                ..
            } => out_channels * in_channels * kernel_width + out_channels,
            LayerSpec::Activation { .. } => 0,
        }
    }
}

pub(crate) fn conv_output_len(len: usize, kernel_width: usize, stride: usize) -> Result<usize> {
    if kernel_width == 0 || stride == 0 {
        return Err(Error::Config(
            "conv1d kernel width and stride must be positive".into(),
        ));
    }
    if len < kernel_width {
        return Err(Error::InputTooShort { len, kernel_width });
    }
    Ok((len - kernel_width) / stride + 1)
}

fn glorot(rng: &mut Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out_dim, in_dim]`
    pub weight: Tensor,
    /// `[out_dim]`
    pub bias: Tensor,
}

impl Dense {
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let w = glorot(rng, in_dim, out_dim, in_dim * out_dim);
        Self {
            weight: Tensor::new(vec![out_dim, in_dim], w).unwrap(),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![out_dim, in_dim]),
            bias: Tensor::zeros(vec![out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = self.in_dim();
        self.weight
            .data()
            .chunks(n)
            .zip(self.bias.data())
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (w, v)| acc + w * v))
            .collect()
    }

    pub(crate) fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
    ) -> Vec<f64> {
        let n = self.in_dim();
        let mut grad_in = vec![0.0; n];
        for (o, &g) in grad_out.iter().enumerate() {
            gb[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight.data()[o * n..(o + 1) * n];
            let grow = &mut gw[o * n..(o + 1) * n];
            for i in 0..n {
                grow[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }
}

/// `y = W·x + b`
pub fn dense_forward(weights: &Tensor, bias: &Tensor, x: &Tensor) -> Result<Tensor> {
    let (out, inp) = match weights.shape() {
        [o, i] => (*o, *i),
        s => {
            return Err(Error::Dimension {
                expected: vec![0, 0],
                found: s.to_vec(),
            })
        }
    };
    if bias.shape() != [out] {
        return Err(Error::Dimension {
            expected: vec![out],
            found: bias.shape().to_vec(),
        });
    }
    if x.shape() != [inp] {
        return Err(Error::Dimension {
            expected: vec![inp],
            found: x.shape().to_vec(),
        });
    }
    let layer = Dense {
        weight: weights.clone(),
        bias: bias.clone(),
    };
    Ok(Tensor::from_vec(layer.forward(x.data())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out_channels, in_channels, kernel_width]`
    pub kernels: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv1d {
    pub fn init(
        in_channels: usize,
        out_channels: usize,
        kernel_width: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Self {
        let w = glorot(
            rng,
            in_channels * kernel_width,
            out_channels * kernel_width,
            out_channels * in_channels * kernel_width,
        );
        Self {
            kernels: Tensor::new(vec![out_channels, in_channels, kernel_width], w).unwrap(),
            bias: Tensor::zeros(vec![out_channels]),
            stride,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_width(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// `x` is `[in_channels, len]` flattened; output is `[out_channels, out_len]` flattened.
    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (oc, ic, k) = (self.out_channels(), self.in_channels(), self.kernel_width());
        let len = x.len() / ic;
        let out_len = (len - k) / self.stride + 1;
        let kd = self.kernels.data();
        let mut y = Vec::with_capacity(oc * out_len);
        for o in 0..oc {
            let b = self.bias.data()[o];
            for t in 0..out_len {
                let start = t * self.stride;
                let mut acc = b;
                for c in 0..ic {
                    let kern = &kd[(o * ic + c) * k..(o * ic + c + 1) * k];
                    let xs = &x[c * len + start..c * len + start + k];
                    for j in 0..k {
                        acc += kern[j] * xs[j];
                    }
                }
                y.push(acc);
            }
        }
        y
    }

    pub(crate) fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        gk: &mut [f64],
        gb: &mut [f64],
    ) -> Vec<f64> {
        let (oc, ic, k) = (self.out_channels(), self.in_channels(), self.kernel_width());
        let len = x.len() / ic;
        let out_len = (len - k) / self.stride + 1;
        let kd = self.kernels.data();
        let mut grad_in = vec![0.0; x.len()];
        for o in 0..oc {
            for t in 0..out_len {
                let g = grad_out[o * out_len + t];
                gb[o] += g;
                if g == 0.0 {
                    continue;
                }
                let start = t * self.stride;
                for c in 0..ic {
                    let base = (o * ic + c) * k;
                    for j in 0..k {
                        gk[base + j] += g * x[c * len + start + j];
                        grad_in[c * len + start + j] += g * kd[base + j];
                    }
                }
            }
        }
        grad_in
    }
}

/// Valid (unpadded) cross-correlation.
pub fn conv1d_forward(
    kernels: &Tensor,
    bias: &Tensor,
    x: &Tensor,
    stride: usize,
) -> Result<Tensor> {
    let (oc, ic, k) = match kernels.shape() {
        [o, i, k] => (*o, *i, *k),
        s => {
            return Err(Error::Dimension {
                expected: vec![0, 0, 0],
                found: s.to_vec(),
            })
        }
    };
    if bias.shape() != [oc] {
        return Err(Error::Dimension {
            expected: vec![oc],
            found: bias.shape().to_vec(),
        });
    }
    let len = match x.shape() {
        [c, len] if *c == ic => *len,
        [len] if ic == 1 => *len,
        s => {
            return Err(Error::Dimension {
                expected: vec![ic, 0],
                found: s.to_vec(),
            })
        }
    };
    let out_len = conv_output_len(len, k, stride)?;
    let layer = Conv1d {
        kernels: kernels.clone(),
        bias: bias.clone(),
        stride,
    };
    Tensor::new(vec![oc, out_len], layer.forward(x.data()))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Conv1d(Conv1d),
    Activation(Activation),
}

impl Layer {
    pub fn init(spec: &LayerSpec, rng: &mut Rng) -> Self {
        match *spec {
            LayerSpec::Dense { in_dim, out_dim } => Layer::Dense(Dense::init(in_dim, out_dim, rng)),
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_width,
                stride,
            } => Layer::Conv1d(Conv1d::init(
                in_channels,
                out_channels,
                kernel_width,
                stride,
                rng,
            )),
            LayerSpec::Activation { activation } => Layer::Activation(activation),
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::dense(d.in_dim(), d.out_dim()),
            Layer::Conv1d(c) => LayerSpec::Conv1d {
                in_channels: c.in_channels(),
                out_channels: c.out_channels(),
                kernel_width: c.kernel_width(),
                stride: c.stride,
            },
            Layer::Activation(a) => LayerSpec::act(*a),
        }
    }

    /// `(weight, bias)` for parameterized layers.
    pub fn params(&self) -> Option<(&Tensor, &Tensor)> {
        match self {
            Layer::Dense(d) => Some((&d.weight, &d.bias)),
            Layer::Conv1d(c) => Some((&c.kernels, &c.bias)),
            Layer::Activation(_) => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, &mut Tensor)> {
        match self {
            Layer::Dense(d) => Some((&mut d.weight, &mut d.bias)),
            Layer::Conv1d(c) => Some((&mut c.kernels, &mut c.bias)),
            Layer::Activation(_) => None,
        }
    }

    pub(crate) fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv1d(c) => c.forward(x),
            Layer::Activation(a) => a.forward(x),
        }
    }
}
