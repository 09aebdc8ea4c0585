use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
    Bce,
}

/// Loss of one sample and its gradient with respect to `pred`.
///
/// Each loss is summed over the feature axis; batch reductions take the
/// mean of these per-sample values. Cross-entropy expects probabilities and
/// a one-hot (or soft) target.
pub fn sample_loss(kind: LossKind, pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            expected: vec![target.len()],
            found: vec![pred.len()],
        });
    }
    match kind {
        LossKind::Mse => {
            let mut loss = 0.0;
            let grad = pred
                .iter()
                .zip(target)
                .map(|(&p, &t)| {
                    let d = p - t;
                    loss += d * d;
                    2.0 * d
                })
                .collect();
            Ok((loss, grad))
        }
        LossKind::Bce => {
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(pred.len());
            for (&p, &t) in pred.iter().zip(target) {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::NumericDomain(format!(
                        "bce prediction {p} outside [0, 1]"
                    )));
                }
                let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                loss -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
                let inside = q == p;
                grad.push(if inside {
                    (q - t) / (q * (1.0 - q))
                } else {
                    0.0
                });
            }
            Ok((loss, grad))
        }
        LossKind::CrossEntropy => {
            let mut loss = 0.0;
            let mut grad = Vec::with_capacity(pred.len());
            for (&p, &t) in pred.iter().zip(target) {
                if t == 0.0 {
                    grad.push(0.0);
                    continue;
                }
                let q = p.max(f64::MIN_POSITIVE);
                loss -= t * q.ln();
                grad.push(-t / q);
            }
            Ok((loss, grad))
        }
    }
}

/// Cross-entropy on raw logits through log-sum-exp; gradient is
/// `softmax(logits) - onehot(class)`.
pub fn softmax_cross_entropy(logits: &[f64], class: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    let loss = lse - logits[class];
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - lse).exp() - if i == class { 1.0 } else { 0.0 })
        .collect();
    (loss, grad)
}

fn as_rows(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [] => (1, 1),
        [n] => (*n, 1),
        [b, rest @ ..] => (*b, rest.iter().product()),
    }
}

/// Mean over the batch (first) axis of the per-sample loss. A rank-1 tensor is
/// a batch of scalars. For cross-entropy the target may also be a vector of
/// class indices, one per row.
pub fn loss_eval(kind: LossKind, prediction: &Tensor, target: &Tensor) -> Result<f64> {
    let (batch, width) = as_rows(prediction);
    if batch == 0 {
        return Err(Error::Empty("loss batch"));
    }
    let onehot;
    let target = if kind == LossKind::CrossEntropy && target.len() == batch && width > 1 {
        let mut data = vec![0.0; batch * width];
        for (i, &c) in target.data().iter().enumerate() {
            if c < 0.0 || c.fract() != 0.0 || c as usize >= width {
                return Err(Error::Data(format!("class index {c} outside [0, {width})")));
            }
            data[i * width + c as usize] = 1.0;
        }
        onehot = Tensor::new(prediction.shape().to_vec(), data)?;
        &onehot
    } else {
        if target.shape() != prediction.shape() {
            return Err(Error::Dimension {
                expected: prediction.shape().to_vec(),
                found: target.shape().to_vec(),
            });
        }
        target
    };
    let mut total = 0.0;
    for (p, t) in prediction
        .data()
        .chunks(width)
        .zip(target.data().chunks(width))
    {
        total += sample_loss(kind, p, t)?.0;
    }
    Ok(total / batch as f64)
}
