use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Fam;
use crate::error::{Error, Result};
use crate::models::{argmax, SemiSupervisedModel};
use crate::nn::Network;
use crate::rng;

/// Largest feature count accepted by exact enumeration (2^p model calls).
pub const MAX_EXACT_FEATURES: usize = 20;

/// Anything mapping a feature row to an output vector.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;
    fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl Predictor for SemiSupervisedModel {
    fn input_dim(&self) -> usize {
        SemiSupervisedModel::input_dim(self)
    }

    fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        SemiSupervisedModel::predict_row(self, x)
    }
}

impl Predictor for Network {
    fn input_dim(&self) -> usize {
        self.input_width()
    }

    fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

/// Wraps a plain function so it can be explained, e.g. a hand-written model.
pub struct FnPredictor<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Sync> Predictor for FnPredictor<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn predict_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: vec![self.dim],
                found: vec![x.len()],
            });
        }
        Ok((self.f)(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    Exact,
    Sampled,
}

/// Which output is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// The output that is largest on the explained row.
    PredictedClass,
    Class(usize),
}

/// Reference distribution summarized by its per-column mean; features absent
/// from a coalition take these values.
#[derive(Debug, Clone, PartialEq)]
pub struct Background {
    mean: Vec<f64>,
}

impl Background {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("SHAP background"))?;
        let mut mean = vec![0.0; first.len()];
        for r in rows {
            if r.len() != mean.len() {
                return Err(Error::Dimension {
                    expected: vec![mean.len()],
                    found: vec![r.len()],
                });
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = rows.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(Self { mean })
    }

    pub fn from_fam(fam: &Fam) -> Result<Self> {
        Self::from_rows(fam.rows())
    }

    /// Up to `n` rows of `fam` drawn without replacement under `seed`.
    pub fn sample(fam: &Fam, n: usize, seed: u64) -> Result<Self> {
        let rows: Vec<Vec<f64>> = fam
            .rows()
            .choose_multiple(&mut rng::stream(seed, "shap-background", 0), n)
            .cloned()
            .collect();
        Self::from_rows(&rows)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapConfig {
    pub background: Background,
    pub mode: ShapMode,
    pub num_permutations: usize,
    pub target: Target,
    pub seed: u64,
}

impl ShapConfig {
    pub fn new(background: Background) -> Self {
        Self {
            background,
            mode: ShapMode::Sampled,
            num_permutations: 2000,
            target: Target::PredictedClass,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalExplanation {
    pub sample_index: usize,
    /// Output index that was explained.
    pub target_index: usize,
    pub phi: Vec<f64>,
    /// v(∅): the target output on the background-mean row.
    pub base_value: f64,
    /// v(F): the target output on the row itself.
    pub prediction: f64,
}

impl LocalExplanation {
    /// `prediction − (base_value + Σφ)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.prediction - (self.base_value + self.phi.iter().sum::<f64>())
    }

    /// One structured-text record.
    pub fn to_record(&self) -> String {
        let phi: Vec<String> = self.phi.iter().map(f64::to_string).collect();
        format!(
            "sample={} target={} base={} prediction={} phi={}",
            self.sample_index,
            self.target_index,
            self.base_value,
            self.prediction,
            phi.join(",")
        )
    }
}

fn check(model: &impl Predictor, x: &[f64], config: &ShapConfig) -> Result<()> {
    let p = model.input_dim();
    if x.len() != p {
        return Err(Error::Dimension {
            expected: vec![p],
            found: vec![x.len()],
        });
    }
    if config.background.mean.len() != p {
        return Err(Error::Dimension {
            expected: vec![p],
            found: vec![config.background.mean.len()],
        });
    }
    Ok(())
}

/// Resolve the target to an output index using the prediction on `x`.
pub fn target_index(model: &impl Predictor, x: &[f64], target: Target) -> Result<usize> {
    let out = model.predict_row(x)?;
    let k = match target {
        Target::PredictedClass => argmax(&out),
        Target::Class(k) => k,
    };
    if k >= out.len() {
        return Err(Error::Config(format!(
            "target class {k} but the model has {} outputs",
            out.len()
        )));
    }
    Ok(k)
}

/// `v_x(S)`: output `k` on `x` with every feature outside `subset` replaced by
/// its background mean.
pub fn value_function(
    model: &impl Predictor,
    x: &[f64],
    subset: &[usize],
    background: &Background,
    k: usize,
) -> Result<f64> {
    if x.len() != background.mean.len() {
        return Err(Error::Dimension {
            expected: vec![background.mean.len()],
            found: vec![x.len()],
        });
    }
    let mut row = background.mean.clone();
    for &j in subset {
        let v = *x
            .get(j)
            .ok_or_else(|| Error::Config(format!("feature {j} out of range")))?;
        row[j] = v;
    }
    model
        .predict_row(&row)?
        .get(k)
        .copied()
        .ok_or_else(|| Error::Config(format!("output {k} out of range")))
}

fn masked_value(
    model: &impl Predictor,
    x: &[f64],
    mean: &[f64],
    mask: u32,
    k: usize,
) -> Result<f64> {
    let row: Vec<f64> = (0..x.len())
        .map(|j| if mask >> j & 1 == 1 { x[j] } else { mean[j] })
        .collect();
    Ok(model.predict_row(&row)?[k])
}

/// Shapley weight `|S|!(p−|S|−1)!/p!` for every coalition size.
fn shapley_weights(p: usize) -> Vec<f64> {
    // 1 / (p · C(p−1, s)), with the binomial built incrementally.
    let mut out = Vec::with_capacity(p);
    let mut binom = 1.0_f64;
    for s in 0..p {
        out.push(1.0 / (p as f64 * binom));
        binom = binom * (p - 1 - s) as f64 / (s + 1) as f64;
    }
    out
}

/// Exact Shapley values by evaluating all 2^p coalitions once and combining
/// them in ascending mask order.
pub fn shap_exact(
    model: &impl Predictor,
    x: &[f64],
    config: &ShapConfig,
) -> Result<LocalExplanation> {
    check(model, x, config)?;
    let p = x.len();
    if p > MAX_EXACT_FEATURES {
        return Err(Error::Mode(format!(
            "exact SHAP over {p} features needs 2^{p} evaluations; the limit is {MAX_EXACT_FEATURES}, use sampled mode"
        )));
    }
    let k = target_index(model, x, config.target)?;
    let mean = &config.background.mean;
    let values: Vec<f64> = (0..1u32 << p)
        .into_par_iter()
        .map(|mask| masked_value(model, x, mean, mask, k))
        .collect::<Result<_>>()?;
    let weights = shapley_weights(p);
    let mut phi = vec![0.0; p];
    for (j, phi_j) in phi.iter_mut().enumerate() {
        let bit = 1u32 << j;
        for mask in (0..1u32 << p).filter(|m| m & bit == 0) {
            let s = mask.count_ones() as usize;
            *phi_j += weights[s] * (values[(mask | bit) as usize] - values[mask as usize]);
        }
    }
    Ok(LocalExplanation {
        sample_index: 0,
        target_index: k,
        phi,
        base_value: values[0],
        prediction: values[(1usize << p) - 1],
    })
}

/// `p!` if it fits comfortably, used to switch to full enumeration.
fn factorial(p: usize) -> Option<usize> {
    (1..=p)
        .try_fold(1usize, |acc, i| acc.checked_mul(i))
        .filter(|&f| f <= 1 << 24)
}

fn all_permutations(p: usize) -> Vec<Vec<usize>> {
    // Heap's algorithm, iterative.
    let mut a: Vec<usize> = (0..p).collect();
    let mut c = vec![0; p];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < p {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// The orderings used by [`shap_sampled`]: `n` distinct uniformly random
/// permutations, or all of them once `n ≥ p!`. `stream` separates the draws
/// for different explained rows.
pub fn sample_permutations(p: usize, n: usize, seed: u64, stream: u64) -> Vec<Vec<usize>> {
    if let Some(total) = factorial(p) {
        if n >= total {
            return all_permutations(p);
        }
    }
    let mut rng = rng::stream(seed, "shap-perm", stream);
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut perm: Vec<usize> = (0..p).collect();
        perm.shuffle(&mut rng);
        if seen.insert(perm.clone()) {
            out.push(perm);
        }
    }
    out
}

/// Permutation-sampling estimate: the mean marginal contribution of each
/// feature over distinct random orderings. Drawing orderings without
/// replacement keeps the estimate unbiased and lowers its variance by the
/// finite-population factor, which matters when p! is small. Each ordering
/// telescopes from v(∅) to v(F), so the efficiency identity holds here too.
pub fn shap_sampled(
    model: &impl Predictor,
    x: &[f64],
    config: &ShapConfig,
) -> Result<LocalExplanation> {
    sampled_for_row(model, x, 0, config)
}

fn sampled_for_row(
    model: &impl Predictor,
    x: &[f64],
    sample_index: usize,
    config: &ShapConfig,
) -> Result<LocalExplanation> {
    check(model, x, config)?;
    if config.num_permutations == 0 {
        return Err(Error::Config("num_permutations must be at least 1".into()));
    }
    let p = x.len();
    let k = target_index(model, x, config.target)?;
    let mean = &config.background.mean;
    let base_value = model.predict_row(mean)?[k];
    let prediction = model.predict_row(x)?[k];
    let perms = sample_permutations(p, config.num_permutations, config.seed, sample_index as u64);
    let contributions: Vec<Vec<f64>> = perms
        .par_iter()
        .map(|perm| {
            let mut row = mean.clone();
            let mut prev = base_value;
            let mut c = vec![0.0; p];
            for &j in perm {
                row[j] = x[j];
                let v = model.predict_row(&row)?[k];
                c[j] = v - prev;
                prev = v;
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut phi = vec![0.0; p];
    for c in &contributions {
        for (a, b) in phi.iter_mut().zip(c) {
            *a += b;
        }
    }
    let n = contributions.len() as f64;
    phi.iter_mut().for_each(|v| *v /= n);
    Ok(LocalExplanation {
        sample_index,
        target_index: k,
        phi,
        base_value,
        prediction,
    })
}

/// Explain `x`, recorded as row `sample_index`, in the configured mode. In
/// sampled mode each row index draws its own orderings, so rows explained
/// under one seed do not share sampling error.
pub fn local_explain(
    model: &impl Predictor,
    x: &[f64],
    sample_index: usize,
    config: &ShapConfig,
) -> Result<LocalExplanation> {
    match config.mode {
        ShapMode::Exact => {
            let mut e = shap_exact(model, x, config)?;
            e.sample_index = sample_index;
            Ok(e)
        }
        ShapMode::Sampled => sampled_for_row(model, x, sample_index, config),
    }
}
