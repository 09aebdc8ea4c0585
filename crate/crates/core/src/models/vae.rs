//! Variational autoencoder over flow feature rows.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Fam;
use crate::error::{Error, Result};
use crate::nn::{
    sample_loss, Activation, LayerGrads, LayerSpec, LossKind, Network, Optimizer, OptimizerConfig,
    OptimizerKind, ParameterSet, Tensor,
};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub z_dim: usize,
    pub batch_size: usize,
    pub num_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Velocity decay for `sgd_momentum`.
    pub momentum: f64,
    pub reconstruction: LossKind,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            input_dim: 78,
            hidden_dims: vec![78, 64, 32],
            z_dim: 16,
            batch_size: 128,
            num_epochs: 10,
            learning_rate: 0.01,
            optimizer: OptimizerKind::Adam,
            momentum: 0.0,
            reconstruction: LossKind::Mse,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.z_dim == 0
            || self.hidden_dims.is_empty()
            || self.hidden_dims.contains(&0)
        {
            return Err(Error::Config(
                "VAE dimensions must be positive and hidden_dims non-empty".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.reconstruction == LossKind::CrossEntropy {
            return Err(Error::Config(
                "reconstruction loss must be mse or bce".into(),
            ));
        }
        self.optimizer().validate()
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            kind: self.optimizer,
            momentum: self.momentum,
            ..OptimizerConfig::default()
        }
    }

    /// Dense + ReLU stack from the input through every hidden width.
    pub fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut w = self.input_dim;
        for &h in &self.hidden_dims {
            specs.push(LayerSpec::dense(w, h));
            specs.push(LayerSpec::act(Activation::Relu));
            w = h;
        }
        specs
    }

    /// Mirror of the encoder: z back through the hidden widths in reverse
    /// with ReLU, then a Sigmoid output layer of width `input_dim`.
    pub fn decoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        let mut w = self.z_dim;
        for &h in self.hidden_dims.iter().rev() {
            specs.push(LayerSpec::dense(w, h));
            specs.push(LayerSpec::act(Activation::Relu));
            w = h;
        }
        specs.push(LayerSpec::dense(w, self.input_dim));
        specs.push(LayerSpec::act(Activation::Sigmoid));
        specs
    }

    /// Number of layers in the encoder trunk plus the μ head; these carry
    /// layer indices `0..encoder_layer_count()` in every model built from
    /// this configuration.
    pub fn encoder_layer_count(&self) -> usize {
        2 * self.hidden_dims.len() + 1
    }
}

/// Encoder trunk with μ and log σ² heads, and a decoder.
///
/// Parameter layer indices follow the flattened order trunk, μ head,
/// log σ² head, decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    config: VaeConfig,
    trunk: Network,
    mu_head: Network,
    logvar_head: Network,
    decoder: Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VaeLoss {
    pub reconstruction: f64,
    pub kl: f64,
    pub total: f64,
}

/// Loss curves from [`train_vae`]: one entry per epoch and per optimizer step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VaeHistory {
    pub epochs: Vec<VaeLoss>,
    pub steps: Vec<VaeLoss>,
}

impl VaeModel {
    /// Fresh model initialized from `config.seed`.
    pub fn new(config: &VaeConfig) -> Result<Self> {
        config.validate()?;
        let mut r = rng::stream(config.seed, "vae-init", 0);
        let last = *config.hidden_dims.last().unwrap();
        Ok(Self {
            config: config.clone(),
            trunk: Network::from_specs(config.input_dim, &config.encoder_specs(), &mut r)?,
            mu_head: Network::from_specs(last, &[LayerSpec::dense(last, config.z_dim)], &mut r)?,
            logvar_head: Network::from_specs(
                last,
                &[LayerSpec::dense(last, config.z_dim)],
                &mut r,
            )?,
            decoder: Network::from_specs(config.z_dim, &config.decoder_specs(), &mut r)?,
        })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn z_dim(&self) -> usize {
        self.config.z_dim
    }

    fn bases(&self) -> [u32; 4] {
        let t = self.trunk.layers().len() as u32;
        [0, t, t + 1, t + 2]
    }

    fn parts(&self) -> [&Network; 4] {
        [&self.trunk, &self.mu_head, &self.logvar_head, &self.decoder]
    }

    /// Flattened layer list: trunk, μ head, log σ² head, decoder.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.parts().iter().flat_map(|n| n.specs()).collect()
    }

    pub fn parameters(&self) -> ParameterSet {
        let mut p = ParameterSet::new();
        for (net, base) in self.parts().into_iter().zip(self.bases()) {
            net.append_params(base, &mut p);
        }
        p
    }

    pub fn set_parameters(&mut self, params: &ParameterSet) -> Result<()> {
        self.parameters().check_compatible(params)?;
        let bases = self.bases();
        self.trunk.load_params(bases[0], params)?;
        self.mu_head.load_params(bases[1], params)?;
        self.logvar_head.load_params(bases[2], params)?;
        self.decoder.load_params(bases[3], params)
    }

    /// Trunk and μ head parameters, the part reused by the classifier.
    pub fn encoder_parameters(&self) -> ParameterSet {
        let n = self.config.encoder_layer_count() as u32;
        self.parameters().filter(|i| i < n)
    }

    pub fn param_count(&self) -> usize {
        self.parts().iter().map(|n| n.param_count()).sum()
    }

    fn encode_row(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let h = self.trunk.forward_unchecked(x);
        (
            self.mu_head.forward_unchecked(&h),
            self.logvar_head.forward_unchecked(&h),
        )
    }

    /// Decoder output for a latent row.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(z)
    }
}

fn batch_rows(x: &Tensor, width: usize) -> Result<(usize, bool)> {
    match x.shape() {
        [w] if *w == width => Ok((1, false)),
        [b, w] if *w == width => Ok((*b, true)),
        s => Err(Error::Dimension {
            expected: vec![width],
            found: s.to_vec(),
        }),
    }
}

/// Posterior parameters for one row (`[input_dim]`) or a batch
/// (`[B, input_dim]`); outputs have the same rank with width `z_dim`.
pub fn vae_encode(model: &VaeModel, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, batched) = batch_rows(x, model.input_dim())?;
    let mut mu = Vec::with_capacity(b * model.z_dim());
    let mut lv = Vec::with_capacity(b * model.z_dim());
    for row in x.data().chunks(model.input_dim()) {
        let (m, l) = model.encode_row(row);
        mu.extend(m);
        lv.extend(l);
    }
    let shape = if batched {
        vec![b, model.z_dim()]
    } else {
        vec![model.z_dim()]
    };
    Ok((Tensor::new(shape.clone(), mu)?, Tensor::new(shape, lv)?))
}

/// `z = mu + exp(logvar / 2) ⊙ epsilon`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, epsilon: &Tensor) -> Result<Tensor> {
    for t in [logvar, epsilon] {
        if t.shape() != mu.shape() {
            return Err(Error::Dimension {
                expected: mu.shape().to_vec(),
                found: t.shape().to_vec(),
            });
        }
    }
    let z = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(epsilon.data())
        .map(|((&m, &l), &e)| m + (0.5 * l).exp() * e)
        .collect();
    Tensor::new(mu.shape().to_vec(), z)
}

/// Standard-normal noise of the given shape.
pub fn sample_epsilon(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` for one row, summed over dimensions.
pub fn kl_divergence(mu: &[f64], logvar: &[f64]) -> f64 {
    // expm1(l) - l is the non-negative part exp(l) - 1 - l without cancellation.
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &l)| m * m + (l.exp_m1() - l).max(0.0))
        .sum::<f64>()
}

/// Reconstruction and KL terms, each summed over features and averaged over
/// the batch. Accepts single rows or `[B, width]` batches.
pub fn vae_loss(
    x: &Tensor,
    x_reconstructed: &Tensor,
    mu: &Tensor,
    logvar: &Tensor,
    kind: LossKind,
) -> Result<VaeLoss> {
    if x.shape() != x_reconstructed.shape() {
        return Err(Error::Dimension {
            expected: x.shape().to_vec(),
            found: x_reconstructed.shape().to_vec(),
        });
    }
    if mu.shape() != logvar.shape() {
        return Err(Error::Dimension {
            expected: mu.shape().to_vec(),
            found: logvar.shape().to_vec(),
        });
    }
    let rows = |t: &Tensor| if t.rank() >= 2 { t.shape()[0] } else { 1 };
    let (b, bz) = (rows(x), rows(mu));
    if b != bz || b == 0 {
        return Err(Error::Dimension {
            expected: vec![b],
            found: vec![bz],
        });
    }
    let (wx, wz) = (x.len() / b, mu.len() / b);
    let mut recon = 0.0;
    let mut kl = 0.0;
    for i in 0..b {
        let r = i * wx..(i + 1) * wx;
        recon += sample_loss(kind, &x_reconstructed.data()[r.clone()], &x.data()[r])?.0;
        let r = i * wz..(i + 1) * wz;
        kl += kl_divergence(&mu.data()[r.clone()], &logvar.data()[r]);
    }
    let loss = VaeLoss {
        reconstruction: recon / b as f64,
        kl: kl / b as f64,
        total: (recon + kl) / b as f64,
    };
    if !loss.total.is_finite() {
        return Err(Error::Divergence { epoch: 0, batch: 0 });
    }
    Ok(loss)
}

/// Loss of one row and the accumulated gradients, with `eps` held fixed.
fn row_step(
    model: &VaeModel,
    x: &[f64],
    eps: &[f64],
    kind: LossKind,
    grads: &mut [LayerGrads; 4],
) -> Result<VaeLoss> {
    let t_trunk = model.trunk.forward_trace_unchecked(x);
    let t_mu = model.mu_head.forward_trace_unchecked(&t_trunk.output);
    let t_lv = model.logvar_head.forward_trace_unchecked(&t_trunk.output);
    let (mu, lv) = (&t_mu.output, &t_lv.output);
    let sigma: Vec<f64> = lv.iter().map(|&l| (0.5 * l).exp()).collect();
    let z: Vec<f64> = mu
        .iter()
        .zip(&sigma)
        .zip(eps)
        .map(|((&m, &s), &e)| m + s * e)
        .collect();
    let t_dec = model.decoder.forward_trace_unchecked(&z);
    let (recon, g_rec) = sample_loss(kind, &t_dec.output, x)?;
    let kl = kl_divergence(mu, lv);

    let [g_trunk, g_mu, g_lv, g_dec] = grads;
    let dz = model.decoder.backward(&t_dec, &g_rec, g_dec);
    let dmu: Vec<f64> = dz.iter().zip(mu).map(|(&d, &m)| d + m).collect();
    let dlv: Vec<f64> = dz
        .iter()
        .zip(eps)
        .zip(&sigma)
        .zip(lv)
        .map(|(((&d, &e), &s), &l)| 0.5 * d * e * s + 0.5 * l.exp_m1())
        .collect();
    let mut dh = model.mu_head.backward(&t_mu, &dmu, g_mu);
    for (a, b) in dh
        .iter_mut()
        .zip(model.logvar_head.backward(&t_lv, &dlv, g_lv))
    {
        *a += b;
    }
    model.trunk.backward(&t_trunk, &dh, g_trunk);
    Ok(VaeLoss {
        reconstruction: recon,
        kl,
        total: recon + kl,
    })
}

/// Mean loss of a batch and its gradient for every parameter, using the
/// supplied noise (`eps` is `[B, z_dim]`).
pub fn vae_gradients(
    model: &VaeModel,
    x: &Tensor,
    eps: &Tensor,
) -> Result<(VaeLoss, ParameterSet)> {
    let (b, _) = batch_rows(x, model.input_dim())?;
    if eps.len() != b * model.z_dim() {
        return Err(Error::Dimension {
            expected: vec![b, model.z_dim()],
            found: eps.shape().to_vec(),
        });
    }
    let mut grads = model.parts().map(Network::zero_grads);
    let mut sum = VaeLoss::default();
    for (row, e) in x
        .data()
        .chunks(model.input_dim())
        .zip(eps.data().chunks(model.z_dim()))
    {
        let l = row_step(model, row, e, model.config.reconstruction, &mut grads)?;
        sum.reconstruction += l.reconstruction;
        sum.kl += l.kl;
        sum.total += l.total;
    }
    let inv = 1.0 / b as f64;
    let mean = VaeLoss {
        reconstruction: sum.reconstruction * inv,
        kl: sum.kl * inv,
        total: sum.total * inv,
    };
    let mut out = ParameterSet::new();
    for ((net, g), base) in model
        .parts()
        .into_iter()
        .zip(grads.iter_mut())
        .zip(model.bases())
    {
        g.scale(inv);
        net.append_grads(base, g, &mut out);
    }
    Ok((mean, out))
}

/// `[indices.len(), width]` tensor of the selected rows.
pub(crate) fn gather_rows(data: &Fam, indices: &[usize]) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(indices.len() * data.width());
    for &i in indices {
        flat.extend_from_slice(&data.rows()[i]);
    }
    Tensor::new(vec![indices.len(), data.width()], flat)
}

/// Mean loss over `data` with the noise switched off (z = μ), so the value is
/// a deterministic function of the parameters.
pub fn vae_eval_loss(model: &VaeModel, data: &Fam) -> Result<VaeLoss> {
    if data.width() != model.input_dim() {
        return Err(Error::Dimension {
            expected: vec![model.input_dim()],
            found: vec![data.width()],
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("VAE evaluation data"));
    }
    let mut sum = VaeLoss::default();
    for row in data.rows() {
        let (mu, lv) = model.encode_row(row);
        let xr = model.decoder.forward_unchecked(&mu);
        let recon = sample_loss(model.config.reconstruction, &xr, row)?.0;
        let kl = kl_divergence(&mu, &lv);
        sum.reconstruction += recon;
        sum.kl += kl;
        sum.total += recon + kl;
    }
    let n = data.len() as f64;
    Ok(VaeLoss {
        reconstruction: sum.reconstruction / n,
        kl: sum.kl / n,
        total: sum.total / n,
    })
}

/// Train a freshly initialized model for `config.num_epochs` epochs.
pub fn train_vae(data: &Fam, config: &VaeConfig) -> Result<(VaeModel, VaeHistory)> {
    let mut model = VaeModel::new(config)?;
    let mut optimizer = Optimizer::new(config.optimizer())?;
    let history = train_vae_from(&mut model, &mut optimizer, data, config, 0)?;
    Ok((model, history))
}

/// Continue training `model` for `config.num_epochs` epochs, numbering them
/// from `epoch_offset`. Shuffling and noise depend only on the seed and the
/// global epoch number, so training E epochs at offset 0 and then E more at
/// offset E is identical to 2E epochs in one call, provided the same
/// optimizer (and so the same Adam moments) is passed to both calls.
pub fn train_vae_from(
    model: &mut VaeModel,
    opt: &mut Optimizer,
    data: &Fam,
    config: &VaeConfig,
    epoch_offset: usize,
) -> Result<VaeHistory> {
    config.validate()?;
    if data.width() != model.input_dim() {
        return Err(Error::Dimension {
            expected: vec![model.input_dim()],
            found: vec![data.width()],
        });
    }
    if data.is_empty() {
        return Err(Error::Empty("VAE training data"));
    }
    let mut history = VaeHistory::default();
    let z_dim = model.z_dim();
    for e in 0..config.num_epochs {
        let epoch = epoch_offset + e;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, "vae-epoch", epoch as u64));
        let mut noise = rng::stream(config.seed, "vae-noise", epoch as u64);
        let mut sum = VaeLoss::default();
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = gather_rows(data, chunk)?;
            let eps = sample_epsilon(&[chunk.len(), z_dim], &mut noise);
            let diverged = Error::Divergence { epoch, batch: bi };
            let (loss, grads) = vae_gradients(model, &x, &eps).map_err(|err| match err {
                Error::Divergence { .. } => diverged,
                other => other,
            })?;
            if !loss.total.is_finite() || grads.values().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, batch: bi });
            }
            let next = opt.step(&model.parameters(), &grads)?;
            model.set_parameters(&next)?;
            let n = chunk.len() as f64;
            sum.reconstruction += loss.reconstruction * n;
            sum.kl += loss.kl * n;
            sum.total += loss.total * n;
            history.steps.push(loss);
        }
        let n = data.len() as f64;
        history.epochs.push(VaeLoss {
            reconstruction: sum.reconstruction / n,
            kl: sum.kl / n,
            total: sum.total / n,
        });
    }
    Ok(history)
}
