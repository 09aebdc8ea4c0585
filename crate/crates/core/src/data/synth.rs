//! Synthetic labeled flow matrices for tests, demos and benchmarks.
//!
//! Each class is a Gaussian blob in a low-dimensional latent space; samples
//! are pushed through a fixed random nonlinear map to `width` columns, so the
//! rows lie near a low-dimensional manifold that an autoencoder can learn
//! from unlabeled data alone.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::fam::{strip_labels, Fam};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const SYNTH_SCHEMA_ID: &str = "synthetic-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub width: usize,
    pub latent_dim: usize,
    /// Columns driven by the latent factors; the rest are pure noise.
    pub informative: usize,
    /// Standard deviation of class centers in latent space.
    pub class_separation: f64,
    pub within_class_std: f64,
    /// Standard deviation of per-cell observation noise.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 6,
            width: 78,
            latent_dim: 3,
            informative: 64,
            class_separation: 3.0,
            within_class_std: 0.5,
            noise: 0.02,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthGenerator {
    config: SynthConfig,
    centers: Vec<Vec<f64>>,
    mixing: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl SynthGenerator {
    pub fn new(config: SynthConfig, seed: u64) -> Result<Self> {
        let c = &config;
        if c.num_classes == 0 || c.width == 0 || c.latent_dim == 0 || c.informative > c.width {
            return Err(Error::Config(format!(
                "invalid synthetic data configuration {c:?}"
            )));
        }
        if !(c.class_separation >= 0.0 && c.within_class_std >= 0.0 && c.noise >= 0.0) {
            return Err(Error::Config(
                "synthetic spreads must be non-negative".into(),
            ));
        }
        let mut r = rng::stream(seed, "synth-structure", 0);
        let normal = |r: &mut Rng, sd: f64| -> f64 { sd * r.sample::<f64, _>(StandardNormal) };
        let centers = (0..c.num_classes)
            .map(|_| {
                (0..c.latent_dim)
                    .map(|_| normal(&mut r, c.class_separation))
                    .collect()
            })
            .collect();
        let scale = 1.0 / (c.latent_dim as f64).sqrt();
        let mixing = (0..c.width)
            .map(|j| {
                (0..c.latent_dim)
                    .map(|_| {
                        if j < c.informative {
                            normal(&mut r, scale)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let offset = (0..c.width).map(|_| normal(&mut r, 0.5)).collect();
        Ok(Self {
            config,
            centers,
            mixing,
            offset,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn feature_names(&self) -> Vec<String> {
        (0..self.config.width).map(|j| format!("f{j:02}")).collect()
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.config.num_classes)
            .map(|c| format!("class_{c}"))
            .collect()
    }

    /// `counts[c]` rows of class `c`, interleaved round-robin across classes.
    /// Distinct `stream` values give independent samples.
    pub fn labeled(&self, counts: &[usize], stream: u64) -> Result<Fam> {
        if counts.len() != self.config.num_classes {
            return Err(Error::Dimension {
                expected: vec![self.config.num_classes],
                found: vec![counts.len()],
            });
        }
        let mut r = rng::stream(stream, "synth-samples", self.config.num_classes as u64);
        let mut remaining = counts.to_vec();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        while remaining.iter().any(|&n| n > 0) {
            for (c, n) in remaining.iter_mut().enumerate() {
                if *n > 0 {
                    *n -= 1;
                    rows.push(self.sample_row(c, &mut r));
                    labels.push(c);
                }
            }
        }
        Fam::new(
            SYNTH_SCHEMA_ID,
            self.feature_names(),
            rows,
            Some(labels),
            self.class_names(),
        )
    }

    /// `per_class` rows of every class.
    pub fn balanced(&self, per_class: usize, stream: u64) -> Result<Fam> {
        self.labeled(&vec![per_class; self.config.num_classes], stream)
    }

    /// Unlabeled pool with classes mixed evenly; `n` rows in total.
    pub fn unlabeled(&self, n: usize, stream: u64) -> Result<Fam> {
        let k = self.config.num_classes;
        let counts: Vec<usize> = (0..k).map(|c| n / k + usize::from(c < n % k)).collect();
        Ok(strip_labels(&self.labeled(&counts, stream)?))
    }

    fn sample_row(&self, class: usize, r: &mut Rng) -> Vec<f64> {
        let c = &self.config;
        let within = Normal::new(0.0, c.within_class_std).unwrap();
        let noise = Normal::new(0.0, c.noise).unwrap();
        let z: Vec<f64> = self.centers[class]
            .iter()
            .map(|&m| m + within.sample(r))
            .collect();
        self.mixing
            .iter()
            .zip(&self.offset)
            .map(|(a, &b)| {
                let pre: f64 = a.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + b;
                0.5 * (1.0 + pre.tanh()) + noise.sample(r)
            })
            .collect()
    }
}
