//! Federated semi-supervised traffic classification for edge gateways.
//!
//! The pipeline runs in five stages, each in its own module:
//!
//! - [`data`]: packet events or flow CSVs become normalized flow attribute
//!   matrices ([`data::Fam`]).
//! - [`models`]: a VAE learns a latent representation from unlabeled rows; its
//!   encoder then feeds a 1-D CNN classifier fine-tuned on labeled rows.
//! - [`federated`]: the VAE is trained across simulated edge clients with
//!   sample-weighted FedAvg, in process or over a TCP wire protocol.
//! - [`xai`]: Shapley-value attributions (exact and permutation-sampled) and
//!   ablation-based convolution kernel importance.
//! - [`pruning`]: low-importance kernels are removed and the compact model is
//!   compared against the baseline on size, accuracy and latency.
//!
//! Everything numeric is `f64` and single-threaded unless stated otherwise, so
//! a fixed seed reproduces every artifact bit for bit.

pub mod data;
pub mod error;
pub mod federated;
pub mod models;
pub mod nn;
pub mod pruning;
pub mod rng;
pub mod xai;

pub use error::{Error, Result};
