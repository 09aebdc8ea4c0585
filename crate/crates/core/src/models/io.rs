//! Model files: a FETC parameter file plus a TOML descriptor beside it
//! (same stem, `.toml` extension) recording the architecture.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::classifier::SemiSupervisedModel;
use super::vae::{VaeConfig, VaeModel};
use crate::error::{Error, Result};
use crate::nn::{params_deserialize, params_serialize, LayerSpec, Network, ParameterSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Vae,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub kind: ModelKind,
    pub schema_id: String,
    pub input_dim: usize,
    pub z_dim: usize,
    #[serde(default)]
    pub class_names: Vec<String>,
    /// Leading layers that form the encoder (classifier only).
    #[serde(default)]
    pub encoder_layers: usize,
    #[serde(default)]
    pub encoder_frozen: bool,
    /// Path of the normalization sidecar, relative to the descriptor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<String>,
    /// SHA-256 of the parameter file contents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vae: Option<VaeConfig>,
    /// Flattened layer list in parameter layer-index order.
    pub layers: Vec<LayerSpec>,
}

pub fn descriptor_path(params_path: &Path) -> PathBuf {
    params_path.with_extension("toml")
}

/// Write `params` to `params_path` and the descriptor beside it. `comment`
/// lines become leading `#` lines of the descriptor.
pub fn write_model(
    params_path: &Path,
    descriptor: &ModelDescriptor,
    params: &ParameterSet,
    comment: Option<&str>,
) -> Result<()> {
    let mut descriptor = descriptor.clone();
    descriptor.params_digest = Some(params.digest());
    let mut text = String::new();
    for line in comment.into_iter().flat_map(str::lines) {
        writeln!(text, "# {line}").unwrap();
    }
    text.push_str(
        &toml::to_string(&descriptor).map_err(|e| Error::Config(format!("descriptor: {e}")))?,
    );
    std::fs::write(params_path, params_serialize(params)).map_err(|e| Error::io(params_path, e))?;
    let dpath = descriptor_path(params_path);
    std::fs::write(&dpath, text).map_err(|e| Error::io(&dpath, e))
}

pub fn read_model(params_path: &Path) -> Result<(ModelDescriptor, ParameterSet)> {
    let dpath = descriptor_path(params_path);
    let text = std::fs::read_to_string(&dpath).map_err(|e| Error::io(&dpath, e))?;
    let descriptor: ModelDescriptor =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", dpath.display())))?;
    let bytes = std::fs::read(params_path).map_err(|e| Error::io(params_path, e))?;
    let params = params_deserialize(&bytes)?;
    if let Some(expected) = &descriptor.params_digest {
        if *expected != params.digest() {
            return Err(Error::Structural(format!(
                "{} does not match the digest in its descriptor",
                params_path.display()
            )));
        }
    }
    Ok((descriptor, params))
}

impl VaeModel {
    pub fn descriptor(&self, schema_id: &str) -> ModelDescriptor {
        ModelDescriptor {
            kind: ModelKind::Vae,
            schema_id: schema_id.to_string(),
            input_dim: self.input_dim(),
            z_dim: self.z_dim(),
            class_names: Vec::new(),
            encoder_layers: self.config().encoder_layer_count(),
            encoder_frozen: false,
            normalization: None,
            params_digest: None,
            vae: Some(self.config().clone()),
            layers: self.layer_specs(),
        }
    }

    pub fn from_descriptor(descriptor: &ModelDescriptor, params: &ParameterSet) -> Result<Self> {
        let config = match (descriptor.kind, &descriptor.vae) {
            (ModelKind::Vae, Some(c)) => c,
            _ => {
                return Err(Error::Structural(
                    "descriptor does not describe a VAE".into(),
                ))
            }
        };
        let mut model = VaeModel::new(config)?;
        if model.layer_specs() != descriptor.layers {
            return Err(Error::Structural(
                "VAE layer list does not match its configuration".into(),
            ));
        }
        model.set_parameters(params)?;
        Ok(model)
    }
}

impl SemiSupervisedModel {
    pub fn descriptor(&self, schema_id: &str) -> ModelDescriptor {
        let specs = self.network().specs();
        let z_dim = specs[..self.encoder_layers()]
            .iter()
            .try_fold(self.input_dim(), |w, s| s.output_width(w))
            .expect("valid network");
        ModelDescriptor {
            kind: ModelKind::Classifier,
            schema_id: schema_id.to_string(),
            input_dim: self.input_dim(),
            z_dim,
            class_names: self.class_names().to_vec(),
            encoder_layers: self.encoder_layers(),
            encoder_frozen: self.encoder_frozen(),
            normalization: None,
            params_digest: None,
            vae: None,
            layers: specs,
        }
    }

    pub fn from_descriptor(descriptor: &ModelDescriptor, params: &ParameterSet) -> Result<Self> {
        if descriptor.kind != ModelKind::Classifier {
            return Err(Error::Structural(
                "descriptor does not describe a classifier".into(),
            ));
        }
        let mut network = Network::from_specs(
            descriptor.input_dim,
            &descriptor.layers,
            &mut rng::stream(0, "load", 0),
        )?;
        network.set_parameters(params)?;
        SemiSupervisedModel::from_parts(
            network,
            descriptor.encoder_layers,
            descriptor.encoder_frozen,
            descriptor.class_names.clone(),
        )
    }
}
