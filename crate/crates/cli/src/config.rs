//! Run configuration: a TOML file, `--set section.key=value` overrides and a
//! global seed that is copied into every stage.

use std::path::{Path, PathBuf};

use fededge::federated::FederationConfig;
use fededge::models::{CnnConfig, FineTuneConfig, VaeConfig};
use fededge::pruning::PruningConfig;
use fededge::xai::{RankBy, ShapMode, Target};
use fededge::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub vae: VaeConfig,
    pub classifier: ClassifierConfig,
    pub federation: FederationConfig,
    pub shap: ShapSettings,
    pub pruning: PruningConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("fededge-out"),
            data: DataConfig::default(),
            vae: VaeConfig::default(),
            classifier: ClassifierConfig::default(),
            federation: FederationConfig::default(),
            shap: ShapSettings::default(),
            pruning: PruningConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Packet event log for `extract`.
    pub packet_log: Option<PathBuf>,
    /// Flow CSVs for `extract` (e.g. CICFlowMeter exports).
    pub csv: Vec<PathBuf>,
    pub label_column: Option<String>,
    /// Seconds of silence that end a flow.
    pub idle_timeout: f64,
    /// Normalized unlabeled FAMs: the pretraining set, or one shard per client.
    pub unlabeled: Vec<PathBuf>,
    /// Normalized labeled FAM for fine-tuning.
    pub labeled: Option<PathBuf>,
    /// Held-out FAM; when absent the labeled set is split.
    pub test: Option<PathBuf>,
    /// Fraction of the labeled rows held out for testing.
    pub partition_ratio: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            packet_log: None,
            csv: Vec::new(),
            label_column: None,
            idle_timeout: fededge::data::DEFAULT_IDLE_TIMEOUT,
            unlabeled: Vec::new(),
            labeled: None,
            test: None,
            partition_ratio: 0.45,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub cnn: CnnConfig,
    pub fine_tune: FineTuneConfig,
    pub freeze_encoder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapSettings {
    pub mode: ShapMode,
    pub num_permutations: usize,
    pub target: Target,
    pub rank_by: RankBy,
    /// Rows drawn from the background FAM to form its mean.
    pub background_size: usize,
    /// Rows explained, taken from the start of the input FAM.
    pub max_samples: usize,
    /// Features listed in the summary CSV.
    pub top_n: usize,
}

impl Default for ShapSettings {
    fn default() -> Self {
        Self {
            mode: ShapMode::Sampled,
            num_permutations: 2000,
            target: Target::PredictedClass,
            rank_by: RankBy::MeanAbs,
            background_size: 100,
            max_samples: 200,
            top_n: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub ratios: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            ratios: vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
            seeds: 5,
        }
    }
}

/// Config plus the SHA-256 of its resolved form.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub digest: String,
}

impl Resolved {
    /// Header line embedded in every artifact.
    pub fn header(&self, command: &str) -> String {
        format!(
            "fededge {command}; config sha256 {}; seed {}",
            self.digest, self.config.seed
        )
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Parse a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    match toml::from_str::<Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Apply one `a.b.c=value` override to `table`, creating sections as needed.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("--set expects key=value, got {assignment:?}")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("bad key path {path:?}")));
    }
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("{path}: {key} is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Resolved> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            toml::from_str::<Table>(&text)
                .map_err(|e| config_err(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| config_err(e.to_string()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.vae.seed = config.seed;
    config.federation.seed = config.seed;
    config.classifier.fine_tune.seed = config.seed;
    validate(&config)?;
    // Where artifacts land does not change them, so it stays out of the digest.
    let hashed = RunConfig {
        output_dir: PathBuf::new(),
        ..config.clone()
    };
    let canonical = toml::to_string(&hashed).map_err(|e| config_err(e.to_string()))?;
    let digest = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(Resolved { config, digest })
}

fn validate(c: &RunConfig) -> Result<()> {
    c.vae.validate()?;
    c.federation.validate()?;
    c.pruning.validate()?;
    c.classifier.fine_tune.optimizer.validate()?;
    if !(c.data.idle_timeout > 0.0) {
        return Err(config_err("data.idle_timeout must be positive"));
    }
    if !(c.data.partition_ratio > 0.0 && c.data.partition_ratio < 1.0) {
        return Err(config_err("data.partition_ratio must lie in (0, 1)"));
    }
    if c.sweep.ratios.iter().any(|r| !(*r > 0.0 && *r < 1.0))
        || c.sweep.ratios.is_empty()
        || c.sweep.seeds == 0
    {
        return Err(config_err(
            "sweep needs ratios in (0, 1) and at least one seed",
        ));
    }
    if c.shap.background_size == 0 || c.shap.max_samples == 0 || c.shap.num_permutations == 0 {
        return Err(config_err("shap sizes must be positive"));
    }
    Ok(())
}

/// Fail with an input error unless `path` exists.
pub fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        })
    }
}
