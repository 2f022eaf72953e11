//! JSON experiment configuration and the end-to-end federation driver.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, PartitionSpec, Split};
use crate::error::{Error, Result};
use crate::fed::{
    Aggregation, ClientState, EarlyStop, Federation, FederationOutcome, RoundSettings, ServerState,
};
use crate::model::{Architecture, Classifier, HeadKind};
use crate::qtn::{BlockKind, TopologyKind};
use crate::seed::mix;
use crate::train::{AdamState, DpConfig, DEFAULT_BATCH_SIZE, DEFAULT_LR, DEFAULT_WEIGHT_DECAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synth {
        n: usize,
        h: usize,
        w: usize,
        noise_sd: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
    PgmDir {
        dir: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockName {
    Simple,
    #[default]
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpSettings {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default)]
    pub epsilon: f64,
}

impl Default for DpSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            clip: default_clip(),
            epsilon: 0.0,
        }
    }
}

fn default_clip() -> f64 {
    1.0
}
fn default_split() -> [f64; 3] {
    [0.70, 0.10, 0.20]
}
fn default_layers() -> usize {
    1
}
fn default_epochs() -> usize {
    1
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_lr() -> f64 {
    DEFAULT_LR
}
fn default_wd() -> f64 {
    DEFAULT_WEIGHT_DECAY
}
fn default_server_lr() -> f64 {
    1.0
}
fn default_threshold() -> f64 {
    0.5
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// Everything needed to reproduce one federated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Optional `[height, width]` area-average resize applied after loading.
    #[serde(default)]
    pub downscale: Option<[usize; 2]>,
    #[serde(default = "default_split")]
    pub split: [f64; 3],
    pub partition: PartitionSpec,
    pub topology: TopologyKind,
    #[serde(default)]
    pub block: BlockName,
    #[serde(default = "default_layers")]
    pub layers: usize,
    pub patch_side: usize,
    #[serde(default = "default_head")]
    pub head: HeadKind,
    pub rounds: usize,
    #[serde(default = "default_epochs")]
    pub local_epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub dp: DpSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub early_stop: Option<EarlyStop>,
}

fn default_head() -> HeadKind {
    HeadKind::Gap
}

/// A configuration value that fails validation, with its JSON field path.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

fn field_err(field: &str, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn block_kind(&self) -> BlockKind {
        match self.block {
            BlockName::Simple => BlockKind::Simple,
            BlockName::Strong => BlockKind::StronglyEntangling {
                layers: self.layers,
            },
        }
    }

    /// Checks value ranges that the JSON schema alone cannot express.
    pub fn validate(&self) -> std::result::Result<(), FieldError> {
        if self.patch_side == 0 {
            return Err(field_err("patch_side", "must be >= 1"));
        }
        let nq = self.patch_side * self.patch_side;
        if !self.topology.supports(nq) {
            return Err(field_err(
                "patch_side",
                format!(
                    "{nq} qubits is not supported by the {} topology",
                    self.topology
                ),
            ));
        }
        if self.block == BlockName::Strong && self.layers == 0 {
            return Err(field_err("layers", "must be >= 1"));
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
            return Err(field_err(
                "split",
                "fractions must lie in [0, 1] and sum to 1",
            ));
        }
        if self.split[0] == 0.0 || self.split[2] == 0.0 {
            return Err(field_err(
                "split",
                "train and test fractions must be positive",
            ));
        }
        if self.partition.n_clients() == 0 {
            return Err(field_err("partition", "needs at least one client"));
        }
        if self.local_epochs == 0 {
            return Err(field_err("local_epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(field_err("batch_size", "must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(field_err("lr", "must be > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(field_err("weight_decay", "must be >= 0"));
        }
        if !(self.server_lr > 0.0 && self.server_lr <= 1.0) {
            return Err(field_err("server_lr", "must lie in (0, 1]"));
        }
        if !(self.dp.clip > 0.0 && self.dp.clip.is_finite()) {
            return Err(field_err("dp.clip", "must be > 0"));
        }
        if !(self.dp.epsilon >= 0.0 && self.dp.epsilon.is_finite()) {
            return Err(field_err("dp.epsilon", "must be >= 0"));
        }
        if let Some([h, w]) = self.downscale {
            if h == 0 || w == 0 {
                return Err(field_err("downscale", "dimensions must be >= 1"));
            }
        }
        if let DatasetSource::Synth { h, w, noise_sd, .. } = self.dataset {
            if h < 4 || w < 4 {
                return Err(field_err(
                    "dataset.h",
                    "synthetic images must be at least 4x4",
                ));
            }
            if noise_sd.is_nan() || noise_sd < 0.0 {
                return Err(field_err("dataset.noise_sd", "must be >= 0"));
            }
        }
        Ok(())
    }
}

pub fn load_dataset(source: &DatasetSource, downscale: Option<[usize; 2]>) -> Result<Dataset> {
    let d = match source {
        DatasetSource::Synth {
            n,
            h,
            w,
            noise_sd,
            seed,
        } => data::synth_blobs(*n, *h, *w, *noise_sd, *seed)?,
        DatasetSource::Csv { path } => data::load_csv(path)?,
        DatasetSource::PgmDir { dir, labels } => data::load_pgm_dir(dir, labels)?,
    };
    match downscale {
        Some([h, w]) => data::downscale_dataset(&d, h, w),
        None => Ok(d),
    }
}

/// A ready-to-run federation plus the data split it was built from.
pub struct Experiment {
    pub federation: Federation,
    pub split: Split,
    pub clients_data: Vec<[usize; 2]>,
}

/// Loads data, splits, partitions and initializes every model.
pub fn prepare(config: &ExperimentConfig) -> Result<Experiment> {
    config
        .validate()
        .map_err(|e| Error::Contract(e.to_string()))?;
    let dataset = load_dataset(&config.dataset, config.downscale)?;
    let (h, w) = dataset
        .dims()
        .ok_or_else(|| Error::Contract("dataset is empty".into()))?;
    if h % config.patch_side != 0 || w % config.patch_side != 0 {
        return Err(Error::Contract(format!(
            "patch_side {} does not divide {h}x{w} images",
            config.patch_side
        )));
    }
    let arch = Architecture {
        topology: config.topology,
        block: config.block_kind(),
        patch_side: config.patch_side,
        n_patches: (h / config.patch_side) * (w / config.patch_side),
        head: config.head,
    };
    let classifier = Classifier::new(arch)?;

    let split = data::train_val_test_split(&dataset, config.split, mix(&[config.seed, 1]))?;
    let parts = data::partition(&split.train, &config.partition, mix(&[config.seed, 2]))?;
    let global = classifier.init_params(mix(&[config.seed, 3]));
    let n_params = classifier.n_params();

    let clients_data = parts.iter().map(Dataset::label_counts).collect();
    let clients = parts
        .into_iter()
        .enumerate()
        .map(|(i, part)| {
            let dp = config.dp.enabled.then(|| DpConfig {
                clip: config.dp.clip,
                epsilon: config.dp.epsilon,
                rng_seed: mix(&[config.seed, 4, i as u64]),
            });
            ClientState::new(
                part.name.clone(),
                part,
                global.clone(),
                AdamState::new(n_params, config.lr, config.weight_decay),
                dp,
            )
        })
        .collect();
    let server = ServerState::new(global, config.server_lr, config.aggregation);
    let settings = RoundSettings {
        local_epochs: config.local_epochs,
        batch_size: config.batch_size,
        seed: config.seed,
        threshold: config.threshold,
    };
    let federation = Federation::new(classifier, server, clients, split.test.clone(), settings)?;
    Ok(Experiment {
        federation,
        split,
        clients_data,
    })
}

/// Prepares and runs the configured number of rounds.
pub fn run_federation(config: &ExperimentConfig) -> Result<(Experiment, FederationOutcome)> {
    let mut exp = prepare(config)?;
    let outcome = exp.federation.run(config.rounds, config.early_stop);
    Ok((exp, outcome))
}
