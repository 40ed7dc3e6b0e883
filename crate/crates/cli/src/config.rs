//! Run configuration (JSON).
//!
//! ```json
//! {
//!   "layers": [
//!     {"input": 2, "output": 16, "activation": "relu"},
//!     {"input": 16, "output": 2, "activation": "softmax", "policy": "data"}
//!   ],
//!   "learning_rate": 0.1,
//!   "batch_size": 32,
//!   "epochs": 20,
//!   "seed": 1,
//!   "t": 0.01,
//!   "executor": "offload",
//!   "local_workers": 2,
//!   "pipelined": true,
//!   "dataset": {"kind": "blobs", "n_per_class": 200, "n_classes": 2, "dim": 2, "separation": 6.0, "seed": 3}
//! }
//! ```
//!
//! `activation` is `relu`, `identity` or `softmax` (last layer only).
//! `policy` is `tensor` (default), `data` or `master`. A CSV dataset is
//! `{"kind": "csv", "path": "train.csv"}`, relative to the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use blindtrain::dataset::{gen_blobs, Dataset};
use blindtrain::master::BackwardMode;
use blindtrain::nn::{LayerSpec, Network, ParallelPolicy, TrainConfig};
use blindtrain::{KeySpace, Rng};
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, Standardization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    #[default]
    Tensor,
    Data,
    Master,
}

impl From<Policy> for ParallelPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Tensor => ParallelPolicy::TensorParallel,
            Policy::Data => ParallelPolicy::DataParallel,
            Policy::Master => ParallelPolicy::InMaster,
        }
    }
}

impl From<ParallelPolicy> for Policy {
    fn from(p: ParallelPolicy) -> Self {
        match p {
            ParallelPolicy::TensorParallel => Policy::Tensor,
            ParallelPolicy::DataParallel => Policy::Data,
            ParallelPolicy::InMaster => Policy::Master,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    #[serde(default)]
    pub policy: Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorMode {
    Local,
    #[default]
    Offload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backward {
    #[default]
    Reuse,
    Naive,
}

impl From<Backward> for BackwardMode {
    fn from(b: Backward) -> Self {
        match b {
            Backward::Reuse => BackwardMode::Reuse,
            Backward::Naive => BackwardMode::Naive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Csv {
        path: PathBuf,
    },
    Blobs {
        n_per_class: usize,
        n_classes: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
}

fn default_t() -> f64 {
    0.01
}

fn default_key_space() -> u64 {
    KeySpace::default().size()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub layers: Vec<LayerConfig>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Tolerated probability that a tampered result goes unnoticed.
    #[serde(default = "default_t")]
    pub t: f64,
    #[serde(default)]
    pub executor: ExecutorMode,
    #[serde(default)]
    pub workers: Vec<String>,
    #[serde(default)]
    pub local_workers: Option<usize>,
    #[serde(default)]
    pub pipelined: bool,
    #[serde(default = "default_key_space")]
    pub key_space: u64,
    #[serde(default)]
    pub backward: Backward,
    /// Overrides the verification rounds derived from `t`.
    #[serde(default)]
    pub rounds: Option<u32>,
    pub dataset: DatasetConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?;
        if let DatasetConfig::Csv { path: csv } = &mut cfg.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            bail!("config has no layers");
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output != pair[1].input {
                bail!(
                    "layer {} outputs {} values but layer {} takes {}",
                    i,
                    pair[0].output,
                    i + 1,
                    pair[1].input
                );
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                bail!("layer {i} has a zero dimension");
            }
            let last = i + 1 == self.layers.len();
            if last != (l.activation == Activation::Softmax) {
                bail!("softmax must be the activation of the last layer and only there");
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bail!("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            bail!("batch_size must be positive");
        }
        if !(self.t > 0.0 && self.t < 1.0) {
            bail!("t must lie in (0, 1)");
        }
        KeySpace::new(self.key_space)?;
        if self.rounds == Some(0) {
            bail!("rounds must be positive");
        }
        if self.executor == ExecutorMode::Offload {
            match (self.workers.is_empty(), self.local_workers) {
                (true, None) => bail!("offload executor needs workers or local_workers"),
                (false, Some(_)) => bail!("give either workers or local_workers, not both"),
                (_, Some(0)) => bail!("local_workers must be positive"),
                _ => {}
            }
        }
        match &self.dataset {
            DatasetConfig::Blobs {
                n_per_class,
                n_classes,
                dim,
                separation,
                ..
            } => {
                if *n_per_class == 0 || *n_classes == 0 || *dim == 0 || !separation.is_finite() {
                    bail!("blob parameters must be positive and finite");
                }
                if *dim != self.layers[0].input {
                    bail!("blobs have {dim} features, the first layer takes {}", self.layers[0].input);
                }
                if *n_classes > self.layers.last().unwrap().output {
                    bail!("{n_classes} classes but the network has {} outputs", self.layers.last().unwrap().output);
                }
            }
            DatasetConfig::Csv { path } => {
                if !path.is_file() {
                    bail!("dataset {} does not exist", path.display());
                }
            }
        }
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for l in &self.layers {
            specs.push(LayerSpec::Linear {
                out_dim: l.output,
                in_dim: l.input,
                policy: l.policy.into(),
            });
            match l.activation {
                Activation::Relu => specs.push(LayerSpec::Relu),
                Activation::Softmax => specs.push(LayerSpec::Softmax),
                Activation::Identity => {}
            }
        }
        specs
    }

    /// Fresh network; weights drawn from `seed`.
    pub fn network(&self) -> Result<Network> {
        Ok(Network::new(self.layer_specs(), &mut Rng::new(self.seed))?)
    }

    /// Batches are shuffled from `seed + 1`.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed.wrapping_add(1),
        }
    }

    /// Keys and verification vectors come from `seed + 2`.
    pub fn offload_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    pub fn dataset(&self) -> Result<(Dataset, Option<Standardization>)> {
        Ok(match &self.dataset {
            DatasetConfig::Csv { path } => {
                let (ds, std) = load_csv(path)?;
                (ds, Some(std))
            }
            DatasetConfig::Blobs {
                n_per_class,
                n_classes,
                dim,
                separation,
                seed,
            } => (gen_blobs(*n_per_class, *n_classes, *dim, *separation, *seed)?, None),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunConfig {
        serde_json::from_str(
            r#"{
                "layers": [
                    {"input": 2, "output": 4, "activation": "relu"},
                    {"input": 4, "output": 2, "activation": "softmax", "policy": "data"}
                ],
                "learning_rate": 0.1, "batch_size": 8, "epochs": 2, "seed": 1,
                "local_workers": 2,
                "dataset": {"kind": "blobs", "n_per_class": 10, "n_classes": 2, "dim": 2, "separation": 4.0, "seed": 1}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_and_validation() {
        let cfg = sample();
        assert_eq!(cfg.t, 0.01);
        assert_eq!(cfg.key_space, 255);
        assert_eq!(cfg.executor, ExecutorMode::Offload);
        cfg.validate().unwrap();
        let net = cfg.network().unwrap();
        assert_eq!(
            net.policies(),
            vec![ParallelPolicy::TensorParallel, ParallelPolicy::DataParallel]
        );
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = sample();
        cfg.layers[1].input = 3;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.layers[0].activation = Activation::Softmax;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.local_workers = None;
        assert!(cfg.validate().is_err());
        cfg.executor = ExecutorMode::Local;
        cfg.validate().unwrap();

        let mut cfg = sample();
        cfg.t = 1.5;
        assert!(cfg.validate().is_err());

        let mut cfg = sample();
        cfg.dataset = DatasetConfig::Csv {
            path: "/nonexistent.csv".into(),
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = serde_json::to_string(&sample()).unwrap().replace("\"seed\":1,", "\"seed\":1,\"sead\":2,");
        assert!(serde_json::from_str::<RunConfig>(&text).is_err());
    }
}
