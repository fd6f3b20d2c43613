//! Effective run configuration: built-in defaults, then the `--config` file,
//! then flags.

use std::path::Path;

use anyhow::Context;
use hmmn_core::training::Optimizer;
use hmmn_core::{TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::ModelArgs;
use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,
    pub variant: Variant,
    pub hops: usize,
    pub lambda: f64,
    /// `None` defers to the dataset's generator, then 300.
    pub dim: Option<usize>,
    pub normalize_coattention: bool,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub patience: usize,
    pub optimizer: Optimizer,
    pub clip: Option<f64>,
    pub dev_fraction: f64,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Settings {
            seed: t.seed,
            variant: t.variant,
            hops: 2,
            lambda: 0.45,
            dim: None,
            normalize_coattention: false,
            lr: t.lr,
            batch: t.batch_size,
            epochs: t.epochs,
            patience: t.patience,
            optimizer: t.optimizer,
            clip: t.clip,
            dev_fraction: 0.1,
        }
    }
}

impl Settings {
    pub fn resolve(args: &ModelArgs) -> anyhow::Result<Self> {
        let mut s = match &args.config {
            Some(path) => read_config(path)?,
            None => Settings::default(),
        };
        macro_rules! take {
            ($($field:ident <- $flag:ident),* $(,)?) => {
                $(if let Some(v) = args.$flag.clone() { s.$field = v; })*
            };
        }
        take!(seed <- seed, variant <- variant, hops <- hops, lambda <- lambda,
              lr <- lr, batch <- batch, epochs <- epochs, patience <- patience,
              optimizer <- optimizer, dev_fraction <- dev_fraction);
        if args.dim.is_some() {
            s.dim = args.dim;
        }
        if args.clip.is_some() {
            s.clip = args.clip;
        }
        if args.normalize_coattention {
            s.normalize_coattention = true;
        }
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), UsageError> {
        let bad = |msg: String| Err(UsageError(msg));
        if self.hops == 0 {
            return bad("--hops must be >= 1".into());
        }
        if !self.lambda.is_finite() {
            return bad(format!("--lambda must be finite, got {}", self.lambda));
        }
        if self.dim == Some(0) {
            return bad("--dim must be >= 1".into());
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return bad(format!(
                "--dev-fraction must be in (0, 1), got {}",
                self.dev_fraction
            ));
        }
        if let Some(c) = self.clip {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("--clip must be > 0, got {c}"));
            }
        }
        self.train_config()
            .validate()
            .map_err(|e| UsageError(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            variant: self.variant,
            optimizer: self.optimizer,
            clip: self.clip,
        }
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
}
