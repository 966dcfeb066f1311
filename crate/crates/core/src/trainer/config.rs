//! Training configuration with file and flag overrides.
//!
//! Config files are flat `key=value` documents whose keys mirror the field
//! names below; `#` starts a comment. Command-line flags override file
//! values, which override the defaults.

use super::TrainError;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Sampling hop count (used by resample augmentation).
    pub h: usize,
    /// Per-hop fan-out K.
    pub k: usize,
    /// Stacked attention layers.
    pub k_layers: usize,
    /// Hidden dimension d.
    pub d: usize,
    /// Contrastive temperature.
    pub tau: f64,
    /// Trade-off between classification and contrast.
    pub lambda: f64,
    /// Augmentation perturbation probability.
    pub p: f64,
    /// Batch size N; batches smaller than 2 are dropped.
    pub batch: usize,
    pub lr: f64,
    pub dropout: f64,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    pub max_epochs: usize,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Augmentation pair, e.g. `edgeRemove&nodeDrop`.
    pub aug: String,
    /// Sampling indicator name (amount, times, avgAmount).
    pub strategy: String,
    /// `adam` (default) or `sgd`.
    pub optimizer: String,
    /// Apply the classification loss to both augmented views (default) or to
    /// the raw subgraph only.
    pub classify_augmented: bool,
    /// Average both anchor directions in the contrastive loss.
    pub symmetric_contrast: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            h: 2,
            k: 20,
            k_layers: 2,
            d: 128,
            tau: 0.2,
            lambda: 0.01,
            p: 0.10,
            batch: 32,
            lr: 0.001,
            dropout: 0.2,
            patience: 20,
            max_epochs: 200,
            folds: 3,
            repeats: 10,
            seed: 42,
            aug: "edgeRemove&nodeDrop".to_string(),
            strategy: "amount".to_string(),
            optimizer: "adam".to_string(),
            classify_augmented: true,
            symmetric_contrast: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.tau <= 0.0 {
            return Err(TrainError::Config("tau must be positive".into()));
        }
        if self.lambda < 0.0 {
            return Err(TrainError::Config("lambda must be non-negative".into()));
        }
        if self.batch < 2 {
            return Err(TrainError::Config(
                "batch must be at least 2 (contrast needs negatives)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(TrainError::Config("p must lie in [0, 1]".into()));
        }
        if self.k_layers == 0 || self.d == 0 || self.h == 0 || self.k == 0 {
            return Err(TrainError::Config("h, k, k_layers and d must be positive".into()));
        }
        if self.optimizer != "adam" && self.optimizer != "sgd" {
            return Err(TrainError::Config(format!(
                "unknown optimizer {:?}",
                self.optimizer
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = |what: &str| TrainError::Config(format!("bad value {value:?} for {what}"));
        match key {
            "h" => self.h = value.parse().map_err(|_| bad("h"))?,
            "k" => self.k = value.parse().map_err(|_| bad("k"))?,
            "k_layers" => self.k_layers = value.parse().map_err(|_| bad("k_layers"))?,
            "d" => self.d = value.parse().map_err(|_| bad("d"))?,
            "tau" => self.tau = value.parse().map_err(|_| bad("tau"))?,
            "lambda" => self.lambda = value.parse().map_err(|_| bad("lambda"))?,
            "p" => self.p = value.parse().map_err(|_| bad("p"))?,
            "batch" => self.batch = value.parse().map_err(|_| bad("batch"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad("lr"))?,
            "dropout" => self.dropout = value.parse().map_err(|_| bad("dropout"))?,
            "patience" => self.patience = value.parse().map_err(|_| bad("patience"))?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad("max_epochs"))?,
            "folds" => self.folds = value.parse().map_err(|_| bad("folds"))?,
            "repeats" => self.repeats = value.parse().map_err(|_| bad("repeats"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            "aug" => self.aug = value.to_string(),
            "strategy" => self.strategy = value.to_string(),
            "optimizer" => self.optimizer = value.to_string(),
            "classify_augmented" => {
                self.classify_augmented = value.parse().map_err(|_| bad("classify_augmented"))?
            }
            "symmetric_contrast" => {
                self.symmetric_contrast = value.parse().map_err(|_| bad("symmetric_contrast"))?
            }
            _ => return Err(TrainError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines from a config document.
    pub fn apply_document(&mut self, text: &str) -> Result<(), TrainError> {
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                TrainError::Config(format!("line {}: expected key=value, got {line:?}", no + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }
}
