//! Training configuration and its flat `key = value` file format.
//!
//! The file is TOML restricted to top-level scalar keys. Unknown keys are an
//! error. Any key may be omitted and falls back to [`TrainingConfig::default`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Aggregation, Regularization, Space};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegularizationMode {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub curvature: f64,
    pub dim: usize,
    /// Step size of the one-step proxy `Θ − α∇J_inner`; `None` uses `lr`.
    pub proxy_lr: Option<f64>,
    /// Adam learning rate for the embeddings.
    pub lr: f64,
    /// Adam learning rate for the per-item logits.
    pub beta_lr: f64,
    /// Coefficient of the squared-norm penalty on touched rows.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub space: Space,
    pub aggregation: Aggregation,
    pub mode: RegularizationMode,
    /// KG loss coefficient in fixed mode.
    pub beta: f64,
    /// Negative samples drawn per positive pair.
    pub negatives: usize,
    /// Epochs without validation NDCG@20 improvement before stopping; 0 disables.
    pub patience: usize,
    pub train_ratio: f64,
    pub validation_ratio: f64,
    /// Exclude validation items from test-time candidates.
    pub exclude_validation: bool,
    /// Optional k-core filter applied at load time; 0 disables.
    pub k_core: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            curvature: 1.0,
            dim: 64,
            proxy_lr: None,
            lr: 0.005,
            beta_lr: 0.01,
            weight_decay: 1e-5,
            batch_size: 4096,
            epochs: 200,
            seed: 2020,
            space: Space::Hyperbolic,
            aggregation: Aggregation::Attention,
            mode: RegularizationMode::Adaptive,
            beta: 0.5,
            negatives: 1,
            patience: 20,
            train_ratio: 0.8,
            validation_ratio: 0.1,
            exclude_validation: true,
            k_core: 0,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        positive("curvature", self.curvature)?;
        positive("lr", self.lr)?;
        positive("beta_lr", self.beta_lr)?;
        if let Some(a) = self.proxy_lr {
            positive("proxy_lr", a)?;
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be nonnegative".into()));
        }
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(Error::Config("beta must be nonnegative".into()));
        }
        for (name, v) in [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("negatives", self.negatives),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.train_ratio > 0.0 && self.train_ratio <= 1.0) {
            return Err(Error::Config("train_ratio must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.validation_ratio) {
            return Err(Error::Config("validation_ratio must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: TrainingConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes every field, including defaults.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn proxy_step(&self) -> f64 {
        self.proxy_lr.unwrap_or(self.lr)
    }

    pub fn regularization<T: Scalar>(&self) -> Regularization<T> {
        match self.mode {
            RegularizationMode::Fixed => Regularization::Fixed(T::lit(self.beta)),
            RegularizationMode::Adaptive => Regularization::Adaptive,
        }
    }

    pub fn split_ratios(&self) -> crate::data::SplitRatios {
        crate::data::SplitRatios {
            train: self.train_ratio,
            validation: self.validation_ratio,
        }
    }
}
