use serde::{Deserialize, Serialize};

use crate::corpus::Unit;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Whether sequences hold word or entity ids.
    pub unit: Unit,
    /// Sequences are right-padded or truncated to this length.
    pub max_seq_len: usize,
    pub embed_dim: usize,
    pub num_filters: usize,
    pub filter_width: usize,
    pub stride: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Update embedding rows during training; the pad row always stays zero.
    pub train_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            unit: Unit::Words,
            max_seq_len: 128,
            embed_dim: 300,
            num_filters: 250,
            filter_width: 3,
            stride: 1,
            hidden_dim: 250,
            dropout_rate: 0.2,
            epochs: 10,
            batch_size: 128,
            early_stop_patience: 5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            train_embeddings: false,
        }
    }
}

impl ModelConfig {
    /// Defaults with the padding length of the given unit: 128 words or 115 entities.
    pub fn for_unit(unit: Unit) -> Self {
        ModelConfig {
            unit,
            max_seq_len: default_seq_len(unit),
            ..Default::default()
        }
    }

    /// Number of convolution windows over a padded sequence.
    pub fn positions(&self) -> usize {
        (self.max_seq_len - self.filter_width) / self.stride + 1
    }

    /// Length of one flattened filter.
    pub fn window(&self) -> usize {
        self.filter_width * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("max_seq_len", self.max_seq_len),
            ("embed_dim", self.embed_dim),
            ("num_filters", self.num_filters),
            ("filter_width", self.filter_width),
            ("stride", self.stride),
            ("hidden_dim", self.hidden_dim),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("early_stop_patience", self.early_stop_patience),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        if self.filter_width > self.max_seq_len {
            return Err(Error::Parameter(format!(
                "filter_width {} exceeds max_seq_len {}",
                self.filter_width, self.max_seq_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Parameter(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Parameter("Adam betas must be in [0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Parameter("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

pub fn default_seq_len(unit: Unit) -> usize {
    match unit {
        Unit::Words => 128,
        Unit::Entities => 115,
    }
}
