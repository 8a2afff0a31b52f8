use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelOptions, RegConfig, Variant};

/// Every hyperparameter of a training run. Read from flat TOML; unknown
/// keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub factors: usize,
    pub preferred_aspects: usize,
    pub rejected_aspects: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub filters: usize,
    pub kernel_width: usize,
    pub embedding_dim: usize,
    pub attention_hidden: usize,
    pub dropout: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub freeze_embeddings: bool,
    /// Update only group `epoch % 4` in each epoch instead of all four
    /// groups per batch.
    pub epoch_schedule: bool,
    pub max_len: usize,
    pub min_count: usize,
    pub clip_predictions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            factors: 32,
            preferred_aspects: 3,
            rejected_aspects: 3,
            learning_rate: 1e-3,
            batch_size: 200,
            max_epochs: 50,
            beta1: 1e-4,
            beta2: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 1,
            variant: Variant::Base,
            patience: 5,
            filters: 50,
            kernel_width: 3,
            embedding_dim: 50,
            attention_hidden: 32,
            dropout: 0.2,
            clip_norm: 5.0,
            freeze_embeddings: false,
            epoch_schedule: false,
            max_len: crate::corpus::DEFAULT_MAX_LEN,
            min_count: 1,
            clip_predictions: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.factors == 0 || self.preferred_aspects == 0 || self.rejected_aspects == 0 {
            return bad("factors and aspect counts must be at least 1");
        }
        if self.filters == 0 || self.embedding_dim == 0 || self.attention_hidden == 0 {
            return bad("filters, embedding_dim and attention_hidden must be at least 1");
        }
        if self.kernel_width % 2 == 0 {
            return bad("kernel_width must be odd");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite non-negative number");
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return bad("beta1 and beta2 must be non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || self.adam_epsilon <= 0.0 {
            return bad("adam moment decays must lie in [0, 1) and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.clip_norm < 0.0 {
            return bad("clip_norm must be non-negative");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        Ok(())
    }

    pub fn reg(&self) -> RegConfig {
        RegConfig { beta1: self.beta1, beta2: self.beta2 }
    }
}

/// Resolves the configured variant and switches into model wiring.
pub fn make_variant(config: &TrainConfig) -> ModelOptions {
    ModelOptions { variant: config.variant, dropout: config.dropout, train_embeddings: !config.freeze_embeddings }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = TrainConfig { variant: Variant::NoOffset, factors: 8, ..Default::default() };
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_config_error() {
        assert!(matches!(TrainConfig::from_toml("factors = 8\nfactorz = 3\n"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_variant_is_config_error() {
        assert!(matches!(TrainConfig::from_toml("variant = \"deluxe\"\n"), Err(Error::Config(_))));
    }

    #[test]
    fn variant_wiring() {
        let cfg = TrainConfig { variant: Variant::CoarseGrained, freeze_embeddings: true, ..Default::default() };
        let o = make_variant(&cfg);
        assert_eq!(o.variant, Variant::CoarseGrained);
        assert!(!o.train_embeddings);
        assert_eq!(o.dropout, 0.2);
    }
}
