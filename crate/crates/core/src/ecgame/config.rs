use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Token id never emitted by the speaker; it only seeds the first decoding step.
pub const CLS: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GameConfig {
    pub vocab_size: usize,
    pub seq_len: usize,
    pub distractors: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub temperature: f64,
    /// Straight-through one-hot messages instead of the relaxed vectors.
    pub hard_gumbel: bool,
    pub batch_size: usize,
    pub pool_size: usize,
    pub learning_rate: f64,
    pub total_steps: u64,
    pub checkpoint_interval: u64,
    pub seed: u64,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            vocab_size: 64,
            seq_len: 8,
            distractors: 15,
            hidden: 64,
            feature_dim: 24,
            temperature: 1.0,
            hard_gumbel: false,
            batch_size: 256,
            pool_size: 1000,
            learning_rate: 1e-3,
            total_steps: 3000,
            checkpoint_interval: 200,
            seed: 0,
        }
    }
}

impl GameConfig {
    /// Full-scale hyperparameters (needs 2048-d features and a large pool).
    pub fn full_scale() -> Self {
        GameConfig {
            vocab_size: 4035,
            seq_len: 15,
            distractors: 255,
            hidden: 2048,
            feature_dim: 2048,
            batch_size: 256,
            pool_size: 50_000,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.vocab_size < 3 {
            return bad(format!("vocab_size must be >= 3, got {}", self.vocab_size));
        }
        if self.seq_len < 1 {
            return bad("seq_len must be >= 1".into());
        }
        if self.hidden < 1 || self.feature_dim < 1 {
            return bad("hidden and feature_dim must be >= 1".into());
        }
        if !(self.distractors >= 1
            && self.distractors < self.batch_size
            && self.batch_size <= self.pool_size)
        {
            return bad(format!(
                "need 1 <= distractors < batch_size <= pool_size, got {} / {} / {}",
                self.distractors, self.batch_size, self.pool_size
            ));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        if self.checkpoint_interval == 0 {
            return bad("checkpoint_interval must be >= 1".into());
        }
        Ok(())
    }

    pub fn candidates(&self) -> usize {
        self.distractors + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        GameConfig::default().validate().unwrap();
        GameConfig::full_scale().validate().unwrap();
    }

    #[test]
    fn rejects_k_not_below_batch() {
        let c = GameConfig {
            distractors: 256,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_key_is_an_error() {
        let e = serde_json::from_str::<GameConfig>(r#"{"vocab_sise": 10}"#).unwrap_err();
        assert!(e.to_string().contains("vocab_size"));
    }
}
