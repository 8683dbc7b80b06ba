use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Transformer,
    Gru,
}

/// When fine-tuning re-initialises the token embedding and output head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reinit {
    /// Only when source and target vocabulary sizes differ.
    #[default]
    OnVocabChange,
    Always,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub arch: Arch,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn: usize,
    pub context: usize,
    /// 0 takes the vocabulary size of the training corpus.
    pub vocab_size: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub eval_interval: u64,
    pub reinit: Reinit,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            arch: Arch::Transformer,
            layers: 2,
            heads: 2,
            dim: 64,
            ffn: 256,
            context: 128,
            vocab_size: 0,
            learning_rate: 1e-3,
            batch_size: 32,
            total_steps: 3000,
            eval_interval: 100,
            reinit: Reinit::OnVocabChange,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if self.arch == Arch::Transformer {
            if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
                return bad(format!(
                    "dim {} must be a positive multiple of heads {}",
                    self.dim, self.heads
                ));
            }
            if self.layers == 0 || self.ffn == 0 {
                return bad("transformer needs layers >= 1 and ffn >= 1".into());
            }
        }
        if self.context < 2 {
            return bad(format!("context must be >= 2, got {}", self.context));
        }
        if self.batch_size == 0 || self.eval_interval == 0 {
            return bad("batch_size and eval_interval must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }

    /// Config with the vocabulary fixed to `corpus_vocab` (errors if it would overflow).
    pub fn resolve_vocab(&self, corpus_vocab: usize) -> Result<LmConfig> {
        if self.vocab_size != 0 && self.vocab_size < corpus_vocab {
            return Err(Error::Contract(format!(
                "corpus vocabulary {corpus_vocab} overflows model vocabulary {}",
                self.vocab_size
            )));
        }
        let mut c = self.clone();
        if c.vocab_size == 0 {
            c.vocab_size = corpus_vocab;
        }
        Ok(c)
    }

    /// Same architecture (everything except vocabulary and training schedule).
    pub fn same_body(&self, other: &LmConfig) -> bool {
        self.arch == other.arch
            && self.dim == other.dim
            && (self.arch == Arch::Gru
                || (self.layers == other.layers
                    && self.heads == other.heads
                    && self.ffn == other.ffn
                    && self.context == other.context))
    }
}
