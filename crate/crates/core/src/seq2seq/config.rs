use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EncoderInput {
    /// Token ids over `src_vocab`.
    Tokens,
    /// Sequences of `dim`-dimensional real vectors.
    Continuous { dim: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DecodeStrategy {
    Greedy,
    Beam { width: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seq2SeqConfig {
    pub input: EncoderInput,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn: usize,
    /// Ignored for continuous input.
    pub src_vocab: usize,
    /// Natural-side vocabulary; start/end sentinels are added on top.
    pub tgt_vocab: usize,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decode: DecodeStrategy,
    pub seed: u64,
}

impl Default for Seq2SeqConfig {
    fn default() -> Self {
        Seq2SeqConfig {
            input: EncoderInput::Tokens,
            enc_layers: 1,
            dec_layers: 1,
            heads: 2,
            dim: 64,
            ffn: 128,
            src_vocab: 0,
            tgt_vocab: 0,
            max_src_len: 16,
            max_tgt_len: 16,
            epochs: 2,
            batch_size: 32,
            learning_rate: 1e-3,
            decode: DecodeStrategy::Greedy,
            seed: 0,
        }
    }
}

impl Seq2SeqConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            ));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 || self.ffn == 0 {
            return bad("seq2seq needs >= 1 encoder and decoder layer and ffn >= 1".into());
        }
        if self.input == EncoderInput::Tokens && self.src_vocab == 0 {
            return bad("token encoder needs src_vocab >= 1".into());
        }
        if let EncoderInput::Continuous { dim: 0 } = self.input {
            return bad("continuous encoder needs dim >= 1".into());
        }
        if self.tgt_vocab == 0 || self.max_src_len == 0 || self.max_tgt_len == 0 {
            return bad("tgt_vocab, max_src_len and max_tgt_len must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let DecodeStrategy::Beam { width: 0 } = self.decode {
            return bad("beam width must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!(
                "learning_rate must be >= 0, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }

    pub fn bos(&self) -> usize {
        self.tgt_vocab
    }

    pub fn eos(&self) -> usize {
        self.tgt_vocab + 1
    }

    /// Decoder vocabulary including the sentinels.
    pub fn out_vocab(&self) -> usize {
        self.tgt_vocab + 2
    }
}
