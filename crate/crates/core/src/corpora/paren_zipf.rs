//! Balanced-bracket corpus whose unigram distribution follows a Zipf law.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Prng;

use super::{provenance, Corpus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParenZipfConfig {
    /// Number of distinct words (Zipf ranks).
    pub vocab_size: usize,
    pub token_count: usize,
    pub exponent: f64,
    pub open_prob: f64,
    pub line_length: usize,
}

impl Default for ParenZipfConfig {
    fn default() -> Self {
        ParenZipfConfig {
            vocab_size: 5000,
            token_count: 1_000_000,
            exponent: 1.0,
            open_prob: 0.5,
            line_length: 512,
        }
    }
}

/// `p(r) ∝ r^-s` for ranks `1..=n`.
pub fn zipf_probabilities(n: usize, s: f64) -> Vec<f64> {
    let w: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Exact inverse-CDF sampler over Zipf ranks.
#[derive(Clone, Debug)]
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(n: usize, s: f64) -> Self {
        let mut acc = 0.0;
        let cdf = zipf_probabilities(n, s)
            .into_iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        ZipfTable { cdf }
    }

    /// A rank in `1..=n`.
    pub fn sample(&self, rng: &mut Prng) -> usize {
        let u = rng.uniform() * self.cdf[self.cdf.len() - 1];
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1) + 1
    }
}

/// Stack-machine check: a token equal to the top of the stack closes it, anything else opens.
pub fn is_balanced(line: &[usize]) -> bool {
    let mut stack = Vec::new();
    for &t in line {
        if stack.last() == Some(&t) {
            stack.pop();
        } else {
            stack.push(t);
        }
    }
    stack.is_empty()
}

/// Generates `token_count` tokens as independent balanced lines of
/// `line_length` tokens (the last line takes the remainder).
///
/// Word ids are Zipf ranks `1..=vocab_size`; id 0 is left free as a separator,
/// so the corpus vocabulary is `vocab_size + 1`.
pub fn gen_paren_zipf(cfg: &ParenZipfConfig, rng: &mut Prng) -> Result<Corpus> {
    if cfg.vocab_size < 1 {
        return Err(Error::Contract("paren-zipf vocab_size must be >= 1".into()));
    }
    if !cfg.token_count.is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "paren-zipf token_count must be even, got {}",
            cfg.token_count
        )));
    }
    if cfg.line_length < 2 || !cfg.line_length.is_multiple_of(2) {
        return Err(Error::Contract(format!(
            "paren-zipf line_length must be even and >= 2, got {}",
            cfg.line_length
        )));
    }
    if !(cfg.open_prob > 0.0 && cfg.open_prob < 1.0) {
        return Err(Error::Contract(format!(
            "open_prob must be in (0, 1), got {}",
            cfg.open_prob
        )));
    }
    let table = ZipfTable::new(cfg.vocab_size, cfg.exponent);
    let mut lines = Vec::with_capacity(cfg.token_count / cfg.line_length + 1);
    let mut remaining = cfg.token_count;
    while remaining > 0 {
        let len = remaining.min(cfg.line_length);
        lines.push(balanced_line(len, cfg.open_prob, &table, rng));
        remaining -= len;
    }
    Corpus::new(
        lines,
        cfg.vocab_size + 1,
        provenance(&[
            ("generator", "paren_zipf".into()),
            ("zipf_vocab", cfg.vocab_size.to_string()),
            ("token_count", cfg.token_count.to_string()),
            ("exponent", cfg.exponent.to_string()),
            ("open_prob", cfg.open_prob.to_string()),
            ("line_length", cfg.line_length.to_string()),
            ("seed", rng.seed().to_string()),
        ]),
    )
}

fn balanced_line(len: usize, open_prob: f64, table: &ZipfTable, rng: &mut Prng) -> Vec<usize> {
    let mut out = Vec::with_capacity(len);
    let mut stack: Vec<usize> = Vec::new();
    for emitted in 0..len {
        let budget = len - emitted;
        let open = if stack.is_empty() {
            true
        } else if budget == stack.len() {
            false
        } else {
            rng.uniform() < open_prob
        };
        if open {
            let w = table.sample(rng);
            stack.push(w);
            out.push(w);
        } else {
            out.push(stack.pop().expect("non-empty stack"));
        }
    }
    debug_assert!(stack.is_empty());
    out
}
