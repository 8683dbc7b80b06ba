//! Corpora, feature sets and everything that produces them.

mod ablate;
mod generate;
mod io;
mod paren_zipf;
mod world;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub use ablate::{permute_corpus, random_inputs};
pub use generate::{generate_corpus, random_speaker_corpus, speak_all, truncate_at_zero};
pub use io::{
    corpus_to_string, features_to_bytes, parse_corpus, parse_features, read_corpus, read_features,
    read_vocab, write_corpus, write_features, write_vocab,
};
pub use paren_zipf::{gen_paren_zipf, is_balanced, zipf_probabilities, ParenZipfConfig, ZipfTable};
pub use world::{synthetic_world, CaptionSet, SyntheticWorld, SyntheticWorldSpec};

/// One emergent or natural message: token ids.
pub type Message = Vec<usize>;

/// Ordered `key=value` record of how an artifact was produced.
pub type Provenance = BTreeMap<String, String>;

/// A list of messages over a declared vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub messages: Vec<Message>,
    pub vocab_size: usize,
    pub provenance: Provenance,
}

impl Corpus {
    pub fn new(messages: Vec<Message>, vocab_size: usize, provenance: Provenance) -> Result<Self> {
        let c = Corpus {
            messages,
            vocab_size,
            provenance,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, m) in self.messages.iter().enumerate() {
            if let Some(&t) = m.iter().find(|&&t| t >= self.vocab_size) {
                return Err(Error::Contract(format!(
                    "message {i} has token {t} >= vocab size {}",
                    self.vocab_size
                )));
            }
        }
        if self.provenance.is_empty() {
            return Err(Error::Contract("corpus provenance is empty".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.messages.iter().map(Vec::len).sum()
    }

    /// Per-token counts over the declared vocabulary.
    pub fn counts(&self) -> Vec<u64> {
        let mut c = vec![0u64; self.vocab_size];
        for m in &self.messages {
            for &t in m {
                c[t] += 1;
            }
        }
        c
    }

    pub fn with_provenance(mut self, key: &str, value: impl ToString) -> Self {
        self.provenance.insert(key.to_string(), value.to_string());
        self
    }
}

/// `N × D` perceptual feature vectors, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    n: usize,
    d: usize,
    rows: Vec<f32>,
    pub provenance: Provenance,
}

impl FeatureSet {
    pub fn new(n: usize, d: usize, rows: Vec<f32>, provenance: Provenance) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Contract(format!(
                "feature set must be non-empty, got {n}×{d}"
            )));
        }
        if rows.len() != n * d {
            return Err(Error::Shape {
                op: "feature_set",
                lhs: vec![n, d],
                rhs: vec![rows.len()],
            });
        }
        if let Some(i) = rows.iter().position(|x| !x.is_finite()) {
            return Err(Error::Contract(format!(
                "feature row {} is not finite",
                i / d
            )));
        }
        Ok(FeatureSet {
            n,
            d,
            rows,
            provenance,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn data(&self) -> &[f32] {
        &self.rows
    }

    /// New feature set made of rows `idx` (in order).
    pub fn select(&self, idx: &[usize]) -> Result<FeatureSet> {
        let mut rows = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            rows.extend_from_slice(self.row(i));
        }
        FeatureSet::new(idx.len(), self.d, rows, self.provenance.clone())
    }

    /// Gathers rows into a contiguous `f64`-convertible buffer.
    pub fn gather<T: crate::numcore::Scalar>(&self, idx: &[usize]) -> Vec<T> {
        let mut out = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            out.extend(self.row(i).iter().map(|&x| T::from_f64(x as f64)));
        }
        out
    }

    pub fn stats(&self) -> FeatureStats {
        let n = self.n as f64;
        let mut mean = vec![0.0; self.d];
        for i in 0..self.n {
            for (m, &x) in mean.iter_mut().zip(self.row(i)) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; self.d];
        for i in 0..self.n {
            for ((v, &x), m) in var.iter_mut().zip(self.row(i)).zip(&mean) {
                *v += (x as f64 - m).powi(2);
            }
        }
        FeatureStats {
            mean,
            std: var.iter().map(|v| (v / n).sqrt()).collect(),
        }
    }
}

/// Per-dimension mean and (population) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub(crate) fn provenance(pairs: &[(&str, String)]) -> Provenance {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_rejects_out_of_vocab() {
        let p = provenance(&[("generator", "test".into())]);
        assert!(Corpus::new(vec![vec![1, 8]], 8, p.clone()).is_err());
        assert!(Corpus::new(vec![vec![1, 7]], 8, p).is_ok());
    }

    #[test]
    fn corpus_requires_provenance() {
        assert!(Corpus::new(vec![vec![0]], 2, Provenance::new()).is_err());
    }

    #[test]
    fn stats_of_constant_rows() {
        let f =
            FeatureSet::new(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0], Provenance::new()).unwrap();
        let s = f.stats();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.std, vec![0.0, 0.0]);
    }
}
