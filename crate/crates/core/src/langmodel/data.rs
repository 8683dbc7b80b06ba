use crate::corpora::Corpus;
use crate::error::{Error, Result};
use crate::numcore::{prng::stream, Prng};

/// Token id placed after every message when packing.
pub const SEPARATOR: usize = 0;

/// Messages joined into one stream, each followed by the separator.
pub fn pack(corpus: &Corpus) -> Vec<usize> {
    let mut s = Vec::with_capacity(corpus.token_count() + corpus.len());
    for m in &corpus.messages {
        s.extend_from_slice(m);
        s.push(SEPARATOR);
    }
    s
}

/// Disjoint train/valid/test message splits.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
}

impl Splits {
    /// Shuffles message indices with `seed` and cuts them by `fractions` (train, valid; test gets the rest).
    pub fn new(corpus: &Corpus, train: f64, valid: f64, seed: u64) -> Result<Splits> {
        if !(train > 0.0 && valid > 0.0 && train + valid < 1.0) {
            return Err(Error::Contract(format!(
                "bad split fractions {train}/{valid}"
            )));
        }
        let n = corpus.len();
        let mut idx: Vec<usize> = (0..n).collect();
        Prng::new(seed, stream::SPLIT).shuffle(&mut idx);
        let a = (n as f64 * train).round() as usize;
        let b = a + (n as f64 * valid).round() as usize;
        if a == 0 || b <= a || b >= n {
            return Err(Error::Contract(format!(
                "corpus of {n} messages is too small to split"
            )));
        }
        let part = |ids: &[usize], name: &str| {
            Corpus::new(
                ids.iter().map(|&i| corpus.messages[i].clone()).collect(),
                corpus.vocab_size,
                corpus.provenance.clone(),
            )
            .map(|c| {
                c.with_provenance("split", name)
                    .with_provenance("split_seed", seed)
            })
        };
        Ok(Splits {
            train: part(&idx[..a], "train")?,
            valid: part(&idx[a..b], "valid")?,
            test: part(&idx[b..], "test")?,
        })
    }
}

/// `batch` random windows of `len` tokens.
pub(crate) fn sample_windows(
    stream: &[usize],
    len: usize,
    batch: usize,
    rng: &mut Prng,
) -> Vec<Vec<usize>> {
    (0..batch)
        .map(|_| {
            let start = rng.below(stream.len() - len + 1);
            stream[start..start + len].to_vec()
        })
        .collect()
}

/// Consecutive windows of up to `context + 1` tokens overlapping by one, so
/// every token after the first is predicted exactly once.
pub(crate) fn eval_windows(stream: &[usize], context: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < stream.len() {
        let end = (start + context + 1).min(stream.len());
        out.push(stream[start..end].to_vec());
        start = end - 1;
    }
    out
}
