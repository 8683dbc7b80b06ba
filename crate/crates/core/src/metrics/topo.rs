use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpora::{Corpus, FeatureSet};
use crate::error::{Error, Result};
use crate::numcore::{prng::stream, Prng};

use super::{levenshtein, neg_cosine, pearson, ranks};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopoMode {
    Full,
    /// `pairs` distinct unordered pairs drawn uniformly.
    Sampled {
        pairs: usize,
        seed: u64,
    },
}

impl TopoMode {
    pub const FULL_LIMIT: usize = 2000;
    pub const DEFAULT_PAIRS: usize = 100_000;

    /// Full for `n <= 2000`, otherwise 100k sampled pairs.
    pub fn auto(n: usize, seed: u64) -> Self {
        if n <= Self::FULL_LIMIT {
            TopoMode::Full
        } else {
            TopoMode::Sampled {
                pairs: Self::DEFAULT_PAIRS,
                seed,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopoSimReport {
    /// `None` when either distance list has zero variance.
    pub rho: Option<f64>,
    pub undefined_reason: Option<String>,
    pub pairs: usize,
    pub mode: TopoMode,
}

/// Spearman correlation between message edit distances and negative-cosine
/// feature distances over pairs `i < j`.
pub fn topographic_similarity(
    corpus: &Corpus,
    features: &FeatureSet,
    mode: TopoMode,
) -> Result<TopoSimReport> {
    let n = corpus.len();
    if n != features.n() {
        return Err(Error::Contract(format!(
            "corpus has {n} messages but features have {} rows",
            features.n()
        )));
    }
    if n < 3 {
        return Err(Error::Contract(format!("toposim needs N >= 3, got {n}")));
    }
    let total = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = match mode {
        TopoMode::Sampled { pairs, seed } if pairs < total => {
            let mut rng = Prng::new(seed, stream::TOPOSIM);
            let mut set = BTreeSet::new();
            while set.len() < pairs {
                let i = rng.below(n);
                let j = rng.below(n);
                if i != j {
                    set.insert((i.min(j), i.max(j)));
                }
            }
            set.into_iter().collect()
        }
        _ => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect(),
    };
    let msgs = &corpus.messages;
    let mut ed = Vec::with_capacity(pairs.len());
    let mut cs = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        ed.push(levenshtein(&msgs[i], &msgs[j]) as f64);
        match neg_cosine(features.row(i), features.row(j)) {
            Ok(c) => cs.push(c),
            Err(Error::Undefined(r)) => return Ok(undefined(r, pairs.len(), mode)),
            Err(e) => return Err(e),
        }
    }
    let constant = |v: &[f64]| v.iter().all(|&x| x == v[0]);
    if constant(&ed) {
        return Ok(undefined(
            "zero edit-distance variance".into(),
            pairs.len(),
            mode,
        ));
    }
    if constant(&cs) {
        return Ok(undefined(
            "zero feature-distance variance".into(),
            pairs.len(),
            mode,
        ));
    }
    let rho = pearson(&ranks(&ed), &ranks(&cs))?;
    Ok(TopoSimReport {
        rho: Some(rho),
        undefined_reason: None,
        pairs: pairs.len(),
        mode,
    })
}

fn undefined(reason: String, pairs: usize, mode: TopoMode) -> TopoSimReport {
    TopoSimReport {
        rho: None,
        undefined_reason: Some(reason),
        pairs,
        mode,
    }
}
