use crate::error::{Error, Result};
use crate::numcore::Prng;

use super::{provenance, Corpus, FeatureSet, FeatureStats};

/// Shuffles the tokens of every message independently.
pub fn permute_corpus(corpus: &Corpus, rng: &mut Prng) -> Corpus {
    let messages = corpus
        .messages
        .iter()
        .map(|m| {
            let mut m = m.clone();
            rng.shuffle(&mut m);
            m
        })
        .collect();
    let mut prov = corpus.provenance.clone();
    let parent = prov.get("generator").cloned().unwrap_or_default();
    prov.insert("generator".into(), "permute".into());
    prov.insert("parent_generator".into(), parent);
    prov.insert("permute_seed".into(), rng.seed().to_string());
    Corpus {
        messages,
        vocab_size: corpus.vocab_size,
        provenance: prov,
    }
}

/// `n` rows with coordinate `d` drawn from `Normal(mean[d], std[d])`.
pub fn random_inputs(stats: &FeatureStats, n: usize, rng: &mut Prng) -> Result<FeatureSet> {
    if n == 0 {
        return Err(Error::Contract("random_inputs needs n >= 1".into()));
    }
    let d = stats.mean.len();
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        for (m, s) in stats.mean.iter().zip(&stats.std) {
            let z = rng.normal();
            rows.push((m + s * z) as f32);
        }
    }
    FeatureSet::new(
        n,
        d,
        rows,
        provenance(&[
            ("generator", "random_inputs".into()),
            ("seed", rng.seed().to_string()),
        ]),
    )
}
