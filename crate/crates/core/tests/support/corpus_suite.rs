//! paren-zipf corpus checks at full size.

use eclab::corpora::{gen_paren_zipf, is_balanced, zipf_probabilities, Corpus, ParenZipfConfig};
use eclab::metrics::unigram_stats;
use eclab::numcore::{prng::stream, Prng};

pub fn full_paren_zipf(seed: u64) -> Corpus {
    gen_paren_zipf(
        &ParenZipfConfig::default(),
        &mut Prng::new(seed, stream::CORPUS),
    )
    .unwrap()
}

/// Fraction of balanced lines and `KL(empirical ‖ Zipf)` in nats.
pub fn balance_and_kl(c: &Corpus) -> (f64, f64) {
    let balanced = c.messages.iter().filter(|m| is_balanced(m)).count() as f64 / c.len() as f64;
    let counts = c.counts();
    let total: u64 = counts[1..].iter().sum();
    let q = zipf_probabilities(counts.len() - 1, 1.0);
    let mut kl = 0.0;
    for (k, &n) in counts[1..].iter().enumerate() {
        if n > 0 {
            let p = n as f64 / total as f64;
            kl += p * (p / q[k]).ln();
        }
    }
    (balanced, kl)
}

pub fn entropy(c: &Corpus) -> f64 {
    unigram_stats(c).unwrap().entropy
}

pub fn analytic_zipf_entropy(n: usize) -> f64 {
    zipf_probabilities(n, 1.0).iter().map(|p| -p * p.ln()).sum()
}
