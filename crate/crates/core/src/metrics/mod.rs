//! Evaluation arithmetic: distances, rank statistics, compositionality,
//! unigram statistics, caption metrics and perplexity.

mod text;
mod topo;

use serde::{Deserialize, Serialize};

use crate::corpora::Corpus;
use crate::error::{Error, Result};

pub use text::{bleu4, rouge_l, RougeL, ROUGE_BETA};
pub use topo::{topographic_similarity, TopoMode, TopoSimReport};

/// Unit-cost edit distance.
pub fn levenshtein<A: PartialEq>(a: &[A], b: &[A]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `−(u·v) / (‖u‖‖v‖)`.
pub fn neg_cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape {
            op: "neg_cosine",
            lhs: vec![u.len()],
            rhs: vec![v.len()],
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Undefined("zero-norm vector in cosine".into()));
    }
    Ok(-dot / (nu.sqrt() * nv.sqrt()))
}

/// Fractional ranks (1-based, ties share their average rank).
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            r[o] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(format!(
            "pearson needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 {
        return Err(Error::Undefined("zero variance in first list".into()));
    }
    if syy == 0.0 {
        return Err(Error::Undefined("zero variance in second list".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of average-tie ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(format!(
            "spearman needs equal lengths >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    pearson(&ranks(x), &ranks(y))
}

/// `exp(nll_total / token_count)`.
pub fn perplexity(nll_total_nats: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::Contract("perplexity over zero tokens".into()));
    }
    Ok((nll_total_nats / token_count as f64).exp())
}

/// `Σ p ln(p/q)` over entries with `p > 0`; `q` must cover the support of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape {
            op: "kl_divergence",
            lhs: vec![p.len()],
            rhs: vec![q.len()],
        });
    }
    let mut kl = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(Error::Undefined("q is zero where p is positive".into()));
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnigramReport {
    pub vocab_size: usize,
    pub tokens: u64,
    pub counts: Vec<u64>,
    /// Empirical entropy in nats.
    pub entropy: f64,
    pub used_vocab: usize,
    /// `s` in `freq ∝ rank^-s`, least squares in log–log space; `None` with < 2 used tokens.
    pub zipf_exponent: Option<f64>,
}

pub fn unigram_stats(corpus: &Corpus) -> Result<UnigramReport> {
    let counts = corpus.counts();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Contract("unigram_stats of an empty corpus".into()));
    }
    let tf = total as f64;
    let entropy = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / tf;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0);
    let mut used: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
    used.sort_unstable_by(|a, b| b.cmp(a));
    let zipf_exponent = if used.len() >= 2 {
        let xs: Vec<f64> = (1..=used.len()).map(|r| (r as f64).ln()).collect();
        let ys: Vec<f64> = used.iter().map(|&c| (c as f64).ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        Some(-sxy / sxx)
    } else {
        None
    };
    Ok(UnigramReport {
        vocab_size: corpus.vocab_size,
        tokens: total,
        used_vocab: used.len(),
        counts,
        entropy,
        zipf_exponent,
    })
}
