use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROUGE_BETA: f64 = 1.2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeL {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

fn lcs<A: PartialEq>(a: &[A], b: &[A]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based precision, recall and `F_β`.
pub fn rouge_l<A: PartialEq>(candidate: &[A], reference: &[A], beta: f64) -> Result<RougeL> {
    if reference.is_empty() {
        return Err(Error::Contract("rouge_l reference is empty".into()));
    }
    let l = lcs(candidate, reference);
    if l == 0 {
        return Ok(RougeL {
            precision: 0.0,
            recall: 0.0,
            f: 0.0,
        });
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = beta * beta;
    Ok(RougeL {
        precision: p,
        recall: r,
        f: (1.0 + b2) * p * r / (r + b2 * p),
    })
}

fn ngram_counts<A: Eq + std::hash::Hash>(s: &[A], n: usize) -> HashMap<&[A], usize> {
    let mut m = HashMap::new();
    if s.len() >= n {
        for w in s.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Unsmoothed corpus-level BLEU-4 with one reference per candidate.
///
/// An order with no candidate n-grams at all contributes precision 1; an order
/// with candidate n-grams but no clipped match makes the score 0.
pub fn bleu4<A: Eq + std::hash::Hash>(candidates: &[Vec<A>], references: &[Vec<A>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Contract("bleu4 needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Shape {
            op: "bleu4",
            lhs: vec![candidates.len()],
            rhs: vec![references.len()],
        });
    }
    let mut log_p = 0.0;
    for n in 1..=4 {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let cc = ngram_counts(c, n);
            let rc = ngram_counts(r, n);
            for (g, &k) in &cc {
                matched += k.min(rc.get(g).copied().unwrap_or(0));
                total += k;
            }
        }
        if total == 0 {
            continue;
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_p += 0.25 * (matched as f64 / total as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let bp = if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    Ok(bp * log_p.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn rouge_examples() {
        let r = rouge_l(&w("a b c"), &w("a b c"), ROUGE_BETA).unwrap();
        assert_eq!((r.precision, r.recall, r.f), (1.0, 1.0, 1.0));
        let r = rouge_l(&w("a b c d"), &w("a c d"), ROUGE_BETA).unwrap();
        assert_eq!((r.precision, r.recall), (0.75, 1.0));
        assert_eq!(rouge_l(&w("x y"), &w("a b"), ROUGE_BETA).unwrap().f, 0.0);
    }

    #[test]
    fn bleu_examples() {
        let c = vec![w("the cat sat on the mat")];
        assert!((bleu4(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        let s = bleu4(&[w("the cat sat")], &[w("the cat sat on")]).unwrap();
        assert!((s - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
        let s = bleu4(&[w("a b c d e")], &[w("a b c x d e")]).unwrap();
        assert_eq!(s, 0.0);
        assert!(bleu4::<&str>(&[], &[]).is_err());
    }
}
