#[path = "support/metric_suite.rs"]
#[allow(dead_code)]
mod metric_suite;

use eclab::corpora::{synthetic_world, Corpus, FeatureSet, SyntheticWorldSpec};
use eclab::metrics::{
    bleu4, levenshtein, pearson, perplexity, rouge_l, spearman, topographic_similarity,
    unigram_stats, TopoMode, ROUGE_BETA,
};
use proptest::prelude::*;

#[test]
fn levenshtein_matches_recursion() {
    metric_suite::levenshtein_matches_recursion();
}

#[test]
fn correlations_match_two_pass() {
    metric_suite::correlations_match_two_pass();
}

#[test]
fn toposim_matches_brute_force() {
    metric_suite::toposim_matches_brute_force();
}

#[test]
fn text_metrics_match_hand_examples() {
    metric_suite::text_metrics_match_hand_examples();
}

#[test]
fn perplexity_matches_dumped_token_log() {
    let nll = [0.3, 1.2, 2.5, 0.01, 0.7];
    let mean: f64 = nll.iter().sum::<f64>() / nll.len() as f64;
    let p = perplexity(nll.iter().sum(), nll.len()).unwrap();
    assert!((p - mean.exp()).abs() < 1e-12);
    assert!((perplexity(50.0f64.ln() * 7.0, 7).unwrap() - 50.0).abs() < 1e-9);
}

#[test]
fn uniform_corpus_entropy_is_log_vocab() {
    let msgs: Vec<Vec<usize>> = (0..100).map(|i| vec![i]).collect();
    let c = Corpus::new(
        msgs,
        100,
        [("generator".to_string(), "test".to_string())].into(),
    )
    .unwrap();
    let s = unigram_stats(&c).unwrap();
    assert!((s.entropy - 100f64.ln()).abs() < 1e-12);
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..8)
}

proptest! {
    #[test]
    fn levenshtein_is_a_metric(a in seq(), b in seq(), c in seq()) {
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert!(levenshtein(&a, &b) >= a.len().abs_diff(b.len()));
        prop_assert!(levenshtein(&a, &b) <= a.len().max(b.len()));
        prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(
        pairs in prop::collection::vec((0i32..20, 0i32..20), 3..40),
        scale in 1i32..5,
        shift in -10i32..10,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let xt: Vec<f64> = x.iter().map(|v| v * scale as f64 + shift as f64).collect();
        let yc: Vec<f64> = y.iter().map(|v| v * v * v).collect();
        match (spearman(&x, &y), spearman(&xt, &yc)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
        }
    }

    #[test]
    fn pearson_is_symmetric_and_bounded(v in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..30)) {
        let x: Vec<f64> = v.iter().map(|p| p.0).collect();
        let y: Vec<f64> = v.iter().map(|p| p.1).collect();
        if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn text_metrics_ignore_relabeling(
        cand in prop::collection::vec(0usize..6, 0..10),
        reference in prop::collection::vec(0usize..6, 1..10),
        offset in 1usize..100,
    ) {
        let relabel = |s: &[usize]| -> Vec<usize> { s.iter().map(|t| (t * 7 + offset) % 1000).collect() };
        let r1 = rouge_l(&cand, &reference, ROUGE_BETA).unwrap();
        let r2 = rouge_l(&relabel(&cand), &relabel(&reference), ROUGE_BETA).unwrap();
        prop_assert_eq!(r1, r2);
        let b1 = bleu4(std::slice::from_ref(&cand), std::slice::from_ref(&reference)).unwrap();
        let b2 = bleu4(&[relabel(&cand)], &[relabel(&reference)]).unwrap();
        prop_assert_eq!(b1, b2);
        prop_assert!((0.0..=1.0).contains(&r1.f) && (0.0..=1.0 + 1e-12).contains(&b1));
    }

    #[test]
    fn toposim_invariant_under_joint_permutation(seed in 0u64..1000, swaps in prop::collection::vec((0usize..12, 0usize..12), 0..20)) {
        let spec = SyntheticWorldSpec { attributes: 3, values: 3, noise: 0.1, objects: Some(12), seed };
        let w = synthetic_world(&spec).unwrap();
        let msgs: Vec<Vec<usize>> = (0..12).map(|i| w.captions.caption_of(i).unwrap()[1..4].to_vec()).collect();
        let prov = w.features.provenance.clone();
        let corpus = Corpus::new(msgs.clone(), w.captions.vocab_size, prov.clone()).unwrap();
        let base = topographic_similarity(&corpus, &w.features, TopoMode::Full).unwrap();
        let mut order: Vec<usize> = (0..12).collect();
        for (a, b) in swaps {
            order.swap(a, b);
        }
        let pm: Vec<Vec<usize>> = order.iter().map(|&i| msgs[i].clone()).collect();
        let pf: FeatureSet = w.features.select(&order).unwrap();
        let pc = Corpus::new(pm, w.captions.vocab_size, prov).unwrap();
        let perm = topographic_similarity(&pc, &pf, TopoMode::Full).unwrap();
        match (base.rho, perm.rho) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }
}
