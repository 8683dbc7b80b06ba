//! Metric implementations checked against independent oracles.

use eclab::corpora::{synthetic_world, Corpus, SyntheticWorldSpec};
use eclab::metrics::{
    bleu4, levenshtein, pearson, rouge_l, spearman, topographic_similarity, TopoMode, ROUGE_BETA,
};
use eclab::numcore::Prng;

fn lev_rec(a: &[usize], b: &[usize]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let del = lev_rec(ra, b) + 1;
            let ins = lev_rec(a, rb) + 1;
            let sub = lev_rec(ra, rb) + usize::from(x != y);
            del.min(ins).min(sub)
        }
    }
}

fn random_seq(rng: &mut Prng, max_len: usize, alphabet: usize) -> Vec<usize> {
    let n = rng.below(max_len + 1);
    (0..n).map(|_| rng.below(alphabet)).collect()
}

pub fn levenshtein_matches_recursion() {
    let mut rng = Prng::new(11, 1);
    for _ in 0..1000 {
        let a = random_seq(&mut rng, 6, 3);
        let b = random_seq(&mut rng, 6, 3);
        assert_eq!(levenshtein(&a, &b), lev_rec(&a, &b), "{a:?} vs {b:?}");
    }
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..x.len() {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..x.len() {
        cov += (x[i] - mx) * (y[i] - my);
        vx += (x[i] - mx) * (x[i] - mx);
        vy += (y[i] - my) * (y[i] - my);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Rank = 1 + #smaller + (#equal − 1)/2.
fn count_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count();
            let equal = x.iter().filter(|&&w| w == v).count();
            1.0 + less as f64 + (equal as f64 - 1.0) / 2.0
        })
        .collect()
}

pub fn correlations_match_two_pass() {
    let mut rng = Prng::new(12, 1);
    for _ in 0..100 {
        let n = 3 + rng.below(98);
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + rng.normal()).collect();
        let p = pearson(&x, &y).unwrap();
        assert!((p - two_pass_pearson(&x, &y)).abs() < 1e-12);
        let xt: Vec<f64> = (0..n).map(|_| rng.below(7) as f64).collect();
        let yt: Vec<f64> = xt
            .iter()
            .map(|v| (v + rng.below(4) as f64).floor())
            .collect();
        let s = spearman(&xt, &yt).unwrap();
        let oracle = two_pass_pearson(&count_ranks(&xt), &count_ranks(&yt));
        assert!((s - oracle).abs() < 1e-12, "{s} vs {oracle}");
    }
}

fn brute_toposim(messages: &[Vec<usize>], rows: &[Vec<f32>]) -> Option<f64> {
    let mut ed = Vec::new();
    let mut cd = Vec::new();
    for i in 0..messages.len() {
        for j in i + 1..messages.len() {
            ed.push(lev_rec(&messages[i], &messages[j]) as f64);
            let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
            for (&a, &b) in rows[i].iter().zip(&rows[j]) {
                let (a, b) = (a as f64, b as f64);
                dot += a * b;
                nu += a * a;
                nv += b * b;
            }
            cd.push(-dot / (nu.sqrt() * nv.sqrt()));
        }
    }
    let varies = |v: &[f64]| v.iter().any(|&x| x != v[0]);
    if !varies(&ed) || !varies(&cd) {
        return None;
    }
    Some(two_pass_pearson(&count_ranks(&ed), &count_ranks(&cd)).clamp(-1.0, 1.0))
}

pub fn toposim_matches_brute_force() {
    let mut rng = Prng::new(13, 1);
    for w in 0..20 {
        let spec = SyntheticWorldSpec {
            attributes: 2 + rng.below(2),
            values: 2 + rng.below(3),
            noise: if w % 2 == 0 { 0.0 } else { 0.1 },
            objects: Some(4 + rng.below(12)),
            seed: w,
        };
        let world = synthetic_world(&spec).unwrap();
        let n = world.features.n();
        let messages: Vec<Vec<usize>> = if w % 4 < 2 {
            (0..n)
                .map(|i| world.captions.caption_of(i).unwrap().clone())
                .collect()
        } else {
            (0..n)
                .map(|_| (0..1 + rng.below(4)).map(|_| 2 + rng.below(3)).collect())
                .collect()
        };
        let vocab = messages.iter().flatten().max().unwrap() + 1;
        let corpus =
            Corpus::new(messages.clone(), vocab, world.features.provenance.clone()).unwrap();
        let rows: Vec<Vec<f32>> = (0..n).map(|i| world.features.row(i).to_vec()).collect();
        let got = topographic_similarity(&corpus, &world.features, TopoMode::Full).unwrap();
        assert_eq!(got.rho, brute_toposim(&messages, &rows), "world {w}");
        assert_eq!(got.rho.is_none(), got.undefined_reason.is_some());
    }
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

pub fn text_metrics_match_hand_examples() {
    let r = rouge_l(&words("a b c d"), &words("a c d"), ROUGE_BETA).unwrap();
    assert!((r.precision - 0.75).abs() < 1e-9 && (r.recall - 1.0).abs() < 1e-9);
    let b2 = ROUGE_BETA * ROUGE_BETA;
    let f = (1.0 + b2) * 0.75 / (1.0 + b2 * 0.75);
    assert!((r.f - f).abs() < 1e-9);
    let same = rouge_l(&words("x y z"), &words("x y z"), ROUGE_BETA).unwrap();
    assert!((same.f - 1.0).abs() < 1e-9);
    assert!(
        rouge_l(&words("p q"), &words("x y"), ROUGE_BETA)
            .unwrap()
            .f
            .abs()
            < 1e-9
    );
    let s = bleu4(&[words("the cat sat")], &[words("the cat sat on")]).unwrap();
    assert!((s - (-1.0f64 / 3.0).exp()).abs() < 1e-9, "{s}");
    assert!((s - 0.7165).abs() < 1e-4);
    let c = vec![words("a b c d e f"), words("g h i j")];
    assert!((bleu4(&c, &c).unwrap() - 1.0).abs() < 1e-9);
    let s = bleu4(&[words("a b c x d e")], &[words("a b c y d e")]).unwrap();
    assert_eq!(s, 0.0);
}

pub const ALL: &[(&str, fn())] = &[
    (
        "levenshtein_matches_recursion",
        levenshtein_matches_recursion,
    ),
    ("correlations_match_two_pass", correlations_match_two_pass),
    ("toposim_matches_brute_force", toposim_matches_brute_force),
    (
        "text_metrics_match_hand_examples",
        text_metrics_match_hand_examples,
    ),
];
