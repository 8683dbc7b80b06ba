#[path = "support/corpus_suite.rs"]
mod corpus_suite;

use eclab::corpora::{
    corpus_to_string, gen_paren_zipf, generate_corpus, is_balanced, parse_corpus, permute_corpus,
    random_speaker_corpus, speak_all, synthetic_world, Corpus, ParenZipfConfig, SyntheticWorldSpec,
};
use eclab::ecgame::{game_checkpoint, init_agents, Decode, GameConfig, CLS};
use eclab::metrics::unigram_stats;
use eclab::numcore::{ParamSet, Prng};
use proptest::prelude::*;

#[test]
fn paren_zipf_is_balanced_and_zipfian() {
    let c = corpus_suite::full_paren_zipf(0);
    assert_eq!(c.token_count(), 1_000_000);
    let (balanced, kl) = corpus_suite::balance_and_kl(&c);
    assert_eq!(balanced, 1.0);
    assert!(kl < 0.05, "kl {kl}");
    let h = corpus_suite::entropy(&c);
    assert!((6.0..=6.6).contains(&h), "entropy {h}");
    assert!((h - corpus_suite::analytic_zipf_entropy(5000)).abs() < 0.05);
}

#[test]
fn paren_zipf_is_seeded() {
    let cfg = ParenZipfConfig {
        token_count: 4096,
        vocab_size: 50,
        ..Default::default()
    };
    let a = gen_paren_zipf(&cfg, &mut Prng::new(3, 5)).unwrap();
    let b = gen_paren_zipf(&cfg, &mut Prng::new(3, 5)).unwrap();
    let c = gen_paren_zipf(&cfg, &mut Prng::new(4, 5)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.messages, c.messages);
}

fn world(objects: usize) -> eclab::corpora::SyntheticWorld {
    synthetic_world(&SyntheticWorldSpec {
        objects: Some(objects),
        seed: 9,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn greedy_generation_is_deterministic() {
    let cfg = GameConfig::default();
    let w = world(300);
    let ck = game_checkpoint(&cfg, 0, &init_agents(&cfg, &mut Prng::new(0, 1)));
    let a = generate_corpus(
        &ck,
        "x",
        &w.features,
        Decode::Greedy,
        false,
        &mut Prng::new(1, 5),
    )
    .unwrap();
    let b = generate_corpus(
        &ck,
        "x",
        &w.features,
        Decode::Greedy,
        false,
        &mut Prng::new(2, 5),
    )
    .unwrap();
    assert_eq!(a.messages, b.messages);
    let s1 = generate_corpus(
        &ck,
        "x",
        &w.features,
        Decode::Sample,
        false,
        &mut Prng::new(1, 5),
    )
    .unwrap();
    let s2 = generate_corpus(
        &ck,
        "x",
        &w.features,
        Decode::Sample,
        false,
        &mut Prng::new(1, 5),
    )
    .unwrap();
    assert_eq!(s1, s2);
    assert!(a.messages.iter().flatten().all(|&t| t != CLS));
}

#[test]
fn random_speaker_is_seeded_and_covers_vocabulary() {
    let cfg = GameConfig::default();
    let w = world(100_000);
    let a = random_speaker_corpus(&cfg, &w.features, 5).unwrap();
    let used = a.counts().iter().filter(|&&c| c > 0).count();
    let emittable = cfg.vocab_size - 1;
    assert!(
        used as f64 >= 0.9 * emittable as f64,
        "{used} of {emittable}"
    );
    let small = world(200);
    assert_eq!(
        random_speaker_corpus(&cfg, &small.features, 5).unwrap(),
        random_speaker_corpus(&cfg, &small.features, 5).unwrap()
    );
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn get(p: &ParamSet<f32>, name: &str) -> Vec<f64> {
    p.get(name)
        .unwrap()
        .data()
        .iter()
        .map(|&x| x as f64)
        .collect()
}

fn affine(x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let out = b.len();
    (0..out)
        .map(|j| {
            b[j] + x
                .iter()
                .enumerate()
                .map(|(i, xi)| xi * w[i * out + j])
                .sum::<f64>()
        })
        .collect()
}

/// Speaker rolled out by hand in f64 with an independent categorical sampler.
fn simulate_speaker(
    p: &ParamSet<f32>,
    cfg: &GameConfig,
    feature: &[f32],
    rng: &mut Prng,
) -> Vec<usize> {
    let h_dim = cfg.hidden;
    let emb = get(p, "spk.emb");
    let (w_zr, b_zr, w_h, b_h) = (
        get(p, "spk.gru.w_zr"),
        get(p, "spk.gru.b_zr"),
        get(p, "spk.gru.w_h"),
        get(p, "spk.gru.b_h"),
    );
    let (w_out, b_out) = (get(p, "spk.out.w"), get(p, "spk.out.b"));
    let f: Vec<f64> = feature.iter().map(|&x| x as f64).collect();
    let mut h = if cfg.feature_dim == h_dim {
        f
    } else {
        affine(&f, &get(p, "spk.proj.w"), &get(p, "spk.proj.b"))
    };
    let mut tok = CLS;
    let mut msg = Vec::new();
    for _ in 0..cfg.seq_len {
        let x = &emb[tok * h_dim..(tok + 1) * h_dim];
        let xh: Vec<f64> = x.iter().chain(&h).copied().collect();
        let zr = affine(&xh, &w_zr, &b_zr);
        let z: Vec<f64> = zr[..h_dim].iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<f64> = zr[h_dim..].iter().map(|&v| sigmoid(v)).collect();
        let xrh: Vec<f64> = x
            .iter()
            .copied()
            .chain((0..h_dim).map(|j| r[j] * h[j]))
            .collect();
        let cand = affine(&xrh, &w_h, &b_h);
        h = (0..h_dim)
            .map(|j| (1.0 - z[j]) * h[j] + z[j] * cand[j].tanh())
            .collect();
        let logits = affine(&h, &w_out, &b_out);
        let m = logits
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != CLS)
            .map(|(_, &l)| l)
            .fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, &l)| if i == CLS { 0.0 } else { (l - m).exp() })
            .collect();
        let total: f64 = weights.iter().sum();
        let u = rng.uniform() * total;
        let mut acc = 0.0;
        tok = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                tok = i;
                break;
            }
        }
        msg.push(tok);
    }
    msg
}

fn entropy_of(msgs: &[Vec<usize>], v: usize) -> f64 {
    let mut counts = vec![0u64; v];
    for t in msgs.iter().flatten() {
        counts[*t] += 1;
    }
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum()
}

#[test]
fn untrained_speaker_entropy_matches_simulation() {
    let cfg = GameConfig::default();
    let w = world(10_000);
    let params: ParamSet<f32> = init_agents(&cfg, &mut Prng::new(21, 1));
    let got = speak_all(
        &params,
        &cfg,
        &w.features,
        Decode::Sample,
        &mut Prng::new(1, 5),
    )
    .unwrap();
    let mut rng = Prng::new(2, 77);
    let sim: Vec<Vec<usize>> = (0..w.features.n())
        .map(|i| simulate_speaker(&params, &cfg, w.features.row(i), &mut rng))
        .collect();
    let (a, b) = (
        entropy_of(&got, cfg.vocab_size),
        entropy_of(&sim, cfg.vocab_size),
    );
    assert!((a - b).abs() <= 0.05 * b, "{a} vs {b}");
    let c = Corpus::new(
        got,
        cfg.vocab_size,
        [("generator".to_string(), "t".to_string())].into(),
    )
    .unwrap();
    assert!((unigram_stats(&c).unwrap().entropy - a).abs() < 1e-9);
}

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (
        2usize..40,
        prop::collection::vec(prop::collection::vec(0usize..1000, 0..12), 1..30),
    )
        .prop_map(|(v, msgs)| {
            let msgs = msgs
                .into_iter()
                .map(|m| m.into_iter().map(|t| t % v).collect())
                .collect();
            Corpus::new(
                msgs,
                v,
                [("generator".to_string(), "prop".to_string())].into(),
            )
            .unwrap()
        })
}

proptest! {
    #[test]
    fn corpus_text_round_trips(c in corpus_strategy()) {
        let text = corpus_to_string(&c);
        let back = parse_corpus(&text, None, "mem").unwrap();
        prop_assert_eq!(&back.messages, &c.messages);
        prop_assert_eq!(back.vocab_size, c.vocab_size);
        prop_assert_eq!(corpus_to_string(&back), text);
    }

    #[test]
    fn permutation_keeps_multisets(c in corpus_strategy(), seed in 0u64..1000) {
        let p = permute_corpus(&c, &mut Prng::new(seed, 5));
        prop_assert_eq!(p.counts(), c.counts());
        for (a, b) in c.messages.iter().zip(&p.messages) {
            let (mut a, mut b) = (a.clone(), b.clone());
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn paren_zipf_lines_always_balance(seed in 0u64..500, half in 1usize..40, vocab in 1usize..30) {
        let cfg = ParenZipfConfig { vocab_size: vocab, token_count: 2 * half * 3, line_length: 2 * half, ..Default::default() };
        let c = gen_paren_zipf(&cfg, &mut Prng::new(seed, 5)).unwrap();
        prop_assert_eq!(c.token_count(), cfg.token_count);
        prop_assert!(c.messages.iter().all(|m| is_balanced(m)));
        prop_assert!(c.messages.iter().flatten().all(|&t| (1..=vocab).contains(&t)));
    }
}
