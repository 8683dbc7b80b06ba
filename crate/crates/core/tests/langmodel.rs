use eclab::corpora::Corpus;
use eclab::ecgame::{game_checkpoint, init_agents, GameConfig};
use eclab::langmodel::{
    corpus_perplexity, evaluate, lm_checkpoint, lm_finetune, lm_init, lm_param_count, lm_pretrain,
    lm_scratch, lm_train, load_lm, model_transfer_gru, retarget, transfer_experiment,
    transplant_speaker, Arch, LmConfig, Reinit, Splits, TransferPlan,
};
use eclab::numcore::{ParamSet, Prng};

fn corpus(msgs: Vec<Vec<usize>>, v: usize) -> Corpus {
    Corpus::new(
        msgs,
        v,
        [("generator".to_string(), "test".to_string())].into(),
    )
    .unwrap()
}

fn random_corpus(n: usize, v: usize, seed: u64) -> Corpus {
    let mut rng = Prng::new(seed, 2);
    let msgs = (0..n)
        .map(|_| {
            (0..2 + rng.below(6))
                .map(|_| 1 + rng.below(v - 1))
                .collect()
        })
        .collect();
    corpus(msgs, v)
}

fn tiny(arch: Arch) -> LmConfig {
    LmConfig {
        arch,
        layers: 1,
        heads: 2,
        dim: 16,
        ffn: 32,
        context: 16,
        batch_size: 8,
        total_steps: 20,
        eval_interval: 10,
        ..Default::default()
    }
}

fn block_params(d: usize, f: usize) -> usize {
    let ln = 2 * d;
    ln + (d * 3 * d + 3 * d) + (d * d + d) + ln + (d * f + f) + (f * d + d)
}

#[test]
fn parameter_count_matches_formula() {
    for (layers, d, f, ctx, v) in [(1, 8, 16, 4, 5), (2, 64, 256, 128, 30), (3, 12, 7, 9, 100)] {
        let cfg = LmConfig {
            layers,
            heads: 2,
            dim: d,
            ffn: f,
            context: ctx,
            vocab_size: v,
            ..Default::default()
        };
        let formula = v * d + ctx * d + layers * block_params(d, f) + 2 * d + d * v + v;
        let p: ParamSet<f32> = lm_init(&cfg, &mut Prng::new(0, 1)).unwrap();
        assert_eq!(lm_param_count(&cfg), formula);
        assert_eq!(p.numel(), formula);
        let gru = LmConfig {
            arch: Arch::Gru,
            ..cfg.clone()
        };
        let formula = v * d + (2 * d * 2 * d + 2 * d) + (2 * d * d + d) + d * v + v;
        let p: ParamSet<f32> = lm_init(&gru, &mut Prng::new(0, 1)).unwrap();
        assert_eq!(lm_param_count(&gru), formula);
        assert_eq!(p.numel(), formula);
    }
}

#[test]
fn initial_nll_is_near_log_vocab() {
    for arch in [Arch::Transformer, Arch::Gru] {
        let cfg = LmConfig {
            vocab_size: 40,
            ..tiny(arch)
        };
        let c = random_corpus(200, 40, 1);
        let p: ParamSet<f32> = lm_init(&cfg, &mut Prng::new(3, 1)).unwrap();
        let (nll, n) = evaluate(&p, &cfg, &c).unwrap();
        let per = nll / n as f64;
        assert!(
            (per - 40f64.ln()).abs() < 0.05 * 40f64.ln(),
            "{arch:?}: {per}"
        );
    }
}

#[test]
fn cyclic_corpus_is_memorised() {
    let c = corpus(vec![vec![1, 2, 3]; 400], 4);
    let splits = Splits::new(&c, 0.8, 0.1, 0).unwrap();
    let cfg = LmConfig {
        total_steps: 500,
        eval_interval: 100,
        learning_rate: 3e-3,
        ..tiny(Arch::Transformer)
    };
    let r = lm_scratch(&cfg, &splits).unwrap();
    assert!(r.test_ppl < 1.1, "ppl {}", r.test_ppl);
}

#[test]
fn pretraining_is_deterministic_and_zero_lr_keeps_init() {
    let c = random_corpus(300, 20, 2);
    let splits = Splits::new(&c, 0.8, 0.1, 0).unwrap();
    let cfg = tiny(Arch::Transformer);
    let a = lm_pretrain(&cfg, &splits).unwrap();
    let b = lm_pretrain(&cfg, &splits).unwrap();
    assert_eq!(a.best.to_bytes().unwrap(), b.best.to_bytes().unwrap());
    assert_eq!(a.log, b.log);
    let frozen = LmConfig {
        learning_rate: 0.0,
        vocab_size: 20,
        ..cfg
    };
    let init: ParamSet<f32> = lm_init(&frozen, &mut Prng::new(frozen.seed, 1)).unwrap();
    let run = lm_train(init.clone(), &frozen, &splits.train, &splits.valid).unwrap();
    assert_eq!(run.best_step, 0);
    assert_eq!(run.best.params, init);
}

#[test]
fn zero_step_finetune_equals_direct_evaluation() {
    let src = random_corpus(300, 20, 3);
    let tgt = random_corpus(300, 20, 4);
    let cfg = tiny(Arch::Transformer);
    let pre = lm_pretrain(&cfg, &Splits::new(&src, 0.8, 0.1, 0).unwrap()).unwrap();
    let target = Splits::new(&tgt, 0.8, 0.1, 0).unwrap();
    let ft = LmConfig {
        total_steps: 0,
        ..cfg
    };
    let r = lm_finetune(&pre.best, &target, &ft).unwrap();
    assert!(!r.reinitialized);
    let direct =
        corpus_perplexity(&pre.best.params, &load_lm(&pre.best).unwrap(), &target.test).unwrap();
    assert_eq!(r.test_ppl, direct);
}

#[test]
fn reinit_policy() {
    let cfg = LmConfig {
        vocab_size: 20,
        ..tiny(Arch::Transformer)
    };
    let src = lm_checkpoint(&cfg, 0, &lm_init(&cfg, &mut Prng::new(0, 1)).unwrap());
    let (same, re) = retarget(&src, &cfg).unwrap();
    assert!(!re);
    assert_eq!(same, src.params);
    let bigger = LmConfig {
        vocab_size: 33,
        ..cfg.clone()
    };
    let (p, re) = retarget(&src, &bigger).unwrap();
    assert!(re);
    assert_eq!(p.get("tok_emb").unwrap().shape(), &[33, 16]);
    assert_eq!(
        p.get("block0.qkv.w").unwrap(),
        src.params.get("block0.qkv.w").unwrap()
    );
    let always = LmConfig {
        reinit: Reinit::Always,
        ..cfg.clone()
    };
    let (p, re) = retarget(&src, &always).unwrap();
    assert!(re);
    assert_ne!(
        p.get("tok_emb").unwrap(),
        src.params.get("tok_emb").unwrap()
    );
    let other = LmConfig { dim: 32, ..cfg };
    assert!(retarget(&src, &other).is_err());
}

fn speaker() -> eclab::numcore::Checkpoint<f32> {
    let game = GameConfig {
        vocab_size: 20,
        hidden: 16,
        feature_dim: 8,
        ..Default::default()
    };
    game_checkpoint(&game, 7, &init_agents(&game, &mut Prng::new(1, 1)))
}

#[test]
fn transplant_copies_speaker_tensors_bit_for_bit() {
    let spk = speaker();
    let lm = transplant_speaker(&spk, &tiny(Arch::Gru)).unwrap();
    let pairs = [
        ("spk.emb", "tok_emb"),
        ("spk.out.w", "head.w"),
        ("spk.out.b", "head.b"),
        ("spk.gru.w_zr", "gru.w_zr"),
        ("spk.gru.b_zr", "gru.b_zr"),
        ("spk.gru.w_h", "gru.w_h"),
        ("spk.gru.b_h", "gru.b_h"),
    ];
    let dir = tempfile::tempdir().unwrap();
    lm.save(dir.path()).unwrap();
    let dumped = eclab::numcore::Checkpoint::<f32>::load(dir.path()).unwrap();
    for (from, to) in pairs {
        let bits = |t: &eclab::numcore::Tensor<f32>| {
            t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(
            bits(spk.params.get(from).unwrap()),
            bits(dumped.params.get(to).unwrap()),
            "{to}"
        );
    }
    assert_eq!(dumped.params.len(), pairs.len());
    assert!(transplant_speaker(&spk, &tiny(Arch::Transformer)).is_err());
}

#[test]
fn zero_step_model_transfer_is_deterministic() {
    let spk = speaker();
    let target = Splits::new(&random_corpus(200, 20, 5), 0.8, 0.1, 0).unwrap();
    let cfg = LmConfig {
        total_steps: 0,
        ..tiny(Arch::Gru)
    };
    let a = model_transfer_gru(&spk, &target, &cfg).unwrap();
    let b = model_transfer_gru(&spk, &target, &cfg).unwrap();
    assert!(!a.reinitialized);
    assert_eq!(a.test_ppl, b.test_ppl);
    let lm = transplant_speaker(&spk, &cfg).unwrap();
    let direct = corpus_perplexity(&lm.params, &load_lm(&lm).unwrap(), &target.test).unwrap();
    assert_eq!(a.test_ppl, direct);
}

#[test]
fn transfer_plans_produce_reproducible_tables() {
    let target = Splits::new(&random_corpus(200, 12, 6), 0.8, 0.1, 0).unwrap();
    let plan = TransferPlan {
        sources: vec![],
        target: target.clone(),
        scratch: true,
        model_transfer: None,
        gru_source: None,
        lm: tiny(Arch::Transformer),
        gru: tiny(Arch::Gru),
        pretrain_steps: 5,
        finetune_steps: 5,
        seeds: vec![0],
    };
    let r = transfer_experiment(&plan);
    assert_eq!(r.cells.len(), 1);
    assert_eq!(r.cells[0].cell, "scratch");
    let full = TransferPlan {
        sources: vec![("ec".into(), random_corpus(300, 20, 7))],
        model_transfer: Some(speaker()),
        gru_source: Some("ec".into()),
        seeds: vec![0, 1],
        ..plan
    };
    let a = transfer_experiment(&full);
    assert_eq!(a.cells.len(), 8);
    assert!(a.cells.iter().all(|c| c.error.is_none()), "{}", a.table());
    assert_eq!(a, transfer_experiment(&full));
}
