use serde::{Deserialize, Serialize};

use crate::corpora::Corpus;
use crate::ecgame::{load_game, spk_gru, spk_out};
use crate::error::{Error, Result};
use crate::metrics::perplexity;
use crate::numcore::{
    prng::stream, AdamConfig, AdamState, Checkpoint, Graph, ParamSet, Prng, Tensor,
};

use super::config::{Arch, LmConfig, Reinit};
use super::data::{eval_windows, pack, sample_windows, Splits};
use super::model::{gru, init_vocab_params, lm_init, lm_log_probs, lm_meta, lm_nll};

pub const LM_KIND: &str = "lm";

pub fn lm_checkpoint(cfg: &LmConfig, step: u64, params: &ParamSet<f32>) -> Checkpoint<f32> {
    Checkpoint::new(
        LM_KIND,
        step,
        serde_json::to_value(cfg).expect("config serializes"),
        params.clone(),
    )
    .with_meta(lm_meta(cfg))
}

pub fn load_lm(ckpt: &Checkpoint<f32>) -> Result<LmConfig> {
    if ckpt.kind != LM_KIND {
        return Err(Error::Contract(format!(
            "expected an {LM_KIND} checkpoint, got {}",
            ckpt.kind
        )));
    }
    let cfg: LmConfig = serde_json::from_value(ckpt.config.clone())?;
    cfg.validate()?;
    Ok(cfg)
}

/// NLL (nats) of every predicted token of the packed corpus, in stream order.
pub fn token_nlls(params: &ParamSet<f32>, cfg: &LmConfig, corpus: &Corpus) -> Result<Vec<f64>> {
    let stream = pack(corpus);
    let windows = eval_windows(&stream, cfg.context);
    let mut out = Vec::with_capacity(stream.len());
    let mut i = 0;
    while i < windows.len() {
        let len = windows[i].len();
        let mut j = i;
        while j < windows.len() && j - i < 32 && windows[j].len() == len {
            j += 1;
        }
        let batch = &windows[i..j];
        let mut g = Graph::<f32>::new();
        let logp = lm_log_probs(&mut g, params, cfg, batch)?;
        let lp = g.value(logp);
        let v = cfg.vocab_size;
        let t = len - 1;
        for (w, win) in batch.iter().enumerate() {
            for s in 0..t {
                let row = match cfg.arch {
                    Arch::Transformer => w * t + s,
                    Arch::Gru => s * batch.len() + w,
                };
                out.push(-(lp[row * v + win[s + 1]] as f64));
            }
        }
        i = j;
    }
    Ok(out)
}

/// Total NLL and token count over a corpus.
pub fn evaluate(params: &ParamSet<f32>, cfg: &LmConfig, corpus: &Corpus) -> Result<(f64, usize)> {
    let nll = token_nlls(params, cfg, corpus)?;
    Ok((nll.iter().sum(), nll.len()))
}

pub fn corpus_perplexity(params: &ParamSet<f32>, cfg: &LmConfig, corpus: &Corpus) -> Result<f64> {
    let (nll, n) = evaluate(params, cfg, corpus)?;
    perplexity(nll, n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmLogEntry {
    pub step: u64,
    /// Mean per-token NLL of the step's batch (absent at step 0).
    pub train_nll: Option<f64>,
    pub valid_nll: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct LmRun {
    /// Parameters at the lowest validation NLL (earliest on ties).
    pub best: Checkpoint<f32>,
    pub best_step: u64,
    pub best_valid_nll: f64,
    pub log: Vec<LmLogEntry>,
}

/// Next-token training from `params`, validating at step 0, every
/// `eval_interval` steps and at the end.
pub fn lm_train(
    mut params: ParamSet<f32>,
    cfg: &LmConfig,
    train: &Corpus,
    valid: &Corpus,
) -> Result<LmRun> {
    let cfg = cfg.resolve_vocab(train.vocab_size.max(valid.vocab_size))?;
    cfg.validate()?;
    let stream = pack(train);
    if stream.len() < 2 {
        return Err(Error::Contract("training corpus is too short".into()));
    }
    let len = (cfg.context + 1).min(stream.len());
    let mut rng = Prng::new(cfg.seed, stream::DATA);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate));
    let valid_nll = |p: &ParamSet<f32>| -> Result<f64> {
        let (nll, n) = evaluate(p, &cfg, valid)?;
        Ok(nll / n as f64)
    };
    let v0 = valid_nll(&params)?;
    let mut log = vec![LmLogEntry {
        step: 0,
        train_nll: None,
        valid_nll: Some(v0),
    }];
    let mut best = (lm_checkpoint(&cfg, 0, &params), 0, v0);
    for step in 1..=cfg.total_steps {
        let windows = sample_windows(&stream, len, cfg.batch_size, &mut rng);
        let mut g = Graph::<f32>::new();
        let diverged = |e: Error| match e {
            Error::NonFinite { op } => Error::Divergence {
                step,
                reason: format!("non-finite value in {op}"),
            },
            e => e,
        };
        let (total, n) = lm_nll(&mut g, &params, &cfg, &windows).map_err(diverged)?;
        let loss = g.scale(total, 1.0 / n as f32)?;
        let train_nll = g.scalar(loss) as f64;
        g.backward_into(loss, &mut params).map_err(diverged)?;
        adam.step(&mut params)?;
        let mut entry = LmLogEntry {
            step,
            train_nll: Some(train_nll),
            valid_nll: None,
        };
        if step % cfg.eval_interval == 0 || step == cfg.total_steps {
            let v = valid_nll(&params)?;
            if !v.is_finite() {
                return Err(Error::Divergence {
                    step,
                    reason: "validation NLL is not finite".into(),
                });
            }
            entry.valid_nll = Some(v);
            if v < best.2 {
                best = (lm_checkpoint(&cfg, step, &params), step, v);
            }
        }
        log.push(entry);
    }
    Ok(LmRun {
        best: best.0,
        best_step: best.1,
        best_valid_nll: best.2,
        log,
    })
}

#[derive(Clone, Debug)]
pub struct FinetuneReport {
    pub run: LmRun,
    pub test_ppl: f64,
    pub reinitialized: bool,
}

/// Pre-training from scratch on a source corpus.
pub fn lm_pretrain(cfg: &LmConfig, splits: &Splits) -> Result<LmRun> {
    let cfg = cfg.resolve_vocab(splits.train.vocab_size)?;
    let params = lm_init(&cfg, &mut Prng::new(cfg.seed, stream::INIT))?;
    lm_train(params, &cfg, &splits.train, &splits.valid)
}

/// Fresh model trained on the target splits; test perplexity at best validation.
pub fn lm_scratch(cfg: &LmConfig, target: &Splits) -> Result<FinetuneReport> {
    let run = lm_pretrain(cfg, target)?;
    let test_ppl = corpus_perplexity(&run.best.params, &load_lm(&run.best)?, &target.test)?;
    Ok(FinetuneReport {
        run,
        test_ppl,
        reinitialized: true,
    })
}

/// Source parameters re-targeted to `cfg`'s vocabulary: every body tensor is
/// copied, and the token embedding and head are re-initialised per `cfg.reinit`.
pub fn retarget(source: &Checkpoint<f32>, cfg: &LmConfig) -> Result<(ParamSet<f32>, bool)> {
    let src = load_lm(source)?;
    if !src.same_body(cfg) {
        return Err(Error::Contract(format!(
            "source architecture {:?}/{}x{} does not match target {:?}/{}x{}",
            src.arch, src.layers, src.dim, cfg.arch, cfg.layers, cfg.dim
        )));
    }
    let mut params = source.params.clone();
    let reinit = cfg.reinit == Reinit::Always || src.vocab_size != cfg.vocab_size;
    if reinit {
        let mut rng = Prng::new(cfg.seed, stream::INIT).fork(stream::INIT + 100);
        init_vocab_params(cfg, &mut params, &mut rng);
    }
    Ok((params, reinit))
}

/// Fine-tunes a pre-trained LM on the target splits.
pub fn lm_finetune(
    source: &Checkpoint<f32>,
    target: &Splits,
    cfg: &LmConfig,
) -> Result<FinetuneReport> {
    let cfg = cfg.resolve_vocab(target.train.vocab_size)?;
    let (params, reinitialized) = retarget(source, &cfg)?;
    let run = lm_train(params, &cfg, &target.train, &target.valid)?;
    let test_ppl = corpus_perplexity(&run.best.params, &load_lm(&run.best)?, &target.test)?;
    Ok(FinetuneReport {
        run,
        test_ppl,
        reinitialized,
    })
}

/// GRU LM whose embedding, recurrence and head are the speaker's tensors.
pub fn transplant_speaker(speaker: &Checkpoint<f32>, cfg: &LmConfig) -> Result<Checkpoint<f32>> {
    let game = load_game(speaker)?;
    if cfg.arch != Arch::Gru || cfg.dim != game.hidden {
        return Err(Error::Contract(format!(
            "model transfer needs a GRU LM with dim {} (speaker hidden), got {:?} dim {}",
            game.hidden, cfg.arch, cfg.dim
        )));
    }
    let mut lm = cfg.clone();
    lm.vocab_size = game.vocab_size;
    let mut p = ParamSet::new();
    let copy = |p: &mut ParamSet<f32>, from: &str, to: &str| -> Result<()> {
        let t: &Tensor<f32> = speaker.params.get(from)?;
        p.insert(to, t.clone());
        Ok(())
    };
    copy(&mut p, "spk.emb", "tok_emb")?;
    let out = spk_out(&game);
    copy(&mut p, &out.w(), "head.w")?;
    copy(&mut p, &out.b(), "head.b")?;
    for (from, to) in spk_gru(&game)
        .param_names()
        .iter()
        .zip(gru(&lm).param_names())
    {
        copy(&mut p, from, &to)?;
    }
    Ok(lm_checkpoint(&lm, speaker.step, &p))
}

/// Model transfer: transplant the speaker into a GRU LM, then fine-tune it.
pub fn model_transfer_gru(
    speaker: &Checkpoint<f32>,
    target: &Splits,
    cfg: &LmConfig,
) -> Result<FinetuneReport> {
    let lm = transplant_speaker(speaker, cfg)?;
    lm_finetune(&lm, target, cfg)
}
