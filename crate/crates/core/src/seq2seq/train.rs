use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{prng::stream, AdamConfig, AdamState, Checkpoint, Graph, ParamSet, Prng};

use super::config::Seq2SeqConfig;
use super::model::{s2s_init, s2s_loss, s2s_meta, Pair};

pub const S2S_KIND: &str = "seq2seq";

pub fn s2s_checkpoint(
    cfg: &Seq2SeqConfig,
    step: u64,
    params: &ParamSet<f32>,
    tag: &str,
) -> Checkpoint<f32> {
    let mut meta = s2s_meta(cfg);
    meta["tag"] = tag.into();
    Checkpoint::new(
        S2S_KIND,
        step,
        serde_json::to_value(cfg).expect("config serializes"),
        params.clone(),
    )
    .with_meta(meta)
}

pub fn load_s2s(ckpt: &Checkpoint<f32>) -> Result<Seq2SeqConfig> {
    if ckpt.kind != S2S_KIND {
        return Err(Error::Contract(format!(
            "expected a {S2S_KIND} checkpoint, got {}",
            ckpt.kind
        )));
    }
    let cfg: Seq2SeqConfig = serde_json::from_value(ckpt.config.clone())?;
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-token teacher-forced NLL over the epoch's batches.
    pub train_nll: f64,
}

/// Mean per-token teacher-forced NLL over `pairs`.
pub fn s2s_eval_nll(params: &ParamSet<f32>, cfg: &Seq2SeqConfig, pairs: &[Pair]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0);
    for chunk in pairs.chunks(256) {
        let refs: Vec<&Pair> = chunk.iter().collect();
        let mut g = Graph::<f32>::new();
        let (loss, count) = s2s_loss(&mut g, params, cfg, &refs)?;
        total += g.scalar(loss) as f64;
        n += count;
    }
    Ok(total / n.max(1) as f64)
}

/// Runs `epochs` passes of shuffled mini-batches; `after_epoch` sees the
/// parameters after every epoch.
pub fn s2s_train_from(
    mut params: ParamSet<f32>,
    pairs: &[Pair],
    cfg: &Seq2SeqConfig,
    after_epoch: &mut dyn FnMut(usize, &ParamSet<f32>) -> Result<()>,
) -> Result<(ParamSet<f32>, Vec<EpochLog>)> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::Contract("s2s_train needs at least one pair".into()));
    }
    let mut rng = Prng::new(cfg.seed, stream::DATA);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate));
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        rng.shuffle(&mut order);
        let (mut total, mut n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let batch: Vec<&Pair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let mut g = Graph::<f32>::new();
            let diverged = |e: Error| match e {
                Error::NonFinite { op } => Error::Divergence {
                    step,
                    reason: format!("non-finite value in {op}"),
                },
                e => e,
            };
            let (sum, count) = s2s_loss(&mut g, &params, cfg, &batch).map_err(diverged)?;
            total += g.scalar(sum) as f64;
            n += count;
            let loss = g.scale(sum, 1.0 / count as f32)?;
            g.backward_into(loss, &mut params).map_err(diverged)?;
            adam.step(&mut params)?;
        }
        log.push(EpochLog {
            epoch,
            train_nll: total / n as f64,
        });
        after_epoch(epoch, &params)?;
    }
    Ok((params, log))
}

/// Fresh model trained for exactly `cfg.epochs` epochs.
pub fn s2s_train(pairs: &[Pair], cfg: &Seq2SeqConfig) -> Result<(Checkpoint<f32>, Vec<EpochLog>)> {
    let params = s2s_init(cfg, &mut Prng::new(cfg.seed, stream::INIT))?;
    let (params, log) = s2s_train_from(params, pairs, cfg, &mut |_, _| Ok(()))?;
    Ok((
        s2s_checkpoint(cfg, cfg.epochs as u64, &params, "translation"),
        log,
    ))
}
