use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bleu4, rouge_l, ROUGE_BETA};
use crate::numcore::{prng::stream, Checkpoint, ParamSet, Prng};

use super::config::{EncoderInput, Seq2SeqConfig};
use super::model::{init_decoder, init_encoder, s2s_decode, Pair, Source};
use super::train::{load_s2s, s2s_checkpoint, s2s_eval_nll, s2s_train_from, EpochLog};

/// Which pre-trained tensors initialise the fine-tuned captioner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transfer {
    EncoderOnly,
    All,
    None,
}

fn require_continuous(cfg: &Seq2SeqConfig) -> Result<()> {
    match cfg.input {
        EncoderInput::Continuous { .. } => Ok(()),
        EncoderInput::Tokens => Err(Error::Contract(
            "captioning needs a continuous encoder input".into(),
        )),
    }
}

/// Feature-sequence → emergent-message model.
pub fn caption_pretrain(
    pairs: &[Pair],
    cfg: &Seq2SeqConfig,
) -> Result<(Checkpoint<f32>, Vec<EpochLog>)> {
    require_continuous(cfg)?;
    let mut p = ParamSet::new();
    let mut rng = Prng::new(cfg.seed, stream::INIT);
    init_encoder(cfg, &mut p, &mut rng);
    init_decoder(cfg, &mut p, &mut rng);
    let (p, log) = s2s_train_from(p, pairs, cfg, &mut |_, _| Ok(()))?;
    Ok((
        s2s_checkpoint(cfg, cfg.epochs as u64, &p, "caption_pretrain"),
        log,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionEpoch {
    pub epoch: usize,
    pub train_nll: Option<f64>,
    pub valid_nll: f64,
    pub valid_bleu4: f64,
    pub valid_rouge_l: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionReport {
    pub transfer: Transfer,
    pub epochs: Vec<CaptionEpoch>,
    pub best_epoch: usize,
    pub test_bleu4: f64,
    pub test_rouge_l: f64,
}

/// BLEU-4 and mean ROUGE-L F of decoded captions against references.
pub fn caption_scores(
    params: &ParamSet<f32>,
    cfg: &Seq2SeqConfig,
    pairs: &[Pair],
) -> Result<(f64, f64)> {
    let sources: Vec<&Source> = pairs.iter().map(|p| &p.source).collect();
    let hyp = s2s_decode(params, cfg, &sources)?;
    let refs: Vec<Vec<usize>> = pairs.iter().map(|p| p.target.clone()).collect();
    let bleu = bleu4(&hyp, &refs)?;
    let mut r = 0.0;
    for (h, p) in hyp.iter().zip(pairs) {
        r += rouge_l(h, &p.target, ROUGE_BETA)?.f;
    }
    Ok((bleu, r / pairs.len() as f64))
}

/// Initial parameters for fine-tuning under a transfer mode.
pub fn transfer_params(
    pretrained: Option<&Checkpoint<f32>>,
    cfg: &Seq2SeqConfig,
    transfer: Transfer,
) -> Result<ParamSet<f32>> {
    let mut p = ParamSet::new();
    let mut rng = Prng::new(cfg.seed, stream::INIT);
    init_encoder(cfg, &mut p, &mut rng);
    init_decoder(cfg, &mut p, &mut rng);
    if transfer == Transfer::None {
        return Ok(p);
    }
    let pre = pretrained
        .ok_or_else(|| Error::Contract("transfer needs a pre-trained checkpoint".into()))?;
    load_s2s(pre)?;
    let names: Vec<String> = p.names().to_vec();
    for name in names {
        if transfer == Transfer::EncoderOnly && !name.starts_with("enc.") {
            continue;
        }
        let src = pre.params.get(&name)?;
        if src.shape() != p.get(&name)?.shape() {
            return Err(Error::Shape {
                op: "caption_finetune",
                lhs: src.shape().to_vec(),
                rhs: p.get(&name)?.shape().to_vec(),
            });
        }
        p.insert(name, src.clone());
    }
    Ok(p)
}

/// Fine-tunes on natural pairs, scoring validation each epoch and reporting
/// test scores of the epoch with the lowest validation NLL.
pub fn caption_finetune(
    pretrained: Option<&Checkpoint<f32>>,
    train: &[Pair],
    valid: &[Pair],
    test: &[Pair],
    cfg: &Seq2SeqConfig,
    transfer: Transfer,
) -> Result<CaptionReport> {
    require_continuous(cfg)?;
    let init = transfer_params(pretrained, cfg, transfer)?;
    let score = |p: &ParamSet<f32>, train_nll: Option<f64>, epoch: usize| -> Result<CaptionEpoch> {
        let (b, r) = caption_scores(p, cfg, valid)?;
        Ok(CaptionEpoch {
            epoch,
            train_nll,
            valid_nll: s2s_eval_nll(p, cfg, valid)?,
            valid_bleu4: b,
            valid_rouge_l: r,
        })
    };
    let mut epochs = vec![score(&init, None, 0)?];
    let mut best = (0usize, epochs[0].valid_nll, init.clone());
    let mut pending: Vec<(usize, ParamSet<f32>)> = Vec::new();
    let (_, log) = s2s_train_from(init, train, cfg, &mut |e, p| {
        pending.push((e, p.clone()));
        Ok(())
    })?;
    for ((e, p), l) in pending.into_iter().zip(log) {
        let ep = score(&p, Some(l.train_nll), e)?;
        if ep.valid_nll < best.1 {
            best = (e, ep.valid_nll, p);
        }
        epochs.push(ep);
    }
    let (test_bleu4, test_rouge_l) = caption_scores(&best.2, cfg, test)?;
    Ok(CaptionReport {
        transfer,
        epochs,
        best_epoch: best.0,
        test_bleu4,
        test_rouge_l,
    })
}
