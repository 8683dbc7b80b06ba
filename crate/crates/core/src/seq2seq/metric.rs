use serde::{Deserialize, Serialize};

use crate::corpora::{speak_all, CaptionSet, FeatureSet, Message};
use crate::ecgame::{load_game, Decode};
use crate::error::{Error, Result};
use crate::metrics::{rouge_l, ROUGE_BETA};
use crate::numcore::{prng::stream, Checkpoint, Prng};

use super::config::{EncoderInput, Seq2SeqConfig};
use super::model::{s2s_decode, Pair, Source};
use super::train::{load_s2s, s2s_train};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TranslationConfig {
    /// Fraction of grounded pairs used to train the translator.
    pub train_fraction: f64,
    /// Speaker decoding when producing the emergent side.
    pub speaker_decode: Decode,
    pub seq2seq: Seq2SeqConfig,
    pub seed: u64,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        TranslationConfig {
            train_fraction: 0.9,
            speaker_decode: Decode::Sample,
            seq2seq: Seq2SeqConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslationMetricReport {
    pub checkpoint: String,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    pub epochs: usize,
    /// Mean ROUGE-L F over evaluation pairs.
    pub score: f64,
    pub per_pair: Vec<f64>,
}

/// Row order determined by row content alone.
fn canonical_order(features: &FeatureSet, captions: &CaptionSet) -> Result<Vec<usize>> {
    let n = features.n();
    let mut caps: Vec<Option<&Message>> = vec![None; n];
    for (i, m) in &captions.pairs {
        if *i >= n {
            return Err(Error::Contract(format!(
                "caption for row {i} but only {n} rows"
            )));
        }
        caps[*i] = Some(m);
    }
    if let Some(i) = caps.iter().position(|c| c.is_none_or(|m| m.is_empty())) {
        return Err(Error::Contract(format!("row {i} has no caption")));
    }
    let key = |i: usize| {
        let bits: Vec<u32> = features.row(i).iter().map(|x| x.to_bits()).collect();
        (caps[i].cloned(), bits)
    };
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by_cached_key(|&i| key(i));
    Ok(idx)
}

/// Train/eval split of aligned `(message, caption)` pairs drawn from `seed`.
pub fn translation_score(
    messages: &[Message],
    captions: &[Message],
    cfg: &TranslationConfig,
) -> Result<TranslationMetricReport> {
    if messages.len() != captions.len() {
        return Err(Error::Contract(
            "messages and captions are not aligned".into(),
        ));
    }
    let n = messages.len();
    let mut idx: Vec<usize> = (0..n).collect();
    Prng::new(cfg.seed, stream::SPLIT).shuffle(&mut idx);
    let cut = (n as f64 * cfg.train_fraction).round() as usize;
    if cut == 0 || cut >= n {
        return Err(Error::Contract(format!(
            "split {} of {n} pairs leaves one side empty",
            cfg.train_fraction
        )));
    }
    let pair = |i: usize| Pair {
        source: Source::Tokens(messages[i].clone()),
        target: captions[i].clone(),
    };
    let train: Vec<Pair> = idx[..cut].iter().map(|&i| pair(i)).collect();
    let eval: Vec<Pair> = idx[cut..].iter().map(|&i| pair(i)).collect();
    let mut s2s = cfg.seq2seq.clone();
    s2s.input = EncoderInput::Tokens;
    if s2s.src_vocab == 0 {
        s2s.src_vocab = messages.iter().flatten().max().map_or(1, |&m| m + 1);
    }
    if s2s.tgt_vocab == 0 {
        s2s.tgt_vocab = captions.iter().flatten().max().map_or(1, |&m| m + 1);
    }
    s2s.max_src_len = s2s
        .max_src_len
        .max(messages.iter().map(Vec::len).max().unwrap_or(1));
    s2s.max_tgt_len = s2s
        .max_tgt_len
        .max(captions.iter().map(Vec::len).max().unwrap_or(1));
    let (ckpt, _) = s2s_train(&train, &s2s)?;
    let sources: Vec<&Source> = eval.iter().map(|p| &p.source).collect();
    let decoded = s2s_decode(&ckpt.params, &load_s2s(&ckpt)?, &sources)?;
    let per_pair = decoded
        .iter()
        .zip(&eval)
        .map(|(d, p)| rouge_l(d, &p.target, ROUGE_BETA).map(|r| r.f))
        .collect::<Result<Vec<_>>>()?;
    Ok(TranslationMetricReport {
        checkpoint: String::new(),
        train_pairs: train.len(),
        eval_pairs: eval.len(),
        epochs: s2s.epochs,
        score: per_pair.iter().sum::<f64>() / per_pair.len() as f64,
        per_pair,
    })
}

/// How easily a speaker's messages translate into the grounded captions.
pub fn translation_metric(
    speaker: &Checkpoint<f32>,
    source: &str,
    features: &FeatureSet,
    captions: &CaptionSet,
    cfg: &TranslationConfig,
) -> Result<TranslationMetricReport> {
    let game = load_game(speaker)?;
    let order = canonical_order(features, captions)?;
    let ordered = features.select(&order)?;
    let mut rng = Prng::new(cfg.seed, stream::SAMPLE);
    let messages = speak_all(
        &speaker.params,
        &game,
        &ordered,
        cfg.speaker_decode,
        &mut rng,
    )?;
    let by_row: std::collections::HashMap<usize, &Message> =
        captions.pairs.iter().map(|(i, m)| (*i, m)).collect();
    let caps: Vec<Message> = order.iter().map(|i| by_row[i].clone()).collect();
    let mut s2s_cfg = cfg.clone();
    s2s_cfg.seq2seq.src_vocab = game.vocab_size;
    s2s_cfg.seq2seq.tgt_vocab = captions.vocab_size;
    let mut report = translation_score(&messages, &caps, &s2s_cfg)?;
    report.checkpoint = source.to_string();
    Ok(report)
}
