use serde::{Deserialize, Serialize};

use crate::corpora::FeatureSet;
use crate::error::{Error, Result};
use crate::numcore::{argmax, prng::stream, Checkpoint, Graph, ParamSet, Prng};

use super::agents::{listener_forward, speaker_forward, MessageInput, SpeakMode};
use super::config::GameConfig;
use super::train::load_game;

/// Speaker decoding used outside training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decode {
    #[default]
    Sample,
    Greedy,
}

impl Decode {
    pub fn mode(self) -> SpeakMode {
        match self {
            Decode::Sample => SpeakMode::Sample,
            Decode::Greedy => SpeakMode::Greedy,
        }
    }
}

/// A target row placed among distractor rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub candidates: Vec<usize>,
    pub correct: usize,
}

impl Trial {
    pub fn target(&self) -> usize {
        self.candidates[self.correct]
    }
}

/// The listener's view of one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionDistribution {
    pub candidates: Vec<usize>,
    pub correct: usize,
    pub message: Vec<usize>,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl SelectionDistribution {
    /// Arg-max probability (lowest index on ties) lands on the target.
    pub fn is_hit(&self) -> bool {
        argmax(&self.probabilities) == self.correct
    }
}

/// Uniform targets over `n` rows, each with `k` distinct distractors at a random slot.
pub fn sample_trials(n: usize, k: usize, trials: usize, rng: &mut Prng) -> Result<Vec<Trial>> {
    if k + 1 > n {
        return Err(Error::Contract(format!(
            "{n} rows cannot host {k} distractors"
        )));
    }
    Ok((0..trials)
        .map(|_| {
            let t = rng.below(n);
            let mut c: Vec<usize> = rng
                .sample_distinct(n - 1, k)
                .into_iter()
                .map(|o| if o >= t { o + 1 } else { o })
                .collect();
            let pos = rng.below(k + 1);
            c.insert(pos, t);
            Trial {
                candidates: c,
                correct: pos,
            }
        })
        .collect())
}

const CHUNK: usize = 256;

/// Plays every trial in fixed chunks with their own derived generators;
/// results are independent of `threads`.
pub fn play_trials(
    params: &ParamSet<f32>,
    cfg: &GameConfig,
    features: &FeatureSet,
    trials: &[Trial],
    decode: Decode,
    rng: &mut Prng,
    threads: usize,
) -> Result<Vec<SelectionDistribution>> {
    if features.d() != cfg.feature_dim {
        return Err(Error::Contract(format!(
            "features have D={} but the speaker expects {}",
            features.d(),
            cfg.feature_dim
        )));
    }
    let chunks: Vec<(&[Trial], u64)> = trials.chunks(CHUNK).map(|c| (c, rng.next_u64())).collect();
    let run = |(c, seed): &(&[Trial], u64)| {
        play_chunk(
            params,
            cfg,
            features,
            c,
            decode,
            &mut Prng::new(*seed, stream::SAMPLE),
        )
    };
    let results: Vec<Result<Vec<SelectionDistribution>>> = if threads <= 1 || chunks.len() <= 1 {
        chunks.iter().map(run).collect()
    } else {
        let per = chunks.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|part| s.spawn(move || part.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("eval worker panicked"))
                .collect()
        })
    };
    let mut out = Vec::with_capacity(trials.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn play_chunk(
    params: &ParamSet<f32>,
    cfg: &GameConfig,
    features: &FeatureSet,
    trials: &[Trial],
    decode: Decode,
    rng: &mut Prng,
) -> Result<Vec<SelectionDistribution>> {
    let k1 = trials[0].candidates.len();
    if trials.iter().any(|t| t.candidates.len() != k1) {
        return Err(Error::Contract("trials differ in candidate count".into()));
    }
    let d = features.d();
    let targets: Vec<usize> = trials.iter().map(Trial::target).collect();
    let cand: Vec<usize> = trials
        .iter()
        .flat_map(|t| t.candidates.iter().copied())
        .collect();
    let mut g = Graph::<f32>::new();
    let f = g.constant(&[targets.len(), d], features.gather(&targets))?;
    let spk = speaker_forward(&mut g, params, cfg, f, decode.mode(), rng)?;
    let c = g.constant(&[cand.len(), d], features.gather(&cand))?;
    let lsn = listener_forward(
        &mut g,
        params,
        cfg,
        MessageInput::Tokens(&spk.tokens),
        c,
        k1,
    )?;
    let scores = g.value(lsn.scores);
    let logp = g.value(lsn.log_probs);
    Ok(trials
        .iter()
        .enumerate()
        .map(|(i, t)| SelectionDistribution {
            candidates: t.candidates.clone(),
            correct: t.correct,
            message: spk.tokens[i].clone(),
            scores: scores[i * k1..(i + 1) * k1]
                .iter()
                .map(|&x| x as f64)
                .collect(),
            probabilities: logp[i * k1..(i + 1) * k1]
                .iter()
                .map(|&x| (x as f64).exp())
                .collect(),
        })
        .collect())
}

pub fn accuracy(dists: &[SelectionDistribution]) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    dists.iter().filter(|d| d.is_hit()).count() as f64 / dists.len() as f64
}

/// Fraction of `trials` random trials (with `k` distractors) won by the checkpoint's agents.
pub fn eval_accuracy(
    ckpt: &Checkpoint<f32>,
    features: &FeatureSet,
    k: usize,
    trials: usize,
    rng: &mut Prng,
    decode: Decode,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Contract("eval_accuracy needs trials >= 1".into()));
    }
    let cfg = load_game(ckpt)?;
    let t = sample_trials(features.n(), k, trials, rng)?;
    let dists = play_trials(&ckpt.params, &cfg, features, &t, decode, rng, 1)?;
    Ok(accuracy(&dists))
}
