use serde::{Deserialize, Serialize};

use crate::corpora::FeatureSet;
use crate::error::{Error, Result};
use crate::numcore::{
    argmax, prng::stream, AdamConfig, AdamState, Checkpoint, Graph, ParamSet, Prng, Scalar, Var,
};

use super::agents::{
    agents_meta, init_agents, listener_forward, speaker_forward, MessageInput, SpeakMode,
};
use super::config::GameConfig;

pub const GAME_KIND: &str = "speaker_listener";

/// One batch of referential trials over rows of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct GameBatch {
    pub targets: Vec<usize>,
    /// `B·(K+1)` feature rows, grouped by trial.
    pub candidates: Vec<usize>,
    /// Position of the target inside each candidate group.
    pub correct: Vec<usize>,
}

impl GameBatch {
    pub fn new(targets: Vec<usize>, candidates: Vec<usize>, correct: Vec<usize>) -> Result<Self> {
        let b = targets.len();
        if b == 0 || correct.len() != b || !candidates.len().is_multiple_of(b) {
            return Err(Error::Contract("malformed game batch".into()));
        }
        let k1 = candidates.len() / b;
        for (i, group) in candidates.chunks(k1).enumerate() {
            if group.get(correct[i]) != Some(&targets[i]) {
                return Err(Error::Contract(format!(
                    "trial {i}: target not at its position"
                )));
            }
            if group
                .iter()
                .enumerate()
                .any(|(j, &r)| j != correct[i] && r == targets[i])
            {
                return Err(Error::Contract(format!(
                    "trial {i}: target row {} duplicated among distractors",
                    targets[i]
                )));
            }
        }
        Ok(GameBatch {
            targets,
            candidates,
            correct,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_candidates(&self) -> usize {
        self.candidates.len() / self.targets.len()
    }

    /// `B` distinct targets from `pool`, each with `k` distinct distractors drawn
    /// from the rest of the pool and placed around the target at a random position.
    pub fn sample(pool: &[usize], batch: usize, k: usize, rng: &mut Prng) -> Result<Self> {
        if batch > pool.len() || k + 1 > pool.len() {
            return Err(Error::Contract(format!(
                "pool of {} rows cannot supply batch {batch} with {k} distractors",
                pool.len()
            )));
        }
        let picks = rng.sample_distinct(pool.len(), batch);
        let mut targets = Vec::with_capacity(batch);
        let mut candidates = Vec::with_capacity(batch * (k + 1));
        let mut correct = Vec::with_capacity(batch);
        for &p in &picks {
            let target = pool[p];
            let pos = rng.below(k + 1);
            let others = rng.sample_distinct(pool.len() - 1, k);
            let mut group: Vec<usize> = others
                .into_iter()
                .map(|o| pool[if o >= p { o + 1 } else { o }])
                .collect();
            group.insert(pos, target);
            targets.push(target);
            candidates.extend(group);
            correct.push(pos);
        }
        GameBatch::new(targets, candidates, correct)
    }
}

/// `−mean log p(correct)` with relaxed speaker messages; also returns the
/// `[B, K+1]` log-probabilities.
pub fn game_loss<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &GameConfig,
    features: &FeatureSet,
    batch: &GameBatch,
    gumbel: &mut Prng,
) -> Result<(Var, Var)> {
    let d = features.d();
    let f = g.constant(&[batch.len(), d], features.gather(&batch.targets))?;
    let spk = speaker_forward(g, params, cfg, f, SpeakMode::Soft, gumbel)?;
    let c = g.constant(
        &[batch.candidates.len(), d],
        features.gather(&batch.candidates),
    )?;
    let lsn = listener_forward(
        g,
        params,
        cfg,
        MessageInput::Soft(&spk.steps),
        c,
        batch.n_candidates(),
    )?;
    let picked = g.pick(lsn.log_probs, &batch.correct)?;
    let mean = g.mean(picked)?;
    let loss = g.neg(mean)?;
    Ok((loss, lsn.log_probs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: u64,
    pub loss: f64,
    pub train_accuracy: f64,
}

pub fn game_checkpoint(cfg: &GameConfig, step: u64, params: &ParamSet<f32>) -> Checkpoint<f32> {
    Checkpoint::new(
        GAME_KIND,
        step,
        serde_json::to_value(cfg).expect("config serializes"),
        params.clone(),
    )
    .with_meta(agents_meta(cfg))
}

/// Config and parameters of a game checkpoint.
pub fn load_game(ckpt: &Checkpoint<f32>) -> Result<GameConfig> {
    if ckpt.kind != GAME_KIND {
        return Err(Error::Contract(format!(
            "expected a {GAME_KIND} checkpoint, got {}",
            ckpt.kind
        )));
    }
    let cfg: GameConfig = serde_json::from_value(ckpt.config.clone())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Trains speaker and listener; every produced checkpoint is handed to `sink`.
///
/// Checkpoints are emitted at multiples of `checkpoint_interval` and at the final
/// step. A non-finite loss aborts with [`Error::Divergence`] after earlier
/// checkpoints have already been delivered.
pub fn train_game(
    cfg: &GameConfig,
    features: &FeatureSet,
    sink: &mut dyn FnMut(&Checkpoint<f32>) -> Result<()>,
    log: &mut Vec<TrainLogEntry>,
) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    if features.d() != cfg.feature_dim {
        return Err(Error::Contract(format!(
            "features have D={} but the game expects {}",
            features.d(),
            cfg.feature_dim
        )));
    }
    if features.n() <= cfg.batch_size || features.n() < cfg.distractors + 1 {
        return Err(Error::Contract(format!(
            "need more than {} feature rows, got {}",
            cfg.batch_size,
            features.n()
        )));
    }
    let mut init_rng = Prng::new(cfg.seed, stream::INIT);
    let mut data_rng = Prng::new(cfg.seed, stream::DATA);
    let mut gumbel = Prng::new(cfg.seed, stream::GUMBEL);
    let mut params = init_agents::<f32>(cfg, &mut init_rng);
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.learning_rate));
    let pool_size = cfg.pool_size.min(features.n());
    if cfg.total_steps == 0 {
        sink(&game_checkpoint(cfg, 0, &params))?;
        return Ok(params);
    }
    for step in 1..=cfg.total_steps {
        let pool = data_rng.sample_distinct(features.n(), pool_size);
        let batch = GameBatch::sample(&pool, cfg.batch_size, cfg.distractors, &mut data_rng)?;
        let mut g = Graph::new();
        let diverged = |reason: String| Error::Divergence { step, reason };
        let (loss, logp) = game_loss(&mut g, &params, cfg, features, &batch, &mut gumbel).map_err(
            |e| match e {
                Error::NonFinite { op } => diverged(format!("non-finite value in {op}")),
                e => e,
            },
        )?;
        let lv = g.scalar(loss).as_f64();
        if !lv.is_finite() {
            return Err(diverged("loss is not finite".into()));
        }
        let k1 = batch.n_candidates();
        let hits = g
            .value(logp)
            .chunks(k1)
            .zip(&batch.correct)
            .filter(|(row, &c)| argmax(row) == c)
            .count();
        g.backward_into(loss, &mut params).map_err(|e| match e {
            Error::NonFinite { op } => diverged(format!("non-finite gradient in {op}")),
            e => e,
        })?;
        adam.step(&mut params)?;
        if !params.all_finite() {
            return Err(diverged("parameters became non-finite".into()));
        }
        log.push(TrainLogEntry {
            step,
            loss: lv,
            train_accuracy: hits as f64 / batch.len() as f64,
        });
        if step % cfg.checkpoint_interval == 0 || step == cfg.total_steps {
            sink(&game_checkpoint(cfg, step, &params))?;
        }
    }
    Ok(params)
}
