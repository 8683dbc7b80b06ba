use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpora::{generate_corpus, synthetic_world, Corpus, FeatureSet, SyntheticWorldSpec};
use crate::ecgame::{eval_accuracy, train_game, Decode, GameConfig};
use crate::error::{Error, Result};
use crate::langmodel::{lm_finetune, lm_pretrain, LmConfig, Splits};
use crate::metrics::{topographic_similarity, TopoMode};
use crate::numcore::{prng::stream, Checkpoint, Prng};
use crate::seq2seq::{translation_metric, TranslationConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Accuracy,
    Toposim,
    Translation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Setup {
    pub vocab_size: usize,
    pub seq_len: usize,
}

/// Where the game, metric and downstream data come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepData {
    /// Enumerated world the game is trained on.
    pub world: SyntheticWorldSpec,
    /// Fraction of world rows held out for accuracy and toposim.
    pub heldout_fraction: f64,
    /// Freshly sampled objects used as the translation metric's grounded set.
    pub grounded_objects: usize,
    /// Objects whose emergent messages form each pre-training corpus.
    pub source_objects: usize,
    /// Objects whose natural captions form the downstream target corpus.
    pub target_objects: usize,
}

impl Default for SweepData {
    fn default() -> Self {
        SweepData {
            world: SyntheticWorldSpec {
                noise: 0.05,
                ..Default::default()
            },
            heldout_fraction: 0.2,
            grounded_objects: 1000,
            source_objects: 5000,
            target_objects: 4000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub setups: Vec<Setup>,
    pub trials: usize,
    pub steps: u64,
    pub interval: u64,
    pub game: GameConfig,
    pub data: SweepData,
    pub metrics: Vec<MetricKind>,
    pub eval_trials: usize,
    pub translation: TranslationConfig,
    pub lm: LmConfig,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            setups: vec![
                Setup {
                    vocab_size: 16,
                    seq_len: 4,
                },
                Setup {
                    vocab_size: 64,
                    seq_len: 8,
                },
                Setup {
                    vocab_size: 256,
                    seq_len: 8,
                },
            ],
            trials: 2,
            steps: 1000,
            interval: 200,
            game: GameConfig::default(),
            data: SweepData::default(),
            metrics: vec![
                MetricKind::Accuracy,
                MetricKind::Toposim,
                MetricKind::Translation,
            ],
            eval_trials: 1000,
            translation: TranslationConfig::default(),
            lm: LmConfig {
                context: 64,
                eval_interval: 50,
                ..Default::default()
            },
            pretrain_steps: 200,
            finetune_steps: 60,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.setups.is_empty() || self.trials == 0 {
            return Err(Error::Config(
                "sweep needs >= 1 setup and >= 1 trial".into(),
            ));
        }
        if self.interval == 0 || self.steps == 0 || !self.steps.is_multiple_of(self.interval) {
            return Err(Error::Config(format!(
                "interval {} must divide steps {}",
                self.interval, self.steps
            )));
        }
        if !(self.data.heldout_fraction > 0.0 && self.data.heldout_fraction < 1.0) {
            return Err(Error::Config("heldout_fraction must be in (0, 1)".into()));
        }
        for s in &self.setups {
            self.game_config(*s, 0).validate()?;
        }
        self.lm.validate()
    }

    pub fn trial_seed(&self, setup: usize, trial: usize) -> u64 {
        self.seed
            .wrapping_mul(1_000_003)
            .wrapping_add((setup * 1000 + trial) as u64)
    }

    pub fn game_config(&self, setup: Setup, seed: u64) -> GameConfig {
        GameConfig {
            vocab_size: setup.vocab_size,
            seq_len: setup.seq_len,
            feature_dim: self.data.world.feature_dim(),
            total_steps: self.steps,
            checkpoint_interval: self.interval,
            seed,
            ..self.game.clone()
        }
    }
}

/// Metrics and downstream result of one speaker checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub setup: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub trial: usize,
    pub seed: u64,
    pub step: u64,
    pub accuracy: Option<f64>,
    pub toposim: Option<f64>,
    pub toposim_undefined: Option<String>,
    pub translation: Option<f64>,
    /// Negated test perplexity per downstream target.
    pub downstream: BTreeMap<String, f64>,
    pub errors: Vec<String>,
}

impl SweepPoint {
    pub fn key(&self) -> (usize, usize, u64) {
        (self.setup, self.trial, self.step)
    }

    pub fn metric(&self, m: MetricKind) -> Option<f64> {
        match m {
            MetricKind::Accuracy => self.accuracy,
            MetricKind::Toposim => self.toposim,
            MetricKind::Translation => self.translation,
        }
    }
}

pub const POINTS_FILE: &str = "sweep_points.jsonl";
pub const SPEC_FILE: &str = "sweep_spec.json";
pub const DOWNSTREAM_TARGET: &str = "captions";

pub fn read_points(path: &Path) -> Result<Vec<SweepPoint>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::parse(path.display(), format!("line {}: {e}", i + 1)))
        })
        .collect()
}

fn append_point(path: &Path, p: &SweepPoint) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(p)?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Data shared by every cell of a sweep.
pub struct SweepWorld {
    pub train: FeatureSet,
    pub heldout: FeatureSet,
    pub grounded: crate::corpora::SyntheticWorld,
    pub source: FeatureSet,
    pub target: Splits,
}

impl SweepWorld {
    pub fn build(spec: &SweepSpec) -> Result<SweepWorld> {
        let d = &spec.data;
        let world = synthetic_world(&d.world)?;
        let mut idx: Vec<usize> = (0..world.features.n()).collect();
        Prng::new(spec.seed, stream::SPLIT).shuffle(&mut idx);
        let cut = ((1.0 - d.heldout_fraction) * idx.len() as f64).round() as usize;
        let sample = |objects: usize, salt: u64| {
            synthetic_world(&SyntheticWorldSpec {
                objects: Some(objects),
                seed: d.world.seed.wrapping_add(salt),
                ..d.world.clone()
            })
        };
        let grounded = sample(d.grounded_objects, 101)?;
        let source = sample(d.source_objects, 202)?.features;
        let target_world = sample(d.target_objects, 303)?;
        let target = Splits::new(
            &target_world.captions.to_corpus("synthetic_captions")?,
            0.8,
            0.1,
            spec.seed,
        )?;
        Ok(SweepWorld {
            train: world.features.select(&idx[..cut])?,
            heldout: world.features.select(&idx[cut..])?,
            grounded,
            source,
            target,
        })
    }
}

/// Metrics and downstream perplexity for one checkpoint; failures are recorded, not raised.
pub fn evaluate_checkpoint(
    spec: &SweepSpec,
    world: &SweepWorld,
    ckpt: &Checkpoint<f32>,
    point: &mut SweepPoint,
) {
    let seed = point.seed ^ ckpt.step;
    let game: GameConfig = match serde_json::from_value(ckpt.config.clone()) {
        Ok(g) => g,
        Err(e) => {
            point.errors.push(format!("config: {e}"));
            return;
        }
    };
    let metrics: BTreeSet<MetricKind> = spec.metrics.iter().copied().collect();
    if metrics.contains(&MetricKind::Accuracy) {
        let mut rng = Prng::new(seed, stream::EVAL);
        match eval_accuracy(
            ckpt,
            &world.heldout,
            game.distractors,
            spec.eval_trials,
            &mut rng,
            Decode::Sample,
        ) {
            Ok(a) => point.accuracy = Some(a),
            Err(e) => point.errors.push(format!("accuracy: {e}")),
        }
    }
    if metrics.contains(&MetricKind::Toposim) {
        let res = generate_corpus(
            ckpt,
            "sweep",
            &world.heldout,
            Decode::Sample,
            false,
            &mut Prng::new(seed, stream::CORPUS),
        )
        .and_then(|c| topographic_similarity(&c, &world.heldout, TopoMode::auto(c.len(), seed)));
        match res {
            Ok(r) => {
                point.toposim = r.rho;
                point.toposim_undefined = r.undefined_reason;
            }
            Err(e) => point.errors.push(format!("toposim: {e}")),
        }
    }
    if metrics.contains(&MetricKind::Translation) {
        let mut tcfg = spec.translation.clone();
        tcfg.seed = seed;
        tcfg.seq2seq.seed = seed;
        match translation_metric(
            ckpt,
            "sweep",
            &world.grounded.features,
            &world.grounded.captions,
            &tcfg,
        ) {
            Ok(r) => point.translation = Some(r.score),
            Err(e) => point.errors.push(format!("translation: {e}")),
        }
    }
    match downstream_ppl(spec, world, ckpt, seed) {
        Ok(p) => {
            point.downstream.insert(DOWNSTREAM_TARGET.into(), -p);
        }
        Err(e) => point.errors.push(format!("downstream: {e}")),
    }
}

/// Corpus from the checkpoint → LM pre-training → fine-tuning on the target → test perplexity.
pub fn downstream_ppl(
    spec: &SweepSpec,
    world: &SweepWorld,
    ckpt: &Checkpoint<f32>,
    seed: u64,
) -> Result<f64> {
    let corpus: Corpus = generate_corpus(
        ckpt,
        "sweep",
        &world.source,
        Decode::Sample,
        false,
        &mut Prng::new(seed, stream::CORPUS),
    )?;
    let mut pre = spec.lm.clone();
    pre.seed = seed;
    pre.vocab_size = 0;
    pre.total_steps = spec.pretrain_steps;
    let run = lm_pretrain(&pre, &Splits::new(&corpus, 0.9, 0.05, seed)?)?;
    let mut ft = pre.clone();
    ft.total_steps = spec.finetune_steps;
    Ok(lm_finetune(&run.best, &world.target, &ft)?.test_ppl)
}

/// Trains every (setup, trial), evaluates each checkpoint and appends points to
/// `out/sweep_points.jsonl`. Points already present are skipped, so an
/// interrupted sweep resumes where it stopped.
pub fn run_sweep(
    spec: &SweepSpec,
    out: &Path,
    progress: &mut dyn FnMut(&SweepPoint),
) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let spec_path = out.join(SPEC_FILE);
    let spec_json = serde_json::to_string_pretty(spec)? + "\n";
    match fs::read_to_string(&spec_path) {
        Ok(existing) if existing != spec_json => {
            return Err(Error::Config(format!(
                "{} holds a sweep with a different spec",
                out.display()
            )))
        }
        Ok(_) => {}
        Err(_) => fs::write(&spec_path, &spec_json).map_err(|e| Error::io(&spec_path, e))?,
    }
    let path: PathBuf = out.join(POINTS_FILE);
    let mut points = read_points(&path)?;
    let done: BTreeSet<(usize, usize, u64)> = points.iter().map(SweepPoint::key).collect();
    let world = SweepWorld::build(spec)?;
    let checkpoints_per_trial = spec.steps / spec.interval;
    for (si, setup) in spec.setups.iter().enumerate() {
        for trial in 0..spec.trials {
            let pending = (1..=checkpoints_per_trial)
                .filter(|k| !done.contains(&(si, trial, k * spec.interval)))
                .count();
            if pending == 0 {
                continue;
            }
            let seed = spec.trial_seed(si, trial);
            let cfg = spec.game_config(*setup, seed);
            let mut ckpts = Vec::new();
            let mut log = Vec::new();
            let trained = train_game(
                &cfg,
                &world.train,
                &mut |c| {
                    ckpts.push(c.clone());
                    Ok(())
                },
                &mut log,
            );
            let failure = trained.err().map(|e| e.to_string());
            for k in 1..=checkpoints_per_trial {
                let step = k * spec.interval;
                if done.contains(&(si, trial, step)) {
                    continue;
                }
                let mut point = SweepPoint {
                    setup: si,
                    vocab_size: setup.vocab_size,
                    seq_len: setup.seq_len,
                    trial,
                    seed,
                    step,
                    accuracy: None,
                    toposim: None,
                    toposim_undefined: None,
                    translation: None,
                    downstream: BTreeMap::new(),
                    errors: Vec::new(),
                };
                match ckpts.iter().find(|c| c.step == step) {
                    Some(c) => evaluate_checkpoint(spec, &world, c, &mut point),
                    None => point.errors.push(format!(
                        "no checkpoint: {}",
                        failure.clone().unwrap_or_else(|| "not produced".into())
                    )),
                }
                append_point(&path, &point)?;
                progress(&point);
                points.push(point);
            }
        }
    }
    points.sort_by_key(SweepPoint::key);
    Ok(points)
}
