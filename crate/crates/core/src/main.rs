use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use eclab::corpora::{
    gen_paren_zipf, generate_corpus, permute_corpus, random_inputs, random_speaker_corpus,
    read_corpus, read_features, synthetic_world, write_corpus, write_features, write_vocab,
    CaptionSet, Corpus, FeatureSet, ParenZipfConfig, SyntheticWorldSpec,
};
use eclab::ecgame::{
    accuracy, load_game, play_trials, sample_trials, train_game, Decode, GameConfig,
};
use eclab::langmodel::{
    lm_finetune, lm_pretrain, lm_scratch, model_transfer_gru, Arch, FinetuneReport, LmConfig,
    LmRun, Splits,
};
use eclab::metrics::{topographic_similarity, unigram_stats, TopoMode};
use eclab::numcore::{prng::stream, Checkpoint, Prng};
use eclab::seq2seq::{
    caption_finetune, caption_pretrain, translation_metric, EncoderInput, Pair, Seq2SeqConfig,
    Source, Transfer, TranslationConfig,
};
use eclab::xlab::{
    correlate, read_points, run_sweep, setup_sweep, Axis, MetricKind, SweepSpec, DOWNSTREAM_TARGET,
    POINTS_FILE,
};
use eclab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "eclab",
    version,
    about = "Emergent-communication games, corpora and transfer experiments"
)]
struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory that receives every artifact.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for evaluation.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train speaker and listener; writes checkpoints and the training log.
    TrainGame {
        #[arg(long)]
        features: PathBuf,
        /// Feature set for the final accuracy evaluation (defaults to the training set).
        #[arg(long)]
        heldout: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        eval_trials: usize,
    },
    /// Speak one message per feature row with a trained speaker.
    GenCorpus {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Balanced-bracket corpus with Zipfian unigrams.
    GenParenZipf,
    /// Synthetic attribute world: features, captions and vocabulary.
    GenWorld,
    /// Ablated corpora.
    Ablate {
        #[command(subcommand)]
        kind: AblateKind,
    },
    /// Unigram statistics of a corpus.
    Stats {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Topographic similarity between messages and their inputs.
    Toposim {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Pre-train a language model on a corpus.
    LmPretrain {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fine-tune a pre-trained language model on a target corpus.
    LmFinetune {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train a language model on the target corpus from scratch.
    LmScratch {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fine-tune a GRU language model initialised from a trained speaker.
    ModelTransfer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Emergent-to-natural translation score of a speaker.
    TranslateMetric {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// One caption per feature row.
        #[arg(long)]
        captions: PathBuf,
    },
    /// Train a feature-to-message captioner on an emergent corpus.
    CaptionPretrain {
        #[arg(long)]
        features: PathBuf,
        /// One emergent message per feature row.
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fine-tune a captioner on natural captions and score it.
    CaptionFinetune {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Checkpoint sweep: metrics and downstream perplexity per checkpoint.
    Sweep,
    /// Correlate metrics with downstream performance over sweep points.
    Correlate {
        /// Sweep table (defaults to the one in --out).
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MetricArg::All)]
        metric: MetricArg,
        #[arg(long, default_value = DOWNSTREAM_TARGET)]
        target: String,
    },
    /// Sweep one game dimension and report grouped means and variances.
    SetupSweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
}

#[derive(Subcommand)]
enum AblateKind {
    /// Shuffle the tokens of every message.
    Permute {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Messages from an untrained speaker with the checkpoint's architecture.
    RandomSpeaker {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Messages for Gaussian inputs matched to the features' moments.
    RandomInput {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Accuracy,
    Toposim,
    Translation,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Vocab,
    Seqlen,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CorpusCmd {
    decode: Decode,
    /// Cut each message at its first 0 token.
    truncate: bool,
    /// Random-input rows (0 = as many as the feature set).
    objects: usize,
    seed: u64,
}

impl Default for CorpusCmd {
    fn default() -> Self {
        CorpusCmd {
            decode: Decode::Sample,
            truncate: false,
            objects: 0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ParenCmd {
    paren_zipf: ParenZipfConfig,
    seed: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct TopoCmd {
    /// Sampled pair count; unset picks full or 100k-pair sampling by corpus size.
    sampled_pairs: Option<usize>,
    seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LmCmd {
    lm: LmConfig,
    train_fraction: f64,
    valid_fraction: f64,
    seed: u64,
}

impl Default for LmCmd {
    fn default() -> Self {
        LmCmd {
            lm: LmConfig::default(),
            train_fraction: 0.8,
            valid_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CaptionCmd {
    seq2seq: Seq2SeqConfig,
    train_fraction: f64,
    valid_fraction: f64,
    transfer: Transfer,
    seed: u64,
}

impl Default for CaptionCmd {
    fn default() -> Self {
        CaptionCmd {
            seq2seq: Seq2SeqConfig {
                input: EncoderInput::Continuous { dim: 6 },
                ..Default::default()
            },
            train_fraction: 0.8,
            valid_fraction: 0.1,
            transfer: Transfer::EncoderOnly,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoConfig {}

/// Reads `--config` (or defaults) and applies `--seed`. Unknown keys are rejected
/// with the list of valid ones.
fn load_config<T: DeserializeOwned + Serialize + Default>(
    path: Option<&Path>,
    seed: Option<u64>,
) -> Result<T> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => serde_json::to_value(T::default())?,
    };
    if let (Some(s), Value::Object(map)) = (seed, &mut value) {
        if serde_json::to_value(T::default())?.get("seed").is_some() {
            map.insert("seed".into(), json!(s));
        }
    }
    let origin = path.map_or("config".to_string(), |p| p.display().to_string());
    serde_json::from_value(value).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

struct Ctx {
    out: PathBuf,
    threads: usize,
    command: String,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })
    }

    /// Report wrapped with the command and the configuration that produced it.
    fn report<C: Serialize, R: Serialize>(&self, name: &str, config: &C, report: &R) -> Result<()> {
        let v = json!({
            "command": self.command,
            "config": config,
            "report": report,
        });
        self.write(name, &(serde_json::to_string_pretty(&v)? + "\n"))
    }

    fn corpus<C: Serialize>(&self, name: &str, corpus: Corpus, config: &C) -> Result<Corpus> {
        let c = corpus
            .with_provenance("command", &self.command)
            .with_provenance("config", serde_json::to_string(config)?);
        write_corpus(self.path(name), &c)?;
        Ok(c)
    }
}

fn load_ckpt(p: &Path) -> Result<Checkpoint<f32>> {
    Checkpoint::load(p)
}

fn captions_from(path: &Path) -> Result<CaptionSet> {
    let c = read_corpus(path, None)?;
    Ok(CaptionSet {
        pairs: c.messages.into_iter().enumerate().collect(),
        vocab_size: c.vocab_size,
    })
}

fn aligned(features: &FeatureSet, corpus: &Corpus, what: &str) -> Result<()> {
    if features.n() != corpus.len() {
        return Err(Error::Contract(format!(
            "{what} has {} lines but the feature set has {} rows",
            corpus.len(),
            features.n()
        )));
    }
    Ok(())
}

fn caption_pairs(features: &FeatureSet, corpus: &Corpus, cfg: &Seq2SeqConfig) -> Result<Vec<Pair>> {
    let block = match cfg.input {
        EncoderInput::Continuous { dim } => dim,
        EncoderInput::Tokens => {
            return Err(Error::Config(
                "captioning needs seq2seq.input of kind continuous".into(),
            ))
        }
    };
    if !features.d().is_multiple_of(block) {
        return Err(Error::Config(format!(
            "feature width {} is not a multiple of the encoder input dim {block}",
            features.d()
        )));
    }
    aligned(features, corpus, "caption corpus")?;
    Ok(corpus
        .messages
        .iter()
        .enumerate()
        .map(|(i, m)| Pair {
            source: Source::Features(features.row(i).chunks(block).map(<[f32]>::to_vec).collect()),
            target: m.clone(),
        })
        .collect())
}

fn lm_outputs(
    ctx: &Ctx,
    cfg: &LmCmd,
    run: &LmRun,
    test_ppl: Option<f64>,
    reinitialized: Option<bool>,
) -> Result<()> {
    run.best.save(ctx.path("checkpoint"))?;
    let mut log = String::new();
    for e in &run.log {
        log.push_str(&serde_json::to_string(e)?);
        log.push('\n');
    }
    ctx.write("log.jsonl", &log)?;
    ctx.report(
        "report.json",
        cfg,
        &json!({
            "best_step": run.best_step,
            "best_valid_nll": run.best_valid_nll,
            "test_ppl": test_ppl,
            "reinitialized": reinitialized,
        }),
    )
}

fn finetune_outputs(ctx: &Ctx, cfg: &LmCmd, r: &FinetuneReport) -> Result<()> {
    println!("test perplexity {:.4}", r.test_ppl);
    lm_outputs(ctx, cfg, &r.run, Some(r.test_ppl), Some(r.reinitialized))
}

fn lm_setup(cli: &Cli, corpus: &Path) -> Result<(LmCmd, Splits)> {
    let mut cfg: LmCmd = load_config(cli.config.as_deref(), cli.seed)?;
    cfg.lm.seed = cfg.seed;
    let c = read_corpus(corpus, None)?;
    let splits = Splits::new(&c, cfg.train_fraction, cfg.valid_fraction, cfg.seed)?;
    Ok((cfg, splits))
}

fn run(cli: &Cli) -> Result<()> {
    let command = subcommand_name(&cli.command);
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io {
        path: cli.out.clone(),
        source: e,
    })?;
    let ctx = Ctx {
        out: cli.out.clone(),
        threads: cli.threads.max(1),
        command,
    };
    let cfg_path = cli.config.as_deref();
    match &cli.command {
        Command::TrainGame {
            features,
            heldout,
            eval_trials,
        } => {
            let cfg: GameConfig = load_config(cfg_path, cli.seed)?;
            let feats = read_features(features)?;
            let ckdir = ctx.path("checkpoints");
            let mut log = Vec::new();
            let mut last = None;
            let params = train_game(
                &cfg,
                &feats,
                &mut |c| {
                    c.save(ckdir.join(format!("step-{:06}", c.step)))?;
                    last = Some(c.step);
                    Ok(())
                },
                &mut log,
            )?;
            let mut text = String::new();
            for e in &log {
                text.push_str(&serde_json::to_string(e)?);
                text.push('\n');
            }
            ctx.write("train_log.jsonl", &text)?;
            let eval_set = match heldout {
                Some(p) => read_features(p)?,
                None => feats,
            };
            let mut rng = Prng::new(cfg.seed, stream::EVAL);
            let trials = sample_trials(eval_set.n(), cfg.distractors, *eval_trials, &mut rng)?;
            let dists = play_trials(
                &params,
                &cfg,
                &eval_set,
                &trials,
                Decode::Sample,
                &mut rng,
                ctx.threads,
            )?;
            let acc = accuracy(&dists);
            println!("final step {} accuracy {acc:.4}", last.unwrap_or(0));
            ctx.report(
                "report.json",
                &cfg,
                &json!({"final_step": last, "eval_trials": eval_trials, "accuracy": acc}),
            )
        }
        Command::GenCorpus {
            checkpoint,
            features,
        } => {
            let cfg: CorpusCmd = load_config(cfg_path, cli.seed)?;
            let ck = load_ckpt(checkpoint)?;
            let feats = read_features(features)?;
            let mut rng = Prng::new(cfg.seed, stream::CORPUS);
            let c = generate_corpus(
                &ck,
                &checkpoint.display().to_string(),
                &feats,
                cfg.decode,
                cfg.truncate,
                &mut rng,
            )?;
            let c = ctx.corpus("corpus.txt", c, &cfg)?;
            println!("{} messages, {} tokens", c.len(), c.token_count());
            Ok(())
        }
        Command::GenParenZipf => {
            let cfg: ParenCmd = load_config(cfg_path, cli.seed)?;
            let c = gen_paren_zipf(&cfg.paren_zipf, &mut Prng::new(cfg.seed, stream::CORPUS))?;
            let c = ctx.corpus("corpus.txt", c, &cfg)?;
            let stats = unigram_stats(&c)?;
            println!(
                "{} lines, {} tokens, entropy {:.4} nats",
                c.len(),
                c.token_count(),
                stats.entropy
            );
            Ok(())
        }
        Command::GenWorld => {
            let spec: SyntheticWorldSpec = load_config(cfg_path, cli.seed)?;
            let w = synthetic_world(&spec)?;
            write_features(ctx.path("features.bin"), &w.features)?;
            ctx.corpus(
                "captions.txt",
                w.captions.to_corpus("synthetic_world")?,
                &spec,
            )?;
            write_vocab(ctx.path("vocab.txt"), &w.vocab)?;
            ctx.report(
                "world.json",
                &spec,
                &json!({"rows": w.features.n(), "feature_dim": w.features.d(), "caption_vocab": w.captions.vocab_size}),
            )?;
            println!("{} rows × {} features", w.features.n(), w.features.d());
            Ok(())
        }
        Command::Ablate { kind } => {
            let cfg: CorpusCmd = load_config(cfg_path, cli.seed)?;
            let c = match kind {
                AblateKind::Permute { corpus } => permute_corpus(
                    &read_corpus(corpus, None)?,
                    &mut Prng::new(cfg.seed, stream::CORPUS),
                ),
                AblateKind::RandomSpeaker {
                    checkpoint,
                    features,
                } => {
                    let game = load_game(&load_ckpt(checkpoint)?)?;
                    random_speaker_corpus(&game, &read_features(features)?, cfg.seed)?
                }
                AblateKind::RandomInput {
                    checkpoint,
                    features,
                } => {
                    let ck = load_ckpt(checkpoint)?;
                    let feats = read_features(features)?;
                    let n = if cfg.objects == 0 {
                        feats.n()
                    } else {
                        cfg.objects
                    };
                    let inputs =
                        random_inputs(&feats.stats(), n, &mut Prng::new(cfg.seed, stream::DATA))?;
                    write_features(ctx.path("features.bin"), &inputs)?;
                    let mut rng = Prng::new(cfg.seed, stream::CORPUS);
                    generate_corpus(
                        &ck,
                        &checkpoint.display().to_string(),
                        &inputs,
                        cfg.decode,
                        cfg.truncate,
                        &mut rng,
                    )?
                }
            };
            let c = ctx.corpus("corpus.txt", c, &cfg)?;
            println!("{} messages, {} tokens", c.len(), c.token_count());
            Ok(())
        }
        Command::Stats { corpus } => {
            let cfg: NoConfig = load_config(cfg_path, None)?;
            let c = read_corpus(corpus, None)?;
            let s = unigram_stats(&c)?;
            let zipf = s
                .zipf_exponent
                .map_or("undefined".to_string(), |z| format!("{z:.4}"));
            let rows = [
                ("messages", c.len().to_string()),
                ("tokens", s.tokens.to_string()),
                ("vocab size", s.vocab_size.to_string()),
                ("used vocab", s.used_vocab.to_string()),
                ("entropy (nats)", format!("{:.6}", s.entropy)),
                ("zipf exponent", zipf),
            ];
            for (k, v) in rows {
                println!("{k:<16}{v:>14}");
            }
            ctx.report("stats.json", &cfg, &s)
        }
        Command::Toposim { corpus, features } => {
            let cfg: TopoCmd = load_config(cfg_path, cli.seed)?;
            let c = read_corpus(corpus, None)?;
            let f = read_features(features)?;
            aligned(&f, &c, "corpus")?;
            let mode = match cfg.sampled_pairs {
                Some(pairs) => TopoMode::Sampled {
                    pairs,
                    seed: cfg.seed,
                },
                None => TopoMode::auto(c.len(), cfg.seed),
            };
            let r = topographic_similarity(&c, &f, mode)?;
            match (r.rho, &r.undefined_reason) {
                (Some(rho), _) => println!("toposim {rho:.6} over {} pairs", r.pairs),
                (None, reason) => println!(
                    "toposim undefined: {}",
                    reason.as_deref().unwrap_or("unknown")
                ),
            }
            ctx.report("toposim.json", &cfg, &r)
        }
        Command::LmPretrain { corpus } => {
            let (cfg, splits) = lm_setup(cli, corpus)?;
            let run = lm_pretrain(&cfg.lm, &splits)?;
            println!(
                "best step {} valid nll {:.4}",
                run.best_step, run.best_valid_nll
            );
            lm_outputs(&ctx, &cfg, &run, None, None)
        }
        Command::LmFinetune { source, corpus } => {
            let (cfg, splits) = lm_setup(cli, corpus)?;
            let r = lm_finetune(&load_ckpt(source)?, &splits, &cfg.lm)?;
            finetune_outputs(&ctx, &cfg, &r)
        }
        Command::LmScratch { corpus } => {
            let (cfg, splits) = lm_setup(cli, corpus)?;
            let r = lm_scratch(&cfg.lm, &splits)?;
            finetune_outputs(&ctx, &cfg, &r)
        }
        Command::ModelTransfer { checkpoint, corpus } => {
            let (mut cfg, splits) = lm_setup(cli, corpus)?;
            let ck = load_ckpt(checkpoint)?;
            cfg.lm.arch = Arch::Gru;
            cfg.lm.dim = load_game(&ck)?.hidden;
            let r = model_transfer_gru(&ck, &splits, &cfg.lm)?;
            finetune_outputs(&ctx, &cfg, &r)
        }
        Command::TranslateMetric {
            checkpoint,
            features,
            captions,
        } => {
            let mut cfg: TranslationConfig = load_config(cfg_path, cli.seed)?;
            cfg.seq2seq.seed = cfg.seed;
            let f = read_features(features)?;
            let caps = captions_from(captions)?;
            let r = translation_metric(
                &load_ckpt(checkpoint)?,
                &checkpoint.display().to_string(),
                &f,
                &caps,
                &cfg,
            )?;
            println!(
                "translation score {:.6} ({} eval pairs)",
                r.score, r.eval_pairs
            );
            ctx.report("translation.json", &cfg, &r)
        }
        Command::CaptionPretrain { features, corpus } => {
            let mut cfg: CaptionCmd = load_config(cfg_path, cli.seed)?;
            cfg.seq2seq.seed = cfg.seed;
            let f = read_features(features)?;
            let c = read_corpus(corpus, None)?;
            cfg.seq2seq.tgt_vocab = c.vocab_size;
            let pairs = caption_pairs(&f, &c, &cfg.seq2seq)?;
            let (ck, log) = caption_pretrain(&pairs, &cfg.seq2seq)?;
            ck.save(ctx.path("checkpoint"))?;
            if let Some(l) = log.last() {
                println!("final train nll {:.4}", l.train_nll);
            }
            ctx.report("report.json", &cfg, &log)
        }
        Command::CaptionFinetune {
            features,
            captions,
            pretrained,
        } => {
            let mut cfg: CaptionCmd = load_config(cfg_path, cli.seed)?;
            cfg.seq2seq.seed = cfg.seed;
            let f = read_features(features)?;
            let c = read_corpus(captions, None)?;
            cfg.seq2seq.tgt_vocab = c.vocab_size;
            let pairs = caption_pairs(&f, &c, &cfg.seq2seq)?;
            let (train, valid, test) =
                split_rows(pairs, cfg.train_fraction, cfg.valid_fraction, cfg.seed)?;
            let pre = pretrained.as_deref().map(load_ckpt).transpose()?;
            let transfer = if pre.is_some() {
                cfg.transfer
            } else {
                Transfer::None
            };
            let r = caption_finetune(pre.as_ref(), &train, &valid, &test, &cfg.seq2seq, transfer)?;
            println!(
                "test BLEU-4 {:.4} ROUGE-L {:.4}",
                r.test_bleu4, r.test_rouge_l
            );
            ctx.report("report.json", &cfg, &r)
        }
        Command::Sweep => {
            let spec: SweepSpec = load_config(cfg_path, cli.seed)?;
            let points = run_sweep(&spec, &ctx.out, &mut |p| {
                eprintln!(
                    "setup {} trial {} step {}: acc {:?} toposim {:?} translation {:?} downstream {:?}",
                    p.setup, p.trial, p.step, p.accuracy, p.toposim, p.translation, p.downstream
                );
            })?;
            println!(
                "{} points in {}",
                points.len(),
                ctx.path(POINTS_FILE).display()
            );
            Ok(())
        }
        Command::Correlate {
            points,
            metric,
            target,
        } => {
            let cfg: NoConfig = load_config(cfg_path, None)?;
            let path = points.clone().unwrap_or_else(|| ctx.path(POINTS_FILE));
            let pts = read_points(&path)?;
            let metrics = match metric {
                MetricArg::Accuracy => vec![MetricKind::Accuracy],
                MetricArg::Toposim => vec![MetricKind::Toposim],
                MetricArg::Translation => vec![MetricKind::Translation],
                MetricArg::All => vec![
                    MetricKind::Accuracy,
                    MetricKind::Toposim,
                    MetricKind::Translation,
                ],
            };
            for m in metrics {
                let name = format!("{m:?}").to_lowercase();
                match correlate(&pts, m, target) {
                    Ok(r) => {
                        println!(
                            "{name:<12} pearson {:>10} spearman {:>10} points {:>4} excluded {:>4}",
                            fmt_opt(r.pearson),
                            fmt_opt(r.spearman),
                            r.points,
                            r.excluded
                        );
                        ctx.write(&format!("scatter_{name}.csv"), &r.scatter_csv())?;
                        ctx.report(&format!("correlation_{name}.json"), &cfg, &r)?;
                    }
                    Err(e) if metric_is_all(*metric) => println!("{name:<12} {e}"),
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        }
        Command::SetupSweep { axis, values } => {
            let spec: SweepSpec = load_config(cfg_path, cli.seed)?;
            let axis = match axis {
                AxisArg::Vocab => Axis::Vocab,
                AxisArg::Seqlen => Axis::Seqlen,
            };
            let r = setup_sweep(axis, values, &spec, &ctx.out)?;
            for g in &r.groups {
                println!("{:>6} points {:>3} means {:?}", g.value, g.points, g.means);
            }
            ctx.report("setup_sweep.json", &spec, &r)
        }
    }
}

fn metric_is_all(m: MetricArg) -> bool {
    matches!(m, MetricArg::All)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("undefined".into(), |v| format!("{v:.4}"))
}

fn split_rows(
    mut pairs: Vec<Pair>,
    train: f64,
    valid: f64,
    seed: u64,
) -> Result<(Vec<Pair>, Vec<Pair>, Vec<Pair>)> {
    if !(train > 0.0 && valid > 0.0 && train + valid < 1.0) {
        return Err(Error::Config(format!(
            "bad split fractions {train}/{valid}"
        )));
    }
    let n = pairs.len();
    let n_train = (n as f64 * train).round() as usize;
    let n_valid = (n as f64 * valid).round() as usize;
    if n_train == 0 || n_valid == 0 || n_train + n_valid >= n {
        return Err(Error::Contract(format!(
            "{n} pairs are too few for a {train}/{valid} split"
        )));
    }
    Prng::new(seed, stream::SPLIT).shuffle(&mut pairs);
    let test = pairs.split_off(n_train + n_valid);
    let valid = pairs.split_off(n_train);
    Ok((pairs, valid, test))
}

fn subcommand_name(c: &Command) -> String {
    match c {
        Command::TrainGame { .. } => "train-game".into(),
        Command::GenCorpus { .. } => "gen-corpus".into(),
        Command::GenParenZipf => "gen-paren-zipf".into(),
        Command::GenWorld => "gen-world".into(),
        Command::Ablate { kind } => match kind {
            AblateKind::Permute { .. } => "ablate permute".into(),
            AblateKind::RandomSpeaker { .. } => "ablate random-speaker".into(),
            AblateKind::RandomInput { .. } => "ablate random-input".into(),
        },
        Command::Stats { .. } => "stats".into(),
        Command::Toposim { .. } => "toposim".into(),
        Command::LmPretrain { .. } => "lm-pretrain".into(),
        Command::LmFinetune { .. } => "lm-finetune".into(),
        Command::LmScratch { .. } => "lm-scratch".into(),
        Command::ModelTransfer { .. } => "model-transfer".into(),
        Command::TranslateMetric { .. } => "translate-metric".into(),
        Command::CaptionPretrain { .. } => "caption-pretrain".into(),
        Command::CaptionFinetune { .. } => "caption-finetune".into(),
        Command::Sweep => "sweep".into(),
        Command::Correlate { .. } => "correlate".into(),
        Command::SetupSweep { .. } => "setup-sweep".into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
