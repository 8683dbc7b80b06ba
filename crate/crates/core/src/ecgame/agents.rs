use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numcore::{
    argmax, gru_cell, gumbel_softmax, Graph, GruCell, Init, Linear, ParamSet, Prng, Scalar, Var,
};

use super::config::{GameConfig, CLS};

/// How the speaker turns per-step logits into tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpeakMode {
    /// Gumbel-softmax relaxation fed back through a soft embedding (training).
    Soft,
    /// Categorical draw from `softmax(logits)`.
    Sample,
    Greedy,
}

pub(crate) fn spk_gru(cfg: &GameConfig) -> GruCell {
    GruCell::new("spk.gru", cfg.hidden, cfg.hidden)
}

pub(crate) fn lsn_gru(cfg: &GameConfig) -> GruCell {
    GruCell::new("lsn.gru", cfg.hidden, cfg.hidden)
}

pub(crate) fn spk_out(cfg: &GameConfig) -> Linear {
    Linear::new("spk.out", cfg.hidden, cfg.vocab_size)
}

fn spk_proj(cfg: &GameConfig) -> Option<Linear> {
    (cfg.feature_dim != cfg.hidden).then(|| Linear::new("spk.proj", cfg.feature_dim, cfg.hidden))
}

fn lsn_img(cfg: &GameConfig) -> Linear {
    Linear::new("lsn.img", cfg.feature_dim, cfg.hidden)
}

/// Fresh speaker and listener parameters (`spk.*`, `lsn.*`).
pub fn init_agents<T: Scalar>(cfg: &GameConfig, rng: &mut Prng) -> ParamSet<T> {
    let h = cfg.hidden;
    let mut p = ParamSet::new();
    let fan_h = Init::fan(h);
    p.insert(
        "spk.emb",
        Init::Normal { std: 1.0 }.sample(&[cfg.vocab_size, h], rng),
    );
    spk_gru(cfg).init(&mut p, rng);
    spk_out(cfg).init(&mut p, fan_h, rng);
    if let Some(proj) = spk_proj(cfg) {
        proj.init(&mut p, Init::fan(cfg.feature_dim), rng);
    }
    p.insert(
        "lsn.emb",
        Init::Normal { std: 1.0 }.sample(&[cfg.vocab_size, h], rng),
    );
    lsn_gru(cfg).init(&mut p, rng);
    lsn_img(cfg).init(&mut p, Init::fan(cfg.feature_dim), rng);
    p
}

/// Architecture notes stored alongside game checkpoints.
pub fn agents_meta(cfg: &GameConfig) -> Value {
    json!({
        "embedding_init": "normal(0, 1)",
        "recurrent_init": format!("uniform(-1/sqrt({h}), 1/sqrt({h}))", h = cfg.hidden),
        "affine_init": "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero bias",
        "mlp_spk": "affine H->V",
        "mlp_lsn": "affine D->H",
        "speaker_input_projection": cfg.feature_dim != cfg.hidden,
        "cls_token": CLS,
        "score": "1 / (|hl_T - mlp_lsn(i)|^2 + 1e-10)",
    })
}

pub struct SpeakerOutput {
    /// `[B][T]` emitted tokens.
    pub tokens: Vec<Vec<usize>>,
    /// Per-step `[B, V]` message vectors (relaxed sample, or `softmax(logits)` otherwise).
    pub steps: Vec<Var>,
}

/// Runs the speaker on `features [B, D]` for exactly `seq_len` steps.
pub fn speaker_forward<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &GameConfig,
    features: Var,
    mode: SpeakMode,
    rng: &mut Prng,
) -> Result<SpeakerOutput> {
    let fshape = g.shape(features).to_vec();
    if fshape.len() != 2 || fshape[1] != cfg.feature_dim {
        return Err(Error::Shape {
            op: "speaker_forward",
            lhs: fshape,
            rhs: vec![0, cfg.feature_dim],
        });
    }
    let b = fshape[0];
    let v = cfg.vocab_size;
    let emb = g.param(params, "spk.emb")?;
    let gru = spk_gru(cfg).bind(g, params)?;
    let out = spk_out(cfg);
    let mut h = match spk_proj(cfg) {
        Some(proj) => proj.forward(g, params, features)?,
        None => features,
    };
    let mut mask = vec![T::zero(); b * v];
    for r in 0..b {
        mask[r * v + CLS] = T::from_f64(-1e9);
    }
    let mask = g.constant(&[b, v], mask)?;
    let mut x = g.embedding(emb, &vec![CLS; b])?;
    let mut tokens = vec![Vec::with_capacity(cfg.seq_len); b];
    let mut steps = Vec::with_capacity(cfg.seq_len);
    for _ in 0..cfg.seq_len {
        h = gru_cell(g, &gru, x, h)?;
        let raw = out.forward(g, params, h)?;
        let logits = g.add(raw, mask)?;
        match mode {
            SpeakMode::Soft => {
                let m = gumbel_softmax(g, logits, cfg.temperature, cfg.hard_gumbel, rng)?;
                for (r, row) in g.value(m).chunks(v).enumerate() {
                    tokens[r].push(argmax(row));
                }
                x = g.soft_embedding(m, emb)?;
                steps.push(m);
            }
            SpeakMode::Sample | SpeakMode::Greedy => {
                let p = g.softmax(logits, -1)?;
                let ids: Vec<usize> = g
                    .value(p)
                    .chunks(v)
                    .map(|row| {
                        if mode == SpeakMode::Greedy {
                            argmax(row)
                        } else {
                            let w: Vec<f64> = row.iter().map(|x| x.as_f64()).collect();
                            rng.categorical(&w)
                        }
                    })
                    .collect();
                for (r, &t) in ids.iter().enumerate() {
                    tokens[r].push(t);
                }
                x = g.embedding(emb, &ids)?;
                steps.push(p);
            }
        }
    }
    Ok(SpeakerOutput { tokens, steps })
}

/// What the listener reads.
pub enum MessageInput<'a> {
    /// Per-step `[B, V]` vectors from the speaker.
    Soft(&'a [Var]),
    /// `[B][T]` token ids.
    Tokens(&'a [Vec<usize>]),
}

pub struct ListenerOutput {
    /// Final listener state `hl_T`, `[B, H]`.
    pub hidden: Var,
    /// Inverse-squared-error scores, `[B, K+1]`.
    pub scores: Var,
    /// `log_softmax(scores)`, `[B, K+1]`.
    pub log_probs: Var,
}

/// Scores `candidates [B·(K+1), D]` (grouped by trial) against the message.
pub fn listener_forward<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &GameConfig,
    message: MessageInput<'_>,
    candidates: Var,
    n_candidates: usize,
) -> Result<ListenerOutput> {
    let emb = g.param(params, "lsn.emb")?;
    let gru = lsn_gru(cfg).bind(g, params)?;
    let inputs: Vec<Var> = match message {
        MessageInput::Soft(steps) => steps
            .iter()
            .map(|&m| g.soft_embedding(m, emb))
            .collect::<Result<_>>()?,
        MessageInput::Tokens(msgs) => {
            let t = msgs.first().map_or(0, Vec::len);
            if msgs.iter().any(|m| m.len() != t) {
                return Err(Error::Contract("listener messages differ in length".into()));
            }
            (0..t)
                .map(|s| {
                    let ids: Vec<usize> = msgs.iter().map(|m| m[s]).collect();
                    g.embedding(emb, &ids)
                })
                .collect::<Result<_>>()?
        }
    };
    let b = match inputs.first() {
        Some(&x) => g.shape(x)[0],
        None => return Err(Error::Contract("empty message".into())),
    };
    let cshape = g.shape(candidates).to_vec();
    if cshape != [b * n_candidates, cfg.feature_dim] {
        return Err(Error::Shape {
            op: "listener_forward",
            lhs: cshape,
            rhs: vec![b * n_candidates, cfg.feature_dim],
        });
    }
    let mut h = g.constant(&[b, cfg.hidden], vec![T::zero(); b * cfg.hidden])?;
    for x in inputs {
        h = gru_cell(g, &gru, x, h)?;
    }
    let img = lsn_img(cfg).forward(g, params, candidates)?;
    let rep: Vec<usize> = (0..b)
        .flat_map(|i| std::iter::repeat_n(i, n_candidates))
        .collect();
    let hrep = g.gather_rows(h, &rep)?;
    let diff = g.sub(hrep, img)?;
    let d2 = g.squared_l2(diff)?;
    let d2 = g.add_scalar(d2, T::from_f64(SCORE_EPS))?;
    let s = g.recip(d2)?;
    let scores = g.reshape(s, &[b, n_candidates])?;
    let log_probs = g.log_softmax(scores, -1)?;
    Ok(ListenerOutput {
        hidden: h,
        scores,
        log_probs,
    })
}

pub const SCORE_EPS: f64 = 1e-10;
