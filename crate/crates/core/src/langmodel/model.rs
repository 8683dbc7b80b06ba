use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numcore::{
    gru_cell, AttentionSpec, Graph, GruCell, Init, LayerNorm, Linear, ParamSet, Prng, Scalar,
    TransformerBlock, Var, TRANSFORMER_INIT_STD,
};

use super::config::{Arch, LmConfig};

pub(crate) fn blocks(cfg: &LmConfig) -> Vec<TransformerBlock> {
    (0..cfg.layers)
        .map(|i| TransformerBlock::new(format!("block{i}"), cfg.dim, cfg.heads, cfg.ffn, false))
        .collect()
}

pub(crate) fn gru(cfg: &LmConfig) -> GruCell {
    GruCell::new("gru", cfg.dim, cfg.dim)
}

fn head(cfg: &LmConfig) -> Linear {
    Linear::new("head", cfg.dim, cfg.vocab_size)
}

const NORMAL: Init = Init::Normal {
    std: TRANSFORMER_INIT_STD,
};

/// Token embedding and output head (the vocabulary-dependent parameters).
pub(crate) fn init_vocab_params<T: Scalar>(
    cfg: &LmConfig,
    params: &mut ParamSet<T>,
    rng: &mut Prng,
) {
    params.insert("tok_emb", NORMAL.sample(&[cfg.vocab_size, cfg.dim], rng));
    head(cfg).init(params, NORMAL, rng);
}

/// Fresh parameters; `cfg.vocab_size` must already be resolved.
pub fn lm_init<T: Scalar>(cfg: &LmConfig, rng: &mut Prng) -> Result<ParamSet<T>> {
    cfg.validate()?;
    if cfg.vocab_size == 0 {
        return Err(Error::Config("lm_init needs a resolved vocab_size".into()));
    }
    let mut p = ParamSet::new();
    init_vocab_params(cfg, &mut p, rng);
    match cfg.arch {
        Arch::Transformer => {
            p.insert("pos_emb", NORMAL.sample(&[cfg.context, cfg.dim], rng));
            for b in blocks(cfg) {
                b.init(&mut p, rng);
            }
            LayerNorm::new("ln_f", cfg.dim).init(&mut p);
        }
        Arch::Gru => gru(cfg).init(&mut p, rng),
    }
    Ok(p)
}

/// Closed-form parameter count.
pub fn lm_param_count(cfg: &LmConfig) -> usize {
    let (v, d) = (cfg.vocab_size, cfg.dim);
    let shared = v * d + d * v + v;
    match cfg.arch {
        Arch::Transformer => {
            let block = TransformerBlock::new("", d, cfg.heads, cfg.ffn, false).param_count();
            shared + cfg.context * d + cfg.layers * block + 2 * d
        }
        Arch::Gru => shared + 2 * d * 2 * d + 2 * d + 2 * d * d + d,
    }
}

pub fn lm_meta(cfg: &LmConfig) -> Value {
    match cfg.arch {
        Arch::Transformer => json!({
            "blocks": "pre-norm (LN -> masked self-attention -> residual, LN -> ReLU FFN -> residual)",
            "positions": "learned",
            "head": "untied affine",
            "init": format!("normal(0, {TRANSFORMER_INIT_STD}) weights and embeddings, zero bias, unit LN gain"),
        }),
        Arch::Gru => json!({
            "recurrence": "one GRU layer",
            "head": "untied affine",
            "init": format!("embedding/head normal(0, {TRANSFORMER_INIT_STD}); GRU uniform(-1/sqrt(d), 1/sqrt(d))"),
        }),
    }
}

/// Summed next-token NLL over `windows` (all the same length `L >= 2`);
/// returns the loss node and the number of predicted tokens.
pub fn lm_nll<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &LmConfig,
    windows: &[Vec<usize>],
) -> Result<(Var, usize)> {
    let logp = lm_log_probs(g, params, cfg, windows)?;
    let (b, t) = (windows.len(), windows[0].len() - 1);
    let targets: Vec<usize> = match cfg.arch {
        Arch::Transformer => windows
            .iter()
            .flat_map(|w| w[1..].iter().copied())
            .collect(),
        Arch::Gru => (0..t)
            .flat_map(|s| windows.iter().map(move |w| w[s + 1]))
            .collect(),
    };
    let picked = g.pick(logp, &targets)?;
    let total = g.sum(picked)?;
    Ok((g.neg(total)?, b * t))
}

/// Per-position `log_softmax` over the vocabulary for every input position of
/// each window except the last. Transformer rows are window-major, GRU rows time-major.
pub(crate) fn lm_log_probs<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &LmConfig,
    windows: &[Vec<usize>],
) -> Result<Var> {
    let len = windows.first().map_or(0, Vec::len);
    if len < 2 || windows.iter().any(|w| w.len() != len) {
        return Err(Error::Contract(
            "lm windows must share a length >= 2".into(),
        ));
    }
    if let Some(&t) = windows.iter().flatten().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::Contract(format!(
            "token {t} overflows model vocabulary {}",
            cfg.vocab_size
        )));
    }
    let (b, t) = (windows.len(), len - 1);
    let emb = g.param(params, "tok_emb")?;
    let hidden = match cfg.arch {
        Arch::Transformer => {
            if t > cfg.context {
                return Err(Error::Contract(format!(
                    "window of {t} exceeds context {}",
                    cfg.context
                )));
            }
            let ids: Vec<usize> = windows
                .iter()
                .flat_map(|w| w[..t].iter().copied())
                .collect();
            let pos: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
            let pe = g.param(params, "pos_emb")?;
            let xe = g.embedding(emb, &ids)?;
            let xp = g.embedding(pe, &pos)?;
            let mut x = g.add(xe, xp)?;
            let spec = AttentionSpec {
                batch: b,
                heads: cfg.heads,
                q_len: t,
                k_len: t,
                causal: true,
                key_padding: None,
            };
            for blk in blocks(cfg) {
                x = blk.forward(g, params, x, &spec, None)?;
            }
            LayerNorm::new("ln_f", cfg.dim).forward(g, params, x)?
        }
        Arch::Gru => {
            let cell = gru(cfg).bind(g, params)?;
            let mut h = g.constant(&[b, cfg.dim], vec![T::zero(); b * cfg.dim])?;
            let mut hs = Vec::with_capacity(t);
            for s in 0..t {
                let ids: Vec<usize> = windows.iter().map(|w| w[s]).collect();
                let x = g.embedding(emb, &ids)?;
                h = gru_cell(g, &cell, x, h)?;
                hs.push(h);
            }
            g.concat(&hs, 0)?
        }
    };
    let logits = head(cfg).forward(g, params, hidden)?;
    g.log_softmax(logits, -1)
}
