use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::numcore::{
    argmax, AttentionSpec, Graph, Init, LayerNorm, Linear, ParamSet, Prng, Scalar,
    TransformerBlock, Var, TRANSFORMER_INIT_STD,
};

use super::config::{EncoderInput, Seq2SeqConfig};

/// Encoder input of one example.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Tokens(Vec<usize>),
    Features(Vec<Vec<f32>>),
}

impl Source {
    pub fn len(&self) -> usize {
        match self {
            Source::Tokens(t) => t.len(),
            Source::Features(f) => f.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pair {
    pub source: Source,
    /// Natural tokens without sentinels.
    pub target: Vec<usize>,
}

const NORMAL: Init = Init::Normal {
    std: TRANSFORMER_INIT_STD,
};

fn enc_blocks(cfg: &Seq2SeqConfig) -> Vec<TransformerBlock> {
    (0..cfg.enc_layers)
        .map(|i| TransformerBlock::new(format!("enc.block{i}"), cfg.dim, cfg.heads, cfg.ffn, false))
        .collect()
}

fn dec_blocks(cfg: &Seq2SeqConfig) -> Vec<TransformerBlock> {
    (0..cfg.dec_layers)
        .map(|i| TransformerBlock::new(format!("dec.block{i}"), cfg.dim, cfg.heads, cfg.ffn, true))
        .collect()
}

fn enc_in(cfg: &Seq2SeqConfig, dim: usize) -> Linear {
    Linear::new("enc.in", dim, cfg.dim)
}

fn head(cfg: &Seq2SeqConfig) -> Linear {
    Linear::new("dec.head", cfg.dim, cfg.out_vocab())
}

/// Encoder parameters (`enc.*`).
pub(crate) fn init_encoder<T: Scalar>(cfg: &Seq2SeqConfig, p: &mut ParamSet<T>, rng: &mut Prng) {
    match cfg.input {
        EncoderInput::Tokens => {
            p.insert("enc.tok_emb", NORMAL.sample(&[cfg.src_vocab, cfg.dim], rng))
        }
        EncoderInput::Continuous { dim } => enc_in(cfg, dim).init(p, Init::fan(dim), rng),
    }
    p.insert("enc.pos", NORMAL.sample(&[cfg.max_src_len, cfg.dim], rng));
    for b in enc_blocks(cfg) {
        b.init(p, rng);
    }
    LayerNorm::new("enc.ln_f", cfg.dim).init(p);
}

/// Decoder and output head parameters (`dec.*`).
pub(crate) fn init_decoder<T: Scalar>(cfg: &Seq2SeqConfig, p: &mut ParamSet<T>, rng: &mut Prng) {
    p.insert(
        "dec.tok_emb",
        NORMAL.sample(&[cfg.out_vocab(), cfg.dim], rng),
    );
    p.insert(
        "dec.pos",
        NORMAL.sample(&[cfg.max_tgt_len + 1, cfg.dim], rng),
    );
    for b in dec_blocks(cfg) {
        b.init(p, rng);
    }
    LayerNorm::new("dec.ln_f", cfg.dim).init(p);
    head(cfg).init(p, NORMAL, rng);
}

pub fn s2s_init<T: Scalar>(cfg: &Seq2SeqConfig, rng: &mut Prng) -> Result<ParamSet<T>> {
    cfg.validate()?;
    let mut p = ParamSet::new();
    init_encoder(cfg, &mut p, rng);
    init_decoder(cfg, &mut p, rng);
    Ok(p)
}

pub fn s2s_meta(cfg: &Seq2SeqConfig) -> Value {
    json!({
        "blocks": "pre-norm; decoder blocks add cross-attention after masked self-attention",
        "positions": "learned",
        "sentinels": {"bos": cfg.bos(), "eos": cfg.eos()},
        "init": format!("normal(0, {TRANSFORMER_INIT_STD}) weights and embeddings, zero bias; continuous input layer uniform(-1/sqrt(D), 1/sqrt(D))"),
    })
}

pub(crate) fn check_source(cfg: &Seq2SeqConfig, s: &Source) -> Result<()> {
    if s.is_empty() || s.len() > cfg.max_src_len {
        return Err(Error::Contract(format!(
            "source length {} outside 1..={}",
            s.len(),
            cfg.max_src_len
        )));
    }
    match (cfg.input, s) {
        (EncoderInput::Tokens, Source::Tokens(t)) => {
            if let Some(&x) = t.iter().find(|&&x| x >= cfg.src_vocab) {
                return Err(Error::Contract(format!(
                    "source token {x} overflows vocabulary {}",
                    cfg.src_vocab
                )));
            }
        }
        (EncoderInput::Continuous { dim }, Source::Features(f)) => {
            if f.iter().any(|v| v.len() != dim) {
                return Err(Error::Contract(format!(
                    "source vectors must be {dim}-dimensional"
                )));
            }
        }
        _ => {
            return Err(Error::Contract(
                "source kind does not match encoder input mode".into(),
            ))
        }
    }
    Ok(())
}

/// Encoded memory `[B·S, d]` plus the key-padding layout for cross-attention.
pub(crate) struct Memory {
    pub var: Var,
    pub len: usize,
    pub padding: Vec<bool>,
}

pub(crate) fn encode<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &Seq2SeqConfig,
    sources: &[&Source],
) -> Result<Memory> {
    let b = sources.len();
    let s = sources.iter().map(|x| x.len()).max().unwrap_or(0);
    let mut padding = Vec::with_capacity(b * s);
    for src in sources {
        check_source(cfg, src)?;
        padding.extend((0..s).map(|i| i >= src.len()));
    }
    let x = match cfg.input {
        EncoderInput::Tokens => {
            let ids: Vec<usize> = sources
                .iter()
                .flat_map(|src| match src {
                    Source::Tokens(t) => (0..s)
                        .map(|i| t.get(i).copied().unwrap_or(0))
                        .collect::<Vec<_>>(),
                    Source::Features(_) => unreachable!("checked above"),
                })
                .collect();
            let emb = g.param(params, "enc.tok_emb")?;
            g.embedding(emb, &ids)?
        }
        EncoderInput::Continuous { dim } => {
            let mut data = Vec::with_capacity(b * s * dim);
            for src in sources {
                let Source::Features(f) = src else {
                    unreachable!("checked above")
                };
                for i in 0..s {
                    match f.get(i) {
                        Some(v) => data.extend(v.iter().map(|&x| T::from_f64(x as f64))),
                        None => data.extend(std::iter::repeat_n(T::zero(), dim)),
                    }
                }
            }
            let raw = g.constant(&[b * s, dim], data)?;
            enc_in(cfg, dim).forward(g, params, raw)?
        }
    };
    let pe = g.param(params, "enc.pos")?;
    let pos: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
    let pe = g.embedding(pe, &pos)?;
    let mut x = g.add(x, pe)?;
    let spec = AttentionSpec {
        batch: b,
        heads: cfg.heads,
        q_len: s,
        k_len: s,
        causal: false,
        key_padding: Some(padding.clone()),
    };
    for blk in enc_blocks(cfg) {
        x = blk.forward(g, params, x, &spec, None)?;
    }
    let var = LayerNorm::new("enc.ln_f", cfg.dim).forward(g, params, x)?;
    Ok(Memory {
        var,
        len: s,
        padding,
    })
}

/// Decoder log-probabilities `[B·T, V+2]` for equal-length decoder inputs.
pub(crate) fn decode_step<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &Seq2SeqConfig,
    memory: &Memory,
    inputs: &[Vec<usize>],
) -> Result<Var> {
    let b = inputs.len();
    let t = inputs[0].len();
    if t > cfg.max_tgt_len + 1 {
        return Err(Error::Contract(format!(
            "decoder input of {t} exceeds max_tgt_len + 1 = {}",
            cfg.max_tgt_len + 1
        )));
    }
    let ids: Vec<usize> = inputs.iter().flatten().copied().collect();
    let emb = g.param(params, "dec.tok_emb")?;
    let x = g.embedding(emb, &ids)?;
    let pe = g.param(params, "dec.pos")?;
    let pos: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
    let pe = g.embedding(pe, &pos)?;
    let mut x = g.add(x, pe)?;
    let self_spec = AttentionSpec {
        batch: b,
        heads: cfg.heads,
        q_len: t,
        k_len: t,
        causal: true,
        key_padding: None,
    };
    let cross_spec = AttentionSpec {
        batch: b,
        heads: cfg.heads,
        q_len: t,
        k_len: memory.len,
        causal: false,
        key_padding: Some(memory.padding.clone()),
    };
    for blk in dec_blocks(cfg) {
        x = blk.forward(g, params, x, &self_spec, Some((memory.var, &cross_spec)))?;
    }
    let x = LayerNorm::new("dec.ln_f", cfg.dim).forward(g, params, x)?;
    let logits = head(cfg).forward(g, params, x)?;
    g.log_softmax(logits, -1)
}

/// Teacher-forced NLL summed over every target token (including the end
/// sentinel); returns the loss node and the token count.
pub fn s2s_loss<T: Scalar>(
    g: &mut Graph<T>,
    params: &ParamSet<T>,
    cfg: &Seq2SeqConfig,
    pairs: &[&Pair],
) -> Result<(Var, usize)> {
    if pairs.is_empty() {
        return Err(Error::Contract("s2s_loss of an empty batch".into()));
    }
    for p in pairs {
        if p.target.len() > cfg.max_tgt_len {
            return Err(Error::Contract(format!(
                "target length {} exceeds max_tgt_len {}",
                p.target.len(),
                cfg.max_tgt_len
            )));
        }
        if let Some(&x) = p.target.iter().find(|&&x| x >= cfg.tgt_vocab) {
            return Err(Error::Contract(format!(
                "target token {x} overflows vocabulary {}",
                cfg.tgt_vocab
            )));
        }
    }
    let sources: Vec<&Source> = pairs.iter().map(|p| &p.source).collect();
    let memory = encode(g, params, cfg, &sources)?;
    let t = pairs.iter().map(|p| p.target.len()).max().unwrap_or(0) + 1;
    let mut inputs = Vec::with_capacity(pairs.len());
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let mut inp = vec![cfg.bos()];
        inp.extend_from_slice(&p.target);
        inp.resize(t, cfg.eos());
        inputs.push(inp);
        for (j, &y) in p
            .target
            .iter()
            .chain(std::iter::once(&cfg.eos()))
            .enumerate()
        {
            rows.push(i * t + j);
            targets.push(y);
        }
    }
    let logp = decode_step(g, params, cfg, &memory, &inputs)?;
    let sel = g.gather_rows(logp, &rows)?;
    let picked = g.pick(sel, &targets)?;
    let total = g.sum(picked)?;
    Ok((g.neg(total)?, targets.len()))
}

/// Greedy decoding of a batch of sources; the start sentinel is never emitted.
pub fn greedy_decode(
    params: &ParamSet<f32>,
    cfg: &Seq2SeqConfig,
    sources: &[&Source],
) -> Result<Vec<Vec<usize>>> {
    let b = sources.len();
    let mut seqs: Vec<Vec<usize>> = vec![vec![cfg.bos()]; b];
    let mut done = vec![false; b];
    let v = cfg.out_vocab();
    for _ in 0..cfg.max_tgt_len {
        let mut g = Graph::<f32>::new();
        let memory = encode(&mut g, params, cfg, sources)?;
        let logp = decode_step(&mut g, params, cfg, &memory, &seqs)?;
        let t = seqs[0].len();
        let lp = g.value(logp);
        for (i, s) in seqs.iter_mut().enumerate() {
            let row = &lp[(i * t + t - 1) * v..(i * t + t) * v];
            let next = if done[i] {
                cfg.eos()
            } else {
                best_token(row, cfg)
            };
            done[i] |= next == cfg.eos();
            s.push(next);
        }
        if done.iter().all(|&d| d) {
            break;
        }
    }
    Ok(seqs.into_iter().map(|s| strip(&s, cfg)).collect())
}

fn best_token(row: &[f32], cfg: &Seq2SeqConfig) -> usize {
    let mut r = row.to_vec();
    r[cfg.bos()] = f32::NEG_INFINITY;
    argmax(&r)
}

fn strip(s: &[usize], cfg: &Seq2SeqConfig) -> Vec<usize> {
    s[1..]
        .iter()
        .take_while(|&&x| x != cfg.eos())
        .copied()
        .collect()
}

/// Beam search without length normalisation; width 1 reproduces greedy decoding.
pub fn beam_decode(
    params: &ParamSet<f32>,
    cfg: &Seq2SeqConfig,
    source: &Source,
    width: usize,
) -> Result<Vec<usize>> {
    if width == 0 {
        return Err(Error::Contract("beam width must be >= 1".into()));
    }
    // (tokens, log-probability, finished)
    let mut beams: Vec<(Vec<usize>, f64, bool)> = vec![(vec![cfg.bos()], 0.0, false)];
    let v = cfg.out_vocab();
    for _ in 0..cfg.max_tgt_len {
        let open: Vec<usize> = (0..beams.len()).filter(|&i| !beams[i].2).collect();
        if open.is_empty() {
            break;
        }
        let inputs: Vec<Vec<usize>> = open.iter().map(|&i| beams[i].0.clone()).collect();
        let srcs: Vec<&Source> = vec![source; inputs.len()];
        let mut g = Graph::<f32>::new();
        let memory = encode(&mut g, params, cfg, &srcs)?;
        let logp = decode_step(&mut g, params, cfg, &memory, &inputs)?;
        let t = inputs[0].len();
        let lp = g.value(logp);
        let mut cand: Vec<(Vec<usize>, f64, bool)> =
            beams.iter().filter(|b| b.2).cloned().collect();
        for (k, &i) in open.iter().enumerate() {
            let row = &lp[(k * t + t - 1) * v..(k * t + t) * v];
            for (tok, &l) in row.iter().enumerate() {
                if tok == cfg.bos() {
                    continue;
                }
                let mut s = beams[i].0.clone();
                s.push(tok);
                cand.push((s, beams[i].1 + l as f64, tok == cfg.eos()));
            }
        }
        // Stable sort keeps earlier beams and lower token ids first on ties.
        cand.sort_by(|a, b| b.1.total_cmp(&a.1));
        cand.truncate(width);
        beams = cand;
    }
    Ok(strip(&beams[0].0, cfg))
}

/// Decodes with the configured strategy.
pub fn s2s_decode(
    params: &ParamSet<f32>,
    cfg: &Seq2SeqConfig,
    sources: &[&Source],
) -> Result<Vec<Vec<usize>>> {
    match cfg.decode {
        super::config::DecodeStrategy::Greedy => {
            let mut out = Vec::with_capacity(sources.len());
            for chunk in sources.chunks(256) {
                out.extend(greedy_decode(params, cfg, chunk)?);
            }
            Ok(out)
        }
        super::config::DecodeStrategy::Beam { width } => sources
            .iter()
            .map(|s| beam_decode(params, cfg, s, width))
            .collect(),
    }
}
