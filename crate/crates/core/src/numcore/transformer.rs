//! Pre-norm transformer block shared by the language models and seq2seq.

use crate::error::Result;

use super::graph::{AttentionSpec, Graph, Var};
use super::nn::{Init, LayerNorm, Linear};
use super::prng::Prng;
use super::scalar::Scalar;
use super::tensor::ParamSet;

/// Standard deviation of every transformer weight matrix and embedding at init.
pub const TRANSFORMER_INIT_STD: f64 = 0.02;

/// `x + Attn(LN(x))`, optionally `+ CrossAttn(LN(x), memory)`, then `x + FFN(LN(x))`.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub prefix: String,
    pub dim: usize,
    pub heads: usize,
    pub ffn: usize,
    pub cross: bool,
}

impl TransformerBlock {
    pub fn new(
        prefix: impl Into<String>,
        dim: usize,
        heads: usize,
        ffn: usize,
        cross: bool,
    ) -> Self {
        TransformerBlock {
            prefix: prefix.into(),
            dim,
            heads,
            ffn,
            cross,
        }
    }

    fn lin(&self, name: &str, d_in: usize, d_out: usize) -> Linear {
        Linear::new(format!("{}.{name}", self.prefix), d_in, d_out)
    }

    fn ln(&self, name: &str) -> LayerNorm {
        LayerNorm::new(format!("{}.{name}", self.prefix), self.dim)
    }

    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut Prng) {
        let w = Init::Normal {
            std: TRANSFORMER_INIT_STD,
        };
        let d = self.dim;
        self.ln("ln1").init(params);
        self.lin("qkv", d, 3 * d).init(params, w, rng);
        self.lin("proj", d, d).init(params, w, rng);
        if self.cross {
            self.ln("lnx").init(params);
            self.lin("xq", d, d).init(params, w, rng);
            self.lin("xkv", d, 2 * d).init(params, w, rng);
            self.lin("xproj", d, d).init(params, w, rng);
        }
        self.ln("ln2").init(params);
        self.lin("up", d, self.ffn).init(params, w, rng);
        self.lin("down", self.ffn, d).init(params, w, rng);
    }

    /// `x [B·T, d]`; `memory [B·S, d]` with its attention layout for cross blocks.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        x: Var,
        self_spec: &AttentionSpec,
        memory: Option<(Var, &AttentionSpec)>,
    ) -> Result<Var> {
        let d = self.dim;
        let h = self.ln("ln1").forward(g, params, x)?;
        let qkv = self.lin("qkv", d, 3 * d).forward(g, params, h)?;
        let q = g.slice(qkv, -1, 0, d)?;
        let k = g.slice(qkv, -1, d, d)?;
        let v = g.slice(qkv, -1, 2 * d, d)?;
        let a = g.attention(q, k, v, self_spec.clone())?;
        let a = self.lin("proj", d, d).forward(g, params, a)?;
        let mut x = g.add(x, a)?;
        if let (true, Some((mem, spec))) = (self.cross, memory) {
            let h = self.ln("lnx").forward(g, params, x)?;
            let q = self.lin("xq", d, d).forward(g, params, h)?;
            let kv = self.lin("xkv", d, 2 * d).forward(g, params, mem)?;
            let k = g.slice(kv, -1, 0, d)?;
            let v = g.slice(kv, -1, d, d)?;
            let a = g.attention(q, k, v, spec.clone())?;
            let a = self.lin("xproj", d, d).forward(g, params, a)?;
            x = g.add(x, a)?;
        }
        let h = self.ln("ln2").forward(g, params, x)?;
        let u = self.lin("up", d, self.ffn).forward(g, params, h)?;
        let u = g.relu(u)?;
        let u = self.lin("down", self.ffn, d).forward(g, params, u)?;
        g.add(x, u)
    }

    /// Parameter count of one block.
    pub fn param_count(&self) -> usize {
        let d = self.dim;
        let f = self.ffn;
        let mut n = 2 * 2 * d + (d * 3 * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d);
        if self.cross {
            n += 2 * d + (d * d + d) + (d * 2 * d + 2 * d) + (d * d + d);
        }
        n
    }
}
