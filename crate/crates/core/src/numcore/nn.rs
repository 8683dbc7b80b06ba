//! Parameter initialisation and small reusable layers built on [`Graph`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::prng::Prng;
use super::scalar::Scalar;
use super::tensor::{ParamSet, Tensor};

/// Initialisation scheme; the chosen scheme is recorded in checkpoint manifests.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Init {
    /// Uniform in `[-bound, bound]`.
    Uniform {
        bound: f64,
    },
    Normal {
        std: f64,
    },
    Zeros,
    Ones,
}

impl Init {
    /// `uniform(-1/sqrt(fan), 1/sqrt(fan))`.
    pub fn fan(fan: usize) -> Self {
        Init::Uniform {
            bound: 1.0 / (fan.max(1) as f64).sqrt(),
        }
    }

    pub fn sample<T: Scalar>(self, shape: &[usize], rng: &mut Prng) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| match self {
                Init::Uniform { bound } => T::from_f64((rng.uniform() * 2.0 - 1.0) * bound),
                Init::Normal { std } => T::from_f64(rng.normal() * std),
                Init::Zeros => T::zero(),
                Init::Ones => T::one(),
            })
            .collect();
        Tensor::new(shape, data).expect("shape product")
    }
}

/// Affine layer `x · w + b`, parameters `{prefix}.w [in, out]` and `{prefix}.b [out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub prefix: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(prefix: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Linear {
            prefix: prefix.into(),
            d_in,
            d_out,
        }
    }

    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, w: Init, rng: &mut Prng) {
        params.insert(self.w(), w.sample(&[self.d_in, self.d_out], rng));
        params.insert(self.b(), Init::Zeros.sample(&[self.d_out], rng));
    }

    pub fn w(&self) -> String {
        format!("{}.w", self.prefix)
    }

    pub fn b(&self) -> String {
        format!("{}.b", self.prefix)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        x: Var,
    ) -> Result<Var> {
        let w = g.param(params, &self.w())?;
        let b = g.param(params, &self.b())?;
        g.linear(x, w, b)
    }
}

/// Layer norm with `{prefix}.gamma` / `{prefix}.beta`.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub prefix: String,
    pub dim: usize,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(prefix: impl Into<String>, dim: usize) -> Self {
        LayerNorm {
            prefix: prefix.into(),
            dim,
        }
    }

    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>) {
        params.insert(
            format!("{}.gamma", self.prefix),
            Tensor::full(&[self.dim], T::one()),
        );
        params.insert(format!("{}.beta", self.prefix), Tensor::zeros(&[self.dim]));
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        params: &ParamSet<T>,
        x: Var,
    ) -> Result<Var> {
        let gamma = g.param(params, &format!("{}.gamma", self.prefix))?;
        let beta = g.param(params, &format!("{}.beta", self.prefix))?;
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(W_z·[x, h] + b_z)      r = σ(W_r·[x, h] + b_r)
/// h̃  = tanh(W_h·[x, r ⊙ h] + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// Parameters: `{prefix}.w_zr [E+H, 2H]` (update gate columns first),
/// `{prefix}.b_zr [2H]`, `{prefix}.w_h [E+H, H]`, `{prefix}.b_h [H]`.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

/// Bound parameter handles of a [`GruCell`] within one graph.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    w_zr: Var,
    b_zr: Var,
    w_h: Var,
    b_h: Var,
    hidden: usize,
}

impl GruCell {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize) -> Self {
        GruCell {
            prefix: prefix.into(),
            input,
            hidden,
        }
    }

    pub fn param_names(&self) -> [String; 4] {
        ["w_zr", "b_zr", "w_h", "b_h"].map(|s| format!("{}.{s}", self.prefix))
    }

    /// Weights and biases `uniform(-1/sqrt(H), 1/sqrt(H))`.
    pub fn init<T: Scalar>(&self, params: &mut ParamSet<T>, rng: &mut Prng) {
        let init = Init::fan(self.hidden);
        let (e, h) = (self.input, self.hidden);
        let [w_zr, b_zr, w_h, b_h] = self.param_names();
        params.insert(w_zr, init.sample(&[e + h, 2 * h], rng));
        params.insert(b_zr, init.sample(&[2 * h], rng));
        params.insert(w_h, init.sample(&[e + h, h], rng));
        params.insert(b_h, init.sample(&[h], rng));
    }

    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>) -> Result<GruVars> {
        let [w_zr, b_zr, w_h, b_h] = self.param_names();
        let vars = GruVars {
            w_zr: g.param(params, &w_zr)?,
            b_zr: g.param(params, &b_zr)?,
            w_h: g.param(params, &w_h)?,
            b_h: g.param(params, &b_h)?,
            hidden: self.hidden,
        };
        let (e, h) = (self.input, self.hidden);
        if g.shape(vars.w_zr) != [e + h, 2 * h] || g.shape(vars.w_h) != [e + h, h] {
            return Err(Error::Shape {
                op: "gru_cell",
                lhs: g.shape(vars.w_zr).to_vec(),
                rhs: vec![e + h, 2 * h],
            });
        }
        Ok(vars)
    }
}

/// One GRU step on a batch: `x [B, E]`, `h [B, H]` → `[B, H]`.
pub fn gru_cell<T: Scalar>(g: &mut Graph<T>, cell: &GruVars, x: Var, h: Var) -> Result<Var> {
    let hd = cell.hidden;
    if g.shape(h).last() != Some(&hd) || g.shape(x).len() != g.shape(h).len() {
        return Err(Error::Shape {
            op: "gru_cell",
            lhs: g.shape(x).to_vec(),
            rhs: g.shape(h).to_vec(),
        });
    }
    let xh = g.concat(&[x, h], -1)?;
    let zr_pre = g.linear(xh, cell.w_zr, cell.b_zr)?;
    let zr = g.sigmoid(zr_pre)?;
    let z = g.slice(zr, -1, 0, hd)?;
    let r = g.slice(zr, -1, hd, hd)?;
    let rh = g.mul(r, h)?;
    let xrh = g.concat(&[x, rh], -1)?;
    let cand_pre = g.linear(xrh, cell.w_h, cell.b_h)?;
    let cand = g.tanh(cand_pre)?;
    // h' = h + z ⊙ (h̃ − h)
    let diff = g.sub(cand, h)?;
    let upd = g.mul(z, diff)?;
    g.add(h, upd)
}
