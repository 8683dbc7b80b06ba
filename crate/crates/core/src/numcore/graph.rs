//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every op applied to its [`Var`]s together with the
//! forward value. [`Graph::backward`] walks the record in reverse and applies
//! each op's vector-Jacobian product. A graph is built fresh for every
//! training step and dropped afterwards.

use crate::error::{Error, Result};

use super::scalar::{gemm, Layout, Scalar};
use super::tensor::{ParamSet, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Layout and masking of a fused multi-head attention call.
///
/// `q` is `[batch * q_len, heads * head_dim]`, `k` and `v` are
/// `[batch * k_len, heads * head_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    pub batch: usize,
    pub heads: usize,
    pub q_len: usize,
    pub k_len: usize,
    /// Query `i` may only attend to keys `j <= i`.
    pub causal: bool,
    /// `batch * k_len` flags; `true` hides that key.
    pub key_padding: Option<Vec<bool>>,
}

impl AttentionSpec {
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        if self.causal && j > i {
            return false;
        }
        match &self.key_padding {
            Some(m) => !m[b * self.k_len + j],
            None => true,
        }
    }
}

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Recip(Var),
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LogSoftmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        blocks: Vec<usize>,
    },
    Slice {
        x: Var,
        outer: usize,
        in_block: usize,
        start: usize,
        len: usize,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
        cols: usize,
    },
    Pick {
        x: Var,
        idx: Vec<usize>,
        cols: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: Box<AttentionSpec>,
        probs: Vec<T>,
    },
    SquaredL2 {
        x: Var,
        d: usize,
    },
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    StraightThrough(Var),
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Recip(_) => "recip",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::GatherRows { .. } => "gather_rows",
            Op::Pick { .. } => "pick",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::SquaredL2 { .. } => "squared_l2",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Reshape(_) => "reshape",
            Op::StraightThrough(_) => "straight_through",
        }
    }
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of recorded ops.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    bound: Vec<(usize, Var)>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let n = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, n, inner)
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn slot_mut<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if value.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        let needs_grad = match &op {
            Op::Leaf | Op::Param => false,
            other => self
                .inputs(other)
                .iter()
                .any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn inputs(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Leaf | Op::Param => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Relu(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Recip(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::StraightThrough(x) => vec![*x],
            Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Slice { x, .. }
            | Op::Pick { x, .. }
            | Op::SquaredL2 { x, .. } => vec![*x],
            Op::GatherRows { table, .. } => vec![*table],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }

    // ---- leaves -------------------------------------------------------

    /// Adds a tensor as a leaf. It receives a gradient iff `requires_grad` is set.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad;
        let shape = t.shape().to_vec();
        let v = self
            .push(shape, t.into_data(), Op::Leaf)
            .unwrap_or_else(|_| panic!("non-finite input tensor"));
        self.nodes[v.0].needs_grad = rg;
        v
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<T>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(shape_err("constant", shape, &[data.len()]));
        }
        self.push(shape.to_vec(), data, Op::Leaf)
    }

    /// Binds parameter `name`; repeated binds of the same parameter share one node.
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let idx = params
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))?;
        if let Some(&(_, v)) = self.bound.iter().find(|(i, _)| *i == idx) {
            return Ok(v);
        }
        let t = params.by_index(idx);
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param)?;
        self.nodes[v.0].needs_grad = t.requires_grad;
        self.bound.push((idx, v));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        Tensor::new(&self.nodes[v.0].shape, self.nodes[v.0].value.clone()).expect("consistent node")
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    // ---- linear algebra ----------------------------------------------

    /// `a[..., k] · b[k, n] -> [..., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.nodes[a.0].value.len() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            T::one(),
            &self.nodes[a.0].value,
            Layout::N,
            &self.nodes[b.0].value,
            Layout::N,
            T::zero(),
            &mut out,
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        self.push(shape, out, Op::MatMul(a, b))
    }

    /// `x · w + b` for `w[in, out]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        let ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
        if ok {
            Ok(())
        } else {
            Err(shape_err(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        mk: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        self.broadcast_check(op, a, b)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let bl = bv.len();
        let out: Vec<T> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % bl]))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, mk(a, b))
    }

    /// Elementwise `a + b`; `b`'s shape may be a suffix of `a`'s (broadcast over leading dims).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.nodes[x.0].value.iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -T::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var> {
        let out = self.nodes[x.0].value.iter().map(|&v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::AddScalar(x))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let out = self.nodes[x.0].value.iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(
            x,
            |v| {
                if v >= T::zero() {
                    T::one() / (T::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (T::one() + e)
                }
            },
            Op::Sigmoid(x),
        )
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| T::one() / v, Op::Recip(x))
    }

    // ---- normalisers ---------------------------------------------------

    fn axis_of(&self, x: Var, axis: isize) -> Result<usize> {
        let r = self.shape(x).len() as isize;
        let a = if axis < 0 { r + axis } else { axis };
        if a < 0 || a >= r {
            return Err(Error::Contract(format!(
                "axis {axis} out of range for shape {:?}",
                self.shape(x)
            )));
        }
        Ok(a as usize)
    }

    /// Softmax along `axis` (negative counts from the end), max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: isize) -> Result<Var> {
        let a = self.axis_of(x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, a);
        let out = softmax_forward(&self.nodes[x.0].value, outer, n, inner, false);
        self.push(shape, out, Op::Softmax { x, outer, n, inner })
    }

    pub fn log_softmax(&mut self, x: Var, axis: isize) -> Result<Var> {
        let a = self.axis_of(x, axis)?;
        let shape = self.shape(x).to_vec();
        let (outer, n, inner) = split_axis(&shape, a);
        let out = softmax_forward(&self.nodes[x.0].value, outer, n, inner, true);
        self.push(shape, out, Op::LogSoftmax { x, outer, n, inner })
    }

    /// Layer normalisation over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| shape_err("layer_norm", &shape, &[]))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(shape_err("layer_norm", &shape, self.shape(gamma)));
        }
        let xv = &self.nodes[x.0].value;
        let gv = &self.nodes[gamma.0].value;
        let bv = &self.nodes[beta.0].value;
        let rows = xv.len() / d.max(1);
        let eps = T::from_f64(eps);
        let dn = T::from_f64(d as f64);
        let mut out = vec![T::zero(); xv.len()];
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            for j in 0..d {
                out[r * d + j] = (row[j] - mu) * rs * gv[j] + bv[j];
            }
            mean.push(mu);
            rstd.push(rs);
        }
        self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            },
        )
    }

    // ---- structural ------------------------------------------------------

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: isize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let a = self.axis_of(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        let mut blocks = Vec::with_capacity(inputs.len());
        let inner: usize = base[a + 1..].iter().product();
        let outer: usize = base[..a].iter().product();
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s[..a] != base[..a] || s[a + 1..] != base[a + 1..] {
                return Err(shape_err("concat", &base, s));
            }
            total += s[a];
            blocks.push(s[a] * inner);
        }
        let width: usize = blocks.iter().sum();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            for (&v, &blk) in inputs.iter().zip(&blocks) {
                out.extend_from_slice(&self.nodes[v.0].value[o * blk..(o + 1) * blk]);
            }
        }
        let mut shape = base;
        shape[a] = total;
        self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                blocks,
            },
        )
    }

    /// `x[..., start..start+len, ...]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: isize, start: usize, len: usize) -> Result<Var> {
        let a = self.axis_of(x, axis)?;
        let shape = self.shape(x).to_vec();
        if start + len > shape[a] {
            return Err(shape_err("slice", &shape, &[start, len]));
        }
        let (outer, n, inner) = split_axis(&shape, a);
        let in_block = n * inner;
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * in_block + start * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[a] = len;
        self.push(
            new_shape,
            out,
            Op::Slice {
                x,
                outer,
                in_block,
                start: start * inner,
                len: len * inner,
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.nodes[x.0].value.len() {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let out = self.nodes[x.0].value.clone();
        self.push(shape.to_vec(), out, Op::Reshape(x))
    }

    /// Rows `idx` of `table[rows, ...]` (hard embedding lookup).
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.is_empty() {
            return Err(shape_err("gather_rows", &shape, &[idx.len()]));
        }
        let rows = shape[0];
        let cols: usize = shape[1..].iter().product();
        let tv = &self.nodes[table.0].value;
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Contract(format!(
                    "gather_rows index {i} out of range for {rows} rows"
                )));
            }
            out.extend_from_slice(&tv[i * cols..(i + 1) * cols]);
        }
        let mut new_shape = vec![idx.len()];
        new_shape.extend_from_slice(&shape[1..]);
        self.push(
            new_shape,
            out,
            Op::GatherRows {
                table,
                idx: idx.to_vec(),
                cols,
            },
        )
    }

    /// Hard embedding lookup: `table[ids]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Soft embedding lookup: `probs[n, V] · table[V, E]`.
    pub fn soft_embedding(&mut self, probs: Var, table: Var) -> Result<Var> {
        self.matmul(probs, table)
    }

    /// `x[i, idx[i]]` over the last axis.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| shape_err("pick", &shape, &[]))?;
        let rows = self.nodes[x.0].value.len() / cols.max(1);
        if rows != idx.len() {
            return Err(shape_err("pick", &shape, &[idx.len()]));
        }
        let xv = &self.nodes[x.0].value;
        let mut out = Vec::with_capacity(rows);
        for (r, &i) in idx.iter().enumerate() {
            if i >= cols {
                return Err(Error::Contract(format!("pick index {i} >= {cols}")));
            }
            out.push(xv[r * cols + i]);
        }
        self.push(
            shape[..shape.len() - 1].to_vec(),
            out,
            Op::Pick {
                x,
                idx: idx.to_vec(),
                cols,
            },
        )
    }

    // ---- reductions ------------------------------------------------------

    /// Sum of squares over the last axis.
    pub fn squared_l2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| shape_err("squared_l2", &shape, &[]))?;
        let out = self.nodes[x.0]
            .value
            .chunks(d.max(1))
            .map(|row| row.iter().map(|&v| v * v).sum())
            .collect();
        self.push(
            shape[..shape.len() - 1].to_vec(),
            out,
            Op::SquaredL2 { x, d },
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.nodes[x.0].value.iter().copied().sum();
        self.push(vec![], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if v.is_empty() {
            return Err(Error::Contract("mean of empty tensor".into()));
        }
        let s = v.iter().copied().sum::<T>() / T::from_f64(v.len() as f64);
        self.push(vec![], vec![s], Op::Mean(x))
    }

    /// One-hot of the arg-max along the last axis in the forward pass; identity gradient.
    pub fn straight_through(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| shape_err("straight_through", &shape, &[]))?;
        let mut out = vec![T::zero(); self.nodes[x.0].value.len()];
        for (r, row) in self.nodes[x.0].value.chunks(d).enumerate() {
            out[r * d + argmax(row)] = T::one();
        }
        self.push(shape, out, Op::StraightThrough(x))
    }

    /// Fused scaled dot-product attention over `spec.heads` heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Result<Var> {
        let sq = self.shape(q).to_vec();
        let sk = self.shape(k).to_vec();
        let sv = self.shape(v).to_vec();
        let width = *sq.last().unwrap_or(&0);
        if sq.len() != 2
            || sq[0] != spec.batch * spec.q_len
            || sk != [spec.batch * spec.k_len, width]
            || sv != sk
            || spec.heads == 0
            || !width.is_multiple_of(spec.heads)
        {
            return Err(shape_err("attention", &sq, &sk));
        }
        if let Some(m) = &spec.key_padding {
            if m.len() != spec.batch * spec.k_len {
                return Err(shape_err(
                    "attention",
                    &[m.len()],
                    &[spec.batch * spec.k_len],
                ));
            }
        }
        let (out, probs) = attention_forward(
            &self.nodes[q.0].value,
            &self.nodes[k.0].value,
            &self.nodes[v.0].value,
            &spec,
            width,
        );
        self.push(
            sq,
            out,
            Op::Attention {
                q,
                k,
                v,
                spec: Box::new(spec),
                probs,
            },
        )
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.shape(loss).is_empty() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = Some(g);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            for inp in self.inputs(&node.op) {
                if let Some(gi) = &grads[inp.0] {
                    if gi.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite { op: node.op.name() });
                    }
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs [`backward`](Self::backward) and adds parameter gradients into `params`.
    pub fn backward_into(&self, loss: Var, params: &mut ParamSet<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        for &(idx, v) in &self.bound {
            if let Some(g) = grads.get(v) {
                let t = params.by_index_mut(idx);
                if t.requires_grad {
                    t.accumulate_grad(g);
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let k = self.nodes[b.0].shape[0];
                let n = self.nodes[b.0].shape[1];
                let m = val(*a).len() / k.max(1);
                if self.wants(*a) {
                    let ga = slot_mut(&mut grads[a.0], m * k);
                    gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        g,
                        Layout::N,
                        val(*b),
                        Layout::T,
                        T::one(),
                        ga,
                    );
                }
                if self.wants(*b) {
                    let gb = slot_mut(&mut grads[b.0], k * n);
                    gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        val(*a),
                        Layout::T,
                        g,
                        Layout::N,
                        T::one(),
                        gb,
                    );
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if self.wants(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if self.wants(*b) {
                    let bl = val(*b).len();
                    let gb = slot_mut(&mut grads[b.0], bl);
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % bl] += sign * gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = val(*a);
                let bv = val(*b);
                let bl = bv.len();
                if self.wants(*a) {
                    let ga = slot_mut(&mut grads[a.0], av.len());
                    for (i, &gi) in g.iter().enumerate() {
                        ga[i] += gi * bv[i % bl];
                    }
                }
                if self.wants(*b) {
                    let gb = slot_mut(&mut grads[b.0], bl);
                    for (i, &gi) in g.iter().enumerate() {
                        gb[i % bl] += gi * av[i];
                    }
                }
            }
            Op::Scale(x, c) => {
                let gx = slot_mut(&mut grads[x.0], g.len());
                gx.iter_mut().zip(g).for_each(|(a, &b)| *a += b * *c);
            }
            Op::AddScalar(x) | Op::Reshape(x) | Op::StraightThrough(x) => {
                add_into(&mut grads[x.0], g)
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let gx = slot_mut(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let gx = slot_mut(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * (T::one() - y[i] * y[i]);
                }
            }
            Op::Relu(x) => {
                let xv = val(*x);
                let gx = slot_mut(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    if xv[i] > T::zero() {
                        gx[i] += g[i];
                    }
                }
            }
            Op::Exp(x) => {
                let y = &node.value;
                let gx = slot_mut(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] * y[i];
                }
            }
            Op::Log(x) => {
                let xv = val(*x);
                let gx = slot_mut(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] += g[i] / xv[i];
                }
            }
            Op::Recip(x) => {
                let y = &node.value;
                let gx = slot_mut(&mut grads[x.0], g.len());
                for i in 0..g.len() {
                    gx[i] -= g[i] * y[i] * y[i];
                }
            }
            Op::Softmax { x, outer, n, inner } => {
                let y = &node.value;
                let gx = slot_mut(&mut grads[x.0], g.len());
                for o in 0..*outer {
                    for c in 0..*inner {
                        let at = |j: usize| o * n * inner + j * inner + c;
                        let dot: T = (0..*n).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..*n {
                            gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax { x, outer, n, inner } => {
                let y = &node.value;
                let gx = slot_mut(&mut grads[x.0], g.len());
                for o in 0..*outer {
                    for c in 0..*inner {
                        let at = |j: usize| o * n * inner + j * inner + c;
                        let gs: T = (0..*n).map(|j| g[at(j)]).sum();
                        for j in 0..*n {
                            gx[at(j)] += g[at(j)] - y[at(j)].exp() * gs;
                        }
                    }
                }
            }
            Op::Concat {
                inputs,
                outer,
                blocks,
            } => {
                let width: usize = blocks.iter().sum();
                let mut off = 0;
                for (&v, &blk) in inputs.iter().zip(blocks) {
                    if self.wants(v) {
                        let gv = slot_mut(&mut grads[v.0], outer * blk);
                        for o in 0..*outer {
                            let src = &g[o * width + off..o * width + off + blk];
                            gv[o * blk..(o + 1) * blk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, &b)| *a += b);
                        }
                    }
                    off += blk;
                }
            }
            Op::Slice {
                x,
                outer,
                in_block,
                start,
                len,
            } => {
                let gx = slot_mut(&mut grads[x.0], outer * in_block);
                for o in 0..*outer {
                    let dst = &mut gx[o * in_block + start..o * in_block + start + len];
                    dst.iter_mut()
                        .zip(&g[o * len..(o + 1) * len])
                        .for_each(|(a, &b)| *a += b);
                }
            }
            Op::GatherRows { table, idx, cols } => {
                let tl = val(*table).len();
                let gt = slot_mut(&mut grads[table.0], tl);
                for (r, &i) in idx.iter().enumerate() {
                    gt[i * cols..(i + 1) * cols]
                        .iter_mut()
                        .zip(&g[r * cols..(r + 1) * cols])
                        .for_each(|(a, &b)| *a += b);
                }
            }
            Op::Pick { x, idx, cols } => {
                let xl = val(*x).len();
                let gx = slot_mut(&mut grads[x.0], xl);
                for (r, &i) in idx.iter().enumerate() {
                    gx[r * cols + i] += g[r];
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = val(*x);
                let gv = val(*gamma);
                let d = gv.len();
                let rows = xv.len() / d.max(1);
                let dn = T::from_f64(d as f64);
                let mut g_gamma = vec![T::zero(); d];
                let mut g_beta = vec![T::zero(); d];
                let mut gx = vec![T::zero(); xv.len()];
                let mut dxhat = vec![T::zero(); d];
                for r in 0..rows {
                    let (mu, rs) = (mean[r], rstd[r]);
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        let xhat = (xv[r * d + j] - mu) * rs;
                        let gr = g[r * d + j];
                        g_gamma[j] += gr * xhat;
                        g_beta[j] += gr;
                        dxhat[j] = gr * gv[j];
                        m1 += dxhat[j];
                        m2 += dxhat[j] * xhat;
                    }
                    m1 /= dn;
                    m2 /= dn;
                    for j in 0..d {
                        let xhat = (xv[r * d + j] - mu) * rs;
                        gx[r * d + j] = rs * (dxhat[j] - m1 - xhat * m2);
                    }
                }
                if self.wants(*x) {
                    add_into(&mut grads[x.0], &gx);
                }
                if self.wants(*gamma) {
                    add_into(&mut grads[gamma.0], &g_gamma);
                }
                if self.wants(*beta) {
                    add_into(&mut grads[beta.0], &g_beta);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => {
                let width = self.nodes[q.0].shape[1];
                let (gq, gk, gv) =
                    attention_backward(val(*q), val(*k), val(*v), probs, g, spec, width);
                if self.wants(*q) {
                    add_into(&mut grads[q.0], &gq);
                }
                if self.wants(*k) {
                    add_into(&mut grads[k.0], &gk);
                }
                if self.wants(*v) {
                    add_into(&mut grads[v.0], &gv);
                }
            }
            Op::SquaredL2 { x, d } => {
                let xv = val(*x);
                let gx = slot_mut(&mut grads[x.0], xv.len());
                let two = T::from_f64(2.0);
                for (i, gi) in gx.iter_mut().enumerate() {
                    *gi += two * xv[i] * g[i / d];
                }
            }
            Op::Sum(x) => {
                let n = val(*x).len();
                let gx = slot_mut(&mut grads[x.0], n);
                gx.iter_mut().for_each(|a| *a += g[0]);
            }
            Op::Mean(x) => {
                let n = val(*x).len();
                let s = g[0] / T::from_f64(n as f64);
                let gx = slot_mut(&mut grads[x.0], n);
                gx.iter_mut().for_each(|a| *a += s);
            }
        }
    }
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn softmax_forward<T: Scalar>(x: &[T], outer: usize, n: usize, inner: usize, log: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for c in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + c;
            let mut mx = T::neg_infinity();
            for j in 0..n {
                mx = mx.max(x[at(j)]);
            }
            let mut z = T::zero();
            for j in 0..n {
                let e = (x[at(j)] - mx).exp();
                out[at(j)] = e;
                z += e;
            }
            if log {
                let lz = z.ln();
                for j in 0..n {
                    out[at(j)] = x[at(j)] - mx - lz;
                }
            } else {
                for j in 0..n {
                    out[at(j)] /= z;
                }
            }
        }
    }
    out
}

/// Strided sub-matrix GEMM: `c = alpha * a·b + beta * c` where each operand
/// is given by (slice, offset, row stride, col stride).
#[allow(clippy::too_many_arguments)]
fn gemm_view<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: (&[T], usize, isize, isize),
    b: (&[T], usize, isize, isize),
    beta: T,
    c: (&mut [T], usize, isize, isize),
) {
    let last = |off: usize, r: usize, cc: usize, rs: isize, cs: isize| {
        off as isize + (r.saturating_sub(1)) as isize * rs + (cc.saturating_sub(1)) as isize * cs
    };
    assert!((last(a.1, m, k, a.2, a.3) as usize) < a.0.len() || m * k == 0);
    assert!((last(b.1, k, n, b.2, b.3) as usize) < b.0.len() || k * n == 0);
    assert!((last(c.1, m, n, c.2, c.3) as usize) < c.0.len() || m * n == 0);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every addressed element.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            alpha,
            a.0.as_ptr().add(a.1),
            a.2,
            a.3,
            b.0.as_ptr().add(b.1),
            b.2,
            b.3,
            beta,
            c.0.as_mut_ptr().add(c.1),
            c.2,
            c.3,
        )
    }
}

fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    spec: &AttentionSpec,
    width: usize,
) -> (Vec<T>, Vec<T>) {
    let (bsz, heads, tq, tk) = (spec.batch, spec.heads, spec.q_len, spec.k_len);
    let dh = width / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let w = width as isize;
    let mut out = vec![T::zero(); bsz * tq * width];
    let mut probs = vec![T::zero(); bsz * heads * tq * tk];
    for b in 0..bsz {
        for h in 0..heads {
            let p_off = (b * heads + h) * tq * tk;
            let q_off = b * tq * width + h * dh;
            let k_off = b * tk * width + h * dh;
            // scores = Q Kᵀ · scale
            gemm_view(
                tq,
                dh,
                tk,
                scale,
                (q, q_off, w, 1),
                (k, k_off, 1, w),
                T::zero(),
                (&mut probs, p_off, tk as isize, 1),
            );
            for i in 0..tq {
                let row = &mut probs[p_off + i * tk..p_off + (i + 1) * tk];
                let mut mx = T::neg_infinity();
                for (j, s) in row.iter().enumerate() {
                    if spec.allowed(b, i, j) {
                        mx = mx.max(*s);
                    }
                }
                if mx == T::neg_infinity() {
                    row.iter_mut().for_each(|s| *s = T::zero());
                    continue;
                }
                let mut z = T::zero();
                for (j, s) in row.iter_mut().enumerate() {
                    if spec.allowed(b, i, j) {
                        *s = (*s - mx).exp();
                        z += *s;
                    } else {
                        *s = T::zero();
                    }
                }
                row.iter_mut().for_each(|s| *s /= z);
            }
            gemm_view(
                tq,
                tk,
                dh,
                T::one(),
                (&probs, p_off, tk as isize, 1),
                (v, k_off, w, 1),
                T::zero(),
                (&mut out, q_off, w, 1),
            );
        }
    }
    (out, probs)
}

fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    g: &[T],
    spec: &AttentionSpec,
    width: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (bsz, heads, tq, tk) = (spec.batch, spec.heads, spec.q_len, spec.k_len);
    let dh = width / heads;
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let w = width as isize;
    let mut gq = vec![T::zero(); q.len()];
    let mut gk = vec![T::zero(); k.len()];
    let mut gv = vec![T::zero(); v.len()];
    let mut dp = vec![T::zero(); tq * tk];
    for b in 0..bsz {
        for h in 0..heads {
            let p_off = (b * heads + h) * tq * tk;
            let q_off = b * tq * width + h * dh;
            let k_off = b * tk * width + h * dh;
            // dV += Pᵀ dO
            gemm_view(
                tk,
                tq,
                dh,
                T::one(),
                (probs, p_off, 1, tk as isize),
                (g, q_off, w, 1),
                T::one(),
                (&mut gv, k_off, w, 1),
            );
            // dP = dO Vᵀ
            gemm_view(
                tq,
                dh,
                tk,
                T::one(),
                (g, q_off, w, 1),
                (v, k_off, 1, w),
                T::zero(),
                (&mut dp, 0, tk as isize, 1),
            );
            // dS = P ⊙ (dP − rowsum(dP ⊙ P))
            for i in 0..tq {
                let p = &probs[p_off + i * tk..p_off + (i + 1) * tk];
                let d = &mut dp[i * tk..(i + 1) * tk];
                let dot: T = p.iter().zip(d.iter()).map(|(&a, &b)| a * b).sum();
                for j in 0..tk {
                    d[j] = p[j] * (d[j] - dot);
                }
            }
            // dQ += dS K · scale ; dK += dSᵀ Q · scale
            gemm_view(
                tq,
                tk,
                dh,
                scale,
                (&dp, 0, tk as isize, 1),
                (k, k_off, w, 1),
                T::one(),
                (&mut gq, q_off, w, 1),
            );
            gemm_view(
                tk,
                tq,
                dh,
                scale,
                (&dp, 0, 1, tk as isize),
                (q, q_off, w, 1),
                T::one(),
                (&mut gk, k_off, w, 1),
            );
        }
    }
    (gq, gk, gv)
}
