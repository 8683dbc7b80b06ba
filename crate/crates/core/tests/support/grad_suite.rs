//! Finite-difference checks for every differentiable primitive, loop oracles
//! for the fused ops and whole-model losses.

use eclab::numcore::gradcheck::{gradcheck_inputs, gradcheck_params, GradCheckConfig};
use eclab::numcore::{gru_cell, AttentionSpec, Graph, GruCell, Init, ParamSet, Prng, Tensor, Var};
use eclab::Result;

const SEEDS: u64 = 20;

fn rand_tensor(rng: &mut Prng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.normal() * scale).collect()).unwrap()
}

fn positive_tensor(rng: &mut Prng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| 0.5 + rng.uniform() * 2.0).collect()).unwrap()
}

fn dims(rng: &mut Prng) -> (usize, usize, usize) {
    (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(4))
}

/// Weighted sum so every output coordinate carries a distinct gradient.
fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let n: usize = g.shape(y).iter().product();
    let mut rng = Prng::new(seed, 99);
    let w: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let shape = g.shape(y).to_vec();
    let wv = g.constant(&shape, w)?;
    let p = g.mul(y, wv)?;
    g.sum(p)
}

fn check<F>(name: &str, make_inputs: impl Fn(&mut Prng) -> Vec<Tensor<f64>>, f: F)
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    for seed in 0..SEEDS {
        let mut rng = Prng::new(seed, 1);
        let inputs = make_inputs(&mut rng);
        let report = gradcheck_inputs(
            &inputs,
            |g, v| {
                let y = f(g, v)?;
                weighted_sum(g, y, seed)
            },
            GradCheckConfig::with_rtol(1e-5),
        )
        .unwrap();
        assert!(
            report.passed(),
            "{name} seed {seed}: {:?} (max rel {:.3e})",
            &report.failures[..report.failures.len().min(5)],
            report.max_rel_err
        );
    }
}

pub fn matmul() {
    check(
        "matmul",
        |r| {
            let (m, k, n) = dims(r);
            vec![rand_tensor(r, &[m, k], 1.0), rand_tensor(r, &[k, n], 1.0)]
        },
        |g, v| g.matmul(v[0], v[1]),
    );
}

pub fn add_sub_mul_with_broadcast() {
    check(
        "add",
        |r| {
            let (m, n, _) = dims(r);
            vec![rand_tensor(r, &[m, n], 1.0), rand_tensor(r, &[n], 1.0)]
        },
        |g, v| g.add(v[0], v[1]),
    );
    check(
        "sub",
        |r| {
            let (m, n, _) = dims(r);
            vec![rand_tensor(r, &[m, n], 1.0), rand_tensor(r, &[m, n], 1.0)]
        },
        |g, v| g.sub(v[0], v[1]),
    );
    check(
        "mul",
        |r| {
            let (m, n, k) = dims(r);
            vec![
                rand_tensor(r, &[m, n, k], 1.0),
                rand_tensor(r, &[n, k], 1.0),
            ]
        },
        |g, v| g.mul(v[0], v[1]),
    );
}

pub fn pointwise() {
    let shape = |r: &mut Prng| {
        let (a, b, _) = dims(r);
        vec![a, b]
    };
    check(
        "sigmoid",
        |r| {
            let s = shape(r);
            vec![rand_tensor(r, &s, 2.0)]
        },
        |g, v| g.sigmoid(v[0]),
    );
    check(
        "tanh",
        |r| {
            let s = shape(r);
            vec![rand_tensor(r, &s, 2.0)]
        },
        |g, v| g.tanh(v[0]),
    );
    check(
        "exp",
        |r| {
            let s = shape(r);
            vec![rand_tensor(r, &s, 1.0)]
        },
        |g, v| g.exp(v[0]),
    );
    check(
        "log",
        |r| {
            let s = shape(r);
            vec![positive_tensor(r, &s)]
        },
        |g, v| g.log(v[0]),
    );
    check(
        "recip",
        |r| {
            let s = shape(r);
            vec![positive_tensor(r, &s)]
        },
        |g, v| g.recip(v[0]),
    );
    check(
        "scale",
        |r| {
            let s = shape(r);
            vec![rand_tensor(r, &s, 1.0)]
        },
        |g, v| g.scale(v[0], -1.7),
    );
    check(
        "add_scalar",
        |r| {
            let s = shape(r);
            vec![rand_tensor(r, &s, 1.0)]
        },
        |g, v| g.add_scalar(v[0], 0.3),
    );
    // Keep relu inputs away from the kink.
    check(
        "relu",
        |r| {
            let s = shape(r);
            let mut t = rand_tensor(r, &s, 1.0);
            t.data_mut()
                .iter_mut()
                .for_each(|x| *x += 0.1f64.copysign(*x));
            vec![t]
        },
        |g, v| g.relu(v[0]),
    );
}

pub fn softmax_and_log_softmax_any_axis() {
    for axis in [0isize, 1, -1] {
        check(
            "softmax",
            |r| {
                let (a, b, c) = dims(r);
                vec![rand_tensor(r, &[a, b, c], 2.0)]
            },
            |g, v| g.softmax(v[0], axis),
        );
        check(
            "log_softmax",
            |r| {
                let (a, b, c) = dims(r);
                vec![rand_tensor(r, &[a, b, c], 2.0)]
            },
            |g, v| g.log_softmax(v[0], axis),
        );
    }
}

pub fn concat_and_slice() {
    check(
        "concat",
        |r| {
            let (a, b, c) = dims(r);
            vec![rand_tensor(r, &[a, b], 1.0), rand_tensor(r, &[a, c], 1.0)]
        },
        |g, v| g.concat(&[v[0], v[1]], -1),
    );
    check(
        "concat0",
        |r| {
            let (a, b, c) = dims(r);
            vec![rand_tensor(r, &[a, c], 1.0), rand_tensor(r, &[b, c], 1.0)]
        },
        |g, v| g.concat(&[v[0], v[1], v[0]], 0),
    );
    check(
        "slice",
        |r| {
            let (a, b, _) = dims(r);
            vec![rand_tensor(r, &[a, b + 2], 1.0)]
        },
        |g, v| {
            let w = g.shape(v[0])[1];
            g.slice(v[0], 1, 1, w - 2)
        },
    );
}

pub fn embeddings_pick_and_reductions() {
    check(
        "gather_rows",
        |r| {
            let (a, b, _) = dims(r);
            vec![rand_tensor(r, &[a + 1, b], 1.0)]
        },
        |g, v| {
            let rows = g.shape(v[0])[0];
            let idx: Vec<usize> = (0..7).map(|i| (i * 3) % rows).collect();
            g.embedding(v[0], &idx)
        },
    );
    check(
        "soft_embedding",
        |r| {
            let (n, vsz, e) = dims(r);
            vec![
                rand_tensor(r, &[n, vsz], 1.0),
                rand_tensor(r, &[vsz, e], 1.0),
            ]
        },
        |g, v| {
            let p = g.softmax(v[0], -1)?;
            g.soft_embedding(p, v[1])
        },
    );
    check(
        "pick",
        |r| {
            let (a, b, _) = dims(r);
            vec![rand_tensor(r, &[a, b], 1.0)]
        },
        |g, v| {
            let (a, b) = (g.shape(v[0])[0], g.shape(v[0])[1]);
            let idx: Vec<usize> = (0..a).map(|i| (i * 7 + 1) % b).collect();
            g.pick(v[0], &idx)
        },
    );
    check(
        "squared_l2",
        |r| {
            let (a, b, _) = dims(r);
            vec![rand_tensor(r, &[a, b], 1.0)]
        },
        |g, v| g.squared_l2(v[0]),
    );
    check(
        "mean",
        |r| {
            let (a, b, _) = dims(r);
            vec![rand_tensor(r, &[a, b], 1.0)]
        },
        |g, v| g.mean(v[0]),
    );
    check(
        "sum",
        |r| {
            let (a, b, _) = dims(r);
            vec![rand_tensor(r, &[a, b], 1.0)]
        },
        |g, v| g.sum(v[0]),
    );
}

pub fn layer_norm() {
    check(
        "layer_norm",
        |r| {
            let (a, d, _) = dims(r);
            let d = d + 1;
            vec![
                rand_tensor(r, &[a, d], 1.5),
                rand_tensor(r, &[d], 1.0),
                rand_tensor(r, &[d], 1.0),
            ]
        },
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5),
    );
}

fn attn_inputs(
    r: &mut Prng,
    b: usize,
    h: usize,
    t: usize,
    s: usize,
    dh: usize,
) -> Vec<Tensor<f64>> {
    vec![
        rand_tensor(r, &[b * t, h * dh], 1.0),
        rand_tensor(r, &[b * s, h * dh], 1.0),
        rand_tensor(r, &[b * s, h * dh], 1.0),
    ]
}

pub fn attention_all_masks() {
    for causal in [false, true] {
        check(
            "attention",
            |r| {
                let b = 1 + r.below(2);
                let h = 1 + r.below(2);
                let t = 1 + r.below(4);
                let dh = 2 + r.below(2);
                attn_inputs(r, b, h, t, t, dh)
            },
            |g, v| {
                let width = g.shape(v[0])[1];
                let rows = g.shape(v[0])[0];
                let heads = if width % 2 == 0 && width >= 4 { 2 } else { 1 };
                let (batch, len) = if rows % 2 == 0 {
                    (2, rows / 2)
                } else {
                    (1, rows)
                };
                let spec = AttentionSpec {
                    batch,
                    heads,
                    q_len: len,
                    k_len: len,
                    causal,
                    key_padding: None,
                };
                g.attention(v[0], v[1], v[2], spec)
            },
        );
    }
    // Cross attention with key padding.
    check(
        "attention_padded",
        |r| attn_inputs(r, 2, 2, 3, 4, 2),
        |g, v| {
            let spec = AttentionSpec {
                batch: 2,
                heads: 2,
                q_len: 3,
                k_len: 4,
                causal: false,
                key_padding: Some(vec![false, false, true, true, false, false, false, true]),
            };
            g.attention(v[0], v[1], v[2], spec)
        },
    );
}

/// Dense-loop attention for a single batch element and head.
fn attention_loop(q: &[f64], k: &[f64], v: &[f64], t: usize, d: usize, causal: bool) -> Vec<f64> {
    let mut out = vec![0.0; t * d];
    for i in 0..t {
        let mut scores = Vec::new();
        for j in 0..t {
            if causal && j > i {
                continue;
            }
            let s: f64 =
                (0..d).map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() / (d as f64).sqrt();
            scores.push((j, s));
        }
        let mx = scores.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|x| (x.1 - mx).exp()).sum();
        for &(j, s) in &scores {
            let p = (s - mx).exp() / z;
            for c in 0..d {
                out[i * d + c] += p * v[j * d + c];
            }
        }
    }
    out
}

pub fn causal_attention_matches_loop_oracle() {
    let mut r = Prng::new(4, 4);
    let (t, d) = (3, 4);
    let ins = attn_inputs(&mut r, 1, 1, t, t, d);
    let mut g = Graph::new();
    let vars: Vec<Var> = ins.iter().map(|x| g.input(x.clone())).collect();
    let spec = AttentionSpec {
        batch: 1,
        heads: 1,
        q_len: t,
        k_len: t,
        causal: true,
        key_padding: None,
    };
    let y = g.attention(vars[0], vars[1], vars[2], spec).unwrap();
    let want = attention_loop(ins[0].data(), ins[1].data(), ins[2].data(), t, d, true);
    for (a, b) in g.value(y).iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
    // Row 0 attends only to key 0: output equals v[0].
    assert!(g.value(y)[..d]
        .iter()
        .zip(&ins[2].data()[..d])
        .all(|(a, b)| (a - b).abs() < 1e-12));
    // Perturbing the last key/value cannot change earlier rows.
    let mut k2 = ins[1].clone();
    let mut v2 = ins[2].clone();
    k2.data_mut()[(t - 1) * d] += 5.0;
    v2.data_mut()[(t - 1) * d + 1] -= 3.0;
    let mut g2 = Graph::new();
    let (q, k, v) = (g2.input(ins[0].clone()), g2.input(k2), g2.input(v2));
    let spec = AttentionSpec {
        batch: 1,
        heads: 1,
        q_len: t,
        k_len: t,
        causal: true,
        key_padding: None,
    };
    let y2 = g2.attention(q, k, v, spec).unwrap();
    assert_eq!(&g2.value(y2)[..(t - 1) * d], &g.value(y)[..(t - 1) * d]);
}

/// Scalar-by-scalar GRU step in plain f64.
fn gru_loop(params: &ParamSet<f64>, x: &[f64], h: &[f64]) -> Vec<f64> {
    let (e, hd) = (x.len(), h.len());
    let w_zr = params.get("c.w_zr").unwrap().data();
    let b_zr = params.get("c.b_zr").unwrap().data();
    let w_h = params.get("c.w_h").unwrap().data();
    let b_h = params.get("c.b_h").unwrap().data();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let xh: Vec<f64> = x.iter().chain(h).copied().collect();
    let mut z = vec![0.0; hd];
    let mut r = vec![0.0; hd];
    for j in 0..hd {
        let mut az = b_zr[j];
        let mut ar = b_zr[hd + j];
        for i in 0..e + hd {
            az += xh[i] * w_zr[i * 2 * hd + j];
            ar += xh[i] * w_zr[i * 2 * hd + hd + j];
        }
        z[j] = sig(az);
        r[j] = sig(ar);
    }
    let xrh: Vec<f64> = x
        .iter()
        .copied()
        .chain((0..hd).map(|j| r[j] * h[j]))
        .collect();
    (0..hd)
        .map(|j| {
            let mut a = b_h[j];
            for i in 0..e + hd {
                a += xrh[i] * w_h[i * hd + j];
            }
            (1.0 - z[j]) * h[j] + z[j] * a.tanh()
        })
        .collect()
}

pub fn gru_zero_weights_halves_state() {
    let cell = GruCell::new("c", 3, 2);
    let mut params = ParamSet::<f64>::new();
    for name in cell.param_names() {
        let shape = match name.as_str() {
            "c.w_zr" => vec![5, 4],
            "c.b_zr" => vec![4],
            "c.w_h" => vec![5, 2],
            _ => vec![2],
        };
        params.insert(name, Tensor::zeros(&shape));
    }
    let mut g = Graph::new();
    let vars = cell.bind(&mut g, &params).unwrap();
    let x = g.input(Tensor::from_f64(&[1, 3], &[1.0, -2.0, 0.5]).unwrap());
    let h = g.input(Tensor::from_f64(&[1, 2], &[0.8, -0.4]).unwrap());
    let y = gru_cell(&mut g, &vars, x, h).unwrap();
    assert_eq!(g.value(y), &[0.4, -0.2]);
}

pub fn gru_matches_loop_oracle() {
    let cell = GruCell::new("c", 2, 2);
    for seed in 0..10 {
        let mut rng = Prng::new(seed, 2);
        let mut params = ParamSet::<f64>::new();
        cell.init(&mut params, &mut rng);
        let x = rand_tensor(&mut rng, &[1, 2], 1.0);
        let h = rand_tensor(&mut rng, &[1, 2], 0.5);
        let want = gru_loop(&params, x.data(), h.data());
        let mut g = Graph::new();
        let vars = cell.bind(&mut g, &params).unwrap();
        let (xv, hv) = (g.input(x), g.input(h));
        let y = gru_cell(&mut g, &vars, xv, hv).unwrap();
        for (a, b) in g.value(y).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

pub fn gru_chain_of_five_cells() {
    let cell = GruCell::new("c", 3, 4);
    for seed in 0..5 {
        let mut rng = Prng::new(seed, 2);
        let mut params = ParamSet::<f64>::new();
        cell.init(&mut params, &mut rng);
        let xs: Vec<Tensor<f64>> = (0..5)
            .map(|_| rand_tensor(&mut rng, &[2, 3], 1.0))
            .collect();
        params.insert("h0", rand_tensor(&mut rng, &[2, 4], 0.5));
        let report = gradcheck_params(
            &params,
            |g, p| {
                let vars = cell.bind(g, p)?;
                let mut h = g.param(p, "h0")?;
                for x in &xs {
                    let xv = g.input(x.clone());
                    h = gru_cell(g, &vars, xv, h)?;
                }
                weighted_sum(g, h, seed)
            },
            GradCheckConfig::with_rtol(1e-5),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures);
    }
}

pub fn straight_through_passes_gradient() {
    let x = Tensor::from_f64(&[2, 3], &[0.3, 0.1, 0.6, 0.2, 0.5, 0.3]).unwrap();
    let report = gradcheck_inputs(
        &[x],
        |g, v| {
            let s = g.softmax(v[0], -1)?;
            // Straight-through forward is piecewise constant: compare the soft branch only.
            let w = g.constant(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0])?;
            let p = g.mul(s, w)?;
            g.sum(p)
        },
        GradCheckConfig::with_rtol(1e-5),
    )
    .unwrap();
    assert!(report.passed());
    let mut g = Graph::<f64>::new();
    let x = g.input(
        Tensor::from_f64(&[3], &[0.2, 0.5, 0.3])
            .unwrap()
            .with_grad(),
    );
    let st = g.straight_through(x).unwrap();
    let w = g.constant(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    let p = g.mul(st, w).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 2.0, 3.0]);
}

pub fn init_is_seeded() {
    let a: Tensor<f32> = Init::fan(16).sample(&[4, 4], &mut Prng::new(3, 1));
    let b: Tensor<f32> = Init::fan(16).sample(&[4, 4], &mut Prng::new(3, 1));
    assert_eq!(a, b);
    assert!(a.data().iter().all(|x| x.abs() <= 0.25));
}

fn model_check(
    name: &str,
    params: &ParamSet<f64>,
    f: impl Fn(&mut Graph<f64>, &ParamSet<f64>) -> Result<Var>,
) {
    let report = gradcheck_params(params, f, GradCheckConfig::with_rtol(1e-4)).unwrap();
    assert!(
        report.passed(),
        "{name}: {:?} (max rel {:.3e})",
        &report.failures[..report.failures.len().min(5)],
        report.max_rel_err
    );
}

pub fn game_loss_full() {
    use eclab::corpora::FeatureSet;
    use eclab::ecgame::{game_loss, init_agents, GameBatch, GameConfig};
    let cfg = GameConfig {
        vocab_size: 5,
        seq_len: 2,
        distractors: 1,
        hidden: 3,
        feature_dim: 4,
        batch_size: 2,
        pool_size: 4,
        ..Default::default()
    };
    let mut rng = Prng::new(0, 7);
    let rows: Vec<f32> = (0..16).map(|_| rng.normal() as f32).collect();
    let features = FeatureSet::new(4, 4, rows, Default::default()).unwrap();
    let batch = GameBatch::new(vec![0, 2], vec![0, 1, 3, 2], vec![0, 1]).unwrap();
    for seed in 0..3 {
        let params: ParamSet<f64> = init_agents(&cfg, &mut Prng::new(seed, 1));
        model_check("game loss", &params, |g, p| {
            let mut gumbel = Prng::new(seed, 3);
            Ok(game_loss(g, p, &cfg, &features, &batch, &mut gumbel)?.0)
        });
    }
}

pub fn transformer_lm_loss() {
    use eclab::langmodel::{lm_init, lm_nll, Arch, LmConfig};
    let cfg = LmConfig {
        arch: Arch::Transformer,
        layers: 1,
        heads: 2,
        dim: 8,
        ffn: 12,
        context: 4,
        vocab_size: 6,
        ..Default::default()
    };
    let windows = vec![vec![1, 2, 3, 4, 5], vec![0, 5, 2, 2, 1]];
    let params: ParamSet<f64> = lm_init(&cfg, &mut Prng::new(1, 1)).unwrap();
    model_check("transformer lm", &params, |g, p| {
        Ok(lm_nll(g, p, &cfg, &windows)?.0)
    });
}

pub fn gru_lm_loss() {
    use eclab::langmodel::{lm_init, lm_nll, Arch, LmConfig};
    let cfg = LmConfig {
        arch: Arch::Gru,
        dim: 5,
        context: 4,
        vocab_size: 6,
        ..Default::default()
    };
    let windows = vec![vec![1, 2, 3, 4, 5], vec![0, 5, 2, 2, 1]];
    let params: ParamSet<f64> = lm_init(&cfg, &mut Prng::new(1, 1)).unwrap();
    model_check(
        "gru lm",
        &params,
        |g, p| Ok(lm_nll(g, p, &cfg, &windows)?.0),
    );
}

pub fn seq2seq_loss() {
    use eclab::seq2seq::{s2s_init, s2s_loss, EncoderInput, Pair, Seq2SeqConfig, Source};
    let base = Seq2SeqConfig {
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        dim: 8,
        ffn: 12,
        src_vocab: 5,
        tgt_vocab: 4,
        max_src_len: 4,
        max_tgt_len: 4,
        ..Default::default()
    };
    let tokens = vec![
        Pair {
            source: Source::Tokens(vec![1, 4, 2]),
            target: vec![3, 0],
        },
        Pair {
            source: Source::Tokens(vec![2]),
            target: vec![1, 1, 2],
        },
    ];
    let mut rng = Prng::new(5, 1);
    let feats = vec![
        Pair {
            source: Source::Features(
                (0..3)
                    .map(|_| (0..3).map(|_| rng.normal() as f32).collect())
                    .collect(),
            ),
            target: vec![2, 1],
        },
        Pair {
            source: Source::Features(vec![(0..3).map(|_| rng.normal() as f32).collect()]),
            target: vec![0, 3, 3],
        },
    ];
    let continuous = Seq2SeqConfig {
        input: EncoderInput::Continuous { dim: 3 },
        ..base.clone()
    };
    for (cfg, pairs) in [(base, tokens), (continuous, feats)] {
        let params: ParamSet<f64> = s2s_init(&cfg, &mut Prng::new(2, 1)).unwrap();
        let refs: Vec<&Pair> = pairs.iter().collect();
        model_check(
            "seq2seq",
            &params,
            |g, p| Ok(s2s_loss(g, p, &cfg, &refs)?.0),
        );
    }
}

pub const ALL: &[(&str, fn())] = &[
    ("matmul", matmul),
    ("add_sub_mul_with_broadcast", add_sub_mul_with_broadcast),
    ("pointwise", pointwise),
    (
        "softmax_and_log_softmax_any_axis",
        softmax_and_log_softmax_any_axis,
    ),
    ("concat_and_slice", concat_and_slice),
    (
        "embeddings_pick_and_reductions",
        embeddings_pick_and_reductions,
    ),
    ("layer_norm", layer_norm),
    ("attention_all_masks", attention_all_masks),
    (
        "causal_attention_matches_loop_oracle",
        causal_attention_matches_loop_oracle,
    ),
    (
        "gru_zero_weights_halves_state",
        gru_zero_weights_halves_state,
    ),
    ("gru_matches_loop_oracle", gru_matches_loop_oracle),
    ("gru_chain_of_five_cells", gru_chain_of_five_cells),
    (
        "straight_through_passes_gradient",
        straight_through_passes_gradient,
    ),
    ("init_is_seeded", init_is_seeded),
    ("game_loss_full", game_loss_full),
    ("transformer_lm_loss", transformer_lm_loss),
    ("gru_lm_loss", gru_lm_loss),
    ("seq2seq_loss", seq2seq_loss),
];
