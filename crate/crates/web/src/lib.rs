//! WebAssembly bindings for the static demo page in `www/`.

use eclab::corpora::{synthetic_world, zipf_probabilities, Corpus, SyntheticWorldSpec};
use eclab::metrics::{topographic_similarity, TopoMode};
use eclab::numcore::{gumbel_softmax, prng::stream, Graph, Prng};
use wasm_bindgen::prelude::*;

fn js(e: eclab::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Zipf(s) probabilities for ranks `1..=vocab`.
#[wasm_bindgen]
pub fn zipf_curve(vocab: usize, exponent: f64) -> Vec<f64> {
    zipf_probabilities(vocab, exponent)
}

/// One Gumbel-softmax draw over `logits` at `temperature`.
#[wasm_bindgen]
pub fn gumbel_sample(
    logits: Vec<f64>,
    temperature: f64,
    hard: bool,
    seed: u32,
) -> Result<Vec<f64>, JsValue> {
    let mut g = Graph::<f64>::new();
    let n = logits.len();
    let x = g.constant(&[1, n], logits).map_err(js)?;
    let mut rng = Prng::new(seed as u64, stream::GUMBEL);
    let y = gumbel_softmax(&mut g, x, temperature, hard, &mut rng).map_err(js)?;
    Ok(g.value(y).to_vec())
}

/// Topographic similarity of a compositional language over a synthetic world
/// after replacing a `scramble` fraction of messages with random ones.
/// Returns NaN when the score is undefined.
#[wasm_bindgen]
pub fn toposim_demo(
    attributes: usize,
    values: usize,
    noise: f64,
    scramble: f64,
    seed: u32,
) -> Result<f64, JsValue> {
    let spec = SyntheticWorldSpec {
        attributes,
        values,
        noise,
        objects: None,
        seed: seed as u64,
    };
    let world = synthetic_world(&spec).map_err(js)?;
    let mut rng = Prng::new(seed as u64, stream::CORPUS);
    let messages: Vec<Vec<usize>> = world
        .tuples
        .iter()
        .map(|t| {
            if rng.uniform() < scramble {
                (0..attributes).map(|_| 1 + rng.below(values)).collect()
            } else {
                t.iter().map(|v| v + 1).collect()
            }
        })
        .collect();
    let corpus =
        Corpus::new(messages, values + 1, world.features.provenance.clone()).map_err(js)?;
    let mode = TopoMode::auto(corpus.len(), seed as u64);
    let r = topographic_similarity(&corpus, &world.features, mode).map_err(js)?;
    Ok(r.rho.unwrap_or(f64::NAN))
}
