//! Synthetic grounded world: attribute tuples, their one-hot feature vectors
//! and template captions over a small natural vocabulary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{prng::stream, Prng};

use super::{provenance, Corpus, FeatureSet, Message};

/// Surface words for the first few attributes; later ones fall back to `a{i}v{j}`.
const WORD_LISTS: &[&[&str]] = &[
    &[
        "small", "large", "tiny", "huge", "short", "tall", "thin", "wide",
    ],
    &[
        "red", "blue", "green", "yellow", "purple", "orange", "black", "white",
    ],
    &[
        "cube", "sphere", "cone", "ring", "pyramid", "disk", "star", "prism",
    ],
    &[
        "metal", "rubber", "wood", "glass", "stone", "cloth", "paper", "clay",
    ],
    &[
        "striped", "dotted", "plain", "checked", "wavy", "spotted", "shiny", "matte",
    ],
];

const FUNCTION_WORDS: &[&str] = &[".", "the", "one", "with", "and"];
const THE: usize = 1;
const ONE: usize = 2;
const WITH: usize = 3;
const AND: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticWorldSpec {
    pub attributes: usize,
    pub values: usize,
    /// Standard deviation of the Gaussian noise added to each feature coordinate.
    pub noise: f64,
    /// `None` enumerates every tuple once; `Some(n)` samples `n` tuples uniformly.
    #[serde(default)]
    pub objects: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticWorldSpec {
    fn default() -> Self {
        SyntheticWorldSpec {
            attributes: 4,
            values: 6,
            noise: 0.05,
            objects: None,
            seed: 0,
        }
    }
}

impl SyntheticWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.attributes < 1 || self.values < 2 {
            return Err(Error::Contract(format!(
                "synthetic world needs >= 1 attribute and >= 2 values, got {}x{}",
                self.attributes, self.values
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Contract(format!(
                "noise must be >= 0, got {}",
                self.noise
            )));
        }
        if self.objects == Some(0) {
            return Err(Error::Contract("objects must be >= 1".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.attributes * self.values
    }

    pub fn tuple_count(&self) -> usize {
        self.values.pow(self.attributes as u32)
    }

    /// Natural vocabulary: function words followed by one word per (attribute, value).
    pub fn vocab(&self) -> Vec<String> {
        let mut v: Vec<String> = FUNCTION_WORDS.iter().map(|s| s.to_string()).collect();
        for a in 0..self.attributes {
            for j in 0..self.values {
                let w = WORD_LISTS
                    .get(a)
                    .and_then(|l| l.get(j))
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("a{a}v{j}"));
                v.push(w);
            }
        }
        v
    }

    pub fn word(&self, attribute: usize, value: usize) -> usize {
        FUNCTION_WORDS.len() + attribute * self.values + value
    }

    /// `the w0 .. w(h-1) one with w(h) and w(h+1) ...` with `h = ceil(A/2)`.
    pub fn caption(&self, tuple: &[usize]) -> Message {
        let h = self.attributes.div_ceil(2);
        let mut out = vec![THE];
        for (a, &v) in tuple.iter().enumerate().take(h) {
            out.push(self.word(a, v));
        }
        out.push(ONE);
        for (k, (a, &v)) in tuple.iter().enumerate().skip(h).enumerate() {
            out.push(if k == 0 { WITH } else { AND });
            out.push(self.word(a, v));
        }
        out
    }

    /// Noise-free one-hot feature vector of a tuple.
    pub fn clean_features(&self, tuple: &[usize]) -> Vec<f32> {
        let mut f = vec![0.0f32; self.feature_dim()];
        for (a, &v) in tuple.iter().enumerate() {
            f[a * self.values + v] = 1.0;
        }
        f
    }

    fn decode_index(&self, mut idx: usize) -> Vec<usize> {
        let mut t = vec![0; self.attributes];
        for a in (0..self.attributes).rev() {
            t[a] = idx % self.values;
            idx /= self.values;
        }
        t
    }
}

/// Feature row index paired with its natural caption.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptionSet {
    pub pairs: Vec<(usize, Message)>,
    pub vocab_size: usize,
}

impl CaptionSet {
    pub fn caption_of(&self, row: usize) -> Option<&Message> {
        self.pairs.iter().find(|(i, _)| *i == row).map(|(_, m)| m)
    }

    /// Captions as a corpus, in pair order.
    pub fn to_corpus(&self, generator: &str) -> Result<Corpus> {
        Corpus::new(
            self.pairs.iter().map(|(_, m)| m.clone()).collect(),
            self.vocab_size,
            provenance(&[("generator", generator.to_string())]),
        )
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub spec: SyntheticWorldSpec,
    pub tuples: Vec<Vec<usize>>,
    pub features: FeatureSet,
    pub captions: CaptionSet,
    pub vocab: Vec<String>,
}

impl SyntheticWorld {
    /// Row `i` as a sequence of per-attribute blocks, each `values` wide.
    pub fn feature_sequence(&self, row: usize) -> Vec<Vec<f32>> {
        self.features
            .row(row)
            .chunks(self.spec.values)
            .map(<[f32]>::to_vec)
            .collect()
    }
}

pub fn synthetic_world(spec: &SyntheticWorldSpec) -> Result<SyntheticWorld> {
    spec.validate()?;
    let mut rng = Prng::new(spec.seed, stream::DATA);
    let tuples: Vec<Vec<usize>> = match spec.objects {
        None => (0..spec.tuple_count())
            .map(|i| spec.decode_index(i))
            .collect(),
        Some(n) => (0..n)
            .map(|_| {
                (0..spec.attributes)
                    .map(|_| rng.below(spec.values))
                    .collect()
            })
            .collect(),
    };
    let mut noise = rng.fork(stream::INIT);
    let d = spec.feature_dim();
    let mut rows = Vec::with_capacity(tuples.len() * d);
    for t in &tuples {
        for x in spec.clean_features(t) {
            let eps = if spec.noise > 0.0 {
                noise.normal() * spec.noise
            } else {
                0.0
            };
            rows.push((x as f64 + eps) as f32);
        }
    }
    let prov = provenance(&[
        ("generator", "synthetic_world".into()),
        ("attributes", spec.attributes.to_string()),
        ("values", spec.values.to_string()),
        ("noise", spec.noise.to_string()),
        ("seed", spec.seed.to_string()),
    ]);
    let features = FeatureSet::new(tuples.len(), d, rows, prov)?;
    let vocab = spec.vocab();
    let captions = CaptionSet {
        pairs: tuples
            .iter()
            .enumerate()
            .map(|(i, t)| (i, spec.caption(t)))
            .collect(),
        vocab_size: vocab.len(),
    };
    Ok(SyntheticWorld {
        spec: spec.clone(),
        tuples,
        features,
        captions,
        vocab,
    })
}
