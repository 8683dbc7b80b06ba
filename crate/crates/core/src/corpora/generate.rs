use crate::ecgame::{init_agents, load_game, speaker_forward, Decode, GameConfig};
use crate::error::{Error, Result};
use crate::numcore::{prng::stream, Checkpoint, Graph, ParamSet, Prng};

use super::{provenance, Corpus, FeatureSet, Message};

/// Drops the first `0` token and everything after it.
pub fn truncate_at_zero(m: &[usize]) -> Message {
    m.iter().take_while(|&&t| t != 0).copied().collect()
}

/// Messages for every feature row, in row order.
pub fn speak_all(
    params: &ParamSet<f32>,
    cfg: &GameConfig,
    features: &FeatureSet,
    decode: Decode,
    rng: &mut Prng,
) -> Result<Vec<Message>> {
    if features.d() != cfg.feature_dim {
        return Err(Error::Contract(format!(
            "features have D={} but the speaker expects {}",
            features.d(),
            cfg.feature_dim
        )));
    }
    let rows: Vec<usize> = (0..features.n()).collect();
    let mut out = Vec::with_capacity(rows.len());
    for chunk in rows.chunks(512) {
        let mut g = Graph::<f32>::new();
        let f = g.constant(&[chunk.len(), features.d()], features.gather(chunk))?;
        out.extend(speaker_forward(&mut g, params, cfg, f, decode.mode(), rng)?.tokens);
    }
    Ok(out)
}

/// One message per feature row from a trained speaker checkpoint.
pub fn generate_corpus(
    ckpt: &Checkpoint<f32>,
    source: &str,
    features: &FeatureSet,
    decode: Decode,
    truncate: bool,
    rng: &mut Prng,
) -> Result<Corpus> {
    let cfg = load_game(ckpt)?;
    let msgs = speak_all(&ckpt.params, &cfg, features, decode, rng)?;
    let msgs = if truncate {
        msgs.iter().map(|m| truncate_at_zero(m)).collect()
    } else {
        msgs
    };
    Corpus::new(
        msgs,
        cfg.vocab_size,
        provenance(&[
            ("generator", "speaker".into()),
            ("checkpoint", source.into()),
            ("checkpoint_step", ckpt.step.to_string()),
            ("decode", format!("{decode:?}").to_lowercase()),
            ("truncate_at_zero", truncate.to_string()),
            ("seed", rng.seed().to_string()),
        ]),
    )
}

/// Corpus from a freshly initialised, untrained speaker (sample decoding).
pub fn random_speaker_corpus(cfg: &GameConfig, features: &FeatureSet, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let params = init_agents::<f32>(cfg, &mut Prng::new(seed, stream::INIT));
    let mut rng = Prng::new(seed, stream::CORPUS);
    let msgs = speak_all(&params, cfg, features, Decode::Sample, &mut rng)?;
    Corpus::new(
        msgs,
        cfg.vocab_size,
        provenance(&[
            ("generator", "random_speaker".into()),
            ("decode", "sample".into()),
            ("seed", seed.to_string()),
        ]),
    )
}
