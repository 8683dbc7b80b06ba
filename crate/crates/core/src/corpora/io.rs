//! Corpus, vocabulary and feature file formats.
//!
//! * corpus: UTF-8, optional `# key=value` header lines, then one message per
//!   line as space-separated decimal ids;
//! * vocab: one surface token per line, line number = id;
//! * features: `EMF1`, `u32 N`, `u32 D`, then `N·D` little-endian `f32`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Corpus, FeatureSet, Provenance};

const VOCAB_KEY: &str = "vocab_size";
const FEATURE_MAGIC: &[u8; 4] = b"EMF1";

pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = String::with_capacity(corpus.token_count() * 4);
    out.push_str(&format!("# {VOCAB_KEY}={}\n", corpus.vocab_size));
    for (k, v) in &corpus.provenance {
        if k == VOCAB_KEY {
            continue;
        }
        out.push_str(&format!(
            "# {}={}\n",
            k.replace(['\n', '='], " "),
            v.replace('\n', " ")
        ));
    }
    for m in &corpus.messages {
        let mut first = true;
        for t in m {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(&t.to_string());
        }
        out.push('\n');
    }
    out
}

/// Parses corpus text. `vocab_size` overrides (and must agree with) the header.
pub fn parse_corpus(text: &str, vocab_size: Option<usize>, origin: &str) -> Result<Corpus> {
    let mut provenance = Provenance::new();
    let mut header_vocab = None;
    let mut messages = Vec::new();
    let mut in_header = true;
    let lines: Vec<&str> = text.split('\n').collect();
    let n_lines = if text.ends_with('\n') {
        lines.len() - 1
    } else {
        lines.len()
    };
    for (i, line) in lines.iter().take(n_lines).enumerate() {
        let lineno = i + 1;
        if in_header {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim_start();
                let (k, v) = rest.split_once('=').ok_or_else(|| {
                    Error::parse(origin, format!("line {lineno}: header is not key=value"))
                })?;
                if k == VOCAB_KEY {
                    header_vocab = Some(v.parse::<usize>().map_err(|_| {
                        Error::parse(origin, format!("line {lineno}: bad vocab_size `{v}`"))
                    })?);
                } else {
                    provenance.insert(k.to_string(), v.to_string());
                }
                continue;
            }
            in_header = false;
        }
        let mut msg = Vec::new();
        for tok in line.split_ascii_whitespace() {
            let id: usize = tok.parse().map_err(|_| {
                Error::parse(origin, format!("line {lineno}: `{tok}` is not a token id"))
            })?;
            msg.push(id);
        }
        messages.push(msg);
    }
    let vocab = match (vocab_size, header_vocab) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::parse(
                origin,
                format!("vocab size {a} disagrees with header vocab_size={b}"),
            ))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => {
            return Err(Error::parse(
                origin,
                "no vocab_size header and none supplied",
            ))
        }
    };
    let header_lines = text.lines().take_while(|l| l.starts_with('#')).count();
    for (i, m) in messages.iter().enumerate() {
        if let Some(&t) = m.iter().find(|&&t| t >= vocab) {
            return Err(Error::parse(
                origin,
                format!(
                    "line {}: token {t} >= vocab size {vocab}",
                    header_lines + i + 1
                ),
            ));
        }
    }
    if provenance.is_empty() {
        provenance.insert("source".into(), origin.to_string());
    }
    Ok(Corpus {
        messages,
        vocab_size: vocab,
        provenance,
    })
}

pub fn write_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, corpus_to_string(corpus)).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: impl AsRef<Path>, vocab_size: Option<usize>) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, vocab_size, &path.display().to_string())
}

pub fn write_vocab(path: impl AsRef<Path>, words: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for w in words {
        if w.contains('\n') {
            return Err(Error::Contract(format!(
                "vocab entry {w:?} contains a newline"
            )));
        }
        out.push_str(w);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn features_to_bytes(f: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + f.data().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(f.n() as u32).to_le_bytes());
    out.extend_from_slice(&(f.d() as u32).to_le_bytes());
    for x in f.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn parse_features(bytes: &[u8], origin: &str) -> Result<FeatureSet> {
    if bytes.len() < 12 {
        return Err(Error::parse(
            origin,
            format!("truncated header ({} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::parse(
            origin,
            format!("magic mismatch: expected EMF1, found {:?}", &bytes[..4]),
        ));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let want = 12 + n * d * 4;
    if bytes.len() != want {
        return Err(Error::parse(
            origin,
            format!(
                "expected {want} bytes for {n}×{d} features, found {} (truncated at offset {})",
                bytes.len(),
                bytes.len().min(want)
            ),
        ));
    }
    let rows = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let mut prov = Provenance::new();
    prov.insert("source".into(), origin.to_string());
    FeatureSet::new(n, d, rows, prov).map_err(|e| Error::parse(origin, e.to_string()))
}

pub fn write_features(path: impl AsRef<Path>, f: &FeatureSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, features_to_bytes(f)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_features(&bytes, &path.display().to_string())
}
