use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::sweep::{run_sweep, MetricKind, Setup, SweepPoint, SweepSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Vocab,
    Seqlen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub value: usize,
    pub seeds: Vec<u64>,
    pub points: usize,
    pub means: BTreeMap<String, f64>,
    /// Unbiased sample variance (0 for a single observation).
    pub variances: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupSweepReport {
    pub axis: Axis,
    pub groups: Vec<Group>,
}

/// Named columns of a point: metrics plus `neg_ppl_<target>`.
pub fn columns(p: &SweepPoint) -> BTreeMap<String, f64> {
    let mut c = BTreeMap::new();
    for m in [
        MetricKind::Accuracy,
        MetricKind::Toposim,
        MetricKind::Translation,
    ] {
        if let Some(v) = p.metric(m) {
            c.insert(format!("{m:?}").to_lowercase(), v);
        }
    }
    for (k, v) in &p.downstream {
        c.insert(format!("neg_ppl_{k}"), *v);
    }
    c
}

/// Means and variances per axis value.
pub fn group_points(axis: Axis, points: &[SweepPoint]) -> Vec<Group> {
    let mut by: BTreeMap<usize, Vec<&SweepPoint>> = BTreeMap::new();
    for p in points {
        let v = match axis {
            Axis::Vocab => p.vocab_size,
            Axis::Seqlen => p.seq_len,
        };
        by.entry(v).or_default().push(p);
    }
    by.into_iter()
        .map(|(value, ps)| {
            let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for p in &ps {
                for (k, v) in columns(p) {
                    cols.entry(k).or_default().push(v);
                }
            }
            let mut seeds: Vec<u64> = ps.iter().map(|p| p.seed).collect();
            seeds.sort_unstable();
            seeds.dedup();
            let mut means = BTreeMap::new();
            let mut variances = BTreeMap::new();
            for (k, xs) in cols {
                let n = xs.len() as f64;
                let m = xs.iter().sum::<f64>() / n;
                let var = if xs.len() > 1 {
                    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                means.insert(k.clone(), m);
                variances.insert(k, var);
            }
            Group {
                value,
                seeds,
                points: ps.len(),
                means,
                variances,
            }
        })
        .collect()
}

/// Sweeps one game dimension with the other fixed to the first setup of `base`.
pub fn setup_sweep(
    axis: Axis,
    values: &[usize],
    base: &SweepSpec,
    out: &Path,
) -> Result<SetupSweepReport> {
    if values.is_empty() {
        return Err(Error::Config("setup sweep needs at least one value".into()));
    }
    let fixed = base.setups.first().copied().unwrap_or(Setup {
        vocab_size: 64,
        seq_len: 8,
    });
    let mut spec = base.clone();
    spec.setups = values
        .iter()
        .map(|&v| match axis {
            Axis::Vocab => Setup {
                vocab_size: v,
                seq_len: fixed.seq_len,
            },
            Axis::Seqlen => Setup {
                vocab_size: fixed.vocab_size,
                seq_len: v,
            },
        })
        .collect();
    let points = run_sweep(&spec, out, &mut |_| {})?;
    Ok(SetupSweepReport {
        axis,
        groups: group_points(axis, &points),
    })
}
