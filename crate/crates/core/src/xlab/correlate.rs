use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{pearson, spearman};

use super::sweep::{MetricKind, SweepPoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: MetricKind,
    pub target: String,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    /// Why a coefficient is undefined (e.g. zero variance).
    pub undefined_reason: Option<String>,
    pub points: usize,
    pub excluded: usize,
    pub exclusion_reasons: BTreeMap<String, usize>,
    /// `(metric, negated perplexity)` for every used point.
    pub scatter: Vec<(f64, f64)>,
}

impl CorrelationReport {
    pub fn scatter_csv(&self) -> String {
        let mut s = format!("{:?},neg_ppl_{}\n", self.metric, self.target).to_lowercase();
        for (x, y) in &self.scatter {
            let _ = writeln!(s, "{x},{y}");
        }
        s
    }
}

/// Pearson and Spearman correlation of a metric against negated downstream
/// perplexity, dropping points where either is missing.
pub fn correlate(
    points: &[SweepPoint],
    metric: MetricKind,
    target: &str,
) -> Result<CorrelationReport> {
    let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
    let mut scatter = Vec::new();
    for p in points {
        let y = p.downstream.get(target).copied();
        match (p.metric(metric), y) {
            (Some(x), Some(y)) => scatter.push((x, y)),
            (None, _) => {
                let why = match (metric, &p.toposim_undefined) {
                    (MetricKind::Toposim, Some(r)) => format!("metric undefined: {r}"),
                    _ => "metric missing".to_string(),
                };
                *reasons.entry(why).or_default() += 1;
            }
            (_, None) => *reasons.entry("downstream missing".into()).or_default() += 1,
        }
    }
    if scatter.len() < 3 {
        return Err(Error::Undefined(format!(
            "only {} usable points after exclusion (need >= 3)",
            scatter.len()
        )));
    }
    let xs: Vec<f64> = scatter.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = scatter.iter().map(|p| p.1).collect();
    let (pr, sr, why) = match (pearson(&xs, &ys), spearman(&xs, &ys)) {
        (Ok(p), Ok(s)) => (Some(p), Some(s), None),
        (Err(e), _) | (_, Err(e)) => (None, None, Some(e.to_string())),
    };
    Ok(CorrelationReport {
        metric,
        target: target.to_string(),
        pearson: pr,
        spearman: sr,
        undefined_reason: why,
        points: scatter.len(),
        excluded: points.len() - scatter.len(),
        exclusion_reasons: reasons,
        scatter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(i: usize, m: Option<f64>, ppl: f64) -> SweepPoint {
        SweepPoint {
            setup: 0,
            vocab_size: 8,
            seq_len: 2,
            trial: 0,
            seed: 0,
            step: i as u64,
            accuracy: m,
            toposim: None,
            toposim_undefined: Some("zero edit-distance variance".into()),
            translation: m,
            downstream: [("captions".to_string(), -ppl)].into(),
            errors: vec![],
        }
    }

    #[test]
    fn metric_equal_to_target_gives_one() {
        let pts: Vec<_> = (0..6)
            .map(|i| point(i, Some(-(i as f64 + 2.0)), i as f64 + 2.0))
            .collect();
        let r = correlate(&pts, MetricKind::Translation, "captions").unwrap();
        assert!((r.pearson.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_metric_is_undefined() {
        let pts: Vec<_> = (0..6).map(|i| point(i, Some(0.5), i as f64)).collect();
        let r = correlate(&pts, MetricKind::Accuracy, "captions").unwrap();
        assert_eq!(r.pearson, None);
        assert!(r.undefined_reason.unwrap().contains("zero variance"));
    }

    #[test]
    fn undefined_toposim_points_are_excluded_with_reason() {
        let pts: Vec<_> = (0..6).map(|i| point(i, Some(i as f64), i as f64)).collect();
        let e = correlate(&pts, MetricKind::Toposim, "captions").unwrap_err();
        assert!(e.to_string().contains("0 usable"));
        let mut pts = pts;
        for (i, p) in pts.iter_mut().enumerate().take(4) {
            p.toposim = Some(i as f64);
        }
        let r = correlate(&pts, MetricKind::Toposim, "captions").unwrap();
        assert_eq!((r.points, r.excluded), (4, 2));
        assert_eq!(
            r.exclusion_reasons["metric undefined: zero edit-distance variance"],
            2
        );
    }
}
