use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::corpora::Corpus;
use crate::error::Result;
use crate::numcore::Checkpoint;

use super::config::{Arch, LmConfig};
use super::data::Splits;
use super::train::{lm_finetune, lm_pretrain, lm_scratch, model_transfer_gru, FinetuneReport};

/// Every cell of a transfer table shares the target splits.
#[derive(Clone, Debug)]
pub struct TransferPlan {
    /// Named source corpora for corpus transfer with the transformer LM.
    pub sources: Vec<(String, Corpus)>,
    pub target: Splits,
    pub scratch: bool,
    /// Speaker for the model-transfer baseline; pairs with a corpus-transfer GRU
    /// run on `gru_source`.
    pub model_transfer: Option<Checkpoint<f32>>,
    pub gru_source: Option<String>,
    pub lm: LmConfig,
    pub gru: LmConfig,
    pub pretrain_steps: u64,
    pub finetune_steps: u64,
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: String,
    pub seed: u64,
    pub test_ppl: Option<f64>,
    pub best_step: Option<u64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub cells: Vec<CellResult>,
    /// Median test perplexity per cell over successful seeds.
    pub medians: BTreeMap<String, f64>,
}

impl TransferReport {
    pub fn from_cells(cells: Vec<CellResult>) -> Self {
        let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for c in &cells {
            if let Some(p) = c.test_ppl {
                by.entry(c.cell.clone()).or_default().push(p);
            }
        }
        let medians = by.into_iter().map(|(k, v)| (k, median(v))).collect();
        TransferReport { cells, medians }
    }

    /// Tab-separated `cell  seed  test_ppl` rows followed by medians.
    pub fn table(&self) -> String {
        let mut s = String::from("cell\tseed\ttest_ppl\n");
        for c in &self.cells {
            let v = match (&c.test_ppl, &c.error) {
                (Some(p), _) => format!("{p:.4}"),
                (None, Some(e)) => format!("error: {e}"),
                _ => "-".into(),
            };
            let _ = writeln!(s, "{}\t{}\t{v}", c.cell, c.seed);
        }
        for (k, m) in &self.medians {
            let _ = writeln!(s, "{k}\tmedian\t{m:.4}");
        }
        s
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn cell(name: &str, seed: u64, r: Result<FinetuneReport>) -> CellResult {
    match r {
        Ok(r) => CellResult {
            cell: name.into(),
            seed,
            test_ppl: Some(r.test_ppl),
            best_step: Some(r.run.best_step),
            error: None,
        },
        Err(e) => CellResult {
            cell: name.into(),
            seed,
            test_ppl: None,
            best_step: None,
            error: Some(e.to_string()),
        },
    }
}

fn corpus_transfer(
    source: &Corpus,
    plan: &TransferPlan,
    cfg: &LmConfig,
    seed: u64,
) -> Result<FinetuneReport> {
    let mut pre = cfg.clone();
    pre.seed = seed;
    pre.total_steps = plan.pretrain_steps;
    pre.vocab_size = 0;
    let splits = Splits::new(source, 0.9, 0.05, seed)?;
    let run = lm_pretrain(&pre, &splits)?;
    let mut ft = pre.clone();
    ft.total_steps = plan.finetune_steps;
    lm_finetune(&run.best, &plan.target, &ft)
}

/// Runs every requested cell for every seed; failures are recorded per cell.
pub fn transfer_experiment(plan: &TransferPlan) -> TransferReport {
    let mut cells = Vec::new();
    for &seed in &plan.seeds {
        if plan.scratch {
            let mut c = plan.lm.clone();
            c.seed = seed;
            c.total_steps = plan.finetune_steps;
            cells.push(cell("scratch", seed, lm_scratch(&c, &plan.target)));
        }
        for (name, src) in &plan.sources {
            cells.push(cell(name, seed, corpus_transfer(src, plan, &plan.lm, seed)));
        }
        if let Some(speaker) = &plan.model_transfer {
            let mut g = plan.gru.clone();
            g.arch = Arch::Gru;
            g.seed = seed;
            if let Some((_, src)) = plan
                .gru_source
                .as_ref()
                .and_then(|n| plan.sources.iter().find(|(s, _)| s == n))
            {
                cells.push(cell(
                    "corpus-transfer-gru",
                    seed,
                    corpus_transfer(src, plan, &g, seed),
                ));
            }
            g.total_steps = plan.finetune_steps;
            g.vocab_size = 0;
            cells.push(cell(
                "model-transfer-gru",
                seed,
                model_transfer_gru(speaker, &plan.target, &g),
            ));
        }
    }
    TransferReport::from_cells(cells)
}
