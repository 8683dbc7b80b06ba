//! Causal language models and the corpus-transfer protocol.

mod config;
mod data;
mod experiment;
mod model;
mod train;

pub use config::{Arch, LmConfig, Reinit};
pub use data::{pack, Splits, SEPARATOR};
pub use experiment::{transfer_experiment, CellResult, TransferPlan, TransferReport};
pub use model::{lm_init, lm_meta, lm_nll, lm_param_count};
pub use train::{
    corpus_perplexity, evaluate, lm_checkpoint, lm_finetune, lm_pretrain, lm_scratch, lm_train,
    load_lm, model_transfer_gru, retarget, token_nlls, transplant_speaker, FinetuneReport,
    LmLogEntry, LmRun, LM_KIND,
};
