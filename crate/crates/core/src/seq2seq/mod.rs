//! Encoder–decoder transformer: translation metric and captioning transfer.

mod caption;
mod config;
mod metric;
mod model;
mod train;

pub use caption::{
    caption_finetune, caption_pretrain, caption_scores, transfer_params, CaptionEpoch,
    CaptionReport, Transfer,
};
pub use config::{DecodeStrategy, EncoderInput, Seq2SeqConfig};
pub use metric::{
    translation_metric, translation_score, TranslationConfig, TranslationMetricReport,
};
pub use model::{
    beam_decode, greedy_decode, s2s_decode, s2s_init, s2s_loss, s2s_meta, Pair, Source,
};
pub use train::{
    load_s2s, s2s_checkpoint, s2s_eval_nll, s2s_train, s2s_train_from, EpochLog, S2S_KIND,
};
