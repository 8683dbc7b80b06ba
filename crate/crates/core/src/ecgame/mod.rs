//! The speaker/listener referential game.

mod agents;
mod config;
mod eval;
mod train;

pub use agents::{
    agents_meta, init_agents, listener_forward, speaker_forward, ListenerOutput, MessageInput,
    SpeakMode, SpeakerOutput, SCORE_EPS,
};
pub(crate) use agents::{spk_gru, spk_out};
pub use config::{GameConfig, CLS};
pub use eval::{
    accuracy, eval_accuracy, play_trials, sample_trials, Decode, SelectionDistribution, Trial,
};
pub use train::{
    game_checkpoint, game_loss, load_game, train_game, GameBatch, TrainLogEntry, GAME_KIND,
};
