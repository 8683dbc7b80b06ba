//! Emergent-communication laboratory.
//!
//! Trains speaker/listener referential games on perceptual feature sets,
//! turns trained speakers into emergent-language corpora (plus ablations),
//! and scores those corpora by transfer to language modelling and captioning
//! and by an emergent-to-natural translation metric.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpora;
pub mod ecgame;
pub mod error;
pub mod langmodel;
pub mod metrics;
pub mod numcore;
pub mod seq2seq;
pub mod xlab;

pub use error::{Error, Result};
