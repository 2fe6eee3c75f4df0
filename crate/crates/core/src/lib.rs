//! Emergent cross-modal alignment through a frozen anchor encoder.
//!
//! A text and an image encoder are first trained together and frozen. A new
//! audio encoder is then trained against the frozen text encoder alone with
//! InfoNCE, on English text only. Audio↔image retrieval and audio retrieval
//! in other languages are then measured without any training pairs for
//! either.
//!
//! Modules, bottom-up:
//! - [`numeric`]: matrices, seeded RNG, finite-difference oracle
//! - [`encoder`]: MLP encoders with analytic backward and fingerprints
//! - [`contrastive`]: InfoNCE and its gradients
//! - [`augment`]: random truncation and SpecAugment masking
//! - [`synthdata`]: the synthetic tri-modal multi-language world
//! - [`train`]: anchor pretraining and new-modality training
//! - [`eval`]: recall@k, zero-shot classification, sweeps, reports
//! - [`cost`]: FLOP/MAC/parameter accounting
//! - [`config`]: experiment config files and presets
//! - [`pipeline`]: the end-to-end run used by the CLI

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod augment;
mod clock;
pub mod config;
pub mod contrastive;
pub mod cost;
pub mod encoder;
mod error;
pub mod eval;
pub mod numeric;
pub mod pipeline;
pub mod synthdata;
pub mod train;
mod wire;

pub use error::{Error, FormatError, Result};
