//! EEG foundation-model pipeline.
//!
//! Raw recordings are cleaned by [`signal`], cut into overlapping chunks by
//! [`chunk`], embedded one chunk at a time by the conv + self-attention
//! [`encoder`], and modelled causally by the decoder-only transformer in
//! [`gpt`]. [`train`] holds causal-reconstruction pre-training, the three
//! fine-tuning strategies and leave-one-subject-out evaluation. Everything
//! numeric runs on the small autodiff core in [`tensor`].

pub mod chunk;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod gpt;
pub mod model;
pub mod nn;
pub mod signal;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
