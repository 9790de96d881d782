//! SynGen: a dual-channel (semantic transformer + dependency GAT) encoder
//! with a pointer-network decoder for aspect-based sentiment extraction,
//! built on a small from-scratch `f64` autodiff engine.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: tensors, the tape, Adam and the finite-difference checker
//! * [`data`]: sentences, vocabularies, dependency graphs and index layouts
//! * [`model`], [`encoder`], [`decoder`]: parameters and forward passes
//! * [`training`], [`inference`], [`evaluation`]: the learning loop, search
//!   and scoring
//! * [`synth`] and [`cli`]: desk-scale data and the command-line front end

pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fixtures;
pub mod inference;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{Ablation, ModelConfig, NodeInit, SynGen};
pub use training::{train, TrainConfig, TrainStats};
