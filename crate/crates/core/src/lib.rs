//! Joint-embedding item response models for binary model x question
//! correctness data, with a two-parameter logistic baseline, new-model
//! onboarding, geometric diagnostics, clustering, and a planted-world oracle.

pub mod checkpoint;
pub mod clustering;
pub mod data;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod irt2pl;
pub mod math;
pub mod onboarding;
pub mod rng;
pub mod synth;

pub use checkpoint::{load_checkpoint, prefixed_paths, save_checkpoint, JeirtCheckpoint, TrainMeta};
pub use error::{Error, Result};
