//! Geo-diverse commonsense knowledge pipeline.
//!
//! Filters a cultural-assertion corpus, builds denoising pretraining data,
//! orchestrates two-phase training over a pluggable sequence model,
//! generates and selects relation-specific inferences, fuses them into a
//! multiple-choice answer scorer and aggregates intrinsic and extrinsic
//! evaluations.

pub mod backend;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod inference;
pub mod jsonl;
pub mod manifest;
pub mod noising;
pub mod pipeline;
pub mod relations;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
