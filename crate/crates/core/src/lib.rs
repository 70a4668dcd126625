//! Curation engine for low-quality instruction-tuning data.
//!
//! The pipeline rates every sample with an LLM, denoises the ratings with a
//! score transition matrix estimated from nearest-neighbour consensus, keeps
//! the low-quality split, picks representatives from one-hop clusters and
//! finally fuses representative pairs into denser instruction/response pairs
//! through an LLM loop driven by a symbolic loss.

pub mod corpus;
pub mod denoise;
pub mod fusion;
pub mod gateway;
pub mod pipeline;
pub mod prompt;
pub mod rating;
pub mod select;
pub mod vector;

/// Number of score levels after mapping (`0..=5`).
pub const K: usize = 6;
