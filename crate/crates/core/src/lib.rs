//! Retrieval-augmented multiple-choice question answering.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`corpus`] loads a tabular document library (`id,title,heading,content,tokens`)
//!    and recomputes token counts with the active [`tokenizer`].
//! 2. [`embedding`] turns each section and each query into a vector, either through a
//!    remote embedding service or a deterministic local hashing backend.
//! 3. [`retrieval`] ranks every stored section against the query by exact similarity.
//! 4. [`prompt`] packs the best sections under a token budget behind a guard header,
//!    followed by the question block.
//! 5. [`generation`] sends the prompt to a completion backend, and [`eval`] grades the
//!    free-text answer against the question's choices.
//!
//! [`eval`] also drives the experiment runners: prompt-length sweeps, context
//! formatting comparisons and question ablations.

pub mod corpus;
pub mod embedding;
pub mod eval;
pub mod generation;
mod http;
mod parallel;
pub mod prompt;
pub mod retrieval;
pub mod tokenizer;

pub use http::{FixtureMode, RetryPolicy};
