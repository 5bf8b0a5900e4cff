//! Core of the AI-polling pipeline.
//!
//! Everything here is pure computation over in-memory values: the survey
//! vocabulary, aggregation of human responses into demographic cells, prompt
//! rendering, structured payload parsing, the three distribution comparison
//! metrics, design-matrix construction and the fidelity regression models.
//! File formats, HTTP and the command line live in the `aipoll` crate.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod payload;
pub mod prompt;
pub mod regression;
pub mod stats;
pub mod survey;

pub use error::{Error, Result};
pub use model::{
    make_distribution, scaled_positions, Cardinality, DemographicCell, Framework, Gender, Ideology,
    OpinionDistribution, PermutationKey, PromptVariant, Question, Race,
};
