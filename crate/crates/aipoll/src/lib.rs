//! File-backed pipeline around `aipoll-core`: corpus readers, the querying
//! gateway, embeddings, stage runners and the artifacts they exchange.

pub mod config;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod gateway;
pub mod io;
pub mod manifest;
pub mod report;
pub mod stages;

pub use config::Config;
pub use error::{Error, Result};
pub use stages::Pipeline;
