//! Citation-graph retrieval and attribution for statute corpora.

pub mod attribution;
pub mod benchkit;
pub mod clients;
pub mod corpus;
pub mod error;
pub mod evalkit;
mod jsonish;
pub mod okg;
pub mod retrieval;
pub mod templates;

pub use error::{Error, ErrorClass, Result};
