//! Model roles behind small traits: an offline deterministic stub and an
//! OpenAI-compatible remote binding for each. The pipeline only ever sees
//! the traits.

mod remote;
mod stub;
mod transport;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use remote::{Limiter, RemoteEmbedder, RemoteGenerator, RemoteJudge, RemoteReranker};
pub use stub::{Canned, StubEmbedder, StubGenerator, StubJudge, StubReranker};
pub use transport::{HttpResponse, Transport, UreqTransport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// What the caller expects back. Remote generators turn the JSON variants
/// into a `response_format`; the stub uses them to pick a responder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputHint {
    Anchor,
    Attribution { context_ids: Vec<String> },
    FreeForm { context_ids: Vec<String>, footer: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub seed: u64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams {
            temperature: 0.1,
            top_p: 0.95,
            top_k: 20,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Match,
    Partial,
    None,
}

impl Label {
    pub fn weight(self) -> f64 {
        match self {
            Label::Match => 1.0,
            Label::Partial => 0.5,
            Label::None => 0.0,
        }
    }
}

pub trait Embedder: Send + Sync {
    fn fingerprint(&self) -> String;
    /// Unit-norm vectors of a fixed dimension, one per text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

pub trait Reranker: Send + Sync {
    fn fingerprint(&self) -> String;
    /// Relevance in [0, 1].
    fn score(&self, query: &str, doc: &str) -> Result<f64>;
}

pub trait Generator: Send + Sync {
    fn fingerprint(&self) -> String;
    fn generate(&self, messages: &[Message], hint: &OutputHint) -> Result<String>;
}

pub trait Judge: Send + Sync {
    fn fingerprint(&self) -> String;
    fn judge(&self, predicted: &str, reference: &str, question: &str) -> Result<Label>;
}

/// Endpoint settings for one remote role. The key itself is read from the
/// named environment variable at request time and never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency_limit: usize,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_retries() -> u32 {
    3
}

fn default_concurrency() -> usize {
    8
}

#[derive(Clone)]
pub struct Clients {
    pub embedder: Arc<dyn Embedder>,
    pub reranker: Arc<dyn Reranker>,
    pub generator: Arc<dyn Generator>,
    pub judge: Arc<dyn Judge>,
}

impl Clients {
    pub fn stub() -> Clients {
        Clients {
            embedder: Arc::new(StubEmbedder::default()),
            reranker: Arc::new(StubReranker::default()),
            generator: Arc::new(StubGenerator::default()),
            judge: Arc::new(StubJudge::default()),
        }
    }

    pub fn fingerprints(&self) -> [String; 4] {
        [
            self.embedder.fingerprint(),
            self.reranker.fingerprint(),
            self.generator.fingerprint(),
            self.judge.fingerprint(),
        ]
    }
}

/// Word tokens used by the lexical stubs: maximal runs of alphanumeric
/// characters, lowercased.
pub(crate) fn tokens(text: &str) -> std::collections::BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
