use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrag::attribution::SchemaMode;
use statrag::benchkit::RubricConfig;
use statrag::clients::{
    Canned, Clients, DecodingParams, EndpointConfig, RemoteEmbedder, RemoteGenerator, RemoteJudge, RemoteReranker,
    StubEmbedder, StubGenerator, StubJudge, StubReranker, Transport, UreqTransport,
};
use statrag::retrieval::RetrievalConfig;
use statrag::{Error, Result};

fn default_pack() -> String {
    "korean-statute".into()
}

fn default_profile() -> String {
    "regops-ko".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    42
}

fn default_workers() -> usize {
    4
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    #[serde(default = "default_k")]
    pub k: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings { k: default_k() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)] // parsed once per process
pub enum ClientsConfig {
    Stub {
        /// JSON list of canned generator responses.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        canned: Option<PathBuf>,
    },
    Remote {
        embedder: EndpointConfig,
        reranker: EndpointConfig,
        generator: EndpointConfig,
        judge: EndpointConfig,
        #[serde(default)]
        decoding: Option<DecodingParams>,
    },
}

impl Default for ClientsConfig {
    fn default() -> Self {
        ClientsConfig::Stub { canned: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// Built-in pack name or a path to a pack file.
    #[serde(default = "default_pack")]
    pub pattern_pack: String,
    #[serde(default = "default_profile")]
    pub template_profile: String,
    #[serde(default)]
    pub schema_mode: SchemaMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Queries processed concurrently.
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub clients: ClientsConfig,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closure: Option<PathBuf>,
    #[serde(default)]
    pub rubric: RubricConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base: PathBuf,
}

/// Stub handles kept concretely so call counts can be reported.
pub struct StubHandles {
    pub embedder: Arc<StubEmbedder>,
    pub reranker: Arc<StubReranker>,
    pub generator: Arc<StubGenerator>,
    pub judge: Arc<StubJudge>,
}

impl StubHandles {
    pub fn summary(&self) -> String {
        format!(
            "client calls: embed={} rerank={} generate={} judge={}",
            self.embedder.calls(),
            self.reranker.calls(),
            self.generator.calls(),
            self.judge.calls()
        )
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        statrag::templates::profile(&self.template_profile)?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.resolve(&self.corpus)
    }

    pub fn out(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// The config as embedded in reports. The output location is left out
    /// so identical runs into different directories hash the same.
    pub fn provenance(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(m) = v.as_object_mut() {
            m.remove("out_dir");
        }
        v
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.provenance().to_string().as_bytes())
    }

    pub fn clients(&self) -> Result<(Clients, Option<StubHandles>)> {
        match &self.clients {
            ClientsConfig::Stub { canned } => {
                let canned: Vec<Canned> = match canned {
                    Some(p) => {
                        let p = self.resolve(p);
                        let raw = std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
                        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
                    }
                    None => Vec::new(),
                };
                let h = StubHandles {
                    embedder: Arc::new(StubEmbedder::default()),
                    reranker: Arc::new(StubReranker::default()),
                    generator: Arc::new(StubGenerator::with_canned(canned)),
                    judge: Arc::new(StubJudge::default()),
                };
                let c = Clients {
                    embedder: h.embedder.clone(),
                    reranker: h.reranker.clone(),
                    generator: h.generator.clone(),
                    judge: h.judge.clone(),
                };
                Ok((c, Some(h)))
            }
            ClientsConfig::Remote {
                embedder,
                reranker,
                generator,
                judge,
                decoding,
            } => {
                let t: Arc<dyn Transport> = Arc::new(UreqTransport::default());
                let params = decoding.unwrap_or(DecodingParams {
                    seed: self.seed,
                    ..DecodingParams::default()
                });
                let c = Clients {
                    embedder: Arc::new(RemoteEmbedder::new(embedder.clone(), t.clone())),
                    reranker: Arc::new(RemoteReranker::new(reranker.clone(), t.clone())),
                    generator: Arc::new(RemoteGenerator::new(generator.clone(), params, t.clone())),
                    judge: Arc::new(RemoteJudge::new(judge.clone(), t)),
                };
                Ok((c, None))
            }
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<RunConfig> {
        let c: RunConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse(r#"{"corpus": "c.jsonl"}"#).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.retrieval, RetrievalConfig::default());
        assert_eq!(c.clients, ClientsConfig::Stub { canned: None });
    }

    #[test]
    fn inline_api_keys_are_refused() {
        let ep = r#"{"base_url": "http://x", "model": "m", "api_key": "sk-123"}"#;
        let s = format!(
            r#"{{"corpus": "c", "clients": {{"kind": "remote", "embedder": {ep}, "reranker": {ep}, "generator": {ep}, "judge": {ep}}}}}"#
        );
        assert!(parse(&s).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = parse(r#"{"corpus": "c", "out_dir": "a"}"#).unwrap();
        let b = parse(r#"{"corpus": "c", "out_dir": "b"}"#).unwrap();
        let c = parse(r#"{"corpus": "c", "seed": 7}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
