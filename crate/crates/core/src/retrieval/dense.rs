use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clients::Embedder;
use crate::corpus::{Corpus, NodeId};
use crate::error::{Error, Result};

const BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub node_id: NodeId,
    pub vector: Vec<f32>,
}

/// Brute-force inner-product index over article embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub fingerprint: String,
    pub entries: Vec<IndexEntry>,
}

impl DenseIndex {
    pub fn build(corpus: &Corpus, embedder: &dyn Embedder) -> Result<DenseIndex> {
        let mut entries = Vec::with_capacity(corpus.len());
        for chunk in corpus.articles().chunks(BATCH) {
            let texts: Vec<String> = chunk.iter().map(|a| a.retrieval_text()).collect();
            let vecs = embedder.embed(&texts)?;
            if vecs.len() != chunk.len() {
                return Err(Error::Transport(format!(
                    "embedder returned {} vectors for {} texts",
                    vecs.len(),
                    chunk.len()
                )));
            }
            entries.extend(chunk.iter().zip(vecs).map(|(a, vector)| IndexEntry {
                node_id: a.node_id.clone(),
                vector,
            }));
        }
        Ok(DenseIndex {
            fingerprint: embedder.fingerprint(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Top `n` by inner product, ties by node id.
    pub fn search_vector(&self, query: &[f32], n: usize) -> Result<Vec<(NodeId, f64)>> {
        if self.entries.is_empty() {
            return Err(Error::Data("dense index is empty".into()));
        }
        let mut scored: Vec<(NodeId, f64)> = self
            .entries
            .iter()
            .map(|e| {
                let dot: f64 = e.vector.iter().zip(query).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum();
                (e.node_id.clone(), dot)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(n.max(1));
        Ok(scored)
    }

    pub fn search(&self, embedder: &dyn Embedder, query: &str, n: usize) -> Result<Vec<(NodeId, f64)>> {
        if embedder.fingerprint() != self.fingerprint {
            return Err(Error::Config(format!(
                "index built with `{}`, query embedder is `{}`",
                self.fingerprint,
                embedder.fingerprint()
            )));
        }
        let q = embedder
            .embed(&[query.to_string()])?
            .pop()
            .ok_or_else(|| Error::Transport("embedder returned no vector".into()))?;
        self.search_vector(&q, n)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    /// Loads an index and checks it was built by `expected_fingerprint`.
    pub fn load(path: &Path, expected_fingerprint: &str) -> Result<DenseIndex> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let idx: DenseIndex = serde_json::from_str(&raw)?;
        if idx.fingerprint != expected_fingerprint {
            return Err(Error::Config(format!(
                "{}: index fingerprint `{}` does not match embedder `{expected_fingerprint}`",
                path.display(),
                idx.fingerprint
            )));
        }
        Ok(idx)
    }
}
