//! Anchor-driven multi-view retrieval: dense seeding on the mid view,
//! one-hop graph expansion, per-view reranking fused by reciprocal rank
//! max, and a post-fusion penalty on manual-tier sources.

mod anchor;
mod dense;
mod fuse;
mod views;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::clients::Clients;
use crate::corpus::{Corpus, NodeId};
use crate::error::{Error, Result};
use crate::okg::{expand_pool, EdgeType, Expanded, Okg, Origin};
use crate::templates::ProfileTemplates;

pub use anchor::{anchor_messages, extract_anchor, TopicAnchor, UNSPECIFIED};
pub use dense::{DenseIndex, IndexEntry};
pub use fuse::{authority_decay, ranks_from_scores, rerank_views, rrm_fuse, RankMap, ViewRanks, ViewScores};
pub use views::{render_views, QueryViews, View};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub pool_size: usize,
    pub seed_count: usize,
    pub rrm_k: f64,
    pub delta: f64,
    pub mu: f64,
    pub top_k: usize,
    pub expansion_edge_types: BTreeSet<EdgeType>,
    pub expansion: bool,
    /// Cap on the merged pool handed to the reranker, applied in
    /// provisional-score order. Unset reranks everything.
    pub rerank_budget: Option<usize>,
    /// Also multiply the final score of expansion-only candidates by delta.
    pub decay_expanded_final: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            pool_size: 50,
            seed_count: 10,
            rrm_k: 60.0,
            delta: 0.7,
            mu: 0.7,
            top_k: 10,
            expansion_edge_types: EdgeType::CITATION.into_iter().collect(),
            expansion: true,
            rerank_budget: None,
            decay_expanded_final: false,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pool_size == 0 || self.top_k == 0 {
            return bad("pool_size and top_k must be at least 1".into());
        }
        if self.seed_count > self.pool_size {
            return bad(format!("seed_count {} exceeds pool_size {}", self.seed_count, self.pool_size));
        }
        if self.top_k > self.pool_size {
            return bad(format!("top_k {} exceeds pool_size {}", self.top_k, self.pool_size));
        }
        if !(self.rrm_k > 0.0 && self.rrm_k.is_finite()) {
            return bad(format!("rrm_k {} must be positive", self.rrm_k));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) || !(self.mu > 0.0 && self.mu <= 1.0) {
            return bad("delta and mu must lie in (0, 1]".into());
        }
        if self.rerank_budget == Some(0) {
            return bad("rerank_budget must be at least 1".into());
        }
        Ok(())
    }

    pub fn expands(&self) -> bool {
        self.expansion && !self.expansion_edge_types.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node_id: NodeId,
    pub dense_score: Option<f64>,
    pub provisional_score: f64,
    pub origin: Origin,
    pub per_view_rank: BTreeMap<View, usize>,
    pub fused_score: f64,
    pub final_score: f64,
}

/// Every intermediate stage of one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub question: String,
    pub anchor: TopicAnchor,
    pub views: QueryViews,
    pub dense: Vec<(NodeId, f64)>,
    pub expansion: Vec<Expanded>,
    pub pool: Vec<NodeId>,
    pub rerank_scores: ViewScores,
    pub ranks: ViewRanks,
    pub fused: Vec<(NodeId, f64)>,
    pub ranked: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub candidates: Vec<Candidate>,
    pub trace: Trace,
}

impl Retrieval {
    pub fn ids(&self) -> Vec<NodeId> {
        self.candidates.iter().map(|c| c.node_id.clone()).collect()
    }
}

/// Everything a query needs, borrowed for the duration of a run.
pub struct Engine<'a> {
    pub corpus: &'a Corpus,
    pub okg: &'a Okg,
    pub index: &'a DenseIndex,
    pub clients: &'a Clients,
    pub profile: ProfileTemplates,
    pub config: &'a RetrievalConfig,
}

impl Engine<'_> {
    pub fn retrieve(&self, question: &str) -> Result<Retrieval> {
        let anchor = extract_anchor(question, self.clients.generator.as_ref(), &self.profile)?;
        self.retrieve_with_anchor(question, anchor)
    }

    pub fn retrieve_with_anchor(&self, question: &str, anchor: TopicAnchor) -> Result<Retrieval> {
        let cfg = self.config;
        cfg.validate()?;
        if self.corpus.is_empty() {
            return Err(Error::Data("corpus is empty".into()));
        }
        let views = render_views(question, &anchor);
        let dense = self
            .index
            .search(self.clients.embedder.as_ref(), &views.mid, cfg.pool_size)?;
        let expansion = if cfg.expands() {
            expand_pool(self.okg, &dense, cfg.seed_count, cfg.delta, &cfg.expansion_edge_types)?
        } else {
            let mut seeds: Vec<Expanded> = dense
                .iter()
                .map(|(id, s)| Expanded {
                    node_id: id.clone(),
                    score: *s,
                    origin: Origin::Seed,
                })
                .collect();
            seeds.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.node_id.cmp(&b.node_id)));
            seeds
        };
        let mut pool: Vec<&Expanded> = expansion
            .iter()
            .filter(|e| self.corpus.article(&e.node_id).is_some())
            .collect();
        if let Some(b) = cfg.rerank_budget {
            pool.truncate(b);
        }
        let pool_ids: Vec<NodeId> = pool.iter().map(|e| e.node_id.clone()).collect();
        debug!(dense = dense.len(), pool = pool_ids.len(), "rerank pool assembled");

        let (ranks, rerank_scores) = rerank_views(&pool_ids, &views, self.clients.reranker.as_ref(), self.corpus)?;
        let fused = rrm_fuse(&pool_ids, &ranks, cfg.rrm_k)?;
        let mut decayed = authority_decay(&fused, self.corpus, cfg.mu)?;

        let by_id: HashMap<&NodeId, &Expanded> = pool.iter().map(|e| (&e.node_id, *e)).collect();
        let dense_by_id: HashMap<&NodeId, f64> = dense.iter().map(|(id, s)| (id, *s)).collect();
        if cfg.decay_expanded_final {
            for (id, _, fin) in decayed.iter_mut() {
                if !dense_by_id.contains_key(id) {
                    *fin *= cfg.delta;
                }
            }
            decayed.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        }
        decayed.truncate(cfg.top_k);

        let candidates: Vec<Candidate> = decayed
            .into_iter()
            .map(|(id, fused_score, final_score)| {
                let e = by_id[&id];
                Candidate {
                    dense_score: dense_by_id.get(&id).copied(),
                    provisional_score: e.score,
                    origin: e.origin.clone(),
                    per_view_rank: View::ALL.iter().map(|v| (*v, ranks[v][&id])).collect(),
                    fused_score,
                    final_score,
                    node_id: id,
                }
            })
            .collect();
        let trace = Trace {
            question: question.to_string(),
            anchor,
            views,
            dense,
            expansion,
            pool: pool_ids,
            rerank_scores,
            ranks,
            fused,
            ranked: candidates.iter().map(|c| c.node_id.clone()).collect(),
        };
        Ok(Retrieval { candidates, trace })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_published_setup() {
        let c = RetrievalConfig::default();
        assert_eq!((c.pool_size, c.seed_count, c.top_k), (50, 10, 10));
        assert_eq!((c.rrm_k, c.delta, c.mu), (60.0, 0.7, 0.7));
        assert_eq!(c.expansion_edge_types.len(), 3);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = RetrievalConfig {
            seed_count: 60,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.seed_count = 10;
        c.top_k = 51;
        assert!(c.validate().is_err());
        c.top_k = 10;
        c.mu = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_round_trips_with_partial_input() {
        let c: RetrievalConfig = serde_json::from_str(r#"{"pool_size": 5, "seed_count": 2, "top_k": 3}"#).unwrap();
        assert_eq!(c.rrm_k, 60.0);
        let back: RetrievalConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
