//! Operational knowledge graph: article and provision nodes connected by six
//! typed edge classes extracted from statute text with deterministic rules.

mod expand;
mod extract;
mod pack;
mod perturb;
mod topology;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{AuthorityType, NodeId};
use crate::error::{Error, Result};

pub use expand::{expand_pool, Expanded, Origin};
pub use extract::build_okg;
pub use pack::{CompiledPack, Direction, PatternPack, PatternRule, Scope, Target};
pub use perturb::{perturb, PerturbMode};
pub use topology::{connected_components, graph_stats, Component, GraphStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeType {
    PartOf,
    References,
    DelegatesTo,
    Specifies,
    Defines,
    RequiresForm,
}

impl EdgeType {
    pub const ALL: [EdgeType; 6] = [
        EdgeType::PartOf,
        EdgeType::References,
        EdgeType::DelegatesTo,
        EdgeType::Specifies,
        EdgeType::Defines,
        EdgeType::RequiresForm,
    ];

    /// Edge classes followed during pool expansion and touched by noise
    /// perturbation.
    pub const CITATION: [EdgeType; 3] = [
        EdgeType::References,
        EdgeType::DelegatesTo,
        EdgeType::Specifies,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeType::PartOf => "PART_OF",
            EdgeType::References => "REFERENCES",
            EdgeType::DelegatesTo => "DELEGATES_TO",
            EdgeType::Specifies => "SPECIFIES",
            EdgeType::Defines => "DEFINES",
            EdgeType::RequiresForm => "REQUIRES_FORM",
        }
    }

    pub fn is_citation(self) -> bool {
        EdgeType::CITATION.contains(&self)
    }

    /// The paired type for the delegation/realization mirror.
    pub fn mirror(self) -> Option<EdgeType> {
        match self {
            EdgeType::DelegatesTo => Some(EdgeType::Specifies),
            EdgeType::Specifies => Some(EdgeType::DelegatesTo),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<EdgeType> {
        EdgeType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown edge type `{s}`")))
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where an edge came from: the rule that fired and the matched span (byte
/// offsets into the citing article's text).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub rule: String,
    pub start: usize,
    pub end: usize,
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub etype: EdgeType,
    pub provenance: Provenance,
}

impl TypedEdge {
    pub fn key(&self) -> (NodeId, NodeId, EdgeType) {
        (self.src.clone(), self.dst.clone(), self.etype)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Article,
    Provision,
    /// Citation target outside the corpus. Never a retrieval candidate.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: NodeId,
    pub kind: NodeKind,
    pub doc_id: Option<String>,
    pub tier: Option<u8>,
    pub authority_type: Option<AuthorityType>,
    pub is_form: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionWarning {
    pub node_id: NodeId,
    pub message: String,
}

/// Serialized graph layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub pattern_pack_id: String,
    pub nodes: Vec<NodeRecord>,
    pub edges: Vec<TypedEdge>,
    #[serde(default)]
    pub warnings: Vec<ExtractionWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Okg {
    nodes: BTreeMap<NodeId, NodeRecord>,
    edges: Vec<TypedEdge>,
    forward: BTreeMap<NodeId, Vec<usize>>,
    reverse: BTreeMap<NodeId, Vec<usize>>,
    pattern_pack_id: String,
    warnings: Vec<ExtractionWarning>,
}

impl Okg {
    /// Builds the adjacency structure. Duplicate `(src, dst, etype)` edges
    /// keep their first occurrence; every endpoint must be a known node.
    pub fn new(
        nodes: Vec<NodeRecord>,
        edges: Vec<TypedEdge>,
        pattern_pack_id: impl Into<String>,
        warnings: Vec<ExtractionWarning>,
    ) -> Result<Okg> {
        let mut node_map = BTreeMap::new();
        for n in nodes {
            let id = n.node_id.clone();
            if node_map.insert(id.clone(), n).is_some() {
                return Err(Error::Data(format!("duplicate graph node `{id}`")));
            }
        }
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            for end in [&e.src, &e.dst] {
                if !node_map.contains_key(end) {
                    return Err(Error::UnknownNode(end.to_string()));
                }
            }
            if seen.insert(e.key()) {
                kept.push(e);
            }
        }
        let mut okg = Okg {
            nodes: node_map,
            edges: kept,
            forward: BTreeMap::new(),
            reverse: BTreeMap::new(),
            pattern_pack_id: pattern_pack_id.into(),
            warnings,
        };
        okg.index();
        Ok(okg)
    }

    fn index(&mut self) {
        self.forward.clear();
        self.reverse.clear();
        for (i, e) in self.edges.iter().enumerate() {
            self.forward.entry(e.src.clone()).or_default().push(i);
            self.reverse.entry(e.dst.clone()).or_default().push(i);
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> &[TypedEdge] {
        &self.edges
    }

    pub fn pattern_pack_id(&self) -> &str {
        &self.pattern_pack_id
    }

    pub fn warnings(&self) -> &[ExtractionWarning] {
        &self.warnings
    }

    pub fn out_edges<'a>(&'a self, id: &NodeId) -> impl Iterator<Item = &'a TypedEdge> + 'a {
        self.forward
            .get(id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    pub fn in_edges<'a>(&'a self, id: &NodeId) -> impl Iterator<Item = &'a TypedEdge> + 'a {
        self.reverse
            .get(id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    pub fn is_external(&self, id: &NodeId) -> bool {
        self.nodes
            .get(id)
            .is_some_and(|n| n.kind == NodeKind::External)
    }

    /// Union of forward neighbours over `types`, external stubs excluded.
    pub fn citation_neighbors(&self, node: &NodeId, types: &BTreeSet<EdgeType>) -> Result<BTreeSet<NodeId>> {
        if !self.nodes.contains_key(node) {
            return Err(Error::UnknownNode(node.to_string()));
        }
        Ok(self
            .out_edges(node)
            .filter(|e| types.contains(&e.etype) && !self.is_external(&e.dst))
            .map(|e| e.dst.clone())
            .collect())
    }

    pub fn to_export(&self) -> GraphExport {
        GraphExport {
            pattern_pack_id: self.pattern_pack_id.clone(),
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn from_export(export: GraphExport) -> Result<Okg> {
        Okg::new(export.nodes, export.edges, export.pattern_pack_id, export.warnings)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_export())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Okg> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let export: GraphExport = serde_json::from_str(&raw)?;
        Okg::from_export(export)
    }

    pub(crate) fn with_edges(&self, edges: Vec<TypedEdge>) -> Okg {
        let mut g = Okg {
            nodes: self.nodes.clone(),
            edges,
            forward: BTreeMap::new(),
            reverse: BTreeMap::new(),
            pattern_pack_id: self.pattern_pack_id.clone(),
            warnings: self.warnings.clone(),
        };
        let mut seen = HashSet::new();
        g.edges.retain(|e| seen.insert(e.key()));
        g.index();
        g
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn article(id: &str) -> NodeRecord {
        NodeRecord {
            node_id: NodeId::from(id),
            kind: NodeKind::Article,
            doc_id: id.split('_').next().map(str::to_string),
            tier: Some(1),
            authority_type: Some(AuthorityType::LegalAuthority),
            is_form: false,
        }
    }

    pub fn edge(src: &str, dst: &str, etype: EdgeType) -> TypedEdge {
        TypedEdge {
            src: NodeId::from(src),
            dst: NodeId::from(dst),
            etype,
            provenance: Provenance {
                rule: "test".into(),
                start: 0,
                end: 0,
                excerpt: String::new(),
            },
        }
    }

    pub fn graph(nodes: &[&str], edges: &[(&str, &str, EdgeType)]) -> Okg {
        Okg::new(
            nodes.iter().map(|n| article(n)).collect(),
            edges.iter().map(|(s, d, t)| edge(s, d, *t)).collect(),
            "test",
            Vec::new(),
        )
        .unwrap()
    }
}
