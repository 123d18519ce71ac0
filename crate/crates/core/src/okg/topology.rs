use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{EdgeType, NodeKind, Okg};
use crate::corpus::NodeId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub external_stubs: usize,
    pub edges: usize,
    pub by_type: BTreeMap<EdgeType, usize>,
}

impl GraphStats {
    pub fn count(&self, t: EdgeType) -> usize {
        self.by_type.get(&t).copied().unwrap_or(0)
    }
}

pub fn graph_stats(g: &Okg) -> GraphStats {
    let mut by_type: BTreeMap<EdgeType, usize> = EdgeType::ALL.into_iter().map(|t| (t, 0)).collect();
    for e in g.edges() {
        *by_type.entry(e.etype).or_default() += 1;
    }
    GraphStats {
        nodes: g.node_count(),
        external_stubs: g.nodes().filter(|n| n.kind == NodeKind::External).count(),
        edges: g.edges().len(),
        by_type,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub size: usize,
    pub documents: Vec<String>,
    pub nodes: Vec<NodeId>,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Undirected components over edges of the given types. Every node appears
/// in exactly one component; largest first, then by smallest member id.
pub fn connected_components(g: &Okg, filter: &BTreeSet<EdgeType>) -> Vec<Component> {
    let ids: Vec<&NodeId> = g.nodes().map(|n| &n.node_id).collect();
    let pos: HashMap<&NodeId, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    for e in g.edges().iter().filter(|e| filter.contains(&e.etype)) {
        let a = find(&mut parent, pos[&e.src]);
        let b = find(&mut parent, pos[&e.dst]);
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ids.len() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Component> = groups
        .into_values()
        .map(|members| {
            let documents: BTreeSet<String> = members
                .iter()
                .filter_map(|&i| g.node(ids[i]).and_then(|n| n.doc_id.clone()))
                .collect();
            Component {
                size: members.len(),
                documents: documents.into_iter().collect(),
                nodes: members.into_iter().map(|i| ids[i].clone()).collect(),
            }
        })
        .collect();
    out.sort_by(|a, b| b.size.cmp(&a.size).then_with(|| a.nodes[0].cmp(&b.nodes[0])));
    out
}
