use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EdgeType, Okg};
use crate::corpus::NodeId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    Seed,
    Expanded { from: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expanded {
    pub node_id: NodeId,
    pub score: f64,
    pub origin: Origin,
}

/// One-hop expansion. Every seed is kept; the first `m` seeds by score also
/// pull in their neighbours over `types` at `delta` times the seed score.
/// A node reached several ways keeps its maximum score.
///
/// Output is ordered by score descending, then node id.
pub fn expand_pool(
    graph: &Okg,
    seeds: &[(NodeId, f64)],
    m: usize,
    delta: f64,
    types: &BTreeSet<EdgeType>,
) -> Result<Vec<Expanded>> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("expansion decay {delta} outside (0, 1]")));
    }
    let mut ranked: Vec<&(NodeId, f64)> = seeds.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut best: BTreeMap<NodeId, (f64, Origin)> = BTreeMap::new();
    for (id, s) in &ranked {
        let slot = best.entry(id.clone()).or_insert((*s, Origin::Seed));
        if *s > slot.0 {
            slot.0 = *s;
        }
    }
    for (seed, s) in ranked.iter().take(m) {
        let decayed = s * delta;
        for n in graph.citation_neighbors(seed, types)? {
            let origin = Origin::Expanded { from: seed.clone() };
            match best.get_mut(&n) {
                None => {
                    best.insert(n, (decayed, origin));
                }
                Some(slot) => {
                    let better = decayed > slot.0
                        || (decayed == slot.0
                            && matches!(&slot.1, Origin::Expanded { from } if seed < from));
                    if better {
                        *slot = (decayed, origin);
                    }
                }
            }
        }
    }
    let mut out: Vec<Expanded> = best
        .into_iter()
        .map(|(node_id, (score, origin))| Expanded { node_id, score, origin })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.node_id.cmp(&b.node_id)));
    Ok(out)
}
