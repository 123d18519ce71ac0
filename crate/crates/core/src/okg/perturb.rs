use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NodeKind, Okg, TypedEdge};
use crate::corpus::NodeId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    Drop,
    Rewire,
}

impl PerturbMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PerturbMode::Drop => "drop",
            PerturbMode::Rewire => "rewire",
        }
    }
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop" => Ok(PerturbMode::Drop),
            "rewire" => Ok(PerturbMode::Rewire),
            other => Err(Error::Config(format!("unknown perturbation mode `{other}`"))),
        }
    }
}

/// Groups citation edges into perturbation units: a DELEGATES_TO edge and
/// its SPECIFIES mirror move together, everything else moves alone.
fn units(edges: &[TypedEdge]) -> Vec<Vec<usize>> {
    let index: HashMap<_, usize> = edges.iter().enumerate().map(|(i, e)| (e.key(), i)).collect();
    let mut taken = vec![false; edges.len()];
    let mut out = Vec::new();
    for (i, e) in edges.iter().enumerate() {
        if taken[i] || !e.etype.is_citation() {
            continue;
        }
        taken[i] = true;
        let mut unit = vec![i];
        if let Some(m) = e.etype.mirror() {
            if let Some(&j) = index.get(&(e.dst.clone(), e.src.clone(), m)) {
                if !taken[j] {
                    taken[j] = true;
                    unit.push(j);
                }
            }
        }
        out.push(unit);
    }
    out
}

/// Seeded citation-edge noise. `⌊rate · |citation edges|⌋` edges are
/// dropped or have their destination moved; mirror pairs are handled as a
/// unit so the DELEGATES_TO/SPECIFIES balance survives. Non-citation edges
/// are never touched.
pub fn perturb(graph: &Okg, mode: PerturbMode, rate: f64, seed: u64) -> Result<Okg> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("perturbation rate {rate} outside [0, 1]")));
    }
    let edges = graph.edges();
    let citation = edges.iter().filter(|e| e.etype.is_citation()).count();
    let budget = (rate * citation as f64).floor() as usize;
    if budget == 0 {
        return Ok(graph.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = units(edges);
    groups.shuffle(&mut rng);

    let mut left = budget;
    let mut chosen = Vec::new();
    for g in groups {
        if left == 0 {
            break;
        }
        if g.len() <= left {
            left -= g.len();
            chosen.push(g);
        }
    }

    let mut out: Vec<Option<TypedEdge>> = edges.iter().cloned().map(Some).collect();
    match mode {
        PerturbMode::Drop => {
            for i in chosen.into_iter().flatten() {
                out[i] = None;
            }
        }
        PerturbMode::Rewire => {
            let articles: Vec<&NodeId> = graph
                .nodes()
                .filter(|n| n.kind == NodeKind::Article)
                .map(|n| &n.node_id)
                .collect();
            for g in chosen {
                let lead = edges[g[0]].clone();
                let pool: Vec<&NodeId> = articles
                    .iter()
                    .copied()
                    .filter(|n| **n != lead.src && **n != lead.dst)
                    .collect();
                if pool.is_empty() {
                    continue;
                }
                let target = pool[rng.random_range(0..pool.len())].clone();
                for &i in &g {
                    let e = out[i].as_mut().expect("edge present");
                    if e.src == lead.src {
                        e.dst = target.clone();
                    } else {
                        e.src = target.clone();
                    }
                }
            }
        }
    }
    Ok(graph.with_edges(out.into_iter().flatten().collect()))
}
