use std::collections::BTreeMap;

use rayon::prelude::*;

use super::views::{QueryViews, View};
use crate::clients::Reranker;
use crate::corpus::{AuthorityType, Corpus, NodeId};
use crate::error::{Error, Result};

pub type RankMap = BTreeMap<NodeId, usize>;
pub type ViewRanks = BTreeMap<View, RankMap>;
/// Raw reranker scores per view, in pool order.
pub type ViewScores = BTreeMap<View, Vec<(NodeId, f64)>>;

/// Orders by score descending then id; returns 1-based ranks.
pub fn ranks_from_scores(scores: &[(NodeId, f64)]) -> RankMap {
    let mut order: Vec<&(NodeId, f64)> = scores.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    order
        .into_iter()
        .enumerate()
        .map(|(i, (id, _))| (id.clone(), i + 1))
        .collect()
}

/// Scores every (view, candidate) pair and converts each view's scores to
/// ranks. Calls may run concurrently; ranks depend only on the full score
/// set. Any failing call fails the whole ranking.
pub fn rerank_views(
    pool: &[NodeId],
    views: &QueryViews,
    reranker: &dyn Reranker,
    corpus: &Corpus,
) -> Result<(ViewRanks, ViewScores)> {
    if pool.is_empty() {
        return Err(Error::Data("rerank pool is empty".into()));
    }
    let docs: Vec<String> = pool
        .iter()
        .map(|id| {
            corpus
                .article(id)
                .map(|a| a.retrieval_text())
                .ok_or_else(|| Error::UnknownNode(id.to_string()))
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(View, usize)> = View::ALL
        .iter()
        .flat_map(|v| (0..pool.len()).map(move |i| (*v, i)))
        .collect();
    let scored: Vec<f64> = pairs
        .par_iter()
        .map(|&(v, i)| reranker.score(views.get(v), &docs[i]))
        .collect::<Result<_>>()?;
    let mut ranks = ViewRanks::new();
    let mut raw = BTreeMap::new();
    for (vi, v) in View::ALL.iter().enumerate() {
        let s: Vec<(NodeId, f64)> = pool
            .iter()
            .cloned()
            .zip(scored[vi * pool.len()..(vi + 1) * pool.len()].iter().copied())
            .collect();
        ranks.insert(*v, ranks_from_scores(&s));
        raw.insert(*v, s);
    }
    Ok((ranks, raw))
}

/// Reciprocal Rank MAX: `max_v 1 / (k + rank_v(d))`, sorted descending with
/// id tie-break.
pub fn rrm_fuse(candidates: &[NodeId], ranks: &ViewRanks, k: f64) -> Result<Vec<(NodeId, f64)>> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Config(format!("fusion constant k={k} must be positive")));
    }
    let mut out = Vec::with_capacity(candidates.len());
    for id in candidates {
        let mut best = 0.0f64;
        for v in View::ALL {
            let r = ranks
                .get(&v)
                .and_then(|m| m.get(id))
                .ok_or_else(|| Error::MissingRank {
                    node_id: id.to_string(),
                    view: v.as_str().into(),
                })?;
            best = best.max(1.0 / (k + *r as f64));
        }
        out.push((id.clone(), best));
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

/// Multiplies manual-sourced scores by `mu` and re-sorts. Returns
/// `(id, fused, final)`.
pub fn authority_decay(fused: &[(NodeId, f64)], corpus: &Corpus, mu: f64) -> Result<Vec<(NodeId, f64, f64)>> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::Config(format!("authority decay {mu} outside (0, 1]")));
    }
    let mut out = Vec::with_capacity(fused.len());
    for (id, f) in fused {
        let doc = corpus
            .document_of(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        let fin = if doc.authority_type == AuthorityType::Manual { f * mu } else { *f };
        out.push((id.clone(), *f, fin));
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::StubReranker;
    use std::path::Path;

    fn maps(entries: &[(&str, [usize; 3])]) -> ViewRanks {
        let mut m = ViewRanks::new();
        for (id, rs) in entries {
            for (v, r) in View::ALL.iter().zip(rs) {
                m.entry(*v).or_default().insert(NodeId::from(*id), *r);
            }
        }
        m
    }

    #[test]
    fn best_rank_dominates() {
        let m = maps(&[("a", [3, 5, 1])]);
        let f = rrm_fuse(&[NodeId::from("a")], &m, 60.0).unwrap();
        assert!((f[0].1 - 1.0 / 61.0).abs() < 1e-12);
        assert!((f[0].1 - 0.0163934).abs() < 1e-7);
    }

    #[test]
    fn missing_rank_is_reported() {
        let mut m = maps(&[("a", [1, 1, 1])]);
        m.get_mut(&View::Wide).unwrap().clear();
        assert!(matches!(
            rrm_fuse(&[NodeId::from("a")], &m, 60.0),
            Err(Error::MissingRank { .. })
        ));
    }

    #[test]
    fn equal_scores_rank_by_id() {
        let r = ranks_from_scores(&[(NodeId::from("b"), 0.5), (NodeId::from("a"), 0.5)]);
        assert_eq!(r[&NodeId::from("a")], 1);
        assert_eq!(r[&NodeId::from("b")], 2);
    }

    fn corpus() -> Corpus {
        let text = r#"{"manifest":{"documents":[{"doc_id":"법","title":"법","authority_type":"legal_authority","tier":1},{"doc_id":"매뉴얼","title":"매뉴얼","authority_type":"manual","tier":5}]}}
{"doc_id":"법","article_label":"제1조","heading":"승인","text":"구매 승인 절차"}
{"doc_id":"매뉴얼","article_label":"제1조","heading":"안내","text":"구매 안내"}"#;
        Corpus::from_jsonl(text, None, Path::new("t")).unwrap()
    }

    #[test]
    fn manual_decay_and_boundary_swap() {
        let c = corpus();
        let m = NodeId::from("매뉴얼_제1조");
        let s = NodeId::from("법_제1조");
        let out = authority_decay(&[(m.clone(), 1.0 / 61.0)], &c, 0.7).unwrap();
        assert!((out[0].2 - 0.0114754).abs() < 1e-7);
        // statute within a factor mu of the manual: swaps
        let fused = [(m.clone(), 1.0 / 61.0), (s.clone(), 1.0 / 62.0)];
        let out = authority_decay(&fused, &c, 0.7).unwrap();
        assert_eq!(out[0].0, s);
        // statute below mu times the manual: manual keeps rank 1
        let fused = [(m.clone(), 1.0 / 61.0), (s.clone(), 0.6 / 61.0)];
        let out = authority_decay(&fused, &c, 0.7).unwrap();
        assert_eq!(out[0].0, m);
        let out = authority_decay(&fused, &c, 1.0).unwrap();
        assert_eq!(out.iter().map(|x| x.0.clone()).collect::<Vec<_>>(), vec![m, s]);
    }

    #[test]
    fn rerank_single_candidate() {
        let c = corpus();
        let views = QueryViews {
            narrow: "구매".into(),
            mid: "구매 승인".into(),
            wide: "x".into(),
        };
        let r = StubReranker::default();
        let (ranks, _) = rerank_views(&[NodeId::from("법_제1조")], &views, &r, &c).unwrap();
        assert!(ranks.values().all(|m| m[&NodeId::from("법_제1조")] == 1));
        assert_eq!(r.calls(), 3);
    }
}
