//! Retrieval and attribution metrics. Every comparison happens after
//! rolling ids up to their article, and reports are macro averages.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::AnswerRecord;
use crate::benchkit::{Level, StructuralFlags};
use crate::clients::Judge;
use crate::corpus::{IdProfile, NodeId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAItem {
    pub qid: String,
    pub question: String,
    pub gt_refs: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_claims: Option<Vec<String>>,
    #[serde(default)]
    pub flags: StructuralFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Level>,
}

pub fn parse_dataset(text: &str, path: &Path) -> Result<Vec<QAItem>> {
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let item: QAItem = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if item.gt_refs.is_empty() {
            return Err(malformed(format!("`{}` has no gt_refs", item.qid)));
        }
        if !seen.insert(item.qid.clone()) {
            return Err(malformed(format!("duplicate qid `{}`", item.qid)));
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_dataset(path: &Path) -> Result<Vec<QAItem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn dataset_to_jsonl(items: &[QAItem]) -> Result<String> {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it)?);
        out.push('\n');
    }
    Ok(out)
}

fn rolled_set(ids: &[NodeId], profile: IdProfile) -> BTreeSet<NodeId> {
    ids.iter().map(|i| profile.rollup_lenient(i)).collect()
}

/// Rolled-up ranking with later duplicates removed, cut to `k`.
fn rolled_prefix(ranked: &[NodeId], k: usize, profile: IdProfile) -> Vec<NodeId> {
    let mut seen = BTreeSet::new();
    ranked
        .iter()
        .map(|i| profile.rollup_lenient(i))
        .filter(|i| seen.insert(i.clone()))
        .take(k)
        .collect()
}

fn gt_set(gt: &[NodeId], profile: IdProfile) -> Result<BTreeSet<NodeId>> {
    if gt.is_empty() {
        return Err(Error::Data("ground-truth reference set is empty".into()));
    }
    Ok(rolled_set(gt, profile))
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}

pub fn recall_at_k(ranked: &[NodeId], gt: &[NodeId], k: usize, profile: IdProfile) -> Result<f64> {
    check_k(k)?;
    let g = gt_set(gt, profile)?;
    let top = rolled_prefix(ranked, k, profile);
    let hit = top.iter().filter(|i| g.contains(*i)).count();
    Ok(hit as f64 / g.len() as f64)
}

/// Binary-gain nDCG.
pub fn ndcg_at_k(ranked: &[NodeId], gt: &[NodeId], k: usize, profile: IdProfile) -> Result<f64> {
    check_k(k)?;
    let g = gt_set(gt, profile)?;
    let top = rolled_prefix(ranked, k, profile);
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = top
        .iter()
        .enumerate()
        .filter(|(_, id)| g.contains(*id))
        .fold(0.0, |acc, (i, _)| acc + gain(i));
    let idcg: f64 = (0..g.len().min(k)).map(gain).fold(0.0, |a, b| a + b);
    Ok(dcg / idcg)
}

pub fn fullcov_at_k(ranked: &[NodeId], gt: &[NodeId], k: usize, profile: IdProfile) -> Result<f64> {
    check_k(k)?;
    let g = gt_set(gt, profile)?;
    let top: BTreeSet<NodeId> = rolled_prefix(ranked, k, profile).into_iter().collect();
    Ok(if g.is_subset(&top) { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(p: f64, r: f64) -> Prf {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Prf { p, r, f1 }
    }
}

/// Set precision/recall after roll-up. An empty prediction scores P = 0.
pub fn citation_prf(pred: &[NodeId], gt: &[NodeId], profile: IdProfile) -> Result<Prf> {
    let g = gt_set(gt, profile)?;
    let p = rolled_set(pred, profile);
    let inter = p.intersection(&g).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { inter / p.len() as f64 };
    Ok(Prf::new(precision, inter / g.len() as f64))
}

/// Largest matrix side solved by enumeration.
const EXHAUSTIVE_MAX: usize = 8;

/// Maximum-weight bipartite matching. Returns the total weight and the
/// matched `(row, col)` pairs with positive weight, sorted by row.
pub fn max_weight_matching(w: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let rows = w.len();
    let cols = w.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return (0.0, Vec::new());
    }
    if rows <= EXHAUSTIVE_MAX && cols <= EXHAUSTIVE_MAX {
        exhaustive(w, cols)
    } else {
        hungarian(w, rows, cols)
    }
}

fn exhaustive(w: &[Vec<f64>], cols: usize) -> (f64, Vec<(usize, usize)>) {
    fn go(
        w: &[Vec<f64>],
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        if row == w.len() {
            if acc > best.0 {
                *best = (acc, cur.clone());
            }
            return;
        }
        go(w, row + 1, used, cur, acc, best);
        for c in 0..used.len() {
            if !used[c] && w[row][c] > 0.0 {
                used[c] = true;
                cur.push((row, c));
                go(w, row + 1, used, cur, acc + w[row][c], best);
                cur.pop();
                used[c] = false;
            }
        }
    }
    let mut best = (0.0, Vec::new());
    go(w, 0, &mut vec![false; cols], &mut Vec::new(), 0.0, &mut best);
    best
}

/// Kuhn–Munkres on the padded square cost matrix `max - w`.
fn hungarian(w: &[Vec<f64>], rows: usize, cols: usize) -> (f64, Vec<(usize, usize)>) {
    let n = rows.max(cols);
    let top = w.iter().flatten().copied().fold(0.0f64, f64::max);
    let cost = |i: usize, j: usize| if i < rows && j < cols { top - w[i][j] } else { top };
    let inf = f64::INFINITY;
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0 && p[j] - 1 < rows && j - 1 < cols && w[p[j] - 1][j - 1] > 0.0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().fold(0.0, |acc, &(i, j)| acc + w[i][j]);
    (total, pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimScore {
    pub prf: Prf,
    pub weight: f64,
    /// `matrix[i][j]`: weight of predicted claim i against reference j.
    pub matrix: Vec<Vec<f64>>,
    pub matching: Vec<(usize, usize)>,
    /// No predicted claims; precision is reported as 0.
    pub zero_pred: bool,
}

pub fn claim_prf(pred: &[String], gt: &[String], judge: &dyn Judge, question: &str) -> Result<ClaimScore> {
    if gt.is_empty() {
        return Err(Error::Data("reference claim set is empty".into()));
    }
    let mut matrix = vec![vec![0.0; gt.len()]; pred.len()];
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            matrix[i][j] = judge.judge(p, g, question)?.weight();
        }
    }
    let (weight, matching) = max_weight_matching(&matrix);
    let precision = if pred.is_empty() { 0.0 } else { weight / pred.len() as f64 };
    Ok(ClaimScore {
        prf: Prf::new(precision, weight / gt.len() as f64),
        weight,
        matrix,
        matching,
        zero_pred: pred.is_empty(),
    })
}

/// What a run produced for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub qid: String,
    pub ranked: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerRecord>,
}

pub fn parse_outputs(text: &str, path: &Path) -> Result<Vec<RunOutput>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub id_profile: IdProfile,
    pub slice_difficulty: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 10,
            id_profile: IdProfile::Structured,
            slice_difficulty: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub qid: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Level>,
    pub recall: f64,
    pub ndcg: f64,
    pub fullcov: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citation: Option<Prf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim: Option<ClaimScore>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndcg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fullcov: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citation_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citation_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub citation_f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub claim_f1: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl Aggregates {
    pub fn of(rows: &[&QueryRow]) -> Aggregates {
        let col = |f: &dyn Fn(&QueryRow) -> Option<f64>| mean(rows.iter().filter_map(|r| f(r)));
        Aggregates {
            n: rows.len(),
            recall: col(&|r| Some(r.recall)),
            ndcg: col(&|r| Some(r.ndcg)),
            fullcov: col(&|r| Some(r.fullcov)),
            citation_p: col(&|r| r.citation.map(|c| c.p)),
            citation_r: col(&|r| r.citation.map(|c| c.r)),
            citation_f1: col(&|r| r.citation.map(|c| c.f1)),
            claim_p: col(&|r| r.claim.as_ref().map(|c| c.prf.p)),
            claim_r: col(&|r| r.claim.as_ref().map(|c| c.prf.r)),
            claim_f1: col(&|r| r.claim.as_ref().map(|c| c.prf.f1)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<QueryRow>,
    pub aggregates: Aggregates,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slices: Option<BTreeMap<Level, Aggregates>>,
    pub metadata: serde_json::Value,
}

fn score_one(item: &QAItem, out: &RunOutput, cfg: &EvalConfig, judge: &dyn Judge) -> Result<QueryRow> {
    let p = cfg.id_profile;
    let citation = out
        .answer
        .as_ref()
        .map(|a| {
            let pred: Vec<NodeId> = a.predicted_citations().into_iter().map(NodeId::new).collect();
            citation_prf(&pred, &item.gt_refs, p)
        })
        .transpose()?;
    let claim = match (&out.answer, &item.gt_claims) {
        (Some(a), Some(gt)) if !gt.is_empty() => Some(claim_prf(&a.claims(), gt, judge, &item.question)?),
        _ => None,
    };
    Ok(QueryRow {
        qid: item.qid.clone(),
        difficulty: item.difficulty,
        recall: recall_at_k(&out.ranked, &item.gt_refs, cfg.k, p)?,
        ndcg: ndcg_at_k(&out.ranked, &item.gt_refs, cfg.k, p)?,
        fullcov: fullcov_at_k(&out.ranked, &item.gt_refs, cfg.k, p)?,
        citation,
        claim,
    })
}

/// Scores every dataset item against its output. Rows follow dataset
/// order whatever order the judge calls complete in.
pub fn evaluate_run(
    dataset: &[QAItem],
    outputs: &[RunOutput],
    cfg: &EvalConfig,
    judge: &dyn Judge,
    metadata: serde_json::Value,
) -> Result<MetricReport> {
    check_k(cfg.k)?;
    let mut by_qid: HashMap<&str, &RunOutput> = HashMap::new();
    for o in outputs {
        if by_qid.insert(o.qid.as_str(), o).is_some() {
            return Err(Error::Data(format!("qid `{}` has more than one output", o.qid)));
        }
    }
    let known: BTreeSet<&str> = dataset.iter().map(|d| d.qid.as_str()).collect();
    if let Some(extra) = outputs.iter().find(|o| !known.contains(o.qid.as_str())) {
        return Err(Error::Data(format!("output for unknown qid `{}`", extra.qid)));
    }
    let pairs: Vec<(&QAItem, &RunOutput)> = dataset
        .iter()
        .map(|d| {
            by_qid
                .get(d.qid.as_str())
                .map(|o| (d, *o))
                .ok_or_else(|| Error::Data(format!("no output for qid `{}`", d.qid)))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<QueryRow> = pairs
        .par_iter()
        .map(|(d, o)| score_one(d, o, cfg, judge))
        .collect::<Result<_>>()?;
    let all: Vec<&QueryRow> = rows.iter().collect();
    let aggregates = Aggregates::of(&all);
    let slices = cfg.slice_difficulty.then(|| {
        Level::ALL
            .iter()
            .map(|l| {
                let sel: Vec<&QueryRow> = rows.iter().filter(|r| r.difficulty == Some(*l)).collect();
                (*l, Aggregates::of(&sel))
            })
            .collect()
    });
    Ok(MetricReport {
        rows,
        aggregates,
        slices,
        metadata,
    })
}
