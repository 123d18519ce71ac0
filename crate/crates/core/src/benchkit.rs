//! Benchmark tooling: the difficulty rubric, reference-closure rules and
//! the sub-clause audit. Everything here is a pure function of its inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, IdProfile, NodeId};
use crate::error::{Error, Result};
use crate::evalkit::QAItem;
use crate::okg::{EdgeType, Okg};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L1,
    L2,
    L3,
    L4,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L1, Level::L2, Level::L3, Level::L4];
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Level {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L1" => Ok(Level::L1),
            "L2" => Ok(Level::L2),
            "L3" => Ok(Level::L3),
            "L4" => Ok(Level::L4),
            other => Err(Error::Data(format!("unknown difficulty `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    #[default]
    CostUse,
    InstitutionalIt,
    FacilityEquipment,
    Tax,
    StatutoryProcedure,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StructuralFlags {
    pub conditional: bool,
    pub cross_doc: bool,
    pub external_law: bool,
    pub sanction: bool,
    pub exception_heavy: bool,
    pub institution_parallel_count: u8,
    pub facet_arity: u32,
    pub domain_tag: DomainTag,
    /// Key into the configured institution-parallel groups.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallel_topic: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricOrder {
    /// L4 first, so the broad L2 trigger cannot shadow the upper levels.
    #[default]
    HighestFirst,
    /// Table order, L1 first. Only L1 and L2 are then reachable.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RubricConfig {
    pub order: RubricOrder,
    /// Institution-parallel count that counts as multi-institution for L4.
    pub l4_parallel_min: u8,
}

impl Default for RubricConfig {
    fn default() -> Self {
        RubricConfig {
            order: RubricOrder::HighestFirst,
            l4_parallel_min: 2,
        }
    }
}

pub fn classify_difficulty(flags: &StructuralFlags, ref_count: usize, cfg: &RubricConfig) -> Result<Level> {
    if ref_count < 1 {
        return Err(Error::Data("difficulty needs at least one reference".into()));
    }
    if flags.institution_parallel_count > 4 {
        return Err(Error::Data(format!(
            "institution_parallel_count {} exceeds 4",
            flags.institution_parallel_count
        )));
    }
    let f = flags;
    let l4 = f.conditional
        && (f.cross_doc || f.sanction || f.institution_parallel_count >= cfg.l4_parallel_min || f.facet_arity >= 3);
    let l3 = f.cross_doc || f.external_law || ref_count >= 4 || f.institution_parallel_count == 4 || f.facet_arity >= 3;
    let l2 = ref_count >= 2 || f.conditional;
    let l1 = ref_count == 1 && !f.conditional;
    Ok(match cfg.order {
        RubricOrder::HighestFirst => {
            if l4 {
                Level::L4
            } else if l3 {
                Level::L3
            } else if l2 {
                Level::L2
            } else {
                Level::L1
            }
        }
        RubricOrder::Literal => {
            if l1 {
                Level::L1
            } else if l2 {
                Level::L2
            } else if l3 {
                Level::L3
            } else {
                Level::L4
            }
        }
    })
}

fn default_deemed() -> BTreeSet<EdgeType> {
    [EdgeType::References].into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureRuleConfig {
    /// Controlling anchor articles per domain.
    #[serde(default)]
    pub anchors: BTreeMap<DomainTag, Vec<NodeId>>,
    pub pre_approval_anchor: NodeId,
    pub sanction_anchors: Vec<NodeId>,
    /// Topic to its four institution slots.
    #[serde(default)]
    pub institution_parallel_groups: BTreeMap<String, Vec<NodeId>>,
    /// Edge types followed from a deemed article.
    #[serde(default = "default_deemed")]
    pub deemed_edge_types: BTreeSet<EdgeType>,
}

impl ClosureRuleConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every configured id must name a corpus article.
    pub fn check(&self, corpus: &Corpus) -> Result<()> {
        let ids = self
            .anchors
            .values()
            .flatten()
            .chain([&self.pre_approval_anchor])
            .chain(&self.sanction_anchors)
            .chain(self.institution_parallel_groups.values().flatten());
        for id in ids {
            if corpus.article(id).is_none() {
                return Err(Error::Config(format!("closure anchor `{id}` is not a corpus article")));
            }
        }
        for (topic, slots) in &self.institution_parallel_groups {
            if slots.len() != 4 {
                return Err(Error::Config(format!(
                    "parallel group `{topic}` has {} slots, expected 4",
                    slots.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ClosureRule {
    R1,
    R2,
    R3,
    R4,
}

/// An id appended to an item's references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub qid: String,
    pub rule: ClosureRule,
    pub added: NodeId,
    pub reason: String,
}

/// Something the rules noticed but did not change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub qid: String,
    pub rule: ClosureRule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClosureAudit {
    pub added: Vec<AuditEntry>,
    pub findings: Vec<Finding>,
}

struct Refs<'a> {
    profile: IdProfile,
    list: &'a mut Vec<NodeId>,
    rolled: BTreeSet<NodeId>,
}

impl Refs<'_> {
    fn contains(&self, id: &NodeId) -> bool {
        self.rolled.contains(&self.profile.rollup_lenient(id))
    }

    fn add(&mut self, id: &NodeId) -> bool {
        if self.contains(id) {
            return false;
        }
        self.rolled.insert(self.profile.rollup_lenient(id));
        self.list.push(id.clone());
        true
    }
}

/// Applies R1–R4 to one item. Only appends references; a second pass adds
/// nothing.
pub fn validate_closure(item: &QAItem, cfg: &ClosureRuleConfig, okg: &Okg, profile: IdProfile) -> Result<(QAItem, ClosureAudit)> {
    for id in [&cfg.pre_approval_anchor].into_iter().chain(&cfg.sanction_anchors) {
        if okg.node(id).is_none() {
            return Err(Error::Config(format!("closure anchor `{id}` is not in the graph")));
        }
    }
    let mut out = item.clone();
    let mut audit = ClosureAudit::default();
    let qid = item.qid.clone();
    let rolled = out.gt_refs.iter().map(|r| profile.rollup_lenient(r)).collect();
    let mut refs = Refs {
        profile,
        list: &mut out.gt_refs,
        rolled,
    };
    let f = &item.flags;

    // R1
    if let Some(anchors) = cfg.anchors.get(&f.domain_tag) {
        if !anchors.iter().any(|a| refs.contains(a)) {
            audit.findings.push(Finding {
                qid: qid.clone(),
                rule: ClosureRule::R1,
                detail: format!("no reference in the {:?} anchor set", f.domain_tag),
            });
        }
    }

    // R2
    if let Some(topic) = &f.parallel_topic {
        match cfg.institution_parallel_groups.get(topic) {
            None => audit.findings.push(Finding {
                qid: qid.clone(),
                rule: ClosureRule::R2,
                detail: format!("parallel topic `{topic}` has no configured group"),
            }),
            Some(slots) => {
                let mut hop1 = BTreeSet::new();
                for slot in slots {
                    if refs.add(slot) {
                        audit.added.push(AuditEntry {
                            qid: qid.clone(),
                            rule: ClosureRule::R2,
                            added: slot.clone(),
                            reason: format!("institution slot for `{topic}`"),
                        });
                    }
                    for e in okg.out_edges(slot) {
                        if cfg.deemed_edge_types.contains(&e.etype) && !okg.is_external(&e.dst) {
                            hop1.insert((e.dst.clone(), slot.clone()));
                        }
                    }
                }
                let slot_set: BTreeSet<&NodeId> = slots.iter().collect();
                for (dst, from) in &hop1 {
                    if refs.add(dst) {
                        audit.added.push(AuditEntry {
                            qid: qid.clone(),
                            rule: ClosureRule::R2,
                            added: dst.clone(),
                            reason: format!("incorporated by deemed article `{from}`"),
                        });
                    }
                }
                let hop1_ids: BTreeSet<&NodeId> = hop1.iter().map(|(d, _)| d).collect();
                let mut second = BTreeSet::new();
                for d in &hop1_ids {
                    for e in okg.out_edges(d) {
                        if cfg.deemed_edge_types.contains(&e.etype)
                            && !okg.is_external(&e.dst)
                            && !refs.contains(&e.dst)
                            && !slot_set.contains(&e.dst)
                        {
                            second.insert(e.dst.clone());
                        }
                    }
                }
                for s in second {
                    audit.findings.push(Finding {
                        qid: qid.clone(),
                        rule: ClosureRule::R2,
                        detail: format!("second-hop candidate `{s}` not followed"),
                    });
                }
            }
        }
    }

    // R3
    if f.exception_heavy && refs.add(&cfg.pre_approval_anchor) {
        audit.added.push(AuditEntry {
            qid: qid.clone(),
            rule: ClosureRule::R3,
            added: cfg.pre_approval_anchor.clone(),
            reason: "exception-heavy item needs the pre-approval anchor".into(),
        });
    }

    // R4
    if f.sanction {
        for a in &cfg.sanction_anchors {
            if refs.add(a) {
                audit.added.push(AuditEntry {
                    qid: qid.clone(),
                    rule: ClosureRule::R4,
                    added: a.clone(),
                    reason: "sanction-bearing item needs the sanction anchors".into(),
                });
            }
        }
    }
    Ok((out, audit))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub qid: String,
    pub from: NodeId,
    pub to: NodeId,
    pub reason: String,
}

/// Truncates sub-article references whose provision does not exist in the
/// named article. Duplicates created by truncation are dropped.
pub fn audit_subclauses(item: &QAItem, corpus: &Corpus) -> (QAItem, Vec<Correction>) {
    let profile = corpus.id_profile();
    let mut out = item.clone();
    let mut fixes = Vec::new();
    if profile == IdProfile::Opaque {
        return (out, fixes);
    }
    let mut refs = Vec::with_capacity(item.gt_refs.len());
    for r in &item.gt_refs {
        let fixed = match profile.parse(r.as_str()) {
            Ok(p) if !p.is_article_level() => {
                let article = p.article_id();
                let label = p.sub_labels.join("_");
                match corpus.article(&article) {
                    Some(a) if a.has_provision(&label) => r.clone(),
                    found => {
                        let reason = if found.is_some() {
                            format!("article has no provision `{label}`")
                        } else {
                            "parent article is not in the corpus".into()
                        };
                        fixes.push(Correction {
                            qid: item.qid.clone(),
                            from: r.clone(),
                            to: article.clone(),
                            reason,
                        });
                        article
                    }
                }
            }
            _ => r.clone(),
        };
        if !refs.contains(&fixed) {
            refs.push(fixed);
        }
    }
    out.gt_refs = refs;
    (out, fixes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::okg::test_support::graph;
    use std::path::Path;

    fn flags() -> StructuralFlags {
        StructuralFlags::default()
    }

    #[test]
    fn rubric_anchor_cases() {
        let c = RubricConfig::default();
        assert_eq!(classify_difficulty(&flags(), 1, &c).unwrap(), Level::L1);
        let f = StructuralFlags {
            conditional: true,
            cross_doc: true,
            ..flags()
        };
        assert_eq!(classify_difficulty(&f, 2, &c).unwrap(), Level::L4);
        assert_eq!(classify_difficulty(&flags(), 5, &c).unwrap(), Level::L3);
        assert!(classify_difficulty(&flags(), 0, &c).is_err());
    }

    #[test]
    fn literal_order_only_reaches_two_levels() {
        let c = RubricConfig {
            order: RubricOrder::Literal,
            ..Default::default()
        };
        let f = StructuralFlags {
            conditional: true,
            cross_doc: true,
            ..flags()
        };
        assert_eq!(classify_difficulty(&f, 2, &c).unwrap(), Level::L2);
        assert_eq!(classify_difficulty(&flags(), 1, &c).unwrap(), Level::L1);
    }

    fn item(refs: &[&str], f: StructuralFlags) -> QAItem {
        QAItem {
            qid: "q".into(),
            question: "?".into(),
            gt_refs: refs.iter().map(|r| NodeId::from(*r)).collect(),
            gt_claims: None,
            flags: f,
            difficulty: None,
        }
    }

    fn cfg() -> ClosureRuleConfig {
        ClosureRuleConfig {
            anchors: BTreeMap::from([(DomainTag::CostUse, vec![NodeId::from("S_제1조")])]),
            pre_approval_anchor: NodeId::from("S_제73조"),
            sanction_anchors: vec![NodeId::from("D_제26조"), NodeId::from("S_제83조")],
            institution_parallel_groups: BTreeMap::from([(
                "시설".to_string(),
                ["S_제43조", "S_제51조", "S_제59조", "S_제69조"].map(NodeId::from).to_vec(),
            )]),
            deemed_edge_types: default_deemed(),
        }
    }

    fn okg() -> Okg {
        let ids = [
            "S_제1조", "S_제73조", "D_제26조", "S_제83조", "S_제43조", "S_제51조", "S_제59조", "S_제69조", "S_제30조",
            "S_제31조",
        ];
        graph(
            &ids,
            &[
                ("S_제43조", "S_제30조", EdgeType::References),
                ("S_제51조", "S_제30조", EdgeType::References),
                ("S_제30조", "S_제31조", EdgeType::References),
            ],
        )
    }

    #[test]
    fn sanction_adds_both_anchors_once() {
        let g = okg();
        let it = item(&["S_제1조"], StructuralFlags { sanction: true, ..flags() });
        let (a, audit) = validate_closure(&it, &cfg(), &g, IdProfile::Structured).unwrap();
        assert_eq!(a.gt_refs.len(), 3);
        assert_eq!(audit.added.len(), 2);
        let (b, again) = validate_closure(&a, &cfg(), &g, IdProfile::Structured).unwrap();
        assert_eq!(a, b);
        assert!(again.added.is_empty());
    }

    #[test]
    fn present_anchor_is_left_alone() {
        let it = item(
            &["S_제1조", "S_제73조_제1항"],
            StructuralFlags {
                exception_heavy: true,
                ..flags()
            },
        );
        let (a, audit) = validate_closure(&it, &cfg(), &okg(), IdProfile::Structured).unwrap();
        assert_eq!(a, it);
        assert_eq!(audit, ClosureAudit::default());
    }

    #[test]
    fn parallel_group_pulls_in_slots_and_one_hop() {
        let it = item(
            &["S_제43조"],
            StructuralFlags {
                parallel_topic: Some("시설".into()),
                institution_parallel_count: 4,
                ..flags()
            },
        );
        let (a, audit) = validate_closure(&it, &cfg(), &okg(), IdProfile::Structured).unwrap();
        let got: Vec<&str> = a.gt_refs.iter().map(|n| n.as_str()).collect();
        assert_eq!(got, vec!["S_제43조", "S_제51조", "S_제59조", "S_제69조", "S_제30조"]);
        assert!(audit.findings.iter().any(|f| f.rule == ClosureRule::R1));
        assert!(audit.findings.iter().any(|f| f.detail.contains("S_제31조")));
    }

    fn corpus() -> Corpus {
        let text = r#"{"manifest":{"documents":[{"doc_id":"A","title":"A","authority_type":"legal_authority","tier":1}]}}
{"doc_id":"A","article_label":"제1조","heading":"h","text":"① 하나 ② 둘 ③ 셋"}
{"doc_id":"A","article_label":"제2조","heading":"h","text":"① 하나 ② 둘"}"#;
        Corpus::from_jsonl(text, None, Path::new("t")).unwrap()
    }

    #[test]
    fn subclause_audit_truncates_leaks() {
        let c = corpus();
        let ok = item(&["A_제1조_제3항"], flags());
        assert_eq!(audit_subclauses(&ok, &c), (ok.clone(), vec![]));
        let bad = item(&["A_제2조_제9항", "A_제2조"], flags());
        let (fixed, log) = audit_subclauses(&bad, &c);
        assert_eq!(fixed.gt_refs, vec![NodeId::from("A_제2조")]);
        assert_eq!(log.len(), 1);
        let (twice, log2) = audit_subclauses(&fixed, &c);
        assert_eq!(twice, fixed);
        assert!(log2.is_empty());
    }
}
