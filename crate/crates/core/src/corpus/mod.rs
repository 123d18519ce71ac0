//! Statute corpus ingestion.
//!
//! A corpus file is line-delimited JSON. The first line may carry a
//! `{"manifest": {...}}` object listing the documents; otherwise the manifest
//! is read from a sidecar `<stem>.manifest.json` next to the corpus file.
//! Every remaining line is one article.

mod id;
mod segment;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use id::{is_article_label, IdProfile, NodeId, ParsedId};
pub use segment::{segment_provisions, MarkerPack, ProvisionSplit, ProvisionUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorityType {
    LegalAuthority,
    ExecutiveDecree,
    ExecutiveRule,
    AdminNotice,
    Manual,
}

impl AuthorityType {
    pub fn as_str(self) -> &'static str {
        match self {
            AuthorityType::LegalAuthority => "legal_authority",
            AuthorityType::ExecutiveDecree => "executive_decree",
            AuthorityType::ExecutiveRule => "executive_rule",
            AuthorityType::AdminNotice => "admin_notice",
            AuthorityType::Manual => "manual",
        }
    }
}

impl fmt::Display for AuthorityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentMeta {
    pub doc_id: String,
    pub title: String,
    pub authority_type: AuthorityType,
    pub tier: u8,
    /// The document this one implements, one tier up the delegation chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    /// Alternative names used when other documents cite this one.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArticleUnit {
    pub node_id: NodeId,
    pub doc_id: String,
    pub article_label: String,
    pub heading: String,
    pub text: String,
    pub provisions: Vec<ProvisionUnit>,
    pub is_form: bool,
}

impl ArticleUnit {
    /// Text handed to embedders, rerankers and generators.
    ///
    /// `text` holds the full article body, so provision texts are only
    /// appended when the body is empty.
    pub fn retrieval_text(&self) -> String {
        let mut out = self.heading.clone();
        let body = if self.text.trim().is_empty() {
            self.provisions
                .iter()
                .map(|p| p.text.as_str())
                .collect::<Vec<_>>()
                .join("\n")
        } else {
            self.text.clone()
        };
        if !out.is_empty() && !body.is_empty() {
            out.push('\n');
        }
        out.push_str(&body);
        out
    }

    pub fn has_provision(&self, label: &str) -> bool {
        self.provisions.iter().any(|p| p.unit_label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub id_profile: IdProfile,
    #[serde(default)]
    pub marker_pack: MarkerPack,
    pub documents: Vec<DocumentMeta>,
}

#[derive(Deserialize)]
struct ManifestLine {
    manifest: Manifest,
}

#[derive(Debug, Deserialize, Serialize)]
struct ArticleLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_id: Option<String>,
    doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doc_title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    authority_type: Option<AuthorityType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tier: Option<u8>,
    article_label: String,
    #[serde(default)]
    heading: String,
    #[serde(default)]
    text: String,
    #[serde(default)]
    provisions: Vec<ProvisionUnit>,
    #[serde(default)]
    is_form: bool,
}

/// Immutable collection of documents and their articles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    manifest: Manifest,
    articles: Vec<ArticleUnit>,
    by_id: HashMap<NodeId, usize>,
    doc_index: BTreeMap<String, usize>,
}

fn check_tier(tier: u8, line: usize, path: &Path) -> Result<()> {
    if (1..=5).contains(&tier) {
        Ok(())
    } else {
        Err(Error::Malformed {
            path: path.to_path_buf(),
            line,
            message: format!("tier {tier} outside 1..5"),
        })
    }
}

fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

/// Reads a corpus file. See the module docs for the format.
pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first_is_manifest = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .is_some_and(|v| v.get("manifest").is_some());
    let sidecar = if first_is_manifest {
        None
    } else {
        let side = sidecar_path(path);
        let raw = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let manifest: Manifest = serde_json::from_str(&raw).map_err(|e| Error::Malformed {
            path: side.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Some(manifest)
    };
    Corpus::from_jsonl(&text, sidecar, path)
}

impl Corpus {
    /// Parses corpus lines. `manifest` overrides the in-band manifest line,
    /// which must then be absent.
    pub fn from_jsonl(text: &str, manifest: Option<Manifest>, path: &Path) -> Result<Corpus> {
        let malformed = |line: usize, message: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut manifest = manifest;
        let mut articles = Vec::new();
        let mut first_line: HashMap<NodeId, usize> = HashMap::new();
        let mut doc_index = BTreeMap::new();

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            if manifest.is_none() {
                let m: ManifestLine = serde_json::from_str(line)
                    .map_err(|e| malformed(line_no, format!("expected manifest: {e}")))?;
                for (i, d) in m.manifest.documents.iter().enumerate() {
                    check_tier(d.tier, line_no, path)?;
                    if doc_index.insert(d.doc_id.clone(), i).is_some() {
                        return Err(malformed(line_no, format!("duplicate doc_id `{}`", d.doc_id)));
                    }
                }
                manifest = Some(m.manifest);
                continue;
            }
            if doc_index.is_empty() {
                let m = manifest.as_ref().expect("manifest set");
                for (i, d) in m.documents.iter().enumerate() {
                    check_tier(d.tier, 0, path)?;
                    if doc_index.insert(d.doc_id.clone(), i).is_some() {
                        return Err(malformed(0, format!("duplicate doc_id `{}`", d.doc_id)));
                    }
                }
            }
            let m = manifest.as_ref().expect("manifest set");
            let raw: ArticleLine =
                serde_json::from_str(line).map_err(|e| malformed(line_no, e.to_string()))?;
            let Some(&di) = doc_index.get(&raw.doc_id) else {
                return Err(Error::UnknownDocument {
                    doc_id: raw.doc_id,
                    line: line_no,
                });
            };
            let doc = &m.documents[di];
            if let Some(t) = raw.tier {
                check_tier(t, line_no, path)?;
                if t != doc.tier {
                    return Err(malformed(line_no, format!("tier {t} disagrees with manifest")));
                }
            }
            if raw.authority_type.is_some_and(|a| a != doc.authority_type) {
                return Err(malformed(line_no, "authority_type disagrees with manifest".into()));
            }
            if raw.doc_title.as_ref().is_some_and(|t| t != &doc.title) {
                return Err(malformed(line_no, "doc_title disagrees with manifest".into()));
            }
            if raw.article_label.trim().is_empty() {
                return Err(malformed(line_no, "empty article_label".into()));
            }
            let node_id = match (m.id_profile, raw.node_id) {
                (IdProfile::Structured, given) => {
                    let derived = format!("{}_{}", raw.doc_id, raw.article_label);
                    if given.as_ref().is_some_and(|g| g != &derived) {
                        return Err(malformed(line_no, format!("node_id must be `{derived}`")));
                    }
                    let parsed = m
                        .id_profile
                        .parse(&derived)
                        .map_err(|_| malformed(line_no, format!("article id `{derived}` does not parse")))?;
                    if !parsed.is_article_level() || parsed.doc_id != raw.doc_id {
                        return Err(malformed(line_no, format!("article id `{derived}` does not parse")));
                    }
                    NodeId::new(derived)
                }
                (IdProfile::Opaque, given) => NodeId::new(given.unwrap_or(raw.article_label.clone())),
            };
            if let Some(&first) = first_line.get(&node_id) {
                return Err(Error::DuplicateNode {
                    node_id: node_id.into_string(),
                    first,
                    second: line_no,
                });
            }
            let provisions = if raw.provisions.is_empty() {
                segment_provisions(&raw.text, m.marker_pack).units
            } else {
                raw.provisions
            };
            let mut labels = std::collections::HashSet::new();
            for p in &provisions {
                if p.unit_label.is_empty() || p.text.is_empty() {
                    return Err(malformed(line_no, "empty provision label or text".into()));
                }
                if !labels.insert(p.unit_label.as_str()) {
                    return Err(malformed(line_no, format!("duplicate provision `{}`", p.unit_label)));
                }
            }
            first_line.insert(node_id.clone(), line_no);
            articles.push(ArticleUnit {
                node_id,
                doc_id: raw.doc_id,
                article_label: raw.article_label,
                heading: raw.heading,
                text: raw.text,
                provisions,
                is_form: raw.is_form,
            });
        }

        let manifest = manifest.ok_or_else(|| malformed(1, "missing manifest".into()))?;
        if doc_index.is_empty() {
            for (i, d) in manifest.documents.iter().enumerate() {
                check_tier(d.tier, 0, path)?;
                doc_index.insert(d.doc_id.clone(), i);
            }
        }
        for d in &manifest.documents {
            if let Some(p) = &d.parent {
                if !doc_index.contains_key(p) {
                    return Err(Error::UnknownDocument {
                        doc_id: p.clone(),
                        line: 0,
                    });
                }
            }
        }
        let by_id = articles
            .iter()
            .enumerate()
            .map(|(i, a)| (a.node_id.clone(), i))
            .collect();
        Ok(Corpus {
            manifest,
            articles,
            by_id,
            doc_index,
        })
    }

    /// Assembles a corpus from in-memory parts, applying the same checks as
    /// the file loader.
    pub fn from_parts(manifest: Manifest, articles: Vec<ArticleUnit>) -> Result<Corpus> {
        let mut text = String::new();
        for a in &articles {
            text.push_str(&serde_json::to_string(&ArticleLine {
                node_id: Some(a.node_id.as_str().to_string()),
                doc_id: a.doc_id.clone(),
                doc_title: None,
                authority_type: None,
                tier: None,
                article_label: a.article_label.clone(),
                heading: a.heading.clone(),
                text: a.text.clone(),
                provisions: a.provisions.clone(),
                is_form: a.is_form,
            })?);
            text.push('\n');
        }
        Corpus::from_jsonl(&text, Some(manifest), Path::new("<memory>"))
    }

    /// Serializes back to the line format with an in-band manifest.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&serde_json::json!({ "manifest": self.manifest }))?;
        out.push('\n');
        for a in &self.articles {
            let doc = self.document(&a.doc_id).expect("validated on load");
            let line = ArticleLine {
                node_id: match self.manifest.id_profile {
                    IdProfile::Opaque => Some(a.node_id.as_str().to_string()),
                    IdProfile::Structured => None,
                },
                doc_id: a.doc_id.clone(),
                doc_title: Some(doc.title.clone()),
                authority_type: Some(doc.authority_type),
                tier: Some(doc.tier),
                article_label: a.article_label.clone(),
                heading: a.heading.clone(),
                text: a.text.clone(),
                provisions: a.provisions.clone(),
                is_form: a.is_form,
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn id_profile(&self) -> IdProfile {
        self.manifest.id_profile
    }

    pub fn marker_pack(&self) -> MarkerPack {
        self.manifest.marker_pack
    }

    pub fn documents(&self) -> &[DocumentMeta] {
        &self.manifest.documents
    }

    pub fn document(&self, doc_id: &str) -> Option<&DocumentMeta> {
        self.doc_index.get(doc_id).map(|&i| &self.manifest.documents[i])
    }

    pub fn articles(&self) -> &[ArticleUnit] {
        &self.articles
    }

    pub fn article(&self, id: &NodeId) -> Option<&ArticleUnit> {
        self.by_id.get(id).map(|&i| &self.articles[i])
    }

    /// Document metadata of the article that owns `id` (after roll-up).
    pub fn document_of(&self, id: &NodeId) -> Option<&DocumentMeta> {
        let art = self
            .article(id)
            .or_else(|| self.article(&self.id_profile().rollup_lenient(id)))?;
        self.document(&art.doc_id)
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MANIFEST: &str = r#"{"manifest":{"documents":[{"doc_id":"법","title":"어떤 법","authority_type":"legal_authority","tier":1},{"doc_id":"영","title":"어떤 법 시행령","authority_type":"executive_decree","tier":2,"parent":"법"}]}}"#;

    fn art(doc: &str, label: &str) -> String {
        format!(r#"{{"doc_id":"{doc}","article_label":"{label}","heading":"h","text":"① 가. ② 나."}}"#)
    }

    fn parse(text: &str) -> Result<Corpus> {
        Corpus::from_jsonl(text, None, Path::new("t.jsonl"))
    }

    #[test]
    fn counts_are_preserved() {
        let text = [MANIFEST.to_string(), art("법", "제1조"), art("법", "제2조"), art("영", "제1조")].join("\n");
        let c = parse(&text).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.documents().len(), 2);
        assert_eq!(c.articles()[0].provisions.len(), 2);
        assert_eq!(c.articles()[2].node_id.as_str(), "영_제1조");
    }

    #[test]
    fn duplicate_node_reports_both_lines() {
        let mut lines = vec![MANIFEST.to_string()];
        for i in 1..=8 {
            lines.push(art("법", &format!("제{i}조")));
        }
        lines[8] = art("법", "제3조");
        // duplicate of line 4
        let err = parse(&lines.join("\n")).unwrap_err();
        match err {
            Error::DuplicateNode { first, second, .. } => assert_eq!((first, second), (4, 9)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_document_is_rejected() {
        let text = [MANIFEST.to_string(), art("규칙", "제1조")].join("\n");
        assert!(matches!(parse(&text), Err(Error::UnknownDocument { line: 2, .. })));
    }

    #[test]
    fn tier_out_of_range_is_rejected() {
        let bad = MANIFEST.replace(r#""tier":2"#, r#""tier":6"#);
        assert!(matches!(parse(&bad), Err(Error::Malformed { line: 1, .. })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = [MANIFEST.to_string(), art("법", "제1조"), "{not json".to_string()].join("\n");
        assert!(matches!(parse(&text), Err(Error::Malformed { line: 3, .. })));
    }

    #[test]
    fn snapshot_round_trips() {
        let text = [MANIFEST.to_string(), art("법", "제1조"), art("영", "제1조")].join("\n");
        let c = parse(&text).unwrap();
        let again = parse(&c.to_jsonl().unwrap()).unwrap();
        assert_eq!(c, again);
        assert_eq!(parse(&text).unwrap(), c);
    }

    #[test]
    fn opaque_profile_keeps_given_ids() {
        let text = [
            r#"{"manifest":{"id_profile":"opaque","marker_pack":"latin","documents":[{"doc_id":"hipaa","title":"HIPAA","authority_type":"executive_rule","tier":3}]}}"#.to_string(),
            r#"{"node_id":"spans-passthrough-candidates/sent_0012-0ec05553","doc_id":"hipaa","article_label":"§164.502","text":"(a) Standard."}"#.to_string(),
        ]
        .join("\n");
        let c = parse(&text).unwrap();
        let id = NodeId::from("spans-passthrough-candidates/sent_0012-0ec05553");
        assert!(c.article(&id).is_some());
        assert_eq!(c.id_profile().rollup(&id).unwrap(), id);
    }

    #[test]
    fn retrieval_text_joins_heading_and_body() {
        let text = [MANIFEST.to_string(), art("법", "제1조")].join("\n");
        let c = parse(&text).unwrap();
        assert_eq!(c.articles()[0].retrieval_text(), "h\n① 가. ② 나.");
    }
}
