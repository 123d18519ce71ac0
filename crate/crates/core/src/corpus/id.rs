use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical node identifier.
///
/// Under the structured profile the grammar is
/// `<doc_id>_<article_label>[_<para_label>[_<item_label>]]`; under the opaque
/// profile the string is taken as-is.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(raw: impl Into<String>) -> Self {
        NodeId(raw.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// Joins an article-level id with a provision label.
    pub fn child(&self, unit_label: &str) -> NodeId {
        NodeId(format!("{}_{}", self.0, unit_label))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::new(s)
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl AsRef<str> for NodeId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Identifier grammar in force for a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdProfile {
    #[default]
    Structured,
    Opaque,
}

/// A structured id split into its segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedId {
    pub doc_id: String,
    pub article_label: String,
    /// Paragraph and item labels, outermost first. At most two.
    pub sub_labels: Vec<String>,
}

impl ParsedId {
    pub fn is_article_level(&self) -> bool {
        self.sub_labels.is_empty()
    }

    pub fn article_id(&self) -> NodeId {
        NodeId(format!("{}_{}", self.doc_id, self.article_label))
    }

    pub fn to_node_id(&self) -> NodeId {
        NodeId(self.to_string())
    }
}

impl fmt::Display for ParsedId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.doc_id, self.article_label)?;
        for s in &self.sub_labels {
            write!(f, "_{s}")?;
        }
        Ok(())
    }
}

fn article_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"^(?:제\d+조(?:의\d+)?|별표\d+(?:의\d+)?|별지(?:제)?\d+호(?:서식)?|§\d+(?:\.\d+)*|Art\.?\d+[A-Za-z]?|(?:Form|Appendix)[A-Za-z0-9.-]+|\d+(?:\.\d+)+)$",
        )
        .expect("article label regex")
    })
}

fn para_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:제\d+항(?:의\d+)?|\([a-z]{1,3}\)(?:\(\d+\))?)$").expect("para regex"))
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:제\d+호(?:의\d+)?|[가-하]목|\(\d+\))$").expect("item regex"))
}

pub fn is_article_label(s: &str) -> bool {
    article_re().is_match(s)
}

fn is_sub_label(s: &str) -> bool {
    para_re().is_match(s) || item_re().is_match(s)
}

impl IdProfile {
    /// Splits a structured id. Fails for opaque profiles and for strings that
    /// do not follow the grammar.
    pub fn parse(self, raw: &str) -> Result<ParsedId> {
        if self == IdProfile::Opaque {
            return Err(Error::InvalidNodeId(raw.to_string()));
        }
        let segs: Vec<&str> = raw.split('_').collect();
        // rightmost article segment followed only by (at most two) sub-labels
        for i in (1..segs.len()).rev() {
            let rest = &segs[i + 1..];
            if rest.len() > 2 {
                break;
            }
            if !is_article_label(segs[i]) {
                continue;
            }
            let rest_ok = match rest {
                [] => true,
                [a] => is_sub_label(a),
                [a, b] => para_re().is_match(a) && item_re().is_match(b),
                _ => false,
            };
            let doc = segs[..i].join("_");
            if rest_ok && !doc.is_empty() {
                return Ok(ParsedId {
                    doc_id: doc,
                    article_label: segs[i].to_string(),
                    sub_labels: rest.iter().map(|s| s.to_string()).collect(),
                });
            }
        }
        Err(Error::InvalidNodeId(raw.to_string()))
    }

    /// Article-level ancestor of `id`. Article ids and all opaque ids are
    /// fixed points.
    pub fn rollup(self, id: &NodeId) -> Result<NodeId> {
        match self {
            IdProfile::Opaque => Ok(id.clone()),
            IdProfile::Structured => Ok(self.parse(id.as_str())?.article_id()),
        }
    }

    /// Like [`IdProfile::rollup`] but leaves unparseable ids untouched.
    pub fn rollup_lenient(self, id: &NodeId) -> NodeId {
        self.rollup(id).unwrap_or_else(|_| id.clone())
    }
}
