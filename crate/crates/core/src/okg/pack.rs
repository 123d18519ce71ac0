use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::EdgeType;
use crate::corpus::AuthorityType;
use crate::error::{Error, Result};

const KOREAN_STATUTE: &str = include_str!("../../assets/packs/korean-statute.json");
const US_CFR: &str = include_str!("../../assets/packs/us-cfr.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Edge runs from the citing article to the resolved target.
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Unqualified citations resolve inside the citing document.
    #[default]
    SameDocument,
    /// Unqualified citations resolve against any document carrying the label.
    Global,
}

/// How a rule's match is turned into edge targets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// Article label template, e.g. `제{art}조{sub}`.
    Article(String),
    /// Appendix-form label template, e.g. `별표{num}{sub}`.
    Form(String),
    /// Articles of the delegate document that cite the source back.
    Delegate(AuthorityType),
    /// Article whose heading contains the captured `term`.
    HeadingAnchor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub pattern: String,
    pub etype: EdgeType,
    #[serde(default)]
    pub direction: Direction,
    pub target_template: String,
    #[serde(default)]
    pub scope: Scope,
    /// Matched spans are hidden from later rules.
    #[serde(default)]
    pub consume: bool,
}

impl PatternRule {
    pub fn target(&self) -> Result<Target> {
        let (kind, rest) = self
            .target_template
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("target_template `{}` lacks a kind", self.target_template)))?;
        match kind {
            "article" => Ok(Target::Article(rest.to_string())),
            "form" => Ok(Target::Form(rest.to_string())),
            "delegate" => {
                let auth: AuthorityType = serde_json::from_value(serde_json::Value::String(rest.to_string()))
                    .map_err(|_| Error::Config(format!("unknown authority type `{rest}`")))?;
                Ok(Target::Delegate(auth))
            }
            "anchor" if rest == "heading" => Ok(Target::HeadingAnchor),
            _ => Err(Error::Config(format!("unknown target_template `{}`", self.target_template))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternPack {
    pub id: String,
    pub rules: Vec<PatternRule>,
    /// Short qualifiers ("법", "영") mapped to the authority type they denote
    /// within the citing document's delegation family.
    #[serde(default)]
    pub relative_qualifiers: BTreeMap<String, AuthorityType>,
    /// Regex a heading must match for DEFINES rules to run on the article.
    #[serde(default)]
    pub definition_heading: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PackFile {
    Full(PatternPack),
    Rules(Vec<PatternRule>),
}

/// A pack with its regexes compiled.
#[derive(Debug, Clone)]
pub struct CompiledPack {
    pub pack: PatternPack,
    pub(crate) rules: Vec<(PatternRule, Regex, Target)>,
    pub(crate) definition_heading: Option<Regex>,
}

impl PatternPack {
    pub fn builtin(name: &str) -> Result<PatternPack> {
        let raw = match name {
            "korean-statute" => KOREAN_STATUTE,
            "us-cfr" => US_CFR,
            other => return Err(Error::Config(format!("unknown pattern pack `{other}`"))),
        };
        Ok(serde_json::from_str(raw).expect("built-in pack parses"))
    }

    /// Loads a pack file. A bare JSON list of rules is accepted and gets the
    /// file stem as its id.
    pub fn from_file(path: &Path) -> Result<PatternPack> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: PackFile = serde_json::from_str(&raw).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(match parsed {
            PackFile::Full(p) => p,
            PackFile::Rules(rules) => PatternPack {
                id: path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "custom".into()),
                rules,
                relative_qualifiers: BTreeMap::new(),
                definition_heading: None,
            },
        })
    }

    /// Built-in name or a path to a pack file.
    pub fn resolve(name_or_path: &str) -> Result<PatternPack> {
        match name_or_path {
            "korean-statute" | "us-cfr" => PatternPack::builtin(name_or_path),
            path => PatternPack::from_file(Path::new(path)),
        }
    }

    pub fn compile(&self) -> Result<CompiledPack> {
        let mut rules = Vec::with_capacity(self.rules.len());
        for r in &self.rules {
            let re = Regex::new(&r.pattern)
                .map_err(|e| Error::Config(format!("pattern `{}`: {e}", r.pattern)))?;
            let target = r.target()?;
            let names: Vec<&str> = re.capture_names().flatten().collect();
            let needs = match &target {
                Target::Article(_) => Some("art"),
                Target::Form(_) => Some("num"),
                Target::HeadingAnchor => Some("term"),
                Target::Delegate(_) => None,
            };
            if let Some(n) = needs {
                if !names.contains(&n) {
                    return Err(Error::Config(format!("pattern `{}` lacks capture `{n}`", r.pattern)));
                }
            }
            let type_ok = match &target {
                Target::Delegate(_) => r.etype == EdgeType::DelegatesTo,
                Target::HeadingAnchor => r.etype == EdgeType::Defines,
                _ => r.etype != EdgeType::PartOf,
            };
            if !type_ok {
                return Err(Error::Config(format!(
                    "edge type {:?} does not fit target `{}`",
                    r.etype, r.target_template
                )));
            }
            rules.push((r.clone(), re, target));
        }
        let definition_heading = self
            .definition_heading
            .as_deref()
            .map(Regex::new)
            .transpose()
            .map_err(|e| Error::Config(format!("definition_heading: {e}")))?;
        Ok(CompiledPack {
            pack: self.clone(),
            rules,
            definition_heading,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_compile() {
        for name in ["korean-statute", "us-cfr"] {
            let pack = PatternPack::builtin(name).unwrap();
            pack.compile().unwrap();
        }
    }

    #[test]
    fn korean_pack_has_a_delegation_inventory() {
        let pack = PatternPack::builtin("korean-statute").unwrap();
        let delegations = pack
            .rules
            .iter()
            .filter(|r| r.etype == EdgeType::DelegatesTo)
            .count();
        assert!(delegations >= 5);
    }

    #[test]
    fn bare_rule_list_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mini.json");
        std::fs::write(
            &path,
            r#"[{"pattern":"제(?P<art>\\d+)조","etype":"REFERENCES","direction":"forward","target_template":"article:제{art}조"}]"#,
        )
        .unwrap();
        let pack = PatternPack::from_file(&path).unwrap();
        assert_eq!(pack.id, "mini");
        pack.compile().unwrap();
    }

    #[test]
    fn mismatched_capture_is_rejected() {
        let pack = PatternPack {
            id: "bad".into(),
            rules: vec![PatternRule {
                pattern: "제\\d+조".into(),
                etype: EdgeType::References,
                direction: Direction::Forward,
                target_template: "article:제{art}조".into(),
                scope: Scope::SameDocument,
                consume: false,
            }],
            relative_qualifiers: BTreeMap::new(),
            definition_heading: None,
        };
        assert!(pack.compile().is_err());
    }
}
