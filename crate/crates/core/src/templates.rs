//! Prompt template assets and the placeholder renderer.
//!
//! Placeholders are `{name}` with a lowercase identifier. Anything else in
//! braces (the JSON examples inside the templates) is left untouched.

use crate::error::{Error, Result};

pub const RERANK_SYSTEM: &str = include_str!("../assets/templates/rerank.system.txt");
pub const RERANK_USER: &str = include_str!("../assets/templates/rerank.user.txt");
pub const ANCHOR: &str = include_str!("../assets/templates/anchor.txt");
pub const FREEFORM_USER: &str = include_str!("../assets/templates/freeform.user.txt");
pub const FREEFORM_PASSAGE: &str = include_str!("../assets/templates/freeform.passage.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProfileTemplates {
    pub system: &'static str,
    pub user: &'static str,
    pub freeform_system: &'static str,
    pub citation_instruction: &'static str,
    /// `{domain}` and `{language}` values for the anchor prompt.
    pub domain: &'static str,
    pub language: &'static str,
    /// Footer marker the citation instruction asks for.
    pub footer: &'static str,
}

pub fn profile(name: &str) -> Result<ProfileTemplates> {
    match name {
        "regops-ko" => Ok(ProfileTemplates {
            system: include_str!("../assets/templates/regops-ko.system.txt"),
            user: include_str!("../assets/templates/regops-ko.user.txt"),
            freeform_system: include_str!("../assets/templates/regops-ko.freeform.system.txt"),
            citation_instruction: include_str!("../assets/templates/regops-ko.citation.txt"),
            domain: "Korean R&D funding regulations",
            language: "Korean",
            footer: "[참조]",
        }),
        "regops-en" => Ok(ProfileTemplates {
            system: include_str!("../assets/templates/regops-en.system.txt"),
            user: include_str!("../assets/templates/regops-en.user.txt"),
            freeform_system: include_str!("../assets/templates/regops-en.freeform.system.txt"),
            citation_instruction: include_str!("../assets/templates/regops-en.citation.txt"),
            domain: "Korean R&D funding regulations",
            language: "Korean",
            footer: "[참조]",
        }),
        "hipaa-en" => Ok(ProfileTemplates {
            system: include_str!("../assets/templates/hipaa-en.system.txt"),
            user: include_str!("../assets/templates/hipaa-en.user.txt"),
            freeform_system: include_str!("../assets/templates/hipaa-en.freeform.system.txt"),
            citation_instruction: include_str!("../assets/templates/hipaa-en.citation.txt"),
            domain: "U.S. healthcare privacy regulations (HIPAA)",
            language: "English",
            footer: "[Citations]",
        }),
        other => Err(Error::Config(format!("unknown template profile `{other}`"))),
    }
}

/// Substitutes `{key}` placeholders in one pass, so inserted values are
/// never re-scanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open + 1..];
        let name_len = tail
            .find(|c: char| !(c.is_ascii_lowercase() || c == '_'))
            .unwrap_or(tail.len());
        let closes = tail[name_len..].starts_with('}');
        match vars.iter().find(|(k, _)| *k == &tail[..name_len]) {
            Some((_, v)) if closes && name_len > 0 => {
                out.push_str(v);
                rest = &tail[name_len + 1..];
            }
            _ => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}
