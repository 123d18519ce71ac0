use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::clients::{Generator, Message, OutputHint};
use crate::error::{Error, Result};
use crate::jsonish;
use crate::templates::{self, ProfileTemplates};

pub const UNSPECIFIED: &str = "unspecified";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicAnchor {
    pub topic: String,
    pub actor: String,
    pub temporal: String,
    pub magnitude: String,
    pub situational: String,
}

#[derive(Deserialize)]
struct RawAnchor {
    topic: Option<String>,
    actor: Option<String>,
    temporal: Option<String>,
    magnitude: Option<String>,
    situational: Option<String>,
}

fn facet(v: Option<String>) -> String {
    v.map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| UNSPECIFIED.to_string())
}

impl TopicAnchor {
    /// Parses a model reply. `None` when no object with a non-empty topic
    /// can be recovered.
    pub fn parse(raw: &str) -> Option<TopicAnchor> {
        let r: RawAnchor = jsonish::first_object(raw)?;
        let topic = r.topic.map(|t| t.trim().to_string()).filter(|t| !t.is_empty())?;
        Some(TopicAnchor {
            topic,
            actor: facet(r.actor),
            temporal: facet(r.temporal),
            magnitude: facet(r.magnitude),
            situational: facet(r.situational),
        })
    }

    /// Anchor used when the model output stays unusable: the question cut
    /// to 15 characters (Korean) or 15 words (other languages).
    pub fn fallback(question: &str, language: &str) -> TopicAnchor {
        let q = question.trim();
        let topic = if language == "Korean" {
            q.chars().take(15).collect::<String>().trim().to_string()
        } else {
            q.split_whitespace().take(15).collect::<Vec<_>>().join(" ")
        };
        TopicAnchor {
            topic,
            actor: UNSPECIFIED.into(),
            temporal: UNSPECIFIED.into(),
            magnitude: UNSPECIFIED.into(),
            situational: UNSPECIFIED.into(),
        }
    }
}

pub fn anchor_messages(question: &str, profile: &ProfileTemplates) -> Vec<Message> {
    vec![
        Message::system(templates::render(
            templates::ANCHOR,
            &[("domain", profile.domain), ("language", profile.language)],
        )),
        Message::user(format!("Question: {question}")),
    ]
}

/// Asks the generator for the anchor, retrying once on an unparseable
/// reply before falling back.
pub fn extract_anchor(question: &str, generator: &dyn Generator, profile: &ProfileTemplates) -> Result<TopicAnchor> {
    if question.trim().is_empty() {
        return Err(Error::Data("empty question".into()));
    }
    let messages = anchor_messages(question, profile);
    for _ in 0..2 {
        let raw = generator.generate(&messages, &OutputHint::Anchor)?;
        if let Some(a) = TopicAnchor::parse(&raw) {
            return Ok(a);
        }
    }
    warn!("anchor output unparseable twice, using fallback");
    Ok(TopicAnchor::fallback(question, profile.language))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{Canned, StubGenerator};

    fn ko() -> ProfileTemplates {
        templates::profile("regops-ko").unwrap()
    }

    #[test]
    fn canned_anchor_is_read() {
        let q = "3천만원 이상 GPU를 구매할 때 사전승인이 필요한가요?";
        let g = StubGenerator::with_canned(vec![Canned {
            key: q.into(),
            kind: Some("anchor".into()),
            response: r#"{"topic": "장비 구매 사전승인", "actor": "unspecified", "magnitude": "3천만원 이상", "temporal": "구매 전", "situational": "unspecified"}"#.into(),
        }]);
        let a = extract_anchor(q, &g, &ko()).unwrap();
        assert_eq!(a.topic, "장비 구매 사전승인");
        assert_eq!(a.magnitude, "3천만원 이상");
        assert_eq!(a.temporal, "구매 전");
    }

    #[test]
    fn missing_facets_become_unspecified() {
        let a = TopicAnchor::parse(r#"{"topic": "연구수당"}"#).unwrap();
        for f in [&a.actor, &a.temporal, &a.magnitude, &a.situational] {
            assert_eq!(f, UNSPECIFIED);
        }
    }

    #[test]
    fn unparseable_twice_falls_back() {
        let g = StubGenerator::with_canned(vec![Canned {
            key: "Question".into(),
            kind: None,
            response: "I cannot help".into(),
        }]);
        let q = "연구개발비를 다른 용도로 사용할 수 있는지 알려주세요";
        let a = extract_anchor(q, &g, &ko()).unwrap();
        assert_eq!(g.calls(), 2);
        assert_eq!(a.topic.chars().count(), 15);
        assert_eq!(a.actor, UNSPECIFIED);
        let en = TopicAnchor::fallback(&"w ".repeat(30), "English");
        assert_eq!(en.topic.split_whitespace().count(), 15);
    }

    #[test]
    fn prompt_fills_domain() {
        let m = anchor_messages("q", &templates::profile("hipaa-en").unwrap());
        assert!(m[0].content.contains("for U.S. healthcare privacy regulations (HIPAA)."));
        assert!(m[0].content.contains("condition values in English."));
    }
}
