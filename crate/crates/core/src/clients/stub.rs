use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{tokens, Embedder, Generator, Judge, Label, Message, OutputHint, Reranker, Role};
use crate::error::Result;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Character-trigram hashing embedder.
#[derive(Debug)]
pub struct StubEmbedder {
    dim: usize,
    calls: AtomicUsize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder::new(256)
    }
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        StubEmbedder {
            dim: dim.max(1),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn vector(&self, text: &str) -> Vec<f32> {
        let chars: Vec<char> = text
            .split_whitespace()
            .flat_map(|w| w.chars().chain(std::iter::once(' ')))
            .flat_map(char::to_lowercase)
            .collect();
        let mut v = vec![0f32; self.dim];
        if chars.len() < 3 {
            let s: String = chars.iter().collect();
            v[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
        } else {
            let mut buf = [0u8; 12];
            for w in chars.windows(3) {
                let mut n = 0;
                for c in w {
                    n += c.encode_utf8(&mut buf[n..]).len();
                }
                v[(fnv1a(&buf[..n]) % self.dim as u64) as usize] += 1.0;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        v
    }
}

impl Embedder for StubEmbedder {
    fn fingerprint(&self) -> String {
        format!("stub-char3-fnv1a/{}", self.dim)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        self.calls.fetch_add(texts.len(), Ordering::Relaxed);
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Fraction of query tokens that occur in the document.
#[derive(Debug, Default)]
pub struct StubReranker {
    calls: AtomicUsize,
}

impl StubReranker {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Reranker for StubReranker {
    fn fingerprint(&self) -> String {
        "stub-token-overlap/v1".into()
    }

    fn score(&self, query: &str, doc: &str) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let q = tokens(query);
        if q.is_empty() {
            return Ok(0.0);
        }
        let d = tokens(doc);
        Ok(q.intersection(&d).count() as f64 / q.len() as f64)
    }
}

/// Token overlap `|a ∩ b| / max(|a|, |b|)` mapped to a label.
#[derive(Debug)]
pub struct StubJudge {
    pub match_at: f64,
    pub partial_at: f64,
    calls: AtomicUsize,
}

impl Default for StubJudge {
    fn default() -> Self {
        StubJudge {
            match_at: 0.8,
            partial_at: 0.4,
            calls: AtomicUsize::new(0),
        }
    }
}

impl StubJudge {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl Judge for StubJudge {
    fn fingerprint(&self) -> String {
        format!("stub-judge/{}-{}", self.match_at, self.partial_at)
    }

    fn judge(&self, predicted: &str, reference: &str, _question: &str) -> Result<Label> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let a = tokens(predicted);
        let b = tokens(reference);
        let denom = a.len().max(b.len());
        if denom == 0 {
            return Ok(Label::None);
        }
        let r = a.intersection(&b).count() as f64 / denom as f64;
        Ok(if r >= self.match_at {
            Label::Match
        } else if r >= self.partial_at {
            Label::Partial
        } else {
            Label::None
        })
    }
}

/// A fixed response returned when `key` occurs anywhere in the prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canned {
    pub key: String,
    /// `anchor`, `attribution` or `free_form`; unset matches any call.
    #[serde(default)]
    pub kind: Option<String>,
    pub response: String,
}

/// Template responder. Canned responses win; otherwise a deterministic
/// heuristic answers from the prompt itself.
#[derive(Debug, Default)]
pub struct StubGenerator {
    canned: Vec<Canned>,
    calls: AtomicUsize,
}

fn magnitude_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\$?\d[\d,.]*\s*(?:천만\s*원|만\s*원|억\s*원|원|%|개월|년|명|dollars?|percent|days?)?\s*(?:이상|이하|초과|미만|or more|or less)?")
            .expect("magnitude")
    })
}

fn temporal_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:before|after|prior to|within)\s+\w+").expect("temporal"))
}

fn hint_kind(h: &OutputHint) -> &'static str {
    match h {
        OutputHint::Anchor => "anchor",
        OutputHint::Attribution { .. } => "attribution",
        OutputHint::FreeForm { .. } => "free_form",
    }
}

fn first_sentence(text: &str) -> String {
    let t = text.trim();
    let end = t
        .char_indices()
        .find(|(_, c)| matches!(c, '.' | '?' | '!' | '\n'))
        .map_or(t.len(), |(i, c)| i + c.len_utf8());
    t[..end].trim().to_string()
}

/// Passage text minus its heading line, when it has one.
fn body(passage: &str) -> &str {
    match passage.split_once('\n') {
        Some((_, rest)) if !rest.trim().is_empty() => rest,
        _ => passage,
    }
}

/// Body text that follows the header line naming `id` in a rendered prompt.
fn passage_after(prompt: &str, id: &str) -> Option<String> {
    prompt.lines().enumerate().find_map(|(i, line)| {
        let l = line.trim_end();
        let header = l == format!("[{id}]") || l.ends_with(&format!("] {id}"));
        header.then(|| {
            prompt
                .lines()
                .skip(i + 1)
                .take_while(|x| !x.trim().is_empty())
                .collect::<Vec<_>>()
                .join("\n")
        })
    })
}

impl StubGenerator {
    pub fn with_canned(canned: Vec<Canned>) -> Self {
        StubGenerator {
            canned,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn anchor(question: &str) -> String {
        let words: Vec<&str> = question.split_whitespace().take(4).collect();
        let topic = words.join(" ").trim_end_matches(['?', '.']).to_string();
        let magnitude = magnitude_re()
            .find(question)
            .map(|m| m.as_str().trim().to_string())
            .unwrap_or_else(|| "unspecified".into());
        let temporal = temporal_re()
            .find(question)
            .map(|m| m.as_str().to_string())
            .unwrap_or_else(|| "unspecified".into());
        serde_json::json!({
            "topic": if topic.is_empty() { question.to_string() } else { topic },
            "actor": "unspecified",
            "magnitude": magnitude,
            "temporal": temporal,
            "situational": "unspecified",
        })
        .to_string()
    }
}

impl Generator for StubGenerator {
    fn fingerprint(&self) -> String {
        format!("stub-generator/v1+{}", self.canned.len())
    }

    fn generate(&self, messages: &[Message], hint: &OutputHint) -> Result<String> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let prompt: String = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let kind = hint_kind(hint);
        if let Some(c) = self
            .canned
            .iter()
            .find(|c| c.kind.as_deref().is_none_or(|k| k == kind) && prompt.contains(&c.key))
        {
            return Ok(c.response.clone());
        }
        let user = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        Ok(match hint {
            OutputHint::Anchor => {
                let q = user.strip_prefix("Question:").unwrap_or(user).trim();
                StubGenerator::anchor(q)
            }
            OutputHint::Attribution { context_ids } => {
                let mut obj = serde_json::Map::new();
                let mut answer = String::new();
                if let Some(id) = context_ids.first() {
                    let claim = passage_after(user, id).map(|p| first_sentence(body(&p))).unwrap_or_default();
                    answer = format!("{claim} ({id})");
                    obj.insert(id.clone(), serde_json::json!([claim]));
                }
                obj.insert("answer".into(), serde_json::Value::String(answer));
                serde_json::Value::Object(obj).to_string()
            }
            OutputHint::FreeForm { context_ids, footer } => {
                let body = context_ids
                    .first()
                    .and_then(|id| passage_after(user, id))
                    .map(|p| first_sentence(body(&p)))
                    .unwrap_or_default();
                let cited = context_ids.iter().take(1).cloned().collect::<Vec<_>>().join(", ");
                format!("{body}\n{footer} {cited}")
            }
        })
    }
}
