//! Per-rule attribution: prompt assembly, tolerant parsing of the model's
//! JSON, and the check that every claim key names a passage actually shown.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::clients::{Generator, Message, OutputHint};
use crate::corpus::{Corpus, NodeId};
use crate::error::{Error, Result};
use crate::jsonish;
use crate::retrieval::{TopicAnchor, UNSPECIFIED};
use crate::templates::{self, ProfileTemplates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaMode {
    #[default]
    PerRule,
    FreeForm,
}

impl FromStr for SchemaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_rule" => Ok(SchemaMode::PerRule),
            "free_form" => Ok(SchemaMode::FreeForm),
            other => Err(Error::Config(format!("unknown schema mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub node_id: NodeId,
    /// Authority type of the source document.
    pub role: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationContext {
    pub question: String,
    pub anchor: TopicAnchor,
    pub passages: Vec<Passage>,
    pub template_profile: String,
}

impl GenerationContext {
    pub fn new(question: &str, anchor: TopicAnchor, passages: Vec<Passage>, profile: &str) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &passages {
            if !seen.insert(&p.node_id) {
                return Err(Error::Data(format!("passage `{}` appears twice", p.node_id)));
            }
        }
        Ok(GenerationContext {
            question: question.to_string(),
            anchor,
            passages,
            template_profile: profile.to_string(),
        })
    }

    /// Context built from ranked article ids, in rank order.
    pub fn from_ranked(
        question: &str,
        anchor: TopicAnchor,
        ranked: &[NodeId],
        corpus: &Corpus,
        profile: &str,
    ) -> Result<Self> {
        let passages = ranked
            .iter()
            .map(|id| {
                let a = corpus.article(id).ok_or_else(|| Error::UnknownNode(id.to_string()))?;
                let role = corpus
                    .document(&a.doc_id)
                    .map_or("unknown", |d| d.authority_type.as_str());
                Ok(Passage {
                    node_id: id.clone(),
                    role: role.to_string(),
                    text: a.retrieval_text(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        GenerationContext::new(question, anchor, passages, profile)
    }

    pub fn context_ids(&self) -> Vec<String> {
        self.passages.iter().map(|p| p.node_id.to_string()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// No JSON object could be recovered.
    Parse,
    /// A rule key that names no context passage.
    UnknownKey,
    /// A claim value that was not an array of strings and was coerced.
    Coerced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AttributionOutput {
    pub rules: IndexMap<String, Vec<String>>,
    pub answer: String,
    #[serde(default)]
    pub hallucinated: Vec<String>,
    #[serde(default)]
    pub violations: Vec<Violation>,
    /// Set by strict validation when the output must be regenerated.
    #[serde(default)]
    pub rejected: bool,
}

impl AttributionOutput {
    pub fn parse_failed(&self) -> bool {
        self.violations.iter().any(|v| v.kind == ViolationKind::Parse)
    }
}

fn facet(v: &str) -> &str {
    if v.eq_ignore_ascii_case(UNSPECIFIED) { "all" } else { v }
}

fn profile_of(ctx: &GenerationContext) -> Result<ProfileTemplates> {
    templates::profile(&ctx.template_profile)
}

/// System and user messages for the per-rule schema.
pub fn assemble_prompt(ctx: &GenerationContext) -> Result<Vec<Message>> {
    let p = profile_of(ctx)?;
    let blocks: Vec<String> = ctx
        .passages
        .iter()
        .map(|x| format!("[{}]\n{}", x.node_id, x.text.trim_end()))
        .collect();
    let ctx_block = blocks.join("\n\n");
    let a = &ctx.anchor;
    let user = templates::render(
        p.user,
        &[
            ("ctx", &ctx_block),
            ("topic", &a.topic),
            ("actor", facet(&a.actor)),
            ("temporal", facet(&a.temporal)),
            ("magnitude", facet(&a.magnitude)),
            ("situational", facet(&a.situational)),
            ("q", &ctx.question),
        ],
    );
    Ok(vec![Message::system(p.system), Message::user(user)])
}

/// Messages for the schema-free variant that asks for a citation footer.
pub fn assemble_freeform(ctx: &GenerationContext) -> Result<Vec<Message>> {
    let p = profile_of(ctx)?;
    let passages: Vec<String> = ctx
        .passages
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let n = (i + 1).to_string();
            templates::render(
                templates::FREEFORM_PASSAGE,
                &[
                    ("i", &n),
                    ("role", &x.role),
                    ("node_id", x.node_id.as_str()),
                    ("text", x.text.trim_end()),
                ],
            )
            .trim_end()
            .to_string()
        })
        .collect();
    let user = templates::render(
        templates::FREEFORM_USER,
        &[
            ("question", &ctx.question),
            ("passages", &passages.join("\n\n")),
            ("citation_instruction", p.citation_instruction.trim_end()),
        ],
    );
    Ok(vec![Message::system(p.freeform_system), Message::user(user)])
}

fn claims_of(key: &str, v: Value, violations: &mut Vec<Violation>) -> Vec<String> {
    let coerced = |violations: &mut Vec<Violation>| {
        violations.push(Violation {
            kind: ViolationKind::Coerced,
            detail: format!("claims under `{key}` were not a string array"),
        })
    };
    match v {
        Value::Array(items) => {
            let mut bad = false;
            let out = items
                .into_iter()
                .filter_map(|x| match x {
                    Value::String(s) => Some(s),
                    Value::Null => {
                        bad = true;
                        None
                    }
                    other => {
                        bad = true;
                        Some(other.to_string())
                    }
                })
                .collect();
            if bad {
                coerced(violations);
            }
            out
        }
        Value::String(s) => {
            coerced(violations);
            vec![s]
        }
        Value::Null => {
            coerced(violations);
            Vec::new()
        }
        other => {
            coerced(violations);
            vec![other.to_string()]
        }
    }
}

/// Never fails: unusable text becomes an empty rule map with the raw text
/// as the answer and a parse violation.
pub fn parse_output(raw: &str) -> AttributionOutput {
    let Some(obj) = jsonish::first_object::<IndexMap<String, Value>>(raw) else {
        return AttributionOutput {
            answer: raw.trim().to_string(),
            violations: vec![Violation {
                kind: ViolationKind::Parse,
                detail: "no JSON object found in model output".into(),
            }],
            ..Default::default()
        };
    };
    let mut out = AttributionOutput::default();
    for (k, v) in obj {
        let key = k.trim().to_string();
        if key == "answer" {
            out.answer = match v {
                Value::String(s) => s,
                Value::Null => String::new(),
                other => other.to_string(),
            };
            continue;
        }
        let claims = claims_of(&key, v, &mut out.violations);
        out.rules.entry(key).or_default().extend(claims);
    }
    out
}

pub fn validate(mut out: AttributionOutput, context_ids: &BTreeSet<String>, mode: ValidationMode) -> AttributionOutput {
    let unknown: Vec<String> = out
        .rules
        .keys()
        .filter(|k| !context_ids.contains(*k))
        .cloned()
        .collect();
    for k in &unknown {
        out.violations.push(Violation {
            kind: ViolationKind::UnknownKey,
            detail: k.clone(),
        });
    }
    match mode {
        ValidationMode::Strict => out.rejected = !unknown.is_empty(),
        ValidationMode::Lenient => {
            for k in unknown {
                out.rules.shift_remove(&k);
                if !out.hallucinated.contains(&k) {
                    out.hallucinated.push(k);
                }
            }
        }
    }
    out
}

/// Splits a trailing `[참조] a, b` / `[Citations] a, b` line off `text`.
/// Returns the remaining body and the listed ids.
pub fn extract_footer(text: &str) -> (String, Vec<String>) {
    const MARKERS: [&str; 2] = ["[참조]", "[Citations]"];
    let lines: Vec<&str> = text.lines().collect();
    let hit = lines.iter().enumerate().rev().find_map(|(i, l)| {
        MARKERS
            .iter()
            .find_map(|m| l.find(m).map(|at| (i, &l[at + m.len()..])))
    });
    let Some((i, rest)) = hit else {
        return (text.trim().to_string(), Vec::new());
    };
    let ids = rest
        .trim_start_matches([':', '*', ' '])
        .split([',', '，'])
        .map(|s| s.trim().trim_matches(['*', '`', '"', '\'', '.']).trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let mut body: Vec<&str> = lines[..i].to_vec();
    body.extend(&lines[i + 1..]);
    (body.join("\n").trim().to_string(), ids)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub qid: String,
    pub answer: String,
    pub rules: IndexMap<String, Vec<String>>,
    /// Cited ids that name a context passage, in citation order.
    pub cited: Vec<String>,
    /// Cited ids that name no context passage.
    pub hallucinated: Vec<String>,
    pub violations: Vec<Violation>,
    pub raw: String,
    pub schema_mode: SchemaMode,
}

impl AnswerRecord {
    /// Everything the model cited, fabricated ids included.
    pub fn predicted_citations(&self) -> Vec<String> {
        self.cited.iter().chain(&self.hallucinated).cloned().collect()
    }

    /// Claim strings in emission order; free-form answers are split into
    /// sentences.
    pub fn claims(&self) -> Vec<String> {
        match self.schema_mode {
            SchemaMode::PerRule if !self.rules.is_empty() => self.rules.values().flatten().cloned().collect(),
            _ => split_sentences(&self.answer),
        }
    }
}

/// Sentence split on terminal punctuation and line breaks.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c == '\n' {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
            continue;
        }
        cur.push(c);
        if matches!(c, '.' | '?' | '!' | '。') {
            if !cur.trim().is_empty() {
                out.push(cur.trim().to_string());
            }
            cur.clear();
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn partition(ids: Vec<String>, context: &BTreeSet<String>) -> (Vec<String>, Vec<String>) {
    let mut cited = Vec::new();
    let mut hallucinated = Vec::new();
    for id in ids {
        let dst = if context.contains(&id) { &mut cited } else { &mut hallucinated };
        if !dst.contains(&id) {
            dst.push(id);
        }
    }
    (cited, hallucinated)
}

/// One generation pass for a query. Per-rule mode regenerates once when
/// the first reply cannot be parsed, then scores whatever text came back
/// as a free-form answer.
pub fn run_generation(
    qid: &str,
    ctx: &GenerationContext,
    generator: &dyn Generator,
    mode: SchemaMode,
) -> Result<AnswerRecord> {
    let profile = profile_of(ctx)?;
    let ids = ctx.context_ids();
    let context: BTreeSet<String> = ids.iter().cloned().collect();
    match mode {
        SchemaMode::PerRule => {
            let messages = assemble_prompt(ctx)?;
            let hint = OutputHint::Attribution { context_ids: ids };
            let mut raw = generator.generate(&messages, &hint)?;
            let mut parsed = parse_output(&raw);
            let mut violations = Vec::new();
            if parsed.parse_failed() {
                warn!(qid, "attribution output unparseable, regenerating once");
                violations.append(&mut parsed.violations);
                raw = generator.generate(&messages, &hint)?;
                parsed = parse_output(&raw);
            }
            if parsed.parse_failed() {
                violations.append(&mut parsed.violations);
                let (answer, footer) = extract_footer(&raw);
                let (cited, hallucinated) = partition(footer, &context);
                return Ok(AnswerRecord {
                    qid: qid.to_string(),
                    answer,
                    rules: IndexMap::new(),
                    cited,
                    hallucinated,
                    violations,
                    raw,
                    schema_mode: SchemaMode::FreeForm,
                });
            }
            let mut v = validate(parsed, &context, ValidationMode::Lenient);
            violations.append(&mut v.violations);
            Ok(AnswerRecord {
                qid: qid.to_string(),
                answer: v.answer,
                cited: v.rules.keys().cloned().collect(),
                rules: v.rules,
                hallucinated: v.hallucinated,
                violations,
                raw,
                schema_mode: SchemaMode::PerRule,
            })
        }
        SchemaMode::FreeForm => {
            let messages = assemble_freeform(ctx)?;
            let hint = OutputHint::FreeForm {
                context_ids: ids,
                footer: profile.footer.to_string(),
            };
            let raw = generator.generate(&messages, &hint)?;
            let (answer, footer) = extract_footer(&raw);
            let (cited, hallucinated) = partition(footer, &context);
            let violations = hallucinated
                .iter()
                .map(|k| Violation {
                    kind: ViolationKind::UnknownKey,
                    detail: k.clone(),
                })
                .collect();
            Ok(AnswerRecord {
                qid: qid.to_string(),
                answer,
                rules: IndexMap::new(),
                cited,
                hallucinated,
                violations,
                raw,
                schema_mode: SchemaMode::FreeForm,
            })
        }
    }
}
