use serde::{Deserialize, Serialize};

use super::anchor::{TopicAnchor, UNSPECIFIED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Narrow,
    Mid,
    Wide,
}

impl View {
    pub const ALL: [View; 3] = [View::Narrow, View::Mid, View::Wide];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Narrow => "narrow",
            View::Mid => "mid",
            View::Wide => "wide",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryViews {
    pub narrow: String,
    pub mid: String,
    pub wide: String,
}

impl QueryViews {
    pub fn get(&self, v: View) -> &str {
        match v {
            View::Narrow => &self.narrow,
            View::Mid => &self.mid,
            View::Wide => &self.wide,
        }
    }
}

fn conditions(a: &TopicAnchor) -> String {
    let actor = if a.actor.eq_ignore_ascii_case(UNSPECIFIED) { "all" } else { a.actor.as_str() };
    format!(
        "Conditions: [ACTOR] {actor}, [TEMPORAL] {}, [MAGNITUDE] {}, [SITUATIONAL] {}",
        a.temporal, a.magnitude, a.situational
    )
}

pub fn render_views(question: &str, anchor: &TopicAnchor) -> QueryViews {
    let cond = conditions(anchor);
    QueryViews {
        narrow: question.to_string(),
        mid: format!("[TOPIC] {}\n[Q] {question}\n{cond}", anchor.topic),
        wide: format!("[TOPIC] {}\n{cond}", anchor.topic),
    }
}
