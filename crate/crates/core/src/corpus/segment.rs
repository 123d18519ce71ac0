use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// One paragraph or item of an article.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvisionUnit {
    pub unit_label: String,
    pub text: String,
}

/// Which provision-start markers to recognise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerPack {
    /// Circled-number paragraphs (①..⑳) and line-leading `1.` items.
    #[default]
    Korean,
    /// Line-leading `(a)` paragraphs and `(1)` items.
    Latin,
}

impl MarkerPack {
    pub fn preamble_label(self) -> &'static str {
        match self {
            MarkerPack::Korean => "본문",
            MarkerPack::Latin => "chapeau",
        }
    }
}

/// Result of splitting an article body.
///
/// `separators` has one more entry than `units`; interleaving them
/// (`sep[0] unit[0] sep[1] ... unit[n-1] sep[n]`) reproduces the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvisionSplit {
    pub units: Vec<ProvisionUnit>,
    pub separators: Vec<String>,
}

impl ProvisionSplit {
    pub fn reconstruct(&self) -> String {
        let mut out = String::new();
        for (i, sep) in self.separators.iter().enumerate() {
            out.push_str(sep);
            if let Some(u) = self.units.get(i) {
                out.push_str(&u.text);
            }
        }
        out
    }
}

enum Marker {
    Para(String),
    Item(String),
}

struct Hit {
    start: usize,
    end: usize,
    marker: Marker,
}

fn korean_item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*(\d{1,2})\.[ \t]").expect("item marker"))
}

fn latin_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*\(([a-z]{1,3}|\d{1,3})\)").expect("latin marker"))
}

fn find_markers(raw: &str, pack: MarkerPack) -> Vec<Hit> {
    let mut hits = Vec::new();
    match pack {
        MarkerPack::Korean => {
            for (i, c) in raw.char_indices() {
                if ('\u{2460}'..='\u{2473}').contains(&c) {
                    let n = c as u32 - 0x2460 + 1;
                    hits.push(Hit {
                        start: i,
                        end: i + c.len_utf8(),
                        marker: Marker::Para(n.to_string()),
                    });
                }
            }
            for cap in korean_item_re().captures_iter(raw) {
                let m = cap.get(0).expect("whole match");
                hits.push(Hit {
                    start: m.start(),
                    end: m.end(),
                    marker: Marker::Item(cap[1].to_string()),
                });
            }
        }
        MarkerPack::Latin => {
            for cap in latin_re().captures_iter(raw) {
                let m = cap.get(0).expect("whole match");
                let tok = cap[1].to_string();
                let marker = if tok.chars().all(|c| c.is_ascii_digit()) {
                    Marker::Item(tok)
                } else {
                    Marker::Para(tok)
                };
                hits.push(Hit {
                    start: m.start(),
                    end: m.end(),
                    marker,
                });
            }
        }
    }
    hits.sort_by_key(|h| h.start);
    hits
}

fn trimmed_range(raw: &str, start: usize, end: usize) -> (usize, usize) {
    let slice = &raw[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead == slice.len() {
        (start, start)
    } else {
        (start + lead, end - trail)
    }
}

/// Splits an article body into provision units. Text before the first marker
/// becomes a preamble unit; markers whose content is empty are folded into
/// the surrounding separators.
pub fn segment_provisions(raw: &str, pack: MarkerPack) -> ProvisionSplit {
    let hits = find_markers(raw, pack);
    // (label, content start, content end)
    let mut pieces: Vec<(String, usize, usize)> = Vec::new();
    let first = hits.first().map_or(raw.len(), |h| h.start);
    pieces.push((pack.preamble_label().to_string(), 0, first));

    let mut current_para: Option<String> = None;
    let mut seen: HashSet<String> = HashSet::new();
    for (i, hit) in hits.iter().enumerate() {
        let end = hits.get(i + 1).map_or(raw.len(), |h| h.start);
        let base = match (&hit.marker, pack) {
            (Marker::Para(n), MarkerPack::Korean) => {
                current_para = Some(format!("제{n}항"));
                format!("제{n}항")
            }
            (Marker::Item(n), MarkerPack::Korean) => match &current_para {
                Some(p) => format!("{p}_제{n}호"),
                None => format!("제{n}호"),
            },
            (Marker::Para(a), MarkerPack::Latin) => {
                current_para = Some(format!("({a})"));
                format!("({a})")
            }
            (Marker::Item(n), MarkerPack::Latin) => match &current_para {
                Some(p) => format!("{p}({n})"),
                None => format!("({n})"),
            },
        };
        let mut label = base.clone();
        let mut k = 2;
        while seen.contains(&label) {
            label = format!("{base}의{k}");
            k += 1;
        }
        seen.insert(label.clone());
        pieces.push((label, hit.end, end));
    }

    let mut units = Vec::new();
    let mut separators = Vec::new();
    let mut cursor = 0;
    for (label, start, end) in pieces {
        let (ts, te) = trimmed_range(raw, start, end);
        if ts == te {
            continue;
        }
        separators.push(raw[cursor..ts].to_string());
        units.push(ProvisionUnit {
            unit_label: label,
            text: raw[ts..te].to_string(),
        });
        cursor = te;
    }
    separators.push(raw[cursor..].to_string());
    ProvisionSplit { units, separators }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(split: &ProvisionSplit) -> Vec<(&str, &str)> {
        split
            .units
            .iter()
            .map(|u| (u.unit_label.as_str(), u.text.as_str()))
            .collect()
    }

    #[test]
    fn two_circled_markers() {
        let s = segment_provisions("① A. ② B.", MarkerPack::Korean);
        assert_eq!(labels(&s), vec![("제1항", "A."), ("제2항", "B.")]);
        assert_eq!(s.reconstruct(), "① A. ② B.");
    }

    #[test]
    fn no_markers_gives_preamble() {
        let s = segment_provisions("No markers here.", MarkerPack::Korean);
        assert_eq!(labels(&s), vec![("본문", "No markers here.")]);
        let s = segment_provisions("No markers here.", MarkerPack::Latin);
        assert_eq!(labels(&s), vec![("chapeau", "No markers here.")]);
    }

    #[test]
    fn preamble_and_four_paragraphs() {
        let raw = "연구개발비는 다음과 같다.\n① 가. ② 나.\n③ 다. ④ 라.";
        let s = segment_provisions(raw, MarkerPack::Korean);
        assert_eq!(s.units.len(), 5);
        assert_eq!(s.units[0].unit_label, "본문");
        assert_eq!(s.reconstruct(), raw);
    }

    #[test]
    fn items_nest_under_paragraphs() {
        let raw = "① 다음 각 호의 경비\n1. 인건비\n2. 재료비\n② 기타";
        let s = segment_provisions(raw, MarkerPack::Korean);
        let got: Vec<&str> = s.units.iter().map(|u| u.unit_label.as_str()).collect();
        assert_eq!(got, vec!["제1항", "제1항_제1호", "제1항_제2호", "제2항"]);
        assert_eq!(s.reconstruct(), raw);
    }

    #[test]
    fn latin_markers() {
        let raw = "General rule.\n(a) Standard.\n(1) First.\n(b) Other.";
        let s = segment_provisions(raw, MarkerPack::Latin);
        let got: Vec<&str> = s.units.iter().map(|u| u.unit_label.as_str()).collect();
        assert_eq!(got, vec!["chapeau", "(a)", "(a)(1)", "(b)"]);
        assert_eq!(s.reconstruct(), raw);
    }

    #[test]
    fn empty_marker_is_folded() {
        let raw = "① ② B";
        let s = segment_provisions(raw, MarkerPack::Korean);
        assert_eq!(labels(&s), vec![("제2항", "B")]);
        assert_eq!(s.reconstruct(), raw);
    }

    #[test]
    fn labels_stay_distinct() {
        let s = segment_provisions("① a ① b", MarkerPack::Korean);
        let got: Vec<&str> = s.units.iter().map(|u| u.unit_label.as_str()).collect();
        assert_eq!(got, vec!["제1항", "제1항의2"]);
    }

    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            "[가-힣a-z ]{0,8}",
            Just("①".to_string()),
            Just("②".to_string()),
            Just("\n1. ".to_string()),
            Just("\n".to_string()),
            Just(" ".to_string()),
        ]
    }

    proptest! {
        #[test]
        fn split_is_lossless(parts in proptest::collection::vec(fragment(), 0..20)) {
            let raw: String = parts.concat();
            let s = segment_provisions(&raw, MarkerPack::Korean);
            prop_assert_eq!(s.separators.len(), s.units.len() + 1);
            prop_assert_eq!(s.reconstruct(), raw);
            let mut seen = HashSet::new();
            for u in &s.units {
                prop_assert!(!u.text.is_empty());
                prop_assert!(seen.insert(u.unit_label.clone()));
            }
        }
    }
}
