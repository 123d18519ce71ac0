//! Recovering a JSON object from model text.

/// Removes a surrounding Markdown code fence, if any.
pub(crate) fn strip_fences(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = rest.split_once('\n').map_or("", |(_, b)| b);
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

/// Byte ranges of top-level balanced `{...}` spans, string-literal aware.
fn balanced_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text.char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' if depth > 0 => in_str = true,
            '{' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            '}' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    spans.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    spans
}

/// First top-level object in `raw` that parses, decoded as `T`.
pub(crate) fn first_object<T: serde::de::DeserializeOwned>(raw: &str) -> Option<T> {
    let text = strip_fences(raw);
    balanced_spans(text)
        .into_iter()
        .find_map(|(s, e)| serde_json::from_str::<T>(&text[s..e]).ok())
}
