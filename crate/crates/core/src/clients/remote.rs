use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use tracing::{debug, warn};

use super::{DecodingParams, Embedder, EndpointConfig, Generator, Judge, Label, Message, OutputHint, Reranker, Transport};
use crate::error::{Error, Result};
use crate::templates;

/// Counting semaphore bounding in-flight requests.
pub struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a>(&'a Limiter);

impl Limiter {
    pub fn new(max: usize) -> Self {
        Limiter {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("limiter poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

struct Endpoint {
    config: EndpointConfig,
    transport: Arc<dyn Transport>,
    limiter: Limiter,
    backoff: Duration,
}

fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "[redacted]"),
        _ => text.to_string(),
    }
}

fn clip(s: &str) -> &str {
    match s.char_indices().nth(500) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl Endpoint {
    fn new(config: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
        let limiter = Limiter::new(config.concurrency_limit);
        Endpoint {
            config,
            transport,
            limiter,
            backoff: Duration::from_millis(500),
        }
    }

    fn api_key(&self) -> Result<Option<String>> {
        match &self.config.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| Error::Config(format!("environment variable `{var}` is not set"))),
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value> {
        let url = format!("{}/{}", self.config.base_url.trim_end_matches('/'), path);
        let key = self.api_key()?;
        let headers: Vec<(String, String)> = key
            .iter()
            .map(|k| ("authorization".to_string(), format!("Bearer {k}")))
            .collect();
        let payload = body.to_string();
        let timeout = Duration::from_secs_f64(self.config.timeout_s.max(0.001));
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            debug!(%url, attempt, body = %redact(clip(&payload), key.as_deref()), "request");
            let res = {
                let _permit = self.limiter.acquire();
                self.transport.post_json(&url, &headers, &payload, timeout)
            };
            match res {
                Ok(r) if (200..300).contains(&r.status) => {
                    debug!(%url, status = r.status, body = %redact(clip(&r.body), key.as_deref()), "response");
                    return serde_json::from_str(&r.body)
                        .map_err(|e| Error::Transport(format!("{url}: unreadable response body: {e}")));
                }
                Ok(r) if r.status == 429 || r.status >= 500 => {
                    last = format!("status {}", r.status);
                }
                Ok(r) => {
                    return Err(Error::Transport(format!(
                        "{url}: status {}: {}",
                        r.status,
                        redact(clip(&r.body), key.as_deref())
                    )));
                }
                Err(e) => last = redact(&e.to_string(), key.as_deref()),
            }
            if attempt < self.config.max_retries {
                let wait = self.backoff * 2u32.saturating_pow(attempt);
                warn!(%url, attempt, reason = %last, "retrying after {:?}", wait);
                std::thread::sleep(wait);
            }
        }
        Err(Error::Transport(format!(
            "{url}: gave up after {} attempts: {last}",
            self.config.max_retries + 1
        )))
    }

    fn chat(&self, messages: &[Message], extra: Value) -> Result<Value> {
        let mut body = json!({ "model": self.config.model, "messages": messages });
        if let (Value::Object(b), Value::Object(x)) = (&mut body, extra) {
            b.extend(x);
        }
        self.post("chat/completions", &body)
    }

    fn fingerprint(&self, role: &str) -> String {
        format!("{role}:{}@{}", self.config.model, self.config.base_url)
    }
}

fn content(resp: &Value) -> Result<String> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Transport("chat response has no message content".into()))
}

macro_rules! remote_role {
    ($name:ident) => {
        pub struct $name {
            endpoint: Endpoint,
        }

        impl $name {
            pub fn new(config: EndpointConfig, transport: Arc<dyn Transport>) -> Self {
                $name {
                    endpoint: Endpoint::new(config, transport),
                }
            }

            /// Base delay of the exponential backoff between retries.
            pub fn with_backoff(mut self, base: Duration) -> Self {
                self.endpoint.backoff = base;
                self
            }
        }
    };
}

remote_role!(RemoteEmbedder);
remote_role!(RemoteReranker);
remote_role!(RemoteJudge);

pub struct RemoteGenerator {
    endpoint: Endpoint,
    params: DecodingParams,
}

impl RemoteGenerator {
    pub fn new(config: EndpointConfig, params: DecodingParams, transport: Arc<dyn Transport>) -> Self {
        RemoteGenerator {
            endpoint: Endpoint::new(config, transport),
            params,
        }
    }

    pub fn with_backoff(mut self, base: Duration) -> Self {
        self.endpoint.backoff = base;
        self
    }
}

impl Embedder for RemoteEmbedder {
    fn fingerprint(&self) -> String {
        self.endpoint.fingerprint("embed")
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let resp = self
            .endpoint
            .post("embeddings", &json!({ "model": self.endpoint.config.model, "input": texts }))?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Transport("embedding response has no data".into()))?;
        let mut out = vec![Vec::new(); texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let v: Vec<f32> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Transport("embedding item has no vector".into()))?
                .iter()
                .map(|x| x.as_f64().unwrap_or(0.0) as f32)
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            let slot = out
                .get_mut(idx)
                .ok_or_else(|| Error::Transport(format!("embedding index {idx} out of range")))?;
            *slot = if norm > 0.0 { v.iter().map(|x| x / norm).collect() } else { v };
        }
        if out.iter().any(Vec::is_empty) {
            return Err(Error::Transport("embedding response is missing vectors".into()));
        }
        Ok(out)
    }
}

/// Probability of "yes" normalised over {yes, no}, read from the first
/// generated token's top log-probabilities.
fn yes_probability(resp: &Value) -> Option<f64> {
    let top = resp
        .pointer("/choices/0/logprobs/content/0/top_logprobs")
        .and_then(Value::as_array)?;
    let (mut yes, mut no) = (0.0f64, 0.0f64);
    for t in top {
        let tok = t.get("token").and_then(Value::as_str).unwrap_or("").trim().to_lowercase();
        let p = t.get("logprob").and_then(Value::as_f64).map_or(0.0, f64::exp);
        match tok.as_str() {
            "yes" => yes += p,
            "no" => no += p,
            _ => {}
        }
    }
    (yes + no > 0.0).then(|| yes / (yes + no))
}

impl Reranker for RemoteReranker {
    fn fingerprint(&self) -> String {
        self.endpoint.fingerprint("rerank")
    }

    fn score(&self, query: &str, doc: &str) -> Result<f64> {
        let messages = [
            Message::system(templates::RERANK_SYSTEM.trim_end()),
            Message::user(templates::render(
                templates::RERANK_USER.trim_end(),
                &[("query", query), ("doc", doc)],
            )),
        ];
        let resp = self.endpoint.chat(
            &messages,
            json!({ "max_tokens": 1, "temperature": 0.0, "logprobs": true, "top_logprobs": 20 }),
        )?;
        if let Some(p) = yes_probability(&resp) {
            return Ok(p.clamp(0.0, 1.0));
        }
        let text = content(&resp)?.trim().to_lowercase();
        if text.starts_with("yes") {
            Ok(1.0)
        } else if text.starts_with("no") {
            Ok(0.0)
        } else {
            Err(Error::Transport(format!("reranker returned neither logprobs nor yes/no: `{text}`")))
        }
    }
}

impl Generator for RemoteGenerator {
    fn fingerprint(&self) -> String {
        let p = &self.params;
        format!(
            "{}/t{}-p{}-k{}-s{}",
            self.endpoint.fingerprint("generate"),
            p.temperature,
            p.top_p,
            p.top_k,
            p.seed
        )
    }

    fn generate(&self, messages: &[Message], hint: &OutputHint) -> Result<String> {
        let p = &self.params;
        let mut extra = json!({
            "temperature": p.temperature,
            "top_p": p.top_p,
            "top_k": p.top_k,
            "seed": p.seed,
        });
        if matches!(hint, OutputHint::Anchor | OutputHint::Attribution { .. }) {
            extra["response_format"] = json!({ "type": "json_object" });
        }
        content(&self.endpoint.chat(messages, extra)?)
    }
}

const JUDGE_SYSTEM: &str = "Label how well the predicted claim matches the reference claim for the question. Reply with exactly one word: match, partial, or none.";

impl Judge for RemoteJudge {
    fn fingerprint(&self) -> String {
        self.endpoint.fingerprint("judge")
    }

    fn judge(&self, predicted: &str, reference: &str, question: &str) -> Result<Label> {
        let messages = [
            Message::system(JUDGE_SYSTEM),
            Message::user(format!(
                "Question: {question}\nReference claim: {reference}\nPredicted claim: {predicted}"
            )),
        ];
        let text = content(&self.endpoint.chat(&messages, json!({ "temperature": 0.0 }))?)?;
        let word = text
            .split(|c: char| !c.is_alphabetic())
            .find(|w| !w.is_empty())
            .unwrap_or("")
            .to_lowercase();
        match word.as_str() {
            "match" => Ok(Label::Match),
            "partial" => Ok(Label::Partial),
            "none" => Ok(Label::None),
            _ => Err(Error::Transport(format!("judge returned no label: `{text}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::HttpResponse;
    use super::*;
    use std::collections::VecDeque;

    /// url, headers, body
    type Seen = (String, Vec<(String, String)>, String);

    #[derive(Default)]
    struct Scripted {
        replies: Mutex<VecDeque<Result<HttpResponse>>>,
        seen: Mutex<Vec<Seen>>,
    }

    impl Scripted {
        fn new(replies: Vec<Result<HttpResponse>>) -> Arc<Self> {
            Arc::new(Scripted {
                replies: Mutex::new(replies.into()),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Scripted {
        fn post_json(&self, url: &str, headers: &[(String, String)], body: &str, _t: Duration) -> Result<HttpResponse> {
            self.seen
                .lock()
                .unwrap()
                .push((url.to_string(), headers.to_vec(), body.to_string()));
            self.replies
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or_else(|| Err(Error::Transport("script exhausted".into())))
        }
    }

    fn ok(body: Value) -> Result<HttpResponse> {
        Ok(HttpResponse {
            status: 200,
            body: body.to_string(),
        })
    }

    fn status(code: u16) -> Result<HttpResponse> {
        Ok(HttpResponse {
            status: code,
            body: "{}".into(),
        })
    }

    fn config() -> EndpointConfig {
        EndpointConfig {
            base_url: "http://mock/v1/".into(),
            model: "m".into(),
            api_key_env: None,
            timeout_s: 1.0,
            max_retries: 3,
            concurrency_limit: 2,
        }
    }

    fn chat_reply(text: &str) -> Value {
        json!({ "choices": [{ "message": { "content": text } }] })
    }

    #[test]
    fn generate_returns_content_with_default_params() {
        let t = Scripted::new(vec![ok(chat_reply("C"))]);
        let g = RemoteGenerator::new(config(), DecodingParams::default(), t.clone());
        assert_eq!(g.generate(&[Message::user("hi")], &OutputHint::Anchor).unwrap(), "C");
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].0, "http://mock/v1/chat/completions");
        let body: Value = serde_json::from_str(&seen[0].2).unwrap();
        assert_eq!(body["temperature"], 0.1);
        assert_eq!(body["top_p"], 0.95);
        assert_eq!(body["top_k"], 20);
        assert_eq!(body["seed"], 42);
    }

    #[test]
    fn retries_through_transient_failures() {
        let t = Scripted::new(vec![status(503), status(503), ok(chat_reply("done"))]);
        let g = RemoteGenerator::new(config(), DecodingParams::default(), t.clone()).with_backoff(Duration::from_millis(1));
        assert_eq!(g.generate(&[Message::user("x")], &OutputHint::Anchor).unwrap(), "done");
        assert_eq!(t.seen.lock().unwrap().len(), 3);
    }

    #[test]
    fn terminal_status_does_not_retry() {
        let t = Scripted::new(vec![status(400), ok(chat_reply("late"))]);
        let g = RemoteGenerator::new(config(), DecodingParams::default(), t.clone()).with_backoff(Duration::from_millis(1));
        assert!(matches!(g.generate(&[], &OutputHint::Anchor), Err(Error::Transport(_))));
        assert_eq!(t.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn retries_are_bounded() {
        let t = Scripted::new((0..10).map(|_| status(500)).collect());
        let g = RemoteGenerator::new(config(), DecodingParams::default(), t.clone()).with_backoff(Duration::from_millis(1));
        assert!(g.generate(&[], &OutputHint::Anchor).is_err());
        assert_eq!(t.seen.lock().unwrap().len(), 4);
    }

    #[test]
    fn reranker_normalises_logprobs() {
        let reply = json!({ "choices": [{
            "message": { "content": "yes" },
            "logprobs": { "content": [{ "token": "yes", "logprob": 0.9f64.ln(), "top_logprobs": [
                { "token": "yes", "logprob": 0.9f64.ln() },
                { "token": "no", "logprob": 0.1f64.ln() },
            ]}]}
        }]});
        let t = Scripted::new(vec![ok(reply)]);
        let r = RemoteReranker::new(config(), t.clone());
        assert!((r.score("q", "d").unwrap() - 0.9).abs() < 1e-9);
        let body: Value = serde_json::from_str(&t.seen.lock().unwrap()[0].2).unwrap();
        let user = body["messages"][1]["content"].as_str().unwrap();
        assert!(user.contains("<Query>: q\n"));
        assert!(user.contains("<Document>: d"));
        assert_eq!(body["logprobs"], true);
    }

    #[test]
    fn reranker_textual_fallback() {
        let t = Scripted::new(vec![ok(chat_reply("no")), ok(chat_reply("maybe"))]);
        let r = RemoteReranker::new(config(), t);
        assert_eq!(r.score("q", "d").unwrap(), 0.0);
        assert!(r.score("q", "d").is_err());
    }

    #[test]
    fn embeddings_follow_index_and_are_normalised() {
        let reply = json!({ "data": [
            { "index": 1, "embedding": [0.0, 2.0] },
            { "index": 0, "embedding": [3.0, 4.0] },
        ]});
        let e = RemoteEmbedder::new(config(), Scripted::new(vec![ok(reply)]));
        let v = e.embed(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v[0], vec![0.6, 0.8]);
        assert_eq!(v[1], vec![0.0, 1.0]);
    }

    #[test]
    fn api_key_comes_from_env_and_is_sent_as_bearer() {
        let var = "STATRAG_TEST_KEY_REMOTE";
        std::env::set_var(var, "sk-secret-value");
        let mut c = config();
        c.api_key_env = Some(var.into());
        let t = Scripted::new(vec![ok(chat_reply("match"))]);
        let j = RemoteJudge::new(c.clone(), t.clone());
        assert_eq!(j.judge("a", "b", "q").unwrap(), Label::Match);
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].1[0].1, "Bearer sk-secret-value");
        assert!(!seen[0].2.contains("sk-secret-value"));
        drop(seen);
        c.api_key_env = Some("STATRAG_TEST_KEY_UNSET".into());
        let j = RemoteJudge::new(c, Scripted::new(vec![]));
        assert!(matches!(j.judge("a", "b", "q"), Err(Error::Config(_))));
    }

    #[test]
    fn redaction_hides_secret() {
        assert_eq!(redact("key=abc123 ok", Some("abc123")), "key=[redacted] ok");
    }

    #[test]
    fn limiter_bounds_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let lim = Arc::new(Limiter::new(2));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (lim, live, peak) = (lim.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = lim.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
