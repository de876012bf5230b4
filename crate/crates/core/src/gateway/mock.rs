//! Deterministic in-process backends for offline runs and tests.
//!
//! Modes (the `<mode>` in `mock:<mode>`):
//!
//! | mode | capability | behavior |
//! |------|------------|----------|
//! | `echo-segment` | chat | wraps each blank-line-separated paragraph of the `<document>` in clause delimiters |
//! | `noisy-segment` | chat | `echo-segment` plus chatter before, between and after the blocks |
//! | `no-delimiters` | chat | answers with prose and no clause blocks |
//! | `fail-twice` | chat | 503 on the first two attempts of every request, then `echo-segment` |
//! | `always-fail` | any | 503 on every attempt |
//! | `verbatim-judge` | chat | splits `<text>` into sentence claims; marks a `<claim>` SUPPORTED iff its tokens occur contiguously in `<context>` |
//! | `hash-embed` | embeddings | feature-hashed bag of tokens |
//! | `keyword` | classify | 0.95 for labels whose keywords occur, 0.05 otherwise |
//! | `oracle` | classify | 0.99 for the annotated labels of an identical reference clause, 0.01 otherwise |
//! | `constant:<p>` | classify | every probability equals `p` |
//! | `malformed` | classify | 13 probabilities |
//!
//! Any request whose body contains [`FAIL_SENTINEL`] fails with 503 in every
//! mode, which lets a fixture plant one permanently failing document.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{GatewayError, Transport, TransportFailure, CHAT_PATH, CLASSIFY_PATH, EMBED_PATH};
use crate::corpus::{ClauseLabel, Document, NUM_LABELS};
use crate::metrics::tokenize;

pub const FAIL_SENTINEL: &str = "MOCK_ALWAYS_FAIL";
pub const HASH_EMBED_DIM: usize = 256;

type Handler = dyn Fn(&str, &Value) -> Result<Value, TransportFailure> + Send + Sync;

#[derive(Clone)]
pub enum MockMode {
    EchoSegment,
    NoisySegment,
    NoDelimiters,
    FailTwice,
    AlwaysFail,
    VerbatimJudge,
    HashEmbed,
    Keyword,
    Oracle(Arc<HashMap<String, Vec<ClauseLabel>>>),
    Constant(f64),
    Malformed,
    Custom(Arc<Handler>),
}

impl std::fmt::Debug for MockMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            MockMode::EchoSegment => "echo-segment",
            MockMode::NoisySegment => "noisy-segment",
            MockMode::NoDelimiters => "no-delimiters",
            MockMode::FailTwice => "fail-twice",
            MockMode::AlwaysFail => "always-fail",
            MockMode::VerbatimJudge => "verbatim-judge",
            MockMode::HashEmbed => "hash-embed",
            MockMode::Keyword => "keyword",
            MockMode::Oracle(_) => "oracle",
            MockMode::Constant(_) => "constant",
            MockMode::Malformed => "malformed",
            MockMode::Custom(_) => "custom",
        };
        f.write_str(name)
    }
}

impl MockMode {
    pub fn parse(mode: &str, references: &[Document]) -> Result<Self, GatewayError> {
        let mode = match mode {
            "echo-segment" => MockMode::EchoSegment,
            "noisy-segment" => MockMode::NoisySegment,
            "no-delimiters" => MockMode::NoDelimiters,
            "fail-twice" => MockMode::FailTwice,
            "always-fail" => MockMode::AlwaysFail,
            "verbatim-judge" => MockMode::VerbatimJudge,
            "hash-embed" => MockMode::HashEmbed,
            "keyword" => MockMode::Keyword,
            "malformed" => MockMode::Malformed,
            "oracle" => MockMode::oracle(references),
            other => match other.strip_prefix("constant:").map(str::parse::<f64>) {
                Some(Ok(p)) if (0.0..=1.0).contains(&p) => MockMode::Constant(p),
                _ => {
                    return Err(GatewayError::InvalidConfig(format!(
                        "unknown mock mode {other:?}"
                    )))
                }
            },
        };
        Ok(mode)
    }

    /// Classifier that knows the annotated labels of `references`.
    pub fn oracle(references: &[Document]) -> Self {
        let table = references
            .iter()
            .flat_map(|d| &d.clauses)
            .map(|c| (normalize(c.text()), c.labels.iter().copied().collect()))
            .collect();
        MockMode::Oracle(Arc::new(table))
    }

    pub fn custom(
        handler: impl Fn(&str, &Value) -> Result<Value, TransportFailure> + Send + Sync + 'static,
    ) -> Self {
        MockMode::Custom(Arc::new(handler))
    }
}

/// Per-transport accounting of what the mock saw.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockLedger {
    pub attempts: u64,
    pub attempts_by_request: BTreeMap<String, u32>,
    /// Successful responses per request id; never exceeds 1.
    pub delivered: BTreeMap<String, u32>,
    pub in_flight: usize,
    pub high_water: usize,
}

pub struct MockTransport {
    mode: MockMode,
    latency: Option<Duration>,
    ledger: Mutex<MockLedger>,
}

impl MockTransport {
    pub fn new(mode: MockMode) -> Self {
        MockTransport {
            mode,
            latency: None,
            ledger: Mutex::new(MockLedger::default()),
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn ledger(&self) -> MockLedger {
        self.ledger
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    fn respond(&self, path: &str, body: &Value, attempt: u32) -> Result<Value, TransportFailure> {
        if body.to_string().contains(FAIL_SENTINEL) {
            return Err(unavailable());
        }
        match &self.mode {
            MockMode::AlwaysFail => Err(unavailable()),
            MockMode::FailTwice if attempt <= 2 => Err(unavailable()),
            MockMode::Custom(handler) => handler(path, body),
            mode => match path {
                CHAT_PATH => chat(mode, body),
                EMBED_PATH => embeddings(mode, body),
                CLASSIFY_PATH => classify(mode, body),
                _ => Err(not_found(path)),
            },
        }
    }
}

impl Transport for MockTransport {
    fn post(&self, path: &str, body: &Value, request_id: &str) -> Result<Value, TransportFailure> {
        let attempt = {
            let mut ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
            ledger.attempts += 1;
            ledger.in_flight += 1;
            ledger.high_water = ledger.high_water.max(ledger.in_flight);
            let n = ledger
                .attempts_by_request
                .entry(request_id.to_string())
                .or_insert(0);
            *n += 1;
            *n
        };
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let result = self.respond(path, body, attempt);
        let mut ledger = self.ledger.lock().unwrap_or_else(|e| e.into_inner());
        ledger.in_flight -= 1;
        if result.is_ok() {
            *ledger.delivered.entry(request_id.to_string()).or_insert(0) += 1;
        }
        result
    }
}

fn unavailable() -> TransportFailure {
    TransportFailure::Status {
        code: 503,
        body: "mock backend unavailable".into(),
    }
}

fn not_found(path: &str) -> TransportFailure {
    TransportFailure::Status {
        code: 404,
        body: format!("mock mode does not serve {path}"),
    }
}

fn bad_request(detail: &str) -> TransportFailure {
    TransportFailure::Status {
        code: 400,
        body: detail.to_string(),
    }
}

fn normalize(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Content between `<tag>` and `</tag>`, trimmed.
pub fn tagged<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text.find(&open)? + open.len();
    let end = start + text[start..].find(&close)?;
    Some(text[start..end].trim())
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        out.push(current.join("\n").trim().to_string());
    }
    out
}

/// Sentence-level claims: split after `.`, `!`, `?` or `;` followed by
/// whitespace or the end of text.
pub fn sentence_claims(text: &str) -> Vec<String> {
    let mut claims = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in chars.iter().enumerate() {
        let boundary = matches!(c, '.' | '!' | '?' | ';')
            && chars
                .get(k + 1)
                .is_none_or(|&(_, next)| next.is_whitespace());
        if boundary {
            let end = i + c.len_utf8();
            push_claim(&mut claims, &text[start..end]);
            start = end;
        }
    }
    push_claim(&mut claims, &text[start..]);
    claims
}

fn push_claim(claims: &mut Vec<String>, piece: &str) {
    let piece = piece.split_whitespace().collect::<Vec<_>>().join(" ");
    if !tokenize(&piece).is_empty() {
        claims.push(piece);
    }
}

fn completion(content: String, body: &Value) -> Value {
    let prompt_tokens: usize = body
        .get("messages")
        .and_then(Value::as_array)
        .map(|msgs| {
            msgs.iter()
                .filter_map(|m| m.get("content").and_then(Value::as_str))
                .map(|c| c.split_whitespace().count())
                .sum()
        })
        .unwrap_or(0);
    let completion_tokens = content.split_whitespace().count();
    json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens},
    })
}

fn user_content(body: &Value) -> Result<&str, TransportFailure> {
    body.get("messages")
        .and_then(Value::as_array)
        .and_then(|msgs| {
            msgs.iter()
                .rev()
                .find(|m| m.get("role").and_then(Value::as_str) == Some("user"))
        })
        .and_then(|m| m.get("content"))
        .and_then(Value::as_str)
        .ok_or_else(|| bad_request("no user message"))
}

fn echo_blocks(document: &str) -> String {
    paragraphs(document)
        .iter()
        .map(|p| format!("[INIT_CLAUSE]\n{p}\n[END_CLAUSE]\n"))
        .collect()
}

fn chat(mode: &MockMode, body: &Value) -> Result<Value, TransportFailure> {
    let user = user_content(body)?;
    let document = tagged(user, "document").unwrap_or(user);
    let content = match mode {
        MockMode::EchoSegment | MockMode::FailTwice => echo_blocks(document),
        MockMode::NoisySegment => {
            let blocks: Vec<String> = paragraphs(document)
                .iter()
                .map(|p| format!("[INIT_CLAUSE]\n{p}\n[END_CLAUSE]"))
                .collect();
            format!(
                "Here is the segmented agreement:\n\n{}\n\nLet me know if anything needs adjusting.",
                blocks.join("\n(next clause)\n")
            )
        }
        MockMode::NoDelimiters => "I could not identify any clauses in this text.".to_string(),
        MockMode::VerbatimJudge => judge(user)?,
        _ => return Err(not_found(CHAT_PATH)),
    };
    Ok(completion(content, body))
}

fn judge(user: &str) -> Result<String, TransportFailure> {
    if let (Some(claim), Some(context)) = (tagged(user, "claim"), tagged(user, "context")) {
        let claim = format!(" {} ", normalize(claim));
        let context = format!(" {} ", normalize(context));
        let supported = claim.trim().is_empty() || context.contains(&claim);
        return Ok(if supported {
            "SUPPORTED"
        } else {
            "NOT_SUPPORTED"
        }
        .to_string());
    }
    if let Some(text) = tagged(user, "text") {
        let claims = sentence_claims(text);
        if claims.is_empty() {
            return Ok("NONE".to_string());
        }
        return Ok(claims
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {c}", i + 1))
            .collect::<Vec<_>>()
            .join("\n"));
    }
    Err(bad_request(
        "judge prompt has neither <claim>/<context> nor <text>",
    ))
}

/// FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn hash_embedding(text: &str) -> Vec<f64> {
    let mut v = vec![0.0; HASH_EMBED_DIM];
    for token in tokenize(text) {
        let h = fnv1a(token.as_bytes());
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        v[(h % HASH_EMBED_DIM as u64) as usize] += sign;
    }
    v
}

fn embeddings(mode: &MockMode, body: &Value) -> Result<Value, TransportFailure> {
    if !matches!(mode, MockMode::HashEmbed) {
        return Err(not_found(EMBED_PATH));
    }
    let inputs = body
        .get("input")
        .and_then(Value::as_array)
        .ok_or_else(|| bad_request("input must be an array"))?;
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| json!({"index": i, "embedding": hash_embedding(t.as_str().unwrap_or(""))}))
        .collect();
    Ok(json!({"object": "list", "data": data}))
}

const KEYWORDS: [&[&str]; NUM_LABELS] = [
    &["by and between", "hereinafter referred", "the parties"],
    &["purpose"],
    &["mutual", "unilateral", "bilateral", "one way"],
    &["confidential information means", "shall mean", "definition"],
    &[
        "shall not disclose",
        "keep confidential",
        "hold in confidence",
        "in strict confidence",
    ],
    &["court order", "required by law", "need to know"],
    &[
        "publicly available",
        "public domain",
        "independently developed",
    ],
    &["damages", "injunctive relief", "liable", "liability"],
    &["compete", "competition", "competing"],
    &["term", "terminate", "termination"],
    &["intellectual property", "license", "patent", "copyright"],
    &["employee", "employees", "solicit", "hire"],
    &["governing law", "governed by", "jurisdiction"],
    &[
        "entire agreement",
        "counterparts",
        "notices",
        "assign",
        "amendment",
    ],
];

/// Label probabilities from keyword hits on token boundaries.
pub fn keyword_probabilities(text: &str) -> Vec<f64> {
    let haystack = format!(" {} ", normalize(text));
    KEYWORDS
        .iter()
        .map(|words| {
            let hit = words
                .iter()
                .any(|w| haystack.contains(&format!(" {} ", normalize(w))));
            if hit {
                0.95
            } else {
                0.05
            }
        })
        .collect()
}

fn classify(mode: &MockMode, body: &Value) -> Result<Value, TransportFailure> {
    let text = body
        .get("text")
        .and_then(Value::as_str)
        .filter(|t| !t.trim().is_empty())
        .ok_or_else(|| bad_request("text must be a non-empty string"))?;
    let probabilities = match mode {
        MockMode::Keyword => keyword_probabilities(text),
        MockMode::Oracle(table) => {
            let mut p = vec![0.01; NUM_LABELS];
            if let Some(labels) = table.get(&normalize(text)) {
                for l in labels {
                    p[l.index()] = 0.99;
                }
            }
            p
        }
        MockMode::Constant(value) => vec![*value; NUM_LABELS],
        MockMode::Malformed => vec![0.5; NUM_LABELS - 1],
        _ => return Err(not_found(CLASSIFY_PATH)),
    };
    Ok(json!({ "probabilities": probabilities }))
}
