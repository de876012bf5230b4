//! Model-backed segment metrics: embedding cosine similarity and
//! claim-level factual correctness judged by an LLM.

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, GatewayError, ModelClient};
use crate::prompts::PromptTemplate;
use crate::workers::parallel_map;

pub const SUPPORTED: &str = "SUPPORTED";
pub const NOT_SUPPORTED: &str = "NOT_SUPPORTED";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("embedding has zero norm")]
    DegenerateEmbedding,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("unparseable judge output ({detail}): {raw:?}")]
    Protocol { detail: String, raw: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, SemanticError> {
    if u.len() != v.len() {
        return Err(SemanticError::DimensionMismatch(u.len(), v.len()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>();
    let nv = v.iter().map(|b| b * b).sum::<f64>();
    if nu == 0.0 || nv == 0.0 {
        return Err(SemanticError::DegenerateEmbedding);
    }
    // one square root keeps u·u / √(|u|²|u|²) exactly 1
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine similarity of the embeddings of `a` and `b`.
pub fn semantic_similarity(a: &str, b: &str, embedder: &ModelClient) -> Result<f64, SemanticError> {
    if a.trim().is_empty() || b.trim().is_empty() {
        return Err(SemanticError::EmptyInput(
            "semantic similarity needs two texts",
        ));
    }
    let vectors = embedder.embed(&[a, b])?;
    cosine_similarity(&vectors[0].values, &vectors[1].values)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimVerdict {
    pub claim: String,
    pub supported: bool,
}

/// Which factual-correctness component is reported as the score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    F1,
    Precision,
    Recall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactualCorrectnessResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub candidate_claims: Vec<ClaimVerdict>,
    pub reference_claims: Vec<ClaimVerdict>,
}

impl FactualCorrectnessResult {
    /// Candidate verdicts give tp/fp; reference claims not covered by the
    /// candidate give fn.
    pub fn from_verdicts(candidate: Vec<ClaimVerdict>, reference: Vec<ClaimVerdict>) -> Self {
        let tp = candidate.iter().filter(|v| v.supported).count();
        let fp = candidate.len() - tp;
        let fn_ = reference.iter().filter(|v| !v.supported).count();
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        FactualCorrectnessResult {
            tp,
            fp,
            fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
            candidate_claims: candidate,
            reference_claims: reference,
        }
    }

    pub fn score(&self, mode: ScoreMode) -> f64 {
        match mode {
            ScoreMode::F1 => self.f1,
            ScoreMode::Precision => self.precision,
            ScoreMode::Recall => self.recall,
        }
    }
}

/// Parses a numbered or bulleted claim list. A lone `NONE` (or nothing)
/// is the empty list; any other non-list line is a protocol error.
pub fn parse_claim_list(output: &str) -> Result<Vec<String>, SemanticError> {
    let trimmed = output.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    let mut claims = Vec::new();
    for line in trimmed.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let item = strip_list_marker(line).ok_or_else(|| SemanticError::Protocol {
            detail: format!("line is not a list item: {line:?}"),
            raw: output.to_string(),
        })?;
        if !item.is_empty() {
            claims.push(item.to_string());
        }
    }
    Ok(claims)
}

fn strip_list_marker(line: &str) -> Option<&str> {
    for bullet in ["- ", "* ", "• "] {
        if let Some(rest) = line.strip_prefix(bullet) {
            return Some(rest.trim());
        }
    }
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    rest.strip_prefix('.')
        .or_else(|| rest.strip_prefix(')'))
        .filter(|r| r.is_empty() || r.starts_with(char::is_whitespace))
        .map(str::trim)
}

/// The verdict must be exactly one of the two tokens.
pub fn parse_verdict(output: &str) -> Result<bool, SemanticError> {
    match output.trim() {
        SUPPORTED => Ok(true),
        NOT_SUPPORTED => Ok(false),
        other => Err(SemanticError::Protocol {
            detail: "expected SUPPORTED or NOT_SUPPORTED".into(),
            raw: other.to_string(),
        }),
    }
}

/// Judge-backed claim decomposition and verification with a per-run memo
/// of `(claim, context)` verdicts.
pub struct Judge<'a> {
    client: &'a ModelClient,
    decompose: PromptTemplate,
    verify: PromptTemplate,
    memo: Mutex<HashMap<(String, String), bool>>,
}

impl<'a> Judge<'a> {
    pub fn new(client: &'a ModelClient) -> Self {
        Self::with_templates(
            client,
            PromptTemplate::decompose(),
            PromptTemplate::verify(),
        )
    }

    pub fn with_templates(
        client: &'a ModelClient,
        decompose: PromptTemplate,
        verify: PromptTemplate,
    ) -> Self {
        Judge {
            client,
            decompose,
            verify,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn client(&self) -> &'a ModelClient {
        self.client
    }

    pub fn decompose_claims(&self, text: &str) -> Result<Vec<String>, SemanticError> {
        if text.trim().is_empty() {
            return Err(SemanticError::EmptyInput("nothing to decompose"));
        }
        let req = ChatRequest::new(
            self.decompose.system.clone(),
            self.decompose.render(&[("text", text)]),
        );
        let out = self.client.chat_complete(&req)?;
        parse_claim_list(&out.content)
    }

    pub fn verify_claim(&self, claim: &str, context: &str) -> Result<bool, SemanticError> {
        if claim.trim().is_empty() || context.trim().is_empty() {
            return Err(SemanticError::EmptyInput(
                "claim and context must be non-empty",
            ));
        }
        let key = (claim.to_string(), context.to_string());
        if let Some(&hit) = self
            .memo
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&key)
        {
            return Ok(hit);
        }
        let req = ChatRequest::new(
            self.verify.system.clone(),
            self.verify
                .render(&[("claim", claim), ("context", context)]),
        );
        let verdict = parse_verdict(&self.client.chat_complete(&req)?.content)?;
        self.memo
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(key, verdict);
        Ok(verdict)
    }

    fn verdicts(
        &self,
        claims: Vec<String>,
        context: &str,
    ) -> Result<Vec<ClaimVerdict>, SemanticError> {
        let width = self.client.config().max_concurrency;
        parallel_map(&claims, width, |_, claim| self.verify_claim(claim, context))
            .into_iter()
            .zip(claims)
            .map(|(verdict, claim)| verdict.map(|supported| ClaimVerdict { claim, supported }))
            .collect()
    }

    /// Candidate claims checked against the reference (precision side),
    /// reference claims checked against the candidate (recall side).
    pub fn factual_correctness(
        &self,
        candidate: &str,
        reference: &str,
    ) -> Result<FactualCorrectnessResult, SemanticError> {
        let candidate_claims = self.decompose_claims(candidate)?;
        let reference_claims = self.decompose_claims(reference)?;
        let candidate_verdicts = self.verdicts(candidate_claims, reference)?;
        let reference_verdicts = self.verdicts(reference_claims, candidate)?;
        Ok(FactualCorrectnessResult::from_verdicts(
            candidate_verdicts,
            reference_verdicts,
        ))
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use serde_json::{json, Value};

    use super::*;
    use crate::gateway::mock::{MockMode, MockTransport};
    use crate::gateway::BackendConfig;

    fn reply(content: &str) -> Value {
        json!({"choices": [{"message": {"content": content}}]})
    }

    fn scripted(f: impl Fn(&str) -> String + Send + Sync + 'static) -> ModelClient {
        let mode = MockMode::custom(move |_, body| {
            let user = body["messages"][1]["content"].as_str().unwrap_or("");
            Ok(reply(&f(user)))
        });
        ModelClient::with_transport(
            BackendConfig::mock("scripted"),
            Arc::new(MockTransport::new(mode)),
        )
    }

    #[test]
    fn cosine_cases() {
        let r = cosine_similarity(&[1.0, 1.0, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!((r - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(SemanticError::DegenerateEmbedding)
        );
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn self_similarity_is_one() {
        let embedder = ModelClient::from_config(BackendConfig::mock("hash-embed")).unwrap();
        let s = semantic_similarity(
            "The Recipient shall not disclose.",
            "The Recipient shall not disclose.",
            &embedder,
        )
        .unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn claim_list_parsing() {
        assert_eq!(
            parse_claim_list("1. a\n2) b\n- c\n* d\n• e").unwrap(),
            vec!["a", "b", "c", "d", "e"]
        );
        assert!(parse_claim_list("NONE").unwrap().is_empty());
        assert!(parse_claim_list("  ").unwrap().is_empty());
        assert!(matches!(
            parse_claim_list("Here are the claims:\n1. a"),
            Err(SemanticError::Protocol { .. })
        ));
        assert!(parse_claim_list("2024 was a year").is_err());
    }

    #[test]
    fn verdict_parsing_is_strict() {
        assert!(parse_verdict(" SUPPORTED\n").unwrap());
        assert!(!parse_verdict("NOT_SUPPORTED").unwrap());
        assert!(parse_verdict("Supported").is_err());
        assert!(parse_verdict("SUPPORTED, because").is_err());
    }

    #[test]
    fn scripted_decomposition() {
        let client = scripted(|_| "1. claim one\n2. claim two\n3. claim three".into());
        let judge = Judge::new(&client);
        assert_eq!(judge.decompose_claims("some clause").unwrap().len(), 3);

        let client = scripted(|_| "NONE".into());
        assert!(Judge::new(&client)
            .decompose_claims("—")
            .unwrap()
            .is_empty());

        let client = scripted(|user| {
            assert!(user.contains("20. Governing Law."));
            "1. The agreement is governed by Delaware law.\n\
             2. The agreement is interpreted consistent with Section 409A."
                .into()
        });
        let clause = "20. Governing Law. All questions concerning the construction, validity \
                      and interpretation of this Agreement will be governed by the laws of the \
                      State of Delaware. It is the intent of the parties that the provisions of \
                      this Agreement shall be interpreted to be consistent with Section 409A.";
        assert_eq!(
            Judge::new(&client).decompose_claims(clause).unwrap().len(),
            2
        );
    }

    #[test]
    fn verbatim_judge_verdicts() {
        let client = ModelClient::from_config(BackendConfig::mock("verbatim-judge")).unwrap();
        let judge = Judge::new(&client);
        let context = "The Recipient shall keep the information confidential for five years.";
        assert!(judge
            .verify_claim("keep the information confidential", context)
            .unwrap());
        assert!(!judge
            .verify_claim("pay a penalty of ten dollars", context)
            .unwrap());
    }

    #[test]
    fn scripted_mixed_ledger() {
        let client = scripted(|user| {
            let claim = crate::gateway::mock::tagged(user, "claim").unwrap_or("");
            if claim == "c4" {
                NOT_SUPPORTED
            } else {
                SUPPORTED
            }
            .to_string()
        });
        let judge = Judge::new(&client);
        let verdicts: Vec<bool> = ["c1", "c2", "c3", "c4"]
            .iter()
            .map(|c| judge.verify_claim(c, "ctx").unwrap())
            .collect();
        assert_eq!(verdicts, vec![true, true, true, false]);
    }

    #[test]
    fn memo_avoids_repeat_calls() {
        let transport = Arc::new(MockTransport::new(MockMode::VerbatimJudge));
        let client = ModelClient::with_transport(BackendConfig::mock("memo"), transport.clone());
        let judge = Judge::new(&client);
        judge.verify_claim("a b", "a b c").unwrap();
        judge.verify_claim("a b", "a b c").unwrap();
        assert_eq!(transport.ledger().attempts, 1);
    }

    #[test]
    fn scripted_counts_give_three_quarters() {
        // candidate: 4 claims, 3 supported; reference: 5 claims, 4 covered
        let client = scripted(|user| {
            if let Some(text) = crate::gateway::mock::tagged(user, "text") {
                let n = if text == "CAND" { 4 } else { 5 };
                return (1..=n).map(|i| format!("{i}. {text}-{i}\n")).collect();
            }
            let claim = crate::gateway::mock::tagged(user, "claim").unwrap_or("");
            if claim == "CAND-4" || claim == "REF-5" {
                NOT_SUPPORTED
            } else {
                SUPPORTED
            }
            .into()
        });
        let judge = Judge::new(&client);
        let r = judge.factual_correctness("CAND", "REF").unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (3, 1, 1));
        assert_eq!(r.f1, 0.75);
        assert_eq!(r.candidate_claims.len(), 4);
        assert_eq!(r.reference_claims.len(), 5);
        assert_eq!(r.score(ScoreMode::Precision), 0.75);
    }

    #[test]
    fn identity_is_perfect_and_disjoint_is_zero() {
        let client = ModelClient::from_config(BackendConfig::mock("verbatim-judge")).unwrap();
        let judge = Judge::new(&client);
        let text = "The Recipient shall not disclose Confidential Information. This Agreement lasts two years.";
        let r = judge.factual_correctness(text, text).unwrap();
        assert_eq!(r.f1, 1.0);
        assert_eq!((r.fp, r.fn_), (0, 0));
        let r = judge
            .factual_correctness("Cats are mammals.", "The Recipient shall not disclose.")
            .unwrap();
        assert_eq!((r.precision, r.f1), (0.0, 0.0));
    }

    #[test]
    fn judge_errors_propagate() {
        let client = ModelClient::from_config(BackendConfig {
            max_retries: 0,
            ..BackendConfig::mock("always-fail")
        })
        .unwrap();
        let judge = Judge::new(&client);
        assert!(matches!(
            judge.factual_correctness("a.", "b."),
            Err(SemanticError::Gateway(_))
        ));
        let client = scripted(|_| "maybe".into());
        assert!(matches!(
            Judge::new(&client).verify_claim("a", "b"),
            Err(SemanticError::Protocol { .. })
        ));
    }
}
