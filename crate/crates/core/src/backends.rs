//! The mask-scorer contract between prompts and path scoring.
//!
//! A backend receives a rendered prompt with its mask spans and candidate
//! surfaces and returns, per mask role, a probability vector aligned with
//! the candidate list. Two backends are provided: a table-driven mock and an
//! HTTP client speaking the versioned JSON protocol
//!
//! ```text
//! POST {endpoint}/score
//! {"v":1,"prompt":..,"mask_spans":{role:[start,end]},"candidates":{role:[..]},"soft_tokens":n}
//! -> {"v":1,"probs":{role:[..]}}
//! ```

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mask::MaskRole;
use crate::prompting::RenderedPrompt;
use crate::scoring::{check_distribution, MaskDistributions, DISTRIBUTION_TOLERANCE};

pub const PROTOCOL_VERSION: u64 = 1;
/// Responses whose vectors sum within this of 1 are renormalized and accepted.
pub const RESPONSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendErrorKind {
    Timeout,
    Transport,
    Http,
    Malformed,
    InvalidDistribution,
    Contract,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend did not answer after {attempts} attempts: {last}")]
    Timeout { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed backend payload: {0}")]
    Malformed(String),
    #[error("invalid distribution for {role}: {detail}")]
    InvalidDistribution { role: MaskRole, detail: String },
    #[error("no distribution for mask role {0}")]
    MissingRole(MaskRole),
    #[error("distribution for {role} has {got} entries for {expected} candidates")]
    CandidateCount {
        role: MaskRole,
        got: usize,
        expected: usize,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendErrorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendErrorKind::Timeout => "timeout",
            BackendErrorKind::Transport => "transport",
            BackendErrorKind::Http => "http",
            BackendErrorKind::Malformed => "malformed",
            BackendErrorKind::InvalidDistribution => "invalid_distribution",
            BackendErrorKind::Contract => "contract",
        }
    }
}

impl BackendError {
    pub fn kind(&self) -> BackendErrorKind {
        match self {
            BackendError::Timeout { .. } => BackendErrorKind::Timeout,
            BackendError::Transport(_) => BackendErrorKind::Transport,
            BackendError::Http { .. } => BackendErrorKind::Http,
            BackendError::Malformed(_) => BackendErrorKind::Malformed,
            BackendError::InvalidDistribution { .. } => BackendErrorKind::InvalidDistribution,
            BackendError::MissingRole(_)
            | BackendError::CandidateCount { .. }
            | BackendError::InvalidRequest(_) => BackendErrorKind::Contract,
        }
    }
}

/// Lowercase hex SHA-256 of the prompt text.
pub fn prompt_digest(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    /// Instance id; used by the mock table, not sent on the wire.
    #[serde(skip)]
    pub id: Option<String>,
    pub prompt: String,
    pub mask_spans: BTreeMap<MaskRole, [usize; 2]>,
    pub candidates: BTreeMap<MaskRole, Vec<String>>,
    pub soft_tokens: usize,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    v: u64,
    prompt: &'a str,
    mask_spans: &'a BTreeMap<MaskRole, [usize; 2]>,
    candidates: &'a BTreeMap<MaskRole, Vec<String>>,
    soft_tokens: usize,
}

#[derive(Deserialize)]
struct WireResponse {
    v: u64,
    probs: BTreeMap<MaskRole, Vec<f64>>,
}

impl ScoreRequest {
    pub fn from_rendered(id: Option<String>, r: &RenderedPrompt) -> Self {
        Self {
            id,
            prompt: r.text.clone(),
            mask_spans: r.mask_spans.clone(),
            candidates: r.candidate_sets.clone(),
            soft_tokens: r.soft_token_count,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.candidates.is_empty() {
            return Err(BackendError::InvalidRequest("no mask roles".into()));
        }
        if let Some((role, _)) = self.candidates.iter().find(|(_, c)| c.is_empty()) {
            return Err(BackendError::InvalidRequest(format!("empty candidate set for {role}")));
        }
        if !self.mask_spans.keys().eq(self.candidates.keys()) {
            return Err(BackendError::InvalidRequest(
                "mask spans and candidate sets name different roles".into(),
            ));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        prompt_digest(&self.prompt)
    }

    /// The request body of the wire protocol.
    pub fn to_wire_json(&self) -> String {
        serde_json::to_string(&WireRequest {
            v: PROTOCOL_VERSION,
            prompt: &self.prompt,
            mask_spans: &self.mask_spans,
            candidates: &self.candidates,
            soft_tokens: self.soft_tokens,
        })
        .expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub probs: BTreeMap<MaskRole, Vec<f64>>,
}

impl ScoreResponse {
    pub fn into_distributions(self) -> MaskDistributions {
        MaskDistributions::new(self.probs).expect("validated responses are distributions")
    }
}

/// Check a backend answer against the request: every requested role present,
/// aligned with its candidates, non-negative, summing to 1 within
/// [`RESPONSE_TOLERANCE`]. Accepted vectors are renormalized.
pub fn validate_response(
    req: &ScoreRequest,
    mut probs: BTreeMap<MaskRole, Vec<f64>>,
) -> Result<ScoreResponse, BackendError> {
    let mut out = BTreeMap::new();
    for (role, cands) in &req.candidates {
        let mut v = probs.remove(role).ok_or(BackendError::MissingRole(*role))?;
        if v.len() != cands.len() {
            return Err(BackendError::CandidateCount {
                role: *role,
                got: v.len(),
                expected: cands.len(),
            });
        }
        check_distribution(&v, RESPONSE_TOLERANCE)
            .map_err(|detail| BackendError::InvalidDistribution { role: *role, detail })?;
        let sum: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= sum);
        out.insert(*role, v);
    }
    Ok(ScoreResponse { probs: out })
}

/// Anything that can turn a prompt into per-mask candidate distributions.
pub trait MaskScorer: Send + Sync {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError>;

    /// Upper bound on concurrent `score` calls issued by [`batch_score`].
    fn concurrency(&self) -> usize {
        1
    }
}

/// Default and per-prompt distributions for the mock backend.
///
/// Override keys are matched against the request's instance id first, then
/// against the prompt digest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTable {
    #[serde(default)]
    pub defaults: BTreeMap<MaskRole, Vec<f64>>,
    #[serde(default)]
    pub overrides: BTreeMap<String, BTreeMap<MaskRole, Vec<f64>>>,
}

impl MockTable {
    pub fn validate(&self) -> Result<(), BackendError> {
        let all = std::iter::once(&self.defaults).chain(self.overrides.values());
        for map in all {
            for (role, v) in map {
                check_distribution(v, DISTRIBUTION_TOLERANCE)
                    .map_err(|detail| BackendError::InvalidDistribution { role: *role, detail })?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let t: Self = serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

pub fn mock_score(table: &MockTable, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
    req.validate()?;
    let over = req
        .id
        .as_ref()
        .and_then(|id| table.overrides.get(id))
        .or_else(|| table.overrides.get(&req.digest()));
    let mut probs = BTreeMap::new();
    for (role, cands) in &req.candidates {
        let v = over
            .and_then(|o| o.get(role))
            .or_else(|| table.defaults.get(role))
            .ok_or(BackendError::MissingRole(*role))?;
        if v.len() != cands.len() {
            return Err(BackendError::CandidateCount {
                role: *role,
                got: v.len(),
                expected: cands.len(),
            });
        }
        probs.insert(*role, v.clone());
    }
    Ok(ScoreResponse { probs })
}

#[derive(Debug, Clone)]
pub struct MockScorer {
    pub table: MockTable,
}

impl MockScorer {
    pub fn new(table: MockTable) -> Result<Self, BackendError> {
        table.validate()?;
        Ok(Self { table })
    }
}

impl MaskScorer for MockScorer {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        mock_score(&self.table, req)
    }

    fn concurrency(&self) -> usize {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    }
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    200
}
fn default_backoff_max_ms() -> u64 {
    10_000
}
fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_base_ms: default_backoff_base_ms(),
            backoff_max_ms: default_backoff_max_ms(),
            concurrency: default_concurrency(),
        }
    }

    /// Exponential backoff before retry number `attempt` (1-based), with
    /// jitter drawn from [50%, 100%] of the nominal delay.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let nominal = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.saturating_sub(1).min(20))
            .min(self.backoff_max_ms);
        let jitter: f64 = rand::rng().random_range(0.5..=1.0);
        Duration::from_millis((nominal as f64 * jitter).round() as u64)
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Retry(BackendError),
    Fail(BackendError),
}

#[derive(Debug)]
pub struct RemoteScorer {
    config: RemoteConfig,
    url: String,
    client: reqwest::blocking::Client,
    gate: Gate,
}

impl RemoteScorer {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let url = format!("{}/score", config.endpoint.trim_end_matches('/'));
        let gate = Gate::new(config.concurrency);
        Ok(Self {
            config,
            url,
            client,
            gate,
        })
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn attempt(&self, body: &str) -> Result<BTreeMap<MaskRole, Vec<f64>>, Attempt> {
        let resp = self
            .client
            .post(&self.url)
            .header("content-type", "application/json")
            .body(body.to_string())
            .send()
            .map_err(|e| {
                if e.is_timeout() || e.is_connect() || e.is_request() {
                    Attempt::Retry(BackendError::Transport(e.to_string()))
                } else {
                    Attempt::Fail(BackendError::Transport(e.to_string()))
                }
            })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                Attempt::Retry(BackendError::Transport(e.to_string()))
            } else {
                Attempt::Fail(BackendError::Malformed(e.to_string()))
            }
        })?;
        if !status.is_success() {
            let err = BackendError::Http {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            };
            return Err(if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            });
        }
        let wire: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fail(BackendError::Malformed(e.to_string())))?;
        if wire.v != PROTOCOL_VERSION {
            return Err(Attempt::Fail(BackendError::Malformed(format!(
                "unsupported protocol version {}",
                wire.v
            ))));
        }
        Ok(wire.probs)
    }
}

impl MaskScorer for RemoteScorer {
    fn score(&self, req: &ScoreRequest) -> Result<ScoreResponse, BackendError> {
        req.validate()?;
        let body = req.to_wire_json();
        let attempts = self.config.retries + 1;
        let mut attempt = 1;
        loop {
            let outcome = {
                let _slot = self.gate.enter();
                self.attempt(&body)
            };
            match outcome {
                Ok(probs) => return validate_response(req, probs),
                Err(Attempt::Fail(e)) => return Err(e),
                Err(Attempt::Retry(e)) if attempt >= attempts => {
                    warn!("score request failed after {attempts} attempts: {e}");
                    return Err(match e {
                        BackendError::Http { .. } => e,
                        other => BackendError::Timeout {
                            attempts,
                            last: other.to_string(),
                        },
                    });
                }
                Err(Attempt::Retry(e)) => {
                    let delay = self.config.backoff(attempt);
                    warn!("score request attempt {attempt}/{attempts} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    fn concurrency(&self) -> usize {
        self.config.concurrency.max(1)
    }
}

/// Per-position outcome of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub results: Vec<Result<ScoreResponse, BackendError>>,
}

impl BatchOutcome {
    pub fn failures(&self) -> Vec<(usize, &BackendError)> {
        self.results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

/// Score every request, positionally aligned; one failure never aborts the
/// rest of the batch.
pub fn batch_score(backend: &dyn MaskScorer, requests: &[ScoreRequest]) -> BatchOutcome {
    if requests.is_empty() {
        return BatchOutcome { results: Vec::new() };
    }
    let threads = backend.concurrency().clamp(1, requests.len());
    let results = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| requests.par_iter().map(|r| backend.score(r)).collect()),
        Err(_) => requests.iter().map(|r| backend.score(r)).collect(),
    };
    BatchOutcome { results }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Instance;
    use crate::hierarchy::LabelHierarchy;
    use crate::prompting::{render, PromptTemplate};

    fn request(arg1: &str) -> ScoreRequest {
        let h = LabelHierarchy::pdtb2();
        let r = render(&PromptTemplate::discoprompt(), &Instance::implicit("i", arg1, "b"), &h).unwrap();
        ScoreRequest::from_rendered(None, &r)
    }

    fn uniform_table() -> MockTable {
        MockTable {
            defaults: [
                (MaskRole::Top, vec![0.25; 4]),
                (MaskRole::Second, vec![1.0 / 11.0; 11]),
                (MaskRole::Connective, vec![1.0 / 11.0; 11]),
            ]
            .into(),
            overrides: BTreeMap::new(),
        }
    }

    #[test]
    fn digest_is_lowercase_sha256() {
        assert_eq!(
            prompt_digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn mock_defaults_and_overrides() {
        let mut table = uniform_table();
        let req = request("first");
        let mut contrast = vec![0.0; 11];
        contrast[1] = 1.0;
        table
            .overrides
            .insert(req.digest(), [(MaskRole::Second, contrast.clone())].into());
        let r = mock_score(&table, &req).unwrap();
        assert_eq!(r.probs[&MaskRole::Second], contrast);
        assert_eq!(r.probs[&MaskRole::Top], vec![0.25; 4]);
        let other = mock_score(&table, &request("second")).unwrap();
        assert_eq!(other.probs[&MaskRole::Second], vec![1.0 / 11.0; 11]);
        assert_eq!(mock_score(&table, &req), mock_score(&table, &req));
    }

    #[test]
    fn mock_override_by_instance_id() {
        let mut table = uniform_table();
        let mut top = vec![0.0; 4];
        top[3] = 1.0;
        table.overrides.insert("inst-7".into(), [(MaskRole::Top, top.clone())].into());
        let mut req = request("x");
        req.id = Some("inst-7".into());
        assert_eq!(mock_score(&table, &req).unwrap().probs[&MaskRole::Top], top);
    }

    #[test]
    fn mock_missing_role() {
        let mut table = uniform_table();
        table.defaults.remove(&MaskRole::Connective);
        assert_eq!(
            mock_score(&table, &request("x")),
            Err(BackendError::MissingRole(MaskRole::Connective))
        );
    }

    #[test]
    fn table_file_format() {
        let text = r#"{"defaults":{"top":[0.5,0.5]},"overrides":{"abc":{"top":[1.0,0.0]}}}"#;
        let t = MockTable::from_json(text).unwrap();
        assert_eq!(t.overrides["abc"][&MaskRole::Top], vec![1.0, 0.0]);
        assert!(MockTable::from_json(r#"{"defaults":{"top":[0.5,0.6]}}"#).is_err());
    }

    #[test]
    fn response_validation() {
        let req = request("x");
        let mut probs = uniform_table().defaults;
        assert!(validate_response(&req, probs.clone()).is_ok());
        probs.insert(MaskRole::Top, vec![0.25, 0.25, 0.25, 0.15]);
        let err = validate_response(&req, probs.clone()).unwrap_err();
        assert_eq!(err.kind(), BackendErrorKind::InvalidDistribution);
        probs.insert(MaskRole::Top, vec![0.25, 0.25, 0.25, 0.25 + 5e-7]);
        let ok = validate_response(&req, probs).unwrap();
        let sum: f64 = ok.probs[&MaskRole::Top].iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wire_request_shape() {
        let v: serde_json::Value = serde_json::from_str(&request("x").to_wire_json()).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["soft_tokens"], 20);
        assert_eq!(v["candidates"]["top"][0], "Comparison");
        assert!(v["mask_spans"]["connective"].is_array());
        assert!(v.get("id").is_none());
    }

    #[test]
    fn batch_preserves_order() {
        let scorer = MockScorer::new(uniform_table()).unwrap();
        let reqs: Vec<_> = ["a", "b", "c"].iter().map(|a| request(a)).collect();
        let out = batch_score(&scorer, &reqs);
        assert_eq!(out.len(), 3);
        let direct: Vec<_> = reqs.iter().map(|r| scorer.score(r)).collect();
        assert_eq!(out.results, direct);
        assert!(batch_score(&scorer, &[]).is_empty());
    }
}
