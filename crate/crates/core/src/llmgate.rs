//! Transport to chat-completion and embedding endpoints.
//!
//! The wire format is the de-facto chat-completion schema: requests carry
//! `model`/`messages`/`temperature`/`max_tokens`, responses carry the text
//! in `choices[0].message.content`. Embedding requests carry
//! `model`/`input`; responses carry `data[i].embedding`.
//!
//! A [`Gateway`] runs in one of three modes:
//!
//! * `Live` — every call goes to the [`Backend`].
//! * `Record` — like live, and each (request, response) is kept in a
//!   [`Cassette`] that is written out by [`Gateway::save_cassette`].
//! * `Replay` — calls are answered from the cassette only; the backend is
//!   never constructed.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Sampling seed; omitted from the wire form when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

impl ChatRequest {
    /// Request with temperature 0 and the default token budget.
    pub fn new(model: impl Into<String>, messages: Vec<Message>) -> Self {
        Self {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GateError> {
        match self.messages.first() {
            None => Err(GateError::InvalidRequest("request has no messages".into())),
            Some(m) if m.role == Role::Assistant => Err(GateError::InvalidRequest(
                "first message must be system or user".into(),
            )),
            Some(_) => Ok(()),
        }
    }

    pub fn to_wire(&self) -> Value {
        serde_json::to_value(self).expect("chat request serializes")
    }

    /// Stable hash of the wire form, as used for cassette keys.
    pub fn hash(&self) -> String {
        request_hash(Endpoint::Chat, &self.to_wire())
    }
}

/// Unit-normalized embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm. `None` for zero or non-finite input.
    pub fn normalized(values: &[f32]) -> Option<Self> {
        let norm = values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        Some(Self {
            values: values.iter().map(|&v| (f64::from(v) / norm) as f32).collect(),
        })
    }

    /// Wraps values already known to be unit length (e.g. read back from an index file).
    pub fn from_unit(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    /// Cosine similarity; both vectors are unit length so this is the dot product.
    pub fn cosine(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f64::from(a) * f64::from(b))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Chat,
    Embed,
}

/// Failure of a single backend call, before retry policy is applied.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum CallError {
    #[error("network error: {0}")]
    Network(String),
    #[error("status {code}: {body}")]
    Status { code: u16, body: String },
    #[error("undecodable response: {0}")]
    Decode(String),
}

impl CallError {
    fn is_transient(&self) -> bool {
        match self {
            CallError::Network(_) => true,
            CallError::Status { code, .. } => *code == 408 || *code == 429 || *code >= 500,
            CallError::Decode(_) => false,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GateError {
    #[error("transport failed after {attempts} attempts: {last}")]
    Transport { attempts: u32, last: String },
    #[error("endpoint returned status {status}: {excerpt}")]
    Endpoint { status: u16, excerpt: String },
    #[error("malformed endpoint response: {0}")]
    Malformed(String),
    #[error("replay cache miss for request hash {hash}")]
    CacheMiss { hash: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette error: {0}")]
    Cassette(String),
    #[error("no backend configured for live calls")]
    NoBackend,
}

/// A raw JSON-over-HTTP transport. Implementations must be shareable
/// across threads.
pub trait Backend: Send + Sync {
    fn call(&self, endpoint: Endpoint, body: &Value) -> Result<Value, CallError>;
}

/// Environment variable holding the bearer token by default.
pub const DEFAULT_TOKEN_ENV: &str = "ATTRIB_API_KEY";

/// HTTP backend speaking JSON to configured chat and embedding URLs.
pub struct HttpBackend {
    agent: ureq::Agent,
    chat_url: Option<String>,
    embed_url: Option<String>,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(
        chat_url: Option<String>,
        embed_url: Option<String>,
        token_env: &str,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            chat_url,
            embed_url,
            token: std::env::var(token_env).ok().filter(|t| !t.is_empty()),
        }
    }
}

impl Backend for HttpBackend {
    fn call(&self, endpoint: Endpoint, body: &Value) -> Result<Value, CallError> {
        let url = match endpoint {
            Endpoint::Chat => self.chat_url.as_deref(),
            Endpoint::Embed => self.embed_url.as_deref(),
        }
        .ok_or_else(|| CallError::Network(format!("no URL configured for {endpoint:?}")))?;
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| CallError::Network(e.to_string()))?;
        let code = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| CallError::Network(e.to_string()))?;
        if !(200..300).contains(&code) {
            return Err(CallError::Status { code, body: text });
        }
        serde_json::from_str(&text).map_err(|e| CallError::Decode(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        Self { max_attempts, base_delay_ms: 0, max_delay_ms: 0 }
    }

    /// Delay before attempt `attempt + 1`, doubling from the base delay.
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Counting semaphore bounding requests in flight.
struct Limiter {
    available: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(n: usize) -> Self {
        Self { available: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock();
        while *available == 0 {
            self.cv.wait(&mut available);
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Serializes JSON with object keys sorted at every level and no
/// insignificant whitespace.
pub fn canonical_json(value: &Value) -> String {
    fn write(value: &Value, out: &mut String) {
        match value {
            Value::Object(map) => {
                let sorted: BTreeMap<&String, &Value> = map.iter().collect();
                out.push('{');
                for (i, (k, v)) in sorted.into_iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push_str(&serde_json::to_string(k).expect("string serializes"));
                    out.push(':');
                    write(v, out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    write(v, out);
                }
                out.push(']');
            }
            other => out.push_str(&other.to_string()),
        }
    }
    let mut out = String::new();
    write(value, &mut out);
    out
}

/// SHA-256 (hex) of the canonical form of `{"endpoint", "body"}`.
pub fn request_hash(endpoint: Endpoint, body: &Value) -> String {
    let keyed = json!({ "endpoint": endpoint, "body": body });
    hex_digest(canonical_json(&keyed).as_bytes())
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub hash: String,
    pub request: Value,
    pub response: Value,
}

/// Request-hash → response store, persisted as line-delimited JSON sorted
/// by hash.
#[derive(Debug, Default)]
pub struct Cassette {
    entries: Mutex<BTreeMap<String, CassetteEntry>>,
}

impl Cassette {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GateError> {
        let path = path.as_ref();
        let file = File::open(path)
            .map_err(|e| GateError::Cassette(format!("{}: {e}", path.display())))?;
        let mut entries = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| GateError::Cassette(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CassetteEntry = serde_json::from_str(&line)
                .map_err(|e| GateError::Cassette(format!("line {}: {e}", i + 1)))?;
            entries.insert(entry.hash.clone(), entry);
        }
        Ok(Self { entries: Mutex::new(entries) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), GateError> {
        let path = path.as_ref();
        let err = |e: std::io::Error| GateError::Cassette(format!("{}: {e}", path.display()));
        let mut out = BufWriter::new(File::create(path).map_err(err)?);
        for entry in self.entries.lock().values() {
            let line = serde_json::to_string(entry).expect("entry serializes");
            writeln!(out, "{line}").map_err(err)?;
        }
        out.flush().map_err(err)
    }

    pub fn get(&self, hash: &str) -> Option<Value> {
        self.entries.lock().get(hash).map(|e| e.response.clone())
    }

    pub fn insert(&self, endpoint: Endpoint, body: &Value, response: Value) {
        let hash = request_hash(endpoint, body);
        let request = json!({ "endpoint": endpoint, "body": body });
        self.entries
            .lock()
            .insert(hash.clone(), CassetteEntry { hash, request, response });
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Record,
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown gateway mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub embed_model: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub embed_batch_limit: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            embed_model: "embedding".into(),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            embed_batch_limit: 64,
        }
    }
}

/// Shareable client for chat and embedding endpoints.
pub struct Gateway {
    backend: Option<Arc<dyn Backend>>,
    mode: Mode,
    cassette: Cassette,
    cassette_path: Option<PathBuf>,
    config: GatewayConfig,
    limiter: Limiter,
    embed_dimension: Mutex<Option<usize>>,
    attempts: AtomicUsize,
}

impl Gateway {
    /// Builds a gateway for `mode`. Replay requires an existing cassette
    /// file; record starts from the cassette file when it exists.
    pub fn with_mode(
        mode: Mode,
        backend: Option<Arc<dyn Backend>>,
        config: GatewayConfig,
        cassette_path: Option<PathBuf>,
    ) -> Result<Self, GateError> {
        let cassette = match (mode, &cassette_path) {
            (Mode::Replay, None) => {
                return Err(GateError::Cassette("replay mode requires a cassette file".into()))
            }
            (Mode::Replay, Some(p)) => Cassette::load(p)?,
            (Mode::Record, None) => {
                return Err(GateError::Cassette("record mode requires a cassette path".into()))
            }
            (Mode::Record, Some(p)) if p.exists() => Cassette::load(p)?,
            _ => Cassette::default(),
        };
        if mode != Mode::Replay && backend.is_none() {
            return Err(GateError::NoBackend);
        }
        let backend = if mode == Mode::Replay { None } else { backend };
        Ok(Self {
            backend,
            mode,
            cassette,
            cassette_path,
            limiter: Limiter::new(config.max_in_flight),
            config,
            embed_dimension: Mutex::new(None),
            attempts: AtomicUsize::new(0),
        })
    }

    pub fn live(backend: Arc<dyn Backend>, config: GatewayConfig) -> Self {
        Self::with_mode(Mode::Live, Some(backend), config, None).expect("live gateway")
    }

    pub fn replay(config: GatewayConfig, cassette_path: impl Into<PathBuf>) -> Result<Self, GateError> {
        Self::with_mode(Mode::Replay, None, config, Some(cassette_path.into()))
    }

    pub fn record(
        backend: Arc<dyn Backend>,
        config: GatewayConfig,
        cassette_path: impl Into<PathBuf>,
    ) -> Result<Self, GateError> {
        Self::with_mode(Mode::Record, Some(backend), config, Some(cassette_path.into()))
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    /// Backend calls attempted so far (zero in replay mode).
    pub fn attempts(&self) -> usize {
        self.attempts.load(Ordering::Relaxed)
    }

    /// Writes the cassette in record mode; no-op otherwise.
    pub fn save_cassette(&self) -> Result<(), GateError> {
        match (self.mode, &self.cassette_path) {
            (Mode::Record, Some(path)) => self.cassette.save(path),
            _ => Ok(()),
        }
    }

    fn call_with_retry(&self, endpoint: Endpoint, body: &Value) -> Result<Value, GateError> {
        let backend = self.backend.as_ref().ok_or(GateError::NoBackend)?;
        let max = self.config.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            let result = {
                let _permit = self.limiter.acquire();
                self.attempts.fetch_add(1, Ordering::Relaxed);
                backend.call(endpoint, body)
            };
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() => {
                    tracing::debug!(attempt, error = %e, "transient endpoint failure");
                    last = e.to_string();
                    if attempt < max {
                        std::thread::sleep(self.config.retry.delay(attempt));
                    }
                }
                Err(CallError::Status { code, body }) => {
                    return Err(GateError::Endpoint { status: code, excerpt: excerpt(&body) })
                }
                Err(e) => return Err(GateError::Malformed(e.to_string())),
            }
        }
        Err(GateError::Transport { attempts: max, last })
    }

    fn dispatch(&self, endpoint: Endpoint, body: &Value) -> Result<Value, GateError> {
        match self.mode {
            Mode::Replay => {
                let hash = request_hash(endpoint, body);
                self.cassette.get(&hash).ok_or(GateError::CacheMiss { hash })
            }
            Mode::Live => self.call_with_retry(endpoint, body),
            Mode::Record => {
                let response = self.call_with_retry(endpoint, body)?;
                self.cassette.insert(endpoint, body, response.clone());
                Ok(response)
            }
        }
    }

    /// Sends a chat request and returns the assistant text.
    pub fn chat(&self, request: &ChatRequest) -> Result<String, GateError> {
        request.validate()?;
        let response = self.dispatch(Endpoint::Chat, &request.to_wire())?;
        response
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| GateError::Malformed("missing choices[0].message.content".into()))
    }

    /// Sends many chat requests with at most `max_in_flight` outstanding;
    /// results come back in input order.
    pub fn chat_many(&self, requests: &[ChatRequest]) -> Vec<Result<String, GateError>> {
        let workers = self.config.max_in_flight.max(1).min(requests.len().max(1));
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<String, GateError>>>> =
            Mutex::new(vec![None; requests.len()]);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(req) = requests.get(i) else { break };
                    let out = self.chat(req);
                    results.lock()[i] = Some(out);
                });
            }
        });
        results
            .into_inner()
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }

    /// Embeds one batch (at most `embed_batch_limit` texts), returning
    /// unit-normalized vectors in input order.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GateError> {
        if texts.is_empty() {
            return Err(GateError::InvalidRequest("empty embedding batch".into()));
        }
        if texts.len() > self.config.embed_batch_limit {
            return Err(GateError::InvalidRequest(format!(
                "batch of {} exceeds limit {}",
                texts.len(),
                self.config.embed_batch_limit
            )));
        }
        let body = json!({ "model": self.config.embed_model, "input": texts });
        let response = self.dispatch(Endpoint::Embed, &body)?;
        let data = response
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GateError::Malformed("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(GateError::Malformed(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let index = item
                .get("index")
                .and_then(Value::as_u64)
                .map_or(pos, |i| i as usize);
            let raw: Vec<f32> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| GateError::Malformed("missing embedding".into()))?
                .iter()
                .map(|v| v.as_f64().map(|f| f as f32))
                .collect::<Option<_>>()
                .ok_or_else(|| GateError::Malformed("non-numeric embedding value".into()))?;
            let vector = EmbeddingVector::normalized(&raw)
                .ok_or_else(|| GateError::Malformed("zero or non-finite embedding".into()))?;
            self.check_dimension(vector.dimension())?;
            match slots.get_mut(index) {
                Some(slot @ None) => *slot = Some(vector),
                _ => return Err(GateError::Malformed(format!("bad embedding index {index}"))),
            }
        }
        Ok(slots.into_iter().map(|v| v.expect("all indices filled")).collect())
    }

    /// Embeds any number of texts in batches of `embed_batch_limit`.
    pub fn embed_all(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GateError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.embed_batch_limit.max(1)) {
            out.extend(self.embed(chunk)?);
        }
        Ok(out)
    }

    fn check_dimension(&self, got: usize) -> Result<(), GateError> {
        let mut dim = self.embed_dimension.lock();
        match *dim {
            None => {
                *dim = Some(got);
                Ok(())
            }
            Some(expected) if expected == got => Ok(()),
            Some(expected) => Err(GateError::DimensionMismatch { expected, got }),
        }
    }
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    if body.len() <= MAX {
        return body.to_string();
    }
    let mut end = MAX;
    while !body.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &body[..end])
}

/// Wraps text as a chat-completion response body.
pub fn chat_response(content: &str) -> Value {
    json!({ "choices": [{ "index": 0, "message": { "role": "assistant", "content": content } }] })
}

/// Wraps vectors as an embedding response body.
pub fn embedding_response(vectors: &[Vec<f32>]) -> Value {
    let data: Vec<Value> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| json!({ "index": i, "embedding": v }))
        .collect();
    json!({ "data": data })
}

/// Parses a request body back into a [`ChatRequest`]; used by scripted backends.
pub fn chat_request_from_wire(body: &Value) -> Option<ChatRequest> {
    serde_json::from_value(body.clone()).ok()
}

/// Backend driven by a closure; convenient for tests and offline runs.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(Endpoint, &Value) -> Result<Value, CallError> + Send + Sync,
{
    fn call(&self, endpoint: Endpoint, body: &Value) -> Result<Value, CallError> {
        (self.0)(endpoint, body)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn config(attempts: u32) -> GatewayConfig {
        GatewayConfig { retry: RetryPolicy::immediate(attempts), ..GatewayConfig::default() }
    }

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("m", vec![Message::system("sys"), Message::user(text)])
    }

    #[test]
    fn retries_until_success() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let backend = FnBackend(move |_, _: &Value| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(CallError::Status { code: 503, body: "busy".into() })
            } else {
                Ok(chat_response("ok"))
            }
        });
        let gw = Gateway::live(Arc::new(backend), config(3));
        assert_eq!(gw.chat(&req("hi")).unwrap(), "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn always_failing_exhausts_cap() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let backend = FnBackend(move |_, _: &Value| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(CallError::Status { code: 500, body: "boom".into() })
        });
        let gw = Gateway::live(Arc::new(backend), config(3));
        match gw.chat(&req("hi")) {
            Err(GateError::Transport { attempts: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn terminal_status_is_not_retried() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let backend = FnBackend(move |_, _: &Value| {
            c.fetch_add(1, Ordering::SeqCst);
            Err(CallError::Status { code: 404, body: "model `x` not found".into() })
        });
        let gw = Gateway::live(Arc::new(backend), config(3));
        match gw.chat(&req("hi")) {
            Err(GateError::Endpoint { status: 404, excerpt }) => assert!(excerpt.contains("not found")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_attempts: 6, base_delay_ms: 100, max_delay_ms: 350 };
        let delays: Vec<u64> = (1..=4).map(|a| p.delay(a).as_millis() as u64).collect();
        assert_eq!(delays, vec![100, 200, 350, 350]);
    }

    #[test]
    fn invalid_requests_rejected() {
        let gw = Gateway::live(Arc::new(FnBackend(|_, _: &Value| Ok(chat_response("x")))), config(1));
        let empty = ChatRequest::new("m", vec![]);
        assert!(matches!(gw.chat(&empty), Err(GateError::InvalidRequest(_))));
        let bad = ChatRequest::new("m", vec![Message::assistant("x")]);
        assert!(matches!(gw.chat(&bad), Err(GateError::InvalidRequest(_))));
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: Value = serde_json::from_str(r#"{"model":"m","temperature":0.0,"messages":[{"role":"user","content":"x"}]}"#).unwrap();
        let b: Value = serde_json::from_str(
            r#"{ "messages": [ {"content": "x", "role": "user"} ],
                 "temperature": 0.0, "model": "m" }"#,
        )
        .unwrap();
        assert_eq!(request_hash(Endpoint::Chat, &a), request_hash(Endpoint::Chat, &b));
        assert_ne!(request_hash(Endpoint::Chat, &a), request_hash(Endpoint::Embed, &a));
        assert_eq!(
            canonical_json(&b),
            r#"{"messages":[{"content":"x","role":"user"}],"model":"m","temperature":0.0}"#
        );
    }

    #[test]
    fn record_then_replay_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cassette.jsonl");
        let backend = FnBackend(|_, body: &Value| {
            let r = chat_request_from_wire(body).unwrap();
            Ok(chat_response(&format!("echo: {}\n  with spacing ", r.messages[1].content)))
        });
        let rec = Gateway::record(Arc::new(backend), config(1), &path).unwrap();
        let recorded = rec.chat(&req("hello")).unwrap();
        rec.save_cassette().unwrap();

        let replay = Gateway::replay(config(1), &path).unwrap();
        assert_eq!(replay.chat(&req("hello")).unwrap(), recorded);
        assert_eq!(replay.attempts(), 0);
        match replay.chat(&req("unseen")) {
            Err(GateError::CacheMiss { hash }) => assert_eq!(hash, req("unseen").hash()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn replay_requires_cassette() {
        assert!(Gateway::with_mode(Mode::Replay, None, config(1), None).is_err());
        assert!(Gateway::replay(config(1), "/nonexistent/cassette.jsonl").is_err());
    }

    #[test]
    fn in_flight_is_bounded() {
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let (c, p) = (current.clone(), peak.clone());
        let backend = FnBackend(move |_, _: &Value| {
            let now = c.fetch_add(1, Ordering::SeqCst) + 1;
            p.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            c.fetch_sub(1, Ordering::SeqCst);
            Ok(chat_response("ok"))
        });
        let cfg = GatewayConfig { max_in_flight: 3, ..config(1) };
        let gw = Arc::new(Gateway::live(Arc::new(backend), cfg));
        let reqs: Vec<ChatRequest> = (0..24).map(|i| req(&i.to_string())).collect();
        // two independent fan-outs share the gateway's limit
        std::thread::scope(|s| {
            for _ in 0..2 {
                let gw = gw.clone();
                let reqs = reqs.clone();
                s.spawn(move || {
                    assert!(gw.chat_many(&reqs).iter().all(|r| r.is_ok()));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 3, "peak {}", peak.load(Ordering::SeqCst));
        assert!(peak.load(Ordering::SeqCst) >= 2);
    }

    #[test]
    fn chat_many_preserves_order() {
        let backend = FnBackend(|_, body: &Value| {
            let r = chat_request_from_wire(body).unwrap();
            Ok(chat_response(&r.messages[1].content))
        });
        let gw = Gateway::live(Arc::new(backend), GatewayConfig { max_in_flight: 4, ..config(1) });
        let reqs: Vec<ChatRequest> = (0..50).map(|i| req(&i.to_string())).collect();
        let out: Vec<String> = gw.chat_many(&reqs).into_iter().map(Result::unwrap).collect();
        assert_eq!(out, (0..50).map(|i| i.to_string()).collect::<Vec<_>>());
    }

    fn basis_backend() -> FnBackend<impl Fn(Endpoint, &Value) -> Result<Value, CallError>> {
        FnBackend(|_, body: &Value| {
            let input = body["input"].as_array().unwrap();
            let vecs: Vec<Vec<f32>> = input
                .iter()
                .map(|t| match t.as_str().unwrap() {
                    "x" => vec![2.0, 0.0, 0.0],
                    "y" => vec![0.0, 3.0, 0.0],
                    "xy" => vec![1.0, 1.0, 0.0],
                    _ => vec![1.0, 1.0, 1.0],
                })
                .collect();
            Ok(embedding_response(&vecs))
        })
    }

    #[test]
    fn embeddings_are_normalized_with_known_cosines() {
        let gw = Gateway::live(Arc::new(basis_backend()), config(1));
        let texts: Vec<String> = ["x", "y", "xy", "x"].iter().map(|s| s.to_string()).collect();
        let v = gw.embed(&texts).unwrap();
        for e in &v {
            assert!((e.norm() - 1.0).abs() < 1e-6);
        }
        assert!((v[0].cosine(&v[0]) - 1.0).abs() < 1e-6);
        assert_eq!(v[0], v[3]);
        assert!(v[0].cosine(&v[1]).abs() < 1e-9);
        // (1,0,0)·(1,1,0)/√2 = 0.70710678
        assert!((v[0].cosine(&v[2]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
    }

    #[test]
    fn embedding_dimension_mismatch_is_an_error() {
        let backend = FnBackend(|_, body: &Value| {
            let n = body["input"].as_array().unwrap().len();
            let vecs: Vec<Vec<f32>> = (0..n).map(|i| vec![1.0; 2 + i]).collect();
            Ok(embedding_response(&vecs))
        });
        let gw = Gateway::live(Arc::new(backend), config(1));
        let texts = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(gw.embed(&texts), Err(GateError::DimensionMismatch { .. })));
    }

    #[test]
    fn embedding_batch_limits() {
        let gw = Gateway::live(
            Arc::new(basis_backend()),
            GatewayConfig { embed_batch_limit: 2, ..config(1) },
        );
        assert!(gw.embed(&[]).is_err());
        let three: Vec<String> = ["x", "y", "xy"].iter().map(|s| s.to_string()).collect();
        assert!(gw.embed(&three).is_err());
        assert_eq!(gw.embed_all(&three).unwrap().len(), 3);
    }
}
