//! Pseudo-labels for input-only tasks from an external chat-completion
//! service, with an on-disk response cache, rate limiting and retries.

pub mod mock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::corpus::{Annotations, LabelSource, RawSample, TaskSpec};
use crate::render::{self, RenderError};
use crate::seed;

pub const TRANSFORM: &str = "pseudo_label";
/// Endpoint scheme for the in-process echo service.
pub const MOCK_SCHEME: &str = "mock://";

fn default_retries() -> u32 {
    3
}
fn default_timeout() -> f64 {
    30.0
}
fn default_concurrency() -> usize {
    4
}
fn default_rpm() -> u32 {
    60
}
fn default_backoff_base() -> u64 {
    500
}
fn default_backoff_max() -> u64 {
    30_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer credential. No variable means
    /// no authorization header.
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrent: usize,
    #[serde(default = "default_rpm")]
    pub requests_per_minute: u32,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max")]
    pub backoff_max_ms: u64,
}

impl ClientConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            credential_env: None,
            max_retries: default_retries(),
            timeout_secs: default_timeout(),
            max_concurrent: default_concurrency(),
            requests_per_minute: default_rpm(),
            backoff_base_ms: default_backoff_base(),
            backoff_max_ms: default_backoff_max(),
        }
    }

    pub fn validate(&self) -> Result<(), PseudoError> {
        let bad = |m: &str| Err(PseudoError::InvalidConfig(m.to_string()));
        if self.endpoint.trim().is_empty() {
            return bad("endpoint is empty");
        }
        if self.model.trim().is_empty() {
            return bad("model is empty");
        }
        if self.max_concurrent == 0 {
            return bad("max_concurrent must be at least 1");
        }
        if self.requests_per_minute == 0 {
            return bad("requests_per_minute must be at least 1");
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return bad("timeout_secs must be positive");
        }
        Ok(())
    }

    /// Reads the credential; unset or empty is an error.
    pub fn credential(&self) -> Result<Option<String>, PseudoError> {
        match &self.credential_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Ok(Some(v)),
                _ => Err(PseudoError::MissingCredential(var.clone())),
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PseudoError {
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid client config: {0}")]
    InvalidConfig(String),
    #[error("cache {path}: {source}")]
    Cache { path: PathBuf, source: io::Error },
    #[error("cache {path} line {line}: {message}")]
    CacheCorrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// SHA-256 hex over the model name and the full prompt text.
pub fn fingerprint(model: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update([0u8]);
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub fingerprint: String,
    pub completion: String,
    pub timestamp: u64,
}

/// Fingerprint → completion map backed by an append-only NDJSON file.
#[derive(Debug, Default)]
pub struct PseudoCache {
    path: Option<PathBuf>,
    entries: HashMap<String, CacheEntry>,
    writer: Option<BufWriter<File>>,
}

impl PseudoCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; new entries are appended to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PseudoError> {
        let path = path.as_ref().to_path_buf();
        let cache_err = |source| PseudoError::Cache { path: path.clone(), source };
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(cache_err)?;
            for (i, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(line).map_err(|e| PseudoError::CacheCorrupt {
                    path: path.clone(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.entry(e.fingerprint.clone()).or_insert(e);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(cache_err)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(cache_err)?;
        Ok(Self {
            path: Some(path),
            entries,
            writer: Some(BufWriter::new(file)),
        })
    }

    pub fn get(&self, fingerprint: &str) -> Option<&str> {
        self.entries.get(fingerprint).map(|e| e.completion.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds an entry unless the fingerprint is already cached.
    pub fn insert(&mut self, fingerprint: String, completion: String, timestamp: u64) -> Result<(), PseudoError> {
        if self.entries.contains_key(&fingerprint) {
            return Ok(());
        }
        let entry = CacheEntry {
            fingerprint: fingerprint.clone(),
            completion,
            timestamp,
        };
        if let (Some(w), Some(path)) = (self.writer.as_mut(), self.path.as_ref()) {
            let line = serde_json::to_string(&entry).expect("cache entry serializes");
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|source| PseudoError::Cache { path: path.clone(), source })?;
        }
        self.entries.insert(fingerprint, entry);
        Ok(())
    }
}

/// Time source for rate limiting and backoff.
pub trait Clock: Send + Sync {
    /// Monotonic time since the clock's origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
    fn unix_secs(&self) -> u64;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
    fn unix_secs(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
    }
}

/// Simulated time: `sleep` returns at once and moves the clock forward.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: Mutex<Duration>,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }
    fn sleep(&self, d: Duration) {
        let mut now = self.now.lock().unwrap();
        *now += d;
    }
    fn unix_secs(&self) -> u64 {
        self.now().as_secs()
    }
}

const WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window limiter: at most `per_minute` grants in any 60 s window.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    grants: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        Self {
            per_minute: per_minute.max(1) as usize,
            grants: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut grants = self.grants.lock().unwrap();
                let now = clock.now();
                while grants.front().is_some_and(|t| now >= *t + WINDOW) {
                    grants.pop_front();
                }
                if grants.len() < self.per_minute {
                    grants.push_back(now);
                    return;
                }
                *grants.front().unwrap() + WINDOW - now
            };
            clock.sleep(wait);
        }
    }
}

/// Delay before retry `attempt` (0-based): doubling from the base, capped,
/// scaled by a jitter factor in [0.5, 1) drawn from the request fingerprint.
pub fn backoff_delay(cfg: &ClientConfig, fingerprint: &str, attempt: u32) -> Duration {
    let raw = cfg
        .backoff_base_ms
        .saturating_mul(1u64 << attempt.min(32))
        .min(cfg.backoff_max_ms);
    let draw = seed::derive(seed::derive(u64::from(attempt), fingerprint), "backoff");
    let jitter = 0.5 + 0.5 * (draw >> 11) as f64 / (1u64 << 53) as f64;
    Duration::from_secs_f64(raw as f64 * jitter / 1000.0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
}

impl ChatRequest {
    pub fn prompt_text(&self) -> String {
        format!("{}\n{}", self.system, self.user)
    }

    pub fn body(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection errors, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

/// First choice's message text, verbatim.
pub fn completion_text(response: &serde_json::Value) -> Option<String> {
    response
        .pointer("/choices/0/message/content")
        .and_then(|v| v.as_str())
        .map(str::to_string)
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    credential: Option<String>,
}

impl HttpTransport {
    pub fn new(cfg: &ClientConfig, credential: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoint: cfg.endpoint.clone(),
            credential,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(c) = &self.credential {
            req = req.header("Authorization", format!("Bearer {c}"));
        }
        let mut resp = req
            .send_json(request.body())
            .map_err(|e| TransportError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(TransportError::Transient(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(TransportError::Fatal(format!("HTTP {status}")));
        }
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| TransportError::Transient(format!("unreadable body: {e}")))?;
        completion_text(&body).ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))
    }
}

/// In-process stand-in answering every request with `mock::echo_completion`.
#[derive(Debug, Default)]
pub struct EchoTransport {
    pub calls: AtomicUsize,
}

impl ChatTransport for EchoTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(mock::echo_completion(&request.user))
    }
}

/// Transport selected by the endpoint: `mock://…` runs in process, anything
/// else is HTTP. Fails before any request when the credential is missing.
pub fn transport_for(cfg: &ClientConfig) -> Result<Box<dyn ChatTransport>, PseudoError> {
    cfg.validate()?;
    let credential = cfg.credential()?;
    if cfg.endpoint.starts_with(MOCK_SCHEME) {
        Ok(Box::new(EchoTransport::default()))
    } else {
        Ok(Box::new(HttpTransport::new(cfg, credential)))
    }
}

/// The chat request for one input-only sample: the task description as the
/// system message; prompt, input and constraints as the user message. The
/// prompt is chosen by sample id so reruns hit the cache.
pub fn request_for(sample: &RawSample, spec: &TaskSpec, model: &str) -> Result<ChatRequest, RenderError> {
    let probe = RawSample {
        annotations: Annotations::TargetText(String::new()),
        ..sample.clone()
    };
    let index = render::choose_prompt(spec, seed::derive(0, &sample.id));
    let rec = render::render(&probe, spec, index)?;
    let mut user = vec![rec.prompt.clone(), format!("Input: {}", rec.input_text)];
    if let Some(labels) = &rec.candidate_labels {
        user.push(format!("{}: {}", spec.render_rules.candidate_prefix, labels.join(", ")));
    }
    if let Some(c) = &rec.output_constraints {
        user.push(c.clone());
    }
    Ok(ChatRequest {
        model: model.to_string(),
        system: rec.task_description,
        user: user.join("\n"),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoStats {
    /// Transport calls, retries included.
    pub requests: usize,
    pub cache_hits: usize,
    pub labelled: usize,
    pub skipped_empty: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PseudoOutcome {
    pub samples: Vec<RawSample>,
    pub stats: PseudoStats,
    pub diagnostics: Vec<String>,
}

fn call_with_retries(
    request: &ChatRequest,
    fp: &str,
    cfg: &ClientConfig,
    transport: &dyn ChatTransport,
    limiter: &RateLimiter,
    clock: &dyn Clock,
    requests: &AtomicUsize,
) -> Result<String, TransportError> {
    let mut attempt = 0;
    loop {
        limiter.acquire(clock);
        requests.fetch_add(1, Ordering::SeqCst);
        match transport.complete(request) {
            Ok(text) => return Ok(text),
            Err(TransportError::Transient(m)) if attempt < cfg.max_retries => {
                log::debug!("retrying after transient failure: {m}");
                clock.sleep(backoff_delay(cfg, fp, attempt));
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Labels each sample with a completion; cached fingerprints are never
/// requested and each distinct uncached fingerprint is requested once.
/// Output order follows input order; failed or empty completions are
/// skipped and counted.
pub fn generate_pseudo_labels_with(
    samples: &[RawSample],
    spec: &TaskSpec,
    cfg: &ClientConfig,
    cache: &mut PseudoCache,
    transport: &dyn ChatTransport,
    clock: &dyn Clock,
) -> Result<PseudoOutcome, PseudoError> {
    cfg.validate()?;
    let requests: Vec<ChatRequest> = samples
        .iter()
        .map(|s| request_for(s, spec, &cfg.model))
        .collect::<Result<_, _>>()?;
    let fps: Vec<String> = requests.iter().map(|r| fingerprint(&cfg.model, &r.prompt_text())).collect();

    let mut pending: Vec<usize> = Vec::new();
    let mut queued = std::collections::HashSet::new();
    for (i, fp) in fps.iter().enumerate() {
        if cache.get(fp).is_none() && queued.insert(fp.as_str()) {
            pending.push(i);
        }
    }

    let limiter = RateLimiter::new(cfg.requests_per_minute);
    let request_count = AtomicUsize::new(0);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String, TransportError>>>> = Mutex::new(vec![None; pending.len()]);
    let workers = cfg.max_concurrent.min(pending.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let r = call_with_retries(&requests[i], &fps[i], cfg, transport, &limiter, clock, &request_count);
                results.lock().unwrap()[k] = Some(r);
            });
        }
    });

    let mut outcome = PseudoOutcome::default();
    let mut failures: HashMap<&str, String> = HashMap::new();
    for (k, r) in results.into_inner().unwrap().into_iter().enumerate() {
        let i = pending[k];
        match r.expect("every pending request resolved") {
            Ok(text) => cache.insert(fps[i].clone(), text, clock.unix_secs())?,
            Err(e) => {
                failures.insert(fps[i].as_str(), e.to_string());
            }
        }
    }

    let fresh: std::collections::HashSet<&str> = pending.iter().map(|&i| fps[i].as_str()).collect();
    for (i, sample) in samples.iter().enumerate() {
        let fp = fps[i].as_str();
        if !fresh.contains(fp) {
            outcome.stats.cache_hits += 1;
        }
        let Some(text) = cache.get(fp) else {
            outcome.stats.failed += 1;
            outcome
                .diagnostics
                .push(format!("{}: {}", sample.id, failures.get(fp).map_or("no completion", String::as_str)));
            continue;
        };
        if text.trim().is_empty() {
            outcome.stats.skipped_empty += 1;
            outcome.diagnostics.push(format!("{}: empty completion", sample.id));
            continue;
        }
        let mut labelled = sample.derive(
            format!("{}::{}", sample.id, spec.task_id),
            &spec.task_id,
            sample.input_text.clone(),
            Annotations::TargetText(text.to_string()),
            TRANSFORM,
        );
        labelled.label_source = LabelSource::Pseudo;
        outcome.samples.push(labelled);
        outcome.stats.labelled += 1;
    }
    outcome.stats.requests = request_count.into_inner();
    Ok(outcome)
}

/// As `generate_pseudo_labels_with`, using the transport named by the
/// config and the system clock.
pub fn generate_pseudo_labels(
    samples: &[RawSample],
    spec: &TaskSpec,
    cfg: &ClientConfig,
    cache: &mut PseudoCache,
) -> Result<PseudoOutcome, PseudoError> {
    let transport = transport_for(cfg)?;
    generate_pseudo_labels_with(samples, spec, cfg, cache, transport.as_ref(), &SystemClock::default())
}
