//! Uniform access to generation models with retries, an in-flight cap,
//! per-call telemetry and a deterministic mock backend.
//!
//! Provider contract (HTTP backends): `POST <endpoint>` with JSON
//! `{model, prompt, temperature, max_tokens, stream: false}`; the response is
//! JSON `{text}` (`response` is accepted as an alias).

mod http;
mod mock;
mod routing;
pub mod testing;

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{elapsed_ms, Clock};
use crate::config::GenerationConfig;
use crate::stage::{Endpoint, Stage};

pub use http::HttpBackend;
pub use mock::{MockBackend, FILLER_WORDS};
pub use routing::select_model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleTag {
    Small,
    Large,
}

fn all_stages() -> BTreeSet<Stage> {
    Stage::ALL.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub model_id: String,
    pub scale_tag: ScaleTag,
    pub endpoint: Endpoint,
    /// Stages this model may serve; all stages when omitted.
    #[serde(default = "all_stages")]
    pub capabilities: BTreeSet<Stage>,
}

impl ModelDescriptor {
    pub fn serves(&self, stage: Stage) -> bool {
        self.capabilities.contains(&stage)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("transport error calling `{model}`: {message}")]
    Transport { model: String, message: String },
    #[error("`{model}` timed out after {} s", .after.as_secs())]
    Timeout { model: String, after: Duration },
    #[error("model not found: `{0}`")]
    ModelNotFound(String),
    #[error("`{model}` failed: {message}")]
    Model { model: String, message: String },
    #[error("`{0}` returned an empty completion")]
    EmptyCompletion(String),
    #[error("no configured model can serve the {0} stage")]
    NoModel(Stage),
}

impl GatewayError {
    /// Only connection-level failures are retried.
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }

    /// Failures attributable to the provider rather than the request.
    pub fn is_provider_failure(&self) -> bool {
        !matches!(self, GatewayError::InvalidRequest(_) | GatewayError::NoModel(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_id: String,
}

impl GenerationRequest {
    pub fn new(
        prompt: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
        model_id: impl Into<String>,
    ) -> Result<Self, GatewayError> {
        let req = Self {
            prompt: prompt.into(),
            temperature,
            max_tokens,
            model_id: model_id.into(),
        };
        if req.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        if !(0.0..=2.0).contains(&temperature) {
            return Err(GatewayError::InvalidRequest(format!("temperature {temperature} outside [0, 2]")));
        }
        if max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        if req.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model_id is empty".into()));
        }
        Ok(req)
    }
}

pub trait GenerationBackend: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<String, GatewayError>;
}

/// Telemetry for one `generate` call, including its retries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub model: String,
    pub stage: Stage,
    pub temperature: f64,
    pub max_tokens: u32,
    pub latency_ms: f64,
    pub prompt_chars: usize,
    pub completion_chars: usize,
    pub attempts: u32,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewaySettings {
    pub max_retries: u32,
    pub retry_backoff: Duration,
    pub max_in_flight: usize,
}

impl From<&GenerationConfig> for GatewaySettings {
    fn from(c: &GenerationConfig) -> Self {
        Self {
            max_retries: c.max_retries,
            retry_backoff: Duration::from_millis(c.retry_backoff_ms),
            max_in_flight: c.max_in_flight,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    models: Vec<ModelDescriptor>,
    backends: HashMap<String, Arc<dyn GenerationBackend>>,
    settings: GatewaySettings,
    permits: Permits,
    records: Mutex<Vec<CallRecord>>,
    run_log: Option<Mutex<File>>,
    clock: Arc<dyn Clock>,
}

impl Gateway {
    /// A gateway with no backends attached; see [`with_backend`](Self::with_backend).
    pub fn new(models: Vec<ModelDescriptor>, settings: GatewaySettings, clock: Arc<dyn Clock>) -> Self {
        let free = settings.max_in_flight.max(1);
        Self {
            models,
            backends: HashMap::new(),
            settings,
            permits: Permits {
                free: Mutex::new(free),
                cv: Condvar::new(),
            },
            records: Mutex::new(Vec::new()),
            run_log: None,
            clock,
        }
    }

    /// Builds backends for every configured model. With `mock_seed` set every
    /// model is served by the mock backend; otherwise `mock` endpoints get a
    /// mock seeded with 0 and URLs get HTTP backends.
    pub fn from_config(
        config: &GenerationConfig,
        mock_seed: Option<u64>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, GatewayError> {
        let mut gw = Self::new(config.models.clone(), GatewaySettings::from(config), clock);
        let timeout = Duration::from_secs(config.timeout_secs);
        for m in &config.models {
            let backend: Arc<dyn GenerationBackend> = match (&m.endpoint, mock_seed) {
                (_, Some(seed)) => Arc::new(MockBackend::new(seed)),
                (Endpoint::Mock, None) => Arc::new(MockBackend::new(0)),
                (Endpoint::Http(url), None) => Arc::new(HttpBackend::new(url.clone(), timeout)?),
            };
            gw.backends.insert(m.model_id.clone(), backend);
        }
        Ok(gw)
    }

    pub fn with_backend(mut self, model_id: &str, backend: Arc<dyn GenerationBackend>) -> Self {
        self.backends.insert(model_id.to_string(), backend);
        self
    }

    /// Appends one JSON line per call to `path`.
    pub fn with_run_log(mut self, path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.run_log = Some(Mutex::new(file));
        Ok(self)
    }

    pub fn models(&self) -> &[ModelDescriptor] {
        &self.models
    }

    /// First small model able to serve `stage`, else the first small model.
    pub fn small_model(&self, stage: Stage) -> Result<&ModelDescriptor, GatewayError> {
        let small = || self.models.iter().filter(|m| m.scale_tag == ScaleTag::Small);
        small()
            .find(|m| m.serves(stage))
            .or_else(|| small().next())
            .ok_or(GatewayError::NoModel(stage))
    }

    pub fn invocation<'a>(
        &'a self,
        model: &'a ModelDescriptor,
        stage: Stage,
        temperature: f64,
        max_tokens: u32,
    ) -> Invocation<'a> {
        Invocation {
            gateway: self,
            model,
            stage,
            temperature,
            max_tokens,
        }
    }

    /// Runs one request, retrying transport failures with exponential backoff.
    pub fn generate(&self, stage: Stage, request: &GenerationRequest) -> Result<String, GatewayError> {
        let backend = self
            .backends
            .get(&request.model_id)
            .cloned()
            .ok_or_else(|| GatewayError::ModelNotFound(request.model_id.clone()))?;
        let _permit = self.permits.acquire();
        let start = self.clock.monotonic();
        let mut attempts = 0;
        let result = loop {
            attempts += 1;
            match backend.complete(request) {
                Ok(text) if text.trim().is_empty() => {
                    break Err(GatewayError::EmptyCompletion(request.model_id.clone()))
                }
                Ok(text) => break Ok(text),
                Err(e) if e.is_retryable() && attempts <= self.settings.max_retries => {
                    log::warn!("retrying `{}` after: {e}", request.model_id);
                    thread::sleep(self.settings.retry_backoff * 2u32.pow(attempts - 1));
                }
                Err(e) => break Err(e),
            }
        };
        let record = CallRecord {
            model: request.model_id.clone(),
            stage,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            latency_ms: elapsed_ms(start, self.clock.monotonic()),
            prompt_chars: request.prompt.chars().count(),
            completion_chars: result.as_ref().map_or(0, |t| t.chars().count()),
            attempts,
            ok: result.is_ok(),
            error: result.as_ref().err().map(ToString::to_string),
        };
        self.log_call(&record);
        self.records.lock().unwrap_or_else(|p| p.into_inner()).push(record);
        result
    }

    fn log_call(&self, record: &CallRecord) {
        let Some(log) = &self.run_log else { return };
        let mut value = serde_json::to_value(record).expect("call record serializes");
        value["kind"] = "call".into();
        let mut line = value.to_string();
        line.push('\n');
        let mut file = log.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = file.write_all(line.as_bytes()) {
            log::warn!("cannot write run log: {e}");
        }
    }

    /// Every call made so far, in completion order.
    pub fn calls(&self) -> Vec<CallRecord> {
        self.records.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn take_calls(&self) -> Vec<CallRecord> {
        std::mem::take(&mut *self.records.lock().unwrap_or_else(|p| p.into_inner()))
    }
}

/// A model, stage and sampling setup bound together for repeated calls.
#[derive(Clone, Copy)]
pub struct Invocation<'a> {
    pub gateway: &'a Gateway,
    pub model: &'a ModelDescriptor,
    pub stage: Stage,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Invocation<'_> {
    pub fn call(&self, prompt: &str) -> Result<String, GatewayError> {
        let req = GenerationRequest::new(prompt, self.temperature, self.max_tokens, &self.model.model_id)?;
        self.gateway.generate(self.stage, &req)
    }
}

#[cfg(test)]
mod tests {
    use super::testing::scripted_gateway;
    use super::*;
    use crate::clock::FixedClock;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn transport() -> GatewayError {
        GatewayError::Transport {
            model: "m".into(),
            message: "connection reset".into(),
        }
    }

    #[test]
    fn request_validation() {
        assert!(GenerationRequest::new("", 0.1, 10, "m").is_err());
        assert!(GenerationRequest::new("p", 2.5, 10, "m").is_err());
        assert!(GenerationRequest::new("p", 0.1, 0, "m").is_err());
        assert!(GenerationRequest::new("p", 0.1, 10, "m").is_ok());
    }

    #[test]
    fn transport_errors_retry_up_to_the_limit() {
        let (gw, model) = scripted_gateway(vec![Err(transport()), Err(transport()), Err(transport()), Ok("late".into())]);
        let err = gw.invocation(&model, Stage::Refine, 0.1, 8).call("p").unwrap_err();
        assert!(matches!(err, GatewayError::Transport { .. }));
        assert_eq!(gw.calls()[0].attempts, 3);
    }

    #[test]
    fn transport_error_then_success() {
        let (gw, model) = scripted_gateway(vec![Err(transport()), Ok("fine".into())]);
        assert_eq!(gw.invocation(&model, Stage::Refine, 0.1, 8).call("p").unwrap(), "fine");
        assert_eq!(gw.calls()[0].attempts, 2);
    }

    #[test]
    fn model_errors_are_not_retried() {
        let err = GatewayError::Model {
            model: "m".into(),
            message: "bad".into(),
        };
        let (gw, model) = scripted_gateway(vec![Err(err), Ok("never".into())]);
        assert!(gw.invocation(&model, Stage::Refine, 0.1, 8).call("p").is_err());
        assert_eq!(gw.calls()[0].attempts, 1);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let (gw, model) = scripted_gateway(vec![Ok("   ".into())]);
        assert!(matches!(
            gw.invocation(&model, Stage::Refine, 0.1, 8).call("p"),
            Err(GatewayError::EmptyCompletion(_))
        ));
    }

    #[test]
    fn unreachable_endpoint_fails_with_transport_error() {
        let mut config = GenerationConfig::default();
        config.models.truncate(1);
        config.models[0].endpoint = "http://127.0.0.1:9/generate".parse().unwrap();
        config.max_retries = 1;
        config.retry_backoff_ms = 1;
        let gw = Gateway::from_config(&config, None, Arc::new(FixedClock::epoch())).unwrap();
        let model = gw.models()[0].clone();
        let err = gw.invocation(&model, Stage::Refine, 0.1, 8).call("p").unwrap_err();
        assert!(matches!(err, GatewayError::Transport { .. }), "{err}");
        assert_eq!(gw.calls()[0].attempts, 2);
    }

    #[test]
    fn telemetry_carries_temperature_and_sizes() {
        let (gw, model) = scripted_gateway(vec![Ok("abc".into())]);
        gw.invocation(&model, Stage::Decompose, 0.5, 8).call("hello").unwrap();
        let rec = &gw.calls()[0];
        assert_eq!((rec.stage, rec.temperature), (Stage::Decompose, 0.5));
        assert_eq!((rec.prompt_chars, rec.completion_chars), (5, 3));
        assert_eq!(rec.latency_ms, 0.0);
    }

    struct Slow {
        current: AtomicUsize,
        peak: AtomicUsize,
    }

    impl GenerationBackend for Slow {
        fn complete(&self, _: &GenerationRequest) -> Result<String, GatewayError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(Duration::from_millis(20));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok("ok".into())
        }
    }

    #[test]
    fn in_flight_cap_is_respected() {
        let slow = Arc::new(Slow {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let (gw, model) = scripted_gateway(vec![]);
        let settings = GatewaySettings {
            max_in_flight: 2,
            ..gw.settings.clone()
        };
        let gw = Gateway::new(vec![model.clone()], settings, Arc::new(FixedClock::epoch()))
            .with_backend(&model.model_id, slow.clone());
        thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| gw.invocation(&model, Stage::Retrieve, 0.1, 8).call("p").unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn run_log_has_one_line_per_call() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let (gw, model) = scripted_gateway(vec![Ok("a".into()), Ok("b".into())]);
        let gw = gw.with_run_log(&path).unwrap();
        let inv = gw.invocation(&model, Stage::Synthesize, 0.2, 8);
        inv.call("x").unwrap();
        inv.call("y").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["stage"], "synthesize");
        assert_eq!(lines[0]["temperature"], 0.2);
        assert_eq!(lines[0]["kind"], "call");
    }
}
