//! Tiered, schema-validated access to chat-completion backends.
//!
//! Every agent call goes through [`LlmGateway::complete_structured`]: the
//! backend's text is parsed as JSON and validated against the request's
//! registered schema. On failure the backend is re-prompted with the
//! validation error, at most [`MAX_REPAIRS`] times.

mod backend;
mod http;
mod mock;
mod schema;
mod usage;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::Semaphore;

use crate::hashing::short_digest;
use crate::trace::Tracer;

pub use backend::{BackendCall, BackendError, ChatBackend, RawCompletion, RepairTurn};
pub use http::{HttpBackend, DEFAULT_API_KEY_ENV};
pub use mock::{fixture_key, FnBackend, MockBackend, RecordingBackend};
pub use schema::{SchemaRegistry, SemanticCheck};
pub use usage::{record_usage, KindUsage, UsageLedger};

/// Repair re-prompts allowed after the first malformed response.
pub const MAX_REPAIRS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Selection,
    HeadAnalysis,
    Extraction,
    Critic,
    GroupReview,
    Consensus,
    ErrorGrouping,
}

impl AgentKind {
    pub const ALL: [AgentKind; 7] = [
        AgentKind::Selection,
        AgentKind::HeadAnalysis,
        AgentKind::Extraction,
        AgentKind::Critic,
        AgentKind::GroupReview,
        AgentKind::Consensus,
        AgentKind::ErrorGrouping,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::Selection => "selection",
            AgentKind::HeadAnalysis => "head_analysis",
            AgentKind::Extraction => "extraction",
            AgentKind::Critic => "critic",
            AgentKind::GroupReview => "group_review",
            AgentKind::Consensus => "consensus",
            AgentKind::ErrorGrouping => "error_grouping",
        }
    }

    /// The built-in response schema id for this agent.
    pub fn default_schema(&self) -> &'static str {
        match self {
            AgentKind::Selection => "selection.v1",
            AgentKind::HeadAnalysis => "head_analysis.v1",
            AgentKind::Extraction => "extraction.v1",
            AgentKind::Critic => "critic.v1",
            AgentKind::GroupReview => "group_review.v1",
            AgentKind::Consensus => "consensus.v1",
            AgentKind::ErrorGrouping => "error_grouping.v1",
        }
    }
}

/// Shipped system prompt for an agent (`prompts/<kind>.txt`).
pub fn system_prompt(kind: AgentKind) -> &'static str {
    match kind {
        AgentKind::Selection => include_str!("../../prompts/selection.txt"),
        AgentKind::HeadAnalysis => include_str!("../../prompts/head_analysis.txt"),
        AgentKind::Extraction => include_str!("../../prompts/extraction.txt"),
        AgentKind::Critic => include_str!("../../prompts/critic.txt"),
        AgentKind::GroupReview => include_str!("../../prompts/group_review.txt"),
        AgentKind::Consensus => include_str!("../../prompts/consensus.txt"),
        AgentKind::ErrorGrouping => include_str!("../../prompts/error_grouping.txt"),
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelTier {
    Strong,
    Weak,
}

/// Review, combination and partitioning agents run on the strong tier;
/// the mechanical datasheet agents run on the weak tier.
pub fn route_tier(kind: AgentKind) -> ModelTier {
    match kind {
        AgentKind::GroupReview
        | AgentKind::Consensus
        | AgentKind::Selection
        | AgentKind::ErrorGrouping => ModelTier::Strong,
        AgentKind::Extraction | AgentKind::HeadAnalysis | AgentKind::Critic => ModelTier::Weak,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LiveHttp,
    Mock,
}

fn default_max_in_flight() -> usize {
    8
}

fn default_timeout_secs() -> f64 {
    120.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub strong_model: String,
    pub weak_model: String,
    /// Model for the consensus agent; the strong model when unset.
    #[serde(default)]
    pub consensus_model: Option<String>,
    #[serde(default)]
    pub fixture_path: Option<std::path::PathBuf>,
    /// Environment variable holding the API key for the live backend.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    /// Artificial per-call latency for the mock backend.
    #[serde(default)]
    pub mock_delay_ms: u64,
}

impl BackendConfig {
    pub fn mock(fixture_path: impl Into<std::path::PathBuf>) -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            strong_model: "strong-placeholder".into(),
            weak_model: "weak-placeholder".into(),
            consensus_model: None,
            fixture_path: Some(fixture_path.into()),
            api_key_env: None,
            max_in_flight: default_max_in_flight(),
            timeout_secs: default_timeout_secs(),
            mock_delay_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self.kind {
            BackendKind::LiveHttp if self.endpoint.as_deref().unwrap_or("").is_empty() => {
                Err("live_http backend requires `endpoint`".into())
            }
            BackendKind::Mock if self.fixture_path.is_none() => {
                Err("mock backend requires `fixture_path`".into())
            }
            _ if self.max_in_flight == 0 => Err("`max_in_flight` must be at least 1".into()),
            _ if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 => Err("`timeout_secs` must be positive".into()),
            _ => Ok(()),
        }
    }

    /// Model identifier used for `kind`.
    pub fn model_for(&self, kind: AgentKind) -> &str {
        if kind == AgentKind::Consensus {
            if let Some(m) = &self.consensus_model {
                return m;
            }
        }
        match route_tier(kind) {
            ModelTier::Strong => &self.strong_model,
            ModelTier::Weak => &self.weak_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRequest {
    pub agent_kind: AgentKind,
    pub tier: ModelTier,
    pub system_prompt: String,
    pub user_payload: String,
    pub response_schema_id: String,
    /// Run index for fan-out; distinguishes otherwise identical requests.
    pub seed: u64,
    /// Trace span id for this invocation.
    pub span: Option<String>,
}

impl AgentRequest {
    /// A request with the agent's default schema and routed tier.
    pub fn new(kind: AgentKind, system_prompt: impl Into<String>, user_payload: impl Into<String>) -> Self {
        Self {
            agent_kind: kind,
            tier: route_tier(kind),
            system_prompt: system_prompt.into(),
            user_payload: user_payload.into(),
            response_schema_id: kind.default_schema().to_string(),
            seed: 0,
            span: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_span(mut self, span: impl Into<String>) -> Self {
        self.span = Some(span.into());
        self
    }

    pub fn payload_digest(&self) -> String {
        short_digest(&self.user_payload, 16)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub tokens_in: u64,
    pub tokens_out: u64,
}

impl std::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.tokens_in += rhs.tokens_in;
        self.tokens_out += rhs.tokens_out;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentResponse {
    pub value: Value,
    pub usage: TokenUsage,
    pub latency: Duration,
    /// Backend calls made, including repairs (1..=1+MAX_REPAIRS).
    pub attempts: u32,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum GatewayError {
    #[error("response schema `{0}` is not registered")]
    UnknownSchema(String),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("{agent} response violated schema `{schema}` after {attempts} attempts: {last_error}")]
    SchemaViolationAfterRetries {
        agent: AgentKind,
        schema: String,
        attempts: u32,
        last_error: String,
        last_raw: String,
    },
    #[error("backend call timed out after {0:?}")]
    Timeout(Duration),
}

/// Shared entry point for agent calls.
pub struct LlmGateway {
    backend: Arc<dyn ChatBackend>,
    config: BackendConfig,
    schemas: SchemaRegistry,
    limiter: Semaphore,
    ledger: Mutex<UsageLedger>,
    tracer: Option<Tracer>,
}

impl LlmGateway {
    pub fn new(config: BackendConfig, backend: Arc<dyn ChatBackend>) -> Self {
        let permits = config.max_in_flight.max(1);
        Self {
            backend,
            config,
            schemas: SchemaRegistry::builtin(),
            limiter: Semaphore::new(permits),
            ledger: Mutex::new(UsageLedger::default()),
            tracer: None,
        }
    }

    /// Builds the backend named by `config.kind`.
    pub fn from_config(config: BackendConfig) -> Result<Self, String> {
        config.validate()?;
        let backend: Arc<dyn ChatBackend> = match config.kind {
            BackendKind::Mock => Arc::new(
                MockBackend::from_dir(config.fixture_path.clone().expect("validated"))
                    .with_delay(Duration::from_millis(config.mock_delay_ms)),
            ),
            BackendKind::LiveHttp => Arc::new(HttpBackend::new(
                config.endpoint.clone().expect("validated"),
                config.api_key_env.clone(),
                Duration::from_secs_f64(config.timeout_secs),
            )?),
        };
        Ok(Self::new(config, backend))
    }

    pub fn with_tracer(mut self, tracer: Tracer) -> Self {
        self.tracer = Some(tracer);
        self
    }

    pub fn with_schemas(mut self, schemas: SchemaRegistry) -> Self {
        self.schemas = schemas;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        &self.schemas
    }

    /// Snapshot of accumulated usage.
    pub fn usage(&self) -> UsageLedger {
        self.ledger.lock().expect("ledger poisoned").clone()
    }

    pub async fn complete_structured(&self, req: &AgentRequest) -> Result<AgentResponse, GatewayError> {
        if !self.schemas.contains(&req.response_schema_id) {
            return Err(GatewayError::UnknownSchema(req.response_schema_id.clone()));
        }
        let span_id = req.span.clone().unwrap_or_else(|| {
            format!("{}#{}-{}", req.agent_kind, req.payload_digest(), req.seed)
        });
        let mut span = self.tracer.as_ref().map(|t| t.start(span_id, req.agent_kind.as_str()));
        let started = Instant::now();
        let mut usage = TokenUsage::default();
        let mut call = BackendCall {
            agent_kind: req.agent_kind,
            model: self.config.model_for(req.agent_kind).to_string(),
            system_prompt: req.system_prompt.clone(),
            user_payload: req.user_payload.clone(),
            seed: req.seed,
            attempt: 0,
            repairs: Vec::new(),
        };

        let outcome = loop {
            let raw = match self.call_backend(&call).await {
                Ok(r) => r,
                Err(e) => break Err(e),
            };
            usage += raw.usage.unwrap_or_else(|| estimate_usage(&call, &raw.text));
            match parse_json(&raw.text)
                .and_then(|v| self.schemas.validate(&req.response_schema_id, &v).map(|_| v))
            {
                Ok(value) => break Ok(value),
                Err(err) if call.attempt < MAX_REPAIRS => {
                    tracing::debug!(agent = %req.agent_kind, attempt = call.attempt, %err, "repairing agent output");
                    call.repairs.push(RepairTurn {
                        previous: raw.text,
                        error: err,
                    });
                    call.attempt += 1;
                }
                Err(err) => {
                    break Err(GatewayError::SchemaViolationAfterRetries {
                        agent: req.agent_kind,
                        schema: req.response_schema_id.clone(),
                        attempts: call.attempt + 1,
                        last_error: err,
                        last_raw: raw.text,
                    })
                }
            }
        };
        let latency = started.elapsed();
        let attempts = call.attempt + 1;

        let backend_failed = matches!(
            outcome,
            Err(GatewayError::BackendUnavailable(_)) | Err(GatewayError::Timeout(_))
        );
        if !backend_failed || usage != TokenUsage::default() {
            self.ledger
                .lock()
                .expect("ledger poisoned")
                .record(req.agent_kind, usage, latency);
        }
        if let Some(s) = span.as_mut() {
            s.set("agent", req.agent_kind.as_str());
            s.set("model", call.model.as_str());
            s.set("seed", req.seed);
            s.set("attempt", attempts);
            s.set("tokens_in", usage.tokens_in);
            s.set("tokens_out", usage.tokens_out);
            s.set("ok", outcome.is_ok());
        }
        if let Some(s) = span {
            s.finish();
        }
        outcome.map(|value| AgentResponse {
            value,
            usage,
            latency,
            attempts,
        })
    }

    /// Validates, then decodes into `T`.
    pub async fn complete_typed<T: DeserializeOwned>(
        &self,
        req: &AgentRequest,
    ) -> Result<(T, AgentResponse), GatewayError> {
        let resp = self.complete_structured(req).await?;
        let typed = serde_json::from_value(resp.value.clone()).map_err(|e| {
            GatewayError::SchemaViolationAfterRetries {
                agent: req.agent_kind,
                schema: req.response_schema_id.clone(),
                attempts: resp.attempts,
                last_error: format!("decode: {e}"),
                last_raw: resp.value.to_string(),
            }
        })?;
        Ok((typed, resp))
    }

    async fn call_backend(&self, call: &BackendCall) -> Result<RawCompletion, GatewayError> {
        let _permit = self.limiter.acquire().await.expect("semaphore closed");
        let limit = Duration::from_secs_f64(self.config.timeout_secs);
        match tokio::time::timeout(limit, self.backend.chat(call)).await {
            Err(_) => Err(GatewayError::Timeout(limit)),
            Ok(Err(BackendError::Timeout)) => Err(GatewayError::Timeout(limit)),
            Ok(Err(BackendError::Unavailable(m))) => Err(GatewayError::BackendUnavailable(m)),
            Ok(Ok(raw)) => Ok(raw),
        }
    }
}

/// Rough token estimate (4 bytes per token) for backends that report none.
pub fn estimate_usage(call: &BackendCall, response: &str) -> TokenUsage {
    let mut input = call.system_prompt.len() + call.user_payload.len();
    for r in &call.repairs {
        input += r.previous.len() + r.error.len();
    }
    TokenUsage {
        tokens_in: input.div_ceil(4) as u64,
        tokens_out: response.len().div_ceil(4) as u64,
    }
}

/// Parses backend text as JSON, tolerating a surrounding Markdown code fence
/// or prose around a single top-level object.
pub fn parse_json(text: &str) -> Result<Value, String> {
    let t = text.trim();
    let unfenced = t
        .strip_prefix("```json")
        .or_else(|| t.strip_prefix("```"))
        .and_then(|r| r.trim_end().strip_suffix("```"))
        .map(str::trim)
        .unwrap_or(t);
    match serde_json::from_str::<Value>(unfenced) {
        Ok(v) => Ok(v),
        Err(first) => {
            let (Some(a), Some(b)) = (unfenced.find('{'), unfenced.rfind('}')) else {
                return Err(format!("response is not JSON: {first}"));
            };
            if a >= b {
                return Err(format!("response is not JSON: {first}"));
            }
            serde_json::from_str(&unfenced[a..=b]).map_err(|_| format!("response is not JSON: {first}"))
        }
    }
}
