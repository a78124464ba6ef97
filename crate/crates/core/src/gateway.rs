//! Provider-agnostic completion gateway.
//!
//! Two providers share one interface: a live HTTP chat-completion adapter
//! (generic wire contract, credentials via environment) and a deterministic
//! simulated respondent used for all offline verification. Retry with
//! exponential backoff and jitter applies to transient transport failures
//! only; refusals and auth failures are surfaced immediately.

use std::collections::BTreeMap;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::persona::{derive_rng, standard_normal, PromptBundle};
use crate::study::{Measure, ResponseType};

/// Environment variable holding the live API key. The value is read at
/// request time and never logged.
pub const API_KEY_ENV: &str = "REPLAB_API_KEY";
/// Environment variable holding the live endpoint URL.
pub const API_URL_ENV: &str = "REPLAB_API_URL";

pub const DEFAULT_MODEL: &str = "claude-3-5-sonnet-20240620";
pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication failure: {0}")]
    Auth(String),
    #[error("provider declined to answer: {0}")]
    ProviderRefusal(String),
    #[error("image stimuli unsupported by this provider: {0}")]
    ImageUnsupported(String),
    #[error("simulated respondent has no parameters for measure {0:?}")]
    ModelCoverage(String),
    #[error("invalid provider configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Simulated,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    /// Fraction of the backoff randomized away, in [0, 1].
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_backoff: Duration::from_millis(500),
            jitter: 0.25,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ProviderConfig {
    pub provider_kind: ProviderKind,
    pub model_name: String,
    pub temperature: f64,
    pub max_parallel: usize,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            provider_kind: ProviderKind::Simulated,
            model_name: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_parallel: 8,
            retry: RetryPolicy::default(),
            timeout: Duration::from_secs(60),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_parallel < 1 {
            return Err(GatewayError::Config("max_parallel must be >= 1".into()));
        }
        Ok(())
    }
}

/// Structured view of the prompt needed by the simulated respondent:
/// which measures are asked, which condition levels apply, and the
/// persona's attributes.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RequestContext {
    pub condition_levels: BTreeMap<String, String>,
    pub persona_attributes: BTreeMap<String, String>,
    pub measures: Vec<Measure>,
}

/// One isolated completion request. `request_id` is the idempotency key;
/// no request carries conversation history from any other persona.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CompletionRequest {
    pub request_id: String,
    pub prompt: PromptBundle,
    pub context: RequestContext,
}

/// A completion backend. Implementations must be safe for concurrent
/// submission.
pub trait CompletionProvider: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}

/// Submit a request through the provider, retrying transient failures per
/// the config's retry policy.
pub fn submit_completion(
    request: &CompletionRequest,
    provider: &dyn CompletionProvider,
    config: &ProviderConfig,
) -> Result<String, GatewayError> {
    config.validate()?;
    let mut attempts = 0;
    loop {
        attempts += 1;
        match provider.complete(request) {
            Ok(text) => return Ok(text),
            Err(GatewayError::Transport { message, .. }) => {
                if attempts >= config.retry.max_attempts {
                    return Err(GatewayError::Transport { attempts, message });
                }
                std::thread::sleep(backoff_delay(&config.retry, attempts, &request.request_id));
            }
            Err(other) => return Err(other),
        }
    }
}

fn backoff_delay(retry: &RetryPolicy, attempt: u32, request_id: &str) -> Duration {
    let base = retry.base_backoff.as_secs_f64() * 2f64.powi(attempt.saturating_sub(1) as i32);
    let mut rng = derive_rng(attempt as u64, &["backoff", request_id]);
    let jitter = 1.0 + retry.jitter * (rng.gen::<f64>() * 2.0 - 1.0);
    Duration::from_secs_f64((base * jitter).max(0.0))
}

// ---------------------------------------------------------------------------
// Live adapter
// ---------------------------------------------------------------------------

/// Transport-level failure. `retryable` distinguishes timeouts, rate limits,
/// and 5xx-class responses from permanent errors.
#[derive(Debug, Clone)]
pub struct TransportFailure {
    pub message: String,
    pub retryable: bool,
    pub auth: bool,
}

/// Wire request for the generic chat-completion contract.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct WireRequest {
    pub model: String,
    pub temperature: f64,
    pub system: String,
    pub messages: Vec<WireMessage>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct WireMessage {
    pub role: String,
    pub content: Vec<WireContent>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireContent {
    Text { text: String },
    Image { media_type: String, data: String },
}

/// Abstraction over the HTTP layer so the retry and shaping logic is
/// testable with injected faults.
pub trait Transport: Sync {
    fn send(&self, url: &str, api_key: &str, body: &WireRequest)
        -> Result<String, TransportFailure>;
}

/// Blocking HTTPS transport.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        HttpTransport {
            client: reqwest::blocking::Client::builder()
                .timeout(timeout)
                .build()
                .expect("http client"),
        }
    }
}

impl Transport for HttpTransport {
    fn send(
        &self,
        url: &str,
        api_key: &str,
        body: &WireRequest,
    ) -> Result<String, TransportFailure> {
        let response = self
            .client
            .post(url)
            .header("x-api-key", api_key)
            .header("content-type", "application/json")
            .json(body)
            .send()
            .map_err(|e| TransportFailure {
                message: if e.is_timeout() {
                    "request timed out".to_string()
                } else {
                    "connection error".to_string()
                },
                retryable: true,
                auth: false,
            })?;
        let status = response.status();
        let text = response.text().unwrap_or_default();
        if status.is_success() {
            Ok(text)
        } else if status.as_u16() == 401 || status.as_u16() == 403 {
            Err(TransportFailure {
                message: format!("status {status}"),
                retryable: false,
                auth: true,
            })
        } else {
            Err(TransportFailure {
                message: format!("status {status}"),
                retryable: status.as_u16() == 429 || status.is_server_error(),
                auth: false,
            })
        }
    }
}

/// Live chat-completion provider. Request shaping is isolated here; the
/// rest of the pipeline never sees provider specifics.
pub struct LiveProvider<T: Transport> {
    pub config: ProviderConfig,
    pub transport: T,
    pub url: String,
}

impl LiveProvider<HttpTransport> {
    /// Construct from environment. Fails with `Auth` when no key is set.
    pub fn from_env(config: ProviderConfig) -> Result<Self, GatewayError> {
        // probe the key early so misconfiguration surfaces before dispatch
        std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Auth(format!("{API_KEY_ENV} is not set")))?;
        let url = std::env::var(API_URL_ENV)
            .map_err(|_| GatewayError::Config(format!("{API_URL_ENV} is not set")))?;
        let timeout = config.timeout;
        Ok(LiveProvider {
            config,
            transport: HttpTransport::new(timeout),
            url,
        })
    }
}

impl<T: Transport> LiveProvider<T> {
    /// Build the wire request for a prompt. Image attachments are inlined
    /// as base64; video attachments are not supported on this contract.
    pub fn shape_request(&self, request: &CompletionRequest) -> Result<WireRequest, GatewayError> {
        use base64::Engine;
        let mut content = Vec::new();
        let prompt = &request.prompt;
        for (text, stimulus) in prompt
            .stimulus_block
            .iter()
            .zip(stimulus_payloads(&request.context, prompt))
        {
            match stimulus {
                Some((kind, path)) if kind == crate::study::StimulusKind::Image => {
                    let bytes = std::fs::read(&path).map_err(|e| {
                        GatewayError::ImageUnsupported(format!("{path}: {e}"))
                    })?;
                    content.push(WireContent::Image {
                        media_type: guess_media_type(&path).to_string(),
                        data: base64::engine::general_purpose::STANDARD.encode(bytes),
                    });
                }
                Some((kind, path)) if kind == crate::study::StimulusKind::Video => {
                    return Err(GatewayError::ImageUnsupported(format!(
                        "video attachment {path} cannot be sent on the chat-completion contract"
                    )));
                }
                _ => content.push(WireContent::Text { text: text.clone() }),
            }
        }
        for q in &prompt.question_block {
            content.push(WireContent::Text { text: q.clone() });
        }
        Ok(WireRequest {
            model: self.config.model_name.clone(),
            temperature: self.config.temperature,
            system: prompt.system_instructions.clone(),
            messages: vec![WireMessage {
                role: "user".to_string(),
                content,
            }],
        })
    }
}

// Attachment info is not carried inside PromptBundle text; the live adapter
// re-derives it from markers of the form "[image attachment: path]".
fn stimulus_payloads(
    _context: &RequestContext,
    prompt: &PromptBundle,
) -> Vec<Option<(crate::study::StimulusKind, String)>> {
    prompt
        .stimulus_block
        .iter()
        .map(|text| {
            let first_line = text.lines().next().unwrap_or("");
            if let Some(rest) = first_line.strip_prefix("[image attachment: ") {
                rest.strip_suffix(']')
                    .map(|p| (crate::study::StimulusKind::Image, p.to_string()))
            } else if let Some(rest) = first_line.strip_prefix("[video attachment: ") {
                rest.strip_suffix(']')
                    .map(|p| (crate::study::StimulusKind::Video, p.to_string()))
            } else {
                None
            }
        })
        .collect()
}

fn guess_media_type(path: &str) -> &'static str {
    let lower = path.to_lowercase();
    if lower.ends_with(".png") {
        "image/png"
    } else if lower.ends_with(".gif") {
        "image/gif"
    } else if lower.ends_with(".webp") {
        "image/webp"
    } else {
        "image/jpeg"
    }
}

impl<T: Transport> CompletionProvider for LiveProvider<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let api_key = std::env::var(API_KEY_ENV)
            .map_err(|_| GatewayError::Auth(format!("{API_KEY_ENV} is not set")))?;
        let wire = self.shape_request(request)?;
        match self.transport.send(&self.url, &api_key, &wire) {
            Ok(text) => {
                if text.trim().is_empty() {
                    Err(GatewayError::ProviderRefusal("empty response".into()))
                } else {
                    Ok(text)
                }
            }
            Err(f) if f.auth => Err(GatewayError::Auth(f.message)),
            Err(f) if f.retryable => Err(GatewayError::Transport {
                attempts: 1,
                message: f.message,
            }),
            Err(f) => Err(GatewayError::ProviderRefusal(f.message)),
        }
    }
}

// ---------------------------------------------------------------------------
// Simulated respondent
// ---------------------------------------------------------------------------

/// Ground-truth latent-response model for offline runs. Each answer is
/// drawn as base mean + condition offset + attribute offsets + persona
/// noise + residual noise, then discretized to the measure's scale.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulatedRespondentModel {
    /// measure_id -> base mean in scale units.
    pub base_means: BTreeMap<String, f64>,
    /// measure_id -> ("factor=level" -> offset).
    #[serde(default)]
    pub condition_offsets: BTreeMap<String, BTreeMap<String, f64>>,
    /// "attribute=value" -> offset applied to every measure.
    #[serde(default)]
    pub attribute_modifiers: BTreeMap<String, f64>,
    /// Between-persona noise sd, drawn once per request.
    pub persona_noise_sd: f64,
    /// Residual noise sd, drawn per measure.
    pub residual_noise_sd: f64,
}

impl SimulatedRespondentModel {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.persona_noise_sd < 0.0 || self.residual_noise_sd < 0.0 {
            return Err(GatewayError::Config("noise sds must be >= 0".into()));
        }
        Ok(())
    }
}

/// Deterministic respondent: byte-identical output for identical
/// (request_id, seed, model).
pub struct SimulatedProvider {
    pub model: SimulatedRespondentModel,
    pub seed: u64,
}

impl CompletionProvider for SimulatedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        simulate_completion(request, &self.model, self.seed)
    }
}

/// Render the simulated persona's answers in the same textual format the
/// prompt's directives demand.
pub fn simulate_completion(
    request: &CompletionRequest,
    model: &SimulatedRespondentModel,
    seed: u64,
) -> Result<String, GatewayError> {
    model.validate()?;
    let ctx = &request.context;
    for m in &ctx.measures {
        if !model.base_means.contains_key(&m.measure_id) {
            return Err(GatewayError::ModelCoverage(m.measure_id.clone()));
        }
    }

    let mut persona_rng = derive_rng(seed, &["sim-persona", &request.request_id]);
    let persona_noise = model.persona_noise_sd * standard_normal(&mut persona_rng);

    let attribute_offset: f64 = ctx
        .persona_attributes
        .iter()
        .filter_map(|(name, value)| model.attribute_modifiers.get(&format!("{name}={value}")))
        .sum();

    let mut lines = Vec::with_capacity(ctx.measures.len());
    for (i, m) in ctx.measures.iter().enumerate() {
        let mut latent = model.base_means[&m.measure_id] + persona_noise + attribute_offset;
        if let Some(offsets) = model.condition_offsets.get(&m.measure_id) {
            for (factor, level) in &ctx.condition_levels {
                if let Some(delta) = offsets.get(&format!("{factor}={level}")) {
                    latent += delta;
                }
            }
        }
        let mut rng = derive_rng(seed, &["sim-resid", &request.request_id, &m.measure_id]);
        latent += model.residual_noise_sd * standard_normal(&mut rng);

        let answer = match &m.response_type {
            ResponseType::Likert { min, max, .. } => {
                let v = latent.round().clamp(*min as f64, *max as f64) as i64;
                format!("{v}")
            }
            ResponseType::NumericOpen { min, .. } => {
                // truncation floor: the scale has a hard lower bound
                let floor = min.unwrap_or(0.0);
                format!("{:.2}", latent.max(floor))
            }
            ResponseType::Choice { options } => {
                let idx = latent.round().clamp(1.0, options.len() as f64) as i64;
                format!("{idx}")
            }
            ResponseType::FreeText => format!("My overall impression is about {latent:.1} out of 10."),
        };
        lines.push(format!("Q{}: {answer}", i + 1));
    }
    Ok(lines.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn likert_measure(id: &str) -> Measure {
        Measure {
            measure_id: id.to_string(),
            prompt_text: "How pure does this product seem?".to_string(),
            response_type: ResponseType::Likert {
                min: 1,
                max: 7,
                low_anchor: "not at all".to_string(),
                high_anchor: "very".to_string(),
            },
        }
    }

    fn request_with(measures: Vec<Measure>) -> CompletionRequest {
        CompletionRequest {
            request_id: "run:0".to_string(),
            prompt: PromptBundle {
                system_instructions: "embody".to_string(),
                stimulus_block: vec!["a package".to_string()],
                question_block: vec!["Q1: ...".to_string()],
                blind_list: Default::default(),
            },
            context: RequestContext {
                condition_levels: [("packaging".to_string(), "simple".to_string())].into(),
                persona_attributes: Default::default(),
                measures,
            },
        }
    }

    fn noiseless_model(mu: f64) -> SimulatedRespondentModel {
        SimulatedRespondentModel {
            base_means: [("m1".to_string(), mu)].into(),
            condition_offsets: Default::default(),
            attribute_modifiers: Default::default(),
            persona_noise_sd: 0.0,
            residual_noise_sd: 0.0,
        }
    }

    #[test]
    fn noiseless_likert_answers_the_mean() {
        let req = request_with(vec![likert_measure("m1")]);
        let text = simulate_completion(&req, &noiseless_model(4.0), 1).unwrap();
        assert_eq!(text, "Q1: 4");
    }

    #[test]
    fn simulated_output_is_deterministic() {
        let req = request_with(vec![likert_measure("m1")]);
        let mut model = noiseless_model(4.0);
        model.persona_noise_sd = 1.0;
        model.residual_noise_sd = 0.5;
        let a = simulate_completion(&req, &model, 7).unwrap();
        let b = simulate_completion(&req, &model, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_completion(&req, &model, 8).unwrap();
        // different seed, different draws (mean 4, sd > 1: collisions possible
        // but the full text rarely matches; accept equality only of format)
        assert!(c.starts_with("Q1: "));
    }

    #[test]
    fn missing_measure_parameters_error() {
        let req = request_with(vec![likert_measure("other")]);
        assert!(matches!(
            simulate_completion(&req, &noiseless_model(4.0), 1),
            Err(GatewayError::ModelCoverage(id)) if id == "other"
        ));
    }

    struct FlakyProvider {
        failures_before_success: u32,
        calls: AtomicU32,
    }

    impl CompletionProvider for FlakyProvider {
        fn complete(&self, _request: &CompletionRequest) -> Result<String, GatewayError> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst);
            if call < self.failures_before_success {
                Err(GatewayError::Transport {
                    attempts: 1,
                    message: "injected fault".to_string(),
                })
            } else {
                Ok("Q1: 4".to_string())
            }
        }
    }

    fn fast_retry_config() -> ProviderConfig {
        ProviderConfig {
            retry: RetryPolicy {
                max_attempts: 5,
                base_backoff: Duration::from_millis(0),
                jitter: 0.0,
            },
            ..ProviderConfig::default()
        }
    }

    #[test]
    fn retries_twice_then_succeeds_with_three_attempts() {
        let provider = FlakyProvider {
            failures_before_success: 2,
            calls: AtomicU32::new(0),
        };
        let req = request_with(vec![likert_measure("m1")]);
        let text = submit_completion(&req, &provider, &fast_retry_config()).unwrap();
        assert_eq!(text, "Q1: 4");
        assert_eq!(provider.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn exhausted_retries_report_attempt_count() {
        let provider = FlakyProvider {
            failures_before_success: 100,
            calls: AtomicU32::new(0),
        };
        let req = request_with(vec![likert_measure("m1")]);
        match submit_completion(&req, &provider, &fast_retry_config()) {
            Err(GatewayError::Transport { attempts, .. }) => assert_eq!(attempts, 5),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    struct RefusingProvider;
    impl CompletionProvider for RefusingProvider {
        fn complete(&self, _request: &CompletionRequest) -> Result<String, GatewayError> {
            Err(GatewayError::ProviderRefusal("declined".to_string()))
        }
    }

    #[test]
    fn refusals_are_not_retried() {
        let req = request_with(vec![likert_measure("m1")]);
        assert!(matches!(
            submit_completion(&req, &RefusingProvider, &fast_retry_config()),
            Err(GatewayError::ProviderRefusal(_))
        ));
    }

    #[test]
    fn live_provider_without_credentials_is_auth_error() {
        std::env::remove_var(API_KEY_ENV);
        let err = LiveProvider::from_env(ProviderConfig {
            provider_kind: ProviderKind::Live,
            ..ProviderConfig::default()
        })
        .err()
        .expect("must fail without credentials");
        assert!(matches!(err, GatewayError::Auth(_)));
    }

    #[test]
    fn temperature_bounds_enforced() {
        let config = ProviderConfig {
            temperature: 2.5,
            ..ProviderConfig::default()
        };
        assert!(config.validate().is_err());
    }
}
