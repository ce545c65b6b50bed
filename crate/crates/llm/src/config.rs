use flipscope_core::bayes::{BayesError, HypothesisSpace, PredictiveMode};
use flipscope_core::ModelSpec;
use serde::{Deserialize, Serialize};

use crate::LlmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteCompletions,
    RemoteChat,
    Mock,
}

impl ProviderKind {
    pub fn is_remote(self) -> bool {
        !matches!(self, ProviderKind::Mock)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimit {
    pub max_in_flight: usize,
    /// `None` means unthrottled.
    pub requests_per_minute: Option<u32>,
}

impl Default for RateLimit {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

/// Exponential backoff. Only transport errors, 429 and 5xx are retried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt` (1-based; attempt 1 has no delay).
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        if attempt <= 1 {
            return 0;
        }
        let factor = 1u64.checked_shl(attempt - 2).unwrap_or(u64::MAX);
        self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockHypothesis {
    pub model: ModelSpec,
    /// Unnormalized log2 prior weight.
    #[serde(default)]
    pub log2_weight: f64,
}

fn default_mode() -> PredictiveMode {
    PredictiveMode::Marginalize
}

/// What a mock provider simulates.
///
/// A plain model answers flip prompts with its own next-flip probability and
/// always judges sequences Random. A Bayesian mock answers flip prompts with
/// the posterior predictive and judgments with the posterior of its random
/// hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockSpec {
    Model {
        model: ModelSpec,
        /// Take the base rate from the prompt's requested P(Tails), as a
        /// model following instructions would.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        follow_prompt: bool,
    },
    Bayes {
        hypotheses: Vec<MockHypothesis>,
        random_index: usize,
        #[serde(default = "default_mode")]
        mode: PredictiveMode,
    },
}

impl MockSpec {
    pub fn model(model: ModelSpec) -> Self {
        MockSpec::Model {
            model,
            follow_prompt: false,
        }
    }

    /// Model mock whose base rate follows the prompt.
    pub fn following_prompt(model: ModelSpec) -> Self {
        MockSpec::Model {
            model,
            follow_prompt: true,
        }
    }

    /// Bayesian mock over `space`, keeping its priors.
    pub fn bayes(space: &HypothesisSpace, mode: PredictiveMode) -> Self {
        MockSpec::Bayes {
            hypotheses: space
                .hypotheses()
                .iter()
                .map(|h| MockHypothesis {
                    model: h.model.clone(),
                    log2_weight: h.log2_prior,
                })
                .collect(),
            random_index: space.random_index(),
            mode,
        }
    }

    pub fn space(&self) -> Result<Option<HypothesisSpace>, BayesError> {
        match self {
            MockSpec::Model { .. } => Ok(None),
            MockSpec::Bayes {
                hypotheses,
                random_index,
                ..
            } => HypothesisSpace::from_weights(
                hypotheses
                    .iter()
                    .map(|h| (h.model.clone(), h.log2_weight))
                    .collect(),
                *random_index,
            )
            .map(Some),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MockSpec::Model {
                model,
                follow_prompt,
            } => {
                if *follow_prompt {
                    format!("{model}~prompt")
                } else {
                    model.to_string()
                }
            }
            MockSpec::Bayes {
                hypotheses, mode, ..
            } => format!("bayes[{} hypotheses,{:?}]", hypotheses.len(), mode),
        }
    }
}

fn default_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}
fn default_temperature() -> f64 {
    1.0
}
fn default_max_tokens() -> u32 {
    120
}
fn default_top_logprobs() -> u32 {
    5
}
fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    /// Base URL, e.g. `https://api.openai.com/v1`; the endpoint path is appended.
    #[serde(default)]
    pub endpoint_url: String,
    #[serde(default)]
    pub model_id: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default)]
    pub rate_limit: RateLimit,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub mock_model: Option<MockSpec>,
    /// Folded into every request hash; mocks also draw their samples from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

impl ProviderConfig {
    fn base(kind: ProviderKind) -> Self {
        Self {
            kind,
            endpoint_url: String::new(),
            model_id: String::new(),
            api_key_env: default_key_env(),
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            top_logprobs: default_top_logprobs(),
            rate_limit: RateLimit::default(),
            retry: RetryPolicy::default(),
            mock_model: None,
            seed: 0,
            timeout_secs: default_timeout(),
        }
    }

    pub fn mock(spec: MockSpec) -> Self {
        Self {
            mock_model: Some(spec),
            ..Self::base(ProviderKind::Mock)
        }
    }

    pub fn remote(kind: ProviderKind, endpoint_url: &str, model_id: &str) -> Self {
        Self {
            endpoint_url: endpoint_url.to_string(),
            model_id: model_id.to_string(),
            ..Self::base(kind)
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let fail = |msg: &str| Err(LlmError::Config(msg.to_string()));
        if self.kind.is_remote() {
            if self.endpoint_url.trim().is_empty() {
                return fail("remote providers need endpoint_url");
            }
            if self.model_id.trim().is_empty() {
                return fail("remote providers need model_id");
            }
        } else {
            match &self.mock_model {
                None => return fail("mock providers need mock_model"),
                Some(spec) => {
                    if let MockSpec::Model { model, .. } = spec {
                        model.validate().map_err(|e| LlmError::Config(e.to_string()))?;
                    }
                    spec.space().map_err(|e| LlmError::Config(e.to_string()))?;
                }
            }
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be finite and >= 0");
        }
        if self.max_tokens == 0 {
            return fail("max_tokens must be >= 1");
        }
        if self.rate_limit.max_in_flight == 0 {
            return fail("rate_limit.max_in_flight must be >= 1");
        }
        if self.rate_limit.requests_per_minute == Some(0) {
            return fail("rate_limit.requests_per_minute must be >= 1");
        }
        if self.retry.max_attempts == 0 {
            return fail("retry.max_attempts must be >= 1");
        }
        Ok(())
    }

    /// Short identity string stored with every record.
    pub fn identity(&self) -> String {
        match self.kind {
            ProviderKind::Mock => format!(
                "mock:{}",
                self.mock_model.as_ref().map(MockSpec::label).unwrap_or_default()
            ),
            ProviderKind::RemoteCompletions => {
                format!("completions:{}@{}", self.model_id, self.endpoint_url)
            }
            ProviderKind::RemoteChat => format!("chat:{}@{}", self.model_id, self.endpoint_url),
        }
    }
}
