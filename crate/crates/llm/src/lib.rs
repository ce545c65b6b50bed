//! Completion providers for coin-flip experiments: OpenAI-compatible remote
//! endpoints, in-process mocks, a content-addressed disk cache, and a local
//! stub server for protocol tests.

mod cache;
mod client;
mod config;
mod limiter;
mod mock;
pub mod prompts;
mod record;
pub mod stub;

use thiserror::Error;

pub use cache::{write_atomic, Cache};
pub use client::{
    fan_out, pairwise_probability, parse_response, sample_fraction, Client, ClientProvider, SampledEstimate,
    READOUT_TOKENS,
};
pub use config::{MockHypothesis, MockSpec, ProviderConfig, ProviderKind, RateLimit, RetryPolicy};
pub use limiter::{Limiter, Permit};
pub use mock::{Mock, MockResponse};
pub use record::{Alternative, CompletionRecord, Message, Prompt, Request, TokenLogprob};

/// Generation responses with fewer parsed flips than this are malformed.
pub const MIN_VALID_FLIPS: usize = 5;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("environment variable {0} with the API key is not set")]
    MissingApiKey(String),
    #[error("provider failed after {} attempts: {}", attempts.len(), attempts.join("; "))]
    Provider { attempts: Vec<String> },
    #[error("malformed response body: {message}")]
    Protocol { message: String, raw: Vec<u8> },
    #[error("neither {token_a:?} nor {token_b:?} among alternatives {alternatives:?}")]
    MissingToken {
        token_a: String,
        token_b: String,
        alternatives: Vec<(String, f64)>,
    },
    #[error("no sampled answer started with either token ({total} answers)")]
    NoValidSamples { total: usize },
    #[error("mock provider: {0}")]
    Mock(String),
    #[error("cache: {0}")]
    Io(#[from] std::io::Error),
}
