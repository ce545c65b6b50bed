use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{MockSpec, ProviderConfig, ProviderKind};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prompt {
    Text(String),
    Chat(Vec<Message>),
}

impl Prompt {
    /// Flattened text; chat messages are joined by newlines.
    pub fn text(&self) -> String {
        match self {
            Prompt::Text(t) => t.clone(),
            Prompt::Chat(messages) => messages
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }

    pub fn messages(&self) -> Vec<Message> {
        match self {
            Prompt::Text(t) => vec![Message::new("user", t.clone())],
            Prompt::Chat(messages) => messages.clone(),
        }
    }
}

impl From<&str> for Prompt {
    fn from(s: &str) -> Self {
        Prompt::Text(s.to_string())
    }
}

impl From<String> for Prompt {
    fn from(s: String) -> Self {
        Prompt::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alternative {
    pub token: String,
    pub logprob: f64,
}

/// One generated token with its natural-log probability and the top
/// alternatives returned at that position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
    #[serde(default)]
    pub alternatives: Vec<Alternative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub request_hash: String,
    pub provider: String,
    pub prompt: Prompt,
    pub sample_index: u64,
    pub response_text: String,
    pub token_logprobs: Option<Vec<TokenLogprob>>,
    /// Unix seconds of receipt; `None` for mock responses.
    pub timestamp: Option<u64>,
    /// Response body exactly as received, for remote providers.
    pub raw_body: Option<String>,
}

/// One request to a provider. Each sample index is a distinct request.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub prompt: Prompt,
    pub max_tokens: u32,
    pub logprobs: bool,
    pub sample_index: u64,
}

#[derive(Serialize)]
struct HashedFields<'a> {
    kind: ProviderKind,
    endpoint_url: &'a str,
    model_id: &'a str,
    temperature: f64,
    max_tokens: u32,
    logprobs: bool,
    top_logprobs: u32,
    mock_model: Option<&'a MockSpec>,
    seed: u64,
    prompt: &'a Prompt,
    sample_index: u64,
}

impl Request {
    /// Hex SHA-256 over every field that can change the response.
    pub fn hash(&self, config: &ProviderConfig) -> String {
        let fields = HashedFields {
            kind: config.kind,
            endpoint_url: config.endpoint_url.trim_end_matches('/'),
            model_id: &config.model_id,
            temperature: config.temperature,
            max_tokens: self.max_tokens,
            logprobs: self.logprobs,
            top_logprobs: if self.logprobs { config.top_logprobs } else { 0 },
            mock_model: config.mock_model.as_ref(),
            seed: config.seed,
            prompt: &self.prompt,
            sample_index: self.sample_index,
        };
        let bytes = serde_json::to_vec(&fields).expect("request fields serialize");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use flipscope_core::ModelSpec;

    fn request(sample: u64) -> Request {
        Request {
            prompt: "[ Heads,".into(),
            max_tokens: 8,
            logprobs: true,
            sample_index: sample,
        }
    }

    #[test]
    fn hash_depends_on_request_fields_only() {
        let mut config = ProviderConfig::mock(MockSpec::model(ModelSpec::bernoulli(0.5).unwrap()));
        let h = request(0).hash(&config);
        assert_eq!(h, request(0).hash(&config));
        assert_eq!(h.len(), 64);
        assert_ne!(h, request(1).hash(&config));

        config.rate_limit.max_in_flight = 9;
        config.api_key_env = "OTHER".into();
        config.retry.max_attempts = 2;
        assert_eq!(h, request(0).hash(&config));

        config.temperature = 0.5;
        assert_ne!(h, request(0).hash(&config));
        config.temperature = 1.0;
        config.seed = 3;
        assert_ne!(h, request(0).hash(&config));
        config.seed = 0;
        config.mock_model = Some(MockSpec::model(ModelSpec::bernoulli(0.25).unwrap()));
        assert_ne!(h, request(0).hash(&config));
    }

    #[test]
    fn prompt_forms() {
        let chat = Prompt::Chat(vec![Message::new("system", "a"), Message::new("user", "b")]);
        assert_eq!(chat.text(), "a\nb");
        assert_eq!(Prompt::from("x").messages(), vec![Message::new("user", "x")]);
        let json = serde_json::to_string(&chat).unwrap();
        assert_eq!(serde_json::from_str::<Prompt>(&json).unwrap(), chat);
        assert_eq!(serde_json::to_string(&Prompt::from("x")).unwrap(), "\"x\"");
    }
}
