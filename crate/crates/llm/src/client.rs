use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use flipscope_core::predtree::{NextTokenProvider, ProviderError};
use flipscope_core::BinarySequence;
use serde_json::{json, Value};

use crate::cache::Cache;
use crate::config::{ProviderConfig, ProviderKind};
use crate::limiter::Limiter;
use crate::mock::Mock;
use crate::record::{Alternative, CompletionRecord, Prompt, Request, TokenLogprob};
use crate::LlmError;

/// Tokens requested for a two-way readout. Two, so a leading separator token
/// does not hide the answer.
pub const READOUT_TOKENS: u32 = 2;

#[derive(Debug)]
pub struct Client {
    config: ProviderConfig,
    api_key: Option<String>,
    agent: Option<ureq::Agent>,
    mock: Option<Mock>,
    cache: Option<Cache>,
    limiter: Limiter,
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
}

/// Sampling-frequency estimate of p(token_b) against token_a.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledEstimate {
    pub p: f64,
    pub count_a: usize,
    pub count_b: usize,
    /// Responses starting with neither token; excluded from `p`.
    pub other: usize,
    pub request_hashes: Vec<String>,
}

impl Client {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let mut client = Self {
            limiter: Limiter::new(config.rate_limit),
            api_key: None,
            agent: None,
            mock: None,
            cache: None,
            network_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            config,
        };
        if client.config.kind.is_remote() {
            let key = std::env::var(&client.config.api_key_env)
                .map_err(|_| LlmError::MissingApiKey(client.config.api_key_env.clone()))?;
            client.api_key = Some(key);
            let agent: ureq::Agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(Duration::from_secs(client.config.timeout_secs)))
                .build()
                .into();
            client.agent = Some(agent);
        } else {
            let spec = client.config.mock_model.as_ref().expect("validated mock");
            client.mock = Some(Mock::new(spec).map_err(LlmError::Mock)?);
        }
        Ok(client)
    }

    pub fn with_cache(mut self, dir: impl Into<PathBuf>) -> Result<Self, LlmError> {
        self.cache = Some(Cache::open(dir)?);
        Ok(self)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn cache(&self) -> Option<&Cache> {
        self.cache.as_ref()
    }

    /// HTTP attempts made, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.cache_hits.load(Ordering::SeqCst)
    }

    /// Serve one request, from the cache when possible.
    pub fn request(&self, req: &Request) -> Result<CompletionRecord, LlmError> {
        let hash = req.hash(&self.config);
        if let Some(cache) = &self.cache {
            if let Some(record) = cache.get(&hash)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok(record);
            }
        }
        let record = match self.config.kind {
            ProviderKind::Mock => self.mock_record(req, hash)?,
            _ => self.remote_record(req, hash)?,
        };
        if let Some(cache) = &self.cache {
            cache.put(&record)?;
        }
        Ok(record)
    }

    /// `n` samples with the configured `max_tokens`, one request each.
    pub fn complete(&self, prompt: &Prompt, n: usize) -> Result<Vec<CompletionRecord>, LlmError> {
        self.complete_with(prompt, n, self.config.max_tokens, false)
    }

    pub fn complete_with(
        &self,
        prompt: &Prompt,
        n: usize,
        max_tokens: u32,
        logprobs: bool,
    ) -> Result<Vec<CompletionRecord>, LlmError> {
        let requests: Vec<Request> = (0..n as u64)
            .map(|sample_index| Request {
                prompt: prompt.clone(),
                max_tokens,
                logprobs,
                sample_index,
            })
            .collect();
        let workers = if self.config.kind.is_remote() {
            self.config.rate_limit.max_in_flight
        } else {
            1
        };
        fan_out(&requests, workers, |r| self.request(r))
            .into_iter()
            .collect()
    }

    /// Probability of `token_b` renormalized against `token_a`, read from the
    /// top alternatives of the first answer position naming either token.
    pub fn binary_next_prob(&self, prompt: &Prompt, token_a: &str, token_b: &str) -> Result<f64, LlmError> {
        self.binary_next_prob_traced(prompt, token_a, token_b).map(|(p, _)| p)
    }

    pub fn binary_next_prob_traced(
        &self,
        prompt: &Prompt,
        token_a: &str,
        token_b: &str,
    ) -> Result<(f64, CompletionRecord), LlmError> {
        let record = self.request(&Request {
            prompt: prompt.clone(),
            max_tokens: READOUT_TOKENS,
            logprobs: true,
            sample_index: 0,
        })?;
        let p = pairwise_probability(record.token_logprobs.as_deref().unwrap_or(&[]), token_a, token_b)?;
        Ok((p, record))
    }

    /// Fallback readout: the share of `n` sampled answers starting with
    /// `token_b`, among those starting with either token.
    pub fn sampled_next_prob(
        &self,
        prompt: &Prompt,
        token_a: &str,
        token_b: &str,
        n: usize,
    ) -> Result<SampledEstimate, LlmError> {
        let records = self.complete_with(prompt, n, READOUT_TOKENS, false)?;
        let mut est = sample_fraction(records.iter().map(|r| r.response_text.as_str()), token_a, token_b)?;
        est.request_hashes = records.into_iter().map(|r| r.request_hash).collect();
        Ok(est)
    }

    fn mock_record(&self, req: &Request, hash: String) -> Result<CompletionRecord, LlmError> {
        let mock = self.mock.as_ref().expect("mock client");
        let bytes = hex::decode(&hash).expect("hex digest");
        let seed = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        let response = mock
            .respond(&req.prompt.text(), req.max_tokens, seed)
            .map_err(LlmError::Mock)?;
        Ok(CompletionRecord {
            request_hash: hash,
            provider: self.config.identity(),
            prompt: req.prompt.clone(),
            sample_index: req.sample_index,
            response_text: response.text,
            token_logprobs: req.logprobs.then_some(response.tokens),
            timestamp: None,
            raw_body: None,
        })
    }

    fn remote_record(&self, req: &Request, hash: String) -> Result<CompletionRecord, LlmError> {
        let (path, body) = request_body(&self.config, req);
        let url = format!("{}{}", self.config.endpoint_url.trim_end_matches('/'), path);
        let payload = serde_json::to_vec(&body).expect("json body");
        let raw = self.post(&url, &payload)?;
        if let Some(cache) = &self.cache {
            cache.put_raw(&hash, &raw)?;
        }
        let (text, logprobs) = parse_response(self.config.kind, &raw).map_err(|message| LlmError::Protocol {
            message,
            raw: raw.clone(),
        })?;
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .ok();
        Ok(CompletionRecord {
            request_hash: hash,
            provider: self.config.identity(),
            prompt: req.prompt.clone(),
            sample_index: req.sample_index,
            response_text: text,
            token_logprobs: logprobs,
            timestamp,
            raw_body: Some(String::from_utf8_lossy(&raw).into_owned()),
        })
    }

    fn post(&self, url: &str, payload: &[u8]) -> Result<Vec<u8>, LlmError> {
        let agent = self.agent.as_ref().expect("remote client");
        let auth = format!("Bearer {}", self.api_key.as_deref().unwrap_or_default());
        let policy = self.config.retry;
        let mut attempts = Vec::new();
        for attempt in 1..=policy.max_attempts {
            let delay = policy.delay_ms(attempt);
            if delay > 0 {
                std::thread::sleep(Duration::from_millis(delay));
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                agent
                    .post(url)
                    .header("Authorization", &auth)
                    .header("Content-Type", "application/json")
                    .send(payload)
                    .and_then(|mut resp| {
                        let status = resp.status().as_u16();
                        resp.body_mut().read_to_vec().map(|body| (status, body))
                    })
            };
            match outcome {
                Ok((status, body)) if (200..300).contains(&status) => return Ok(body),
                Ok((status, body)) => {
                    let snippet: String = String::from_utf8_lossy(&body).chars().take(200).collect();
                    attempts.push(format!("attempt {attempt}: http {status}: {snippet}"));
                    log::warn!("{url}: http {status} on attempt {attempt}");
                    if status != 429 && status < 500 {
                        break;
                    }
                }
                Err(e) => {
                    attempts.push(format!("attempt {attempt}: transport: {e}"));
                    log::warn!("{url}: transport error on attempt {attempt}: {e}");
                }
            }
        }
        Err(LlmError::Provider { attempts })
    }
}

fn request_body(config: &ProviderConfig, req: &Request) -> (&'static str, Value) {
    match config.kind {
        ProviderKind::RemoteChat => {
            let mut body = json!({
                "model": config.model_id,
                "messages": req.prompt.messages(),
                "max_tokens": req.max_tokens,
                "temperature": config.temperature,
            });
            if req.logprobs {
                body["logprobs"] = json!(true);
                body["top_logprobs"] = json!(config.top_logprobs);
            }
            ("/chat/completions", body)
        }
        _ => {
            let mut body = json!({
                "model": config.model_id,
                "prompt": req.prompt.text(),
                "max_tokens": req.max_tokens,
                "temperature": config.temperature,
            });
            if req.logprobs {
                body["logprobs"] = json!(config.top_logprobs);
            }
            ("/completions", body)
        }
    }
}

type Parsed = (String, Option<Vec<TokenLogprob>>);

/// Extract text and token log-probabilities from an OpenAI-style body.
pub fn parse_response(kind: ProviderKind, raw: &[u8]) -> Result<Parsed, String> {
    let v: Value = serde_json::from_slice(raw).map_err(|e| format!("invalid json: {e}"))?;
    let choice = v
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or("missing choices[0]")?;
    match kind {
        ProviderKind::RemoteChat => {
            let text = choice
                .pointer("/message/content")
                .and_then(Value::as_str)
                .ok_or("missing message.content")?
                .to_string();
            let logprobs = match choice.pointer("/logprobs/content") {
                None | Some(Value::Null) => None,
                Some(content) => Some(
                    content
                        .as_array()
                        .ok_or("logprobs.content is not a list")?
                        .iter()
                        .map(chat_token)
                        .collect::<Result<_, _>>()?,
                ),
            };
            Ok((text, logprobs))
        }
        _ => {
            let text = choice
                .get("text")
                .and_then(Value::as_str)
                .ok_or("missing text")?
                .to_string();
            let logprobs = match choice.get("logprobs") {
                None | Some(Value::Null) => None,
                Some(lp) => Some(completion_tokens(lp)?),
            };
            Ok((text, logprobs))
        }
    }
}

fn number(v: Option<&Value>, what: &str) -> Result<f64, String> {
    v.and_then(Value::as_f64).ok_or(format!("missing {what}"))
}

fn chat_token(entry: &Value) -> Result<TokenLogprob, String> {
    let alternatives = match entry.get("top_logprobs") {
        None | Some(Value::Null) => Vec::new(),
        Some(list) => list
            .as_array()
            .ok_or("top_logprobs is not a list")?
            .iter()
            .map(|alt| {
                Ok(Alternative {
                    token: alt.get("token").and_then(Value::as_str).ok_or("missing token")?.to_string(),
                    logprob: number(alt.get("logprob"), "logprob")?,
                })
            })
            .collect::<Result<_, String>>()?,
    };
    Ok(TokenLogprob {
        token: entry.get("token").and_then(Value::as_str).ok_or("missing token")?.to_string(),
        logprob: number(entry.get("logprob"), "logprob")?,
        alternatives,
    })
}

fn completion_tokens(lp: &Value) -> Result<Vec<TokenLogprob>, String> {
    let tokens = lp.get("tokens").and_then(Value::as_array).ok_or("missing logprobs.tokens")?;
    let values = lp
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or("missing logprobs.token_logprobs")?;
    if tokens.len() != values.len() {
        return Err("tokens and token_logprobs differ in length".into());
    }
    let tops = lp.get("top_logprobs").and_then(Value::as_array);
    tokens
        .iter()
        .zip(values)
        .enumerate()
        .map(|(i, (tok, value))| {
            let mut alternatives = Vec::new();
            if let Some(map) = tops.and_then(|t| t.get(i)).and_then(Value::as_object) {
                for (token, logprob) in map {
                    alternatives.push(Alternative {
                        token: token.clone(),
                        logprob: number(Some(logprob), "top logprob")?,
                    });
                }
            }
            Ok(TokenLogprob {
                token: tok.as_str().ok_or("token is not a string")?.to_string(),
                logprob: number(Some(value), "token logprob")?,
                alternatives,
            })
        })
        .collect()
}

/// exp(lp_b) / (exp(lp_a) + exp(lp_b)) at the first position offering
/// either token. Variants equal after whitespace stripping are summed.
pub fn pairwise_probability(tokens: &[TokenLogprob], token_a: &str, token_b: &str) -> Result<f64, LlmError> {
    for entry in tokens {
        let mut candidates: Vec<(&str, f64)> = entry
            .alternatives
            .iter()
            .map(|a| (a.token.as_str(), a.logprob))
            .collect();
        if !candidates.iter().any(|(t, _)| *t == entry.token) {
            candidates.push((entry.token.as_str(), entry.logprob));
        }
        let pick = |want: &str| -> Vec<f64> {
            candidates
                .iter()
                .filter(|(t, _)| t.trim() == want)
                .map(|(_, lp)| *lp)
                .collect()
        };
        let (la, lb) = (pick(token_a), pick(token_b));
        if la.is_empty() && lb.is_empty() {
            continue;
        }
        let m = la.iter().chain(&lb).copied().fold(f64::NEG_INFINITY, f64::max);
        let sa: f64 = la.iter().map(|l| (l - m).exp()).sum();
        let sb: f64 = lb.iter().map(|l| (l - m).exp()).sum();
        return Ok(sb / (sa + sb));
    }
    Err(LlmError::MissingToken {
        token_a: token_a.to_string(),
        token_b: token_b.to_string(),
        alternatives: tokens
            .first()
            .map(|e| {
                e.alternatives
                    .iter()
                    .map(|a| (a.token.clone(), a.logprob))
                    .collect()
            })
            .unwrap_or_default(),
    })
}

/// Count answers by their first word.
pub fn sample_fraction<'a>(
    responses: impl IntoIterator<Item = &'a str>,
    token_a: &str,
    token_b: &str,
) -> Result<SampledEstimate, LlmError> {
    let (mut count_a, mut count_b, mut other) = (0, 0, 0);
    for text in responses {
        let word = text
            .trim_start_matches(|c: char| !c.is_alphanumeric())
            .split(|c: char| !c.is_alphanumeric())
            .next()
            .unwrap_or("");
        if word == token_b {
            count_b += 1;
        } else if word == token_a {
            count_a += 1;
        } else {
            other += 1;
        }
    }
    if count_a + count_b == 0 {
        return Err(LlmError::NoValidSamples { total: other });
    }
    Ok(SampledEstimate {
        p: count_b as f64 / (count_a + count_b) as f64,
        count_a,
        count_b,
        other,
        request_hashes: Vec::new(),
    })
}

/// Run `f` over `items` on up to `workers` threads, keeping input order.
pub fn fan_out<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("filled"))
        .collect()
}

/// Tree provider asking a [`Client`] for p(Tails) after each context.
pub struct ClientProvider<'a, F> {
    client: &'a Client,
    prompt: F,
    heads: String,
    tails: String,
    fallback_samples: Option<usize>,
}

impl<'a, F> ClientProvider<'a, F>
where
    F: Fn(&BinarySequence) -> Prompt + Send + Sync,
{
    pub fn new(client: &'a Client, prompt: F) -> Self {
        Self {
            client,
            prompt,
            heads: "Heads".into(),
            tails: "Tails".into(),
            fallback_samples: None,
        }
    }

    /// Estimate from `n` samples when log-probabilities lack both tokens.
    pub fn with_fallback(mut self, n: usize) -> Self {
        self.fallback_samples = Some(n);
        self
    }
}

impl<F> NextTokenProvider for ClientProvider<'_, F>
where
    F: Fn(&BinarySequence) -> Prompt + Send + Sync,
{
    fn prob_tails(&self, context: &BinarySequence) -> Result<f64, ProviderError> {
        let prompt = (self.prompt)(context);
        match self.client.binary_next_prob(&prompt, &self.heads, &self.tails) {
            Ok(p) => Ok(p),
            Err(LlmError::MissingToken { .. }) if self.fallback_samples.is_some() => self
                .client
                .sampled_next_prob(&prompt, &self.heads, &self.tails, self.fallback_samples.unwrap_or(0))
                .map(|e| e.p)
                .map_err(|e| ProviderError::new(e.to_string())),
            Err(e) => Err(ProviderError::new(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(token: &str, alts: &[(&str, f64)]) -> TokenLogprob {
        TokenLogprob {
            token: token.into(),
            logprob: alts.iter().find(|(t, _)| *t == token).map_or(-1.0, |a| a.1),
            alternatives: alts
                .iter()
                .map(|(t, l)| Alternative {
                    token: t.to_string(),
                    logprob: *l,
                })
                .collect(),
        }
    }

    #[test]
    fn equal_logprobs_give_half() {
        let e = [entry(" Heads", &[(" Heads", -0.9), (" Tails", -0.9), (" the", -3.0)])];
        assert_eq!(pairwise_probability(&e, "Heads", "Tails").unwrap(), 0.5);
    }

    #[test]
    fn whitespace_variants_are_summed() {
        let e = [entry(
            "Tails",
            &[("Tails", 0.25f64.ln()), (" Tails", 0.25f64.ln()), (" Heads", 0.5f64.ln())],
        )];
        let p = pairwise_probability(&e, "Heads", "Tails").unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        // Matching is case-sensitive.
        assert!(pairwise_probability(&e, "heads", "tails").is_err());
    }

    #[test]
    fn skips_positions_without_either_token() {
        let e = [
            entry(",", &[(",", -0.01)]),
            entry(" Tails", &[(" Tails", 0.7f64.ln()), (" Heads", 0.3f64.ln())]),
        ];
        let p = pairwise_probability(&e, "Heads", "Tails").unwrap();
        assert!((p - 0.7).abs() < 1e-12);
    }

    #[test]
    fn missing_tokens_report_alternatives() {
        let e = [entry(" Yes", &[(" Yes", -0.1), (" No", -2.5)])];
        match pairwise_probability(&e, "Non", "Random") {
            Err(LlmError::MissingToken { alternatives, .. }) => {
                assert_eq!(alternatives.len(), 2);
                assert_eq!(alternatives[0].0, " Yes");
            }
            other => panic!("{other:?}"),
        }
        assert!(pairwise_probability(&[], "a", "b").is_err());
    }

    #[test]
    fn extreme_logprobs_stay_finite() {
        let e = [entry(" Heads", &[(" Heads", -800.0), (" Tails", -801.0)])];
        let p = pairwise_probability(&e, "Heads", "Tails").unwrap();
        assert!((p - 1.0 / (1.0 + 1f64.exp())).abs() < 1e-12);
    }

    #[test]
    fn sampling_fraction() {
        let mut answers = vec![" Tails"; 62];
        answers.extend(vec!["Heads, Tails"; 138]);
        let est = sample_fraction(answers.iter().copied(), "Heads", "Tails").unwrap();
        assert_eq!(est.p, 0.31);
        let est = sample_fraction([" Tails", "banana", "Heads"], "Heads", "Tails").unwrap();
        assert_eq!((est.count_a, est.count_b, est.other), (1, 1, 1));
        assert_eq!(est.p, 0.5);
        assert!(sample_fraction(["x"], "Heads", "Tails").is_err());
    }

    #[test]
    fn parses_completion_bodies() {
        let body = br#"{"choices":[{"text":" Tails,","logprobs":{"tokens":[" Tails",","],
            "token_logprobs":[-0.5,-0.01],"top_logprobs":[{" Tails":-0.5," Heads":-0.97},{",":-0.01}]}}]}"#;
        let (text, lp) = parse_response(ProviderKind::RemoteCompletions, body).unwrap();
        assert_eq!(text, " Tails,");
        let lp = lp.unwrap();
        assert_eq!(lp.len(), 2);
        assert_eq!(lp[0].alternatives.len(), 2);
        let no_lp = br#"{"choices":[{"text":"Heads","logprobs":null}]}"#;
        assert_eq!(parse_response(ProviderKind::RemoteCompletions, no_lp).unwrap().1, None);
        assert!(parse_response(ProviderKind::RemoteCompletions, b"{\"choices\":[]}").is_err());
        assert!(parse_response(ProviderKind::RemoteCompletions, b"<html>").is_err());
    }

    #[test]
    fn parses_chat_bodies() {
        let body = br#"{"choices":[{"message":{"role":"assistant","content":"Random"},
            "logprobs":{"content":[{"token":"Random","logprob":-0.1,
            "top_logprobs":[{"token":"Random","logprob":-0.1},{"token":"Non","logprob":-2.4}]}]}}]}"#;
        let (text, lp) = parse_response(ProviderKind::RemoteChat, body).unwrap();
        assert_eq!(text, "Random");
        let p = pairwise_probability(&lp.unwrap(), "Non", "Random").unwrap();
        assert!((p - 1.0 / (1.0 + (-2.3f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn fan_out_keeps_order() {
        let items: Vec<usize> = (0..50).collect();
        assert_eq!(fan_out(&items, 4, |x| x * 2), items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }
}
