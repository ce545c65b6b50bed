//! Local OpenAI-compatible server for protocol tests.
//!
//! Answers `/v1/completions` and `/v1/chat/completions` from a [`MockSpec`],
//! validates every request body, tracks peak concurrency and can inject
//! error statuses.

use std::collections::{HashMap, VecDeque};
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::MockSpec;
use crate::mock::{Mock, MockResponse};
use crate::record::TokenLogprob;

#[derive(Debug, Clone)]
pub struct StubConfig {
    /// Required bearer token; `None` accepts any.
    pub api_key: Option<String>,
    /// Required model id; `None` accepts any.
    pub model_id: Option<String>,
    pub behaviour: MockSpec,
    /// Handling time per request, so overlapping requests are observable.
    pub latency: Duration,
    /// Statuses returned, in order, to the first valid requests.
    pub inject: Vec<u16>,
    pub workers: usize,
    /// When false, responses carry no log-probabilities.
    pub logprobs: bool,
    /// This many otherwise successful responses get a non-JSON body.
    pub malformed: usize,
}

impl StubConfig {
    pub fn new(behaviour: MockSpec) -> Self {
        Self {
            api_key: None,
            model_id: None,
            behaviour,
            latency: Duration::from_millis(5),
            inject: Vec::new(),
            workers: 16,
            logprobs: true,
            malformed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StubStats {
    pub requests: u64,
    pub served: u64,
    pub injected: u64,
    pub schema_errors: u64,
    pub auth_errors: u64,
    pub max_in_flight: usize,
}

struct State {
    config: StubConfig,
    mock: Mock,
    inject: Mutex<VecDeque<u16>>,
    malformed: AtomicUsize,
    requests: AtomicU64,
    served: AtomicU64,
    injected: AtomicU64,
    schema_errors: AtomicU64,
    auth_errors: AtomicU64,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    seen: Mutex<HashMap<[u8; 32], u64>>,
    bodies: Mutex<Vec<(String, Value)>>,
    problems: Mutex<Vec<String>>,
    stop: AtomicBool,
}

pub struct StubServer {
    server: Arc<tiny_http::Server>,
    state: Arc<State>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl StubServer {
    pub fn start(config: StubConfig) -> io::Result<Self> {
        let mock = Mock::new(&config.behaviour).map_err(io::Error::other)?;
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").map_err(io::Error::other)?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("stub is not on an IP socket"))?;
        let state = Arc::new(State {
            inject: Mutex::new(config.inject.iter().copied().collect()),
            malformed: AtomicUsize::new(config.malformed),
            mock,
            requests: AtomicU64::new(0),
            served: AtomicU64::new(0),
            injected: AtomicU64::new(0),
            schema_errors: AtomicU64::new(0),
            auth_errors: AtomicU64::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            seen: Mutex::new(HashMap::new()),
            bodies: Mutex::new(Vec::new()),
            problems: Mutex::new(Vec::new()),
            stop: AtomicBool::new(false),
            config,
        });
        let workers = (0..state.config.workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let state = Arc::clone(&state);
                std::thread::spawn(move || loop {
                    match server.recv() {
                        Ok(rq) => handle(&state, rq),
                        Err(_) if state.stop.load(Ordering::SeqCst) => break,
                        Err(_) => continue,
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            state,
            workers,
            addr,
        })
    }

    /// Base URL including `/v1`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn stats(&self) -> StubStats {
        let s = &self.state;
        StubStats {
            requests: s.requests.load(Ordering::SeqCst),
            served: s.served.load(Ordering::SeqCst),
            injected: s.injected.load(Ordering::SeqCst),
            schema_errors: s.schema_errors.load(Ordering::SeqCst),
            auth_errors: s.auth_errors.load(Ordering::SeqCst),
            max_in_flight: s.max_in_flight.load(Ordering::SeqCst),
        }
    }

    /// Every request body received, with its path.
    pub fn bodies(&self) -> Vec<(String, Value)> {
        self.state.bodies.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Reasons for rejected requests.
    pub fn problems(&self) -> Vec<String> {
        self.state.problems.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn inject(&self, statuses: &[u16]) {
        self.state
            .inject
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .extend(statuses.iter().copied());
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn handle(state: &State, mut rq: tiny_http::Request) {
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(now, Ordering::SeqCst);
    state.requests.fetch_add(1, Ordering::SeqCst);
    let mut body = Vec::new();
    let read = rq.as_reader().read_to_end(&mut body);
    std::thread::sleep(state.config.latency);
    let header = |name: &str| {
        rq.headers()
            .iter()
            .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
            .map(|h| h.value.as_str().to_string())
    };
    let (status, payload) = match read {
        Err(e) => (400, error_body(&format!("unreadable body: {e}"))),
        Ok(_) => answer(
            state,
            rq.method(),
            rq.url(),
            header("Authorization"),
            header("Content-Type"),
            &body,
        ),
    };
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    let response = tiny_http::Response::from_data(payload)
        .with_status_code(status)
        .with_header(
            tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                .expect("static header"),
        );
    let _ = rq.respond(response);
}

fn error_body(message: &str) -> Vec<u8> {
    serde_json::to_vec(&json!({"error": {"message": message}})).expect("json")
}

fn reject(state: &State, counter: &AtomicU64, status: u16, message: String) -> (u16, Vec<u8>) {
    counter.fetch_add(1, Ordering::SeqCst);
    let body = error_body(&message);
    state.problems.lock().unwrap_or_else(|e| e.into_inner()).push(message);
    (status, body)
}

fn answer(
    state: &State,
    method: &tiny_http::Method,
    url: &str,
    auth: Option<String>,
    content_type: Option<String>,
    body: &[u8],
) -> (u16, Vec<u8>) {
    if *method != tiny_http::Method::Post {
        return reject(state, &state.schema_errors, 405, format!("method {method} not allowed"));
    }
    if let Some(key) = &state.config.api_key {
        if auth.as_deref() != Some(&format!("Bearer {key}")) {
            return reject(state, &state.auth_errors, 401, "bad or missing bearer token".into());
        }
    }
    if !content_type.is_some_and(|c| c.starts_with("application/json")) {
        return reject(state, &state.schema_errors, 415, "content-type must be application/json".into());
    }
    let value: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return reject(state, &state.schema_errors, 400, format!("invalid json: {e}")),
    };
    let chat = match url {
        "/v1/completions" => false,
        "/v1/chat/completions" => true,
        other => return reject(state, &state.schema_errors, 404, format!("unknown path {other}")),
    };
    state
        .bodies
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .push((url.to_string(), value.clone()));
    let checked = if chat {
        validate_chat(&value)
    } else {
        validate_completions(&value)
    };
    if let Err(problem) = checked {
        return reject(state, &state.schema_errors, 400, problem);
    }
    if let Some(expected) = &state.config.model_id {
        if value["model"].as_str() != Some(expected) {
            return reject(state, &state.schema_errors, 404, format!("unknown model {}", value["model"]));
        }
    }
    if let Some(code) = state.inject.lock().unwrap_or_else(|e| e.into_inner()).pop_front() {
        state.injected.fetch_add(1, Ordering::SeqCst);
        return (code, error_body("injected failure"));
    }
    if state
        .malformed
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return (200, b"<html>overloaded</html>".to_vec());
    }
    let seed = {
        let digest: [u8; 32] = Sha256::digest(body).into();
        let mut seen = state.seen.lock().unwrap_or_else(|e| e.into_inner());
        let n = seen.entry(digest).or_insert(0);
        *n += 1;
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) ^ *n
    };
    let prompt = if chat {
        value["messages"]
            .as_array()
            .map(|ms| {
                ms.iter()
                    .filter_map(|m| m["content"].as_str())
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .unwrap_or_default()
    } else {
        value["prompt"].as_str().unwrap_or_default().to_string()
    };
    let max_tokens = value["max_tokens"].as_u64().unwrap_or(16) as u32;
    let response = match state.mock.respond(&prompt, max_tokens, seed) {
        Ok(r) => r,
        Err(e) => return (500, error_body(&e)),
    };
    let top = if !state.config.logprobs {
        None
    } else if chat {
        (value["logprobs"] == json!(true)).then(|| value["top_logprobs"].as_u64().unwrap_or(0) as usize)
    } else {
        value["logprobs"].as_u64().map(|n| n as usize)
    };
    let model = value["model"].clone();
    let payload = if chat {
        chat_body(&model, &response, top)
    } else {
        completion_body(&model, &response, top)
    };
    state.served.fetch_add(1, Ordering::SeqCst);
    (200, serde_json::to_vec(&payload).expect("json"))
}

/// Answer tokens with separators interleaved, as a tokenizer would split them.
fn token_stream(response: &MockResponse) -> Vec<TokenLogprob> {
    let mut out = Vec::new();
    for (i, t) in response.tokens.iter().enumerate() {
        if i > 0 {
            out.push(TokenLogprob {
                token: ",".into(),
                logprob: 0.0,
                alternatives: vec![crate::record::Alternative {
                    token: ",".into(),
                    logprob: 0.0,
                }],
            });
        }
        out.push(t.clone());
    }
    out
}

fn completion_body(model: &Value, response: &MockResponse, top: Option<usize>) -> Value {
    let logprobs = top.map(|k| {
        let stream = token_stream(response);
        json!({
            "tokens": stream.iter().map(|t| t.token.clone()).collect::<Vec<_>>(),
            "token_logprobs": stream.iter().map(|t| t.logprob).collect::<Vec<_>>(),
            "top_logprobs": stream.iter().map(|t| {
                t.alternatives.iter().take(k.max(1))
                    .map(|a| (a.token.clone(), json!(a.logprob)))
                    .collect::<Map<_, _>>()
            }).collect::<Vec<_>>(),
            "text_offset": Vec::<u64>::new(),
        })
    });
    json!({
        "id": "cmpl-stub",
        "object": "text_completion",
        "created": 0,
        "model": model,
        "choices": [{"index": 0, "text": response.text, "logprobs": logprobs, "finish_reason": "length"}],
    })
}

fn chat_body(model: &Value, response: &MockResponse, top: Option<usize>) -> Value {
    let logprobs = top.map(|k| {
        json!({
            "content": token_stream(response).iter().map(|t| json!({
                "token": t.token,
                "logprob": t.logprob,
                "top_logprobs": t.alternatives.iter().take(k)
                    .map(|a| json!({"token": a.token, "logprob": a.logprob}))
                    .collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    });
    json!({
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "created": 0,
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": response.text.trim_start()},
            "logprobs": logprobs,
            "finish_reason": "length",
        }],
    })
}

fn object<'a>(v: &'a Value, allowed: &[&str]) -> Result<&'a Map<String, Value>, String> {
    let map = v.as_object().ok_or("body is not an object")?;
    if let Some(key) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(format!("unexpected field {key:?}"));
    }
    Ok(map)
}

fn common(map: &Map<String, Value>) -> Result<(), String> {
    match map.get("model").and_then(Value::as_str) {
        Some(m) if !m.is_empty() => {}
        _ => return Err("model must be a non-empty string".into()),
    }
    match map.get("max_tokens").and_then(Value::as_u64) {
        Some(n) if n >= 1 => {}
        _ => return Err("max_tokens must be a positive integer".into()),
    }
    match map.get("temperature").and_then(Value::as_f64) {
        Some(t) if (0.0..=2.0).contains(&t) => Ok(()),
        _ => Err("temperature must be a number in [0, 2]".into()),
    }
}

/// Schema of a `/v1/completions` request.
pub fn validate_completions(v: &Value) -> Result<(), String> {
    let map = object(v, &["model", "prompt", "max_tokens", "temperature", "logprobs"])?;
    common(map)?;
    if !map.get("prompt").is_some_and(Value::is_string) {
        return Err("prompt must be a string".into());
    }
    match map.get("logprobs") {
        None => Ok(()),
        Some(n) if n.as_u64().is_some_and(|n| n <= 20) => Ok(()),
        Some(_) => Err("logprobs must be an integer in [0, 20]".into()),
    }
}

/// Schema of a `/v1/chat/completions` request.
pub fn validate_chat(v: &Value) -> Result<(), String> {
    let map = object(
        v,
        &["model", "messages", "max_tokens", "temperature", "logprobs", "top_logprobs"],
    )?;
    common(map)?;
    let messages = map
        .get("messages")
        .and_then(Value::as_array)
        .filter(|m| !m.is_empty())
        .ok_or("messages must be a non-empty list")?;
    for m in messages {
        let m = object(m, &["role", "content"])?;
        match m.get("role").and_then(Value::as_str) {
            Some("system" | "user" | "assistant") => {}
            _ => return Err("message role must be system, user or assistant".into()),
        }
        if !m.get("content").is_some_and(Value::is_string) {
            return Err("message content must be a string".into());
        }
    }
    let logprobs = match map.get("logprobs") {
        None => false,
        Some(Value::Bool(b)) => *b,
        Some(_) => return Err("logprobs must be a boolean".into()),
    };
    match map.get("top_logprobs") {
        None => Ok(()),
        Some(_) if !logprobs => Err("top_logprobs requires logprobs = true".into()),
        Some(n) if n.as_u64().is_some_and(|n| n <= 20) => Ok(()),
        Some(_) => Err("top_logprobs must be an integer in [0, 20]".into()),
    }
}
