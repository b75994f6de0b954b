//! Chat-completion client and the LLM-backed evaluator.
//!
//! Wire format: `POST {endpoint}` with
//! `{"model", "messages": [{"role": "user", "content"}], "temperature"}` and a
//! bearer token read from the configured environment variable. Replies are
//! read from `choices[0].message.content`. Status 429 and 5xx, timeouts and
//! connection failures are retried with exponential backoff.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::{EvalError, EvaluatorBackend, MoveRequest, Score, WinRates};
use crate::catalog::{Category, Logic, Strategy};
use crate::engine::{Board, Player, Position};
use crate::prompting::{
    parse_position, parse_score, parse_win_rates, render_move_prompt, render_score_prompt,
    render_win_rate_prompt, PromptTemplate, DEFAULT_RULES,
};

pub const DEFAULT_TOKEN_ENV: &str = "GOMOKU_LLM_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub token_env: String,
    pub max_in_flight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "deepseek-chat".into(),
            temperature: 0.0,
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_base_ms: 500,
            token_env: DEFAULT_TOKEN_ENV.into(),
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid llm config: {0}")]
    InvalidConfig(String),
    #[error("request timed out")]
    Timeout,
    #[error("rate limited (HTTP 429)")]
    RateLimited,
    #[error("server error (HTTP {0})")]
    ServerError(u16),
    #[error("authentication rejected (HTTP {0})")]
    AuthError(u16),
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("gave up after {attempts} attempts; last error: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            LlmError::Timeout | LlmError::RateLimited | LlmError::ServerError(_) | LlmError::Transport(_)
        )
    }
}

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Gate {
        Gate {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.free.lock().expect("gate poisoned") += 1;
        self.gate.cv.notify_one();
    }
}

#[derive(Debug)]
pub struct LlmClient {
    config: LlmConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
    gate: Gate,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Result<LlmClient, LlmError> {
        if config.timeout_secs.is_nan() || config.timeout_secs <= 0.0 {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        if config.endpoint.is_empty() {
            return Err(LlmError::InvalidConfig("endpoint is empty".into()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::InvalidConfig(e.to_string()))?;
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Ok(LlmClient {
            gate: Gate::new(config.max_in_flight),
            config,
            token,
            http,
        })
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Send `prompt` and return the reply text, retrying retryable failures
    /// up to `max_retries` times.
    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.gate.acquire();
                self.attempt(prompt)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self
                        .config
                        .backoff_base_ms
                        .saturating_mul(1u64 << (attempt - 1).min(16));
                    thread::sleep(Duration::from_millis(delay));
                }
                Err(e) if e.is_retryable() => {
                    return Err(LlmError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, prompt: &str) -> Result<String, LlmError> {
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
        });
        let mut req = self.http.post(&self.config.endpoint).json(&body);
        if let Some(token) = &self.token {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                LlmError::Timeout
            } else {
                LlmError::Transport(e.to_string())
            }
        })?;
        match status {
            200..=299 => extract_content(&text),
            401 | 403 => Err(LlmError::AuthError(status)),
            429 => Err(LlmError::RateLimited),
            500..=599 => Err(LlmError::ServerError(status)),
            _ => Err(LlmError::Rejected { status, body: text }),
        }
    }
}

fn extract_content(body: &str) -> Result<String, LlmError> {
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| LlmError::MalformedResponse("missing choices[0].message.content".into()))
}

/// Evaluator that delegates every capability to a chat-completion model.
#[derive(Debug)]
pub struct LlmBackend {
    client: LlmClient,
    template: PromptTemplate,
    rules: String,
}

impl LlmBackend {
    pub fn new(client: LlmClient) -> Self {
        LlmBackend {
            client,
            template: PromptTemplate::default(),
            rules: DEFAULT_RULES.to_string(),
        }
    }

    pub fn with_prompts(client: LlmClient, template: PromptTemplate, rules: String) -> Self {
        LlmBackend {
            client,
            template,
            rules,
        }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }
}

impl EvaluatorBackend for LlmBackend {
    fn tag(&self) -> &str {
        "llm"
    }

    fn propose_move(&self, request: &MoveRequest<'_>) -> Result<Position, EvalError> {
        let reply = match request.guidance {
            Some(g) => self.client.complete(g.prompt)?,
            None => {
                // Playing without a chosen pair: ask for general best play.
                let strategy = Strategy {
                    id: 0,
                    name: "general-play".into(),
                    category: Category::BasicTactics,
                    description: "Weigh every attacking and defensive option and play the strongest move.".into(),
                };
                let logic = Logic {
                    id: 0,
                    name: "comparative".into(),
                    description: "Compare candidate moves and pick the one with the better result.".into(),
                };
                let prompt = render_move_prompt(
                    &self.template,
                    &self.rules,
                    request.board,
                    request.player,
                    &strategy,
                    &logic,
                );
                self.client.complete(&prompt)?
            }
        };
        Ok(parse_position(&reply, request.board.size())?)
    }

    fn score_position(&self, board: &Board, pos: Position, player: Player) -> Result<Score, EvalError> {
        if !board.is_empty_at(pos) {
            return Err(EvalError::IllegalPosition(pos));
        }
        let reply = self.client.complete(&render_score_prompt(board, pos, player))?;
        Ok(parse_score(&reply)?)
    }

    fn estimate_win_rates(&self, board: &Board, mover: Player) -> Result<WinRates, EvalError> {
        let reply = self.client.complete(&render_win_rate_prompt(board, mover))?;
        Ok(parse_win_rates(&reply, mover)?)
    }
}
