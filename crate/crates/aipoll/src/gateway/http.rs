//! OpenAI-compatible chat-completions client.

use std::time::Duration;

use aipoll_core::payload::ExpectedSchema;
use serde_json::{json, Value};

use super::{BackendError, ChatBackend, ChatRequest};
use crate::config::BackendConfig;
use crate::error::{Error, Result};

/// Reads an API key from the named environment variable. Keys are never
/// taken from files.
pub fn api_key(var: &str) -> Result<String> {
    match std::env::var(var) {
        Ok(k) if !k.trim().is_empty() => Ok(k),
        _ => Err(Error::Config(format!("environment variable {var} is not set"))),
    }
}

pub(crate) fn agent(timeout_secs: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(timeout_secs)))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Status codes that will not succeed on retry.
fn is_fatal_status(status: u16) -> bool {
    matches!(status, 400 | 401 | 403 | 404 | 422)
}

/// POSTs a JSON body with bearer auth and returns the decoded JSON reply.
pub(crate) fn post_json(agent: &ureq::Agent, endpoint: &str, key: &str, body: &Value) -> Result<Value, BackendError> {
    let response = agent
        .post(endpoint)
        .header("Authorization", &format!("Bearer {key}"))
        .header("Content-Type", "application/json")
        .send(body.to_string());
    let mut response = response.map_err(|e| BackendError::Transient(e.to_string()))?;
    let status = response.status().as_u16();
    let text = response.body_mut().read_to_string().map_err(|e| BackendError::Transient(e.to_string()))?;
    if is_fatal_status(status) {
        return Err(BackendError::Fatal(format!("HTTP {status}: {}", snippet(&text))));
    }
    if !(200..300).contains(&status) {
        return Err(BackendError::Transient(format!("HTTP {status}: {}", snippet(&text))));
    }
    serde_json::from_str(&text).map_err(|e| BackendError::Transient(format!("undecodable body: {e}")))
}

fn snippet(text: &str) -> String {
    text.chars().take(200).collect()
}

/// JSON schema handed to the structured-output mode.
pub fn response_schema(schema: ExpectedSchema, cardinality: usize) -> Value {
    let answer = match schema {
        ExpectedSchema::ScoreWithJustification => ("score", json!({"type": "integer"})),
        ExpectedSchema::DistributionWithJustification | ExpectedSchema::DistributionOnly => (
            "distribution",
            json!({"type": "array", "items": {"type": "number"}, "minItems": cardinality, "maxItems": cardinality}),
        ),
    };
    json!({
        "type": "object",
        "properties": {"justification": {"type": "string"}, answer.0: answer.1},
        "required": ["justification", answer.0],
        "additionalProperties": false,
    })
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    key: String,
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        Ok(HttpBackend {
            agent: agent(cfg.timeout_secs),
            endpoint: cfg.endpoint.clone(),
            model: cfg.model_name.clone(),
            temperature: cfg.temperature,
            key: api_key(&cfg.api_key_env)?,
        })
    }

    fn body(&self, request: &ChatRequest<'_>) -> Value {
        json!({
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": request.prompt}],
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": "poll_answer",
                    "strict": true,
                    "schema": response_schema(request.schema, request.cardinality),
                },
            },
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest<'_>) -> Result<String, BackendError> {
        let reply = post_json(&self.agent, &self.endpoint, &self.key, &self.body(request))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transient("reply has no message content".into()))
    }
}
