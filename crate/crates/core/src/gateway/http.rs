//! OpenAI-compatible chat-completions backend.
//!
//! Request: `POST {endpoint}/chat/completions`
//! `{"model", "messages": [{"role", "content"}...], "seed", "response_format": {"type": "json_object"}}`.
//! Repair turns are replayed as an assistant message (the malformed answer)
//! followed by a user message carrying the validation error.
//! Response: `choices[0].message.content`, with `usage.prompt_tokens` and
//! `usage.completion_tokens` when present.

use std::time::Duration;

use futures::future::{BoxFuture, FutureExt};
use serde_json::{json, Value};

use super::backend::{BackendCall, BackendError, ChatBackend, RawCompletion};
use super::TokenUsage;

pub const DEFAULT_API_KEY_ENV: &str = "SCHEMREV_API_KEY";

pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key_env: String,
}

impl HttpBackend {
    pub fn new(endpoint: String, api_key_env: Option<String>, timeout: Duration) -> Result<Self, String> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(Self {
            client,
            endpoint: endpoint.trim_end_matches('/').to_string(),
            api_key_env: api_key_env.unwrap_or_else(|| DEFAULT_API_KEY_ENV.to_string()),
        })
    }

    pub fn request_body(call: &BackendCall) -> Value {
        let mut messages = vec![
            json!({"role": "system", "content": call.system_prompt}),
            json!({"role": "user", "content": call.user_payload}),
        ];
        for r in &call.repairs {
            messages.push(json!({"role": "assistant", "content": r.previous}));
            messages.push(json!({"role": "user", "content": repair_prompt(&r.error)}));
        }
        json!({
            "model": call.model,
            "messages": messages,
            "seed": call.seed,
            "response_format": {"type": "json_object"},
        })
    }

    pub fn parse_response(body: &Value) -> Result<RawCompletion, BackendError> {
        let text = body["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| BackendError::Unavailable("response has no choices[0].message.content".into()))?;
        let usage = body.get("usage").and_then(|u| {
            Some(TokenUsage {
                tokens_in: u.get("prompt_tokens")?.as_u64()?,
                tokens_out: u.get("completion_tokens")?.as_u64()?,
            })
        });
        Ok(RawCompletion {
            text: text.to_string(),
            usage,
        })
    }
}

pub fn repair_prompt(error: &str) -> String {
    format!("Your previous response failed validation: {error}\nRespond again with corrected JSON only.")
}

impl ChatBackend for HttpBackend {
    fn chat<'a>(&'a self, call: &'a BackendCall) -> BoxFuture<'a, Result<RawCompletion, BackendError>> {
        async move {
            let mut req = self
                .client
                .post(format!("{}/chat/completions", self.endpoint))
                .json(&Self::request_body(call));
            if let Ok(key) = std::env::var(&self.api_key_env) {
                req = req.bearer_auth(key);
            }
            let resp = req.send().await.map_err(|e| {
                if e.is_timeout() {
                    BackendError::Timeout
                } else {
                    BackendError::Unavailable(e.to_string())
                }
            })?;
            let status = resp.status();
            if !status.is_success() {
                let body = resp.text().await.unwrap_or_default();
                let snippet: String = body.chars().take(200).collect();
                return Err(BackendError::Unavailable(format!("HTTP {status}: {snippet}")));
            }
            let body: Value = resp
                .json()
                .await
                .map_err(|e| BackendError::Unavailable(format!("invalid response body: {e}")))?;
            Self::parse_response(&body)
        }
        .boxed()
    }
}
