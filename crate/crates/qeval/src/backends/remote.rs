//! OpenAI-compatible HTTP backend with retry and exponential backoff.

use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use crate::error::BackendError;

use super::{enforce_input_limit, Backend, GenerationCall, GenerationResult, RetryPolicy};

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    #[serde(default)]
    message: Option<ChatMessage>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Remote chat-completions client. Chat roles are passed through and any
/// model-specific chat template is applied server-side; servers without a
/// chat route can be driven through `completion_wrapper`, which switches to
/// the raw completions route with `{prompt}` substituted.
pub struct RemoteBackend {
    backend_id: String,
    url: String,
    model: String,
    auth_token: Option<String>,
    retry: RetryPolicy,
    completion_wrapper: Option<String>,
    client: reqwest::blocking::Client,
}

impl RemoteBackend {
    pub fn new(
        endpoint: &str,
        model: &str,
        auth_env: Option<&str>,
        retry: RetryPolicy,
        completion_wrapper: Option<String>,
        timeout_secs: u64,
    ) -> Result<Self, BackendError> {
        let auth_token = match auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| BackendError::MissingAuth(var.to_string()))?,
            ),
            None => None,
        };
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with("/completions") {
            base.to_string()
        } else if completion_wrapper.is_some() {
            format!("{base}/v1/completions")
        } else {
            format!("{base}/v1/chat/completions")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(RemoteBackend {
            backend_id: format!("remote:{model}"),
            url,
            model: model.to_string(),
            auth_token,
            retry,
            completion_wrapper,
            client,
        })
    }

    fn build_body(&self, call: &GenerationCall<'_>, messages: &[crate::prompts::Message]) -> serde_json::Value {
        let params = call.params;
        let mut body = match &self.completion_wrapper {
            Some(wrapper) => {
                let joined = messages
                    .iter()
                    .map(|m| m.content.as_str())
                    .collect::<Vec<_>>()
                    .join("\n");
                json!({
                    "model": self.model,
                    "prompt": wrapper.replace("{prompt}", &joined),
                    "temperature": params.temperature,
                    "top_p": params.top_p,
                    "max_tokens": params.max_output_tokens,
                })
            }
            None => json!({
                "model": self.model,
                "messages": messages,
                "temperature": params.temperature,
                "top_p": params.top_p,
                "max_tokens": params.max_output_tokens,
            }),
        };
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, (bool, String)> {
        let mut request = self.client.post(&self.url).json(body);
        if let Some(token) = &self.auth_token {
            request = request.header("Authorization", format!("Bearer {token}"));
        }
        let response = request.send().map_err(|e| {
            // Connection-level failures (refused, timeout) are retryable.
            (true, e.to_string())
        })?;

        let status = response.status();
        if !status.is_success() {
            let retryable = status.as_u16() == 429 || status.is_server_error();
            let text = response.text().unwrap_or_default();
            return Err((retryable, format!("HTTP {status}: {text}")));
        }

        let parsed: ChatResponse = response
            .json()
            .map_err(|e| (false, format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or((false, "response has no choices".to_string()))?;
        let text = choice
            .message
            .and_then(|m| m.content)
            .or(choice.text)
            .unwrap_or_default();
        Ok(text)
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> &str {
        &self.backend_id
    }

    fn generate(&self, call: &GenerationCall<'_>) -> Result<GenerationResult, BackendError> {
        let started = Instant::now();
        let (messages, truncated) = enforce_input_limit(call.messages, call.params.max_input_tokens);
        let body = self.build_body(call, &messages);

        let attempts = self.retry.max_retries + 1;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.retry.backoff_base_ms.saturating_mul(1 << (attempt - 1));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.send_once(&body) {
                Ok(text) => {
                    return Ok(GenerationResult {
                        text,
                        latency_ms: started.elapsed().as_millis() as u64,
                        backend_id: self.backend_id.clone(),
                        truncated_input: truncated,
                    });
                }
                Err((retryable, message)) => {
                    if !retryable {
                        return Err(BackendError::Http {
                            backend: self.backend_id.clone(),
                            message,
                        });
                    }
                    last_error = message;
                }
            }
        }
        Err(BackendError::RetriesExhausted {
            backend: self.backend_id.clone(),
            attempts,
            message: last_error,
        })
    }
}
