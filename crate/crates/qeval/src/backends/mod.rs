//! Uniform generation interface over remote chat-completion endpoints and
//! deterministic local test backends.

mod local;
mod remote;
pub mod stub;

use std::collections::HashMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::prompts::{Message, TemplateId};

pub use local::{EchoBackend, NoisyOracleBackend, OracleBackend, ScriptedBackend};
pub use remote::RemoteBackend;

/// Decoding and length controls passed to a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_input_tokens: u32,
    pub max_output_tokens: u32,
    pub seed: Option<u64>,
}

impl GenerationParams {
    /// Defaults: temperature 0.8, top_p 0.95, 512 output tokens, and an
    /// input budget of 1024 tokens (3000 for the few-shot template).
    pub fn for_template(id: TemplateId) -> Self {
        GenerationParams {
            temperature: 0.8,
            top_p: 0.95,
            max_input_tokens: if id.is_few_shot() { 3000 } else { 1024 },
            max_output_tokens: 512,
            seed: None,
        }
    }
}

/// Raw completion plus bookkeeping. Empty output text is recorded as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub latency_ms: u64,
    pub backend_id: String,
    pub truncated_input: bool,
}

/// One generation request. The instance id lets deterministic test backends
/// key their behaviour without parsing the prompt.
#[derive(Debug, Clone, Copy)]
pub struct GenerationCall<'a> {
    pub instance_id: &'a str,
    pub messages: &'a [Message],
    pub params: &'a GenerationParams,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, call: &GenerationCall<'_>) -> Result<GenerationResult, BackendError>;
}

/// Retry settings for remote calls: exponential backoff starting at
/// `backoff_base_ms`, doubling per attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_base_ms() -> u64 {
    1000
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }
}

/// Backend selection, loadable from a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// OpenAI-compatible chat completions over HTTP. When
    /// `completion_wrapper` is set, the raw completions route is used
    /// instead, with `{prompt}` in the wrapper replaced by the message text.
    Remote {
        endpoint: String,
        model: String,
        #[serde(default)]
        auth_env: Option<String>,
        #[serde(default)]
        retry: RetryPolicy,
        #[serde(default)]
        completion_wrapper: Option<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
    },
    /// Answers `Score: {gold}` for every instance.
    Oracle,
    /// Answers the gold score plus seeded uniform noise in
    /// [-noise_halfwidth, +noise_halfwidth].
    NoisyOracle { noise_halfwidth: f64, seed: u64 },
    /// Repeats the concatenated input back, reproducing the degenerate
    /// copy-the-prompt behaviour some instruction-tuned models show.
    Echo,
    /// Canned response per instance id, with a default for missing ids.
    Scripted {
        #[serde(default)]
        script_path: Option<PathBuf>,
        #[serde(default)]
        table: HashMap<String, String>,
        #[serde(default = "default_scripted_text")]
        default_text: String,
    },
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_scripted_text() -> String {
    "I cannot evaluate this.".to_string()
}

impl BackendConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, BackendError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    /// Stable identifier recorded in logs and reports.
    pub fn id(&self) -> String {
        match self {
            BackendConfig::Remote { model, .. } => format!("remote:{model}"),
            BackendConfig::Oracle => "oracle".to_string(),
            BackendConfig::NoisyOracle { .. } => "noisy_oracle".to_string(),
            BackendConfig::Echo => "echo".to_string(),
            BackendConfig::Scripted { .. } => "scripted".to_string(),
        }
    }
}

/// Instantiate a backend. `gold` maps instance ids to gold scores and feeds
/// the oracle backends; remote backends ignore it.
pub fn build_backend(
    config: &BackendConfig,
    gold: &HashMap<String, f64>,
) -> Result<Box<dyn Backend>, BackendError> {
    match config {
        BackendConfig::Remote {
            endpoint,
            model,
            auth_env,
            retry,
            completion_wrapper,
            timeout_secs,
        } => Ok(Box::new(RemoteBackend::new(
            endpoint,
            model,
            auth_env.as_deref(),
            retry.clone(),
            completion_wrapper.clone(),
            *timeout_secs,
        )?)),
        BackendConfig::Oracle => Ok(Box::new(OracleBackend::new(gold.clone()))),
        BackendConfig::NoisyOracle {
            noise_halfwidth,
            seed,
        } => Ok(Box::new(NoisyOracleBackend::new(
            gold.clone(),
            *noise_halfwidth,
            *seed,
        ))),
        BackendConfig::Echo => Ok(Box::new(EchoBackend)),
        BackendConfig::Scripted {
            script_path,
            table,
            default_text,
        } => {
            let mut merged = table.clone();
            if let Some(path) = script_path {
                let raw = std::fs::read_to_string(path)
                    .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                let from_file: HashMap<String, String> = serde_json::from_str(&raw)
                    .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
                merged.extend(from_file);
            }
            Ok(Box::new(ScriptedBackend::new(merged, default_text.clone())))
        }
    }
}

/// Approximate token count when no tokenizer is available: ceil(chars / 4).
pub fn approx_tokens(text: &str) -> u32 {
    (text.chars().count() as u32).div_ceil(4)
}

/// Enforce the input budget. Oversized inputs are truncated from the front
/// of the longest content block; returns the (possibly rewritten) messages
/// and whether truncation happened.
pub fn enforce_input_limit(messages: &[Message], max_input_tokens: u32) -> (Vec<Message>, bool) {
    let total: u32 = messages.iter().map(|m| approx_tokens(&m.content)).sum();
    if total <= max_input_tokens {
        return (messages.to_vec(), false);
    }
    let excess_chars = ((total - max_input_tokens) as usize) * 4;
    let longest = messages
        .iter()
        .enumerate()
        .max_by_key(|(_, m)| m.content.chars().count())
        .map(|(i, _)| i)
        .expect("non-empty message list");

    let mut out = messages.to_vec();
    let chars: Vec<char> = out[longest].content.chars().collect();
    let keep_from = excess_chars.min(chars.len().saturating_sub(1));
    out[longest].content = chars[keep_from..].iter().collect();
    (out, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_defaults_match_template_class() {
        let zero_shot = GenerationParams::for_template(TemplateId::T3);
        assert_eq!(zero_shot.temperature, 0.8);
        assert_eq!(zero_shot.top_p, 0.95);
        assert_eq!(zero_shot.max_input_tokens, 1024);
        assert_eq!(zero_shot.max_output_tokens, 512);
        let cot = GenerationParams::for_template(TemplateId::T7);
        assert_eq!(cot.max_input_tokens, 1024);
        let few_shot = GenerationParams::for_template(TemplateId::T8);
        assert_eq!(few_shot.max_input_tokens, 3000);
    }

    #[test]
    fn token_estimate_is_ceil_chars_over_4() {
        assert_eq!(approx_tokens(""), 0);
        assert_eq!(approx_tokens("abc"), 1);
        assert_eq!(approx_tokens("abcd"), 1);
        assert_eq!(approx_tokens("abcde"), 2);
    }

    #[test]
    fn within_limit_is_untouched() {
        let messages = vec![Message::user("short prompt")];
        let (out, truncated) = enforce_input_limit(&messages, 100);
        assert!(!truncated);
        assert_eq!(out, messages);
    }

    #[test]
    fn over_limit_truncates_longest_block_from_front() {
        let long = "x".repeat(100);
        let messages = vec![Message::user("tiny"), Message::user(long)];
        // Budget of 10 tokens = 40 chars: 1 (tiny) + 25 (long) = 26 over by 16.
        let (out, truncated) = enforce_input_limit(&messages, 10);
        assert!(truncated);
        assert_eq!(out[0].content, "tiny");
        assert_eq!(out[1].content.len(), 100 - 16 * 4);
        assert!(out[1].content.chars().all(|c| c == 'x'));
    }

    #[test]
    fn truncation_keeps_the_tail() {
        let content = format!("{}END", "y".repeat(397));
        let messages = vec![Message::user(content)];
        let (out, truncated) = enforce_input_limit(&messages, 10);
        assert!(truncated);
        assert!(out[0].content.ends_with("END"));
    }

    #[test]
    fn backend_config_roundtrips_through_json() {
        let cfg = BackendConfig::NoisyOracle {
            noise_halfwidth: 10.0,
            seed: 1,
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("noisy_oracle"));
        let back: BackendConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);

        let remote: BackendConfig = serde_json::from_str(
            r#"{"kind":"remote","endpoint":"http://localhost:8000","model":"m"}"#,
        )
        .unwrap();
        assert_eq!(remote.id(), "remote:m");
        if let BackendConfig::Remote { retry, .. } = &remote {
            assert_eq!(retry.max_retries, 3);
            assert_eq!(retry.backoff_base_ms, 1000);
        }
    }
}
