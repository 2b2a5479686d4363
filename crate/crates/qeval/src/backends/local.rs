//! Deterministic local backends used for testing and dry runs.

use std::collections::HashMap;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

use crate::error::BackendError;

use super::{enforce_input_limit, Backend, GenerationCall, GenerationResult};

fn result(backend_id: &str, text: String, truncated: bool, started: Instant) -> GenerationResult {
    GenerationResult {
        text,
        latency_ms: started.elapsed().as_millis() as u64,
        backend_id: backend_id.to_string(),
        truncated_input: truncated,
    }
}

/// Answers `Score: {gold}` for every instance it knows.
pub struct OracleBackend {
    gold: HashMap<String, f64>,
}

impl OracleBackend {
    pub fn new(gold: HashMap<String, f64>) -> Self {
        OracleBackend { gold }
    }

    fn gold_for(&self, id: &str) -> Result<f64, BackendError> {
        self.gold
            .get(id)
            .copied()
            .ok_or_else(|| BackendError::Config(format!("oracle has no gold score for {id}")))
    }
}

impl Backend for OracleBackend {
    fn id(&self) -> &str {
        "oracle"
    }

    fn generate(&self, call: &GenerationCall<'_>) -> Result<GenerationResult, BackendError> {
        let started = Instant::now();
        let (_, truncated) = enforce_input_limit(call.messages, call.params.max_input_tokens);
        let gold = self.gold_for(call.instance_id)?;
        Ok(result(self.id(), format!("Score: {gold}"), truncated, started))
    }
}

/// The oracle plus seeded uniform noise. The per-instance generator is
/// derived from (seed, instance id), so results do not depend on the order
/// in which a worker pool issues calls.
pub struct NoisyOracleBackend {
    gold: HashMap<String, f64>,
    halfwidth: f64,
    seed: u64,
}

impl NoisyOracleBackend {
    pub fn new(gold: HashMap<String, f64>, halfwidth: f64, seed: u64) -> Self {
        NoisyOracleBackend {
            gold,
            halfwidth,
            seed,
        }
    }

    fn noise_for(&self, instance_id: &str) -> f64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(instance_id.as_bytes());
        let digest = hasher.finalize();
        let mut rng = ChaCha8Rng::seed_from_u64(u64::from_le_bytes(
            digest[..8].try_into().expect("sha256 yields 32 bytes"),
        ));
        let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        self.halfwidth * (2.0 * unit - 1.0)
    }
}

impl Backend for NoisyOracleBackend {
    fn id(&self) -> &str {
        "noisy_oracle"
    }

    fn generate(&self, call: &GenerationCall<'_>) -> Result<GenerationResult, BackendError> {
        let started = Instant::now();
        let (_, truncated) = enforce_input_limit(call.messages, call.params.max_input_tokens);
        let gold = self
            .gold
            .get(call.instance_id)
            .copied()
            .ok_or_else(|| {
                BackendError::Config(format!("noisy oracle has no gold score for {}", call.instance_id))
            })?;
        let value = gold + self.noise_for(call.instance_id);
        Ok(result(self.id(), format!("Score: {value}"), truncated, started))
    }
}

/// Repeats the concatenated input content back verbatim.
pub struct EchoBackend;

impl Backend for EchoBackend {
    fn id(&self) -> &str {
        "echo"
    }

    fn generate(&self, call: &GenerationCall<'_>) -> Result<GenerationResult, BackendError> {
        let started = Instant::now();
        let (messages, truncated) = enforce_input_limit(call.messages, call.params.max_input_tokens);
        let text = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        Ok(result(self.id(), text, truncated, started))
    }
}

/// Canned response per instance id.
pub struct ScriptedBackend {
    table: HashMap<String, String>,
    default_text: String,
}

impl ScriptedBackend {
    pub fn new(table: HashMap<String, String>, default_text: String) -> Self {
        ScriptedBackend {
            table,
            default_text,
        }
    }

    /// The canned response for an id, or the configured default.
    pub fn lookup(&self, instance_id: &str) -> &str {
        self.table
            .get(instance_id)
            .map(String::as_str)
            .unwrap_or(&self.default_text)
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn generate(&self, call: &GenerationCall<'_>) -> Result<GenerationResult, BackendError> {
        let started = Instant::now();
        let (_, truncated) = enforce_input_limit(call.messages, call.params.max_input_tokens);
        Ok(result(
            self.id(),
            self.lookup(call.instance_id).to_string(),
            truncated,
            started,
        ))
    }
}
