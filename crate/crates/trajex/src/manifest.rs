//! Run manifests: enough metadata next to every output directory to re-run
//! the command that produced it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Identifier of the random source; part of the reproducibility contract.
pub const RNG_ALGORITHM: &str = "chacha8";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub rng_algorithm: String,
    /// sha256 hex digests of the JSON-serialized configs that shaped the run.
    pub config_digests: Vec<(String, String)>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub runtime_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str) -> RunManifest {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed: None,
            rng_algorithm: RNG_ALGORITHM.to_string(),
            config_digests: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            runtime_seconds: 0.0,
        }
    }

    pub fn add_config<T: Serialize>(&mut self, name: &str, cfg: &T) {
        self.config_digests
            .push((name.to_string(), config_digest(cfg)));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// sha256 hex digest of a config's canonical JSON serialization.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
