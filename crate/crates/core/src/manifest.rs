//! Run manifests: the config, its hash, code version, seeds, timestamps,
//! and the per-module decisions that shaped the run. Every output file
//! references its manifest hash, and a manifest re-runs to byte-identical
//! outputs.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::rng::fnv1a;

/// Per-module decision log embedded in the manifest.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DecisionLog {
    pub saliency_method: String,
    pub batch_size: usize,
    pub k_clusters: usize,
    /// Calibrated Borda directions per (strategy, seed), when calibrated.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub borda_directions: Vec<(String, Vec<i8>)>,
    /// Algorithm-2 context label queries per (strategy, seed).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_queries: Vec<(String, u64, u64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub switch_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub config_hash: String,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub decisions: DecisionLog,
    /// The full configuration; re-running from the manifest reproduces the
    /// outputs byte for byte.
    pub config: serde_json::Value,
}

/// Stable content hash of a canonical config serialization.
pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).unwrap_or_default();
    format!("{:016x}", fnv1a(canonical.as_bytes()))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(config: serde_json::Value, seeds: Vec<u64>, decisions: DecisionLog) -> Self {
        RunManifest {
            manifest_version: 1,
            config_hash: config_hash(&config),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds,
            started_unix: unix_now(),
            finished_unix: 0,
            decisions,
            config,
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix = unix_now();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = serde_json::json!({"x": 1, "y": [1, 2]});
        let b = serde_json::json!({"x": 1, "y": [1, 2]});
        let c = serde_json::json!({"x": 2, "y": [1, 2]});
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
    }
}
