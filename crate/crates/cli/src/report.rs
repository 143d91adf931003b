use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Provenance record for one invocation, written to standard error.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: Vec<String>,
    pub inputs_sha256: String,
    pub outputs_sha256: String,
    pub seed: Option<u64>,
    pub elapsed_ms: f64,
    pub notes: Vec<String>,
    pub summary: Value,
}

#[derive(Default)]
pub struct InputDigest(Sha256);

impl InputDigest {
    pub fn add(&mut self, label: &str, bytes: &[u8]) {
        self.0.update((label.len() as u64).to_le_bytes());
        self.0.update(label.as_bytes());
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
