//! Run digests and derived seeds.
//!
//! Every output file gets a `<name>.provenance.json` sidecar naming the
//! command, a digest of its configuration and the content digest of each
//! input. Paths and timestamps are deliberately left out so that reruns
//! in different directories produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

/// Stage seed derived from the root seed and a label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 yields 32 bytes"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| docqa::Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub command: &'static str,
    pub config_digest: String,
    pub params: Value,
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &'static str, params: Value) -> Self {
        Self {
            command,
            config_digest: String::new(),
            params,
            inputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, name: &str, path: &Path) -> CliResult<Self> {
        self.inputs.insert(name.to_string(), file_digest(path)?);
        Ok(self)
    }

    fn finish(mut self) -> Self {
        // serde_json maps are sorted, so this encoding is canonical.
        let canonical = serde_json::json!({
            "command": self.command,
            "params": self.params,
            "inputs": self.inputs,
        });
        self.config_digest = sha256_hex(canonical.to_string().as_bytes());
        self
    }

    /// Writes the sidecar next to each of `outputs`.
    pub fn write_for(self, outputs: &[&Path]) -> CliResult<()> {
        let prov = self.finish();
        let mut body = serde_json::to_string_pretty(&prov).expect("provenance serializes");
        body.push('\n');
        for out in outputs {
            let path = sidecar_path(out);
            fs::write(&path, &body).map_err(|e| docqa::Error::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    output.with_file_name(name)
}
