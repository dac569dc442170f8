use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::io::write_json;
use crate::Common;

pub const MANIFEST_FILE: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

/// Record of one invocation, written to `<out>/manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: u32,
    pub command: String,
    pub tool_version: String,
    pub parameters: serde_json::Value,
    pub common: Common,
    /// SHA-256 of every input file, keyed by path as given.
    pub input_hashes: BTreeMap<String, String>,
    pub output_paths: Vec<PathBuf>,
    pub summary: serde_json::Value,
    pub exit_code: u8,
    pub error: Option<String>,
    pub wall_time_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, common: &Common, parameters: serde_json::Value) -> Self {
        RunManifest {
            version: MANIFEST_VERSION,
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            parameters,
            common: common.clone(),
            input_hashes: BTreeMap::new(),
            output_paths: Vec::new(),
            summary: serde_json::Value::Null,
            exit_code: 0,
            error: None,
            wall_time_seconds: 0.0,
        }
    }

    pub fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        let digest = Sha256::digest(bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.input_hashes.insert(path.display().to_string(), hex);
    }

    /// Writes `value` to `<out>/<name>` and records the path.
    pub fn output<T: Serialize>(&mut self, out: &Path, name: &str, value: &T) -> Result<()> {
        let path = out.join(name);
        write_json(&path, value)?;
        self.output_paths.push(path);
        Ok(())
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        write_json(&out.join(MANIFEST_FILE), self)
    }
}
