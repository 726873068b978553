//! Run manifests. Every artifact-producing command writes exactly one,
//! recording the command, seed, input digests, outputs, and the effective
//! configuration, so any artifact can be reproduced by replaying commands.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::sha256_hex;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    /// Input path -> sha256 of its bytes.
    pub input_digests: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    pub tool_version: String,
    /// The only field allowed to differ between identically seeded runs.
    pub wall_clock_secs: f64,
    /// Effective settings after merging flags, config file, and defaults.
    pub effective_config: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            config_path: None,
            seed,
            input_digests: BTreeMap::new(),
            output_paths: Vec::new(),
            tool_version: TOOL_VERSION.to_string(),
            wall_clock_secs: 0.0,
            effective_config: serde_json::Value::Null,
        }
    }

    pub fn digest_input(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        self.input_digests
            .insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(())
    }

    pub fn record_output(&mut self, path: &Path) {
        self.output_paths.push(path.display().to_string());
    }

    pub fn set_config<T: Serialize>(&mut self, config: &T) -> Result<()> {
        self.effective_config = serde_json::to_value(config)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.txt");
        std::fs::write(&input, b"abc").unwrap();
        let mut m = RunManifest::new("test", 7);
        m.digest_input(&input).unwrap();
        assert_eq!(
            m.input_digests[&input.display().to_string()],
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let mut m = RunManifest::new("train", 42);
        m.record_output(&dir.path().join("checkpoint.json"));
        m.set_config(&serde_json::json!({"epochs": 3})).unwrap();
        m.wall_clock_secs = 1.5;
        m.save(&path).unwrap();
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.tool_version, TOOL_VERSION);
    }

    #[test]
    fn missing_input_is_an_error() {
        let mut m = RunManifest::new("x", 0);
        assert!(m.digest_input(Path::new("/definitely/not/here")).is_err());
    }
}
