use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Record of one run, written beside each file output as `<output>.manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub config_overrides: Value,
    pub outputs: Vec<String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new(command: &str, seed: Option<u64>, config_overrides: Value) -> Self {
        RunManifest {
            command: command.to_owned(),
            inputs: Vec::new(),
            seed,
            config_overrides,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        }
    }

    pub fn input(&mut self, p: Option<&Path>) {
        self.inputs.push(p.map_or_else(|| "-".to_owned(), |p| p.display().to_string()));
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Writes the manifest beside every recorded output.
    pub fn write(&self) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)? + "\n";
        for o in &self.outputs {
            std::fs::write(manifest_path(Path::new(o)), &text)?;
        }
        Ok(())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
