//! Run manifests: a JSON record of what a command read, wrote, and with
//! which configuration, written next to the command's primary output.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BelaError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub command: String,
    /// Flattened configuration, key to rendered value.
    pub config: BTreeMap<String, String>,
    /// Input path to SHA-256 of its content.
    pub inputs: BTreeMap<String, String>,
    /// Output path to SHA-256 of its content.
    pub outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub duration_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file =
        std::fs::File::open(path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| BelaError::io(path.display().to_string(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn set_config(&mut self, key: &str, value: impl ToString) {
        self.config.insert(key.to_string(), value.to_string());
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Manifest path for a primary output: `<output>.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "output".into());
        name.push_str(".manifest.json");
        output.with_file_name(name)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| BelaError::Invalid(format!("manifest serialization: {e}")))?;
        let tmp = path.with_extension("tmp");
        std::fs::File::create(&tmp)
            .and_then(|mut f| f.write_all(json.as_bytes()))
            .map_err(|e| BelaError::io(path.display().to_string(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| BelaError::io(path.display().to_string(), e))?;
        Ok(())
    }
}
