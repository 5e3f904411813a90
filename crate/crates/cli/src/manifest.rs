//! Run manifests: every output file is accompanied by a JSON manifest whose
//! config echo is sufficient to reproduce the run bit-identically.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    /// Fully resolved configuration (flags merged over config file and
    /// defaults).
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputDigest>,
}

pub fn file_sha256(path: &Path) -> std::io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(subcommand: &str, config: serde_json::Value, seed: u64, wall_time_s: f64) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_s,
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, path: &Path) -> std::io::Result<()> {
        self.outputs.push(OutputDigest {
            path: path.to_string_lossy().into_owned(),
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    /// Manifest sits next to the (first) output file.
    pub fn manifest_path(out: &Path) -> PathBuf {
        let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }

    pub fn write_next_to(&self, out: &Path) -> std::io::Result<PathBuf> {
        let path = Self::manifest_path(out);
        fs::write(&path, serde_json::to_string_pretty(self).expect("manifest serializes"))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
