//! Run manifests written beside every output.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::io::atomic_write;

pub const DETERMINISM_NOTE: &str = "Dataset builds and image exports are bit-exact for a given configuration and \
any worker count. Training runs on one thread in a fixed update order; results are reproducible on the same \
binary and CPU, while a different SIMD kernel selection in the matrix-multiply backend may change float rounding.";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config: Value,
    pub seeds: Vec<u64>,
    /// `(path, hex SHA-256)` of every input and output file.
    pub digests: Vec<(String, String)>,
    pub determinism_note: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seeds: Vec<u64>) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            seeds,
            digests: Vec::new(),
            determinism_note: DETERMINISM_NOTE.to_string(),
        }
    }

    pub fn digest_file(&mut self, path: &Path) -> std::io::Result<()> {
        use sha2::{Digest, Sha256};
        let bytes = std::fs::read(path)?;
        self.digests.push((path.display().to_string(), hex::encode(Sha256::digest(&bytes))));
        Ok(())
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        text.push(b'\n');
        atomic_write(path, &text)
    }
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_sits_beside_output() {
        assert_eq!(manifest_path(Path::new("/tmp/x/train.ccv")), PathBuf::from("/tmp/x/train.ccv.manifest.json"));
    }
}
