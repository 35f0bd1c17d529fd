use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce an output: tool version, the effective
/// configuration (after flag overrides) and its hash, seeds and input
/// digests. Deliberately free of timestamps and host names.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256: sha256_hex(config.to_toml().as_bytes()),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: config.clone(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    /// Records `path` and the digest of its current contents. Directories
    /// are digested through their manifest.
    pub fn input(mut self, path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(crate::data::corpus::MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("provenance is always representable as TOML")
    }

    /// Writes the block to `path` and echoes its header to stdout.
    pub fn write(&self, path: &Path, force: bool) -> Result<()> {
        super::write_output(path, self.to_toml().as_bytes(), force)?;
        println!(
            "provenance: {} {} config {} -> {}",
            self.tool,
            self.version,
            &self.config_sha256[..12],
            path.display()
        );
        Ok(())
    }
}

/// `<out>.provenance.toml` next to a file output.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    out.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn hash_tracks_the_effective_config() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.estimate.weights.lambda_p = 0.2;
        assert_ne!(Provenance::new("x", &a).config_sha256, Provenance::new("x", &b).config_sha256);
        assert_eq!(Provenance::new("x", &a).config_sha256, Provenance::new("y", &a).config_sha256);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(sidecar(Path::new("out/run.csv"), ".provenance.toml"), PathBuf::from("out/run.csv.provenance.toml"));
    }
}
