//! JSON and binary artifacts plus the manifest written next to every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lsr_core::encoder::EncoderParams;
use lsr_core::index::InvertedIndex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LsrError, Result};
use crate::formats::{read_text, write_text};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| LsrError::Io { path: path.into(), source })?;
    Ok(sha256_hex(&bytes))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

/// Reads JSON; a shape mismatch is a usage error.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| LsrError::usage(format!("{}: {e}", path.display())))
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderParams> {
    let p: EncoderParams = read_json(path)?;
    p.validate().map_err(|e| LsrError::usage(format!("{}: {e}", path.display())))?;
    Ok(p)
}

pub fn write_index(path: &Path, index: &InvertedIndex) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| LsrError::Io { path: dir.into(), source })?;
    }
    std::fs::write(path, index.to_bytes()).map_err(|source| LsrError::Io { path: path.into(), source })
}

pub fn read_index(path: &Path) -> Result<InvertedIndex> {
    let bytes = std::fs::read(path).map_err(|source| LsrError::Io { path: path.into(), source })?;
    InvertedIndex::from_bytes(&bytes).map_err(|e| LsrError::usage(format!("{}: {e}", path.display())))
}

/// Reproducibility record. Deliberately free of timestamps and host details
/// so identical invocations produce identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, config: &C) -> Self {
        let config = serde_json::to_value(config).expect("configs serialize");
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: sha256_hex(config.to_string().as_bytes()),
            config,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// `out.json` for a directory output, `<file>.manifest.json` otherwise.
    pub fn path_for(output: &Path) -> PathBuf {
        if output.is_dir() {
            output.join("manifest.json")
        } else {
            let mut name = output.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            output.with_file_name(name)
        }
    }

    pub fn write_for(&self, output: &Path) -> Result<PathBuf> {
        let path = Self::path_for(output);
        write_json(&path, self)?;
        Ok(path)
    }
}
