//! Output staging and the run manifest. Files are collected in memory and
//! only written once the whole command has succeeded.

use std::path::{Path, PathBuf};

use scoremix::{Error, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a Value,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

#[derive(Default)]
pub struct Outputs {
    inputs: Vec<FileDigest>,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    /// Reads an input file fully so its digest can be recorded.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn add_with(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Invalid(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.add(name, text);
        Ok(())
    }

    /// Writes every staged file and then `manifest.json`.
    pub fn commit(self, dir: &Path, command: &str, config: &Value) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        let manifest = Manifest {
            tool: "scoremix",
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            inputs: self.inputs,
            outputs: self
                .files
                .iter()
                .map(|(name, bytes)| FileDigest {
                    path: name.clone(),
                    sha256: sha256_hex(bytes),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest json");
        text.push('\n');
        let path = dir.join("manifest.json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(written)
    }
}
