//! Single-writer output collector. Every emitted file is hashed and listed
//! once in `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub tool_version: String,
    pub files: Vec<FileEntry>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

pub struct OutputWriter {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputWriter {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `bytes` to `rel` (forward slashes) under the output root.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        if rel == "manifest.json" || self.files.iter().any(|f| f.path == rel) {
            return Err(CliError::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("{rel} written twice"),
            )));
        }
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn finish(
        self,
        config_text: &str,
        timings: BTreeMap<String, f64>,
    ) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            config_sha256: sha256_hex(config_text.as_bytes()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            files: self.files,
            timings,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(self.root.join("manifest.json"), text + "\n")?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn files_are_listed_once() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = OutputWriter::new(dir.path()).unwrap();
        w.write("a/b.csv", b"x").unwrap();
        assert!(w.write("a/b.csv", b"y").is_err());
        assert!(w.write("manifest.json", b"{}").is_err());
        let m = w.finish("cfg", BTreeMap::new()).unwrap();
        assert_eq!(m.files.len(), 1);
        assert!(dir.path().join("manifest.json").exists());
    }
}
