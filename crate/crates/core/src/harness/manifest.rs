use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    Train,
    Eval,
    Sweep,
}

/// Record of one `train`, `eval` or `sweep` invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    /// sha256 of `config_path`'s bytes.
    pub config_hash: String,
    pub config_path: PathBuf,
    pub seeds: Vec<u64>,
    pub version: String,
    pub started: String,
    pub finished: Option<String>,
    /// False while running and after a failure.
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub attacks: Vec<String>,
    /// Inputs needed to rerun an evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalInputs>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalInputs {
    pub bundles: Vec<PathBuf>,
    pub episodes: usize,
}

impl RunManifest {
    pub fn start(kind: RunKind, config_path: PathBuf, config_bytes: &[u8], seeds: Vec<u64>, attacks: Vec<String>) -> Self {
        Self {
            kind,
            config_hash: sha256_hex(config_bytes),
            config_path,
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            complete: false,
            error: None,
            outputs: Vec::new(),
            attacks,
            eval: None,
            summary: serde_json::Value::Null,
        }
    }

    pub fn finish(&mut self, summary: serde_json::Value) {
        self.finished = Some(chrono::Utc::now().to_rfc3339());
        self.complete = true;
        self.summary = summary;
    }

    pub fn fail(&mut self, error: &Error) {
        self.finished = Some(chrono::Utc::now().to_rfc3339());
        self.complete = false;
        self.error = Some(error.to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json_atomic(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&crate::error::read_input(path)?)?)
    }

    /// Checks that the stored config still hashes to `config_hash`.
    pub fn verify_config(&self, base: &Path) -> Result<Vec<u8>> {
        let path = if self.config_path.is_absolute() {
            self.config_path.clone()
        } else {
            base.join(&self.config_path)
        };
        let bytes = crate::error::read_input(&path)?;
        let hash = sha256_hex(&bytes);
        if hash != self.config_hash {
            return Err(Error::Config(format!(
                "{} hashes to {hash}, manifest records {}",
                path.display(),
                self.config_hash
            )));
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn atomic_write_and_config_check() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("config.json");
        std::fs::write(&cfg, b"{}").unwrap();
        let mut m = RunManifest::start(RunKind::Train, "config.json".into(), b"{}", vec![1], vec![]);
        m.finish(serde_json::json!({"ok": true}));
        let p = dir.path().join("manifest.json");
        m.write(&p).unwrap();
        let back = RunManifest::load(&p).unwrap();
        assert_eq!(back, m);
        back.verify_config(dir.path()).unwrap();
        std::fs::write(&cfg, b"{ }").unwrap();
        assert!(back.verify_config(dir.path()).is_err());
        assert!(!dir.path().join(".manifest.json.tmp").exists());
    }
}
