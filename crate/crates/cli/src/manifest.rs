//! JSON manifest written next to every run's outputs.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    DiagnosticFailure,
}

/// A value with an optional standard error; non-finite values are stored as
/// null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Option<f64>,
    pub error: Option<f64>,
}

impl Estimate {
    pub fn new(value: f64, error: Option<f64>) -> Self {
        let finite = |x: f64| x.is_finite().then_some(x);
        Self {
            value: finite(value),
            error: error.and_then(finite),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub engine: String,
    pub code_version: String,
    pub seed: u64,
    /// The validated configuration, defaults filled in.
    pub config: serde_json::Value,
    pub status: RunStatus,
    /// Error that ended the run early.
    pub diagnostic: Option<String>,
    /// True when the outputs cover only part of the requested run.
    pub partial: bool,
    pub wall_time_seconds: f64,
    pub estimates: BTreeMap<String, Estimate>,
    pub events: BTreeMap<String, u64>,
    /// Structured results that are not single numbers, such as the drawn
    /// initial condition.
    pub details: BTreeMap<String, serde_json::Value>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn new(engine: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            engine: engine.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            status: RunStatus::Ok,
            diagnostic: None,
            partial: false,
            wall_time_seconds: 0.0,
            estimates: BTreeMap::new(),
            events: BTreeMap::new(),
            details: BTreeMap::new(),
            files: Vec::new(),
        }
    }

    pub fn estimate(&mut self, name: impl Into<String>, value: f64, error: Option<f64>) {
        self.estimates.insert(name.into(), Estimate::new(value, error));
    }

    pub fn event(&mut self, name: impl Into<String>, count: u64) {
        self.events.insert(name.into(), count);
    }

    pub fn detail(&mut self, name: impl Into<String>, value: serde_json::Value) {
        self.details.insert(name.into(), value);
    }

    pub fn fail(&mut self, diagnostic: impl Into<String>) {
        self.status = RunStatus::DiagnosticFailure;
        self.partial = true;
        self.diagnostic = Some(diagnostic.into());
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.estimates.get(name).and_then(|e| e.value)
    }

    /// Adds a file under `dir` to the inventory.
    pub fn record_file(&mut self, dir: &Path, relative: &str) -> io::Result<()> {
        let bytes = fs::read(dir.join(relative))?;
        self.files.push(FileRecord {
            path: relative.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }

    /// Files whose current checksum differs from the inventory.
    pub fn verify_files(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|f| {
                fs::read(dir.join(&f.path))
                    .map(|b| sha256_hex(&b) != f.sha256)
                    .unwrap_or(true)
            })
            .map(|f| f.path.clone())
            .collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
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
    fn non_finite_estimates_become_null() {
        let e = Estimate::new(f64::NAN, Some(f64::INFINITY));
        assert_eq!(
            e,
            Estimate {
                value: None,
                error: None
            }
        );
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, r#"{"value":null,"error":null}"#);
    }

    #[test]
    fn round_trip_and_verification() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "t,x\n0,1\n").unwrap();
        let mut m = RunManifest::new("continuous", 3, serde_json::json!({"dt": 0.001}));
        m.estimate("k", 0.5, Some(0.01));
        m.event("poles", 4);
        m.record_file(dir.path(), "a.csv").unwrap();
        let path = m.write(dir.path()).unwrap();
        let back = RunManifest::read(&path).unwrap();
        assert_eq!(back, m);
        assert!(back.verify_files(dir.path()).is_empty());
        fs::write(dir.path().join("a.csv"), "t,x\n0,2\n").unwrap();
        assert_eq!(back.verify_files(dir.path()), vec!["a.csv".to_string()]);
    }
}
