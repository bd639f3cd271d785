//! Run manifests written next to every output as `<output>.manifest.json`.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Serialize)]
pub struct InputRecord {
    pub path: String,
    /// File size in bytes, or entry count for a directory.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entries: Option<usize>,
}

impl InputRecord {
    pub fn of(path: &Path) -> Self {
        let meta = std::fs::metadata(path).ok();
        let is_dir = meta.as_ref().is_some_and(|m| m.is_dir());
        InputRecord {
            path: path.display().to_string(),
            bytes: meta.as_ref().filter(|m| m.is_file()).map(|m| m.len()),
            entries: if is_dir {
                std::fs::read_dir(path).ok().map(|r| r.count())
            } else {
                None
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub library_version: &'static str,
    pub command: String,
    pub inputs: Vec<InputRecord>,
    pub params: Value,
    pub outputs: Vec<String>,
    pub cases_ok: usize,
    pub failures: Vec<CaseFailure>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub summary: Value,
}

impl Manifest {
    pub fn new(command: &str, params: Value) -> Self {
        Manifest {
            tool: "tumorseg",
            version: env!("CARGO_PKG_VERSION"),
            library_version: tumorseg::VERSION,
            command: command.to_string(),
            inputs: Vec::new(),
            params,
            outputs: Vec::new(),
            cases_ok: 0,
            failures: Vec::new(),
            summary: Value::Null,
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(InputRecord::of(path));
        self
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "output".into());
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Writes the manifest for `output` atomically.
pub fn write(output: &Path, manifest: &Manifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    tumorseg::nifti::write_atomic(&manifest_path(output), &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sits_beside_output() {
        assert_eq!(manifest_path(Path::new("work/features.csv")), Path::new("work/features.csv.manifest.json"));
        assert_eq!(manifest_path(Path::new("work/ens")), Path::new("work/ens.manifest.json"));
    }

    #[test]
    fn no_timestamps() {
        let m = Manifest::new("x", serde_json::json!({"a": 1}));
        let s = serde_json::to_string(&m).unwrap();
        assert!(!s.contains("time"));
        assert!(s.contains("\"version\""));
    }
}
