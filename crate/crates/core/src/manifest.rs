//! Per-command run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub version: String,
    pub seed: Option<u64>,
    /// Seconds since the Unix epoch.
    pub created: u64,
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn is_manifest(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n == "manifest.json" || n.ends_with(".manifest.json"))
}

fn files_under(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?.path();
        if !is_manifest(&entry) {
            out.extend(files_under(&entry)?);
        }
    }
    out.sort();
    Ok(out)
}

/// Digests of the given files; directories contribute every file below them.
pub fn digest_inputs<P: AsRef<Path>>(inputs: &[P]) -> Result<Vec<InputDigest>> {
    let mut out = Vec::new();
    for input in inputs {
        for file in files_under(input.as_ref())? {
            out.push(InputDigest {
                sha256: sha256_file(&file)?,
                path: file.display().to_string(),
            });
        }
    }
    Ok(out)
}

impl RunManifest {
    pub fn new<P: AsRef<Path>>(command: &str, config: serde_json::Value, inputs: &[P], seed: Option<u64>) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            config,
            inputs: digest_inputs(inputs)?,
            version: TOOL_VERSION.to_string(),
            seed,
            created: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        })
    }

    /// `manifest.json` inside a directory output, `<file>.manifest.json`
    /// beside a file output.
    pub fn path_for(output: impl AsRef<Path>) -> PathBuf {
        let output = output.as_ref();
        if output.is_dir() {
            output.join("manifest.json")
        } else {
            let mut name = output.file_name().unwrap_or_default().to_os_string();
            name.push(".manifest.json");
            output.with_file_name(name)
        }
    }

    pub fn save_beside(&self, output: impl AsRef<Path>) -> Result<PathBuf> {
        let path = RunManifest::path_for(output);
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        fs::write(&path, bytes)?;
        Ok(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_match_known_values() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("a.txt");
        fs::write(&file, "abc").unwrap();
        assert_eq!(
            sha256_file(&file).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn directories_contribute_sorted_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.jsonl"), "2").unwrap();
        fs::write(dir.path().join("a.jsonl"), "1").unwrap();
        fs::write(dir.path().join("manifest.json"), "{}").unwrap();
        fs::write(dir.path().join("a.jsonl.manifest.json"), "{}").unwrap();
        let digests = digest_inputs(&[dir.path()]).unwrap();
        let names: Vec<_> = digests.iter().map(|d| Path::new(&d.path).file_name().unwrap().to_owned()).collect();
        assert_eq!(names, ["a.jsonl", "b.jsonl"]);
    }

    #[test]
    fn manifest_sits_beside_its_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("pa.jsonl");
        fs::write(&out, "x").unwrap();
        let m = RunManifest::new("synth", serde_json::json!({"seed": 7}), &[&out], Some(7)).unwrap();
        let path = m.save_beside(&out).unwrap();
        assert_eq!(path, dir.path().join("pa.jsonl.manifest.json"));
        assert_eq!(RunManifest::path_for(dir.path()), dir.path().join("manifest.json"));
        let back = RunManifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.version, TOOL_VERSION);
    }
}
