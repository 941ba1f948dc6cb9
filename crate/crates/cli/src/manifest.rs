//! Run manifests: what ran, on which inputs, producing which outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

impl FileDigest {
    pub fn of(path: &Path) -> CliResult<Self> {
        let data = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(FileDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&data)),
            bytes: data.len() as u64,
        })
    }

    pub fn matches_disk(&self) -> CliResult<bool> {
        Ok(FileDigest::of(Path::new(&self.path))? == *self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// Wall-clock milliseconds per stage, plus `total`.
    pub timings_ms: BTreeMap<String, f64>,
}

/// Collects manifest fields while a command runs.
pub struct Recorder {
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
    started: Instant,
}

impl Recorder {
    pub fn new(command: &str, seed: u64) -> Self {
        Recorder {
            command: command.to_owned(),
            seed,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.seed = seed;
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Runs `f` and records its duration under `stage`.
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.timings.insert(stage.to_owned(), t.elapsed().as_secs_f64() * 1e3);
        out
    }

    /// Writes `<out>/<command>.manifest.json`.
    pub fn finish(mut self, out: &Path) -> CliResult<PathBuf> {
        self.timings.insert("total".into(), self.started.elapsed().as_secs_f64() * 1e3);
        let manifest = Manifest {
            command: self.command.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs.iter().map(|p| FileDigest::of(p)).collect::<CliResult<_>>()?,
            outputs: self.outputs.iter().map(|p| FileDigest::of(p)).collect::<CliResult<_>>()?,
            timings_ms: self.timings,
        };
        let path = out.join(format!("{}.manifest.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::json(&path, e))?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> CliResult<Manifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digests_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        std::fs::write(&input, "abc").unwrap();
        let mut rec = Recorder::new("demo", 3);
        rec.input(&input);
        rec.time("stage", || ());
        let path = rec.finish(dir.path()).unwrap();
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(m.inputs[0].matches_disk().unwrap());
        assert!(m.timings_ms.contains_key("stage") && m.timings_ms.contains_key("total"));
        std::fs::write(&input, "abd").unwrap();
        assert!(!m.inputs[0].matches_disk().unwrap());
    }
}
