use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective configuration as canonical JSON.
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub version: String,
    pub started_unix_s: f64,
    pub finished_unix_s: f64,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn config_hash(canonical_json: &str) -> String {
    Sha256::digest(canonical_json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Collects the files a command writes and records them in
/// `<out>/<command>.manifest.json` once the command has finished.
pub struct Run {
    pub out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn start(command: &str, out: &Path, canonical_config: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
        Ok(Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                command: command.to_owned(),
                config_hash: config_hash(canonical_config),
                seeds: BTreeMap::new(),
                version: format!("v{}", env!("CARGO_PKG_VERSION")),
                started_unix_s: now(),
                finished_unix_s: 0.0,
                files: Vec::new(),
            },
        })
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_owned(), value);
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Registers `name` (relative to the output directory) as produced.
    pub fn produced(&mut self, name: &str) {
        if !self.manifest.files.iter().any(|f| f == name) {
            self.manifest.files.push(name.to_owned());
        }
    }

    /// Writes `contents` to `name` through a temporary file and registers it.
    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        write_atomic(&path, contents)?;
        self.produced(name);
        Ok(path)
    }

    pub fn finish(mut self) -> Result<RunManifest, CliError> {
        self.manifest.finished_unix_s = now();
        let name = format!("{}.manifest.json", self.manifest.command);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serialization");
        write_atomic(&self.out.join(name), &text)?;
        Ok(self.manifest)
    }
}

pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let err = |e: std::io::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(err)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, contents).map_err(err)?;
    std::fs::rename(&tmp, path).map_err(err)
}
