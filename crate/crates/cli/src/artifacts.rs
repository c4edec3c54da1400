//! Atomic file output, hashing and the stamped JSON envelope.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e| CliError::Io { path: path.to_path_buf(), source: e };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Run(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    guifl_core::episodes::write_jsonl(&mut bytes, items).map_err(|e| CliError::Run(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// A JSON artifact tagged with the config and corpus it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    pub corpus_hash: String,
    pub data: T,
}

/// Standard artifact names inside a run directory.
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn file(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn clean_report(&self) -> PathBuf {
        self.file("clean_report.jsonl")
    }

    pub fn train(&self) -> PathBuf {
        self.file("train.jsonl")
    }

    pub fn test(&self) -> PathBuf {
        self.file("test.jsonl")
    }

    pub fn manifest(&self) -> PathBuf {
        self.file("manifest.json")
    }

    pub fn stats(&self) -> PathBuf {
        self.file("stats.csv")
    }

    pub fn rounds(&self) -> PathBuf {
        self.file("rounds.jsonl")
    }

    pub fn round_checkpoint(&self, round: u64) -> PathBuf {
        self.0.join("checkpoints").join(format!("round_{round:04}.json"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.file("checkpoint.json")
    }

    pub fn ledger(&self) -> PathBuf {
        self.file("comm_ledger.json")
    }

    pub fn predictions(&self) -> PathBuf {
        self.file("predictions.jsonl")
    }

    pub fn report_json(&self) -> PathBuf {
        self.file("report.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.file("report.csv")
    }
}
