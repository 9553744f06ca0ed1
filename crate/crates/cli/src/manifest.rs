//! Atomic output files and per-stage run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_DIR: &str = "manifests";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Stage(format!("cannot read {}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Runs `write` against `<path>.partial` and renames it into place on
/// success. A failed write leaves the `.partial` file for inspection.
pub fn write_atomic<E>(path: &Path, write: impl FnOnce(&Path) -> Result<(), E>) -> Result<(), CliError>
where
    CliError: From<E>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = partial_path(path);
    write(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |tmp| fs::write(tmp, text))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).map_err(CliError::stage)?);
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Stage(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Stage(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// What a stage read and wrote, enough to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub mode: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub finished_unix: u64,
}

fn display_key(path: &Path, work_dir: &Path) -> String {
    path.strip_prefix(work_dir).unwrap_or(path).display().to_string()
}

fn hash_all(paths: &[PathBuf], work_dir: &Path) -> BTreeMap<String, String> {
    paths
        .iter()
        .filter(|p| p.is_file())
        .filter_map(|p| sha256_file(p).ok().map(|h| (display_key(p, work_dir), h)))
        .collect()
}

impl RunManifest {
    pub fn new(
        stage: &str,
        config: &crate::config::PipelineConfig,
        inputs: &[PathBuf],
        outputs: &[PathBuf],
        result: &Result<(), CliError>,
    ) -> Self {
        Self {
            stage: stage.to_string(),
            seed: config.seed,
            config_hash: config.hash(),
            mode: config.endpoint.mode.clone(),
            inputs: hash_all(inputs, &config.work_dir),
            outputs: if result.is_ok() { hash_all(outputs, &config.work_dir) } else { BTreeMap::new() },
            status: if result.is_ok() { RunStatus::Ok } else { RunStatus::Failed },
            error: result.as_ref().err().map(ToString::to_string),
            finished_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn path(work_dir: &Path, stage: &str) -> PathBuf {
        work_dir.join(MANIFEST_DIR).join(format!("{stage}.json"))
    }

    pub fn write(&self, work_dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(CliError::stage)? + "\n";
        write_text(&Self::path(work_dir, &self.stage), &text)
    }

    pub fn load(work_dir: &Path, stage: &str) -> Result<Self, CliError> {
        let path = Self::path(work_dir, stage);
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(CliError::stage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_renames_on_success_and_keeps_partial_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("a.txt");
        write_text(&ok, "x").unwrap();
        assert_eq!(fs::read_to_string(&ok).unwrap(), "x");
        assert!(!partial_path(&ok).exists());

        let bad = dir.path().join("b.txt");
        let r = write_atomic(&bad, |tmp| {
            fs::write(tmp, "half")?;
            Err(std::io::Error::other("boom"))
        });
        assert!(r.is_err());
        assert!(!bad.exists());
        assert_eq!(fs::read_to_string(partial_path(&bad)).unwrap(), "half");
    }

    #[test]
    fn sha256_of_known_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
