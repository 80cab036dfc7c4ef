//! Artifact layout, upstream-requirement checks, and the content-hash
//! manifest.
//!
//! Every stage writes fixed file names under the output directory and
//! appends one `stage,path,sha256` line per artifact to `manifest.txt`.
//! The manifest is append-only: reruns append fresh lines, so determinism
//! is checkable by comparing hashes across runs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

// ── Fixed artifact names ────────────────────────────────────────────────

pub const MOTIONS_DIR: &str = "motions";
pub const SELECTED: &str = "selected.csv";
pub const GMF: &str = "gmf.csv";
pub const MCS: &str = "mcs.csv";
pub const SELECTION_JSON: &str = "selection.json";
pub const SELECTION_SCORES: &str = "selection_scores.csv";
pub const JOINT_TRANSFORM: &str = "joint_transform.json";
pub const STANDARDIZER: &str = "standardizer.json";
pub const GP_MODELS: &str = "gp_models.json";
pub const AL_LOG: &str = "al_log.csv";
pub const AL_LABELS: &str = "al_labels.csv";
pub const SURROGATE_QUALITY: &str = "surrogate_quality.csv";
pub const MODES_SUMMARY: &str = "modes_summary.csv";
pub const MODE_DENSITIES: &str = "mode_densities.json";
pub const BALANCED: &str = "balanced.csv";
pub const BALANCE_SUMMARY: &str = "balance_summary.csv";
pub const DNN_BALANCED: &str = "dnn_balanced.json";
pub const DNN_IMBALANCED: &str = "dnn_imbalanced.json";
pub const LOSS_HISTORY: &str = "loss_history.csv";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const MANIFEST: &str = "manifest.txt";

/// The output directory of one pipeline run.
pub struct Workspace {
    out_dir: PathBuf,
}

impl Workspace {
    pub fn new(out_dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir).map_err(|e| {
            CliError::Config(format!("cannot create `{}`: {e}", out_dir.display()))
        })?;
        Ok(Self { out_dir: out_dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Resolve an artifact a stage depends on, or fail with the command
    /// that produces it.
    pub fn require(&self, name: &str, produced_by: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::MissingArtifact {
                artifact: path.display().to_string(),
                command: produced_by.to_string(),
            })
        }
    }

    /// Hash an artifact this stage just wrote and append it to the
    /// manifest.
    pub fn record(&self, stage: &str, name: &str) -> Result<(), CliError> {
        let digest = sha256_file(&self.path(name))?;
        let mut manifest = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(MANIFEST))
            .map_err(from_io)?;
        writeln!(manifest, "{stage},{name},{digest}").map_err(from_io)?;
        Ok(())
    }
}

fn from_io(e: std::io::Error) -> CliError {
    CliError::Config(format!("manifest write failed: {e}"))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot hash `{}`: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// ── Tests ───────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_matches_the_known_empty_digest() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn require_names_the_producing_command() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path()).unwrap();
        let err = ws.require(MCS, "mcs").unwrap_err();
        match err {
            CliError::MissingArtifact { artifact, command } => {
                assert!(artifact.ends_with("mcs.csv"));
                assert_eq!(command, "mcs");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn manifest_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::new(dir.path()).unwrap();
        fs::write(ws.path("a.txt"), "alpha").unwrap();
        ws.record("stage-one", "a.txt").unwrap();
        ws.record("stage-two", "a.txt").unwrap();
        let manifest = fs::read_to_string(ws.path(MANIFEST)).unwrap();
        let lines: Vec<&str> = manifest.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("stage-one,a.txt,"));
        assert!(lines[1].starts_with("stage-two,a.txt,"));
        let h0 = lines[0].split(',').nth(2).unwrap();
        let h1 = lines[1].split(',').nth(2).unwrap();
        assert_eq!(h0, h1, "same bytes, same digest");
    }
}
