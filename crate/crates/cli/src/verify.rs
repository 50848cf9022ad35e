//! Artifact verification: re-hash every file listed in a run manifest and
//! confirm the embedded config hash matches the config echo.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{sha256_file, RunRecord};

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VerifyIssue {
    pub path: String,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub dir: String,
    pub config_hash: String,
    pub artifacts_checked: usize,
    pub config_hash_ok: bool,
    pub issues: Vec<VerifyIssue>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.issues.is_empty() && self.config_hash_ok
    }
}

/// Reads `<dir>/run.json`, re-hashes each listed artifact, and re-derives
/// the config hash from `config.json`.
pub fn verify_dir(dir: &Path) -> Result<VerifyReport> {
    let manifest_path = dir.join("run.json");
    let text = std::fs::read_to_string(&manifest_path)
        .with_context(|| format!("reading {}", manifest_path.display()))?;
    let record: RunRecord = serde_json::from_str(&text).context("parsing run.json")?;

    let mut issues = Vec::new();
    for artifact in &record.artifacts {
        match sha256_file(&dir.join(&artifact.path)) {
            Ok((sha256, _)) => {
                if sha256 != artifact.sha256 {
                    issues.push(VerifyIssue {
                        path: artifact.path.clone(),
                        expected: artifact.sha256.clone(),
                        found: sha256,
                    });
                }
            }
            Err(err) => issues.push(VerifyIssue {
                path: artifact.path.clone(),
                expected: artifact.sha256.clone(),
                found: format!("unreadable: {err:#}"),
            }),
        }
    }

    let cfg_text = std::fs::read_to_string(dir.join("config.json"))
        .context("reading config.json")?;
    let config_hash_ok = match serde_json::from_str::<RunConfig>(&cfg_text) {
        Ok(cfg) => cfg.hash() == record.config_hash,
        Err(_) => false,
    };

    Ok(VerifyReport {
        dir: dir.display().to_string(),
        config_hash: record.config_hash,
        artifacts_checked: record.artifacts.len(),
        config_hash_ok,
        issues,
    })
}
