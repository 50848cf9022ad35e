//! Artifact emission. Every CSV/JSON payload embeds the config hash; column
//! orders are fixed by the constants below and pinned by golden-file tests.
//! Floats are written in Rust's shortest round-trip decimal form, so
//! identical numeric payloads serialize to identical bytes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use deloc_core::diagnostics::{BlowupRow, DichotomyReport, LocalizationEstimate};
use deloc_core::eigen::SpectrumSlice;
use deloc_core::greens::{SupLowerCheck, VariationCheck};
use deloc_core::projector::{ProjectorBounds, ProjectorState};
use deloc_core::scales::{DecayModel, ScaleSet};

pub const EIGEN_COLUMNS: [&str; 5] = ["config_hash", "index", "lambda", "residual", "norm_defect"];

pub const DICHOTOMY_COLUMNS: [&str; 11] = [
    "config_hash",
    "kind",
    "eigen_index",
    "lambda",
    "e",
    "ell",
    "r",
    "n_centers",
    "n_violations",
    "worst_margin",
    "in_window",
];

pub const LOCLENGTH_COLUMNS: [&str; 11] = [
    "config_hash",
    "eigen_index",
    "lambda",
    "center",
    "ell_loc",
    "delocalized",
    "model",
    "param_c",
    "param_rate",
    "fit_residual",
    "threshold",
];

pub const VARBOUND_COLUMNS: [&str; 11] = [
    "config_hash",
    "eigen_index",
    "lambda",
    "x0",
    "c_emp",
    "numerator",
    "denominator",
    "samples",
    "sup_bound",
    "sup_value",
    "sup_ok",
];

pub const PROJECTOR_COLUMNS: [&str; 12] = [
    "config_hash",
    "x0",
    "n_contributing",
    "f_norm",
    "f_tilde_norm2",
    "f_tilde_bound",
    "potential_mass",
    "potential_bound",
    "dirichlet",
    "dirichlet_bound",
    "identity_residual",
    "max_pair_residual",
];

pub const BLOWUP_COLUMNS: [&str; 6] =
    ["l", "e", "median_ell_loc", "ll_low", "kind", "n_estimates"];

pub const SWEEP_DICHOTOMY_COLUMNS: [&str; 6] =
    ["config_hash", "seed", "e", "n_window_pairs", "n_violations", "worst_margin"];

pub const CEMP_COLUMNS: [&str; 6] = ["config_hash", "seed", "e", "eigen_index", "lambda", "c_emp"];

/// Shortest decimal that round-trips to the same f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub struct CsvSink {
    writer: csv::Writer<fs::File>,
    path: PathBuf,
}

impl CsvSink {
    pub fn create<P: AsRef<Path>>(path: P, columns: &[&str]) -> Result<Self> {
        if let Some(parent) = path.as_ref().parent() {
            fs::create_dir_all(parent)?;
        }
        let file = fs::File::create(path.as_ref())
            .with_context(|| format!("creating {}", path.as_ref().display()))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(columns)?;
        Ok(Self { writer, path: path.as_ref().to_path_buf() })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

pub fn eigen_row(hash: &str, index: usize, lambda: f64, residual: f64, defect: f64) -> Vec<String> {
    vec![hash.into(), index.to_string(), fmt_f64(lambda), fmt_f64(residual), fmt_f64(defect)]
}

/// A dichotomy row summarizes one report: per-center detail is collapsed to
/// the violation count and the worst margin.
pub fn dichotomy_row(
    hash: &str,
    kind: &str,
    eigen_index: Option<usize>,
    lambda: Option<f64>,
    report: &DichotomyReport,
) -> Vec<String> {
    vec![
        hash.into(),
        kind.into(),
        eigen_index.map(|i| i.to_string()).unwrap_or_default(),
        fmt_opt(lambda),
        fmt_f64(report.e),
        fmt_f64(report.scales.ell),
        fmt_f64(report.scales.r),
        report.mu_ell.len().to_string(),
        report.violations().to_string(),
        fmt_f64(report.worst_margin),
        (!report.outside_window).to_string(),
    ]
}

fn model_fields(model: &Option<DecayModel>) -> (String, String, String) {
    match model {
        Some(DecayModel::Exponential { c, beta }) => {
            ("exponential".into(), fmt_f64(*c), fmt_f64(*beta))
        }
        Some(DecayModel::Algebraic { c, alpha }) => {
            ("algebraic".into(), fmt_f64(*c), fmt_f64(*alpha))
        }
        None => (String::new(), String::new(), String::new()),
    }
}

pub fn loclength_row(
    hash: &str,
    eigen_index: usize,
    lambda: f64,
    est: &LocalizationEstimate,
) -> Vec<String> {
    let (model, c, rate) = model_fields(&est.model);
    vec![
        hash.into(),
        eigen_index.to_string(),
        fmt_f64(lambda),
        est.center.to_string(),
        fmt_opt(est.ell_loc),
        est.delocalized.to_string(),
        model,
        c,
        rate,
        fmt_opt(est.fit_residual),
        fmt_f64(est.threshold),
    ]
}

pub fn varbound_row(
    hash: &str,
    eigen_index: usize,
    lambda: f64,
    chk: &VariationCheck,
    sup: Option<&SupLowerCheck>,
) -> Vec<String> {
    vec![
        hash.into(),
        eigen_index.to_string(),
        fmt_f64(lambda),
        chk.x_max.to_string(),
        fmt_f64(chk.c_emp),
        fmt_f64(chk.numerator),
        fmt_f64(chk.denominator),
        chk.samples.to_string(),
        sup.map(|s| fmt_f64(s.bound)).unwrap_or_default(),
        sup.map(|s| fmt_f64(s.value)).unwrap_or_default(),
        sup.map(|s| s.ok.to_string()).unwrap_or_default(),
    ]
}

pub fn projector_row(
    hash: &str,
    state: &ProjectorState,
    bounds: &ProjectorBounds,
    identity_residual: f64,
) -> Vec<String> {
    vec![
        hash.into(),
        state.x0.to_string(),
        state.contributions.len().to_string(),
        fmt_f64(state.f.l2_norm()),
        fmt_f64(bounds.f_tilde_norm2),
        fmt_f64(bounds.f_tilde_bound),
        fmt_f64(bounds.potential_mass),
        fmt_f64(bounds.potential_bound),
        fmt_f64(bounds.dirichlet),
        fmt_f64(bounds.dirichlet_bound),
        fmt_f64(identity_residual),
        fmt_f64(state.max_residual),
    ]
}

pub fn blowup_csv_row(row: &BlowupRow) -> Vec<String> {
    vec![
        fmt_f64(row.e),
        fmt_opt(row.median_ell_loc),
        fmt_f64(row.ll_low),
        row.kind.to_string(),
        row.n_estimates.to_string(),
    ]
}

/// Scale record persisted as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalesRecord {
    pub config_hash: String,
    pub d: usize,
    pub l: f64,
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_sup: f64,
    pub c_v: f64,
    pub e: f64,
    pub ell: f64,
    pub r: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub in_window: bool,
}

impl ScalesRecord {
    pub fn new(hash: &str, v_sup: f64, s: &ScaleSet) -> Self {
        Self {
            config_hash: hash.into(),
            d: s.d,
            l: s.l,
            eta: s.eta,
            c1: s.c1,
            c2: s.c2,
            v_sup,
            c_v: s.c_v,
            e: s.e,
            ell: s.ell,
            r: s.r,
            e_min: s.window.e_min,
            e_max: s.window.e_max,
            in_window: s.in_window(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenSummary {
    pub config_hash: String,
    pub n_pairs: usize,
    pub iterations: usize,
    pub tol: f64,
    pub complete: bool,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub max_residual: f64,
}

impl EigenSummary {
    pub fn new(hash: &str, slice: &SpectrumSlice) -> Self {
        Self {
            config_hash: hash.into(),
            n_pairs: slice.pairs.len(),
            iterations: slice.iterations,
            tol: slice.tol,
            complete: slice.complete,
            lambda_min: slice.pairs.first().map(|p| p.lambda),
            lambda_max: slice.pairs.last().map(|p| p.lambda),
            max_residual: slice.pairs.iter().fold(0.0, |m, p| m.max(p.residual)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageStatus {
    pub name: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// The run manifest (run.json). Wall-clock data lives in timings.json, which
/// is deliberately not listed here so reruns produce identical manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub failed: bool,
    pub stages: Vec<StageStatus>,
    pub artifacts: Vec<Artifact>,
}

pub fn sha256_file(path: &Path) -> Result<(String, u64)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok((hex::encode(Sha256::digest(&bytes)), bytes.len() as u64))
}

pub fn hash_artifacts(dir: &Path, rel_paths: &[String]) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::with_capacity(rel_paths.len());
    for rel in rel_paths {
        let (sha256, bytes) = sha256_file(&dir.join(rel))?;
        artifacts.push(Artifact { path: rel.clone(), sha256, bytes });
    }
    Ok(artifacts)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}
