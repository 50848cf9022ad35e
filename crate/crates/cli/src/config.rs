//! Run configuration: one TOML section per pipeline stage, validated against
//! every module precondition before launch, and content-hashed (SHA-256 of
//! the canonical JSON serialization) so every emitted artifact can embed the
//! exact inputs that produced it.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use deloc_core::scales::validate_eta;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    pub potential: PotentialSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub scales: ScalesSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub projector: ProjectorSection,
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    /// Worker budget; the environment variable DELOC_THREADS overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub d: usize,
    pub l: f64,
    /// Aspect ratios of sides 2..d relative to L; defaults to all 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gammas: Option<Vec<f64>>,
    pub target_spacing: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PotentialSection {
    /// Bernoulli couplings from a seeded site hash.
    Anderson { seed: u64, p: f64 },
    /// V ≡ 0 (free Laplacian).
    Zero,
    /// Coupling-map text file (`d L` header, then `ξ… bit` lines).
    File { path: String },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    /// k lowest eigenpairs.
    Lowest,
    /// All eigenpairs in [E, 2E], certified complete.
    Window,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub mode: SolverMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Window anchor; also the energy at which scale-dependent diagnostics
    /// are reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<f64>,
    pub tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense_cutoff: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScalesSection {
    pub eta: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for ScalesSection {
    fn default() -> Self {
        Self { eta: 0.25, c1: 1.0, c2: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    #[serde(default)]
    pub dichotomy: bool,
    #[serde(default)]
    pub loclength: bool,
    #[serde(default)]
    pub varbound: bool,
    /// Stride-lattice sample budget for the variation check.
    #[serde(default = "default_sample_count")]
    pub sample_count: usize,
}

fn default_sample_count() -> usize {
    128
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self { dichotomy: false, loclength: false, varbound: false, sample_count: 128 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct ProjectorSection {
    #[serde(default)]
    pub enabled: bool,
    /// Flat-index center; defaults to the windowed density peak.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    #[serde(default)]
    pub save_fields: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub seeds: Vec<u64>,
    /// Explicit energy axis; when empty, `n_energies` log-spaced points
    /// inside the admissible window are used.
    #[serde(default)]
    pub energies: Vec<f64>,
    #[serde(default = "default_n_energies")]
    pub n_energies: usize,
    /// Torus-size axis; empty means the base grid.l only.
    #[serde(default)]
    pub sizes: Vec<f64>,
}

fn default_n_energies() -> usize {
    8
}

impl RunConfig {
    pub fn from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading config {}", path.as_ref().display()))?;
        let cfg: RunConfig = toml::from_str(&text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the canonical JSON form, hex-encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Checks every module precondition reachable from the configuration.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(1..=3).contains(&g.d) {
            bail!("grid.d = {} not in 1..=3", g.d);
        }
        if !(g.l.is_finite() && g.l > 0.0) {
            bail!("grid.l = {} must be positive", g.l);
        }
        if let Some(gammas) = &g.gammas {
            if gammas.len() != g.d - 1 {
                bail!("grid.gammas has {} entries, expected d-1 = {}", gammas.len(), g.d - 1);
            }
            if gammas.iter().any(|&x| !(x >= 1.0)) {
                bail!("grid.gammas must all be ≥ 1");
            }
        }
        if !(g.target_spacing.is_finite() && g.target_spacing > 0.0) {
            bail!("grid.target_spacing must be positive");
        }

        match &self.potential {
            PotentialSection::Anderson { p, .. } => {
                if !(0.0..=1.0).contains(p) {
                    bail!("potential.p = {p} outside [0, 1]");
                }
            }
            PotentialSection::File { path } => {
                if path.is_empty() {
                    bail!("potential.path is empty");
                }
            }
            PotentialSection::Zero => {}
        }

        let s = &self.solver;
        if !(s.tol.is_finite() && s.tol > 0.0) {
            bail!("solver.tol must be positive");
        }
        match s.mode {
            SolverMode::Lowest => {
                let k = s.k.context("solver.mode = lowest requires solver.k")?;
                if k == 0 {
                    bail!("solver.k must be ≥ 1");
                }
            }
            SolverMode::Window => {
                let e = s.e.context("solver.mode = window requires solver.e")?;
                if !(e.is_finite() && e > 0.0 && e < 1.0) {
                    bail!("solver.e = {e} outside (0, 1)");
                }
            }
        }

        validate_eta(self.grid.d, self.scales.eta).map_err(|e| anyhow::anyhow!(e))?;
        if !(self.scales.c1 > 0.0) {
            bail!("scales.c1 must be positive");
        }
        if !(self.scales.c2 > 0.0) {
            bail!("scales.c2 must be positive");
        }

        let needs_e = self.diagnostics.dichotomy
            || self.diagnostics.varbound
            || self.projector.enabled;
        if needs_e && self.solver.e.is_none() {
            bail!("dichotomy, varbound and projector diagnostics require solver.e");
        }
        if self.diagnostics.sample_count == 0 {
            bail!("diagnostics.sample_count must be ≥ 1");
        }

        if self.output.dir.is_empty() {
            bail!("output.dir is empty");
        }

        if let Some(sweep) = &self.sweep {
            if sweep.seeds.is_empty() {
                bail!("sweep.seeds is empty");
            }
            if sweep.energies.is_empty() && sweep.n_energies == 0 {
                bail!("sweep needs explicit energies or n_energies ≥ 1");
            }
            if sweep.energies.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
                bail!("sweep.energies must lie in (0, 1)");
            }
            if sweep.sizes.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
                bail!("sweep.sizes must be positive");
            }
            if !matches!(self.potential, PotentialSection::Anderson { .. }) {
                bail!("sweeps vary the potential seed; potential.kind must be anderson");
            }
        }

        if let Some(t) = self.threads {
            if t == 0 {
                bail!("threads must be ≥ 1");
            }
        }
        Ok(())
    }

    /// The job configuration for one sweep cell: the base with seed and
    /// window anchor replaced (sweep section dropped, output under jobs/).
    pub fn job_config(&self, seed: u64, e: f64) -> Result<RunConfig> {
        let p = match &self.potential {
            PotentialSection::Anderson { p, .. } => *p,
            _ => bail!("job_config requires an anderson potential"),
        };
        let mut job = self.clone();
        job.potential = PotentialSection::Anderson { seed, p };
        job.solver.mode = SolverMode::Window;
        job.solver.e = Some(e);
        job.solver.k = None;
        job.sweep = None;
        Ok(job)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_toml() -> String {
        r#"
[grid]
d = 2
l = 16.0
target_spacing = 0.5

[potential]
kind = "anderson"
seed = 1
p = 0.5

[solver]
mode = "window"
e = 0.1
tol = 1e-8

[scales]
eta = 0.25
c1 = 1.0
c2 = 1.0

[diagnostics]
dichotomy = true

[output]
dir = "out"
"#
        .to_string()
    }

    #[test]
    fn parses_and_validates_base_config() {
        let cfg: RunConfig = toml::from_str(&base_toml()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid.d, 2);
        assert!(matches!(cfg.potential, PotentialSection::Anderson { seed: 1, .. }));
        assert_eq!(cfg.solver.e, Some(0.1));
        assert!(cfg.diagnostics.dichotomy);
        assert!(!cfg.diagnostics.loclength);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a: RunConfig = toml::from_str(&base_toml()).unwrap();
        let b: RunConfig = toml::from_str(&base_toml()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.solver.e = Some(0.2);
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn rejects_eta_at_criticality() {
        let mut text = base_toml();
        text = text.replace("eta = 0.25", "eta = 0.9");
        let cfg: RunConfig = toml::from_str(&text).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("eta"), "{err}");
        // boundary: η = 1/(4−d) itself is rejected
        let mut cfg2: RunConfig = toml::from_str(&base_toml()).unwrap();
        cfg2.scales.eta = 0.5;
        assert!(cfg2.validate().is_err());
    }

    #[test]
    fn rejects_inconsistent_solver_sections() {
        let mut cfg: RunConfig = toml::from_str(&base_toml()).unwrap();
        cfg.solver.mode = SolverMode::Lowest;
        cfg.solver.k = None;
        assert!(cfg.validate().is_err());
        cfg.solver.k = Some(4);
        cfg.solver.e = None;
        // dichotomy toggle still needs an energy
        assert!(cfg.validate().is_err());
        cfg.diagnostics.dichotomy = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_gammas_and_spacing() {
        let mut cfg: RunConfig = toml::from_str(&base_toml()).unwrap();
        cfg.grid.gammas = Some(vec![1.0, 2.0]);
        assert!(cfg.validate().is_err());
        cfg.grid.gammas = Some(vec![0.5]);
        assert!(cfg.validate().is_err());
        cfg.grid.gammas = Some(vec![2.0]);
        cfg.validate().unwrap();
        cfg.grid.target_spacing = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn job_config_replaces_seed_and_energy() {
        let mut cfg: RunConfig = toml::from_str(&base_toml()).unwrap();
        cfg.sweep = Some(SweepSection {
            seeds: vec![1, 2],
            energies: vec![0.05],
            n_energies: 8,
            sizes: vec![],
        });
        let job = cfg.job_config(7, 0.05).unwrap();
        job.validate().unwrap();
        assert!(matches!(job.potential, PotentialSection::Anderson { seed: 7, .. }));
        assert_eq!(job.solver.e, Some(0.05));
        assert!(job.sweep.is_none());
        assert_ne!(job.hash(), cfg.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = base_toml() + "\n[grid2]\nx = 1\n";
        assert!(toml::from_str::<RunConfig>(&text).is_err());
        let text2 = base_toml().replace("tol = 1e-8", "tol = 1e-8\nmystery = 3");
        assert!(toml::from_str::<RunConfig>(&text2).is_err());
    }
}
