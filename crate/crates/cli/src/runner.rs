//! Single-run pipeline: grid → potential → solve → scales → diagnostics →
//! projector, with per-stage status recording. A stage failure stops the
//! pipeline but keeps every artifact produced so far; the manifest then
//! carries `failed: true` and the offending stage's error.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};

use deloc_core::diagnostics::{dichotomy_check, estimate_loc_length};
use deloc_core::eigen::{
    lowest_eigenpairs_with, window_eigenpairs_with, SolverOptions, SpectrumSlice,
};
use deloc_core::error::Error as CoreError;
use deloc_core::field::ScalarField;
use deloc_core::greens::{sup_lower_check, variation_check, SupLowerCheck};
use deloc_core::grid::{build_grid, TorusGrid, TorusSpec};
use deloc_core::potential::{anderson_bernoulli, BumpProfile, CouplingMap};
use deloc_core::projector::{
    build_projector_state, default_center, default_window_weight, projector_bounds,
    projector_dichotomy, projector_residual,
};
use deloc_core::scales::ScaleParams;

use crate::config::{PotentialSection, RunConfig, SolverMode};
use crate::report::{
    self, dichotomy_row, eigen_row, loclength_row, projector_row, varbound_row, CsvSink,
    EigenSummary, RunRecord, ScalesRecord, StageStatus,
};

pub fn build_grid_stage(cfg: &RunConfig) -> Result<Arc<TorusGrid>> {
    let gammas = cfg.grid.gammas.clone().unwrap_or_else(|| vec![1.0; cfg.grid.d - 1]);
    let spec = TorusSpec::new(cfg.grid.d, cfg.grid.l, &gammas)?;
    Ok(Arc::new(build_grid(&spec, cfg.grid.target_spacing)?))
}

pub fn build_potential_stage(cfg: &RunConfig, grid: &Arc<TorusGrid>) -> Result<ScalarField> {
    match &cfg.potential {
        PotentialSection::Zero => Ok(ScalarField::zeros(grid.clone())),
        PotentialSection::Anderson { seed, p } => {
            let couplings = CouplingMap::seeded(*seed, *p)?;
            Ok(anderson_bernoulli(grid, &couplings, &BumpProfile::default())?)
        }
        PotentialSection::File { path } => {
            let (couplings, d, l) = CouplingMap::load_text(path)?;
            if d != grid.d() || (l - grid.spec().l()).abs() > 1e-9 {
                return Err(anyhow!(
                    "coupling map is for d = {d}, L = {l}; grid has d = {}, L = {}",
                    grid.d(),
                    grid.spec().l()
                ));
            }
            Ok(anderson_bernoulli(grid, &couplings, &BumpProfile::default())?)
        }
    }
}

pub fn solve_stage(
    cfg: &RunConfig,
    grid: &Arc<TorusGrid>,
    v: &ScalarField,
) -> Result<SpectrumSlice> {
    let mut opts = SolverOptions::default();
    if let Some(c) = cfg.solver.dense_cutoff {
        opts.dense_cutoff = c;
    }
    if let Some(m) = cfg.solver.max_iters {
        opts.max_iters = m;
    }
    let slice = match cfg.solver.mode {
        SolverMode::Lowest => {
            let k = cfg.solver.k.context("lowest mode requires k")?;
            lowest_eigenpairs_with(grid, v, k, cfg.solver.tol, &opts)?
        }
        SolverMode::Window => {
            let e = cfg.solver.e.context("window mode requires e")?;
            window_eigenpairs_with(grid, v, e, cfg.solver.tol, &opts)?
        }
    };
    Ok(slice)
}

/// Deterministic localization center: peak of |Ψ|², lowest flat index.
pub fn density_peak(psi: &ScalarField) -> usize {
    let vals = psi.values();
    let mut best = 0usize;
    for (i, &v) in vals.iter().enumerate() {
        if v * v > vals[best] * vals[best] {
            best = i;
        }
    }
    best
}

struct StageLog {
    stages: Vec<StageStatus>,
    timings: Vec<(String, f64)>,
    failed: bool,
}

impl StageLog {
    fn new() -> Self {
        Self { stages: Vec::new(), timings: Vec::new(), failed: false }
    }

    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Option<T> {
        let start = Instant::now();
        let outcome = f();
        self.timings.push((name.to_string(), start.elapsed().as_secs_f64()));
        match outcome {
            Ok(value) => {
                self.stages.push(StageStatus { name: name.into(), ok: true, error: None });
                Some(value)
            }
            Err(err) => {
                self.stages.push(StageStatus {
                    name: name.into(),
                    ok: false,
                    error: Some(format!("{err:#}")),
                });
                self.failed = true;
                None
            }
        }
    }
}

#[derive(Debug, serde::Serialize)]
struct Timings<'a> {
    stages: &'a [(String, f64)],
}

/// Executes the configured pipeline and persists artifacts under the output
/// directory (or `out_override`). Stage errors are recorded, not propagated;
/// hard errors are reserved for unusable configs and I/O failures.
pub fn run_single(cfg: &RunConfig, out_override: Option<&Path>) -> Result<RunRecord> {
    cfg.validate()?;
    let hash = cfg.hash();
    let dir: PathBuf = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&dir)?;

    let mut log = StageLog::new();
    let mut rel_paths: Vec<String> = Vec::new();

    // canonical config echo, so the hash can be re-derived from artifacts
    report::write_json(&dir.join("config.json"), cfg)?;
    rel_paths.push("config.json".into());

    let grid = log.run("grid", || build_grid_stage(cfg));

    let v = grid
        .as_ref()
        .and_then(|g| log.run("potential", || build_potential_stage(cfg, g)));
    let v_sup = v.as_ref().map(|v| v.max());

    let slice = match (&grid, &v) {
        (Some(g), Some(v)) => log.run("solve", || solve_stage(cfg, g, v)),
        _ => None,
    };

    if let Some(slice) = &slice {
        let mut sink = CsvSink::create(dir.join("eigen.csv"), &report::EIGEN_COLUMNS)?;
        for (i, pair) in slice.pairs.iter().enumerate() {
            sink.row(eigen_row(&hash, i, pair.lambda, pair.residual, pair.norm_defect))?;
        }
        sink.finish()?;
        rel_paths.push("eigen.csv".into());
        report::write_json(&dir.join("eigen.json"), &EigenSummary::new(&hash, slice))?;
        rel_paths.push("eigen.json".into());
    }

    // scale record at the window anchor
    let params = match (cfg.solver.e, v_sup) {
        (Some(_), Some(v_sup)) => Some(ScaleParams {
            d: cfg.grid.d,
            l: cfg.grid.l,
            eta: cfg.scales.eta,
            c1: cfg.scales.c1,
            c2: cfg.scales.c2,
            v_sup,
        }),
        _ => None,
    };
    if let (Some(params), Some(e)) = (&params, cfg.solver.e) {
        if let Some(set) = log.run("scales", || Ok(params.at_energy(e)?)) {
            report::write_json(&dir.join("scales.json"), &ScalesRecord::new(&hash, params.v_sup, &set))?;
            rel_paths.push("scales.json".into());
        }
    }

    // window filter for per-eigenpair diagnostics
    let window_pairs = |slice: &SpectrumSlice| -> Vec<usize> {
        match cfg.solver.e {
            Some(e) => slice
                .pairs
                .iter()
                .enumerate()
                .filter(|(_, p)| p.lambda >= e && p.lambda <= 2.0 * e)
                .map(|(i, _)| i)
                .collect(),
            None => (0..slice.pairs.len()).collect(),
        }
    };

    let mut dichotomy_rows: Vec<Vec<String>> = Vec::new();
    if cfg.diagnostics.dichotomy && !log.failed {
        if let (Some(slice), Some(params)) = (&slice, &params) {
            log.run("dichotomy", || {
                for i in window_pairs(slice) {
                    let pair = &slice.pairs[i];
                    let set = params.at_energy(pair.lambda)?;
                    let report = dichotomy_check(&pair.psi, pair.lambda, &set)?;
                    dichotomy_rows.push(dichotomy_row(
                        &hash,
                        "eigen",
                        Some(i),
                        Some(pair.lambda),
                        &report,
                    ));
                }
                Ok(())
            });
        }
    }

    if cfg.diagnostics.loclength && !log.failed {
        if let Some(slice) = &slice {
            let rows = log.run("loclength", || {
                let mut rows = Vec::new();
                for i in window_pairs(slice) {
                    let pair = &slice.pairs[i];
                    let est = estimate_loc_length(&pair.psi)?;
                    rows.push(loclength_row(&hash, i, pair.lambda, &est));
                }
                Ok(rows)
            });
            if let Some(rows) = rows {
                let mut sink =
                    CsvSink::create(dir.join("loclength.csv"), &report::LOCLENGTH_COLUMNS)?;
                for row in rows {
                    sink.row(row)?;
                }
                sink.finish()?;
                rel_paths.push("loclength.csv".into());
            }
        }
    }

    if cfg.diagnostics.varbound && !log.failed {
        if let (Some(slice), Some(params), Some(v)) = (&slice, &params, &v) {
            let rows = log.run("varbound", || {
                let mut rows = Vec::new();
                for i in window_pairs(slice) {
                    let pair = &slice.pairs[i];
                    let set = params.at_energy(pair.lambda)?;
                    let x0 = density_peak(&pair.psi);
                    let chk = variation_check(
                        &pair.psi,
                        pair.lambda,
                        v,
                        &set,
                        x0,
                        cfg.diagnostics.sample_count,
                    )?;
                    let sup: Option<SupLowerCheck> =
                        match sup_lower_check(&pair.psi, x0, set.ell) {
                            Ok(s) => Some(s),
                            Err(CoreError::NotApplicable(_)) => None,
                            Err(e) => return Err(e.into()),
                        };
                    rows.push(varbound_row(&hash, i, pair.lambda, &chk, sup.as_ref()));
                }
                Ok(rows)
            });
            if let Some(rows) = rows {
                let mut sink = CsvSink::create(dir.join("varbound.csv"), &report::VARBOUND_COLUMNS)?;
                for row in rows {
                    sink.row(row)?;
                }
                sink.finish()?;
                rel_paths.push("varbound.csv".into());
            }
        }
    }

    if cfg.projector.enabled && !log.failed {
        if let (Some(slice), Some(params), Some(v), Some(e)) =
            (&slice, &params, &v, cfg.solver.e)
        {
            let row = log.run("projector", || {
                let weight = default_window_weight(e)?;
                let x0 = match cfg.projector.center {
                    Some(x0) => x0,
                    None => default_center(slice, &weight)?,
                };
                let state = build_projector_state(slice, &weight, x0)?;
                let bounds = projector_bounds(&state, e, &weight, v)?;
                let identity = projector_residual(&state, v)?;
                let set = params.at_energy(e)?;
                let report = projector_dichotomy(&state, e, &set)?;
                dichotomy_rows.push(dichotomy_row(&hash, "projector", None, None, &report));
                Ok(projector_row(&hash, &state, &bounds, identity))
            });
            if let Some(row) = row {
                let mut sink =
                    CsvSink::create(dir.join("projector.csv"), &report::PROJECTOR_COLUMNS)?;
                sink.row(row)?;
                sink.finish()?;
                rel_paths.push("projector.csv".into());
            }
        }
    }

    if !dichotomy_rows.is_empty() {
        let mut sink = CsvSink::create(dir.join("dichotomy.csv"), &report::DICHOTOMY_COLUMNS)?;
        for row in &dichotomy_rows {
            sink.row(row)?;
        }
        sink.finish()?;
        rel_paths.push("dichotomy.csv".into());
    }

    if cfg.output.save_fields && !log.failed {
        if let (Some(v), Some(slice)) = (&v, &slice) {
            log.run("fields", || {
                let fdir = dir.join("fields");
                std::fs::create_dir_all(&fdir)?;
                v.save(fdir.join("potential.field"))?;
                rel_paths.push("fields/potential.field".into());
                for (i, pair) in slice.pairs.iter().enumerate() {
                    let name = format!("fields/psi_{i:04}.field");
                    pair.psi.save(dir.join(&name))?;
                    rel_paths.push(name);
                }
                Ok(())
            });
        }
    }

    report::write_json(&dir.join("timings.json"), &Timings { stages: &log.timings })?;

    rel_paths.sort();
    let record = RunRecord {
        config_hash: hash,
        failed: log.failed,
        stages: log.stages,
        artifacts: report::hash_artifacts(&dir, &rel_paths)?,
    };
    report::write_json(&dir.join("run.json"), &record)?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        DiagnosticsSection, GridSection, OutputSection, ProjectorSection, ScalesSection,
        SolverSection,
    };
    use deloc_core::eigen::free_spectrum;

    fn minimal_config(dir: &Path) -> RunConfig {
        RunConfig {
            grid: GridSection { d: 1, l: 16.0, gammas: None, target_spacing: 1.0 },
            potential: PotentialSection::Zero,
            solver: SolverSection {
                mode: SolverMode::Lowest,
                k: Some(3),
                e: None,
                tol: 1e-10,
                dense_cutoff: None,
                max_iters: None,
            },
            scales: ScalesSection::default(),
            diagnostics: DiagnosticsSection::default(),
            projector: ProjectorSection::default(),
            output: OutputSection { dir: dir.to_string_lossy().into_owned(), save_fields: false },
            sweep: None,
            threads: None,
        }
    }

    #[test]
    fn minimal_run_reproduces_free_spectrum() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = minimal_config(tmp.path());
        let record = run_single(&cfg, None).unwrap();
        assert!(!record.failed);
        assert!(record.stages.iter().all(|s| s.ok));

        let text = std::fs::read_to_string(tmp.path().join("eigen.csv")).unwrap();
        let mut lambdas = Vec::new();
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            lambdas.push(cols[2].parse::<f64>().unwrap());
        }
        let grid = build_grid_stage(&cfg).unwrap();
        let free = free_spectrum(&grid, 3).unwrap();
        assert_eq!(lambdas.len(), 3);
        for (got, want) in lambdas.iter().zip(&free) {
            assert!((got - want).abs() <= 1e-10 * want.max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn identical_configs_give_identical_bytes() {
        let t1 = tempfile::tempdir().unwrap();
        let t2 = tempfile::tempdir().unwrap();
        let mut cfg = minimal_config(Path::new("unused"));
        cfg.output.dir = "unused".into();
        let r1 = run_single(&cfg, Some(t1.path())).unwrap();
        let r2 = run_single(&cfg, Some(t2.path())).unwrap();
        assert_eq!(r1.config_hash, r2.config_hash);
        for name in ["eigen.csv", "eigen.json", "run.json", "config.json"] {
            let a = std::fs::read(t1.path().join(name)).unwrap();
            let b = std::fs::read(t2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn failed_stage_keeps_partial_artifacts_and_marks_failure() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = minimal_config(tmp.path());
        cfg.potential = PotentialSection::File { path: "/nonexistent/sites.txt".into() };
        let record = run_single(&cfg, None).unwrap();
        assert!(record.failed);
        let pot = record.stages.iter().find(|s| s.name == "potential").unwrap();
        assert!(!pot.ok);
        assert!(pot.error.is_some());
        // grid succeeded, solve never ran
        assert!(record.stages.iter().any(|s| s.name == "grid" && s.ok));
        assert!(!record.stages.iter().any(|s| s.name == "solve"));
        assert!(tmp.path().join("run.json").exists());
        assert!(tmp.path().join("config.json").exists());
        assert!(!tmp.path().join("eigen.csv").exists());
    }

    #[test]
    fn window_run_emits_diagnostics_files() {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = minimal_config(tmp.path());
        cfg.grid = GridSection { d: 1, l: 32.0, gammas: None, target_spacing: 0.5 };
        cfg.potential = PotentialSection::Anderson { seed: 3, p: 0.5 };
        cfg.solver = SolverSection {
            mode: SolverMode::Window,
            k: None,
            e: Some(0.2),
            tol: 1e-8,
            dense_cutoff: None,
            max_iters: None,
        };
        cfg.scales = ScalesSection { eta: 0.2, c1: 0.5, c2: 1.0 };
        cfg.diagnostics = DiagnosticsSection {
            dichotomy: true,
            loclength: true,
            varbound: true,
            sample_count: 64,
        };
        cfg.projector.enabled = true;
        let record = run_single(&cfg, None).unwrap();
        let failures: Vec<_> = record.stages.iter().filter(|s| !s.ok).collect();
        assert!(failures.is_empty(), "failed stages: {failures:?}");
        for name in ["eigen.csv", "scales.json", "dichotomy.csv", "loclength.csv", "varbound.csv", "projector.csv"]
        {
            assert!(tmp.path().join(name).exists(), "{name} missing");
        }
        // projector rows share the dichotomy schema under kind=projector
        let text = std::fs::read_to_string(tmp.path().join("dichotomy.csv")).unwrap();
        assert!(text.lines().any(|l| l.contains(",projector,")));
        assert!(text.lines().next().unwrap().starts_with("config_hash,kind,"));
    }
}
