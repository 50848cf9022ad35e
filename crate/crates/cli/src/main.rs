use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use deloc_cli::config::RunConfig;
use deloc_cli::report::{self, fmt_f64};
use deloc_cli::runner::{build_grid_stage, run_single};
use deloc_cli::sweep::{calibrate_c1, run_sweep};
use deloc_cli::verify::verify_dir;
use deloc_core::greens::{
    b_norm_check, b_parseval_norm2, build_b, build_cutoff, dirichlet_l, weak_identity_defect,
};
use deloc_core::field::ScalarField;

/// Numerical laboratory for low-energy eigenstates of −Δ + V on tori:
/// mass-dichotomy, localization-length and spectral-projector diagnostics.
#[derive(Parser)]
#[command(name = "deloc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Print the discretized torus (counts, spacings, volume element).
    Grid(ConfigArgs),
    /// Build the potential and report its stats.
    Potential(ConfigArgs),
    /// Solve for eigenpairs and write eigen.csv.
    Solve(ConfigArgs),
    /// Write the scale record (ℓ, r, admissible window) at solver.e.
    Scales(ConfigArgs),
    /// Run the mass dichotomy over all window eigenpairs.
    Dichotomy(ConfigArgs),
    /// Estimate localization lengths for the window eigenpairs.
    Loclength(ConfigArgs),
    /// Kernel laboratory: difference kernel on a box, norm/Parseval checks,
    /// weak Laplace identity, cutoff constants, lattice Dirichlet series.
    Greens(GreensArgs),
    /// Empirical variation constants (and pigeonhole witnesses).
    Varbound(ConfigArgs),
    /// Build the window projector state and verify its bounds.
    Projector(ConfigArgs),
    /// Run the full seeds × energies sweep with aggregate tables.
    Sweep(ConfigArgs),
    /// Calibrate c₁ over the configured reference sweep.
    Calibrate(ConfigArgs),
    /// Re-hash the artifacts listed in a run manifest.
    Verify {
        /// Run directory containing run.json.
        dir: PathBuf,
    },
}

#[derive(Args)]
struct GreensArgs {
    /// Dimension (1–3).
    #[arg(short, long)]
    d: usize,
    /// Box side r′ = 2r + 1.
    #[arg(long)]
    rprime: f64,
    /// Fourier cutoff K.
    #[arg(short, long, default_value_t = 64)]
    k: u32,
    /// Directory for greens.json (printed to stdout otherwise).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn load(args: &ConfigArgs) -> Result<RunConfig> {
    let cfg = RunConfig::from_path(&args.config)?;
    deloc_cli::apply_thread_budget(cfg.threads);
    Ok(cfg)
}

/// Restrict the pipeline to the stages a subcommand owns.
fn with_stages(
    mut cfg: RunConfig,
    dichotomy: bool,
    loclength: bool,
    varbound: bool,
    projector: bool,
) -> RunConfig {
    cfg.diagnostics.dichotomy = dichotomy;
    cfg.diagnostics.loclength = loclength;
    cfg.diagnostics.varbound = varbound;
    cfg.projector.enabled = projector;
    cfg
}

fn finish_run(cfg: &RunConfig, args: &ConfigArgs) -> Result<bool> {
    let record = run_single(cfg, args.out.as_deref())?;
    for stage in &record.stages {
        match &stage.error {
            None => println!("stage {:<10} ok", stage.name),
            Some(err) => println!("stage {:<10} FAILED: {err}", stage.name),
        }
    }
    Ok(!record.failed)
}

fn greens_suite(args: &GreensArgs) -> Result<bool> {
    let r = (args.rprime - 1.0) / 2.0;
    let center = vec![args.rprime / 2.0; args.d];
    let mut x1 = center.clone();
    let mut x2 = center.clone();
    x1[0] = (args.rprime / 2.0 - r).max(0.5);
    x2[0] = (args.rprime / 2.0 + r).min(args.rprime - 0.5);
    let gf = build_b(args.d, args.rprime, &x1, &x2, args.k)?;
    let norm = b_norm_check(&gf)?;
    let quad = gf.field.l2_norm().powi(2);
    let pars = b_parseval_norm2(&gf);
    let parseval_defect = (quad - pars).abs() / pars.max(f64::MIN_POSITIVE);

    // band-limited cosine test functions for the weak identity
    let grid = gf.field.grid().clone();
    let mut weak_defects = Vec::new();
    for mode in 1..=3i64 {
        let phi_fn = |x: &[f64]| -> f64 {
            (2.0 * std::f64::consts::PI * mode as f64 * x[0] / args.rprime).cos()
        };
        let vals: Vec<f64> = (0..grid.n_total()).map(|i| phi_fn(&grid.point(i))).collect();
        let phi = ScalarField::from_values(grid.clone(), vals)?;
        weak_defects.push(weak_identity_defect(&gf, &phi, phi_fn(&x1), phi_fn(&x2))?.abs());
    }

    let dl = dirichlet_l(args.d, 2.0, 100_000.min(10u64.pow(7 - args.d as u32)))?;

    // cutoff constants on a matching torus
    let spec = deloc_core::grid::TorusSpec::new(args.d, args.rprime.ceil().max(2.0 * r + 2.0), &vec![1.0; args.d - 1])?;
    let cgrid = Arc::new(deloc_core::grid::build_grid(&spec, 0.125)?);
    let chi = build_cutoff(&cgrid, r.max(1.0))?;

    #[derive(serde::Serialize)]
    struct GreensReport {
        d: usize,
        rprime: f64,
        k: u32,
        norm: f64,
        norm_bound: f64,
        norm_ratio: f64,
        parseval_defect: f64,
        weak_defects: Vec<f64>,
        dirichlet_partial: f64,
        dirichlet_tail: f64,
        cutoff_k1: f64,
        cutoff_k2: f64,
    }
    let rep = GreensReport {
        d: args.d,
        rprime: args.rprime,
        k: args.k,
        norm: norm.norm,
        norm_bound: norm.bound,
        norm_ratio: norm.ratio,
        parseval_defect,
        weak_defects: weak_defects.clone(),
        dirichlet_partial: dl.partial_sum,
        dirichlet_tail: dl.tail_bound,
        cutoff_k1: chi.k1,
        cutoff_k2: chi.k2,
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        report::write_json(&dir.join("greens.json"), &rep)?;
    }
    println!(
        "norm ratio {}  parseval defect {}  worst weak defect {}  k1 {}  k2 {}",
        fmt_f64(rep.norm_ratio),
        fmt_f64(rep.parseval_defect),
        fmt_f64(weak_defects.iter().cloned().fold(0.0, f64::max)),
        fmt_f64(rep.cutoff_k1),
        fmt_f64(rep.cutoff_k2),
    );
    Ok(rep.norm_ratio <= 1.01)
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Grid(args) => {
            let cfg = load(&args)?;
            let grid = build_grid_stage(&cfg)?;
            println!(
                "d = {}, sides = {:?}, counts = {:?}, spacings = {:?}, volume element = {}",
                grid.d(),
                grid.sides(),
                grid.counts(),
                grid.spacings(),
                fmt_f64(grid.volume_element()),
            );
            Ok(true)
        }
        Command::Potential(args) => {
            let cfg = load(&args)?;
            let grid = build_grid_stage(&cfg)?;
            let v = deloc_cli::runner::build_potential_stage(&cfg, &grid)?;
            let stats = deloc_core::potential::potential_stats(&v);
            println!(
                "inf V = {}, sup V = {}, standing assumptions met: {}",
                fmt_f64(stats.inf),
                fmt_f64(stats.sup),
                stats.assumptions_met
            );
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir)?;
                v.save(dir.join("potential.field"))?;
            }
            Ok(true)
        }
        Command::Solve(args) => {
            let cfg = with_stages(load(&args)?, false, false, false, false);
            finish_run(&cfg, &args)
        }
        Command::Scales(args) => {
            let cfg = with_stages(load(&args)?, false, false, false, false);
            anyhow::ensure!(cfg.solver.e.is_some(), "scales require solver.e");
            finish_run(&cfg, &args)
        }
        Command::Dichotomy(args) => {
            let cfg = with_stages(load(&args)?, true, false, false, false);
            finish_run(&cfg, &args)
        }
        Command::Loclength(args) => {
            let cfg = with_stages(load(&args)?, false, true, false, false);
            finish_run(&cfg, &args)
        }
        Command::Varbound(args) => {
            let cfg = with_stages(load(&args)?, false, false, true, false);
            finish_run(&cfg, &args)
        }
        Command::Projector(args) => {
            let cfg = with_stages(load(&args)?, false, false, false, true);
            finish_run(&cfg, &args)
        }
        Command::Sweep(args) => {
            let cfg = load(&args)?;
            let outcome = run_sweep(&cfg, args.out.as_deref())?;
            println!(
                "{} job(s), {} failed; {} curve row(s)",
                outcome.jobs.len(),
                outcome.failed_jobs,
                outcome.curves.iter().map(|(_, c)| c.rows.len()).sum::<usize>()
            );
            Ok(outcome.failed_jobs == 0)
        }
        Command::Calibrate(args) => {
            let cfg = load(&args)?;
            let outcome = calibrate_c1(&cfg, args.out.as_deref())?;
            match outcome.c1 {
                Some(c1) => {
                    println!("calibrated c1 = {} after {} step(s)", fmt_f64(c1), outcome.steps.len());
                    Ok(true)
                }
                None => {
                    println!("calibration failed: no admissible c1 on the grid");
                    Ok(false)
                }
            }
        }
        Command::Greens(args) => greens_suite(&args),
        Command::Verify { dir } => {
            let report = verify_dir(&dir).context("verification")?;
            if report.ok() {
                println!(
                    "ok: {} artifact(s) verified, config hash {}",
                    report.artifacts_checked, report.config_hash
                );
            } else {
                if !report.config_hash_ok {
                    println!("config hash mismatch");
                }
                for issue in &report.issues {
                    println!("mismatch {}: manifest {} found {}", issue.path, issue.expected, issue.found);
                }
            }
            Ok(report.ok())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
