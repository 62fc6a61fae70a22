//! `sfcdd` command-line driver for the experiment harness.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sfcdd::harness::{
    run_combine, run_dim_sweep, run_gamma_sweep, run_sfc_check, run_single, run_strong_scaling,
    run_weak_scaling, write_csv, write_csv_file, write_json_file, ExperimentKind, ExperimentResult,
    ExperimentSpec, PlateauStats,
};
use sfcdd::{Error, Result};

#[derive(Parser)]
#[command(
    name = "sfcdd",
    version,
    about = "Schwarz solvers on space-filling-curve partitions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One solve with its iteration history.
    Solve(SpecArgs),
    /// Weak scaling: fixed work per subdomain, growing P.
    WeakScale(SpecArgs),
    /// Strong scaling: fixed grid, growing P.
    StrongScale(SpecArgs),
    /// Overlap sweep over gamma.
    GammaSweep(SpecArgs),
    /// Weak scaling across dimensions.
    DimSweep(SpecArgs),
    /// Sparse-grid combination run on the manufactured Poisson problem.
    Combine(SpecArgs),
    /// Bijectivity, adjacency and Hölder diagnostics of the Hilbert curve.
    SfcCheck(SfcArgs),
}

/// Flags mirror the keys of the `--config` file; flags override the file.
#[derive(Args, Default)]
struct SpecArgs {
    /// Key-value config file (`key = value`, `#` comments).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the solver pool.
    #[arg(long)]
    jobs: Option<usize>,
    /// Dimensions, comma separated.
    #[arg(long = "dim", alias = "dims")]
    dims: Option<String>,
    /// Per-subdomain size exponents S.
    #[arg(long = "s")]
    s: Option<String>,
    /// Total level L (strong scaling, combination).
    #[arg(long)]
    level: Option<String>,
    /// Explicit level vector for `solve`, e.g. `3,3`.
    #[arg(long)]
    levels: Option<String>,
    /// Subdomain counts: list or power-of-two range `a..b`.
    #[arg(long = "p")]
    p: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    /// Coarse aggregates per subdomain: a number, `size_exponent` or `log_ratio`.
    #[arg(long)]
    q: Option<String>,
    /// richardson, pcg or fcg (comma separated).
    #[arg(long, alias = "solver")]
    method: Option<String>,
    /// one_level, additive_two_level, deflated or balanced.
    #[arg(long)]
    variant: Option<String>,
    /// none, omega or d_matrix.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    /// energy or residual.
    #[arg(long)]
    tol_kind: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    #[arg(long)]
    eig_iters: Option<String>,
    /// Estimate extremal eigenvalues for CG runs too.
    #[arg(long)]
    eigs: Option<String>,
    #[arg(long)]
    fcg_window: Option<String>,
    /// Run PCG with a non-symmetric preconditioner.
    #[arg(long)]
    force: Option<String>,
    /// Combination base subdomain count.
    #[arg(long)]
    phat: Option<String>,
    /// Random sample points for the combination error.
    #[arg(long)]
    samples: Option<String>,
    /// Also solve the full grid in a combination run.
    #[arg(long)]
    full_grid: Option<String>,
}

impl SpecArgs {
    fn overrides(&self) -> Vec<(String, String)> {
        let pairs = [
            ("dims", &self.dims),
            ("s", &self.s),
            ("level", &self.level),
            ("levels", &self.levels),
            ("p", &self.p),
            ("gamma", &self.gamma),
            ("q", &self.q),
            ("method", &self.method),
            ("variant", &self.variant),
            ("weighting", &self.weighting),
            ("seed", &self.seed),
            ("tol", &self.tol),
            ("tol_kind", &self.tol_kind),
            ("max_iters", &self.max_iters),
            ("eig_iters", &self.eig_iters),
            ("eigs", &self.eigs),
            ("fcg_window", &self.fcg_window),
            ("force", &self.force),
            ("phat", &self.phat),
            ("samples", &self.samples),
            ("full_grid", &self.full_grid),
        ];
        let mut out: Vec<(String, String)> = pairs
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if let Some(o) = &self.out {
            out.push(("out".into(), o.display().to_string()));
        }
        if let Some(j) = self.jobs {
            out.push(("jobs".into(), j.to_string()));
        }
        out
    }

    fn spec(&self, kind: ExperimentKind) -> Result<ExperimentSpec> {
        let text = match &self.config {
            Some(path) => Some(fs::read_to_string(path)?),
            None => None,
        };
        ExperimentSpec::from_settings(kind, text.as_deref(), &self.overrides())
    }
}

#[derive(Args)]
struct SfcArgs {
    /// Dimensions, comma separated.
    #[arg(long = "dim", default_value = "2")]
    dims: String,
    /// Bits per axis; all levels 1..=n are checked.
    #[arg(long, default_value_t = 4)]
    level: u32,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Exhaustive checks only up to this many key bits.
    #[arg(long, default_value_t = 24)]
    exhaustive_bits: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Summary<'a> {
    spec: &'a ExperimentSpec,
    rows: usize,
    skipped: usize,
    failed: usize,
    plateaus: Vec<PlateauStats>,
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn emit_table(spec: &ExperimentSpec, res: &ExperimentResult) -> Result<()> {
    let summary = Summary {
        spec,
        rows: res.rows.len(),
        skipped: res.rows.iter().filter(|r| r.status == "skipped").count(),
        failed: res.rows.iter().filter(|r| r.status == "failed").count(),
        plateaus: res.plateaus(),
    };
    match &spec.out {
        Some(dir) => {
            write_csv_file(&res.rows, &dir.join("results.csv"))?;
            write_csv_file(&res.timings, &dir.join("timing.csv"))?;
            write_json_file(&summary, &dir.join("summary.json"))?;
            eprintln!("wrote {} rows to {}", res.rows.len(), dir.display());
        }
        None => write_csv(&res.rows, io::stdout().lock())?,
    }
    Ok(())
}

fn run_solve(spec: &ExperimentSpec) -> Result<()> {
    let (row, report) = run_single(spec)?;
    let header = serde_json::to_string(spec).map_err(|e| Error::Io(e.to_string()))?;
    match &spec.out {
        Some(dir) => {
            write_json_file(spec, &dir.join("config.json"))?;
            write_csv_file(&[row], &dir.join("results.csv"))?;
            write_json_file(&report, &dir.join("report.json"))?;
            let path = dir.join("history.csv");
            report.write_history_csv(fs::File::create(&path)?)?;
        }
        None => {
            println!("# config {header}");
            write_csv(&[row], io::stdout().lock())?;
            report.write_history_csv(io::stdout().lock())?;
        }
    }
    Ok(())
}

fn run_combination(spec: &ExperimentSpec) -> Result<()> {
    let res = run_combine(spec)?;
    match &spec.out {
        Some(dir) => {
            write_csv_file(&res.rows, &dir.join("plan.csv"))?;
            write_csv_file(&res.timings, &dir.join("timing.csv"))?;
            write_json_file(&res.summaries, &dir.join("error_summary.json"))?;
        }
        None => {
            write_csv(&res.rows, io::stdout().lock())?;
            for s in &res.summaries {
                let line = serde_json::to_string(s).map_err(|e| Error::Io(e.to_string()))?;
                println!("# error {line}");
            }
        }
    }
    Ok(())
}

fn sfc_check(args: &SfcArgs) -> Result<()> {
    let dims = args
        .dims
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| Error::Config(format!("invalid dimension list '{}'", args.dims)))?;
    let rows = run_sfc_check(
        &dims,
        args.level,
        args.samples,
        args.seed,
        args.exhaustive_bits,
    )?;
    match &args.out {
        Some(dir) => write_csv_file(&rows, &Path::new(dir).join("sfc_check.csv")),
        None => write_csv(&rows, io::stdout().lock()),
    }
}

fn run(cli: Cli) -> Result<()> {
    let (kind, args) = match &cli.command {
        Command::SfcCheck(a) => return sfc_check(a),
        Command::Solve(a) => (ExperimentKind::Single, a),
        Command::WeakScale(a) => (ExperimentKind::Weak, a),
        Command::StrongScale(a) => (ExperimentKind::Strong, a),
        Command::GammaSweep(a) => (ExperimentKind::GammaSweep, a),
        Command::DimSweep(a) => (ExperimentKind::DimSweep, a),
        Command::Combine(a) => (ExperimentKind::Combine, a),
    };
    let spec = args.spec(kind)?;
    init_pool(spec.jobs)?;
    match kind {
        ExperimentKind::Single => run_solve(&spec),
        ExperimentKind::Combine => run_combination(&spec),
        ExperimentKind::Weak => emit_table(&spec, &run_weak_scaling(&spec)?),
        ExperimentKind::Strong => emit_table(&spec, &run_strong_scaling(&spec)?),
        ExperimentKind::GammaSweep => emit_table(&spec, &run_gamma_sweep(&spec)?),
        ExperimentKind::DimSweep => emit_table(&spec, &run_dim_sweep(&spec)?),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
