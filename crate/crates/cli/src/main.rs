//! `sgfbsde`: convergence tables, scaling runs and problem validation for the
//! sparse-grid FBSDE solver.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgfbsde::experiment::{
    emit_csv, run_experiment, scaling_report, validate_problem, write_csv, write_scaling_csv, ExperimentSpec,
    RESIDUAL_TOL, TERMINAL_TOL, Z_IDENTITY_TOL,
};
use sgfbsde::{problem_by_name, Error, ErrorNorm};

const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "sgfbsde", version, about = "Multi-step sparse-grid FBSDE solver: convergence experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sweep the number of time steps and write a convergence CSV.
    Solve {
        /// Problem id: example1, example2:q=<2..6>, example3:q=<2..5>[:M=<m>], constant:q=<d>, brownian.
        #[arg(long)]
        problem: String,
        /// Number of steps of the multistep scheme.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=6))]
        k: u8,
        /// Comma-separated list of time-step counts.
        #[arg(long = "N", value_delimiter = ',', default_value = "8,16,32,64,128")]
        steps: Vec<usize>,
        /// Interpolation level (defaults to the reference level of the problem).
        #[arg(long)]
        p: Option<u32>,
        /// Quadrature level (defaults to the reference level of the problem).
        #[arg(long)]
        pq: Option<u32>,
        /// Picard tolerance.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Time horizon.
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
        /// Error norm: max, rms or point:<x1,x2,...>.
        #[arg(long, default_value = "max", value_parser = parse_norm)]
        norm: ErrorNorm,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Output CSV (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write zero runtimes so that repeated runs produce identical files.
        #[arg(long)]
        no_runtime: bool,
    },
    /// Runtime against dimension at a fixed number of time steps.
    Scaling {
        /// Problem family: example2 or example3.
        #[arg(long, default_value = "example2")]
        problem: String,
        /// Comma-separated dimensions.
        #[arg(long, value_delimiter = ',', default_value = "3,4,5,6")]
        q: Vec<usize>,
        #[arg(long = "N", default_value_t = 128)]
        steps: usize,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=6))]
        k: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a problem's generator, terminal condition, Z formula and
    /// coefficient bounds against its exact solution.
    Validate {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 100_000)]
        bound_samples: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long = "T", default_value_t = 1.0)]
        horizon: f64,
    },
}

fn parse_norm(s: &str) -> Result<ErrorNorm, String> {
    match s {
        "max" => Ok(ErrorNorm::Max),
        "rms" => Ok(ErrorNorm::Rms),
        _ => {
            let coords = s
                .strip_prefix("point:")
                .ok_or_else(|| format!("unknown norm {s:?}; expected max, rms or point:<coords>"))?;
            let x = coords
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| format!("bad coordinate {c:?}")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ErrorNorm::Point(x))
        }
    }
}

fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::InvalidParameter(_) | Error::Parse(_) | Error::Unsupported(_) => ExitCode::from(EXIT_INVALID),
        Error::Divergence { .. } => ExitCode::from(EXIT_DIVERGENCE),
        _ => ExitCode::FAILURE,
    }
}

fn write_output(out: Option<&PathBuf>, bytes: &[u8]) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.clone(), source: e }),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::Io { path: "<stdout>".into(), source: e }),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_solve(
    problem: String,
    k: u8,
    steps: Vec<usize>,
    p: Option<u32>,
    pq: Option<u32>,
    tol: f64,
    horizon: f64,
    norm: ErrorNorm,
    threads: Option<usize>,
    out: Option<PathBuf>,
    no_runtime: bool,
) -> Result<ExitCode, Error> {
    let mut spec = ExperimentSpec::new(problem, k as usize, steps)?;
    if let Some(p) = p {
        spec.p = p;
    }
    if let Some(pq) = pq {
        spec.pq = pq;
    }
    spec.tol = tol;
    spec.horizon = horizon;
    spec.norm = norm;
    spec.threads = threads;
    spec.record_runtime = !no_runtime;
    let result = run_experiment(&spec)?;
    match &out {
        Some(path) => emit_csv(&result, path)?,
        None => write_csv(&result, std::io::stdout().lock())?,
    }
    eprintln!(
        "{} k={} C^{} G^{}: CR_Y = {:.3}, CR_Z = {:.3}{}",
        result.problem,
        result.k,
        result.p,
        result.pq,
        result.cr_y,
        result.cr_z,
        if result.cr_flagged { " (fewer than 3 rows)" } else { "" }
    );
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(" ");
    eprintln!("pairwise rates Y: {}", fmt(&result.pairwise_y));
    eprintln!("pairwise rates Z: {}", fmt(&result.pairwise_z));
    let failed: Vec<_> = result.rows.iter().filter_map(|r| r.failure.as_ref().map(|f| (r.steps, f))).collect();
    for (n, f) in &failed {
        eprintln!("N={n} failed: {f}");
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_DIVERGENCE) })
}

fn run_validate(problem: &str, samples: usize, bound_samples: usize, seed: u64, horizon: f64) -> Result<ExitCode, Error> {
    let prob = problem_by_name(problem)?;
    let report = validate_problem(&prob, samples, bound_samples, seed, horizon)?;
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    println!("problem: {}", report.problem);
    println!(
        "feynman-kac residual (1/2 convention): {:.3e} [{}]",
        report.residual_half,
        mark(report.residual_half <= RESIDUAL_TOL)
    );
    println!("feynman-kac residual (no 1/2):         {:.3e}", report.residual_as_printed);
    println!("terminal consistency:                  {:.3e} [{}]", report.terminal, mark(report.terminal <= TERMINAL_TOL));
    println!(
        "Z = u_x sigma identity:                {:.3e} [{}]",
        report.z_identity,
        mark(report.z_identity <= Z_IDENTITY_TOL)
    );
    if let Some(((cb, cs), (ob, os))) = report.bounds {
        println!(
            "coefficient bounds: |b| <= {cb:.6} (observed {ob:.6}), |sigma| <= {cs:.6} (observed {os:.6}) [{}]",
            mark(report.bounds_hold())
        );
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_VALIDATION) })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Solve { problem, k, steps, p, pq, tol, horizon, norm, threads, out, no_runtime } => {
            run_solve(problem, k, steps, p, pq, tol, horizon, norm, threads, out, no_runtime)
        }
        Command::Scaling { problem, q, steps, k, out } => {
            let rows = scaling_report(&problem, &q, steps, k as usize)?;
            let mut buf = Vec::new();
            write_scaling_csv(&rows, &mut buf)?;
            write_output(out.as_ref(), &buf)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { problem, samples, bound_samples, seed, horizon } => {
            run_validate(&problem, samples, bound_samples, seed, horizon)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
