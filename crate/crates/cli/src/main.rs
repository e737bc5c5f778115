use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use dlbm_core::experiment::{run_experiment, write_experiment, ExperimentConfig};
use dlbm_core::gen::{gen_centered, GenSpec, SuiteName};
use dlbm_core::io::{write_trace_file, InstanceFile};
use dlbm_core::nes::{NoiseLaw, OracleConfig, OracleKind, DEFAULT_SEED};
use dlbm_core::refine::{condition_monitor, refine, round_count, RefineConfig};
use dlbm_core::solver::{iteration_bound, solve, SolveStatus, SolverConfig, TraceRecord};
use dlbm_core::verify::{run_suite, write_rows, VerifySuite};

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID_START: u8 = 3;
const EXIT_STEP_REJECTED: u8 = 4;
const EXIT_ITERATION_CAP: u8 = 5;

#[derive(Parser)]
#[command(name = "dlbm", version, about = "Inexact-feasible dual logarithmic barrier LO solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance with a certified interior start.
    Generate(GenerateArgs),
    /// Solve an instance from its embedded start.
    Solve(SolveArgs),
    /// Solve with iterative refinement.
    Refine(RefineArgs),
    /// Run a property suite and print the pass/fail table as CSV.
    Verify(VerifyArgs),
    /// Run a generator suite and write traces plus an aggregate CSV.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    mu0: f64,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[arg(long, default_value_t = 0.0)]
    delta0: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Exact,
    Cg,
    Quantum,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseLawArg {
    Uniform,
    Adversarial,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, value_enum, default_value_t = OracleArg::Exact)]
    oracle: OracleArg,
    /// Tomography error as a multiple of the noise budget.
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(long, value_enum, default_value_t = NoiseLawArg::Uniform)]
    noise_law: NoiseLawArg,
    /// Relative residual at which CG stops.
    #[arg(long, default_value_t = 1e-2)]
    cg_tol: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Also accept steps whose error is within δ²/3 when the 0.1·δ check fails.
    #[arg(long)]
    permissive: bool,
}

impl OracleArgs {
    fn solver(&self, zeta: f64) -> SolverConfig {
        let kind = match self.oracle {
            OracleArg::Exact => OracleKind::Exact,
            OracleArg::Cg => OracleKind::TruncatedCg,
            OracleArg::Quantum => OracleKind::SimulatedQuantum,
        };
        let noise_law = match self.noise_law {
            NoiseLawArg::Uniform => NoiseLaw::Uniform,
            NoiseLawArg::Adversarial => NoiseLaw::Adversarial,
        };
        SolverConfig {
            zeta,
            theta: self.theta,
            tau: self.tau,
            max_iters: self.max_iters,
            strict_mode: !self.permissive,
            oracle: OracleConfig {
                kind,
                noise_scale: if kind == OracleKind::SimulatedQuantum { self.noise_scale } else { 0.0 },
                cg_tolerance: self.cg_tol,
                seed: self.seed,
                noise_law,
            },
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    zeta: f64,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Write the iteration trace to this CSV file.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct RefineArgs {
    instance: PathBuf,
    #[arg(long, default_value_t = 1e-8)]
    zeta: f64,
    #[arg(long, default_value_t = 1e-2)]
    zeta_hat: f64,
    #[command(flatten)]
    oracle: OracleArgs,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// lemma8, lemma-cond, prop1, lambda-star, quadratic, identity,
    /// sandwich, warmstart, rounds or all.
    suite: String,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// scaling, conditioning or noise-sweep.
    name: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    zeta: f64,
    #[command(flatten)]
    oracle: OracleArgs,
}

fn usage_error(kind: ErrorKind, msg: impl std::fmt::Display) -> ! {
    Cli::command().error(kind, msg).exit()
}

fn status_code(status: SolveStatus) -> ExitCode {
    match status {
        SolveStatus::Converged => ExitCode::SUCCESS,
        SolveStatus::InvalidStart => ExitCode::from(EXIT_INVALID_START),
        SolveStatus::StepRejected => ExitCode::from(EXIT_STEP_REJECTED),
        SolveStatus::IterationCap => ExitCode::from(EXIT_ITERATION_CAP),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.6e}"))
}

fn check_solver(config: &SolverConfig, n: usize) {
    if let Err(e) = config.validate(n) {
        usage_error(ErrorKind::ValueValidation, e);
    }
}

fn load(path: &Path) -> Result<InstanceFile> {
    InstanceFile::read(path).with_context(|| format!("reading {}", path.display()))
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    let spec = GenSpec {
        m: args.m,
        n: args.n,
        mu0: args.mu0,
        kappa_target: args.kappa,
        delta0: args.delta0,
        seed: args.seed,
    };
    if let Err(e) = spec.validate() {
        usage_error(ErrorKind::ValueValidation, e);
    }
    let p = gen_centered::<f64>(&spec)?;
    InstanceFile::from_problem(&p)
        .write(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} (m = {}, n = {}, mu0 = {:e}, delta0 = {:.6e})",
        args.out.display(),
        args.m,
        args.n,
        p.mu0,
        p.delta0
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode> {
    let file = load(&args.instance)?;
    let (inst, y0, mu0) = file.start::<f64>()?;
    let config = args.oracle.solver(args.zeta);
    check_solver(&config, inst.n());
    let (res, trace) = solve(&inst, &y0, mu0, &config)?;
    if let Some(path) = &args.trace {
        write_trace_file(path, &trace.records).with_context(|| format!("writing {}", path.display()))?;
    }
    let failed = trace.audits.iter().filter(|a| !a.all_pass()).count();
    println!("status: {:?}", res.status);
    println!("iterations: {}", res.iterations);
    println!("bound: {}", iteration_bound(inst.n(), mu0, args.zeta));
    println!("final gap: {}", fmt_opt(res.final_gap));
    println!("final delta: {}", fmt_opt(res.final_delta));
    println!("max delta: {:.6e}", trace.max_delta());
    println!("max err_ratio: {:.6e}", trace.max_err_ratio());
    println!("audits: {} ({} failed)", trace.audits.len(), failed);
    if let Some(msg) = &res.message {
        eprintln!("{msg}");
    }
    Ok(status_code(res.status))
}

fn cmd_refine(args: RefineArgs) -> Result<ExitCode> {
    let file = load(&args.instance)?;
    let (inst, y0, mu0) = file.start::<f64>()?;
    let config = RefineConfig {
        zeta: args.zeta,
        zeta_hat: args.zeta_hat,
        inner: args.oracle.solver(args.zeta_hat),
    };
    if let Err(e) = config.validate(inst.n()) {
        usage_error(ErrorKind::ValueValidation, e);
    }
    println!("rounds: {}", round_count(args.zeta, args.zeta_hat));
    let (res, state) = refine(&inst, &y0, mu0, &config)?;
    if let Some(path) = &args.trace {
        let records: Vec<TraceRecord> = state.round_traces.iter().flat_map(|t| t.records.iter().copied()).collect();
        write_trace_file(path, &records).with_context(|| format!("writing {}", path.display()))?;
    }
    for r in &state.rounds {
        println!(
            "round {}: nabla {:e}, iterations {}, status {:?}, warm delta {:.3e}, gap {:.6e}, min slack {:.3e}",
            r.round, r.nabla, r.iterations, r.status, r.warm_delta, r.gap, r.min_slack
        );
    }
    let cond = condition_monitor(&state.round_traces);
    println!("status: {:?}", res.status);
    println!("iterations: {}", res.iterations);
    println!("final gap: {}", fmt_opt(res.final_gap));
    println!("kappa ratio: {:.6e}{}", cond.max_ratio, if cond.flagged { " (flagged)" } else { "" });
    if let Some(msg) = &res.message {
        eprintln!("{msg}");
    }
    Ok(status_code(res.status))
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let suite: VerifySuite = args
        .suite
        .parse()
        .unwrap_or_else(|e| usage_error(ErrorKind::InvalidValue, e));
    let rows = run_suite(suite, args.seed)?;
    match &args.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write_rows(&mut w, &rows)?;
            w.flush()?;
        }
        None => write_rows(io::stdout().lock(), &rows)?,
    }
    let failed: Vec<_> = rows.iter().filter(|r| !r.passed()).collect();
    for r in &failed {
        eprintln!("FAIL {} / {}: {} of {} trials", r.suite, r.check, r.failures, r.trials);
    }
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) })
}

fn cmd_experiment(args: ExperimentArgs) -> Result<ExitCode> {
    let name: SuiteName = args
        .name
        .parse()
        .unwrap_or_else(|e| usage_error(ErrorKind::InvalidValue, e));
    let config = ExperimentConfig {
        solver: args.oracle.solver(args.zeta),
        seed: args.oracle.seed,
    };
    check_solver(&config.solver, 1);
    let runs = run_experiment(name, &config)?;
    let path = write_experiment(&args.out_dir, &args.name, &runs)?;
    for r in &runs {
        println!(
            "{}: {:?}, iterations {} / bound {}, ratio {:.4}, max err_ratio {:.3e}, kappa {:.3e}",
            r.label, r.status, r.iterations, r.bound, r.ratio, r.max_err_ratio, r.kappa_as_inv
        );
    }
    println!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Refine(a) => cmd_refine(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Experiment(a) => cmd_experiment(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_FAILURE)
    })
}
