//! Experiment runner over the generator suites. Runs are independent and
//! execute in parallel; results keep suite order.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::gen::{gen_suite_seeded, SuiteMember, SuiteName};
use crate::io::{fmt_f64, write_trace_file};
use crate::nes::{budget_for_kappa, noise_budget, OracleConfig, OracleKind, DEFAULT_SEED};
use crate::solver::{iteration_bound, solve, SolveStatus, SolverConfig, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub solver: SolverConfig,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub m: usize,
    pub n: usize,
    pub kappa_target: f64,
    pub noise_scale: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub bound: usize,
    /// `iterations / (√n·ln(nμ₀/ζ))`.
    pub ratio: f64,
    pub final_gap: f64,
    pub max_delta: f64,
    pub max_err_ratio: f64,
    pub mean_err_ratio: f64,
    /// Audited attempts that failed at least one check.
    pub audit_failures: usize,
    /// `κ(AS₀⁻¹)` from an SVD of the explicitly formed matrix.
    pub kappa_as_inv: f64,
    pub noise_budget: f64,
    /// `|budget·κ / (0.005/1.995) − 1|`.
    pub budget_rel_err: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRecord>,
}

fn run_member(member: &SuiteMember<f64>, config: &ExperimentConfig, index: usize) -> Result<RunSummary> {
    let p = &member.problem;
    let inst = &p.instance;
    let (m, n) = (inst.m(), inst.n());
    let mut solver = config.solver;
    solver.oracle.seed = config.seed.wrapping_add(index as u64);
    if let Some(scale) = member.noise_scale {
        solver.oracle = OracleConfig {
            kind: OracleKind::SimulatedQuantum,
            noise_scale: scale,
            ..solver.oracle
        };
    }
    let (res, trace) = solve(inst, &p.y0, p.mu0, &solver)?;

    let scaled = DMatrix::from_fn(m, n, |i, j| inst.a()[(i, j)] / p.s0[j]);
    let sv = scaled.singular_values();
    let kappa = sv.max() / sv.min();
    let budget = noise_budget(inst, &p.s0)?;
    let budget_rel_err = (budget * kappa / budget_for_kappa(1.0) - 1.0).abs();

    let nf = n as f64;
    let log_term = (nf * p.mu0 / solver.zeta).ln();
    let errs: Vec<f64> = trace.records.iter().map(|r| r.err_ratio).collect();
    let mean_err_ratio = if errs.is_empty() {
        0.0
    } else {
        errs.iter().sum::<f64>() / errs.len() as f64
    };
    Ok(RunSummary {
        label: member.label.clone(),
        m,
        n,
        kappa_target: p.spec.kappa_target,
        noise_scale: if solver.oracle.kind == OracleKind::SimulatedQuantum {
            solver.oracle.noise_scale
        } else {
            0.0
        },
        status: res.status,
        iterations: res.iterations,
        bound: iteration_bound(n, p.mu0, solver.zeta),
        ratio: res.iterations as f64 / (nf.sqrt() * log_term),
        final_gap: res.final_gap.unwrap_or(f64::NAN),
        max_delta: trace.max_delta(),
        max_err_ratio: trace.max_err_ratio(),
        mean_err_ratio,
        audit_failures: trace.audits.iter().filter(|a| !a.all_pass()).count(),
        kappa_as_inv: kappa,
        noise_budget: budget,
        budget_rel_err,
        trace: trace.records,
    })
}

pub fn run_experiment(name: SuiteName, config: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let members = gen_suite_seeded::<f64>(name, config.seed)?;
    members
        .par_iter()
        .enumerate()
        .map(|(i, member)| run_member(member, config, i))
        .collect()
}

pub const AGGREGATE_HEADER: [&str; 18] = [
    "label",
    "m",
    "n",
    "kappa_target",
    "noise_scale",
    "status",
    "iterations",
    "bound",
    "ratio",
    "final_gap",
    "max_delta",
    "max_err_ratio",
    "mean_err_ratio",
    "audit_failures",
    "kappa_as_inv",
    "noise_budget",
    "budget_rel_err",
    "trace",
];

fn trace_name(label: &str) -> String {
    format!("{label}.trace.csv")
}

/// Writes one trace per run and `<suite>.csv` with one row per run into
/// `dir`. Returns the aggregate path.
pub fn write_experiment(dir: &Path, name: &str, runs: &[RunSummary]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.csv"));
    let mut out = csv::Writer::from_path(&path)?;
    out.write_record(AGGREGATE_HEADER)?;
    for r in runs {
        let trace = trace_name(&r.label);
        write_trace_file(dir.join(&trace), &r.trace)?;
        out.write_record([
            r.label.clone(),
            r.m.to_string(),
            r.n.to_string(),
            fmt_f64(r.kappa_target),
            fmt_f64(r.noise_scale),
            format!("{:?}", r.status),
            r.iterations.to_string(),
            r.bound.to_string(),
            fmt_f64(r.ratio),
            fmt_f64(r.final_gap),
            fmt_f64(r.max_delta),
            fmt_f64(r.max_err_ratio),
            fmt_f64(r.mean_err_ratio),
            r.audit_failures.to_string(),
            fmt_f64(r.kappa_as_inv),
            fmt_f64(r.noise_budget),
            fmt_f64(r.budget_rel_err),
            trace,
        ])?;
    }
    out.flush()?;
    Ok(path)
}
