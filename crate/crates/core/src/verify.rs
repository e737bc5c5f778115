//! Seeded property suites. Each suite returns one [`CheckRow`] per property
//! with the number of trials, the number of violations and the worst value
//! seen, so that the aggregate table is a deterministic function of the seed.

use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gen::{gen_centered, gen_suite_seeded, GenSpec, SuiteName};
use crate::io::fmt_f64;
use crate::lo::{dual_slack, proximity, reconstruction_tolerance};
use crate::nes::{
    assemble_nes, budget_for_kappa, report_for_direction, sample_unit_sphere, solve_exact, worst_case_perturbation,
    DirectionReport, NesSystem, OracleConfig,
};
use crate::refine::{build_refining_instance, refine, round_count, warm_start, RefineConfig};
use crate::solver::{solve, SolveStatus, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifySuite {
    Lemma8,
    LemmaCond,
    Prop1,
    LambdaStar,
    Quadratic,
    Identity,
    Sandwich,
    Warmstart,
    Rounds,
    All,
}

pub const SUITES: [VerifySuite; 9] = [
    VerifySuite::Lemma8,
    VerifySuite::LemmaCond,
    VerifySuite::Prop1,
    VerifySuite::LambdaStar,
    VerifySuite::Quadratic,
    VerifySuite::Identity,
    VerifySuite::Sandwich,
    VerifySuite::Warmstart,
    VerifySuite::Rounds,
];

impl VerifySuite {
    pub fn name(self) -> &'static str {
        match self {
            Self::Lemma8 => "lemma8",
            Self::LemmaCond => "lemma-cond",
            Self::Prop1 => "prop1",
            Self::LambdaStar => "lambda-star",
            Self::Quadratic => "quadratic",
            Self::Identity => "identity",
            Self::Sandwich => "sandwich",
            Self::Warmstart => "warmstart",
            Self::Rounds => "rounds",
            Self::All => "all",
        }
    }
}

impl FromStr for VerifySuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SUITES
            .iter()
            .chain(&[VerifySuite::All])
            .find(|v| v.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown verify suite '{s}'")))
    }
}

/// Outcome of one property over all of its trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub suite: &'static str,
    pub check: &'static str,
    pub trials: usize,
    pub failures: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// Limit the quantity is compared against.
    pub bound: f64,
}

impl CheckRow {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }
}

struct Tally {
    trials: usize,
    failures: usize,
    worst: f64,
    maximize: bool,
}

impl Tally {
    /// Tracks the largest value.
    fn max() -> Self {
        Self {
            trials: 0,
            failures: 0,
            worst: f64::NEG_INFINITY,
            maximize: true,
        }
    }

    /// Tracks the smallest value.
    fn min() -> Self {
        Self {
            trials: 0,
            failures: 0,
            worst: f64::INFINITY,
            maximize: false,
        }
    }

    fn record(&mut self, value: f64, ok: bool) {
        self.trials += 1;
        if !ok || value.is_nan() {
            self.failures += 1;
        }
        self.worst = if value.is_nan() {
            f64::NAN
        } else if self.maximize {
            self.worst.max(value)
        } else {
            self.worst.min(value)
        };
    }

    fn row(self, suite: &'static str, check: &'static str, bound: f64) -> CheckRow {
        CheckRow {
            suite,
            check,
            trials: self.trials,
            failures: self.failures,
            worst: self.worst,
            bound,
        }
    }
}

/// Independent stream per (suite, trial) under one seed.
fn rng_for(seed: u64, suite: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((suite << 40) | index);
    rng
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

/// Random SPD matrix `P diag(λ) Pᵀ` with `λ` log-uniform in `[1, 10^decades]`.
fn random_spd(rng: &mut ChaCha8Rng, dim: usize, decades: f64) -> DMatrix<f64> {
    let p = gaussian_matrix(rng, dim, dim).qr().q();
    let lambda = DVector::from_fn(dim, |_, _| log_uniform(rng, 1.0, 10f64.powf(decades)));
    &p * DMatrix::from_diagonal(&lambda) * p.transpose()
}

fn cond(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    sv.max() / sv.min()
}

fn problem(m: usize, n: usize, kappa: f64, delta0: f64, seed: u64) -> Result<crate::gen::GeneratedProblem<f64>> {
    gen_centered(&GenSpec {
        m,
        n,
        mu0: 1.0,
        kappa_target: kappa,
        delta0,
        seed,
    })
}

/// `u, v` unit, `M` SPD, `0 ≤ γ₁ ≤ γ₂/√κ(M)`, `γ₂ ∈ [0, 1]`:
/// `uᵀM(γ₁v) + uᵀMu ≥ 0`. Odd trials use the minimizing `v = −Mu/‖Mu‖`
/// and the largest admissible `γ₁`. `M` is scaled to unit spectral norm.
pub fn lemma8(seed: u64, trials: usize) -> Vec<CheckRow> {
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, 1, t as u64);
            let dim = 2 + t % 7;
            let decades = rng.random_range(0.0..6.0);
            let mut m = random_spd(&mut rng, dim, decades);
            m = (&m + m.transpose()) * 0.5;
            let eig = m.clone().symmetric_eigen();
            let (lmin, lmax) = (eig.eigenvalues.min(), eig.eigenvalues.max());
            m /= lmax;
            let kappa = lmax / lmin;
            let u: DVector<f64> = sample_unit_sphere(dim, &mut rng);
            let mu = &m * &u;
            let adversarial = t % 2 == 1;
            let v = if adversarial {
                -&mu / mu.norm()
            } else {
                sample_unit_sphere(dim, &mut rng)
            };
            let gamma2 = if t % 5 == 0 { 1.0 } else { rng.random_range(0.0..=1.0) };
            let cap = gamma2 / kappa.sqrt();
            let gamma1 = if adversarial { cap } else { rng.random_range(0.0..=1.0) * cap };
            u.dot(&(&m * &v)) * gamma1 + u.dot(&mu)
        })
        .collect();
    let mut tally = Tally::min();
    for v in values {
        tally.record(v, v >= -1e-10);
    }
    vec![tally.row("lemma8", "min u'M(g1 v)+u'Mu", -1e-10)]
}

/// `κ(QΨQᵀ) ≤ κ(Ψ)·κ(Q)²` for full-row-rank `Q` and SPD `Ψ`. Even trials
/// use a diagonal `Ψ`, odd trials a dense one.
pub fn lemma_cond(seed: u64, trials: usize) -> Vec<CheckRow> {
    let ratios: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_for(seed, 2, t as u64);
            let m = 1 + t % 6;
            let n = m + rng.random_range(0..=8);
            let mut q = gaussian_matrix(&mut rng, m, n);
            for mut col in q.column_iter_mut() {
                col *= log_uniform(&mut rng, 1.0, 1e2);
            }
            let decades = rng.random_range(0.0..4.0);
            let psi = if t % 2 == 0 {
                DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| log_uniform(&mut rng, 1.0, 10f64.powf(decades))))
            } else {
                random_spd(&mut rng, n, decades)
            };
            let lhs = cond(&(&q * &psi * q.transpose()));
            let kq = cond(&q);
            lhs / (cond(&psi) * kq * kq)
        })
        .collect();
    let mut tally = Tally::max();
    for r in ratios {
        tally.record(r, r <= 1.0 + 1e-8);
    }
    vec![tally.row("lemma-cond", "max k(QPQ')/(k(P)k(Q)^2)", 1.0 + 1e-8)]
}

const PROP1_SHAPES: [(usize, usize, f64); 10] = [
    (2, 6, 1.0),
    (3, 9, 10.0),
    (4, 16, 10.0),
    (4, 16, 1000.0),
    (5, 20, 100.0),
    (6, 30, 10.0),
    (8, 64, 10.0),
    (8, 64, 1000.0),
    (3, 12, 100.0),
    (6, 36, 1.0),
];

/// Perturbations `E` with `‖E‖` equal to the full budget
/// `(0.005/1.995)/κ(AS⁻¹)`, applied to `Δy/‖Δy‖` at an off-center iterate:
/// `cos ψ ≥ 0.995`.
pub fn prop1(seed: u64, instances: usize, samples: usize) -> Result<Vec<CheckRow>> {
    let per: Vec<(Vec<f64>, f64)> = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, f64)> {
            let (m, n, kappa) = PROP1_SHAPES[i % PROP1_SHAPES.len()];
            let p = problem(m, n, kappa, 0.3, seed.wrapping_add(i as u64))?;
            let nes = assemble_nes(&p.instance, &p.s0, p.mu0)?;
            let dy = solve_exact(&nes)?;
            let u = &dy / dy.norm();
            let budget = budget_for_kappa(nes.kappa()?);
            let mut rng = rng_for(seed, 3, i as u64);
            let mut cos = Vec::with_capacity(samples);
            for _ in 0..samples {
                let e: DVector<f64> = sample_unit_sphere(m, &mut rng);
                let r = report_for_direction(&p.instance, &nes, unit(&u + e * budget))?;
                cos.push(r.cos_psi);
            }
            let w = worst_case_perturbation(&nes, &u);
            let r = report_for_direction(&p.instance, &nes, unit(&u + w * budget))?;
            Ok((cos, r.cos_psi))
        })
        .collect::<Result<_>>()?;
    let mut uniform = Tally::min();
    let mut adversarial = Tally::min();
    for (cos, worst) in per {
        for c in cos {
            uniform.record(c, c >= 0.995);
        }
        adversarial.record(worst, worst >= 0.995);
    }
    Ok(vec![
        uniform.row("prop1", "min cos psi (uniform)", 0.995),
        adversarial.row("prop1", "min cos psi (worst case)", 0.995),
    ])
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

pub const LAMBDA_GRID: [f64; 6] = [0.5, 0.9, 0.99, 1.01, 1.1, 1.5];

/// `‖S⁻¹Aᵀ(Δy − λΔȳ)‖`, evaluated from the scaled transpose directly.
pub fn rescaling_error(nes: &NesSystem<f64>, dy_exact: &DVector<f64>, dy_unit: &DVector<f64>, lambda: f64) -> f64 {
    let bt = nes.factorization().scaled_transpose();
    (bt * dy_exact - bt * dy_unit * lambda).norm()
}

/// Relative orthogonality residual of the rescaled error against `S⁻¹AᵀΔȳ`.
pub fn orthogonality_residual(nes: &NesSystem<f64>, report: &DirectionReport<f64>) -> f64 {
    let bt = nes.factorization().scaled_transpose();
    let img = bt * &report.dy_unit;
    let exact = bt * &report.dy_exact;
    let err = &exact - &img * report.lambda_star;
    img.dot(&err).abs() / (img.norm() * exact.norm())
}

/// λ* against the grid `{0.5, 0.9, 0.99, 1.01, 1.1, 1.5}·λ*` and the
/// orthogonality of its error, on noisy quantum-oracle directions.
pub fn lambda_star(seed: u64, pairs: usize) -> Result<Vec<CheckRow>> {
    let per: Vec<(f64, f64)> = (0..pairs)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let mut rng = rng_for(seed, 4, i as u64);
            let m = 2 + i % 5;
            let n = m * (2 + i % 4);
            let kappa = [1.0, 10.0, 100.0][i % 3];
            let delta0 = rng.random_range(0.1..=0.5);
            let p = problem(m, n, kappa, delta0, seed.wrapping_add(i as u64))?;
            let nes = assemble_nes(&p.instance, &p.s0, p.mu0)?;
            let noise = [1.0, 10.0, 100.0, 1000.0][i % 4];
            let config = OracleConfig::quantum(noise, seed.wrapping_add(1000 + i as u64));
            let mut oracle = crate::nes::NesOracle::new(config)?;
            let r = crate::nes::report_with(&p.instance, &nes, &mut oracle)?;
            let best = rescaling_error(&nes, &r.dy_exact, &r.dy_unit, r.lambda_star);
            let grid_min = LAMBDA_GRID
                .iter()
                .map(|g| rescaling_error(&nes, &r.dy_exact, &r.dy_unit, g * r.lambda_star))
                .fold(f64::INFINITY, f64::min);
            Ok((grid_min - best, orthogonality_residual(&nes, &r)))
        })
        .collect::<Result<_>>()?;
    let mut grid = Tally::min();
    let mut orth = Tally::max();
    for (margin, o) in per {
        grid.record(margin, margin >= 0.0);
        orth.record(o, o <= 1e-10);
    }
    Ok(vec![
        grid.row("lambda-star", "min grid error - error at lambda*", 0.0),
        orth.row("lambda-star", "max orthogonality residual", 1e-10),
    ])
}

/// Which direction a fixed-μ Newton run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NewtonDirection {
    Exact,
    /// `Δȳ` tilted so that `‖s⁻¹E^C_Δs‖ = δ²/3` exactly.
    Constrained,
}

/// One fixed-μ Newton step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonStep {
    pub instance: usize,
    pub direction: NewtonDirection,
    pub t: usize,
    pub delta: f64,
    pub next_delta: f64,
    /// `‖s⁻¹E^C_Δs‖`.
    pub err: f64,
    /// `‖s⁻¹E^C_Δs‖ − δ·sin ψ`.
    pub identity_residual: f64,
    pub next_interior: bool,
}

/// Unit `Δȳ` whose image under `S⁻¹Aᵀ` makes angle `asin(sin_target)` with
/// that of `Δy`.
pub fn tilted_direction(
    nes: &NesSystem<f64>,
    dy: &DVector<f64>,
    sin_target: f64,
    rng: &mut ChaCha8Rng,
) -> Option<DVector<f64>> {
    let bt = nes.factorization().scaled_transpose();
    let a = bt * dy;
    let aa = a.norm_squared();
    for _ in 0..16 {
        let v: DVector<f64> = sample_unit_sphere(dy.len(), rng);
        let v_perp = &v - dy * (a.dot(&(bt * &v)) / aa);
        let w = (bt * &v_perp).norm();
        if w > 1e-8 * aa.sqrt() {
            let cos = (1.0 - sin_target * sin_target).sqrt();
            return Some(unit(dy * (cos / aa.sqrt()) + v_perp * (sin_target / w)));
        }
    }
    None
}

/// Fixed-μ full Newton iteration from `δ₀ ∈ [0.40, 0.50]` on `instances`
/// seeded problems, with exact and constrained-noisy directions, until
/// `δ < 1e−6`.
pub fn newton_runs(seed: u64, instances: usize) -> Result<Vec<NewtonStep>> {
    const SHAPES: [(usize, usize); 4] = [(4, 16), (8, 64), (3, 12), (6, 36)];
    let per: Vec<Vec<NewtonStep>> = (0..instances)
        .into_par_iter()
        .map(|i| -> Result<Vec<NewtonStep>> {
            let (m, n) = SHAPES[i % SHAPES.len()];
            let frac = if instances > 1 { i as f64 / (instances - 1) as f64 } else { 0.0 };
            let p = problem(m, n, 10.0, 0.40 + 0.10 * frac, seed.wrapping_add(i as u64))?;
            let mut steps = Vec::new();
            for direction in [NewtonDirection::Exact, NewtonDirection::Constrained] {
                let mut rng = rng_for(seed, 5, i as u64);
                let mut y = p.y0.clone();
                let mut s = p.s0.clone();
                for t in 0..60 {
                    let nes = assemble_nes(&p.instance, &s, p.mu0)?;
                    let delta = nes.delta();
                    if delta < 1e-6 || nes.rhs_is_zero() {
                        break;
                    }
                    let dy = solve_exact(&nes)?;
                    let dir = match direction {
                        NewtonDirection::Exact => unit(dy.clone()),
                        NewtonDirection::Constrained => {
                            tilted_direction(&nes, &dy, delta / 3.0, &mut rng).ok_or_else(|| {
                                Error::InvalidInstance("could not build a tilted direction".into())
                            })?
                        }
                    };
                    let r = report_for_direction(&p.instance, &nes, dir)?;
                    let y_next = &y + &r.dy_scaled;
                    let s_next = dual_slack(&p.instance, &y_next)?;
                    let interior = s_next.min() > 0.0;
                    let next_delta = if interior {
                        proximity(&p.instance, &s_next, p.mu0)?.delta
                    } else {
                        f64::NAN
                    };
                    steps.push(NewtonStep {
                        instance: i,
                        direction,
                        t,
                        delta,
                        next_delta,
                        err: r.err_ds_scaled_norm,
                        identity_residual: r.err_ds_scaled_norm - delta * r.sin_psi,
                        next_interior: interior,
                    });
                    if !interior {
                        break;
                    }
                    y = y_next;
                    s = s_next;
                }
            }
            Ok(steps)
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

/// Contraction bound for a direction: `δ⁺ ≤ c·δ² + 1e−8`.
pub fn contraction_factor(direction: NewtonDirection) -> f64 {
    match direction {
        NewtonDirection::Exact => 1.0,
        NewtonDirection::Constrained => 1.5,
    }
}

pub fn quadratic(seed: u64, instances: usize) -> Result<Vec<CheckRow>> {
    let steps = newton_runs(seed, instances)?;
    let mut rows = Vec::new();
    for (direction, check) in [
        (NewtonDirection::Exact, "max (delta+ - 1e-8)/delta^2 (exact)"),
        (NewtonDirection::Constrained, "max (delta+ - 1e-8)/delta^2 (noisy)"),
    ] {
        let c = contraction_factor(direction);
        let mut tally = Tally::max();
        for s in steps.iter().filter(|s| s.direction == direction) {
            let ratio = (s.next_delta - 1e-8) / (s.delta * s.delta);
            tally.record(ratio, s.next_interior && s.next_delta <= c * s.delta * s.delta + 1e-8);
        }
        rows.push(tally.row("quadratic", check, c));
    }
    let mut hyp = Tally::max();
    for s in steps.iter().filter(|s| s.direction == NewtonDirection::Constrained) {
        let ratio = s.err / (s.delta * s.delta);
        hyp.record(ratio, ratio <= 1.0 / 3.0 + 1e-9);
    }
    rows.push(hyp.row("quadratic", "max err/delta^2 (noisy)", 1.0 / 3.0));
    Ok(rows)
}

/// `‖s⁻¹E^C_Δs‖ = δ·sin ψ` on every audited step of seeded quantum-oracle
/// solves and on the fixed-μ Newton runs.
pub fn identity(seed: u64) -> Result<Vec<CheckRow>> {
    let members = gen_suite_seeded::<f64>(SuiteName::Scaling, seed)?;
    let jobs: Vec<(usize, u64)> = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).collect();
    let residuals: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(i, j)| -> Result<Vec<f64>> {
            let p = &members[i].problem;
            let config = SolverConfig {
                oracle: OracleConfig::quantum(1.0, seed.wrapping_add(100 + 10 * i as u64 + j)),
                ..SolverConfig::default()
            };
            let (_, trace) = solve(&p.instance, &p.y0, p.mu0, &config)?;
            Ok(trace.audits.iter().map(|a| a.identity_residual.abs()).collect())
        })
        .collect::<Result<_>>()?;
    let mut solver = Tally::max();
    for r in residuals.into_iter().flatten() {
        solver.record(r, r <= 1e-8);
    }
    let mut newton = Tally::max();
    for s in newton_runs(seed, 20)? {
        let r = s.identity_residual.abs();
        newton.record(r, r <= 1e-8);
    }
    Ok(vec![
        solver.row("identity", "max |err - delta sin psi| (solver)", 1e-8),
        newton.row("identity", "max |err - delta sin psi| (newton)", 1e-8),
    ])
}

/// `nμ(1 − δ) ≤ sᵀx(s, μ) ≤ nμ(1 + δ)` whenever `δ(s, μ) ≤ 1`, on random
/// interior dual points. Reports the largest excess over the band relative
/// to `nμ`.
pub fn sandwich(seed: u64, trials: usize) -> Result<Vec<CheckRow>> {
    let per: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Option<f64>> {
            let mut rng = rng_for(seed, 6, t as u64);
            let m = 1 + t % 5;
            let n = m + 1 + rng.random_range(0..12);
            let mu0 = log_uniform(&mut rng, 1e-2, 1e2);
            let p = gen_centered::<f64>(&GenSpec {
                mu0,
                kappa_target: log_uniform(&mut rng, 1.0, 100.0),
                ..GenSpec::centered(m, n, seed.wrapping_add(t as u64))
            })?;
            let z: DVector<f64> = sample_unit_sphere(m, &mut rng);
            let dir = p.instance.a().tr_mul(&z);
            let rho = rng.random_range(0.0..0.9) * mu0 / dir.amax();
            let y = &p.y0 + z * rho;
            let s = dual_slack(&p.instance, &y)?;
            let mu = mu0 * rng.random_range(0.7..1.3);
            let prox = proximity(&p.instance, &s, mu)?;
            if prox.delta > 1.0 {
                return Ok(None);
            }
            let nmu = n as f64 * mu;
            let gap = s.dot(&prox.x_of_s_mu.x);
            let excess = (nmu * (1.0 - prox.delta) - gap).max(gap - nmu * (1.0 + prox.delta)).max(0.0);
            Ok(Some(excess / nmu))
        })
        .collect::<Result<_>>()?;
    let mut tally = Tally::max();
    for e in per.into_iter().flatten() {
        tally.record(e, e <= 1e-10);
    }
    Ok(vec![tally.row("sandwich", "max excess / (n mu)", 1e-10)])
}

/// Warm starts of refining problems built from a `ζ̂`-solution: exact
/// feasibility and `δ_IR(∇s⁰, ∇²μ₀) = δ(s⁰, μ₀)` for `∇ ∈ {1, 10², 10⁴}`.
pub fn warmstart(seed: u64) -> Result<Vec<CheckRow>> {
    const CASES: [(usize, usize, f64); 6] = [
        (4, 16, 0.0),
        (4, 16, 0.2),
        (4, 16, 0.4),
        (8, 64, 0.0),
        (8, 64, 0.25),
        (8, 64, 0.45),
    ];
    let per: Vec<Vec<(f64, f64, bool)>> = CASES
        .par_iter()
        .enumerate()
        .map(|(i, &(m, n, delta0))| -> Result<Vec<(f64, f64, bool)>> {
            let p = problem(m, n, 10.0, delta0, seed.wrapping_add(i as u64))?;
            let (first, _) = solve(&p.instance, &p.y0, p.mu0, &SolverConfig::with_zeta(1e-2))?;
            if first.status != SolveStatus::Converged {
                return Err(Error::Round {
                    round: 0,
                    reason: format!("{:?}", first.status),
                });
            }
            let mut out = Vec::new();
            for nabla in [1.0, 1e2, 1e4] {
                let sub = build_refining_instance(&p.instance, &first.s_final, nabla);
                let (y_hat, s_hat, mu_hat) = warm_start(&p.y0, &first.y_final, &p.s0, p.mu0, nabla);
                let residual = (p.instance.a().tr_mul(&y_hat) + &s_hat - sub.c()).norm();
                let scaled_residual = residual / (nabla * (1.0 + p.instance.c().norm()));
                let delta_ir = proximity(&sub, &s_hat, mu_hat)?.delta;
                out.push((scaled_residual, (delta_ir - p.delta0).abs(), s_hat.min() > 0.0));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut feas = Tally::max();
    let mut ident = Tally::max();
    for (res, gap, interior) in per.into_iter().flatten() {
        feas.record(res, res <= 1e-10 && interior);
        ident.record(gap, gap <= 1e-8);
    }
    Ok(vec![
        feas.row("warmstart", "max residual / (nabla (1+|c|))", 1e-10),
        ident.row("warmstart", "max |delta_IR - delta0|", 1e-8),
    ])
}

/// Round-count formula on powers of ten, and complete refinement runs:
/// rounds performed, outer feasibility and the final gap certificate.
pub fn rounds(seed: u64) -> Result<Vec<CheckRow>> {
    let mut formula = Tally::max();
    for q in 1..=4i32 {
        for p in q..=16i32 {
            let k = round_count(10f64.powi(-p), 10f64.powi(-q));
            let expected = ((p + q - 1) / q) as usize;
            let diff = (k as f64 - expected as f64).abs();
            formula.record(diff, k == expected);
        }
    }

    const CASES: [(usize, usize, f64, f64); 3] = [(4, 16, 1e-6, 1e-2), (8, 64, 1e-8, 1e-2), (4, 16, 1e-9, 1e-3)];
    let runs: Vec<(usize, usize, f64, f64, f64)> = CASES
        .par_iter()
        .enumerate()
        .map(|(i, &(m, n, zeta, zeta_hat))| -> Result<_> {
            let p = problem(m, n, 10.0, 0.2, seed.wrapping_add(i as u64))?;
            let config = RefineConfig::new(zeta, zeta_hat);
            let (res, state) = refine(&p.instance, &p.y0, p.mu0, &config)?;
            let done = if res.status == SolveStatus::Converged {
                state.rounds.len() - 1
            } else {
                usize::MAX
            };
            let tol = reconstruction_tolerance(&p.instance);
            let drift = state
                .rounds
                .iter()
                .map(|r| if r.min_slack > 0.0 { r.slack_drift / tol } else { f64::INFINITY })
                .fold(0.0, f64::max);
            let gap = res.final_gap.unwrap_or(f64::NAN) / zeta;
            Ok((done, state.planned_rounds, round_count(zeta, zeta_hat) as f64, drift, gap))
        })
        .collect::<Result<_>>()?;
    let mut count = Tally::max();
    let mut feas = Tally::max();
    let mut gap = Tally::max();
    for (done, planned, expected, drift, g) in runs {
        let diff = (done as f64 - expected).abs();
        count.record(diff, done == planned && planned as f64 == expected);
        feas.record(drift, drift <= 1.0);
        gap.record(g, g <= 1.0);
    }
    Ok(vec![
        formula.row("rounds", "max |round_count - ceil(p/q)|", 0.0),
        count.row("rounds", "max |rounds run - planned|", 0.0),
        feas.row("rounds", "max slack drift / tolerance", 1.0),
        gap.row("rounds", "max final gap / zeta", 1.0),
    ])
}

pub fn run_suite(suite: VerifySuite, seed: u64) -> Result<Vec<CheckRow>> {
    match suite {
        VerifySuite::Lemma8 => Ok(lemma8(seed, 500)),
        VerifySuite::LemmaCond => Ok(lemma_cond(seed, 500)),
        VerifySuite::Prop1 => prop1(seed, 10, 1000),
        VerifySuite::LambdaStar => lambda_star(seed, 100),
        VerifySuite::Quadratic => quadratic(seed, 20),
        VerifySuite::Identity => identity(seed),
        VerifySuite::Sandwich => sandwich(seed, 500),
        VerifySuite::Warmstart => warmstart(seed),
        VerifySuite::Rounds => rounds(seed),
        VerifySuite::All => {
            let mut rows = Vec::new();
            for s in SUITES {
                rows.extend(run_suite(s, seed)?);
            }
            Ok(rows)
        }
    }
}

pub const VERIFY_HEADER: [&str; 7] = ["suite", "check", "trials", "failures", "worst", "bound", "status"];

pub fn write_rows<W: Write>(w: W, rows: &[CheckRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(VERIFY_HEADER)?;
    for r in rows {
        out.write_record([
            r.suite.to_string(),
            r.check.to_string(),
            r.trials.to_string(),
            r.failures.to_string(),
            fmt_f64(r.worst),
            fmt_f64(r.bound),
            if r.passed() { "pass" } else { "fail" }.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
