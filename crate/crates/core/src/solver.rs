//! Inexact-feasible dual logarithmic barrier method with full Newton steps.
//!
//! Each iteration queries the configured oracle for a unit direction `Δȳ`,
//! rescales it by `λ*`, takes the full step `y⁺ = y + λ*Δȳ`, rebuilds
//! `s⁺ = c − Aᵀy⁺` and shrinks `μ` by `(1 − θ)`. The loop stops once
//! `nμ ≤ ζ`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::ScaledQr;
use crate::lo::{dual_slack, duality_gap, DualIterate, LoInstance};
use crate::nes::{report_with, DirectionReport, NesOracle, NesSystem, OracleConfig};
use crate::scalar::{lit, to_f64, Real};

/// Proximity bound kept along the whole run.
pub const PROXIMITY_BOUND: f64 = 0.5;
/// Largest admissible `‖s⁻¹E^C_Δs‖ / δ`.
pub const ERROR_RATIO_BOUND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Target `ζ`; the loop runs while `nμ > ζ`.
    pub zeta: f64,
    /// Barrier reduction; `None` means `1/(4√n)`.
    pub theta: Option<f64>,
    /// Admissible initial proximity `τ`.
    pub tau: f64,
    /// Iteration cap; `None` means twice [`iteration_bound`].
    pub max_iters: Option<usize>,
    /// Audit every step against the convergence hypotheses and reject
    /// steps that violate them.
    pub strict_mode: bool,
    pub oracle: OracleConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            zeta: 1e-6,
            theta: None,
            tau: PROXIMITY_BOUND,
            max_iters: None,
            strict_mode: true,
            oracle: OracleConfig::default(),
        }
    }
}

impl SolverConfig {
    pub fn with_zeta(zeta: f64) -> Self {
        Self {
            zeta,
            ..Self::default()
        }
    }

    pub fn theta_for(&self, n: usize) -> f64 {
        self.theta.unwrap_or_else(|| default_theta(n))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let theta = self.theta_for(n);
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidConfig(format!("theta must lie in (0, 1), got {theta}")));
        }
        if !(self.tau > 0.0 && self.tau <= PROXIMITY_BOUND) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 0.5], got {}", self.tau)));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::InvalidConfig(format!("zeta must be positive, got {}", self.zeta)));
        }
        self.oracle.validate()
    }
}

/// `θ = 1/(4√n)`.
pub fn default_theta(n: usize) -> f64 {
    1.0 / (4.0 * (n as f64).sqrt())
}

/// `⌈4√n·ln(nμ₀/ζ)⌉`, or 0 when the start already satisfies `nμ₀ ≤ ζ`.
pub fn iteration_bound(n: usize, mu0: f64, zeta: f64) -> usize {
    let arg = n as f64 * mu0 / zeta;
    if arg <= 1.0 {
        return 0;
    }
    (4.0 * (n as f64).sqrt() * arg.ln()).ceil() as usize
}

/// `(1 − θ)μ`.
pub fn reduce_mu<T: Real>(mu: T, theta: T) -> T {
    (T::one() - theta) * mu
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    IterationCap,
    StepRejected,
    InvalidStart,
}

/// One row of the iteration trace, taken at the iterate *before* its step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub round: usize,
    pub mu: f64,
    pub delta: f64,
    pub lambda_star: f64,
    pub cos_psi: f64,
    pub err_ratio: f64,
    pub gap: f64,
    pub min_slack: f64,
    pub kappa_as_inv: f64,
    pub omega: f64,
}

/// Checks of one Newton step against the convergence hypotheses
/// (`δ ≤ 0.5`, `‖s⁻¹E^C_Δs‖ ≤ 0.1δ`) and conclusions (`s⁺ > 0`,
/// `δ(s⁺, μ⁺) ≤ 0.5`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub k: usize,
    pub attempt: usize,
    pub delta: f64,
    pub err_ratio: f64,
    /// `‖s⁻¹E^C_Δs‖ − δ·sin ψ`.
    pub identity_residual: f64,
    pub next_min_slack: f64,
    /// `δ(s⁺, μ⁺)`, NaN when `s⁺` is not interior.
    pub next_delta: f64,
    pub delta_ok: bool,
    pub err_ratio_ok: bool,
    /// `‖s⁻¹E^C_Δs‖ ≤ δ²/3`, the hypothesis that guarantees `s⁺ > 0`.
    pub dual_feasibility_hypothesis: bool,
    pub interior_ok: bool,
    pub next_delta_ok: bool,
}

impl AuditRecord {
    /// Every checked condition holds.
    pub fn all_pass(&self) -> bool {
        self.delta_ok && self.err_ratio_ok && self.interior_ok && self.next_delta_ok
    }

    /// Whether the step is accepted under the given mode. Permissive mode
    /// skips the proximity checks and widens the error threshold to
    /// `max(0.1δ, δ²/3)`; the step must still stay interior.
    pub fn accepted(&self, strict: bool) -> bool {
        if strict {
            self.all_pass()
        } else {
            self.interior_ok && (self.err_ratio_ok || self.dual_feasibility_hypothesis)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub theta: f64,
    pub records: Vec<TraceRecord>,
    /// Every audited attempt, including rejected ones.
    pub audits: Vec<AuditRecord>,
}

impl SolveTrace {
    pub fn max_delta(&self) -> f64 {
        self.records.iter().map(|r| r.delta).fold(0.0, f64::max)
    }

    pub fn max_err_ratio(&self) -> f64 {
        self.records.iter().map(|r| r.err_ratio).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult<T: Real> {
    pub y_final: DVector<T>,
    pub s_final: DVector<T>,
    pub mu_final: T,
    pub iterations: usize,
    pub status: SolveStatus,
    /// `δ(s_final, μ_final)` when the final iterate is interior.
    pub final_delta: Option<T>,
    /// `s_finalᵀ x(s_final, μ_final)`.
    pub final_gap: Option<T>,
    pub message: Option<String>,
}

fn audit_step<T: Real>(
    inst: &LoInstance<T>,
    iterate: &DualIterate<T>,
    report: &DirectionReport<T>,
    mu_next: T,
    k: usize,
    attempt: usize,
) -> Result<(AuditRecord, Option<(DualIterate<T>, ScaledQr<T>)>)> {
    let y_next = &iterate.y + &report.dy_scaled;
    let s_next = dual_slack(inst, &y_next)?;
    let next_min_slack = s_next.min();
    let interior_ok = next_min_slack > T::zero();
    let delta = report.delta;
    let err = report.err_ds_scaled_norm;
    let (next_delta, candidate) = if interior_ok {
        let qr = ScaledQr::new(inst, &s_next, mu_next)?;
        let d = qr.delta();
        let it = DualIterate {
            y: y_next,
            s: s_next,
            mu: mu_next,
        };
        (to_f64(d), Some((it, qr)))
    } else {
        (f64::NAN, None)
    };
    let rec = AuditRecord {
        k,
        attempt,
        delta: to_f64(delta),
        err_ratio: to_f64(report.err_ratio()),
        identity_residual: to_f64(err - delta * report.sin_psi),
        next_min_slack: to_f64(next_min_slack),
        next_delta,
        delta_ok: delta <= lit(PROXIMITY_BOUND),
        err_ratio_ok: err <= lit::<T>(ERROR_RATIO_BOUND) * delta,
        dual_feasibility_hypothesis: err <= delta * delta / lit(3.0),
        interior_ok,
        next_delta_ok: next_delta <= PROXIMITY_BOUND,
    };
    Ok((rec, candidate))
}

/// Audits a step described by `report` taken from `iterate`, with the
/// barrier parameter then reduced by `θ`.
pub fn audit_iteration<T: Real>(
    inst: &LoInstance<T>,
    iterate: &DualIterate<T>,
    report: &DirectionReport<T>,
    theta: T,
) -> Result<AuditRecord> {
    let mu_next = reduce_mu(iterate.mu, theta);
    Ok(audit_step(inst, iterate, report, mu_next, 0, 0)?.0)
}

/// One full Newton step at fixed `μ`: `y⁺ = y + λ*Δȳ`, `s⁺ = c − Aᵀy⁺`.
pub fn newton_step<T: Real>(
    inst: &LoInstance<T>,
    iterate: &DualIterate<T>,
    oracle: &mut NesOracle,
) -> Result<(DualIterate<T>, DirectionReport<T>)> {
    let nes = NesSystem::from_qr(ScaledQr::new(inst, &iterate.s, iterate.mu)?);
    let report = report_with(inst, &nes, oracle)?;
    let y = &iterate.y + &report.dy_scaled;
    let next = DualIterate::new(inst, y, iterate.mu)?;
    Ok((next, report))
}

fn invalid_start<T: Real>(y: DVector<T>, s: DVector<T>, mu: T, message: String) -> (SolveResult<T>, SolveTrace) {
    (
        SolveResult {
            y_final: y,
            s_final: s,
            mu_final: mu,
            iterations: 0,
            status: SolveStatus::InvalidStart,
            final_delta: None,
            final_gap: None,
            message: Some(message),
        },
        SolveTrace::default(),
    )
}

/// Runs the barrier method from `(y0, c − Aᵀy0)` at `μ0`.
pub fn solve<T: Real>(
    inst: &LoInstance<T>,
    y0: &DVector<T>,
    mu0: T,
    config: &SolverConfig,
) -> Result<(SolveResult<T>, SolveTrace)> {
    solve_round(inst, y0, mu0, config, 0)
}

/// [`solve`] with trace rows tagged by an outer round index.
pub fn solve_round<T: Real>(
    inst: &LoInstance<T>,
    y0: &DVector<T>,
    mu0: T,
    config: &SolverConfig,
    round: usize,
) -> Result<(SolveResult<T>, SolveTrace)> {
    let n = inst.n();
    config.validate(n)?;
    let theta_f = config.theta_for(n);
    let theta: T = lit(theta_f);
    let zeta: T = lit(config.zeta);
    let n_t = T::from_usize(n).unwrap();
    let max_iters = config
        .max_iters
        .unwrap_or_else(|| 2 * iteration_bound(n, to_f64(mu0), config.zeta));

    let s0 = dual_slack(inst, y0)?;
    let mut iterate = match DualIterate::new(inst, y0.clone(), mu0) {
        Ok(it) => it,
        Err(e) => return Ok(invalid_start(y0.clone(), s0, mu0, e.to_string())),
    };
    let mut qr = match ScaledQr::new(inst, &iterate.s, mu0) {
        Ok(qr) => qr,
        Err(e) => return Ok(invalid_start(y0.clone(), s0, mu0, e.to_string())),
    };
    let delta0 = qr.delta();
    if delta0 > lit(config.tau) {
        let msg = format!("initial proximity {:e} exceeds tau = {}", to_f64(delta0), config.tau);
        return Ok(invalid_start(y0.clone(), s0, mu0, msg));
    }

    let mut oracle = NesOracle::new(config.oracle)?;
    let mut trace = SolveTrace {
        theta: theta_f,
        ..SolveTrace::default()
    };
    let mut omega = iterate.s.amax();
    let mut k = 0usize;

    let finish = |iterate: DualIterate<T>, qr: &ScaledQr<T>, k: usize, status, message| {
        let x = qr.primal();
        let gap = duality_gap(&x, &iterate.s);
        SolveResult {
            final_delta: Some(qr.delta()),
            final_gap: Some(gap),
            y_final: iterate.y,
            s_final: iterate.s,
            mu_final: iterate.mu,
            iterations: k,
            status,
            message,
        }
    };

    loop {
        if n_t * iterate.mu <= zeta {
            return Ok((finish(iterate, &qr, k, SolveStatus::Converged, None), trace));
        }
        if k >= max_iters {
            let msg = Some(format!("iteration cap {max_iters} reached"));
            return Ok((finish(iterate, &qr, k, SolveStatus::IterationCap, msg), trace));
        }
        let mu_next = reduce_mu(iterate.mu, theta);
        let nes = NesSystem::from_qr(qr);

        let mut accepted = None;
        let mut failure = String::new();
        for attempt in 0..2 {
            let report = match report_with(inst, &nes, &mut oracle) {
                Ok(r) => r,
                Err(e) => {
                    failure = e.to_string();
                    oracle.tighten();
                    continue;
                }
            };
            let (audit, candidate) = audit_step(inst, &iterate, &report, mu_next, k, attempt)?;
            trace.audits.push(audit);
            if audit.accepted(config.strict_mode) {
                if let Some(c) = candidate {
                    accepted = Some((report, c));
                    break;
                }
            }
            failure = format!(
                "step {k} rejected: delta {:.3e}, err_ratio {:.3e}, next min slack {:.3e}, next delta {:.3e}",
                audit.delta, audit.err_ratio, audit.next_min_slack, audit.next_delta
            );
            oracle.tighten();
        }

        let qr_now = nes.into_qr();
        let Some((report, (next, next_qr))) = accepted else {
            return Ok((finish(iterate, &qr_now, k, SolveStatus::StepRejected, Some(failure)), trace));
        };

        let x = qr_now.primal();
        trace.records.push(TraceRecord {
            k,
            round,
            mu: to_f64(iterate.mu),
            delta: to_f64(report.delta),
            lambda_star: to_f64(report.lambda_star),
            cos_psi: to_f64(report.cos_psi),
            err_ratio: to_f64(report.err_ratio()),
            gap: to_f64(duality_gap(&x, &iterate.s)),
            min_slack: to_f64(iterate.s.min()),
            kappa_as_inv: to_f64(report.kappa_est),
            omega: to_f64(omega),
        });

        iterate = next;
        qr = next_qr;
        omega = omega.max(iterate.s.amax());
        k += 1;
    }
}
