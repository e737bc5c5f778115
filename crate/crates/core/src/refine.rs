//! Iterative refinement: solve to a fixed precision `ζ̂`, then repeatedly
//! solve the scaled refining problem
//!
//! ```text
//! max ∇bᵀŷ  s.t.  Aᵀŷ + ŝ = ∇s⁽ᵏ⁾,  ŝ ≥ 0,      ∇ = ζ̂^(−k),
//! ```
//!
//! and fold the correction back as `y⁽ᵏ⁺¹⁾ = y⁽ᵏ⁾ + ŷ/∇`.
//!
//! Each refining problem is warm started from `(∇(y⁰ − y⁽ᵏ⁾), ∇s⁰)` at
//! `μ̂₀ = ∇²μ₀`, which has the same proximity as the original start.
//!
//! The outer slack is carried as `s⁽ᵏ⁺¹⁾ = ŝ/∇` and checked against
//! `c − Aᵀy⁽ᵏ⁺¹⁾` after every round. Past the first round the true slack
//! falls below the rounding error of `c − Aᵀy`, so recomputing it would
//! destroy the information the refinement just gained.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lo::{dual_slack, proximity, DualIterate, LoInstance};
use crate::scalar::{lit, to_f64, Real};
use crate::solver::{solve_round, SolveResult, SolveStatus, SolveTrace, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub zeta: f64,
    pub zeta_hat: f64,
    /// Template for every inner solve. Its `zeta` is replaced by `zeta_hat`
    /// and its oracle seed is offset by the round index.
    pub inner: SolverConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            zeta: 1e-8,
            zeta_hat: 1e-2,
            inner: SolverConfig::default(),
        }
    }
}

impl RefineConfig {
    pub fn new(zeta: f64, zeta_hat: f64) -> Self {
        Self {
            zeta,
            zeta_hat,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta_hat > 0.0 && self.zeta_hat < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < zeta and 0 < zeta_hat < 1, got zeta = {}, zeta_hat = {}",
                self.zeta, self.zeta_hat
            )));
        }
        if self.zeta > self.zeta_hat {
            return Err(Error::InvalidConfig(format!(
                "zeta = {} exceeds zeta_hat = {}",
                self.zeta, self.zeta_hat
            )));
        }
        self.inner_config(0).validate(n)
    }

    fn inner_config(&self, round: usize) -> SolverConfig {
        let mut inner = self.inner;
        inner.zeta = self.zeta_hat;
        inner.oracle.seed = inner.oracle.seed.wrapping_add(round as u64);
        inner
    }
}

/// `⌈log ζ / log ζ̂⌉`, the number of refining rounds after the initial solve.
///
/// A relative slack of `1e−9` absorbs the rounding of the logarithms so that
/// powers of ten give the exact quotient.
pub fn round_count(zeta: f64, zeta_hat: f64) -> usize {
    let q = zeta.ln() / zeta_hat.ln();
    let r = q.round();
    if (q - r).abs() <= 1e-9 * q.abs().max(1.0) {
        r.max(1.0) as usize
    } else {
        q.ceil().max(1.0) as usize
    }
}

/// `ζ̂^(−k)`, computed as `(1/ζ̂)^k` so that `ζ̂ = 10⁻ᵖ` gives exact powers of ten.
pub fn nabla_for<T: Real>(zeta_hat: T, exponent: i32) -> T {
    (T::one() / zeta_hat).powi(exponent)
}

/// The refining instance `(A, ∇b, ∇s⁽ᵏ⁾)`.
pub fn build_refining_instance<T: Real>(inst: &LoInstance<T>, s_k: &DVector<T>, nabla: T) -> LoInstance<T> {
    debug_assert!(s_k.min() > T::zero());
    debug_assert!(nabla >= T::one());
    inst.with_objective(inst.b() * nabla, s_k * nabla)
}

/// Warm start of a refining problem: `(∇(y⁰ − y⁽ᵏ⁾), ∇s⁰, ∇²μ₀)`.
pub fn warm_start<T: Real>(
    y0: &DVector<T>,
    y_k: &DVector<T>,
    s0: &DVector<T>,
    mu0: T,
    nabla: T,
) -> (DVector<T>, DVector<T>, T) {
    ((y0 - y_k) * nabla, s0 * nabla, mu0 * nabla * nabla)
}

/// Diagnostics for one round (round 0 is the initial solve).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub nabla: f64,
    pub mu_start: f64,
    /// Proximity of the warm start on the refining instance.
    pub warm_delta: f64,
    /// `|δ_IR(∇s⁰, ∇²μ₀) − δ(s⁰, μ₀)|`.
    pub warm_delta_gap: f64,
    /// `‖Aᵀŷ₀ + ŝ₀ − ∇s⁽ᵏ⁾‖`.
    pub warm_residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Smallest outer slack after the round.
    pub min_slack: f64,
    /// `‖s⁽ᵏ⁺¹⁾ − (c − Aᵀy⁽ᵏ⁺¹⁾)‖`.
    pub slack_drift: f64,
    /// Gap certificate of the original problem after the round.
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct RefineState<T: Real> {
    /// Index of the last completed round.
    pub k: usize,
    /// `∇ = ζ̂^(−nabla_exponent)` of the last round.
    pub nabla_exponent: i32,
    pub zeta_hat: f64,
    pub y_k: DVector<T>,
    pub s_k: DVector<T>,
    pub round_traces: Vec<SolveTrace>,
    pub rounds: Vec<RoundSummary>,
    /// Round that failed, if any.
    pub failed_round: Option<usize>,
    /// Number of refining rounds planned.
    pub planned_rounds: usize,
}

impl<T: Real> RefineState<T> {
    pub fn nabla(&self) -> T {
        nabla_for(lit(self.zeta_hat), self.nabla_exponent)
    }

    pub fn total_iterations(&self) -> usize {
        self.rounds.iter().map(|r| r.iterations).sum()
    }
}

/// Runs the initial solve and the refining rounds.
///
/// The returned [`SolveResult`] refers to the original problem: `mu_final`
/// is `μ̂/∇²` and `final_gap` is the certificate `ŝᵀx̂(ŝ, μ̂)/∇²` of the
/// last refining solve. On an inner failure the status of that solve is
/// returned together with `failed_round`.
pub fn refine<T: Real>(
    inst: &LoInstance<T>,
    y0: &DVector<T>,
    mu0: T,
    config: &RefineConfig,
) -> Result<(SolveResult<T>, RefineState<T>)> {
    config.validate(inst.n())?;
    let planned = round_count(config.zeta, config.zeta_hat);
    let zeta_hat: T = lit(config.zeta_hat);
    let s0 = dual_slack(inst, y0)?;
    let delta0 = if s0.min() > T::zero() && mu0 > T::zero() {
        Some(proximity(inst, &s0, mu0)?.delta)
    } else {
        None
    };

    let (first, trace) = solve_round(inst, y0, mu0, &config.inner_config(0), 0)?;
    let mut state = RefineState {
        k: 0,
        nabla_exponent: 0,
        zeta_hat: config.zeta_hat,
        y_k: first.y_final.clone(),
        s_k: first.s_final.clone(),
        round_traces: vec![trace],
        rounds: Vec::with_capacity(planned + 1),
        failed_round: None,
        planned_rounds: planned,
    };
    state.rounds.push(RoundSummary {
        round: 0,
        nabla: 1.0,
        mu_start: to_f64(mu0),
        warm_delta: delta0.map_or(f64::NAN, to_f64),
        warm_delta_gap: 0.0,
        warm_residual: 0.0,
        iterations: first.iterations,
        status: first.status,
        min_slack: to_f64(first.s_final.min()),
        slack_drift: 0.0,
        gap: first.final_gap.map_or(f64::NAN, to_f64),
    });
    if first.status != SolveStatus::Converged {
        state.failed_round = Some(0);
        return Ok((first, state));
    }
    let delta0 = delta0.expect("converged solve starts interior");

    let mut last = first;
    for round in 1..=planned {
        let exponent = i32::try_from(round).map_err(|_| Error::Round {
            round,
            reason: "round index overflows the exponent".into(),
        })?;
        let nabla = nabla_for(zeta_hat, exponent);
        let sub = build_refining_instance(inst, &state.s_k, nabla);
        let (y_hat0, s_hat0, mu_hat0) = warm_start(y0, &state.y_k, &s0, mu0, nabla);

        let warm_residual = (inst.a().tr_mul(&y_hat0) + &s_hat0 - sub.c()).norm();
        let warm_delta = proximity(&sub, &s_hat0, mu_hat0)
            .map_err(|e| Error::Round {
                round,
                reason: e.to_string(),
            })?
            .delta;

        let (res, trace) = solve_round(&sub, &y_hat0, mu_hat0, &config.inner_config(round), round)?;
        state.round_traces.push(trace);
        let mut summary = RoundSummary {
            round,
            nabla: to_f64(nabla),
            mu_start: to_f64(mu_hat0),
            warm_delta: to_f64(warm_delta),
            warm_delta_gap: to_f64((warm_delta - delta0).abs()),
            warm_residual: to_f64(warm_residual),
            iterations: res.iterations,
            status: res.status,
            min_slack: f64::NAN,
            slack_drift: f64::NAN,
            gap: f64::NAN,
        };
        if res.status != SolveStatus::Converged {
            state.rounds.push(summary);
            state.failed_round = Some(round);
            let message = format!("round {round}: {}", res.message.clone().unwrap_or_default());
            let result = SolveResult {
                y_final: state.y_k.clone(),
                s_final: state.s_k.clone(),
                mu_final: last.mu_final,
                iterations: state.total_iterations(),
                status: res.status,
                final_delta: last.final_delta,
                final_gap: last.final_gap,
                message: Some(message),
            };
            return Ok((result, state));
        }

        let inv = T::one() / nabla;
        let y_next = &state.y_k + &res.y_final * inv;
        let s_next = &res.s_final * inv;
        let drift = (&s_next - dual_slack(inst, &y_next)?).norm();
        let mu_equiv = res.mu_final * inv * inv;
        let outer = DualIterate::with_slack(inst, y_next, s_next, mu_equiv).map_err(|e| Error::Round {
            round,
            reason: e.to_string(),
        })?;
        let gap = res.final_gap.map(|g| g * inv * inv);

        summary.min_slack = to_f64(outer.s.min());
        summary.slack_drift = to_f64(drift);
        summary.gap = gap.map_or(f64::NAN, to_f64);
        state.rounds.push(summary);
        state.k = round;
        state.nabla_exponent = exponent;
        state.y_k = outer.y;
        state.s_k = outer.s;
        last = SolveResult {
            y_final: state.y_k.clone(),
            s_final: state.s_k.clone(),
            mu_final: mu_equiv,
            iterations: 0,
            status: SolveStatus::Converged,
            final_delta: res.final_delta,
            final_gap: gap,
            message: None,
        };
    }
    last.iterations = state.total_iterations();
    Ok((last, state))
}

/// Growth of `κ(AS⁻¹)²` over the rounds, relative to its value `κ⁰` at the
/// very first iterate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub kappa0: f64,
    pub per_round: Vec<RoundCondition>,
    pub max_ratio: f64,
    /// Set when `max_ratio` exceeds [`CONDITION_FLAG_RATIO`].
    pub flagged: bool,
}

/// `κ(AS⁻¹)² / κ⁰` at the first iterate of a round and the maximum over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundCondition {
    pub round: usize,
    pub start_ratio: f64,
    pub max_ratio: f64,
}

pub const CONDITION_FLAG_RATIO: f64 = 10.0;

pub fn condition_monitor(round_traces: &[SolveTrace]) -> ConditionReport {
    let kappa0 = round_traces
        .iter()
        .flat_map(|t| t.records.first())
        .map(|r| r.kappa_as_inv * r.kappa_as_inv)
        .next()
        .unwrap_or(f64::NAN);
    let ratio = |k: f64| k * k / kappa0;
    let per_round: Vec<RoundCondition> = round_traces
        .iter()
        .enumerate()
        .map(|(i, t)| RoundCondition {
            round: t.records.first().map_or(i, |r| r.round),
            start_ratio: t.records.first().map_or(f64::NAN, |r| ratio(r.kappa_as_inv)),
            max_ratio: t.records.iter().map(|r| ratio(r.kappa_as_inv)).fold(f64::NAN, f64::max),
        })
        .collect();
    let max_ratio = per_round.iter().map(|p| p.max_ratio).fold(f64::NAN, f64::max);
    ConditionReport {
        kappa0,
        flagged: max_ratio > CONDITION_FLAG_RATIO,
        per_round,
        max_ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lo::tests::t1;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn refining_instance_scales_data() {
        let inst = t1();
        let sub = build_refining_instance(&inst, &dvector![0.5, 0.5], 100.0);
        assert_eq!(sub.b(), &dvector![200.0]);
        assert_eq!(sub.c(), &dvector![50.0, 50.0]);
        assert_eq!(sub.a(), inst.a());
        let same = build_refining_instance(&inst, &dvector![1.0, 1.0], 1.0);
        assert_eq!(same.c(), inst.c());
    }

    #[test]
    fn warm_start_t1() {
        let inst = t1();
        let (y, s, mu) = warm_start(&dvector![0.0], &dvector![0.5], &dvector![1.0, 1.0], 1.0, 100.0);
        assert_eq!(y, dvector![-50.0]);
        assert_eq!(s, dvector![100.0, 100.0]);
        assert_eq!(mu, 1e4);
        assert_eq!(inst.a().tr_mul(&y) + s, dvector![50.0, 50.0]);
        let (y, s, mu) = warm_start(&dvector![0.3], &dvector![0.3], &dvector![0.7, 0.7], 0.9, 1.0);
        assert_eq!(y, dvector![0.0]);
        assert_eq!(s, dvector![0.7, 0.7]);
        assert_eq!(mu, 0.9);
    }

    #[test]
    fn round_counts() {
        assert_eq!(round_count(1e-4, 1e-2), 2);
        assert_eq!(round_count(1e-8, 1e-2), 4);
        assert_eq!(round_count(1e-2, 1e-2), 1);
        assert_eq!(round_count(1e-9, 1e-3), 3);
        assert_eq!(round_count(1e-5, 1e-2), 3);
    }

    #[test]
    fn nabla_is_exact_power() {
        assert_eq!(nabla_for(1e-2f64, 0), 1.0);
        assert_eq!(nabla_for(1e-2f64, 3), 1e6);
        assert_eq!(nabla_for(1e-2f64, 4), 1e8);
    }

    #[test]
    fn config_rejects_zeta_above_zeta_hat() {
        assert!(RefineConfig::new(1e-1, 1e-2).validate(2).is_err());
        assert!(RefineConfig::new(1e-3, 1.0).validate(2).is_err());
        assert!(RefineConfig::new(1e-3, 1e-2).validate(2).is_ok());
    }

    #[test]
    fn t1_refines_to_high_precision() {
        let inst = t1();
        let cfg = RefineConfig::new(1e-8, 1e-2);
        let (res, state) = refine(&inst, &dvector![0.0], 1.0, &cfg).unwrap();
        assert_eq!(res.status, SolveStatus::Converged);
        assert_eq!(state.rounds.len(), 5);
        assert_eq!(state.k, 4);
        assert!(res.final_gap.unwrap() <= 2e-8);
        assert!(res.s_final.min() > 0.0);
        for r in &state.rounds[1..] {
            assert!(r.warm_delta_gap <= 1e-8, "{r:?}");
            assert!(r.min_slack > 0.0);
        }
        // Optimum of T1 is y = 1.
        assert_relative_eq!(res.y_final[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn monitor_round_zero_ratio_one() {
        let inst = t1();
        let (_, state) = refine(&inst, &dvector![0.0], 1.0, &RefineConfig::new(1e-4, 1e-2)).unwrap();
        let report = condition_monitor(&state.round_traces);
        // T1 has m = 1, so κ(AS⁻¹) = 1 at every iterate.
        assert_relative_eq!(report.kappa0, 1.0);
        assert_relative_eq!(report.per_round[0].start_ratio, 1.0);
        assert_relative_eq!(report.max_ratio, 1.0, max_relative = 1e-12);
        assert_eq!(report.per_round.len(), 3);
        assert!(!report.flagged);
    }
}
