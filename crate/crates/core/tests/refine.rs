use dlbm_core::gen::{gen_centered, gen_suite, GenSpec, SuiteName};
use dlbm_core::lo::{proximity, reconstruction_tolerance};
use dlbm_core::nes::DEFAULT_SEED;
use dlbm_core::refine::{condition_monitor, refine, RefineConfig};
use dlbm_core::solver::{SolveStatus, SolverConfig};

#[test]
fn scaling_member_refines_in_four_rounds() {
    let members = gen_suite::<f64>(SuiteName::Scaling).unwrap();
    let p = &members[1].problem;
    assert_eq!((p.instance.m(), p.instance.n()), (8, 64));
    let (res, state) = refine(&p.instance, &p.y0, p.mu0, &RefineConfig::new(1e-8, 1e-2)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    assert_eq!(state.planned_rounds, 4);
    assert_eq!(state.rounds.len(), 5);
    assert_eq!(state.k, 4);
    assert_eq!(state.nabla(), 1e8);
    assert!(res.final_gap.unwrap() <= 2e-8);
    assert!(res.s_final.min() > 0.0);
    let tol = reconstruction_tolerance(&p.instance);
    for r in &state.rounds[1..] {
        assert!(r.warm_delta_gap <= 1e-8);
        assert!(r.warm_residual <= 1e-10 * r.nabla * (1.0 + p.instance.c().norm()));
        assert!(r.min_slack > 0.0);
        assert!(r.slack_drift <= tol);
    }
    // Gap certificates shrink round over round.
    for w in state.rounds.windows(2) {
        assert!(w[1].gap < w[0].gap);
    }
    let d = proximity(&p.instance, &res.s_final, res.mu_final).unwrap().delta;
    assert!((d - res.final_delta.unwrap()).abs() <= 1e-6);
}

#[test]
fn ill_conditioned_instance_is_monitored_not_aborted() {
    let p = gen_centered::<f64>(&GenSpec {
        kappa_target: 1e6,
        ..GenSpec::centered(4, 16, DEFAULT_SEED)
    })
    .unwrap();
    let (res, state) = refine(&p.instance, &p.y0, p.mu0, &RefineConfig::new(1e-4, 1e-2)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    let report = condition_monitor(&state.round_traces);
    assert_eq!(report.per_round.len(), 3);
    assert!((report.per_round[0].start_ratio - 1.0).abs() <= 1e-12);
    // κ_A dominates κ(AS⁻¹) here, so the ratio stays small.
    assert!(report.max_ratio.is_finite() && report.max_ratio >= 1.0);
    assert!(report.kappa0 > 1e11);
}

#[test]
fn slack_spread_growth_is_flagged() {
    let members = gen_suite::<f64>(SuiteName::Scaling).unwrap();
    let p = &members[1].problem;
    let (_, state) = refine(&p.instance, &p.y0, p.mu0, &RefineConfig::new(1e-4, 1e-2)).unwrap();
    let report = condition_monitor(&state.round_traces);
    assert!(report.flagged);
    // Later rounds retrace the same scaled path, so the ratio plateaus.
    let last = report.per_round.last().unwrap().max_ratio;
    assert!(last <= 2.0 * report.per_round[1].max_ratio);
}

#[test]
fn inner_failure_reports_its_round() {
    let p = gen_centered::<f64>(&GenSpec {
        kappa_target: 10.0,
        ..GenSpec::centered(8, 64, 1)
    })
    .unwrap();
    let config = RefineConfig {
        inner: SolverConfig {
            max_iters: Some(400),
            ..SolverConfig::default()
        },
        ..RefineConfig::new(1e-6, 1e-2)
    };
    let (res, state) = refine(&p.instance, &p.y0, p.mu0, &config).unwrap();
    assert_eq!(res.status, SolveStatus::IterationCap);
    assert_eq!(state.failed_round, Some(1));
    assert!(res.message.unwrap().starts_with("round 1"));
    // The outer solution is the last completed one and still interior.
    assert!(res.s_final.min() > 0.0);
}

#[test]
fn invalid_start_stops_before_refining() {
    let p = gen_centered::<f64>(&GenSpec::centered(3, 9, 2)).unwrap();
    let (res, state) = refine(&p.instance, &p.y0, 0.1, &RefineConfig::new(1e-4, 1e-2)).unwrap();
    assert_eq!(res.status, SolveStatus::InvalidStart);
    assert_eq!(state.failed_round, Some(0));
    assert_eq!(state.rounds.len(), 1);
}

#[test]
fn zeta_above_zeta_hat_is_rejected() {
    let p = gen_centered::<f64>(&GenSpec::centered(3, 9, 2)).unwrap();
    assert!(refine(&p.instance, &p.y0, p.mu0, &RefineConfig::new(1e-1, 1e-2)).is_err());
}
