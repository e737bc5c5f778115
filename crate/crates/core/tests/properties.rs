use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use dlbm_core::gen::{gen_centered, GenSpec, GeneratedProblem};
use dlbm_core::lo::{dual_slack, duality_gap, primal_projection, proximity, LoInstance};
use dlbm_core::nes::{assemble_nes, report_with, NesOracle, OracleConfig};
use dlbm_core::refine::{build_refining_instance, warm_start};
use dlbm_core::solver::{reduce_mu, solve, SolveStatus, SolverConfig};

fn problem(m: usize, extra: usize, kappa: f64, delta0: f64, seed: u64) -> GeneratedProblem<f64> {
    gen_centered(&GenSpec {
        m,
        n: m + extra,
        mu0: 1.0,
        kappa_target: kappa,
        delta0,
        seed,
    })
    .unwrap()
}

/// `Δy` from a Cholesky solve of the explicitly formed `AS⁻²Aᵀ`.
fn newton_by_cholesky(inst: &LoInstance<f64>, s: &DVector<f64>, mu: f64) -> DVector<f64> {
    let a = inst.a();
    let sinv2 = s.map(|v| 1.0 / (v * v));
    let m = a * DMatrix::from_diagonal(&sinv2) * a.transpose();
    let rp = inst.b() - a * s.map(|v| mu / v);
    m.cholesky().unwrap().solve(&(rp / mu))
}

fn perturbed_slack(p: &GeneratedProblem<f64>, z: &[f64], rho: f64) -> (DVector<f64>, DVector<f64>) {
    let z = DVector::from_column_slice(z);
    let dir = p.instance.a().tr_mul(&z);
    let y = &p.y0 + z * (rho * p.mu0 / dir.amax());
    let s = dual_slack(&p.instance, &y).unwrap();
    (y, s)
}

fn settings() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(settings())]

    #[test]
    fn proximity_matches_explicit_newton_step(
        m in 1usize..6,
        extra in 1usize..12,
        seed in 0u64..10_000,
        z in prop::collection::vec(-1.0f64..1.0, 6),
        rho in 0.0f64..0.9,
        mu_scale in 0.5f64..2.0,
    ) {
        let p = problem(m, extra, 10.0, 0.0, seed);
        let (_, s) = perturbed_slack(&p, &z[..m], rho);
        prop_assume!(s.min() > 0.0);
        let mu = p.mu0 * mu_scale;
        let dy = newton_by_cholesky(&p.instance, &s, mu);
        let ds = -p.instance.a().tr_mul(&dy);
        let delta_ref = ds.component_div(&s).norm();
        let prox = proximity(&p.instance, &s, mu).unwrap();
        prop_assert!((prox.delta - delta_ref).abs() <= 1e-8 * (1.0 + delta_ref));

        // x(s, μ) = μ s⁻¹(e − s⁻¹Δs) solves the projection problem.
        let x_ref = s.map(|v| mu / v).component_mul(&(DVector::from_element(s.len(), 1.0) - ds.component_div(&s)));
        let x = &prox.x_of_s_mu.x;
        prop_assert!((x - &x_ref).norm() <= 1e-8 * (1.0 + x_ref.norm()));
        let residual = (p.instance.a() * x - p.instance.b()).norm();
        prop_assert!(residual <= 1e-9 * (1.0 + p.instance.b().norm()));
        prop_assert!(prox.x_of_s_mu.residual_b <= 1e-9 * (1.0 + p.instance.b().norm()));
    }

    #[test]
    fn duality_sandwich(
        m in 1usize..5,
        extra in 1usize..10,
        seed in 0u64..10_000,
        z in prop::collection::vec(-1.0f64..1.0, 5),
        rho in 0.0f64..0.9,
        mu_scale in 0.7f64..1.3,
    ) {
        let p = problem(m, extra, 10.0, 0.0, seed);
        let (_, s) = perturbed_slack(&p, &z[..m], rho);
        prop_assume!(s.min() > 0.0);
        let mu = p.mu0 * mu_scale;
        let prox = proximity(&p.instance, &s, mu).unwrap();
        prop_assume!(prox.delta <= 1.0);
        let n = s.len() as f64;
        let gap = duality_gap(&prox.x_of_s_mu.x, &s);
        let tol = 1e-10 * n * mu;
        prop_assert!(gap >= n * mu * (1.0 - prox.delta) - tol);
        prop_assert!(gap <= n * mu * (1.0 + prox.delta) + tol);
    }

    #[test]
    fn lambda_star_is_the_best_scaling(
        m in 2usize..6,
        extra in 2usize..10,
        seed in 0u64..10_000,
        noise in 0.5f64..500.0,
        h in 1e-3f64..0.5,
    ) {
        let p = problem(m, extra, 10.0, 0.3, seed);
        let nes = assemble_nes(&p.instance, &p.s0, p.mu0).unwrap();
        let mut oracle = NesOracle::new(OracleConfig::quantum(noise, seed)).unwrap();
        let r = report_with(&p.instance, &nes, &mut oracle).unwrap();
        let a = p.instance.a();
        let img = |v: &DVector<f64>| a.tr_mul(v).component_div(&p.s0);
        let err = |lambda: f64| (img(&r.dy_exact) - img(&r.dy_unit) * lambda).norm();
        let best = err(r.lambda_star);
        prop_assert!(err(r.lambda_star * (1.0 + h)) >= best);
        prop_assert!(err(r.lambda_star * (1.0 - h)) >= best);
        // Identity ‖s⁻¹E^C_Δs‖ = δ·sin ψ.
        prop_assert!((r.err_ds_scaled_norm - r.delta * r.sin_psi).abs() <= 1e-8);
        prop_assert!((best - r.err_ds_scaled_norm).abs() <= 1e-12 * (1.0 + best));
    }

    #[test]
    fn warm_start_keeps_proximity(
        m in 1usize..5,
        extra in 1usize..10,
        seed in 0u64..10_000,
        delta0 in 0.0f64..0.5,
        log_nabla in 0.0f64..4.0,
        z in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let p = problem(m, extra, 10.0, delta0, seed);
        // Any interior outer point works as (y_k, s_k).
        let (y_k, s_k) = perturbed_slack(&p, &z[..m], 0.5);
        let nabla = 10f64.powf(log_nabla);
        let sub = build_refining_instance(&p.instance, &s_k, nabla);
        let (y_hat, s_hat, mu_hat) = warm_start(&p.y0, &y_k, &p.s0, p.mu0, nabla);
        let residual = (p.instance.a().tr_mul(&y_hat) + &s_hat - sub.c()).norm();
        prop_assert!(residual <= 1e-10 * nabla * (1.0 + p.instance.c().norm()));
        prop_assert!(s_hat.min() > 0.0);
        let d = proximity(&sub, &s_hat, mu_hat).unwrap().delta;
        prop_assert!((d - p.delta0).abs() <= 1e-8);
    }

    #[test]
    fn quantum_error_within_twice_the_budget(
        m in 2usize..6,
        extra in 2usize..10,
        seed in 0u64..10_000,
        noise in 0.0f64..=1.0,
    ) {
        let p = problem(m, extra, 10.0, 0.3, seed);
        let nes = assemble_nes(&p.instance, &p.s0, p.mu0).unwrap();
        let mut oracle = NesOracle::new(OracleConfig::quantum(noise, seed)).unwrap();
        let r = report_with(&p.instance, &nes, &mut oracle).unwrap();
        prop_assert!((r.dy_unit.norm() - 1.0).abs() <= 1e-12);
        prop_assert!(r.err_unit_norm() <= 2.0 * r.noise_budget + 1e-15);
        prop_assert!(r.cos_psi >= 0.995);
    }

    #[test]
    fn generated_start_is_certified(
        m in 1usize..6,
        extra in 0usize..12,
        seed in 0u64..10_000,
        delta0 in 0.0f64..=0.5,
        mu0 in 0.1f64..10.0,
    ) {
        let p = gen_centered::<f64>(&GenSpec { m, n: m + extra, mu0, kappa_target: 10.0, delta0, seed }).unwrap();
        let inst = &p.instance;
        prop_assert!((inst.a() * &p.x0 - inst.b()).norm() <= 1e-10 * (1.0 + inst.b().norm()));
        prop_assert!((inst.a().tr_mul(&p.y0) + &p.s0 - inst.c()).norm() <= 1e-10 * (1.0 + inst.c().norm()));
        prop_assert!(p.x0.min() > 0.0);
        prop_assert!(p.s0.min() >= mu0 / 2.0 - 1e-12);
        let d = proximity(inst, &p.s0, p.mu0).unwrap().delta;
        prop_assert!((d - delta0).abs() <= 1e-6);
    }
}

#[test]
fn generator_is_reproducible() {
    let spec = GenSpec {
        delta0: 0.3,
        kappa_target: 100.0,
        ..GenSpec::centered(5, 25, 99)
    };
    let a = gen_centered::<f64>(&spec).unwrap();
    let b = gen_centered::<f64>(&spec).unwrap();
    assert_eq!(a, b);
    let c = gen_centered::<f64>(&GenSpec { seed: 100, ..spec }).unwrap();
    assert_ne!(a.instance, c.instance);
}

#[test]
fn conditioning_matches_target() {
    for kappa in [1.0, 10.0, 100.0, 1000.0] {
        let p = gen_centered::<f64>(&GenSpec {
            kappa_target: kappa,
            ..GenSpec::centered(8, 64, 5)
        })
        .unwrap();
        let sv = p.instance.a().singular_values();
        assert_relative_eq!(sv.max() / sv.min(), kappa, max_relative = 0.01);
    }
}

#[test]
fn mu_schedule_is_bit_reproducible() {
    let p = problem(4, 12, 10.0, 0.2, 3);
    let config = SolverConfig {
        oracle: OracleConfig::quantum(1.0, 17),
        ..SolverConfig::with_zeta(1e-4)
    };
    let (r1, t1) = solve(&p.instance, &p.y0, p.mu0, &config).unwrap();
    let (r2, t2) = solve(&p.instance, &p.y0, p.mu0, &config).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(t1, t2);
    assert_eq!(r1.status, SolveStatus::Converged);

    let mut mu = p.mu0;
    for rec in &t1.records {
        assert_eq!(rec.mu.to_bits(), mu.to_bits());
        mu = reduce_mu(mu, t1.theta);
    }
    assert_eq!(r1.mu_final.to_bits(), mu.to_bits());
}

#[test]
fn solver_keeps_invariants_along_the_path() {
    let p = problem(6, 30, 100.0, 0.4, 8);
    let config = SolverConfig {
        oracle: OracleConfig::quantum(1.0, 2),
        ..SolverConfig::with_zeta(1e-6)
    };
    let (res, trace) = solve(&p.instance, &p.y0, p.mu0, &config).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    for rec in &trace.records {
        assert!(rec.min_slack > 0.0);
        assert!(rec.delta <= 0.5);
        assert!(rec.err_ratio <= 0.1);
    }
    let x = primal_projection(&p.instance, &res.s_final, res.mu_final).unwrap();
    assert!(duality_gap(&x.x, &res.s_final) <= 2.0 * config.zeta);
    assert!(x.residual_b <= 1e-8 * (1.0 + p.instance.b().norm()));
    let s = dual_slack(&p.instance, &res.y_final).unwrap();
    assert_eq!(s, res.s_final);
}

#[test]
fn single_precision_generated_solve() {
    let p = gen_centered::<f32>(&GenSpec {
        kappa_target: 10.0,
        ..GenSpec::centered(3, 9, 4)
    })
    .unwrap();
    let (res, trace) = solve(&p.instance, &p.y0, p.mu0, &SolverConfig::with_zeta(1e-3)).unwrap();
    assert_eq!(res.status, SolveStatus::Converged);
    assert!(res.final_gap.unwrap() <= 2e-3);
    assert!(trace.audits.iter().all(|a| a.all_pass()));
}
