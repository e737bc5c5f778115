//! Seeded generators for instances with a certified interior start.
//!
//! `A = UΣVᵀ` with Haar-like orthogonal factors and singular values spaced
//! geometrically in `[1, κ]`. The start is the `μ₀`-center `x₀ = e`,
//! `s₀ = μ₀e`, optionally pushed off the central path until the measured
//! proximity equals the requested `δ₀`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lo::{dual_slack, proximity, LoInstance};
use crate::nes::DEFAULT_SEED;
use crate::scalar::{lit, to_f64, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub m: usize,
    pub n: usize,
    pub mu0: f64,
    pub kappa_target: f64,
    pub delta0: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn centered(m: usize, n: usize, seed: u64) -> Self {
        Self {
            m,
            n,
            mu0: 1.0,
            kappa_target: 1.0,
            delta0: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n < self.m {
            return Err(Error::InvalidConfig(format!(
                "need n >= m >= 1, got m = {}, n = {}",
                self.m, self.n
            )));
        }
        if !(self.kappa_target >= 1.0 && self.kappa_target.is_finite()) {
            return Err(Error::InvalidConfig(format!("kappa_target must be >= 1, got {}", self.kappa_target)));
        }
        if !(0.0..=0.5).contains(&self.delta0) {
            return Err(Error::InvalidConfig(format!("delta0 must lie in [0, 0.5], got {}", self.delta0)));
        }
        if !(self.mu0 > 0.0 && self.mu0.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu0 must be positive, got {}", self.mu0)));
        }
        Ok(())
    }
}

/// An instance with a strictly feasible primal-dual start.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedProblem<T: Real> {
    pub instance: LoInstance<T>,
    pub y0: DVector<T>,
    pub s0: DVector<T>,
    pub x0: DVector<T>,
    pub mu0: T,
    /// Measured `δ(s0, μ0)`.
    pub delta0: T,
    pub spec: GenSpec,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Thin Q of a Gaussian matrix with the signs fixed by `diag(R)`.
fn orthonormal_columns(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let qr = gaussian(rng, rows, cols).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Builds the `μ₀`-center instance (and, for `δ₀ > 0`, an off-center start).
pub fn gen_centered<T: Real>(spec: &GenSpec) -> Result<GeneratedProblem<T>> {
    spec.validate()?;
    let (m, n) = (spec.m, spec.n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let u = orthonormal_columns(&mut rng, m, m);
    let v = orthonormal_columns(&mut rng, n, m);
    let sigma = DVector::from_fn(m, |i, _| {
        if m == 1 {
            1.0
        } else {
            spec.kappa_target.powf(i as f64 / (m - 1) as f64)
        }
    });
    let a64 = &u * DMatrix::from_diagonal(&sigma) * v.transpose();
    let y_center: DVector<f64> = gaussian(&mut rng, m, 1).column(0).into_owned();
    let z: DVector<f64> = gaussian(&mut rng, m, 1).column(0).into_owned();

    let a = a64.map(lit::<T>);
    let mu0: T = lit(spec.mu0);
    let x0 = DVector::<T>::from_element(n, T::one());
    let b = &a * &x0;
    let y_c = y_center.map(lit::<T>);
    let c = a.tr_mul(&y_c) + DVector::from_element(n, mu0);
    let instance = LoInstance::new(a, b, c)?;

    if spec.delta0 == 0.0 {
        let s0 = dual_slack(&instance, &y_c)?;
        let delta0 = proximity(&instance, &s0, mu0)?.delta;
        return Ok(GeneratedProblem {
            instance,
            y0: y_c,
            s0,
            x0,
            mu0,
            delta0,
            spec: *spec,
        });
    }

    // Move y along a direction whose slack image w = Aᵀz has max |wᵢ| = 1, so
    // that s(t) = μ₀(e + t·w) stays above μ₀/2 for t ≤ 1/2.
    let z = z.map(lit::<T>);
    let w = instance.a().tr_mul(&z);
    let scale = w.amax();
    let dir = z * (mu0 / scale);
    let start_at = |t: T| -> Result<(DVector<T>, DVector<T>, T)> {
        let y = &y_c - &dir * t;
        let s = dual_slack(&instance, &y)?;
        let d = proximity(&instance, &s, mu0)?.delta;
        Ok((y, s, d))
    };

    let target: T = lit(spec.delta0);
    let mut lo = T::zero();
    let mut hi: T = lit(0.5);
    let (mut y, mut s, mut d) = start_at(hi)?;
    if d < target {
        return Err(Error::Bisection {
            lo: 0.0,
            hi: to_f64(d),
        });
    }
    let tol: T = lit(1e-10);
    for _ in 0..200 {
        if (d - target).abs() <= tol {
            break;
        }
        let mid = (lo + hi) / lit(2.0);
        let (ym, sm, dm) = start_at(mid)?;
        if dm > target {
            hi = mid;
        } else {
            lo = mid;
        }
        (y, s, d) = (ym, sm, dm);
    }
    if (d - target).abs() > lit(1e-6) {
        return Err(Error::Bisection {
            lo: to_f64(lo),
            hi: to_f64(hi),
        });
    }
    Ok(GeneratedProblem {
        instance,
        y0: y,
        s0: s,
        x0,
        mu0,
        delta0: d,
        spec: *spec,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SuiteName {
    Scaling,
    Conditioning,
    NoiseSweep,
}

impl std::str::FromStr for SuiteName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaling" => Ok(Self::Scaling),
            "conditioning" => Ok(Self::Conditioning),
            "noise-sweep" => Ok(Self::NoiseSweep),
            other => Err(Error::InvalidConfig(format!("unknown suite {other:?}"))),
        }
    }
}

/// `(m, n)` of the scaling suite; `n = m²`.
pub const SCALING_SIZES: [(usize, usize); 4] = [(4, 16), (8, 64), (16, 256), (32, 1024)];
pub const CONDITIONING_KAPPAS: [f64; 4] = [1.0, 10.0, 100.0, 1000.0];
/// Values above 1 exceed the noise budget on purpose.
pub const NOISE_GRID: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 10.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteMember<T: Real> {
    pub label: String,
    pub problem: GeneratedProblem<T>,
    /// Set for noise-sweep members.
    pub noise_scale: Option<f64>,
}

pub fn gen_suite<T: Real>(name: SuiteName) -> Result<Vec<SuiteMember<T>>> {
    gen_suite_seeded(name, DEFAULT_SEED)
}

pub fn gen_suite_seeded<T: Real>(name: SuiteName, seed: u64) -> Result<Vec<SuiteMember<T>>> {
    match name {
        SuiteName::Scaling => SCALING_SIZES
            .iter()
            .enumerate()
            .map(|(i, &(m, n))| {
                let spec = GenSpec {
                    kappa_target: 10.0,
                    ..GenSpec::centered(m, n, seed.wrapping_add(i as u64))
                };
                Ok(SuiteMember {
                    label: format!("scaling-m{m}-n{n}"),
                    problem: gen_centered(&spec)?,
                    noise_scale: None,
                })
            })
            .collect(),
        SuiteName::Conditioning => CONDITIONING_KAPPAS
            .iter()
            .enumerate()
            .map(|(i, &kappa)| {
                let spec = GenSpec {
                    kappa_target: kappa,
                    ..GenSpec::centered(8, 64, seed.wrapping_add(i as u64))
                };
                Ok(SuiteMember {
                    label: format!("conditioning-k{kappa:e}"),
                    problem: gen_centered(&spec)?,
                    noise_scale: None,
                })
            })
            .collect(),
        SuiteName::NoiseSweep => {
            let spec = GenSpec {
                kappa_target: 10.0,
                ..GenSpec::centered(8, 64, seed)
            };
            let problem = gen_centered::<T>(&spec)?;
            Ok(NOISE_GRID
                .iter()
                .map(|&scale| SuiteMember {
                    label: format!("noise-{scale}"),
                    problem: problem.clone(),
                    noise_scale: Some(scale),
                })
                .collect())
        }
    }
}
