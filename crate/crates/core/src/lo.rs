//! Linear optimization instances in standard form, dual iterates, and the
//! primal projection / proximity measure that define closeness to the
//! central path.
//!
//! Primal: `min cᵀx  s.t. Ax = b, x ≥ 0`.
//! Dual:   `max bᵀy  s.t. Aᵀy + s = c, s ≥ 0`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::factor::ScaledQr;
use crate::scalar::{lit, to_f64, Real};

/// The data `(A, b, c)` of a standard-form problem with `A` of full row rank.
#[derive(Debug, Clone, PartialEq)]
pub struct LoInstance<T: Real> {
    a: DMatrix<T>,
    b: DVector<T>,
    c: DVector<T>,
}

impl<T: Real> LoInstance<T> {
    /// Validates dimensions, finiteness and numerical full row rank.
    pub fn new(a: DMatrix<T>, b: DVector<T>, c: DVector<T>) -> Result<Self> {
        let (m, n) = a.shape();
        if m == 0 || n < m {
            return Err(Error::InvalidInstance(format!(
                "need n >= m >= 1, got m = {m}, n = {n}"
            )));
        }
        if b.len() != m {
            return Err(Error::DimensionMismatch {
                context: "b",
                expected: m,
                found: b.len(),
            });
        }
        if c.len() != n {
            return Err(Error::DimensionMismatch {
                context: "c",
                expected: n,
                found: c.len(),
            });
        }
        if a.iter().chain(b.iter()).chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite entry".into()));
        }
        let sv = a.singular_values();
        let max = sv.max();
        let tol = T::from_usize(m.max(n)).unwrap() * T::eps() * max;
        if !(sv.min() > tol) {
            return Err(Error::RankDeficient {
                factorization: "SVD of A",
            });
        }
        Ok(Self { a, b, c })
    }

    /// Same constraint matrix, new right-hand side and cost. `A` is not
    /// re-factorized.
    pub(crate) fn with_objective(&self, b: DVector<T>, c: DVector<T>) -> Self {
        debug_assert_eq!(b.len(), self.m());
        debug_assert_eq!(c.len(), self.n());
        Self {
            a: self.a.clone(),
            b,
            c,
        }
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DVector<T> {
        &self.b
    }

    pub fn c(&self) -> &DVector<T> {
        &self.c
    }
}

/// Strictly feasible dual point `(y, s)` with barrier parameter `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterate<T: Real> {
    pub y: DVector<T>,
    pub s: DVector<T>,
    pub mu: T,
}

impl<T: Real> DualIterate<T> {
    /// Builds the iterate with `s = c − Aᵀy`, rejecting boundary points.
    pub fn new(inst: &LoInstance<T>, y: DVector<T>, mu: T) -> Result<Self> {
        let s = dual_slack(inst, &y)?;
        Self::check(&s, mu)?;
        Ok(Self { y, s, mu })
    }

    /// Builds the iterate from a separately tracked slack. The slack must
    /// agree with `c − Aᵀy` to `1e−10·(1 + ‖c‖)`.
    pub fn with_slack(inst: &LoInstance<T>, y: DVector<T>, s: DVector<T>, mu: T) -> Result<Self> {
        let recomputed = dual_slack(inst, &y)?;
        if s.len() != recomputed.len() {
            return Err(Error::DimensionMismatch {
                context: "slack vector",
                expected: recomputed.len(),
                found: s.len(),
            });
        }
        let drift = (&s - &recomputed).norm();
        let tol = reconstruction_tolerance(inst);
        if drift > tol {
            return Err(Error::InvalidInstance(format!(
                "slack drifted from c - A^T y by {:e} (tolerance {:e})",
                to_f64(drift),
                to_f64(tol)
            )));
        }
        Self::check(&s, mu)?;
        Ok(Self { y, s, mu })
    }

    fn check(s: &DVector<T>, mu: T) -> Result<()> {
        if !(mu > T::zero()) {
            return Err(Error::NonPositiveMu(to_f64(mu)));
        }
        let min = s.min();
        if !(min > T::zero()) {
            return Err(Error::NotInterior {
                min_slack: to_f64(min),
            });
        }
        Ok(())
    }

    pub fn min_slack(&self) -> T {
        self.s.min()
    }
}

/// `1e−10·(1 + ‖c‖)`, the allowed gap between a stored slack and `c − Aᵀy`.
pub fn reconstruction_tolerance<T: Real>(inst: &LoInstance<T>) -> T {
    lit::<T>(1e-10) * (T::one() + inst.c().norm())
}

/// `x(s, μ)` with its primal residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalEstimate<T: Real> {
    pub x: DVector<T>,
    /// `‖Ax − b‖`.
    pub residual_b: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximityReport<T: Real> {
    pub delta: T,
    pub x_of_s_mu: PrimalEstimate<T>,
}

/// Result of [`is_interior_dual`]: whether `c − Aᵀy > 0` and by how much.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interiority<T> {
    pub interior: bool,
    pub margin: T,
}

/// `s = c − Aᵀy`.
pub fn dual_slack<T: Real>(inst: &LoInstance<T>, y: &DVector<T>) -> Result<DVector<T>> {
    if y.len() != inst.m() {
        return Err(Error::DimensionMismatch {
            context: "dual vector y",
            expected: inst.m(),
            found: y.len(),
        });
    }
    Ok(inst.c() - inst.a().tr_mul(y))
}

pub fn is_interior_dual<T: Real>(inst: &LoInstance<T>, y: &DVector<T>) -> Result<Interiority<T>> {
    let margin = dual_slack(inst, y)?.min();
    Ok(Interiority {
        interior: margin > T::zero(),
        margin,
    })
}

fn estimate_from<T: Real>(inst: &LoInstance<T>, qr: &ScaledQr<T>) -> PrimalEstimate<T> {
    let x = qr.primal();
    let residual_b = (inst.a() * &x - inst.b()).norm();
    PrimalEstimate { x, residual_b }
}

/// `x(s, μ) = argmin { ‖μe − sx‖ : Ax = b }`.
///
/// With `u = sx` this is the projection of `μe` onto `{u : AS⁻¹u = b}`,
/// evaluated from a QR factorization of `S⁻¹Aᵀ`.
pub fn primal_projection<T: Real>(inst: &LoInstance<T>, s: &DVector<T>, mu: T) -> Result<PrimalEstimate<T>> {
    let qr = ScaledQr::new(inst, s, mu)?;
    Ok(estimate_from(inst, &qr))
}

/// `δ(s, μ) = ‖μe − s·x(s, μ)‖ / μ`.
pub fn proximity<T: Real>(inst: &LoInstance<T>, s: &DVector<T>, mu: T) -> Result<ProximityReport<T>> {
    let qr = ScaledQr::new(inst, s, mu)?;
    Ok(proximity_from(inst, &qr))
}

pub(crate) fn proximity_from<T: Real>(inst: &LoInstance<T>, qr: &ScaledQr<T>) -> ProximityReport<T> {
    ProximityReport {
        delta: qr.delta(),
        x_of_s_mu: estimate_from(inst, qr),
    }
}

/// `sᵀx`.
pub fn duality_gap<T: Real>(x: &DVector<T>, s: &DVector<T>) -> T {
    assert_eq!(x.len(), s.len(), "duality_gap: length mismatch");
    x.dot(s)
}
