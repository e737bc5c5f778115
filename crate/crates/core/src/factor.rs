//! QR factorization of the slack-scaled constraint matrix `S⁻¹Aᵀ`.
//!
//! One factorization per iterate serves the primal projection `x(s, μ)`, the
//! proximity `δ(s, μ)`, the exact Newton direction and the condition number
//! of `AS⁻¹`. The normal matrix `AS⁻²Aᵀ = RᵀR` is never formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lo::LoInstance;
use crate::scalar::{to_f64, Real};

/// `S⁻¹Aᵀ = QR` together with the NES right-hand side at `(s, μ)`.
#[derive(Debug, Clone)]
pub struct ScaledQr<T: Real> {
    s: DVector<T>,
    mu: T,
    /// `S⁻¹Aᵀ`, n×m.
    bt: DMatrix<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
    /// `r_p = b − μAS⁻¹e`.
    rp: DVector<T>,
    /// `R⁻ᵀ r_p`.
    t: DVector<T>,
    /// `Q R⁻ᵀ r_p`, the projection offset `s·x(s, μ) − μe`.
    z: DVector<T>,
}

pub(crate) fn check_slack<T: Real>(inst: &LoInstance<T>, s: &DVector<T>, mu: T) -> Result<()> {
    if s.len() != inst.n() {
        return Err(Error::DimensionMismatch {
            context: "slack vector",
            expected: inst.n(),
            found: s.len(),
        });
    }
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

impl<T: Real> ScaledQr<T> {
    pub fn new(inst: &LoInstance<T>, s: &DVector<T>, mu: T) -> Result<Self> {
        check_slack(inst, s, mu)?;
        let (m, n) = (inst.m(), inst.n());
        let s_inv = s.map(|v| T::one() / v);
        let a = inst.a();
        let bt = DMatrix::from_fn(n, m, |j, i| a[(i, j)] * s_inv[j]);
        let rp = inst.b() - (a * &s_inv) * mu;

        let qr = bt.clone().qr();
        let r = qr.r();
        let diag_max = r.diagonal().amax();
        let diag_min = r.diagonal().iter().fold(diag_max, |acc, v| acc.min(v.abs()));
        let tol = T::from_usize(m.max(n)).unwrap() * T::eps() * diag_max;
        if !(diag_min > tol) {
            return Err(Error::RankDeficient {
                factorization: "QR of S^-1 A^T",
            });
        }
        let q = qr.q();
        let t = r
            .tr_solve_upper_triangular(&rp)
            .ok_or(Error::RankDeficient {
                factorization: "QR of S^-1 A^T",
            })?;
        let z = &q * &t;
        Ok(Self {
            s: s.clone(),
            mu,
            bt,
            q,
            r,
            rp,
            t,
            z,
        })
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn slack(&self) -> &DVector<T> {
        &self.s
    }

    /// `S⁻¹Aᵀ`.
    pub fn scaled_transpose(&self) -> &DMatrix<T> {
        &self.bt
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn rhs(&self) -> &DVector<T> {
        &self.rp
    }

    /// `δ(s, μ) = ‖μe − s·x(s, μ)‖ / μ`.
    pub fn delta(&self) -> T {
        self.z.norm() / self.mu
    }

    /// `x(s, μ) = (μe + z) / s`.
    pub fn primal(&self) -> DVector<T> {
        let mu = self.mu;
        self.z.zip_map(&self.s, |zi, si| (mu + zi) / si)
    }

    /// Exact NES solution `Δy = R⁻¹R⁻ᵀ r_p / μ`.
    pub fn exact_direction(&self) -> Result<DVector<T>> {
        let w = self
            .r
            .solve_upper_triangular(&self.t)
            .ok_or(Error::RankDeficient {
                factorization: "QR of S^-1 A^T",
            })?;
        Ok(w / self.mu)
    }

    /// `S⁻¹Aᵀv`.
    pub fn apply_scaled_transpose(&self, v: &DVector<T>) -> DVector<T> {
        &self.bt * v
    }

    /// `(AS⁻¹)(AS⁻¹)ᵀ v`.
    pub fn apply_normal(&self, v: &DVector<T>) -> DVector<T> {
        self.bt.tr_mul(&(&self.bt * v))
    }

    /// `κ(AS⁻¹)` from the singular values of the triangular factor.
    pub fn kappa(&self) -> Result<T> {
        let sv = self
            .r
            .clone()
            .try_svd(false, false, T::eps(), 0)
            .ok_or_else(|| Error::ConditionEstimate("SVD of R did not converge".into()))?
            .singular_values;
        let max = sv.max();
        let min = sv.min();
        if !(min > T::zero()) || !max.is_finite() {
            return Err(Error::ConditionEstimate(format!(
                "singular values out of range [{:e}, {:e}]",
                to_f64(min),
                to_f64(max)
            )));
        }
        Ok(max / min)
    }
}
