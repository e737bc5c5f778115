//! Normal equation system (NES) `(AS⁻²Aᵀ)Δy = r_p / μ` and the direction
//! oracles that solve it.
//!
//! Every oracle returns a *unit* vector `Δȳ`; the step length is recovered
//! classically by the rescaling factor `λ* = r_pᵀΔȳ / (μ‖S⁻¹AᵀΔȳ‖²)`, which
//! minimizes `‖S⁻¹Aᵀ(Δy − λΔȳ)‖` over `λ`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::ScaledQr;
use crate::lo::LoInstance;
use crate::scalar::{lit, Real};

/// Seed used by every randomized routine when none is given.
pub const DEFAULT_SEED: u64 = 857_521;

/// Numerator and denominator of the tomography error budget
/// `‖E^Q‖ ≤ (0.005 / 1.995) / κ(AS⁻¹)` that keeps `cos ψ ≥ 0.995`.
pub const BUDGET_NUMERATOR: f64 = 0.005;
pub const BUDGET_DENOMINATOR: f64 = 1.995;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Exact,
    TruncatedCg,
    SimulatedQuantum,
}

/// Direction of the simulated tomography error `E^Q`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    /// Uniform on the sphere.
    #[default]
    Uniform,
    /// The unit vector that maximizes the first-order growth of `sin ψ`.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Fraction of the error budget used by the simulated quantum oracle.
    /// Values above 1 deliberately exceed the budget.
    pub noise_scale: f64,
    /// Relative NES residual at which truncated CG stops.
    pub cg_tolerance: f64,
    pub seed: u64,
    #[serde(default)]
    pub noise_law: NoiseLaw,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Exact,
            noise_scale: 0.0,
            cg_tolerance: 1e-2,
            seed: DEFAULT_SEED,
            noise_law: NoiseLaw::Uniform,
        }
    }
}

impl OracleConfig {
    pub fn exact() -> Self {
        Self::default()
    }

    pub fn quantum(noise_scale: f64, seed: u64) -> Self {
        Self {
            kind: OracleKind::SimulatedQuantum,
            noise_scale,
            seed,
            ..Self::default()
        }
    }

    pub fn cg(tolerance: f64) -> Self {
        Self {
            kind: OracleKind::TruncatedCg,
            cg_tolerance: tolerance,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_scale must be finite and nonnegative, got {}",
                self.noise_scale
            )));
        }
        if !(self.cg_tolerance > 0.0 && self.cg_tolerance.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cg_tolerance must be positive, got {}",
                self.cg_tolerance
            )));
        }
        Ok(())
    }
}

/// The NES at one iterate, kept in factored form.
#[derive(Debug, Clone)]
pub struct NesSystem<T: Real> {
    qr: ScaledQr<T>,
}

impl<T: Real> NesSystem<T> {
    pub(crate) fn from_qr(qr: ScaledQr<T>) -> Self {
        Self { qr }
    }

    pub(crate) fn into_qr(self) -> ScaledQr<T> {
        self.qr
    }

    /// `AS⁻¹`, m×n.
    pub fn matrix_factor(&self) -> DMatrix<T> {
        self.qr.scaled_transpose().transpose()
    }

    /// `r_p = b − μAS⁻¹e`.
    pub fn rhs_raw(&self) -> &DVector<T> {
        self.qr.rhs()
    }

    /// `r_p / μ`.
    pub fn rhs_scaled(&self) -> DVector<T> {
        self.qr.rhs() / self.qr.mu()
    }

    pub fn mu(&self) -> T {
        self.qr.mu()
    }

    /// `M = (AS⁻¹)(AS⁻¹)ᵀ`. Only for diagnostics; the solver never forms it.
    pub fn coefficient_matrix(&self) -> DMatrix<T> {
        let bt = self.qr.scaled_transpose();
        bt.tr_mul(bt)
    }

    pub fn factorization(&self) -> &ScaledQr<T> {
        &self.qr
    }

    pub fn rhs_is_zero(&self) -> bool {
        self.qr.rhs().iter().all(|v| *v == T::zero())
    }

    /// `δ(s, μ)` at the iterate the system was assembled for.
    pub fn delta(&self) -> T {
        self.qr.delta()
    }

    /// `κ(AS⁻¹)`.
    pub fn kappa(&self) -> Result<T> {
        self.qr.kappa()
    }
}

pub fn assemble_nes<T: Real>(inst: &LoInstance<T>, s: &DVector<T>, mu: T) -> Result<NesSystem<T>> {
    Ok(NesSystem {
        qr: ScaledQr::new(inst, s, mu)?,
    })
}

/// `Δy = (1/μ)(AS⁻²Aᵀ)⁻¹ r_p` through two triangular solves with `R`.
pub fn solve_exact<T: Real>(nes: &NesSystem<T>) -> Result<DVector<T>> {
    nes.qr.exact_direction()
}

pub fn budget_for_kappa<T: Real>(kappa: T) -> T {
    lit::<T>(BUDGET_NUMERATOR) / lit::<T>(BUDGET_DENOMINATOR) / kappa
}

/// `(0.005/1.995)·κ(AS⁻¹)⁻¹`, equal to `(0.005/1.995)·κ(AS⁻²Aᵀ)^{−1/2}`.
pub fn noise_budget<T: Real>(inst: &LoInstance<T>, s: &DVector<T>) -> Result<T> {
    let qr = ScaledQr::new(inst, s, T::one())?;
    Ok(budget_for_kappa(qr.kappa()?))
}

/// `λ* = r_pᵀΔȳ / (μ‖S⁻¹AᵀΔȳ‖²)`.
pub fn rescale_lambda_star<T: Real>(nes: &NesSystem<T>, dy_unit: &DVector<T>) -> Result<T> {
    let v = nes.qr.apply_scaled_transpose(dy_unit);
    let denom = nes.mu() * v.norm_squared();
    if !(denom > T::zero()) {
        return Err(Error::ZeroDenominator);
    }
    Ok(nes.rhs_raw().dot(dy_unit) / denom)
}

/// Uniformly distributed point on the unit sphere in `dim` dimensions.
pub fn sample_unit_sphere<T: Real, R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<T> {
    loop {
        let g = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let norm = g.norm();
        if norm > 1e-300 {
            return g.map(|v| lit::<T>(v / norm));
        }
    }
}

/// Stateful direction oracle. Owns its random stream so that repeated calls
/// during one solve draw fresh noise while the whole run stays reproducible.
#[derive(Debug, Clone)]
pub struct NesOracle {
    config: OracleConfig,
    cg_tolerance: f64,
    rng: ChaCha8Rng,
}

impl NesOracle {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            cg_tolerance: config.cg_tolerance,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn kind(&self) -> OracleKind {
        self.config.kind
    }

    pub fn cg_tolerance(&self) -> f64 {
        self.cg_tolerance
    }

    /// Retry policy after a failed audit: CG tightens its tolerance tenfold,
    /// the quantum oracle simply draws from its stream again.
    pub fn tighten(&mut self) {
        if self.config.kind == OracleKind::TruncatedCg {
            self.cg_tolerance /= 10.0;
        }
    }

    /// Unit direction `Δȳ` for a system with nonzero right-hand side.
    ///
    /// `dy_exact` and `budget` are the reference direction and the noise
    /// budget at this iterate; the simulated quantum oracle perturbs the
    /// former within a multiple of the latter.
    pub fn direction<T: Real>(&mut self, nes: &NesSystem<T>, dy_exact: &DVector<T>, budget: T) -> Result<DVector<T>> {
        if nes.rhs_is_zero() {
            return Err(Error::ZeroRightHandSide);
        }
        match self.config.kind {
            OracleKind::Exact => Ok(normalized(dy_exact)),
            OracleKind::TruncatedCg => {
                let z = truncated_cg(nes, lit(self.cg_tolerance));
                if z.norm() > T::zero() {
                    Ok(normalized(&z))
                } else {
                    Err(Error::ZeroRightHandSide)
                }
            }
            OracleKind::SimulatedQuantum => {
                let unit = normalized(dy_exact);
                // Half the requested radius: renormalizing `unit + E` at most
                // doubles the distance to `unit`.
                let radius = lit::<T>(self.config.noise_scale * 0.5) * budget;
                let dir = match self.config.noise_law {
                    NoiseLaw::Uniform => sample_unit_sphere::<T, _>(unit.len(), &mut self.rng),
                    NoiseLaw::Adversarial => worst_case_perturbation(nes, &unit),
                };
                let noise = dir * radius;
                let perturbed = unit + noise;
                Ok(normalized(&perturbed))
            }
        }
    }
}

/// Unit `v` maximizing `‖P⊥ S⁻¹Aᵀv‖`, where `P⊥` projects out `S⁻¹Aᵀu`.
///
/// Works in the coordinates of the triangular factor: with `S⁻¹Aᵀ = QR`
/// the quantity equals `‖P⊥' R v‖` for `P⊥'` projecting out `Ru`.
pub fn worst_case_perturbation<T: Real>(nes: &NesSystem<T>, unit: &DVector<T>) -> DVector<T> {
    let r = nes.qr.r();
    let a = r * unit;
    let aa = a.norm_squared();
    let c = if aa > T::zero() {
        r - &a * (a.tr_mul(r) / aa)
    } else {
        r.clone()
    };
    let svd = c.svd(false, true);
    let Some(vt) = svd.v_t else {
        return unit.clone();
    };
    let (imax, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, T::zero()), |best, (i, v)| if *v > best.1 { (i, *v) } else { best });
    let v = vt.row(imax).transpose();
    let norm = v.norm();
    if norm > T::zero() {
        v / norm
    } else {
        unit.clone()
    }
}

fn normalized<T: Real>(v: &DVector<T>) -> DVector<T> {
    v / v.norm()
}

/// Conjugate gradients on `Mz = r_p/μ` from `z = 0`, stopped once
/// `‖Mz − r_p/μ‖ ≤ tol·‖r_p/μ‖`.
pub fn truncated_cg<T: Real>(nes: &NesSystem<T>, tol: T) -> DVector<T> {
    let rhs = nes.rhs_scaled();
    let m = rhs.len();
    let target = tol * rhs.norm();
    let mut z = DVector::zeros(m);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let max_iter = 10 * m + 50;
    for _ in 0..max_iter {
        if rr.sqrt() <= target {
            break;
        }
        let mp = nes.qr.apply_normal(&p);
        let pmp = p.dot(&mp);
        if !(pmp > T::zero()) {
            break;
        }
        let alpha = rr / pmp;
        z.axpy(alpha, &p, T::one());
        r.axpy(-alpha, &mp, T::one());
        let rr_next = r.norm_squared();
        let beta = rr_next / rr;
        p = &r + p * beta;
        rr = rr_next;
    }
    z
}

/// Oracle output for one iterate with the full set of error diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionReport<T: Real> {
    /// `Δȳ`.
    pub dy_unit: DVector<T>,
    pub lambda_star: T,
    /// `Δỹ = λ*Δȳ`.
    pub dy_scaled: DVector<T>,
    /// `Δs̃ = −AᵀΔỹ`.
    pub ds_scaled: DVector<T>,
    /// Reference direction `Δy`.
    pub dy_exact: DVector<T>,
    /// `‖s⁻¹E^C_Δs‖ = ‖S⁻¹Aᵀ(Δy − Δỹ)‖`.
    pub err_ds_scaled_norm: T,
    pub cos_psi: T,
    pub sin_psi: T,
    /// `κ(AS⁻¹)`.
    pub kappa_est: T,
    pub noise_budget: T,
    /// `δ(s, μ)` from the primal projection.
    pub delta: T,
    /// `‖r_NES‖ = ‖M Δỹ − r_p/μ‖`.
    pub r_nes_norm: T,
}

impl<T: Real> DirectionReport<T> {
    /// `‖s⁻¹E^C_Δs‖ / δ`, zero at an exact center.
    pub fn err_ratio(&self) -> T {
        if self.delta > T::zero() {
            self.err_ds_scaled_norm / self.delta
        } else {
            T::zero()
        }
    }

    /// `‖E^C_Δy‖ = ‖Δỹ − Δy‖`.
    pub fn err_dy_norm(&self) -> T {
        (&self.dy_scaled - &self.dy_exact).norm()
    }

    /// `‖E^Q‖ = ‖Δȳ − Δy/‖Δy‖‖`.
    pub fn err_unit_norm(&self) -> T {
        let n = self.dy_exact.norm();
        if n > T::zero() {
            (&self.dy_unit - &self.dy_exact / n).norm()
        } else {
            T::zero()
        }
    }

    fn zero(inst: &LoInstance<T>, delta: T, kappa: T, budget: T) -> Self {
        let (m, n) = (inst.m(), inst.n());
        Self {
            dy_unit: DVector::zeros(m),
            lambda_star: T::zero(),
            dy_scaled: DVector::zeros(m),
            ds_scaled: DVector::zeros(n),
            dy_exact: DVector::zeros(m),
            err_ds_scaled_norm: T::zero(),
            cos_psi: T::one(),
            sin_psi: T::zero(),
            kappa_est: kappa,
            noise_budget: budget,
            delta,
            r_nes_norm: T::zero(),
        }
    }
}

/// Queries `oracle` once at the iterate of `nes` and packages the result.
pub fn report_with<T: Real>(inst: &LoInstance<T>, nes: &NesSystem<T>, oracle: &mut NesOracle) -> Result<DirectionReport<T>> {
    let kappa = nes.kappa()?;
    let budget = budget_for_kappa(kappa);
    if nes.rhs_is_zero() {
        return Ok(DirectionReport::zero(inst, nes.delta(), kappa, budget));
    }
    let dy_exact = solve_exact(nes)?;
    let dy_unit = oracle.direction(nes, &dy_exact, budget)?;
    assemble(inst, nes, dy_exact, dy_unit, kappa, budget)
}

/// Report for an externally supplied unit direction.
pub fn report_for_direction<T: Real>(inst: &LoInstance<T>, nes: &NesSystem<T>, dy_unit: DVector<T>) -> Result<DirectionReport<T>> {
    if dy_unit.len() != inst.m() {
        return Err(Error::DimensionMismatch {
            context: "oracle direction",
            expected: inst.m(),
            found: dy_unit.len(),
        });
    }
    let kappa = nes.kappa()?;
    let budget = budget_for_kappa(kappa);
    if nes.rhs_is_zero() {
        return Ok(DirectionReport::zero(inst, nes.delta(), kappa, budget));
    }
    let dy_exact = solve_exact(nes)?;
    assemble(inst, nes, dy_exact, dy_unit, kappa, budget)
}

fn assemble<T: Real>(
    inst: &LoInstance<T>,
    nes: &NesSystem<T>,
    dy_exact: DVector<T>,
    dy_unit: DVector<T>,
    kappa: T,
    budget: T,
) -> Result<DirectionReport<T>> {
    let lambda_star = rescale_lambda_star(nes, &dy_unit)?;
    let dy_scaled = &dy_unit * lambda_star;
    let ds_scaled = -inst.a().tr_mul(&dy_scaled);

    let exact_img = nes.qr.apply_scaled_transpose(&dy_exact);
    let oracle_img = nes.qr.apply_scaled_transpose(&dy_unit);
    let err_ds_scaled_norm = (&exact_img - &oracle_img * lambda_star).norm();

    // Angle between S⁻¹AᵀΔy and S⁻¹AᵀΔȳ from the normalized images.
    let (cos_psi, sin_psi) = {
        let en = exact_img.norm();
        let on = oracle_img.norm();
        if en > T::zero() && on > T::zero() {
            let a = exact_img / en;
            let b = oracle_img / on;
            let c = a.dot(&b);
            let sin = (&a - &b * c).norm();
            (c, sin)
        } else {
            (T::one(), T::zero())
        }
    };

    let r_nes_norm = (nes.qr.apply_normal(&dy_scaled) - nes.rhs_scaled()).norm();
    Ok(DirectionReport {
        dy_unit,
        lambda_star,
        dy_scaled,
        ds_scaled,
        dy_exact,
        err_ds_scaled_norm,
        cos_psi,
        sin_psi,
        kappa_est: kappa,
        noise_budget: budget,
        delta: nes.delta(),
        r_nes_norm,
    })
}

/// Unit direction from a freshly seeded oracle.
pub fn oracle_direction<T: Real>(nes: &NesSystem<T>, config: &OracleConfig) -> Result<DVector<T>> {
    let mut oracle = NesOracle::new(*config)?;
    let kappa = nes.kappa()?;
    let dy = solve_exact(nes)?;
    oracle.direction(nes, &dy, budget_for_kappa(kappa))
}

/// Single-shot report at `(s, μ)` with a freshly seeded oracle.
pub fn direction_report<T: Real>(inst: &LoInstance<T>, s: &DVector<T>, mu: T, config: &OracleConfig) -> Result<DirectionReport<T>> {
    let nes = assemble_nes(inst, s, mu)?;
    let mut oracle = NesOracle::new(*config)?;
    report_with(inst, &nes, &mut oracle)
}

/// `κ(S⁻²) = (max sᵢ / min sᵢ)²`.
pub fn slack_condition<T: Real>(s: &DVector<T>) -> T {
    let ratio = s.max() / s.min();
    ratio * ratio
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lo::tests::t1;
    use approx::assert_relative_eq;
    use nalgebra::dvector;

    #[test]
    fn assemble_t1() {
        let inst = t1();
        let nes = assemble_nes(&inst, &dvector![1.0, 1.0], 0.9).unwrap();
        assert_relative_eq!(nes.rhs_raw()[0], 0.2, max_relative = 1e-12);
        assert_relative_eq!(nes.coefficient_matrix()[(0, 0)], 2.0, max_relative = 1e-15);

        let nes = assemble_nes(&inst, &dvector![1.0, 1.0], 1.0).unwrap();
        assert_eq!(nes.rhs_raw()[0], 0.0);

        let nes = assemble_nes(&inst, &dvector![0.5, 0.5], 0.5).unwrap();
        assert_eq!(nes.rhs_raw()[0], 0.0);
        assert_relative_eq!(nes.coefficient_matrix()[(0, 0)], 8.0, max_relative = 1e-15);

        assert!(matches!(
            assemble_nes(&inst, &dvector![1.0, -1.0], 1.0),
            Err(Error::NotInterior { .. })
        ));
    }

    #[test]
    fn exact_solution_t1() {
        let inst = t1();
        let nes = assemble_nes(&inst, &dvector![1.0, 1.0], 0.9).unwrap();
        assert_relative_eq!(solve_exact(&nes).unwrap()[0], 1.0 / 9.0, max_relative = 1e-12);
        let nes = assemble_nes(&inst, &dvector![1.0, 1.0], 0.5).unwrap();
        assert_relative_eq!(solve_exact(&nes).unwrap()[0], 1.0, max_relative = 1e-12);
        let nes = assemble_nes(&inst, &dvector![1.0, 1.0], 1.0).unwrap();
        assert_eq!(solve_exact(&nes).unwrap()[0], 0.0);
    }

    #[test]
    fn lambda_star_t1() {
        let inst = t1();
        let nes = assemble_nes(&inst, &dvector![1.0, 1.0], 0.9).unwrap();
        let l = rescale_lambda_star(&nes, &dvector![1.0]).unwrap();
        assert_relative_eq!(l, 1.0 / 9.0, max_relative = 1e-12);
        let l_neg = rescale_lambda_star(&nes, &dvector![-1.0]).unwrap();
        assert_relative_eq!(l_neg, -1.0 / 9.0, max_relative = 1e-12);
        assert_relative_eq!(l_neg * -1.0, l * 1.0, max_relative = 1e-15);
    }

    #[test]
    fn oracle_directions_t1() {
        let inst = t1();
        let nes = assemble_nes(&inst, &dvector![1.0, 1.0], 0.9).unwrap();
        let exact = oracle_direction(&nes, &OracleConfig::exact()).unwrap();
        assert_relative_eq!(exact[0], 1.0, max_relative = 1e-15);
        let q0 = oracle_direction(&nes, &OracleConfig::quantum(0.0, 3)).unwrap();
        assert_eq!(q0, exact);
        let nes0 = assemble_nes(&inst, &dvector![1.0, 1.0], 1.0).unwrap();
        assert!(matches!(
            oracle_direction(&nes0, &OracleConfig::exact()),
            Err(Error::ZeroRightHandSide)
        ));
    }

    #[test]
    fn budget_t1() {
        let inst = t1();
        let b = noise_budget(&inst, &dvector![1.0, 1.0]).unwrap();
        assert_relative_eq!(b, 0.005 / 1.995, max_relative = 1e-12);
        assert_relative_eq!(b, 2.50626566e-3, max_relative = 1e-8);
        assert!(budget_for_kappa(1e300) < 1e-302);
    }

    #[test]
    fn exact_report_has_no_error() {
        let inst = t1();
        let rep = direction_report(&inst, &dvector![1.0, 1.0], 0.9, &OracleConfig::exact()).unwrap();
        assert!(rep.sin_psi < 1e-12);
        assert!(rep.err_ds_scaled_norm < 1e-15);
        assert_relative_eq!(rep.dy_scaled, rep.dy_exact, max_relative = 1e-14);
        assert_eq!(rep.ds_scaled + inst.a().tr_mul(&rep.dy_scaled), dvector![0.0, 0.0]);
    }

    #[test]
    fn zero_rhs_report_is_zero() {
        let inst = t1();
        let rep = direction_report(&inst, &dvector![1.0, 1.0], 1.0, &OracleConfig::quantum(1.0, 1)).unwrap();
        assert_eq!(rep.dy_scaled, dvector![0.0]);
        assert_eq!(rep.err_ds_scaled_norm, 0.0);
        assert_eq!(rep.delta, 0.0);
        assert_eq!(rep.err_ratio(), 0.0);
    }

    #[test]
    fn quantum_oracle_is_seeded() {
        let inst = t1();
        let s = dvector![0.8, 1.3];
        let a = direction_report(&inst, &s, 0.7, &OracleConfig::quantum(1.0, 11)).unwrap();
        let b = direction_report(&inst, &s, 0.7, &OracleConfig::quantum(1.0, 11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(OracleConfig::quantum(-1.0, 0).validate().is_err());
        assert!(OracleConfig::cg(0.0).validate().is_err());
        assert!(OracleConfig::cg(1e-3).validate().is_ok());
    }

    #[test]
    fn slack_condition_is_squared_ratio() {
        assert_eq!(slack_condition(&dvector![0.5, 2.0, 1.0]), 16.0);
    }
}
