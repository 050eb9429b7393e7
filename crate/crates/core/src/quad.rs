//! Quadratic surrogate Hamiltonians and the closed-form asymptotic value
//! function.
//!
//! Replacing the execution Hamiltonian with the parabola
//! `Ĥ^{j,k}(p) = Λ^{j,k}((α^j/2)p² − p + D^j/2)` — tangent to `H^{j,k}` in
//! value and slope at `p = 0` — closes the lattice system under the quadratic
//! ansatz `v̂(t, q) = −qᵀA(t)q − qᵀB(t) − C(t)` without inventory caps.
//! Matching coefficients gives the backward system
//!
//! ```text
//! Ȧ = 2 A D₊ A − (κσ²/2) Σ
//! Ḃ = 2 A (D₊ B + D₋ s(A) + V₋) + μ δ,      s_j(A) = m^j A_jj,
//! ```
//!
//! with `Σ = diag(κ_j δ_j²/κ) + δδᵀ`, `D± = diag((Λ^{j,b} ± Λ^{j,a}) α^j m^j)`
//! and `V₋ = ((Λ^{j,a} − Λ^{j,b}) m^j)_j`. As the horizon grows, `A(0)` and
//! `B(0)` converge to
//!
//! ```text
//! A = (σ/2)√κ Γ,    Γ = D₊^{−1/2} (D₊^{1/2} Σ D₊^{1/2})^{1/2} D₊^{−1/2}
//! B = −(μ/(σ√κ)) D₊^{−1/2} M⁺ D₊^{1/2} δ
//!     − D₊^{−1/2} M⁺M D₊^{−1/2} (V₋ + (σ/2)√κ D₋ diag(m) 𝒟(Γ))
//! ```
//!
//! where `M = (D₊^{1/2} Σ D₊^{1/2})^{1/2}` and `M⁺` its Moore–Penrose
//! inverse. The formulas are validated against a long-horizon integration of
//! the matrix system and against a quadratic fit of the lattice solver run
//! with the surrogate Hamiltonians. The `C(t)` offset is not computed; it
//! does not affect decisions.
//!
//! `greedy_decision` plugs the asymptotic `v̂` into the optimal-control
//! characterization; the resulting quote region of each `(asset, side)` is
//! the lattice intersected with a half-space. `portfolio_rule` is the scalar
//! analogue for the net-risk formulation with symmetric intensities.

use crate::hjb::{PortfolioSpec, Side};
use crate::SECONDS_PER_YEAR;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("curvature must be positive, got {0}")]
    NonPositiveCurvature(f64),
    #[error("need {expected} curvatures, got {got}")]
    CurvatureLengthMismatch { got: usize, expected: usize },
    #[error("the closed form divides by the cross penalty; kappa must be positive")]
    KappaZero,
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("matrix has eigenvalue {0} below the PSD rejection threshold")]
    NotPositiveSemiDefinite(f64),
    #[error("singular value decomposition failed to converge")]
    SvdFailed,
    #[error("portfolio rule requires symmetric intensities on asset {0}")]
    AsymmetricIntensities(usize),
    #[error("portfolio rule requires kappa_j = 0 for every asset")]
    PerAssetPenaltyNotZero,
    #[error("portfolio rule denominator Σ δ²Λmα is zero")]
    DegenerateRuleDenominator,
    #[error(transparent)]
    Hjb(#[from] crate::hjb::HjbError),
}

/// Per-asset curvature α^j of the surrogate Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticHamiltonianSpec {
    pub curvature: Vec<f64>,
}

impl QuadraticHamiltonianSpec {
    pub fn new(curvature: Vec<f64>) -> Result<Self, QuadError> {
        for &a in &curvature {
            if !(a > 0.0) {
                return Err(QuadError::NonPositiveCurvature(a));
            }
        }
        Ok(QuadraticHamiltonianSpec { curvature })
    }

    /// The experiment default α^j = 1/(4 D^j).
    pub fn default_for(spec: &PortfolioSpec) -> Self {
        QuadraticHamiltonianSpec {
            curvature: spec.assets.iter().map(|a| 1.0 / (4.0 * a.tick)).collect(),
        }
    }

    fn check(&self, d: usize) -> Result<(), QuadError> {
        if self.curvature.len() != d {
            return Err(QuadError::CurvatureLengthMismatch {
                got: self.curvature.len(),
                expected: d,
            });
        }
        for &a in &self.curvature {
            if !(a > 0.0) {
                return Err(QuadError::NonPositiveCurvature(a));
            }
        }
        Ok(())
    }
}

/// Surrogate Hamiltonian `Ĥ(p) = Λ((α/2)p² − p + D/2)`; tangent to the exact
/// `H` in value and first derivative at `p = 0`.
pub fn approx_hamiltonian(p: f64, intensity: f64, tick: f64, curvature: f64) -> f64 {
    intensity * (0.5 * curvature * p * p - p + 0.5 * tick)
}

/// Symmetric square root of a positive semi-definite matrix via symmetric
/// eigendecomposition; eigenvalues below `−1e−8·‖M‖` are rejected, negative
/// roundoff is clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, QuadError> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(QuadError::NotSymmetric);
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(QuadError::NotSymmetric);
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut roots = eig.eigenvalues.clone();
    for lambda in roots.iter_mut() {
        if *lambda < -1e-8 * scale {
            return Err(QuadError::NotPositiveSemiDefinite(*lambda));
        }
        *lambda = lambda.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&roots) * q.transpose())
}

/// Moore–Penrose pseudoinverse via SVD with a relative rank cutoff of 1e−12.
pub fn pinv(m: &DMatrix<f64>) -> Result<DMatrix<f64>, QuadError> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or(QuadError::SvdFailed)?;
    let v_t = svd.v_t.as_ref().ok_or(QuadError::SvdFailed)?;
    let smax = svd.singular_values.max();
    let cutoff = 1e-12 * smax;
    let mut inv = svd.singular_values.clone();
    for s in inv.iter_mut() {
        *s = if *s > cutoff { 1.0 / *s } else { 0.0 };
    }
    Ok(v_t.transpose() * DMatrix::from_diagonal(&inv) * u.transpose())
}

/// Asymptotic quadratic value function `v̂(q) = −qᵀAq − qᵀB − C` (C omitted),
/// with the inputs it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticSolution {
    /// Symmetric PSD curvature matrix ($/unit²).
    pub a: DMatrix<f64>,
    /// Linear coefficient ($/unit).
    pub b: DVector<f64>,
    /// σ used ($/√year).
    pub sigma: f64,
    /// Cross penalty κ (1/$).
    pub kappa: f64,
    /// Per-asset penalties κ_j (1/$).
    pub kappa_j: Vec<f64>,
    /// Hedge ratios δ^j.
    pub deltas: Vec<f64>,
    /// Drift μ ($/year).
    pub mu: f64,
    /// Surrogate curvatures α^j.
    pub curvature: Vec<f64>,
}

/// Closed-form asymptotics of the surrogate system; rejects `κ = 0` (the
/// per-asset lattice solver serves that case).
pub fn asymptotic_solution(
    spec: &PortfolioSpec,
    qspec: &QuadraticHamiltonianSpec,
) -> Result<AsymptoticSolution, QuadError> {
    spec.validate()?;
    let d = spec.d();
    qspec.check(d)?;
    if !(spec.cross_kappa > 0.0) {
        return Err(QuadError::KappaZero);
    }

    let kappa = spec.cross_kappa;
    let sigma = spec.sigma / SECONDS_PER_YEAR.sqrt(); // $/√second
    let mu = spec.mu / SECONDS_PER_YEAR; // $/second

    let delta = DVector::from_iterator(d, spec.assets.iter().map(|a| a.delta));
    let mut sig_mat = &delta * delta.transpose();
    for j in 0..d {
        sig_mat[(j, j)] += spec.assets[j].kappa_j * delta[j] * delta[j] / kappa;
    }

    let dp: Vec<f64> = (0..d)
        .map(|j| {
            let a = &spec.assets[j];
            (a.intensity_bid + a.intensity_ask) * qspec.curvature[j] * a.order_size
        })
        .collect();
    let dm: Vec<f64> = (0..d)
        .map(|j| {
            let a = &spec.assets[j];
            (a.intensity_bid - a.intensity_ask) * qspec.curvature[j] * a.order_size
        })
        .collect();
    let v_minus = DVector::from_iterator(
        d,
        spec.assets
            .iter()
            .map(|a| (a.intensity_ask - a.intensity_bid) * a.order_size),
    );

    let dp_sqrt = DVector::from_iterator(d, dp.iter().map(|x| x.sqrt()));
    let mut inner = sig_mat.clone();
    for i in 0..d {
        for j in 0..d {
            inner[(i, j)] *= dp_sqrt[i] * dp_sqrt[j];
        }
    }
    let m_half = psd_sqrt(&inner)?;
    // Γ = D₊^{−1/2} M D₊^{−1/2}
    let mut gamma = m_half.clone();
    for i in 0..d {
        for j in 0..d {
            gamma[(i, j)] /= dp_sqrt[i] * dp_sqrt[j];
        }
    }
    let a_mat = gamma.clone() * (0.5 * sigma * kappa.sqrt());

    // B from 2A(D₊B + D₋ s + V₋) + μδ = 0 with s_j = m_j A_jj, solved in the
    // D₊^{1/2}-transformed coordinates through the pseudoinverse of M.
    let m_pinv = pinv(&m_half)?;
    let proj = &m_pinv * &m_half;
    let s_vec = DVector::from_iterator(
        d,
        (0..d).map(|j| spec.assets[j].order_size * a_mat[(j, j)]),
    );
    let forcing = DVector::from_iterator(d, (0..d).map(|j| v_minus[j] + dm[j] * s_vec[j]));

    let scale_vec = |v: &DVector<f64>, pow: f64| -> DVector<f64> {
        DVector::from_iterator(d, (0..d).map(|j| v[j] * dp_sqrt[j].powf(pow)))
    };
    // term1 = −(μ/(σ√κ)) D₊^{−1/2} M⁺ D₊^{1/2} δ
    let term1 = scale_vec(
        &(&m_pinv * scale_vec(&delta, 1.0)),
        -1.0,
    ) * (-mu / (sigma * kappa.sqrt()));
    // term2 = −D₊^{−1/2} M⁺M D₊^{−1/2} (V₋ + D₋ s)
    let term2 = scale_vec(&(&proj * scale_vec(&forcing, -1.0)), -1.0) * -1.0;
    let b = term1 + term2;

    Ok(AsymptoticSolution {
        a: a_mat,
        b,
        sigma: spec.sigma,
        kappa,
        kappa_j: spec.assets.iter().map(|a| a.kappa_j).collect(),
        deltas: spec.assets.iter().map(|a| a.delta).collect(),
        mu: spec.mu,
        curvature: qspec.curvature.clone(),
    })
}

/// Greedy quote decision from the asymptotic value function: quote iff the
/// post-fill inventory is admissible and
/// `2φ (e_j)ᵀA q + m_j A_jj + φ B_j ≤ D_j/2`.
pub fn greedy_decision(
    q: &[f64],
    asset: usize,
    side: Side,
    sol: &AsymptoticSolution,
    spec: &PortfolioSpec,
) -> bool {
    let a = &spec.assets[asset];
    let phi = side.phi();
    if let Some(cap) = a.max_inventory {
        if (q[asset] + phi * a.order_size).abs() > cap + 1e-9 * a.order_size {
            return false;
        }
    }
    let row_dot: f64 = (0..q.len()).map(|i| sol.a[(asset, i)] * q[i]).sum();
    let score = 2.0 * phi * row_dot + a.order_size * sol.a[(asset, asset)] + phi * sol.b[asset];
    score <= 0.5 * a.tick
}

/// Scalar coefficient `D = (σ/2)√(κ / (2 Σ_j δ_j² Λ_j m_j α_j))` of the
/// simplified net-risk rule (symmetric intensities).
pub fn portfolio_rule_coefficient(
    spec: &PortfolioSpec,
    qspec: &QuadraticHamiltonianSpec,
) -> Result<f64, QuadError> {
    spec.validate()?;
    qspec.check(spec.d())?;
    let mut denom = 0.0;
    for (j, a) in spec.assets.iter().enumerate() {
        if (a.intensity_bid - a.intensity_ask).abs() > 1e-12 {
            return Err(QuadError::AsymmetricIntensities(j));
        }
        if a.kappa_j != 0.0 {
            return Err(QuadError::PerAssetPenaltyNotZero);
        }
        denom += a.delta * a.delta * a.intensity_bid * a.order_size * qspec.curvature[j];
    }
    if denom <= 0.0 {
        return Err(QuadError::DegenerateRuleDenominator);
    }
    let sigma = spec.sigma / SECONDS_PER_YEAR.sqrt();
    Ok(0.5 * sigma * (spec.cross_kappa / (2.0 * denom)).sqrt())
}

/// Simplified greedy rule on the net risk `r`: quote iff `r + φ m δ` stays in
/// `[−R, R]` and `D(2φ r δ_j + m_j δ_j²) ≤ D_j/2` with the scalar `D` above
/// (the quadratic form `θ̂(r) = −D r²` plugged into the control rule).
pub fn portfolio_rule(
    r: f64,
    asset: usize,
    side: Side,
    spec: &PortfolioSpec,
    qspec: &QuadraticHamiltonianSpec,
    risk_bound: f64,
) -> Result<bool, QuadError> {
    let coeff = portfolio_rule_coefficient(spec, qspec)?;
    let a = &spec.assets[asset];
    let phi = side.phi();
    let shifted = r + phi * a.order_size * a.delta;
    if shifted.abs() > risk_bound + 1e-9 * risk_bound.max(1.0) {
        return Ok(false);
    }
    let score = coeff * (2.0 * phi * r * a.delta + a.order_size * a.delta * a.delta);
    Ok(score <= 0.5 * a.tick)
}
