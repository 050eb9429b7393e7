//! Sum-of-exponentials approximation of the power-law kernel.
//!
//! The kernel `K(t) = t^{α−1}/Γ(α)` has the Laplace representation
//! `K(t) = ∫ e^{−γt} μ(dγ)` with `μ(dγ) = γ^{−α}/(Γ(α)Γ(1−α)) dγ`. Splitting
//! the rate axis into `n` cells and matching the zeroth and first moments of
//! `μ` on each cell yields weights `c_i` and nodes `γ_i` such that
//! `K^n(t) = Σ c_i e^{−γ_i t}` converges to `K` as the partition refines.
//!
//! The partition is deterministic in `(α, n, horizon)`: the first cell is
//! `[0, γ_lo/horizon]` (it carries the slow, quasi-constant component of the
//! kernel), the remaining cells are geometric up to `γ_hi·n²/horizon`. The
//! quadratic growth of the fastest rate keeps `γ_max·dt` of an explicit Euler
//! factor update well below its stability bound at the default simulation
//! step while still refining the small-`t` singularity as `n` grows.

use thiserror::Error;

/// Rate of the lower cell edge relative to `1/horizon`.
const GAMMA_LO: f64 = 0.5;
/// Rate of the fastest cell edge relative to `n²/horizon`.
const GAMMA_HI: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("alpha must lie in (1/2, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("factor count must be positive")]
    ZeroFactors,
    #[error("horizon must be positive, got {0}")]
    NonPositiveHorizon(f64),
}

/// Multi-factor approximation `K^n(t) = Σ c_i e^{−γ_i t}` of the power-law
/// kernel, with `c_i > 0` and `γ_i` strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalKernelApprox {
    alpha: f64,
    horizon: f64,
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl FractionalKernelApprox {
    /// Number of exponential factors.
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Roughness exponent α of the approximated kernel.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Horizon (years) the partition was tied to.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Weights `c_i`, all positive.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Mean-reversion rates `γ_i` (1/year), strictly increasing.
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Evaluates `K^n(t) = Σ c_i e^{−γ_i t}`.
    pub fn eval(&self, t: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(c, g)| c * (-g * t).exp())
            .sum()
    }

    /// Recombines factor values into the scalar `Z̄ = Σ c_i Z^i`.
    pub fn recombine(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.n());
        self.weights.iter().zip(z).map(|(c, zi)| c * zi).sum()
    }
}

/// Evaluates the exact power-law kernel `K(t) = t^{α−1}/Γ(α)`.
pub fn power_law_kernel(alpha: f64, t: f64) -> f64 {
    t.powf(alpha - 1.0) / libm::tgamma(alpha)
}

/// Builds the `n`-factor kernel approximation for roughness `α ∈ (1/2, 1)`
/// over `(0, horizon]` years.
pub fn build_kernel_approx(
    alpha: f64,
    n: usize,
    horizon: f64,
) -> Result<FractionalKernelApprox, KernelError> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(KernelError::AlphaOutOfRange(alpha));
    }
    if n == 0 {
        return Err(KernelError::ZeroFactors);
    }
    if !(horizon > 0.0) {
        return Err(KernelError::NonPositiveHorizon(horizon));
    }

    // Cell edges: 0 = e_0 < e_1 < … < e_n.
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    let top = GAMMA_HI * (n as f64).powi(2) / horizon;
    if n == 1 {
        edges.push(top);
    } else {
        let lo = GAMMA_LO / horizon;
        let ratio = (top / lo).powf(1.0 / (n as f64 - 1.0));
        for i in 0..n {
            edges.push(lo * ratio.powi(i as i32));
        }
    }

    // Moments of μ(dγ) = γ^{−α}/(Γ(α)Γ(1−α)) dγ over a cell [lo, hi]:
    //   ∫ μ(dγ)   = (hi^{1−α} − lo^{1−α}) / ((1−α) Γ(α) Γ(1−α))
    //   ∫ γ μ(dγ) = (hi^{2−α} − lo^{2−α}) / ((2−α) Γ(α) Γ(1−α))
    let norm = libm::tgamma(alpha) * libm::tgamma(1.0 - alpha);
    let p1 = 1.0 - alpha;
    let p2 = 2.0 - alpha;
    let mut weights = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = (edges[i], edges[i + 1]);
        let m0 = (hi.powf(p1) - lo.powf(p1)) / (p1 * norm);
        let m1 = (hi.powf(p2) - lo.powf(p2)) / (p2 * norm);
        weights.push(m0);
        rates.push(m1 / m0);
    }

    Ok(FractionalKernelApprox {
        alpha,
        horizon,
        weights,
        rates,
    })
}
