//! Model constants and the Markov state of the multi-factor QRH model.

use crate::kernel::FractionalKernelApprox;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} must be {constraint}, got {value}")]
    InvalidParam {
        name: &'static str,
        constraint: &'static str,
        value: f64,
    },
    #[error("factor vector has length {got}, kernel has {expected} factors")]
    FactorLengthMismatch { got: usize, expected: usize },
    #[error("spot must be positive, got {0}")]
    NonPositiveSpot(f64),
}

/// Constants of the quadratic rough Heston model.
///
/// Spot variance is `V = a(Z̄ − b)² + c` with `Z̄ = Σ c_i Z^i`; the factors
/// mean-revert at rates `γ_i` plus the common speed `λ` and share the vol-of-
/// vol scale `η`. `mu` is the drift of `S` used under the short-horizon
/// approximation, in $/year; the simulator applies it as a proportional rate
/// at the initial spot so the price stays positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QrhParams {
    /// Mean-reversion speed λ (1/year).
    pub lambda: f64,
    /// Vol-of-vol scale η.
    pub eta: f64,
    /// Quadratic-variance coefficient a (> 0; 0 admitted in test configs).
    pub a: f64,
    /// Quadratic-variance center b.
    pub b: f64,
    /// Variance floor c (> 0).
    pub c: f64,
    /// Drift of S under the short-horizon approximation ($/year).
    pub mu: f64,
}

impl QrhParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        // a = 0 is admitted: it induces constant variance and closed-form
        // pricing oracles used by the test configurations.
        if self.a < 0.0 {
            return Err(ModelError::InvalidParam {
                name: "a",
                constraint: "nonnegative",
                value: self.a,
            });
        }
        if !(self.c > 0.0) {
            return Err(ModelError::InvalidParam {
                name: "c",
                constraint: "positive",
                value: self.c,
            });
        }
        if self.lambda < 0.0 {
            return Err(ModelError::InvalidParam {
                name: "lambda",
                constraint: "nonnegative",
                value: self.lambda,
            });
        }
        if self.eta < 0.0 {
            return Err(ModelError::InvalidParam {
                name: "eta",
                constraint: "nonnegative",
                value: self.eta,
            });
        }
        Ok(())
    }
}

/// Markov state `X = (S, Z^1..Z^n)` at time `t` (years).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// Time in years.
    pub t: f64,
    /// Spot price ($, positive).
    pub s: f64,
    /// Factor values `Z^i`.
    pub z: Vec<f64>,
}

impl ModelState {
    pub fn new(t: f64, s: f64, z: Vec<f64>) -> Result<Self, ModelError> {
        if !(s > 0.0) {
            return Err(ModelError::NonPositiveSpot(s));
        }
        Ok(ModelState { t, s, z })
    }

    /// Spot variance `V = a(Σ c_i Z^i − b)² + c` of this state.
    pub fn variance(
        &self,
        params: &QrhParams,
        kernel: &FractionalKernelApprox,
    ) -> Result<f64, ModelError> {
        instantaneous_variance(params, kernel, &self.z)
    }
}

/// Evaluates the variance map `V = a(Σ c_i Z^i − b)² + c`; always ≥ c.
pub fn instantaneous_variance(
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    z: &[f64],
) -> Result<f64, ModelError> {
    if z.len() != kernel.n() {
        return Err(ModelError::FactorLengthMismatch {
            got: z.len(),
            expected: kernel.n(),
        });
    }
    let zbar = kernel.recombine(z);
    Ok(params.a * (zbar - params.b) * (zbar - params.b) + params.c)
}
