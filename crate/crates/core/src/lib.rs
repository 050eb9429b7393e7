//! Multi-asset market making on SPX and its derivatives under the multi-factor
//! quadratic rough Heston (QRH) model.
//!
//! The crate is organized around the pipeline of a market-making desk study:
//!
//! * [`kernel`] — sum-of-exponentials approximation of the power-law kernel,
//!   which makes the model state Markovian.
//! * [`model`] / [`simulate`] — model parameters, the Markov state
//!   `(S, Z^1..Z^n)` and Euler–Maruyama path simulation.
//! * [`pricer`] — Monte-Carlo pricing of VIX futures and SPX/VIX vanillas,
//!   finite-difference hedge ratios and discrete-hedging P&L.
//! * [`hjb`] — exact finite-horizon lattice solvers for the market-making
//!   value functions and optimal-control extraction.
//! * [`quad`] — quadratic surrogate Hamiltonians and the closed-form
//!   asymptotic value function with greedy decision rules.
//! * [`backtest`] — event-level strategy simulation with Poisson executions
//!   and mean-risk frontier sweeps.
//!
//! Model parameters (rates, vol-of-vol, drift) are quoted per year; market
//! making horizons and execution intensities are quoted in seconds. The
//! conversion constant is [`SECONDS_PER_YEAR`], applied once where a solver
//! needs both scales.

pub mod backtest;
pub mod hjb;
pub mod kernel;
pub mod model;
pub mod pricer;
pub mod quad;
pub mod rng;
pub mod simulate;

/// Calendar-year convention used to convert between per-year model units and
/// per-second market making units (365 days of 86 400 seconds).
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;

pub use kernel::{build_kernel_approx, FractionalKernelApprox};
pub use model::{instantaneous_variance, ModelState, QrhParams};
pub use simulate::{simulate_paths, PathStepper, SimulatedPath};
