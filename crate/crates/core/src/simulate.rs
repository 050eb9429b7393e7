//! Euler–Maruyama simulation of the Markovian QRH state.
//!
//! One Brownian increment per step drives both the spot and every factor:
//!
//! ```text
//! Z^i ← Z^i + (−γ_i Z^i − λ Σ c_k Z^k) dt + η √V √dt ξ
//! S   ← S · exp((μ/S₀ − V/2) dt + √V √dt ξ)
//! ```
//!
//! The spot moves in log space with the Itô correction `−V/2 dt`, so `S` stays
//! positive and the scheme is exact for constant variance; with `μ = 0` the
//! discrete price is a martingale. The $/year drift `μ` of the short-horizon
//! approximation is converted to a proportional rate at the initial spot.
//! Factors use an explicit Euler step; `V ≥ c > 0` holds by construction of
//! the variance map, no clamping is applied.
//!
//! Paths are embarrassingly parallel: path `i` is a pure function of the
//! inputs and the `(seed, i)` substream, so results do not depend on the
//! degree of parallelism.

use crate::kernel::FractionalKernelApprox;
use crate::model::{ModelState, QrhParams};
use crate::rng::{substream, StreamDomain};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("horizon {horizon} shorter than one step {dt}")]
    HorizonTooShort { horizon: f64, dt: f64 },
    #[error("path count must be positive")]
    ZeroPaths,
    #[error("initial state has {got} factors, kernel has {expected}")]
    FactorLengthMismatch { got: usize, expected: usize },
}

/// One simulated trajectory of the model state on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    /// Uniform step (years).
    pub dt: f64,
    /// Master seed the path substream was derived from.
    pub seed: u64,
    /// Substream index of this path.
    pub path_index: u64,
    /// States at `t0, t0+dt, …`; every node satisfies the state invariants.
    pub states: Vec<ModelState>,
}

impl SimulatedPath {
    /// Spot series of the path.
    pub fn spots(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|st| st.s)
    }

    pub fn terminal(&self) -> &ModelState {
        self.states.last().expect("path has at least one state")
    }
}

/// Streaming single-path stepper; used by the pricer's nested loops and by
/// the backtest engine, which consume states without storing whole paths.
pub struct PathStepper<'a> {
    params: &'a QrhParams,
    kernel: &'a FractionalKernelApprox,
    /// Proportional drift rate μ/S₀ (1/year).
    drift_rate: f64,
    dt: f64,
    sqrt_dt: f64,
    pub state: ModelState,
    rng: ChaCha8Rng,
}

impl<'a> PathStepper<'a> {
    pub fn new(
        params: &'a QrhParams,
        kernel: &'a FractionalKernelApprox,
        state0: ModelState,
        dt: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, SimError> {
        if !(dt > 0.0) {
            return Err(SimError::NonPositiveStep(dt));
        }
        if state0.z.len() != kernel.n() {
            return Err(SimError::FactorLengthMismatch {
                got: state0.z.len(),
                expected: kernel.n(),
            });
        }
        Ok(PathStepper {
            params,
            kernel,
            drift_rate: params.mu / state0.s,
            dt,
            sqrt_dt: dt.sqrt(),
            state: state0,
            rng,
        })
    }

    /// Current spot variance.
    pub fn variance(&self) -> f64 {
        let zbar = self.kernel.recombine(&self.state.z);
        self.params.a * (zbar - self.params.b) * (zbar - self.params.b) + self.params.c
    }

    /// Advances the state by one step and returns the variance that drove it.
    pub fn step(&mut self) -> f64 {
        let p = self.params;
        let zbar = self.kernel.recombine(&self.state.z);
        let v = p.a * (zbar - p.b) * (zbar - p.b) + p.c;
        let xi: f64 = self.rng.sample(StandardNormal);
        let shock = v.sqrt() * self.sqrt_dt * xi;

        for (zi, gamma) in self.state.z.iter_mut().zip(self.kernel.rates()) {
            *zi += (-gamma * *zi - p.lambda * zbar) * self.dt + p.eta * shock;
        }
        self.state.s *= ((self.drift_rate - 0.5 * v) * self.dt + shock).exp();
        self.state.t += self.dt;
        v
    }
}

/// Simulates `n_paths` independent trajectories from `state0` over `horizon`
/// years with step `dt`. Identical `(seed, dt, n_paths)` yield bit-identical
/// paths regardless of thread count.
pub fn simulate_paths(
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    state0: &ModelState,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SimulatedPath>, SimError> {
    if !(dt > 0.0) {
        return Err(SimError::NonPositiveStep(dt));
    }
    if horizon < dt {
        return Err(SimError::HorizonTooShort { horizon, dt });
    }
    if n_paths == 0 {
        return Err(SimError::ZeroPaths);
    }
    if state0.z.len() != kernel.n() {
        return Err(SimError::FactorLengthMismatch {
            got: state0.z.len(),
            expected: kernel.n(),
        });
    }
    let steps = (horizon / dt).round().max(1.0) as usize;

    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let rng = substream(seed, StreamDomain::Path, i);
            let mut stepper = PathStepper::new(params, kernel, state0.clone(), dt, rng)?;
            let mut states = Vec::with_capacity(steps + 1);
            states.push(stepper.state.clone());
            for _ in 0..steps {
                stepper.step();
                states.push(stepper.state.clone());
            }
            Ok(SimulatedPath {
                dt,
                seed,
                path_index: i,
                states,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel_approx;
    use crate::model::instantaneous_variance;

    fn example_params() -> QrhParams {
        QrhParams {
            lambda: 1.7,
            eta: 1.5,
            a: 0.265,
            b: 0.246,
            c: 0.0001,
            mu: 0.0,
        }
    }

    fn example_z0() -> Vec<f64> {
        vec![
            -0.009, 0.015, 0.011, 0.036, 0.002, -0.011, -0.018, 0.074, 0.142, -0.171,
        ]
    }

    #[test]
    fn rejects_bad_arguments() {
        let kernel = build_kernel_approx(0.6, 2, 1.0).unwrap();
        let state = ModelState::new(0.0, 100.0, vec![0.0; 2]).unwrap();
        let p = example_params();
        assert!(matches!(
            simulate_paths(&p, &kernel, &state, 1.0, 0.0, 1, 0),
            Err(SimError::NonPositiveStep(_))
        ));
        assert!(matches!(
            simulate_paths(&p, &kernel, &state, 1.0, 0.01, 0, 0),
            Err(SimError::ZeroPaths)
        ));
        assert!(matches!(
            simulate_paths(&p, &kernel, &state, 0.001, 0.01, 1, 0),
            Err(SimError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn degenerate_constant_variance_is_exact_gbm() {
        // η = 0, a = 0, μ = 0: V ≡ c and the log-Euler update is the exact
        // lognormal transition, so the sample mean of S_T must sit within
        // three standard errors of S₀.
        let kernel = build_kernel_approx(0.6, 2, 1.0).unwrap();
        let params = QrhParams {
            lambda: 0.0,
            eta: 0.0,
            a: 0.0,
            b: 0.0,
            c: 0.04,
            mu: 0.0,
        };
        let state = ModelState::new(0.0, 100.0, vec![0.0; 2]).unwrap();
        let paths = simulate_paths(&params, &kernel, &state, 1.0, 1.0 / 50.0, 4000, 11).unwrap();
        for path in &paths {
            for st in &path.states {
                let v = instantaneous_variance(&params, &kernel, &st.z).unwrap();
                assert_eq!(v, 0.04);
            }
        }
        let terminal: Vec<f64> = paths.iter().map(|p| p.terminal().s).collect();
        let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
        let var = terminal.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (terminal.len() - 1) as f64;
        let se = (var / terminal.len() as f64).sqrt();
        assert!(
            (mean - 100.0).abs() <= 3.0 * se,
            "mean {mean} se {se} drifts from 100"
        );
    }

    #[test]
    fn variance_floor_holds_on_every_node() {
        let kernel = build_kernel_approx(0.6, 10, 1.0).unwrap();
        let params = example_params();
        let state = ModelState::new(0.0, 3000.0, example_z0()).unwrap();
        let paths = simulate_paths(&params, &kernel, &state, 0.05, 1.0 / 2520.0, 64, 3).unwrap();
        for path in &paths {
            for st in &path.states {
                assert!(st.s > 0.0);
                let v = instantaneous_variance(&params, &kernel, &st.z).unwrap();
                assert!(v >= params.c);
            }
        }
    }

    #[test]
    fn martingale_under_zero_drift() {
        let kernel = build_kernel_approx(0.6, 10, 1.0).unwrap();
        let params = example_params();
        let state = ModelState::new(0.0, 3000.0, example_z0()).unwrap();
        let paths =
            simulate_paths(&params, &kernel, &state, 30.0 / 365.0, 1.0 / 2520.0, 10_000, 5)
                .unwrap();
        let terminal: Vec<f64> = paths.iter().map(|p| p.terminal().s).collect();
        let mean = terminal.iter().sum::<f64>() / terminal.len() as f64;
        let var = terminal.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
            / (terminal.len() - 1) as f64;
        let se = (var / terminal.len() as f64).sqrt();
        assert!(
            (mean - 3000.0).abs() <= 3.0 * se,
            "mean {mean} se {se} violates the martingale check"
        );
    }

    #[test]
    fn identical_seeds_are_bit_identical_across_thread_counts() {
        let kernel = build_kernel_approx(0.6, 10, 1.0).unwrap();
        let params = example_params();
        let state = ModelState::new(0.0, 3000.0, example_z0()).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                simulate_paths(&params, &kernel, &state, 0.01, 1.0 / 2520.0, 32, 42).unwrap()
            })
        };
        assert_eq!(run(1), run(4));
    }
}
