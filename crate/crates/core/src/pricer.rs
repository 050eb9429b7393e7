//! Monte-Carlo pricing of SPX derivatives from a model state, hedge-ratio
//! estimation and discrete-hedging P&L.
//!
//! Zero interest and dividend rates throughout; the pricing representations
//! carry no discounting. VIX-style instruments are priced by nesting: outer
//! paths to expiry, then an inner integrated-variance estimate per outer
//! terminal state. The hedge ratio aggregates the spot partial and all factor
//! partials,
//!
//! ```text
//! δ = ∂P/∂S + (η/S) Σ_i ∂P/∂Z^i,
//! ```
//!
//! each estimated by central finite differences under common random numbers.
//! Every pricing call is a pure function of `(inputs, seed)`.

use crate::kernel::FractionalKernelApprox;
use crate::model::{ModelState, QrhParams};
use crate::rng::{substream, StreamDomain};
use crate::simulate::{PathStepper, SimulatedPath};
use rayon::prelude::*;
use thiserror::Error;

/// The 30-day VIX window Δ, in years.
pub const VIX_WINDOW_YEARS: f64 = 30.0 / 365.0;

#[derive(Debug, Error, PartialEq)]
pub enum PriceError {
    #[error("instrument kind {0:?} requires a positive strike")]
    MissingStrike(InstrumentKind),
    #[error("instrument kind {0:?} takes no strike")]
    UnexpectedStrike(InstrumentKind),
    #[error("expiry must be positive, got {0}")]
    NonPositiveExpiry(f64),
    #[error("instrument expires at {expiry} but state time is {t}")]
    ExpiryInPast { expiry: f64, t: f64 },
    #[error("mc config: {0}")]
    BadMcConfig(&'static str),
    #[error("vix window must be positive, got {0}")]
    NonPositiveWindow(f64),
    #[error("inner integrated-variance estimate {0} is non-positive; implementation fault")]
    NegativeVarianceEstimate(f64),
    #[error("rebalance step {rebalance_dt} is not a multiple of the path step {path_dt}")]
    RebalanceNotMultiple { rebalance_dt: f64, path_dt: f64 },
    #[error("path is shorter than one rebalance interval")]
    PathTooShort,
    #[error("path reaches {t} at or past the instrument expiry {expiry}")]
    PathOutlivesInstrument { t: f64, expiry: f64 },
    #[error(transparent)]
    Sim(#[from] crate::simulate::SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstrumentKind {
    Underlying,
    VixFuture,
    SpxCall,
    SpxPut,
    VixCall,
    VixPut,
}

impl InstrumentKind {
    pub fn needs_strike(self) -> bool {
        matches!(
            self,
            InstrumentKind::SpxCall
                | InstrumentKind::SpxPut
                | InstrumentKind::VixCall
                | InstrumentKind::VixPut
        )
    }
}

/// A tradeable instrument: the underlying itself, a VIX future, or an
/// SPX/VIX vanilla with expiry `T` (years) and strike `K` ($).
#[derive(Debug, Clone, PartialEq)]
pub struct Instrument {
    pub kind: InstrumentKind,
    pub expiry: f64,
    pub strike: Option<f64>,
}

impl Instrument {
    pub fn new(kind: InstrumentKind, expiry: f64, strike: Option<f64>) -> Result<Self, PriceError> {
        if kind != InstrumentKind::Underlying && !(expiry > 0.0) {
            return Err(PriceError::NonPositiveExpiry(expiry));
        }
        match (kind.needs_strike(), strike) {
            (true, Some(k)) if k > 0.0 => {}
            (true, _) => return Err(PriceError::MissingStrike(kind)),
            (false, Some(_)) => return Err(PriceError::UnexpectedStrike(kind)),
            (false, None) => {}
        }
        Ok(Instrument {
            kind,
            expiry,
            strike,
        })
    }

    pub fn underlying() -> Self {
        Instrument {
            kind: InstrumentKind::Underlying,
            expiry: 0.0,
            strike: None,
        }
    }
}

/// VIX quoting convention: `Annualized` divides the expected integrated
/// variance by the window Δ before taking the square root (market
/// convention, the default); `Unscaled` does not.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VixConvention {
    Annualized,
    Unscaled,
}

/// Monte-Carlo configuration: outer/inner path counts, target time step,
/// finite-difference bump sizes and the master seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McConfig {
    pub n_outer: usize,
    /// Inner paths per outer terminal state for VIX nesting.
    pub n_inner: usize,
    /// Target simulation step (years); each leg is subdivided uniformly.
    pub dt: f64,
    /// Relative bump applied to S.
    pub bump_rel: f64,
    /// Absolute bump applied to each factor Z^i.
    pub bump_abs: f64,
    pub seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<(), PriceError> {
        if self.n_outer == 0 || self.n_inner == 0 {
            return Err(PriceError::BadMcConfig("path counts must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(PriceError::BadMcConfig("dt must be positive"));
        }
        if !(self.bump_rel > 0.0) || !(self.bump_abs > 0.0) {
            return Err(PriceError::BadMcConfig("bumps must be positive"));
        }
        Ok(())
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl PriceEstimate {
    fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var =
                samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n as f64 - 1.0);
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        PriceEstimate {
            value: mean,
            std_error,
            n_samples: n,
        }
    }
}

/// Hedge-ratio estimate; the standard error is the across-path dispersion of
/// the pathwise common-random-number difference quotients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaEstimate {
    pub value: f64,
    pub std_error: f64,
}

fn leg_steps(span: f64, target_dt: f64) -> (usize, f64) {
    let steps = (span / target_dt).ceil().max(1.0) as usize;
    (steps, span / steps as f64)
}

/// Integrated variance of one inner path (trapezoidal rule on the factor
/// dynamics; the spot is never touched, so the result is invariant under a
/// rescaling of S with Z fixed).
fn integrated_variance_one_path(
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    z0: &[f64],
    window: f64,
    target_dt: f64,
    master: u64,
    inner_index: u64,
) -> f64 {
    let (steps, dt) = leg_steps(window, target_dt);
    let sqrt_dt = dt.sqrt();
    let mut rng = substream(master, StreamDomain::Inner, inner_index);
    let mut z = z0.to_vec();
    let mut integral = 0.0;
    let mut v_prev = {
        let zbar = kernel.recombine(&z);
        params.a * (zbar - params.b) * (zbar - params.b) + params.c
    };
    for _ in 0..steps {
        let zbar = kernel.recombine(&z);
        let xi: f64 = rand::Rng::sample(&mut rng, rand_distr::StandardNormal);
        let shock = params.eta * v_prev.sqrt() * sqrt_dt * xi;
        for (zi, gamma) in z.iter_mut().zip(kernel.rates()) {
            *zi += (-gamma * *zi - params.lambda * zbar) * dt + shock;
        }
        let zbar_next = kernel.recombine(&z);
        let v_next = params.a * (zbar_next - params.b) * (zbar_next - params.b) + params.c;
        integral += 0.5 * (v_prev + v_next) * dt;
        v_prev = v_next;
    }
    integral
}

/// Estimates `E_t[∫_t^{t+Δ} V_s ds]` from `state` with `mc.n_inner` paths.
pub fn forward_integrated_variance(
    state: &ModelState,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    window: f64,
    mc: &McConfig,
) -> Result<PriceEstimate, PriceError> {
    mc.validate()?;
    if !(window > 0.0) {
        return Err(PriceError::NonPositiveWindow(window));
    }
    let samples: Vec<f64> = (0..mc.n_inner as u64)
        .into_par_iter()
        .map(|j| integrated_variance_one_path(params, kernel, &state.z, window, mc.dt, mc.seed, j))
        .collect();
    Ok(PriceEstimate::from_samples(&samples))
}

fn vix_from_integrated(iv: f64, window: f64, convention: VixConvention) -> Result<f64, PriceError> {
    if iv <= 0.0 {
        return Err(PriceError::NegativeVarianceEstimate(iv));
    }
    let scaled = match convention {
        VixConvention::Annualized => iv / window,
        VixConvention::Unscaled => iv,
    };
    Ok(100.0 * scaled.sqrt())
}

/// Spot VIX level at `state`: `100·√((1/Δ)·E[∫V])` under the annualized
/// convention, `100·√(E[∫V])` under the unscaled one.
pub fn vix(
    state: &ModelState,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    window: f64,
    mc: &McConfig,
    convention: VixConvention,
) -> Result<PriceEstimate, PriceError> {
    let iv = forward_integrated_variance(state, params, kernel, window, mc)?;
    let value = vix_from_integrated(iv.value, window, convention)?;
    // Delta method: d(100√(s·x))/dx = 100·s / (2√(s·x)).
    let scale = match convention {
        VixConvention::Annualized => 1.0 / window,
        VixConvention::Unscaled => 1.0,
    };
    let std_error = iv.std_error * 100.0 * scale / (2.0 * (scale * iv.value).sqrt());
    Ok(PriceEstimate {
        value,
        std_error,
        n_samples: iv.n_samples,
    })
}

/// One Monte-Carlo sample per outer path of the instrument's terminal value.
/// All streams derive from `mc.seed`, so two calls with bumped initial states
/// share their random numbers.
fn mc_samples(
    instrument: &Instrument,
    state: &ModelState,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    mc: &McConfig,
    convention: VixConvention,
) -> Result<Vec<f64>, PriceError> {
    if instrument.kind == InstrumentKind::Underlying {
        return Ok(vec![state.s]);
    }
    if instrument.expiry <= state.t {
        return Err(PriceError::ExpiryInPast {
            expiry: instrument.expiry,
            t: state.t,
        });
    }
    let (steps, dt) = leg_steps(instrument.expiry - state.t, mc.dt);
    let strike = instrument.strike.unwrap_or(0.0);
    let kind = instrument.kind;
    let n_inner = mc.n_inner as u64;

    (0..mc.n_outer as u64)
        .into_par_iter()
        .map(|i| {
            let rng = substream(mc.seed, StreamDomain::Path, i);
            let mut stepper = PathStepper::new(params, kernel, state.clone(), dt, rng)?;
            for _ in 0..steps {
                stepper.step();
            }
            let terminal = &stepper.state;
            let sample = match kind {
                InstrumentKind::Underlying => unreachable!(),
                InstrumentKind::SpxCall => (terminal.s - strike).max(0.0),
                InstrumentKind::SpxPut => (strike - terminal.s).max(0.0),
                InstrumentKind::VixFuture | InstrumentKind::VixCall | InstrumentKind::VixPut => {
                    // Inner expectation per outer terminal state; the inner
                    // loop runs inside the owning outer task.
                    let mut acc = 0.0;
                    for j in 0..n_inner {
                        acc += integrated_variance_one_path(
                            params,
                            kernel,
                            &terminal.z,
                            VIX_WINDOW_YEARS,
                            mc.dt,
                            mc.seed,
                            i * n_inner + j,
                        );
                    }
                    let vix_t =
                        vix_from_integrated(acc / n_inner as f64, VIX_WINDOW_YEARS, convention)?;
                    match kind {
                        InstrumentKind::VixFuture => vix_t,
                        InstrumentKind::VixCall => (vix_t - strike).max(0.0),
                        _ => (strike - vix_t).max(0.0),
                    }
                }
            };
            Ok(sample)
        })
        .collect()
}

/// Risk-neutral Monte-Carlo price of `instrument` seen from `state`, with the
/// annualized VIX convention.
pub fn price(
    instrument: &Instrument,
    state: &ModelState,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    mc: &McConfig,
) -> Result<PriceEstimate, PriceError> {
    price_with_convention(
        instrument,
        state,
        params,
        kernel,
        mc,
        VixConvention::Annualized,
    )
}

pub fn price_with_convention(
    instrument: &Instrument,
    state: &ModelState,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    mc: &McConfig,
    convention: VixConvention,
) -> Result<PriceEstimate, PriceError> {
    mc.validate()?;
    if instrument.kind == InstrumentKind::Underlying {
        return Ok(PriceEstimate {
            value: state.s,
            std_error: 0.0,
            n_samples: 1,
        });
    }
    let samples = mc_samples(instrument, state, params, kernel, mc, convention)?;
    Ok(PriceEstimate::from_samples(&samples))
}

/// Hedge ratio `δ = ∂P/∂S + (η/S)Σ_i ∂P/∂Z^i` by central finite differences
/// with common random numbers. For the underlying the identity `δ ≡ 1` is
/// returned exactly.
pub fn delta(
    instrument: &Instrument,
    state: &ModelState,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    mc: &McConfig,
) -> Result<DeltaEstimate, PriceError> {
    delta_with_convention(
        instrument,
        state,
        params,
        kernel,
        mc,
        VixConvention::Annualized,
    )
}

pub fn delta_with_convention(
    instrument: &Instrument,
    state: &ModelState,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    mc: &McConfig,
    convention: VixConvention,
) -> Result<DeltaEstimate, PriceError> {
    mc.validate()?;
    if instrument.kind == InstrumentKind::Underlying {
        return Ok(DeltaEstimate {
            value: 1.0,
            std_error: 0.0,
        });
    }
    let run = |st: ModelState| mc_samples(instrument, &st, params, kernel, mc, convention);

    let ds = state.s * mc.bump_rel;
    let mut s_up = state.clone();
    s_up.s += ds;
    let mut s_dn = state.clone();
    s_dn.s -= ds;
    let up = run(s_up)?;
    let dn = run(s_dn)?;
    let mut pathwise: Vec<f64> = up
        .iter()
        .zip(&dn)
        .map(|(u, d)| (u - d) / (2.0 * ds))
        .collect();

    let factor_scale = params.eta / state.s;
    for i in 0..kernel.n() {
        let mut z_up = state.clone();
        z_up.z[i] += mc.bump_abs;
        let mut z_dn = state.clone();
        z_dn.z[i] -= mc.bump_abs;
        let up = run(z_up)?;
        let dn = run(z_dn)?;
        for (acc, (u, d)) in pathwise.iter_mut().zip(up.iter().zip(&dn)) {
            *acc += factor_scale * (u - d) / (2.0 * mc.bump_abs);
        }
    }

    let est = PriceEstimate::from_samples(&pathwise);
    Ok(DeltaEstimate {
        value: est.value,
        std_error: est.std_error,
    })
}

/// Cumulative discrete-hedging profit `Jδ` and price evolution `Jᴾ` along a
/// simulated path, both evaluated at the rebalance nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeReport {
    /// Rebalance times (years).
    pub times: Vec<f64>,
    /// `Jδ`: cumulative profit of the discretely rebalanced hedge.
    pub hedge_pnl: Vec<f64>,
    /// `Jᴾ`: price change of the instrument since inception.
    pub price_pnl: Vec<f64>,
    /// `Jδ − Jᴾ` at the final node.
    pub terminal_error: f64,
    /// Largest `|Jδ − Jᴾ|` over the grid.
    pub max_abs_error: f64,
}

fn schedule_seed(base: u64, node: u64) -> u64 {
    base ^ (node + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Rebalances the hedge every `rebalance_dt` years along `path`, recomputing
/// the hedge ratio and the instrument price at each node by Monte Carlo.
pub fn hedging_pnl(
    path: &SimulatedPath,
    instrument: &Instrument,
    params: &QrhParams,
    kernel: &FractionalKernelApprox,
    rebalance_dt: f64,
    mc: &McConfig,
) -> Result<HedgeReport, PriceError> {
    mc.validate()?;
    let stride = (rebalance_dt / path.dt).round();
    if stride < 1.0 || (stride * path.dt - rebalance_dt).abs() > 1e-9 * rebalance_dt {
        return Err(PriceError::RebalanceNotMultiple {
            rebalance_dt,
            path_dt: path.dt,
        });
    }
    let stride = stride as usize;
    if path.states.len() <= stride {
        return Err(PriceError::PathTooShort);
    }
    let node_indices: Vec<usize> = (0..path.states.len()).step_by(stride).collect();
    if instrument.kind != InstrumentKind::Underlying {
        let last_t = path.states[*node_indices.last().unwrap()].t;
        if last_t >= instrument.expiry {
            return Err(PriceError::PathOutlivesInstrument {
                t: last_t,
                expiry: instrument.expiry,
            });
        }
    }

    let nodes: Vec<(f64, f64, f64)> = node_indices
        .par_iter()
        .enumerate()
        .map(|(r, &idx)| {
            let st = &path.states[idx];
            let mc_node = McConfig {
                seed: schedule_seed(mc.seed, r as u64),
                ..*mc
            };
            let d = delta(instrument, st, params, kernel, &mc_node)?;
            let p = price(instrument, st, params, kernel, &mc_node)?;
            Ok((st.s, d.value, p.value))
        })
        .collect::<Result<_, PriceError>>()?;

    let mut times = Vec::with_capacity(nodes.len());
    let mut hedge_pnl = Vec::with_capacity(nodes.len());
    let mut price_pnl = Vec::with_capacity(nodes.len());
    let p0 = nodes[0].2;
    let mut jd = 0.0;
    for (r, &idx) in node_indices.iter().enumerate() {
        if r > 0 {
            let (s_prev, d_prev, _) = nodes[r - 1];
            jd += d_prev * (nodes[r].0 - s_prev);
        }
        times.push(path.states[idx].t);
        hedge_pnl.push(jd);
        price_pnl.push(nodes[r].2 - p0);
    }
    let mut max_abs_error: f64 = 0.0;
    for (a, b) in hedge_pnl.iter().zip(&price_pnl) {
        max_abs_error = max_abs_error.max((a - b).abs());
    }
    Ok(HedgeReport {
        terminal_error: hedge_pnl.last().unwrap() - price_pnl.last().unwrap(),
        times,
        hedge_pnl,
        price_pnl,
        max_abs_error,
    })
}
