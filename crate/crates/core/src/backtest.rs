//! Event-level simulation of market-making strategies against QRH price
//! paths with Poisson executions, P&L accounting and mean-risk frontier
//! sweeps.
//!
//! Executions are discretized per step: a quoted side with admissible
//! post-fill inventory fills with probability `1 − e^{−Λ dt}` (exact thinning
//! of a constant-intensity point process over one step), at most one fill per
//! (asset, side) per step. A fill credits half the spread and moves the
//! inventory by one order size; between steps the portfolio is marked with
//! the model-consistent linear approximation `P^j_t = P^j_0 + δ^j (S_t − S_0)`
//! so the inventory P&L accrues as `q^j δ^j ΔS`.
//!
//! Common-random-number discipline: episode `i` always consumes the price
//! substream `(seed, Path, i)` and the fill substream `(seed, Fill, i)`, and
//! fill uniforms are drawn for every (step, asset, side) whether or not a
//! quote is live, so two strategies evaluated at the same seed face identical
//! randomness. Episodes are pure functions of `(inputs, seed, episode)`,
//! independent of the degree of parallelism.

use crate::hjb::{
    solve_full, HamiltonianKind, HjbError, PortfolioSpec, Side, ValueFunctionGrid, SIDES,
};
use crate::kernel::FractionalKernelApprox;
use crate::model::{ModelState, QrhParams};
use crate::pricer::{delta, Instrument, McConfig, PriceError};
use crate::quad::{asymptotic_solution, greedy_decision, AsymptoticSolution, QuadError,
    QuadraticHamiltonianSpec};
use crate::rng::{substream, StreamDomain};
use crate::simulate::{PathStepper, SimulatedPath};
use crate::SECONDS_PER_YEAR;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("strategy expects {expected} assets, portfolio has {got}")]
    AssetCountMismatch { got: usize, expected: usize },
    #[error("inventory {0:?} is not on the strategy's lattice")]
    OffLattice(Vec<f64>),
    #[error("backtest horizon {horizon} exceeds the grid horizon {grid}")]
    HorizonExceedsGrid { horizon: f64, grid: f64 },
    #[error("kappa grid must be non-empty")]
    EmptyKappaGrid,
    #[error("path count must be positive")]
    ZeroPaths,
    #[error("engine step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("recalibration period must be positive, got {0}")]
    NonPositivePeriod(f64),
    #[error("online strategy needs one instrument per asset")]
    InstrumentCountMismatch,
    #[error(transparent)]
    Hjb(#[from] HjbError),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Price(#[from] PriceError),
    #[error(transparent)]
    Sim(#[from] crate::simulate::SimError),
}

/// Model inputs shared by every episode of a backtest.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub params: QrhParams,
    pub kernel: FractionalKernelApprox,
    pub state0: ModelState,
}

/// Strategy families compared by the frontier sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    /// Finite-horizon optimal controls looked up from the lattice solve.
    GridOptimal,
    /// Greedy decisions from the stationary closed form.
    Greedy,
    /// Independent single-asset optimal strategies, P&L summed.
    UniAsset,
    /// Greedy with the hedge ratios and σ refreshed along the path.
    Online,
    NeverQuote,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::GridOptimal => "grid",
            StrategyKind::Greedy => "greedy",
            StrategyKind::UniAsset => "uni",
            StrategyKind::Online => "online",
            StrategyKind::NeverQuote => "never",
        }
    }
}

/// Online recalibration inputs: every `period_secs` of simulated time the
/// hedge ratios are recomputed from the running model state, σ is refreshed
/// as `S_t √V_t`, and the closed form is rebuilt.
#[derive(Debug, Clone)]
pub struct RecalConfig {
    pub period_secs: f64,
    pub mc: McConfig,
    pub instruments: Vec<Instrument>,
}

/// Per-episode decision state of the online strategy.
#[derive(Debug, Clone)]
struct OnlineState {
    spec: PortfolioSpec,
    qspec: QuadraticHamiltonianSpec,
    sol: AsymptoticSolution,
    recal: RecalConfig,
    next_update: f64,
    update_index: u64,
    /// Recal log: (time, refreshed deltas); failures keep previous values.
    updates: Vec<(f64, Vec<f64>)>,
    failures: usize,
}

impl OnlineState {
    fn maybe_recalibrate(&mut self, t: f64, state: &ModelState, model: &ModelBundle) {
        while t >= self.next_update - 1e-9 {
            let mut deltas = Vec::with_capacity(self.spec.assets.len());
            let mut failed = false;
            for (j, instr) in self.recal.instruments.iter().enumerate() {
                let mc = McConfig {
                    seed: self.recal.mc.seed
                        ^ (self.update_index * 131 + j as u64 + 1)
                            .wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    ..self.recal.mc
                };
                match delta(instr, state, &model.params, &model.kernel, &mc) {
                    Ok(est) => deltas.push(est.value),
                    Err(_) => {
                        failed = true;
                        deltas.push(self.spec.assets[j].delta);
                    }
                }
            }
            if failed {
                self.failures += 1;
            }
            let variance = state
                .variance(&model.params, &model.kernel)
                .unwrap_or(model.params.c);
            self.spec.sigma = state.s * variance.sqrt();
            for (asset, d) in self.spec.assets.iter_mut().zip(&deltas) {
                asset.delta = *d;
            }
            if let Ok(sol) = asymptotic_solution(&self.spec, &self.qspec) {
                self.sol = sol;
            } else {
                self.failures += 1;
            }
            self.updates.push((self.next_update, deltas));
            self.update_index += 1;
            self.next_update += self.recal.period_secs;
        }
    }
}

/// A decision rule mapping `(t, inventory, running state)` to per-(asset,
/// side) quote indicators. Cheap to clone per episode: grids are shared.
#[derive(Debug, Clone)]
pub enum Strategy {
    NeverQuote { d: usize },
    GridOptimal {
        grid: Arc<ValueFunctionGrid>,
        /// Look decisions up at this fixed time instead of the running time.
        frozen_at: Option<f64>,
    },
    Greedy {
        sol: AsymptoticSolution,
        spec: PortfolioSpec,
    },
    UniAsset { grids: Vec<Arc<ValueFunctionGrid>> },
    Online(Box<OnlineStrategyHandle>),
}

/// Online strategy bundle; the model is shared, the adaptive state is cloned
/// fresh for every episode.
#[derive(Debug, Clone)]
pub struct OnlineStrategyHandle {
    model: Arc<ModelBundle>,
    state: OnlineState,
}

impl OnlineStrategyHandle {
    /// Recalibration log of this episode clone: (time, deltas).
    pub fn updates(&self) -> &[(f64, Vec<f64>)] {
        &self.state.updates
    }

    pub fn failures(&self) -> usize {
        self.state.failures
    }
}

impl Strategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::NeverQuote { .. } => StrategyKind::NeverQuote,
            Strategy::GridOptimal { .. } => StrategyKind::GridOptimal,
            Strategy::Greedy { .. } => StrategyKind::Greedy,
            Strategy::UniAsset { .. } => StrategyKind::UniAsset,
            Strategy::Online { .. } => StrategyKind::Online,
        }
    }

    fn d(&self) -> usize {
        match self {
            Strategy::NeverQuote { d } => *d,
            Strategy::GridOptimal { grid, .. } => grid.spec.d(),
            Strategy::Greedy { spec, .. } => spec.d(),
            Strategy::UniAsset { grids } => grids.len(),
            Strategy::Online(h) => h.state.spec.d(),
        }
    }

    /// Quote indicators at `(t, q, state)`, written into `out[2j + side]`.
    fn decide(
        &mut self,
        t: f64,
        q: &[f64],
        state: &ModelState,
        out: &mut [bool],
    ) -> Result<(), BacktestError> {
        match self {
            Strategy::NeverQuote { .. } => out.fill(false),
            Strategy::GridOptimal { grid, frozen_at } => {
                let lookup_t = frozen_at.unwrap_or(t);
                let v = grid.nearest_slice(lookup_t);
                let node = grid
                    .lattice
                    .index_of(q)
                    .ok_or_else(|| BacktestError::OffLattice(q.to_vec()))?;
                for (j, asset) in grid.spec.assets.iter().enumerate() {
                    for side in SIDES {
                        out[2 * j + side.index()] = match grid.lattice.neighbor(node, j, side) {
                            Some(nb) => (v[node] - v[nb]) / asset.order_size <= 0.5 * asset.tick,
                            None => false,
                        };
                    }
                }
            }
            Strategy::Greedy { sol, spec } => {
                for j in 0..spec.d() {
                    for side in SIDES {
                        out[2 * j + side.index()] = greedy_decision(q, j, side, sol, spec);
                    }
                }
            }
            Strategy::UniAsset { grids } => {
                for (j, grid) in grids.iter().enumerate() {
                    let v = grid.nearest_slice(t);
                    let node = grid
                        .lattice
                        .index_of(&q[j..j + 1])
                        .ok_or_else(|| BacktestError::OffLattice(q.to_vec()))?;
                    let asset = &grid.spec.assets[0];
                    for side in SIDES {
                        out[2 * j + side.index()] = match grid.lattice.neighbor(node, 0, side) {
                            Some(nb) => (v[node] - v[nb]) / asset.order_size <= 0.5 * asset.tick,
                            None => false,
                        };
                    }
                }
            }
            Strategy::Online(handle) => {
                let handle = &mut **handle;
                let model = handle.model.clone();
                handle.state.maybe_recalibrate(t, state, &model);
                let spec = &handle.state.spec;
                for j in 0..spec.d() {
                    for side in SIDES {
                        out[2 * j + side.index()] =
                            greedy_decision(q, j, side, &handle.state.sol, spec);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Composes independent single-asset grid-optimal strategies (no cross
/// penalty); the engine sums their P&L in one episode.
pub fn uniasset_benchmark(spec: &PortfolioSpec, steps: usize) -> Result<Strategy, BacktestError> {
    spec.validate()?;
    let mut grids = Vec::with_capacity(spec.d());
    for asset in &spec.assets {
        let single = PortfolioSpec {
            assets: vec![asset.clone()],
            cross_kappa: 0.0,
            sigma: spec.sigma,
            mu: spec.mu,
            horizon: spec.horizon,
        };
        grids.push(Arc::new(solve_full(&single, steps, &HamiltonianKind::Exact)?));
    }
    Ok(Strategy::UniAsset { grids })
}

/// Greedy strategy whose hedge ratios and σ are refreshed every
/// `recal.period_secs` seconds from the running model state via the pricer.
pub fn online_recalibration(
    spec: &PortfolioSpec,
    qspec: &QuadraticHamiltonianSpec,
    model: Arc<ModelBundle>,
    recal: RecalConfig,
) -> Result<Strategy, BacktestError> {
    if !(recal.period_secs > 0.0) {
        return Err(BacktestError::NonPositivePeriod(recal.period_secs));
    }
    if recal.instruments.len() != spec.d() {
        return Err(BacktestError::InstrumentCountMismatch);
    }
    let sol = asymptotic_solution(spec, qspec)?;
    Ok(Strategy::Online(Box::new(OnlineStrategyHandle {
        model,
        state: OnlineState {
            spec: spec.clone(),
            qspec: qspec.clone(),
            sol,
            next_update: recal.period_secs,
            recal,
            update_index: 0,
            updates: Vec::new(),
            failures: 0,
        },
    })))
}

/// Outcome of one episode. The accounting identity
/// `Π_t = Y_t + Σ_j P^j_t q^j_t` is tracked at every step;
/// `accounting_gap` is the largest deviation between the incremental and the
/// mark-to-market P&L.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    /// Terminal P&L `Π_T − Π_0` ($).
    pub pnl: f64,
    /// Per-step inventory trajectory (post-fill), one vector per asset.
    pub inventories: Vec<Vec<f64>>,
    /// Cash trajectory `Y_t`.
    pub cash: Vec<f64>,
    /// Fill counts per asset, `[bid, ask]`.
    pub fills: Vec<[u64; 2]>,
    pub accounting_gap: f64,
    /// Terminal inventory per asset.
    pub terminal_inventory: Vec<f64>,
}

struct EngineOutcome {
    pnl: f64,
    accounting_gap: f64,
    fills: Vec<[u64; 2]>,
    terminal_inventory: Vec<f64>,
    inventories: Vec<Vec<f64>>,
    cash: Vec<f64>,
}

/// Core engine: walks the state sequence, drawing one fill uniform per
/// (step, asset, side) from `fill_rng` regardless of the live quotes.
fn run_engine<F>(
    strategy: &mut Strategy,
    spec: &PortfolioSpec,
    dt_secs: f64,
    n_steps: usize,
    mut next_state: F,
    first: ModelState,
    fill_rng: &mut ChaCha8Rng,
    record: bool,
) -> Result<EngineOutcome, BacktestError>
where
    F: FnMut() -> ModelState,
{
    let d = spec.d();
    if strategy.d() != d {
        return Err(BacktestError::AssetCountMismatch {
            got: d,
            expected: strategy.d(),
        });
    }
    let p_fill: Vec<[f64; 2]> = spec
        .assets
        .iter()
        .map(|a| {
            [
                1.0 - (-a.intensity_bid * dt_secs).exp(),
                1.0 - (-a.intensity_ask * dt_secs).exp(),
            ]
        })
        .collect();
    let half_steps: Vec<Option<i64>> = spec
        .assets
        .iter()
        .map(|a| a.max_inventory.map(|q| (q / a.order_size).round() as i64))
        .collect();
    let s0 = first.s;

    let mut q_idx = vec![0i64; d];
    let mut cash = 0.0f64;
    let mut pnl_incr = 0.0f64;
    let mut fills = vec![[0u64; 2]; d];
    let mut decisions = vec![false; 2 * d];
    let mut accounting_gap = 0.0f64;
    let mut inventories: Vec<Vec<f64>> = vec![Vec::new(); if record { d } else { 0 }];
    let mut cash_track = Vec::new();

    let mut state = first;
    for k in 0..n_steps {
        let t = k as f64 * dt_secs;
        strategy.decide(t, &inventory_of(&q_idx, spec), &state, &mut decisions)?;
        let s_now = state.s;
        for (j, asset) in spec.assets.iter().enumerate() {
            let mark = asset.delta * (s_now - s0); // P^j_t with P^j_0 = 0
            for side in SIDES {
                let u: f64 = fill_rng.random();
                if !decisions[2 * j + side.index()] {
                    continue;
                }
                let dir = if side == Side::Bid { 1 } else { -1 };
                if let Some(half) = half_steps[j] {
                    if (q_idx[j] + dir).abs() > half {
                        continue;
                    }
                }
                if u < p_fill[j][side.index()] {
                    q_idx[j] += dir;
                    fills[j][side.index()] += 1;
                    let traded = dir as f64 * asset.order_size;
                    cash += 0.5 * asset.tick * asset.order_size - mark * traded;
                    pnl_incr += 0.5 * asset.tick * asset.order_size;
                }
            }
        }
        // Advance the price and accrue the inventory P&L on the move.
        let prev_s = state.s;
        state = next_state();
        let ds = state.s - prev_s;
        let mut risk = 0.0;
        for (j, asset) in spec.assets.iter().enumerate() {
            risk += q_idx[j] as f64 * asset.order_size * asset.delta;
        }
        pnl_incr += risk * ds;

        // Mark-to-market check of the identity Π = Y + Σ P q.
        let mut mark_value = 0.0;
        for (j, asset) in spec.assets.iter().enumerate() {
            mark_value +=
                asset.delta * (state.s - s0) * q_idx[j] as f64 * asset.order_size;
        }
        accounting_gap = accounting_gap.max((cash + mark_value - pnl_incr).abs());
        if record {
            for (j, asset) in spec.assets.iter().enumerate() {
                inventories[j].push(q_idx[j] as f64 * asset.order_size);
            }
            cash_track.push(cash);
        }
    }

    let mut mark_value = 0.0;
    for (j, asset) in spec.assets.iter().enumerate() {
        mark_value += asset.delta * (state.s - s0) * q_idx[j] as f64 * asset.order_size;
    }
    Ok(EngineOutcome {
        pnl: cash + mark_value,
        accounting_gap,
        fills,
        terminal_inventory: spec
            .assets
            .iter()
            .zip(&q_idx)
            .map(|(a, &i)| i as f64 * a.order_size)
            .collect(),
        inventories,
        cash: cash_track,
    })
}

fn inventory_of(q_idx: &[i64], spec: &PortfolioSpec) -> Vec<f64> {
    q_idx
        .iter()
        .zip(&spec.assets)
        .map(|(&i, a)| i as f64 * a.order_size)
        .collect()
}

/// Runs `strategy` against a pre-simulated path; the engine step is the path
/// step. Initial inventory and cash are zero.
pub fn simulate_episode(
    strategy: &Strategy,
    path: &SimulatedPath,
    spec: &PortfolioSpec,
    fill_seed: u64,
    episode: u64,
) -> Result<EpisodeResult, BacktestError> {
    spec.validate()?;
    let dt_secs = path.dt * SECONDS_PER_YEAR;
    let mut fill_rng = substream(fill_seed, StreamDomain::Fill, episode);
    let mut iter = path.states.iter().cloned();
    let first = iter.next().expect("path has at least one state");
    let mut strat = strategy.clone();
    let out = run_engine(
        &mut strat,
        spec,
        dt_secs,
        path.states.len() - 1,
        move || iter.next().expect("engine consumes exactly n_steps states"),
        first,
        &mut fill_rng,
        true,
    )?;
    Ok(EpisodeResult {
        pnl: out.pnl,
        inventories: out.inventories,
        cash: out.cash,
        fills: out.fills,
        accounting_gap: out.accounting_gap,
        terminal_inventory: out.terminal_inventory,
    })
}

/// Streams a fresh path for episode `i` and runs the strategy on it; used by
/// the sweeps so no trajectories are retained.
fn run_episode_streaming(
    strategy: &Strategy,
    model: &ModelBundle,
    spec: &PortfolioSpec,
    horizon_secs: f64,
    dt_secs: f64,
    seed: u64,
    episode: u64,
) -> Result<(f64, f64), BacktestError> {
    let dt_years = dt_secs / SECONDS_PER_YEAR;
    let n_steps = (horizon_secs / dt_secs).round().max(1.0) as usize;
    let rng = substream(seed, StreamDomain::Path, episode);
    let mut stepper = PathStepper::new(
        &model.params,
        &model.kernel,
        model.state0.clone(),
        dt_years,
        rng,
    )?;
    let mut fill_rng = substream(seed, StreamDomain::Fill, episode);
    let first = stepper.state.clone();
    let mut strat = strategy.clone();
    let out = run_engine(
        &mut strat,
        spec,
        dt_secs,
        n_steps,
        move || {
            stepper.step();
            stepper.state.clone()
        },
        first,
        &mut fill_rng,
        false,
    )?;
    Ok((out.pnl, out.accounting_gap))
}

/// One `(κ, strategy)` row of a frontier report.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierRow {
    pub kappa: f64,
    pub strategy: &'static str,
    pub mean: f64,
    pub std: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

/// Mean-risk frontier over a κ grid; rows are grouped by κ in grid order.
/// When the sweep keeps episode-level results, `episode_pnls[i]` holds the
/// per-episode P&Ls behind `rows[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierReport {
    pub rows: Vec<FrontierRow>,
    pub episode_pnls: Vec<Vec<f64>>,
    pub horizon_secs: f64,
    pub seed: u64,
}

/// Sweep configuration. Strategies are rebuilt per κ with
/// `κ_j = kappa_split · κ` (the uni-asset benchmark keeps the per-asset
/// penalty but zeroes the cross term).
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub kappa_grid: Vec<f64>,
    pub kappa_split: f64,
    pub n_paths: usize,
    /// Backtest horizon T_b (seconds); must not exceed the grid horizon T.
    pub horizon_secs: f64,
    pub engine_dt_secs: f64,
    pub seed: u64,
    pub strategies: Vec<StrategyKind>,
    /// Grid strategy looks controls up at t = 0 instead of the running time.
    pub frozen_controls: bool,
    /// Override for the lattice solver step count (default per spec).
    pub grid_steps: Option<usize>,
    /// Needed when `strategies` contains `Online`.
    pub recal: Option<RecalConfig>,
    /// Retain per-episode P&Ls in the report.
    pub keep_episodes: bool,
}

/// Compensated (Kahan) sum; episode results are reduced in index order so
/// the aggregate is independent of scheduling.
fn kahan_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in values {
        let y = x - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

fn mean_std_stderr(pnls: &[f64]) -> (f64, f64, f64) {
    let n = pnls.len() as f64;
    let mean = kahan_sum(pnls) / n;
    if pnls.len() < 2 {
        return (mean, 0.0, 0.0);
    }
    let sq: Vec<f64> = pnls.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = kahan_sum(&sq) / (n - 1.0);
    let std = var.sqrt();
    (mean, std, std / n.sqrt())
}

fn build_strategy(
    kind: StrategyKind,
    spec: &PortfolioSpec,
    cfg: &SweepConfig,
    model: &Arc<ModelBundle>,
) -> Result<Strategy, BacktestError> {
    match kind {
        StrategyKind::NeverQuote => Ok(Strategy::NeverQuote { d: spec.d() }),
        StrategyKind::GridOptimal => {
            let steps = cfg.grid_steps.unwrap_or_else(|| spec.default_steps());
            let grid = solve_full(spec, steps, &HamiltonianKind::Exact)?;
            Ok(Strategy::GridOptimal {
                grid: Arc::new(grid),
                frozen_at: cfg.frozen_controls.then_some(0.0),
            })
        }
        StrategyKind::Greedy => {
            let qspec = QuadraticHamiltonianSpec::default_for(spec);
            let sol = asymptotic_solution(spec, &qspec)?;
            Ok(Strategy::Greedy {
                sol,
                spec: spec.clone(),
            })
        }
        StrategyKind::UniAsset => {
            let steps = cfg.grid_steps.unwrap_or_else(|| spec.default_steps());
            let mut uni_spec = spec.clone();
            uni_spec.cross_kappa = 0.0;
            uniasset_benchmark(&uni_spec, steps)
        }
        StrategyKind::Online => {
            let recal = cfg
                .recal
                .clone()
                .ok_or(BacktestError::NonPositivePeriod(0.0))?;
            let qspec = QuadraticHamiltonianSpec::default_for(spec);
            online_recalibration(spec, &qspec, model.clone(), recal)
        }
    }
}

/// Sweeps the κ grid, rebuilding each strategy per κ and evaluating all of
/// them on shared price paths and fill uniforms.
pub fn sweep_frontier(
    model: &ModelBundle,
    template: &PortfolioSpec,
    cfg: &SweepConfig,
) -> Result<FrontierReport, BacktestError> {
    template.validate()?;
    if cfg.kappa_grid.is_empty() {
        return Err(BacktestError::EmptyKappaGrid);
    }
    if cfg.n_paths == 0 {
        return Err(BacktestError::ZeroPaths);
    }
    if !(cfg.engine_dt_secs > 0.0) {
        return Err(BacktestError::NonPositiveStep(cfg.engine_dt_secs));
    }
    let needs_grid = cfg
        .strategies
        .iter()
        .any(|s| matches!(s, StrategyKind::GridOptimal | StrategyKind::UniAsset));
    if needs_grid && cfg.horizon_secs > template.horizon + 1e-9 {
        return Err(BacktestError::HorizonExceedsGrid {
            horizon: cfg.horizon_secs,
            grid: template.horizon,
        });
    }
    let model_arc = Arc::new(model.clone());

    let mut rows = Vec::new();
    let mut episode_pnls = Vec::new();
    for &kappa in &cfg.kappa_grid {
        let mut spec = template.clone();
        spec.cross_kappa = kappa;
        for asset in &mut spec.assets {
            asset.kappa_j = cfg.kappa_split * kappa;
        }
        for &kind in &cfg.strategies {
            let strategy = build_strategy(kind, &spec, cfg, &model_arc)?;
            let pnls: Vec<f64> = (0..cfg.n_paths as u64)
                .into_par_iter()
                .map(|i| {
                    run_episode_streaming(
                        &strategy,
                        model,
                        &spec,
                        cfg.horizon_secs,
                        cfg.engine_dt_secs,
                        cfg.seed,
                        i,
                    )
                    .map(|(pnl, _)| pnl)
                })
                .collect::<Result<_, _>>()?;
            let (mean, std, std_error) = mean_std_stderr(&pnls);
            rows.push(FrontierRow {
                kappa,
                strategy: kind.label(),
                mean,
                std,
                std_error,
                n_paths: cfg.n_paths,
            });
            if cfg.keep_episodes {
                episode_pnls.push(pnls);
            }
        }
    }
    Ok(FrontierReport {
        rows,
        episode_pnls,
        horizon_secs: cfg.horizon_secs,
        seed: cfg.seed,
    })
}

/// Paired episode P&Ls for two strategies under shared randomness; used for
/// the paired-difference frontier comparisons.
pub fn paired_pnls(
    model: &ModelBundle,
    spec: &PortfolioSpec,
    a: &Strategy,
    b: &Strategy,
    n_paths: usize,
    horizon_secs: f64,
    engine_dt_secs: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, BacktestError> {
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let pa =
                run_episode_streaming(a, model, spec, horizon_secs, engine_dt_secs, seed, i)?.0;
            let pb =
                run_episode_streaming(b, model, spec, horizon_secs, engine_dt_secs, seed, i)?.0;
            Ok((pa, pb))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::AssetSpec;
    use crate::kernel::build_kernel_approx;
    use crate::simulate::simulate_paths;

    fn test_model() -> ModelBundle {
        let kernel = build_kernel_approx(0.6, 3, 1.0).unwrap();
        let params = QrhParams {
            lambda: 1.7,
            eta: 1.5,
            a: 0.265,
            b: 0.246,
            c: 0.0001,
            mu: 0.0,
        };
        let state0 = ModelState::new(0.0, 3000.0, vec![0.05, -0.02, 0.01]).unwrap();
        ModelBundle {
            params,
            kernel,
            state0,
        }
    }

    fn small_spec() -> PortfolioSpec {
        PortfolioSpec {
            assets: vec![
                AssetSpec {
                    tick: 0.25,
                    order_size: 1.0,
                    max_inventory: Some(5.0),
                    intensity_bid: 1.0,
                    intensity_ask: 1.0,
                    delta: 1.0,
                    kappa_j: 0.005,
                },
                AssetSpec {
                    tick: 0.05,
                    order_size: 20.0,
                    max_inventory: Some(100.0),
                    intensity_bid: 0.1,
                    intensity_ask: 0.1,
                    delta: -0.028,
                    kappa_j: 0.005,
                },
            ],
            cross_kappa: 0.01,
            sigma: 1272.792,
            mu: 0.0,
            horizon: 20.0,
        }
    }

    fn run_path(model: &ModelBundle, horizon_secs: f64, dt_secs: f64, seed: u64) -> SimulatedPath {
        simulate_paths(
            &model.params,
            &model.kernel,
            &model.state0,
            horizon_secs / SECONDS_PER_YEAR,
            dt_secs / SECONDS_PER_YEAR,
            1,
            seed,
        )
        .unwrap()
        .remove(0)
    }

    #[test]
    fn never_quote_has_exactly_zero_pnl() {
        let model = test_model();
        let spec = small_spec();
        let path = run_path(&model, 20.0, 0.1, 1);
        let strat = Strategy::NeverQuote { d: 2 };
        let res = simulate_episode(&strat, &path, &spec, 1, 0).unwrap();
        assert_eq!(res.pnl, 0.0);
        assert!(res.fills.iter().all(|f| f[0] == 0 && f[1] == 0));
    }

    #[test]
    fn zero_intensity_never_fills() {
        let model = test_model();
        let mut spec = small_spec();
        for a in &mut spec.assets {
            a.intensity_bid = 0.0;
            a.intensity_ask = 0.0;
        }
        let path = run_path(&model, 20.0, 0.1, 2);
        let grid = solve_full(&spec, spec.default_steps(), &HamiltonianKind::Exact).unwrap();
        let strat = Strategy::GridOptimal {
            grid: Arc::new(grid),
            frozen_at: None,
        };
        let res = simulate_episode(&strat, &path, &spec, 2, 0).unwrap();
        assert_eq!(res.pnl, 0.0);
        assert!(res.fills.iter().all(|f| f[0] == 0 && f[1] == 0));
    }

    #[test]
    fn spread_revenue_matches_bernoulli_mean() {
        // Single asset, δ = 0 (no price risk), always quoting: expected P&L
        // per step is 2·(1 − e^{−Λdt})·m·D/2; compare over 10⁴ steps.
        let model = test_model();
        let spec = PortfolioSpec {
            assets: vec![AssetSpec {
                tick: 0.25,
                order_size: 1.0,
                max_inventory: Some(10_000.0),
                intensity_bid: 1.0,
                intensity_ask: 1.0,
                delta: 0.0,
                kappa_j: 0.0,
            }],
            cross_kappa: 0.0,
            sigma: 1272.792,
            mu: 0.0,
            horizon: 1000.0,
        };
        let path = run_path(&model, 1000.0, 0.1, 3);
        // κ = 0 and huge caps: the grid strategy always quotes both sides.
        let grid = solve_full(&spec, 2000, &HamiltonianKind::Exact).unwrap();
        let strat = Strategy::GridOptimal {
            grid: Arc::new(grid),
            frozen_at: None,
        };
        let res = simulate_episode(&strat, &path, &spec, 3, 0).unwrap();
        let n_steps = 10_000.0;
        let p = 1.0 - (-0.1f64).exp();
        let mean_per_step = 2.0 * p * 1.0 * 0.125;
        // Bernoulli sum std error: per step variance 2·p(1−p)·(mD/2)².
        let se = (2.0 * p * (1.0 - p) * 0.125f64.powi(2) * n_steps).sqrt();
        assert!(
            (res.pnl - n_steps * mean_per_step).abs() <= 3.0 * se,
            "pnl {} expected {} ± {}",
            res.pnl,
            n_steps * mean_per_step,
            3.0 * se
        );
    }

    #[test]
    fn accounting_identity_and_caps_hold() {
        let model = test_model();
        let spec = small_spec();
        let path = run_path(&model, 20.0, 0.1, 4);
        let grid = solve_full(&spec, spec.default_steps(), &HamiltonianKind::Exact).unwrap();
        let strat = Strategy::GridOptimal {
            grid: Arc::new(grid),
            frozen_at: None,
        };
        let res = simulate_episode(&strat, &path, &spec, 4, 0).unwrap();
        assert!(res.accounting_gap <= 1e-8);
        for (j, series) in res.inventories.iter().enumerate() {
            let cap = spec.assets[j].max_inventory.unwrap();
            assert!(series.iter().all(|q| q.abs() <= cap));
        }
    }

    #[test]
    fn engine_rejects_dimension_mismatch() {
        let model = test_model();
        let spec = small_spec();
        let path = run_path(&model, 5.0, 0.1, 5);
        let strat = Strategy::NeverQuote { d: 3 };
        assert!(matches!(
            simulate_episode(&strat, &path, &spec, 5, 0),
            Err(BacktestError::AssetCountMismatch { .. })
        ));
    }

    #[test]
    fn frontier_never_quote_rows_are_zero_and_sweep_is_reproducible() {
        let model = test_model();
        let template = small_spec();
        let cfg = SweepConfig {
            kappa_grid: vec![1e-4, 1.0],
            kappa_split: 0.5,
            n_paths: 50,
            horizon_secs: 10.0,
            engine_dt_secs: 0.1,
            seed: 11,
            strategies: vec![StrategyKind::GridOptimal, StrategyKind::NeverQuote],
            frozen_controls: false,
            grid_steps: None,
            recal: None,
            keep_episodes: false,
        };
        let report = sweep_frontier(&model, &template, &cfg).unwrap();
        for row in report.rows.iter().filter(|r| r.strategy == "never") {
            assert_eq!(row.mean, 0.0);
            assert_eq!(row.std, 0.0);
        }
        // Bit-identical rerun, and identical across thread counts.
        let again = sweep_frontier(&model, &template, &cfg).unwrap();
        assert_eq!(report, again);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let serial = pool.install(|| sweep_frontier(&model, &template, &cfg).unwrap());
        assert_eq!(report, serial);
    }

    #[test]
    fn grid_beats_never_quote_within_noise() {
        let model = test_model();
        let template = small_spec();
        let cfg = SweepConfig {
            kappa_grid: vec![1e-3],
            kappa_split: 0.5,
            n_paths: 200,
            horizon_secs: 20.0,
            engine_dt_secs: 0.1,
            seed: 12,
            strategies: vec![StrategyKind::GridOptimal],
            frozen_controls: false,
            grid_steps: None,
            recal: None,
            keep_episodes: false,
        };
        let report = sweep_frontier(&model, &template, &cfg).unwrap();
        let row = &report.rows[0];
        assert!(row.mean >= -3.0 * row.std_error);
    }

    #[test]
    fn pnl_std_shrinks_with_the_penalty() {
        // Across the kappa sweep the grid strategy's P&L dispersion is a
        // non-increasing trend; one inversion is allowed for MC noise. The
        // mean also never drops significantly below the never-quote zero.
        let model = test_model();
        let template = small_spec();
        let cfg = SweepConfig {
            kappa_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            kappa_split: 0.5,
            n_paths: 400,
            horizon_secs: 20.0,
            engine_dt_secs: 0.1,
            seed: 14,
            strategies: vec![StrategyKind::GridOptimal],
            frozen_controls: false,
            grid_steps: None,
            recal: None,
            keep_episodes: false,
        };
        let report = sweep_frontier(&model, &template, &cfg).unwrap();
        let stds: Vec<f64> = report.rows.iter().map(|r| r.std).collect();
        let inversions = stds.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(inversions <= 1, "std trend {stds:?} has {inversions} inversions");
        for row in &report.rows {
            assert!(row.mean >= -3.0 * row.std_error);
        }
    }

    #[test]
    fn symmetric_spec_has_balanced_terminal_risk() {
        // μ = 0 and symmetric intensities: the empirical mean of the terminal
        // net risk Σ q^j δ^j must vanish within three standard errors.
        let model = test_model();
        let spec = small_spec();
        let grid = solve_full(&spec, spec.default_steps(), &HamiltonianKind::Exact).unwrap();
        let strat = Strategy::GridOptimal {
            grid: Arc::new(grid),
            frozen_at: None,
        };
        let n = 300u64;
        let dt_years = 0.1 / SECONDS_PER_YEAR;
        let mut risk_sum = 0.0;
        let mut risk_sq = 0.0;
        for i in 0..n {
            let rng = substream(13, StreamDomain::Path, i);
            let mut stepper =
                PathStepper::new(&model.params, &model.kernel, model.state0.clone(), dt_years, rng)
                    .unwrap();
            let mut states = vec![stepper.state.clone()];
            for _ in 0..200 {
                stepper.step();
                states.push(stepper.state.clone());
            }
            let path = SimulatedPath {
                dt: dt_years,
                seed: 13,
                path_index: i,
                states,
            };
            let res = simulate_episode(&strat, &path, &spec, 13, i).unwrap();
            let risk: f64 = res
                .terminal_inventory
                .iter()
                .zip(&spec.assets)
                .map(|(q, a)| q * a.delta)
                .sum();
            risk_sum += risk;
            risk_sq += risk * risk;
        }
        let mean = risk_sum / n as f64;
        let var = (risk_sq / n as f64 - mean * mean).max(0.0);
        let se = (var / n as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se.max(1e-12),
            "terminal risk mean {mean} se {se}"
        );
    }

    #[test]
    fn uniasset_single_asset_equals_grid_with_zero_cross() {
        let model = test_model();
        let spec = PortfolioSpec {
            assets: vec![AssetSpec {
                tick: 0.25,
                order_size: 1.0,
                max_inventory: Some(5.0),
                intensity_bid: 1.0,
                intensity_ask: 1.0,
                delta: 1.0,
                kappa_j: 0.005,
            }],
            cross_kappa: 0.0,
            sigma: 1272.792,
            mu: 0.0,
            horizon: 20.0,
        };
        let steps = spec.default_steps();
        let uni = uniasset_benchmark(&spec, steps).unwrap();
        let grid = solve_full(&spec, steps, &HamiltonianKind::Exact).unwrap();
        let full = Strategy::GridOptimal {
            grid: Arc::new(grid),
            frozen_at: false.then_some(0.0),
        };
        let path = run_path(&model, 20.0, 0.1, 21);
        let a = simulate_episode(&uni, &path, &spec, 21, 0).unwrap();
        let b = simulate_episode(&full, &path, &spec, 21, 0).unwrap();
        assert_eq!(a.pnl, b.pnl);
        assert_eq!(a.fills, b.fills);
    }

    #[test]
    fn online_with_long_period_matches_static_greedy() {
        let model = Arc::new(test_model());
        let spec = small_spec();
        let qspec = QuadraticHamiltonianSpec::default_for(&spec);
        let sol = asymptotic_solution(&spec, &qspec).unwrap();
        let static_greedy = Strategy::Greedy {
            sol,
            spec: spec.clone(),
        };
        let mc = McConfig {
            n_outer: 8,
            n_inner: 2,
            dt: 1.0 / 365.0,
            bump_rel: 0.01,
            bump_abs: 0.001,
            seed: 9,
        };
        let online = online_recalibration(
            &spec,
            &qspec,
            model.clone(),
            RecalConfig {
                period_secs: 1e6, // beyond the horizon: never updates
                mc,
                instruments: vec![
                    Instrument::underlying(),
                    Instrument::new(crate::pricer::InstrumentKind::VixFuture, 30.0 / 365.0, None)
                        .unwrap(),
                ],
            },
        )
        .unwrap();
        let path = run_path(&model, 20.0, 0.1, 31);
        let a = simulate_episode(&static_greedy, &path, &spec, 31, 0).unwrap();
        let b = simulate_episode(&online, &path, &spec, 31, 0).unwrap();
        assert_eq!(a.pnl, b.pnl);
        assert_eq!(a.fills, b.fills);
    }

    #[test]
    fn online_recal_keeps_underlying_delta_at_one() {
        // η = 0 freezes the volatility path; the underlying's hedge ratio is
        // the exact identity at every update.
        let kernel = build_kernel_approx(0.6, 2, 1.0).unwrap();
        let params = QrhParams {
            lambda: 1.0,
            eta: 0.0,
            a: 0.1,
            b: 0.1,
            c: 0.01,
            mu: 0.0,
        };
        let state0 = ModelState::new(0.0, 3000.0, vec![0.01, -0.01]).unwrap();
        let model = Arc::new(ModelBundle {
            params,
            kernel,
            state0,
        });
        let mut spec = small_spec();
        spec.assets[1].delta = -0.02;
        let qspec = QuadraticHamiltonianSpec::default_for(&spec);
        let mc = McConfig {
            n_outer: 16,
            n_inner: 4,
            dt: 2.0 / 365.0,
            bump_rel: 0.01,
            bump_abs: 0.001,
            seed: 17,
        };
        let online = online_recalibration(
            &spec,
            &qspec,
            model.clone(),
            RecalConfig {
                period_secs: 5.0,
                mc,
                instruments: vec![
                    Instrument::underlying(),
                    Instrument::new(crate::pricer::InstrumentKind::VixFuture, 30.0 / 365.0, None)
                        .unwrap(),
                ],
            },
        )
        .unwrap();
        let path = simulate_paths(
            &model.params,
            &model.kernel,
            &model.state0,
            20.0 / SECONDS_PER_YEAR,
            0.1 / SECONDS_PER_YEAR,
            1,
            33,
        )
        .unwrap()
        .remove(0);
        // Run via a cloned strategy so the recal log is inspectable.
        let mut strat = online.clone();
        let mut fill_rng = substream(33, StreamDomain::Fill, 0);
        let mut iter = path.states.iter().cloned();
        let first = iter.next().unwrap();
        let _ = run_engine(
            &mut strat,
            &spec,
            0.1,
            path.states.len() - 1,
            move || iter.next().unwrap(),
            first,
            &mut fill_rng,
            false,
        )
        .unwrap();
        if let Strategy::Online(handle) = &strat {
            assert!(!handle.updates().is_empty());
            assert_eq!(handle.failures(), 0);
            for (_, deltas) in handle.updates() {
                assert_eq!(deltas[0], 1.0);
            }
        } else {
            unreachable!();
        }
    }
}
