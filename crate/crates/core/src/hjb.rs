//! Exact finite-horizon solvers for the market-making value functions.
//!
//! The full solver steps the coupled ODE system over the inventory lattice
//! `𝒬 = Π_j {−Q^j, …, Q^j step m^j}` backward from the zero terminal
//! condition with an explicit Euler scheme:
//!
//! ```text
//! v(t−dt, q) = v(t, q) + dt·( μ Σ_j q^j δ^j
//!              − Σ_j (κ_j/2) σ² (q^j δ^j)² − (κ/2) σ² (Σ_j q^j δ^j)²
//!              + Σ_{j,k} 1{q + φ^k m^j e^j ∈ 𝒬} m^j H^{j,k}(p^{j,k}) )
//! ```
//!
//! with `p^{j,k} = (v(t,q) − v(t, q+φ^k m^j e^j))/m^j` and the execution
//! Hamiltonian `H^{j,k}(p) = Λ^{j,k} 1{p ≤ D^j/2} (D^j/2 − p)`. The scheme is
//! monotone when `dt·Σ_{j,k} Λ^{j,k} ≤ 1`; [`ValueFunctionGrid::stability_load`]
//! reports that product (scaled by the surrogate slope when a quadratic
//! Hamiltonian is plugged in) so callers can warn when it exceeds one.
//!
//! When only the portfolio's net risk is penalized (`κ_j = 0`), the state
//! collapses to the scalar risk `r = Σ_j q^j δ^j` and [`solve_portfolio`]
//! steps the one-dimensional analogue on a uniform grid over `[−R, R]`,
//! evaluating the shifted argument `r + φ^k m^j δ^j` by linear interpolation.
//!
//! Intensities are per second and horizons in seconds; `σ` and `μ` enter in
//! per-year units and are converted once on entry via [`SECONDS_PER_YEAR`].
//! Within a time step, lattice nodes only read the previous slice, so the
//! sweep parallelizes without affecting the result.

use crate::SECONDS_PER_YEAR;
use rayon::prelude::*;
use thiserror::Error;

/// Lattices beyond this node count are rejected.
pub const MAX_LATTICE_NODES: usize = 10_000_000;

/// Serial/parallel crossover for the per-step node sweep.
const PAR_NODE_THRESHOLD: usize = 4096;

#[derive(Debug, Error, PartialEq)]
pub enum HjbError {
    #[error("asset {index}: {reason}")]
    InvalidAsset { index: usize, reason: &'static str },
    #[error("portfolio: {0}")]
    InvalidPortfolio(&'static str),
    #[error("asset {0} has unbounded inventory; the lattice solver needs finite caps")]
    UnboundedInventory(usize),
    #[error("inventory lattice has {0} nodes, above the {MAX_LATTICE_NODES} guard")]
    LatticeTooLarge(usize),
    #[error("time steps must be >= 1")]
    ZeroSteps,
    #[error("quadratic hamiltonian needs {expected} curvatures, got {got}")]
    CurvatureLengthMismatch { got: usize, expected: usize },
    #[error("the portfolio-risk solver requires kappa_j = 0 for every asset")]
    PerAssetPenaltyNotZero,
    #[error("risk bound must be positive, got {0}")]
    NonPositiveRiskBound(f64),
    #[error("grid spacing must be positive, got {0}")]
    NonPositiveSpacing(f64),
    #[error("time {0} is not a stored grid slice")]
    TimeNotOnGrid(f64),
}

/// Quote side; `phi` is the inventory increment sign of a fill (+1 bid, −1 ask).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bid,
    Ask,
}

pub const SIDES: [Side; 2] = [Side::Bid, Side::Ask];

impl Side {
    pub fn phi(self) -> f64 {
        match self {
            Side::Bid => 1.0,
            Side::Ask => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Bid => 0,
            Side::Ask => 1,
        }
    }
}

/// Per-asset market making parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetSpec {
    /// Tick size D^j ($).
    pub tick: f64,
    /// Limit-order size m^j (units).
    pub order_size: f64,
    /// Inventory cap Q^j (units, a nonnegative multiple of m^j); `None` means
    /// unbounded, which only the closed-form route supports.
    pub max_inventory: Option<f64>,
    /// Execution intensity at the bid, Λ^{j,b} (1/second).
    pub intensity_bid: f64,
    /// Execution intensity at the ask, Λ^{j,a} (1/second).
    pub intensity_ask: f64,
    /// Hedge ratio δ^j of the asset against the spot.
    pub delta: f64,
    /// Per-asset inventory penalty κ_j (1/$).
    pub kappa_j: f64,
}

impl AssetSpec {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.tick > 0.0) {
            return Err("tick must be positive");
        }
        if !(self.order_size > 0.0) {
            return Err("order size must be positive");
        }
        if let Some(q) = self.max_inventory {
            if q < 0.0 {
                return Err("inventory cap must be nonnegative");
            }
            let ratio = q / self.order_size;
            if (ratio - ratio.round()).abs() > 1e-9 {
                return Err("inventory cap must be a multiple of the order size");
            }
        }
        if self.intensity_bid < 0.0 || self.intensity_ask < 0.0 {
            return Err("intensities must be nonnegative");
        }
        if self.kappa_j < 0.0 {
            return Err("kappa_j must be nonnegative");
        }
        Ok(())
    }

    pub fn intensity(&self, side: Side) -> f64 {
        match side {
            Side::Bid => self.intensity_bid,
            Side::Ask => self.intensity_ask,
        }
    }
}

/// Portfolio-level problem data. `sigma` is `S₀√V₀` in $/√year and `mu` in
/// $/year; both are converted to per-second scale inside the solvers. The
/// horizon is in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSpec {
    pub assets: Vec<AssetSpec>,
    /// Cross (net-risk) penalty κ (1/$).
    pub cross_kappa: f64,
    /// Spot dollar volatility σ = S₀√V₀ ($/√year).
    pub sigma: f64,
    /// Spot drift μ ($/year).
    pub mu: f64,
    /// Market making horizon T (seconds).
    pub horizon: f64,
}

impl PortfolioSpec {
    pub fn validate(&self) -> Result<(), HjbError> {
        if self.assets.is_empty() {
            return Err(HjbError::InvalidPortfolio("at least one asset required"));
        }
        if self.cross_kappa < 0.0 {
            return Err(HjbError::InvalidPortfolio("kappa must be nonnegative"));
        }
        if self.sigma < 0.0 {
            return Err(HjbError::InvalidPortfolio("sigma must be nonnegative"));
        }
        if !(self.horizon > 0.0) {
            return Err(HjbError::InvalidPortfolio("horizon must be positive"));
        }
        for (index, asset) in self.assets.iter().enumerate() {
            asset
                .validate()
                .map_err(|reason| HjbError::InvalidAsset { index, reason })?;
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.assets.len()
    }

    /// σ² in $²/second.
    pub fn sigma_sq_per_sec(&self) -> f64 {
        self.sigma * self.sigma / SECONDS_PER_YEAR
    }

    /// μ in $/second.
    pub fn mu_per_sec(&self) -> f64 {
        self.mu / SECONDS_PER_YEAR
    }

    /// Total quote-side intensity Σ_{j,k} Λ^{j,k} (1/second).
    pub fn total_intensity(&self) -> f64 {
        self.assets
            .iter()
            .map(|a| a.intensity_bid + a.intensity_ask)
            .sum()
    }

    /// Default backward-Euler step count: dt ≤ 0.05 s and dt·ΣΛ ≤ 0.5, the
    /// latter keeping the explicit scheme monotone with margin.
    pub fn default_steps(&self) -> usize {
        let by_resolution = (self.horizon / 0.05).ceil();
        let by_monotonicity = (2.0 * self.horizon * self.total_intensity()).ceil();
        by_resolution.max(by_monotonicity).max(1.0) as usize
    }
}

/// Execution Hamiltonian `H(p) = Λ·1{p ≤ D/2}·(D/2 − p)`; the tie at
/// `p = D/2` quotes (the indicator uses ≤), where the value is 0 anyway.
pub fn hamiltonian(p: f64, intensity: f64, tick: f64) -> f64 {
    if p <= 0.5 * tick {
        intensity * (0.5 * tick - p)
    } else {
        0.0
    }
}

/// Hamiltonian family plugged into the lattice solver: the exact indicator
/// form, or the quadratic surrogate `Λ((α/2)p² − p + D/2)` with per-asset
/// curvature.
#[derive(Debug, Clone, PartialEq)]
pub enum HamiltonianKind {
    Exact,
    Quadratic(Vec<f64>),
}

impl HamiltonianKind {
    fn check(&self, d: usize) -> Result<(), HjbError> {
        match self {
            HamiltonianKind::Exact => Ok(()),
            HamiltonianKind::Quadratic(alphas) if alphas.len() == d => Ok(()),
            HamiltonianKind::Quadratic(alphas) => Err(HjbError::CurvatureLengthMismatch {
                got: alphas.len(),
                expected: d,
            }),
        }
    }

    #[inline]
    fn eval(&self, asset: usize, p: f64, intensity: f64, tick: f64) -> f64 {
        match self {
            HamiltonianKind::Exact => hamiltonian(p, intensity, tick),
            HamiltonianKind::Quadratic(alphas) => {
                intensity * (0.5 * alphas[asset] * p * p - p + 0.5 * tick)
            }
        }
    }

    /// Slope scale for the stability heuristic: the exact H has |H'| ≤ Λ, the
    /// surrogate |Ĥ'(p)| = Λ|αp − 1| which we bound near the tick scale.
    fn slope_scale(&self, asset: usize, tick: f64) -> f64 {
        match self {
            HamiltonianKind::Exact => 1.0,
            HamiltonianKind::Quadratic(alphas) => (alphas[asset] * tick).max(1.0),
        }
    }
}

/// Finite inventory lattice `Π_j {−Q^j, …, Q^j step m^j}` with row-major
/// flat indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct InventoryLattice {
    caps: Vec<f64>,
    order_sizes: Vec<f64>,
    sizes: Vec<usize>,
    strides: Vec<usize>,
    n_nodes: usize,
}

impl InventoryLattice {
    pub fn new(spec: &PortfolioSpec) -> Result<Self, HjbError> {
        let d = spec.d();
        let mut caps = Vec::with_capacity(d);
        let mut order_sizes = Vec::with_capacity(d);
        let mut sizes = Vec::with_capacity(d);
        for (j, asset) in spec.assets.iter().enumerate() {
            let cap = asset.max_inventory.ok_or(HjbError::UnboundedInventory(j))?;
            let half = (cap / asset.order_size).round() as usize;
            caps.push(cap);
            order_sizes.push(asset.order_size);
            sizes.push(2 * half + 1);
        }
        let mut n_nodes = 1usize;
        for &s in &sizes {
            n_nodes = n_nodes
                .checked_mul(s)
                .ok_or(HjbError::LatticeTooLarge(usize::MAX))?;
            if n_nodes > MAX_LATTICE_NODES {
                return Err(HjbError::LatticeTooLarge(n_nodes));
            }
        }
        let mut strides = vec![0usize; d];
        let mut acc = 1usize;
        for j in (0..d).rev() {
            strides[j] = acc;
            acc *= sizes[j];
        }
        Ok(InventoryLattice {
            caps,
            order_sizes,
            sizes,
            strides,
            n_nodes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dims(&self) -> &[usize] {
        &self.sizes
    }

    /// Inventory vector of a flat node index.
    pub fn inventory(&self, flat: usize) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.sizes.len());
        for j in 0..self.sizes.len() {
            let i = (flat / self.strides[j]) % self.sizes[j];
            q.push(-self.caps[j] + i as f64 * self.order_sizes[j]);
        }
        q
    }

    /// Flat index of an inventory vector; positions must lie on the lattice.
    pub fn index_of(&self, q: &[f64]) -> Option<usize> {
        let mut flat = 0usize;
        for j in 0..self.sizes.len() {
            let pos = (q[j] + self.caps[j]) / self.order_sizes[j];
            let i = pos.round();
            if (pos - i).abs() > 1e-9 || i < 0.0 || i as usize >= self.sizes[j] {
                return None;
            }
            flat += i as usize * self.strides[j];
        }
        Some(flat)
    }

    /// Flat index after a fill of asset `j` on `side`, if admissible.
    #[inline]
    pub fn neighbor(&self, flat: usize, j: usize, side: Side) -> Option<usize> {
        let i = (flat / self.strides[j]) % self.sizes[j];
        match side {
            Side::Bid if i + 1 < self.sizes[j] => Some(flat + self.strides[j]),
            Side::Ask if i > 0 => Some(flat - self.strides[j]),
            _ => None,
        }
    }

    /// Flat index of the mirrored inventory `−q`.
    pub fn mirror(&self, flat: usize) -> usize {
        let mut out = 0usize;
        for j in 0..self.sizes.len() {
            let i = (flat / self.strides[j]) % self.sizes[j];
            out += (self.sizes[j] - 1 - i) * self.strides[j];
        }
        out
    }
}

/// Which time slices of the backward solve are retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceKeep {
    /// Every step (values at t = 0, dt, …, T).
    All,
    /// Only the t = 0 slice.
    FinalOnly,
}

/// Value function on the inventory lattice. `values[k]` holds `v(times[k], ·)`
/// with `times` ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunctionGrid {
    pub spec: PortfolioSpec,
    pub lattice: InventoryLattice,
    pub hamiltonians: HamiltonianKind,
    /// Step of the backward scheme (seconds).
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    /// Monotonicity heuristic `dt·Σ_{j,k} Λ^{j,k}·slope_scale`; warn above 1.
    pub stability_load: f64,
}

impl ValueFunctionGrid {
    /// Index of the stored slice at time `t` (seconds), within tolerance.
    pub fn slice_index(&self, t: f64) -> Result<usize, HjbError> {
        self.times
            .iter()
            .position(|&ts| (ts - t).abs() <= 1e-9 * self.spec.horizon.max(1.0))
            .ok_or(HjbError::TimeNotOnGrid(t))
    }

    /// Stored slice nearest to time `t`, clamped to the grid range.
    pub fn nearest_slice(&self, t: f64) -> &[f64] {
        let k = if self.times.len() == 1 {
            0
        } else {
            let dt = self.times[1] - self.times[0];
            ((t - self.times[0]) / dt)
                .round()
                .clamp(0.0, (self.times.len() - 1) as f64) as usize
        };
        &self.values[k]
    }
}

fn step_lattice(
    v: &[f64],
    v_next: &mut Vec<f64>,
    dt: f64,
    run_rate: &[f64],
    neighbors: &[Option<usize>],
    assets: &[AssetSpec],
    kind: &HamiltonianKind,
) {
    let d = assets.len();
    let update = |x: usize| -> f64 {
        let mut acc = run_rate[x];
        let base = x * 2 * d;
        for (j, asset) in assets.iter().enumerate() {
            let inv_m = 1.0 / asset.order_size;
            // Sum the two sides before accumulating: addition commutes
            // bitwise, which keeps v(t, q) = v(t, −q) exact for symmetric
            // specs where the mirror swaps bid and ask.
            let mut pair = 0.0;
            for side in SIDES {
                if let Some(nb) = neighbors[base + 2 * j + side.index()] {
                    let p = (v[x] - v[nb]) * inv_m;
                    pair += kind.eval(j, p, asset.intensity(side), asset.tick);
                }
            }
            acc += asset.order_size * pair;
        }
        v[x] + dt * acc
    };
    if v.len() >= PAR_NODE_THRESHOLD {
        (0..v.len())
            .into_par_iter()
            .map(update)
            .collect_into_vec(v_next);
    } else {
        v_next.clear();
        v_next.extend((0..v.len()).map(update));
    }
}

/// Solves the full inventory-lattice system backward from `v(T, ·) = 0`,
/// retaining every time slice.
pub fn solve_full(
    spec: &PortfolioSpec,
    steps: usize,
    hamiltonians: &HamiltonianKind,
) -> Result<ValueFunctionGrid, HjbError> {
    solve_full_keep(spec, steps, hamiltonians, SliceKeep::All)
}

pub fn solve_full_keep(
    spec: &PortfolioSpec,
    steps: usize,
    hamiltonians: &HamiltonianKind,
    keep: SliceKeep,
) -> Result<ValueFunctionGrid, HjbError> {
    spec.validate()?;
    hamiltonians.check(spec.d())?;
    if steps == 0 {
        return Err(HjbError::ZeroSteps);
    }
    let lattice = InventoryLattice::new(spec)?;
    let n = lattice.n_nodes();
    let d = spec.d();
    let dt = spec.horizon / steps as f64;

    let sig2 = spec.sigma_sq_per_sec();
    let mu = spec.mu_per_sec();
    let kappa = spec.cross_kappa;

    // Running reward μ Σ qδ − (σ²/2)(Σ κ_j (qδ)² + κ (Σ qδ)²), per second.
    let run_rate: Vec<f64> = (0..n)
        .map(|x| {
            let q = lattice.inventory(x);
            let mut risk = 0.0;
            let mut own = 0.0;
            for (j, asset) in spec.assets.iter().enumerate() {
                let e = q[j] * asset.delta;
                risk += e;
                own += asset.kappa_j * e * e;
            }
            mu * risk - 0.5 * sig2 * (own + kappa * risk * risk)
        })
        .collect();

    let mut neighbors = Vec::with_capacity(n * 2 * d);
    for x in 0..n {
        for j in 0..d {
            for side in SIDES {
                neighbors.push(lattice.neighbor(x, j, side));
            }
        }
    }

    let stability_load = dt
        * spec
            .assets
            .iter()
            .enumerate()
            .map(|(j, a)| (a.intensity_bid + a.intensity_ask) * hamiltonians.slope_scale(j, a.tick))
            .sum::<f64>();

    let mut v = vec![0.0f64; n];
    let mut v_next = Vec::with_capacity(n);
    let mut slices: Vec<Vec<f64>> = Vec::new();
    let mut times: Vec<f64> = Vec::new();
    if keep == SliceKeep::All {
        slices.push(v.clone());
        times.push(spec.horizon);
    }
    for k in (0..steps).rev() {
        step_lattice(
            &v,
            &mut v_next,
            dt,
            &run_rate,
            &neighbors,
            &spec.assets,
            hamiltonians,
        );
        std::mem::swap(&mut v, &mut v_next);
        if keep == SliceKeep::All {
            slices.push(v.clone());
            times.push(k as f64 * dt);
        }
    }
    if keep == SliceKeep::FinalOnly {
        slices.push(v);
        times.push(0.0);
    } else {
        slices.reverse();
        times.reverse();
    }

    Ok(ValueFunctionGrid {
        spec: spec.clone(),
        lattice,
        hamiltonians: hamiltonians.clone(),
        dt,
        times,
        values: slices,
        stability_load,
    })
}

/// Quote indicators for every lattice node, laid out `[node][asset][side]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionMap {
    pub d: usize,
    pub quotes: Vec<bool>,
}

impl DecisionMap {
    #[inline]
    pub fn get(&self, node: usize, asset: usize, side: Side) -> bool {
        self.quotes[node * 2 * self.d + 2 * asset + side.index()]
    }
}

/// Optimal decisions at stored time `t`: quote iff the post-fill inventory is
/// admissible and `(v(t,q) − v(t, q+φ m e))/m ≤ D/2`.
pub fn extract_controls(grid: &ValueFunctionGrid, t: f64) -> Result<DecisionMap, HjbError> {
    let slice = grid.slice_index(t)?;
    let v = &grid.values[slice];
    let d = grid.spec.d();
    let n = grid.lattice.n_nodes();
    let mut quotes = vec![false; n * 2 * d];
    for x in 0..n {
        for (j, asset) in grid.spec.assets.iter().enumerate() {
            for side in SIDES {
                if let Some(nb) = grid.lattice.neighbor(x, j, side) {
                    let p = (v[x] - v[nb]) / asset.order_size;
                    quotes[x * 2 * d + 2 * j + side.index()] = p <= 0.5 * asset.tick;
                }
            }
        }
    }
    Ok(DecisionMap { d, quotes })
}

/// Value function of the one-dimensional net-risk formulation on a uniform
/// grid over `[−R, R]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskValueGrid {
    pub spec: PortfolioSpec,
    pub risk_bound: f64,
    pub r_grid: Vec<f64>,
    pub spacing: f64,
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl RiskValueGrid {
    pub fn slice_index(&self, t: f64) -> Result<usize, HjbError> {
        self.times
            .iter()
            .position(|&ts| (ts - t).abs() <= 1e-9 * self.spec.horizon.max(1.0))
            .ok_or(HjbError::TimeNotOnGrid(t))
    }

    /// Linear interpolation of `θ(times[slice], r)`.
    pub fn interpolate(&self, slice: usize, r: f64) -> f64 {
        let v = &self.values[slice];
        let x = (r + self.risk_bound) / self.spacing;
        let i = x.floor().clamp(0.0, (v.len() - 2) as f64) as usize;
        let w = (x - i as f64).clamp(0.0, 1.0);
        v[i] * (1.0 - w) + v[i + 1] * w
    }
}

/// Solves the net-risk HJB (all `κ_j = 0`) backward on `[−R, R]`.
pub fn solve_portfolio(
    spec: &PortfolioSpec,
    risk_bound: f64,
    spacing: f64,
    steps: usize,
) -> Result<RiskValueGrid, HjbError> {
    spec.validate()?;
    if spec.assets.iter().any(|a| a.kappa_j != 0.0) {
        return Err(HjbError::PerAssetPenaltyNotZero);
    }
    if !(risk_bound > 0.0) {
        return Err(HjbError::NonPositiveRiskBound(risk_bound));
    }
    if !(spacing > 0.0) {
        return Err(HjbError::NonPositiveSpacing(spacing));
    }
    if steps == 0 {
        return Err(HjbError::ZeroSteps);
    }

    let n_cells = ((2.0 * risk_bound) / spacing).round().max(2.0) as usize;
    let h = 2.0 * risk_bound / n_cells as f64;
    let n = n_cells + 1;
    let r_grid: Vec<f64> = (0..n).map(|i| -risk_bound + i as f64 * h).collect();
    let dt = spec.horizon / steps as f64;

    let mut warnings = Vec::new();
    let min_shift = spec
        .assets
        .iter()
        .map(|a| (a.order_size * a.delta).abs())
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    if h > min_shift {
        warnings.push(format!(
            "grid spacing {h} exceeds the smallest risk shift {min_shift}; shifts unresolved"
        ));
    }

    // Interpolation stencil per (node, asset, side): lower index and weight,
    // None when r + φ m δ leaves [−R, R].
    let d = spec.d();
    let tol = 1e-9 * risk_bound;
    let mut stencil: Vec<Option<(usize, f64)>> = Vec::with_capacity(n * d * 2);
    for i in 0..n {
        for asset in &spec.assets {
            for side in SIDES {
                let target = r_grid[i] + side.phi() * asset.order_size * asset.delta;
                if target < -risk_bound - tol || target > risk_bound + tol {
                    stencil.push(None);
                } else {
                    let x = ((target + risk_bound) / h).clamp(0.0, (n - 1) as f64);
                    let lo = (x.floor() as usize).min(n - 2);
                    stencil.push(Some((lo, x - lo as f64)));
                }
            }
        }
    }

    let sig2 = spec.sigma_sq_per_sec();
    let mu = spec.mu_per_sec();
    let kappa = spec.cross_kappa;
    let run_rate: Vec<f64> = r_grid
        .iter()
        .map(|&r| mu * r - 0.5 * kappa * sig2 * r * r)
        .collect();

    let mut theta = vec![0.0f64; n];
    let mut theta_next = vec![0.0f64; n];
    let mut times = vec![spec.horizon];
    let mut slices = vec![theta.clone()];
    for k in (0..steps).rev() {
        for i in 0..n {
            let mut acc = run_rate[i];
            for (j, asset) in spec.assets.iter().enumerate() {
                let mut pair = 0.0;
                for side in SIDES {
                    if let Some((lo, w)) = stencil[(i * d + j) * 2 + side.index()] {
                        let shifted = theta[lo] * (1.0 - w) + theta[lo + 1] * w;
                        let p = (theta[i] - shifted) / asset.order_size;
                        pair += hamiltonian(p, asset.intensity(side), asset.tick);
                    }
                }
                acc += asset.order_size * pair;
            }
            theta_next[i] = theta[i] + dt * acc;
        }
        std::mem::swap(&mut theta, &mut theta_next);
        times.push(k as f64 * dt);
        slices.push(theta.clone());
    }
    times.reverse();
    slices.reverse();

    Ok(RiskValueGrid {
        spec: spec.clone(),
        risk_bound,
        r_grid,
        spacing: h,
        dt,
        times,
        values: slices,
        warnings,
    })
}

/// Decisions of the net-risk formulation at stored time `t`, laid out
/// `[r-node][asset][side]`: quote iff `r + φ m δ` stays in `[−R, R]` and
/// `(θ(t,r) − θ(t, r+φ m δ))/m ≤ D/2` (shift evaluated by interpolation).
pub fn extract_portfolio_controls(grid: &RiskValueGrid, t: f64) -> Result<Vec<bool>, HjbError> {
    let slice = grid.slice_index(t)?;
    let v = &grid.values[slice];
    let d = grid.spec.d();
    let tol = 1e-9 * grid.risk_bound;
    let mut quotes = vec![false; v.len() * 2 * d];
    for (i, &r) in grid.r_grid.iter().enumerate() {
        for (j, asset) in grid.spec.assets.iter().enumerate() {
            for side in SIDES {
                let target = r + side.phi() * asset.order_size * asset.delta;
                if target < -grid.risk_bound - tol || target > grid.risk_bound + tol {
                    continue;
                }
                let shifted = grid.interpolate(slice, target);
                let p = (v[i] - shifted) / asset.order_size;
                quotes[(i * d + j) * 2 + side.index()] = p <= 0.5 * asset.tick;
            }
        }
    }
    Ok(quotes)
}
