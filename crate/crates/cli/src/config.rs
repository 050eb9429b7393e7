//! Experiment configuration: one structured TOML file per experiment.
//!
//! Units are fixed per key and converted once at load: model rates, drifts
//! and times are per year ($/year for `mu`), market making horizons and
//! execution intensities are in seconds, penalties in 1/$, `sigma` in
//! $/√year. When `portfolio.sigma` is omitted it defaults to `S₀√V(Z₀)`
//! computed from the model section.

use anyhow::{bail, Context, Result};
use qrh_mm::backtest::ModelBundle;
use qrh_mm::hjb::{AssetSpec, PortfolioSpec};
use qrh_mm::kernel::build_kernel_approx;
use qrh_mm::model::{instantaneous_variance, ModelState, QrhParams};
use qrh_mm::pricer::{Instrument, InstrumentKind, McConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Marker for errors that are the user's configuration rather than a
/// numerical failure; the binary maps it to exit code 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSection,
    pub portfolio: PortfolioSection,
    pub mc: McSection,
    pub backtest: BacktestSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Roughness exponent α ∈ (1/2, 1).
    pub alpha: f64,
    /// Number of exponential factors n.
    pub n_factors: usize,
    /// Kernel approximation horizon (years).
    pub kernel_horizon_years: f64,
    /// Mean-reversion speed λ (1/year).
    pub lambda: f64,
    /// Vol-of-vol scale η.
    pub eta: f64,
    /// Quadratic-variance coefficients: V = a(Z̄ − b)² + c.
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Spot drift μ ($/year) under the short-horizon approximation.
    pub mu: f64,
    /// Initial spot S₀ ($).
    pub s0: f64,
    /// Initial factor vector Z₀ (length n_factors).
    pub z0: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioSection {
    /// Cross (net-risk) penalty κ (1/$).
    pub kappa: f64,
    /// Dollar volatility σ = S₀√V₀ ($/√year); derived from the model when
    /// omitted.
    pub sigma: Option<f64>,
    /// Drift μ ($/year) for the market making problem.
    pub mu: f64,
    /// Market making horizon T (seconds).
    pub horizon_secs: f64,
    /// Net-risk bound R ($) for the one-dimensional solver.
    pub risk_bound: Option<f64>,
    pub assets: Vec<AssetSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum KindSection {
    Underlying,
    VixFuture,
    SpxCall,
    SpxPut,
    VixCall,
    VixPut,
}

impl From<KindSection> for InstrumentKind {
    fn from(k: KindSection) -> Self {
        match k {
            KindSection::Underlying => InstrumentKind::Underlying,
            KindSection::VixFuture => InstrumentKind::VixFuture,
            KindSection::SpxCall => InstrumentKind::SpxCall,
            KindSection::SpxPut => InstrumentKind::SpxPut,
            KindSection::VixCall => InstrumentKind::VixCall,
            KindSection::VixPut => InstrumentKind::VixPut,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetSection {
    pub name: String,
    pub kind: KindSection,
    /// Expiry in days (unused for the underlying).
    #[serde(default)]
    pub expiry_days: f64,
    /// Strike ($) where the kind requires one.
    pub strike: Option<f64>,
    /// Tick size D ($).
    pub tick: f64,
    /// Order size m (units).
    pub order_size: f64,
    /// Inventory cap Q (units, multiple of m); omit for unbounded.
    pub max_inventory: Option<f64>,
    /// Execution intensities (1/second).
    pub intensity_bid: f64,
    pub intensity_ask: f64,
    /// Hedge ratio δ against the spot.
    pub delta: f64,
    /// Per-asset penalty κ_j (1/$).
    pub kappa_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_outer: usize,
    pub n_inner: usize,
    /// Target simulation step (years).
    pub dt_years: f64,
    pub bump_rel: f64,
    pub bump_abs: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestSection {
    /// Inventory penalties swept by the frontier (1/$).
    pub kappa_grid: Vec<f64>,
    /// κ_j = kappa_split · κ.
    pub kappa_split: f64,
    pub n_paths: usize,
    /// Backtest horizon T_b (seconds).
    pub horizon_secs: f64,
    pub engine_dt_secs: f64,
    /// Online recalibration period τ (seconds).
    pub recal_period_secs: f64,
    /// Grid strategy reads the t = 0 controls instead of the running time.
    #[serde(default)]
    pub frozen_controls: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; overridden by --out-dir or QRH_MM_OUT_DIR.
    pub dir: Option<String>,
    #[serde(default)]
    pub svg: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.z0.len() != self.model.n_factors {
            bail!(ConfigError(format!(
                "z0 has {} entries, n_factors is {}",
                self.model.z0.len(),
                self.model.n_factors
            )));
        }
        if self.portfolio.assets.is_empty() {
            bail!(ConfigError("portfolio needs at least one asset".into()));
        }
        for asset in &self.portfolio.assets {
            let kind: InstrumentKind = asset.kind.into();
            if kind != InstrumentKind::Underlying && asset.expiry_days <= 0.0 {
                bail!(ConfigError(format!(
                    "asset {}: non-underlying kinds need expiry_days > 0",
                    asset.name
                )));
            }
            if kind.needs_strike() && asset.strike.is_none_or(|k| k <= 0.0) {
                bail!(ConfigError(format!(
                    "asset {}: kind requires a positive strike",
                    asset.name
                )));
            }
        }
        // Numeric constraints are delegated to the library validators.
        self.bundle().map_err(|e| ConfigError(e.to_string()))?;
        self.portfolio_spec()?
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        self.mc_config()
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    /// Model bundle (params, kernel, initial state) for simulation.
    pub fn bundle(&self) -> Result<ModelBundle> {
        let m = &self.model;
        let kernel = build_kernel_approx(m.alpha, m.n_factors, m.kernel_horizon_years)?;
        let params = QrhParams {
            lambda: m.lambda,
            eta: m.eta,
            a: m.a,
            b: m.b,
            c: m.c,
            mu: m.mu,
        };
        params.validate()?;
        let state0 = ModelState::new(0.0, m.s0, m.z0.clone())?;
        Ok(ModelBundle {
            params,
            kernel,
            state0,
        })
    }

    /// σ = S₀√V₀ in $/√year, explicit or derived from the model state.
    pub fn sigma(&self) -> Result<f64> {
        if let Some(sigma) = self.portfolio.sigma {
            return Ok(sigma);
        }
        let bundle = self.bundle()?;
        let v0 = instantaneous_variance(&bundle.params, &bundle.kernel, &bundle.state0.z)?;
        Ok(self.model.s0 * v0.sqrt())
    }

    pub fn portfolio_spec(&self) -> Result<PortfolioSpec> {
        let assets = self
            .portfolio
            .assets
            .iter()
            .map(|a| AssetSpec {
                tick: a.tick,
                order_size: a.order_size,
                max_inventory: a.max_inventory,
                intensity_bid: a.intensity_bid,
                intensity_ask: a.intensity_ask,
                delta: a.delta,
                kappa_j: a.kappa_j,
            })
            .collect();
        Ok(PortfolioSpec {
            assets,
            cross_kappa: self.portfolio.kappa,
            sigma: self.sigma()?,
            mu: self.portfolio.mu,
            horizon: self.portfolio.horizon_secs,
        })
    }

    /// Instruments backing the portfolio assets, for pricing and online
    /// recalibration.
    pub fn instruments(&self) -> Result<Vec<Instrument>> {
        self.portfolio
            .assets
            .iter()
            .map(|a| {
                let kind: InstrumentKind = a.kind.into();
                if kind == InstrumentKind::Underlying {
                    Ok(Instrument::underlying())
                } else {
                    Instrument::new(kind, a.expiry_days / 365.0, a.strike)
                        .context("invalid instrument")
                }
            })
            .collect()
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            n_outer: self.mc.n_outer,
            n_inner: self.mc.n_inner,
            dt: self.mc.dt_years,
            bump_rel: self.mc.bump_rel,
            bump_abs: self.mc.bump_abs,
            seed: self.mc.seed,
        }
    }

    pub fn dump(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_path() -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/example1.toml")
    }

    #[test]
    fn example1_loads_and_round_trips() {
        let cfg = ExperimentConfig::load(&example1_path()).unwrap();
        let dumped = cfg.dump().unwrap();
        let reloaded: ExperimentConfig = toml::from_str(&dumped).unwrap();
        assert_eq!(cfg, reloaded);
    }

    #[test]
    fn validation_rejects_factor_mismatch() {
        let mut cfg = ExperimentConfig::load(&example1_path()).unwrap();
        cfg.model.z0.pop();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validation_rejects_missing_strike() {
        let mut cfg = ExperimentConfig::load(&example1_path()).unwrap();
        cfg.portfolio.assets[1].kind = KindSection::VixCall;
        cfg.portfolio.assets[1].strike = None;
        assert!(cfg.validate().is_err());
    }
}
