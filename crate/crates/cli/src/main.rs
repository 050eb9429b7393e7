//! Batch CLI: configuration loading, experiment orchestration and CSV/SVG
//! emission for the QRH market making library.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, unreadable or
//! invalid config), 2 numerical failure.

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use qrh_mm_cli::config::{ConfigError, ExperimentConfig, KindSection};
use qrh_mm_cli::output::{fmt, frontier_csv, frontier_svg, resolve_out_dir, write_atomic, CsvTable};
use qrh_mm::backtest::{sweep_frontier, RecalConfig, StrategyKind, SweepConfig};
use qrh_mm::hjb::{
    extract_controls, extract_portfolio_controls, solve_full, solve_portfolio, HamiltonianKind,
    InventoryLattice, SIDES,
};
use qrh_mm::pricer::{
    delta, hedging_pnl, price_with_convention, Instrument, InstrumentKind, VixConvention,
};
use qrh_mm::quad::{asymptotic_solution, greedy_decision, QuadraticHamiltonianSpec};
use qrh_mm::simulate::simulate_paths;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "qrh-mm", version, about = "QRH multi-asset market making toolkit")]
struct Cli {
    /// Experiment configuration file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Master seed; overrides the config's mc.seed everywhere.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count (default: all cores). Results are identical for
    /// any value.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; falls back to QRH_MM_OUT_DIR, then the config.
    #[arg(long)]
    out_dir: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ConventionArg {
    Annualized,
    Unscaled,
}

impl From<ConventionArg> for VixConvention {
    fn from(c: ConventionArg) -> Self {
        match c {
            ConventionArg::Annualized => VixConvention::Annualized,
            ConventionArg::Unscaled => VixConvention::Unscaled,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum StrategyArg {
    Grid,
    Greedy,
    Uni,
    Online,
    Never,
}

impl From<StrategyArg> for StrategyKind {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Grid => StrategyKind::GridOptimal,
            StrategyArg::Greedy => StrategyKind::Greedy,
            StrategyArg::Uni => StrategyKind::UniAsset,
            StrategyArg::Online => StrategyKind::Online,
            StrategyArg::Never => StrategyKind::NeverQuote,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the kernel approximation weights and rates as CSV.
    Kernel,
    /// Simulate model paths and dump them as CSV (one file per path).
    Simulate {
        #[arg(long, default_value_t = 1)]
        paths: usize,
        #[arg(long, default_value_t = 30.0)]
        horizon_days: f64,
        /// Simulation step in years (default: mc.dt_years).
        #[arg(long)]
        dt_years: Option<f64>,
    },
    /// Monte-Carlo price of one instrument.
    Price {
        #[arg(long)]
        kind: KindSection,
        #[arg(long, default_value_t = 30.0)]
        expiry_days: f64,
        #[arg(long)]
        strike: Option<f64>,
        #[arg(long, value_enum, default_value_t = ConventionArg::Annualized)]
        convention: ConventionArg,
    },
    /// Finite-difference hedge ratio of one instrument.
    Delta {
        #[arg(long)]
        kind: KindSection,
        #[arg(long, default_value_t = 30.0)]
        expiry_days: f64,
        #[arg(long)]
        strike: Option<f64>,
    },
    /// Discrete-hedging P&L of one instrument over simulated paths.
    Hedge {
        #[arg(long)]
        kind: KindSection,
        #[arg(long, default_value_t = 30.0)]
        expiry_days: f64,
        #[arg(long)]
        strike: Option<f64>,
        #[arg(long, default_value_t = 200)]
        paths: usize,
        #[arg(long, default_value_t = 1.0)]
        rebalance_days: f64,
        #[arg(long, default_value_t = 20.0)]
        horizon_days: f64,
    },
    /// Solve the market-making value function on the inventory lattice (or
    /// the 1-D net-risk grid) and dump slices plus decision maps.
    SolveHjb {
        /// Solve the one-dimensional net-risk formulation instead.
        #[arg(long)]
        portfolio_risk: bool,
        /// Comma-separated slice times (seconds) to dump.
        #[arg(long, default_value = "0")]
        times: String,
        #[arg(long)]
        steps: Option<usize>,
        /// Net-risk grid spacing ($), with --portfolio-risk.
        #[arg(long, default_value_t = 0.02)]
        spacing: f64,
    },
    /// Closed-form asymptotic coefficients A and B as CSV matrices.
    SolveQuadratic,
    /// Greedy decision maps over the inventory lattice.
    Decide,
    /// Mean-risk frontier sweep over the configured kappa grid.
    Backtest {
        #[arg(long)]
        paths: Option<usize>,
        /// Comma-separated kappa values; default from the config.
        #[arg(long)]
        kappa_grid: Option<String>,
        #[arg(long, value_enum, value_delimiter = ',', default_values_t = [StrategyArg::Grid, StrategyArg::Greedy])]
        strategy: Vec<StrategyArg>,
        /// Backtest horizon T_b in seconds; default from the config.
        #[arg(long)]
        horizon: Option<f64>,
        /// Also emit the per-episode P&Ls as CSV.
        #[arg(long)]
        dump_episodes: bool,
        /// Also emit a (std, mean) scatter as SVG.
        #[arg(long)]
        svg: bool,
    },
    /// Print the normalized configuration (reloads to an equal config).
    DumpConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| ConfigError(format!("thread pool: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.mc.seed = seed;
    }
    let out_dir = resolve_out_dir(cli.out_dir.as_deref(), cfg.output.dir.as_deref());
    let seed = cfg.mc.seed;

    if matches!(cli.command, Command::DumpConfig) {
        // Bare normalized config on stdout so it can be piped back in.
        print!("{}", cfg.dump()?);
        return Ok(());
    }

    match cli.command {
        Command::Kernel => cmd_kernel(&cfg, &out_dir),
        Command::Simulate {
            paths,
            horizon_days,
            dt_years,
        } => cmd_simulate(&cfg, &out_dir, paths, horizon_days, dt_years),
        Command::Price {
            kind,
            expiry_days,
            strike,
            convention,
        } => cmd_price(&cfg, &out_dir, kind, expiry_days, strike, convention.into()),
        Command::Delta {
            kind,
            expiry_days,
            strike,
        } => cmd_delta(&cfg, &out_dir, kind, expiry_days, strike),
        Command::Hedge {
            kind,
            expiry_days,
            strike,
            paths,
            rebalance_days,
            horizon_days,
        } => cmd_hedge(
            &cfg,
            &out_dir,
            kind,
            expiry_days,
            strike,
            paths,
            rebalance_days,
            horizon_days,
        ),
        Command::SolveHjb {
            portfolio_risk,
            times,
            steps,
            spacing,
        } => cmd_solve_hjb(&cfg, &out_dir, portfolio_risk, &times, steps, spacing),
        Command::SolveQuadratic => cmd_solve_quadratic(&cfg, &out_dir),
        Command::Decide => cmd_decide(&cfg, &out_dir),
        Command::Backtest {
            paths,
            kappa_grid,
            strategy,
            horizon,
            dump_episodes,
            svg,
        } => cmd_backtest(
            &cfg,
            &out_dir,
            paths,
            kappa_grid.as_deref(),
            &strategy,
            horizon,
            dump_episodes,
            svg,
        ),
        Command::DumpConfig => unreachable!("handled above"),
    }
    .map(|files| {
        println!(
            "{}: wrote {} (seed {seed})",
            cli.config.display(),
            files.join(", ")
        );
    })
}

type Written = Vec<String>;

fn written(out_dir: &Path, names: &[&str]) -> Written {
    names
        .iter()
        .map(|n| out_dir.join(n).display().to_string())
        .collect()
}

fn cmd_kernel(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Written> {
    let bundle = cfg.bundle()?;
    let mut table = CsvTable::new("i,c,gamma");
    for (i, (c, g)) in bundle
        .kernel
        .weights()
        .iter()
        .zip(bundle.kernel.rates())
        .enumerate()
    {
        table.row([(i + 1).to_string(), fmt(*c), fmt(*g)]);
    }
    table.write(&out_dir.join("kernel.csv"))?;
    Ok(written(out_dir, &["kernel.csv"]))
}

fn cmd_simulate(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    n_paths: usize,
    horizon_days: f64,
    dt_years: Option<f64>,
) -> Result<Written> {
    if n_paths == 0 {
        bail!(ConfigError("--paths must be positive".into()));
    }
    let bundle = cfg.bundle()?;
    let dt = dt_years.unwrap_or(cfg.mc.dt_years);
    let horizon = horizon_days / 365.0;
    let paths = simulate_paths(
        &bundle.params,
        &bundle.kernel,
        &bundle.state0,
        horizon,
        dt,
        n_paths,
        cfg.mc.seed,
    )?;
    let n = bundle.kernel.n();
    let mut files = Vec::new();
    for path in &paths {
        let mut header = String::from("t,S");
        for i in 1..=n {
            header.push_str(&format!(",Z{i}"));
        }
        header.push_str(",V");
        let mut table = CsvTable::new(&header);
        for state in &path.states {
            let v = state.variance(&bundle.params, &bundle.kernel)?;
            let mut cells = vec![fmt(state.t), fmt(state.s)];
            cells.extend(state.z.iter().map(|z| fmt(*z)));
            cells.push(fmt(v));
            table.row(cells);
        }
        let name = format!("path_{:04}.csv", path.path_index);
        table.write(&out_dir.join(&name))?;
        files.push(name);
    }
    let refs: Vec<&str> = files.iter().map(|s| s.as_str()).collect();
    Ok(written(out_dir, &refs))
}

fn build_instrument(kind: KindSection, expiry_days: f64, strike: Option<f64>) -> Result<Instrument> {
    let kind: InstrumentKind = kind.into();
    if kind == InstrumentKind::Underlying {
        return Ok(Instrument::underlying());
    }
    Instrument::new(kind, expiry_days / 365.0, strike)
        .map_err(|e| ConfigError(e.to_string()).into())
}

fn cmd_price(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    kind: KindSection,
    expiry_days: f64,
    strike: Option<f64>,
    convention: VixConvention,
) -> Result<Written> {
    let bundle = cfg.bundle()?;
    let instrument = build_instrument(kind, expiry_days, strike)?;
    let est = price_with_convention(
        &instrument,
        &bundle.state0,
        &bundle.params,
        &bundle.kernel,
        &cfg.mc_config(),
        convention,
    )?;
    let mut table = CsvTable::new("metric,value,std_error,n_samples");
    table.row([
        "price".into(),
        fmt(est.value),
        fmt(est.std_error),
        est.n_samples.to_string(),
    ]);
    table.write(&out_dir.join("price.csv"))?;
    Ok(written(out_dir, &["price.csv"]))
}

fn cmd_delta(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    kind: KindSection,
    expiry_days: f64,
    strike: Option<f64>,
) -> Result<Written> {
    let bundle = cfg.bundle()?;
    let instrument = build_instrument(kind, expiry_days, strike)?;
    let est = delta(
        &instrument,
        &bundle.state0,
        &bundle.params,
        &bundle.kernel,
        &cfg.mc_config(),
    )?;
    let mut table = CsvTable::new("metric,value,std_error,n_samples");
    table.row([
        "delta".into(),
        fmt(est.value),
        fmt(est.std_error),
        cfg.mc.n_outer.to_string(),
    ]);
    table.write(&out_dir.join("delta.csv"))?;
    Ok(written(out_dir, &["delta.csv"]))
}

#[allow(clippy::too_many_arguments)]
fn cmd_hedge(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    kind: KindSection,
    expiry_days: f64,
    strike: Option<f64>,
    n_paths: usize,
    rebalance_days: f64,
    horizon_days: f64,
) -> Result<Written> {
    if n_paths == 0 {
        bail!(ConfigError("--paths must be positive".into()));
    }
    if horizon_days >= expiry_days && kind != KindSection::Underlying {
        bail!(ConfigError(
            "hedge horizon must end before the instrument expiry".into()
        ));
    }
    let bundle = cfg.bundle()?;
    let instrument = build_instrument(kind, expiry_days, strike)?;
    let mc = cfg.mc_config();
    let rebalance = rebalance_days / 365.0;
    // The path step divides the rebalance interval exactly.
    let dt = rebalance / (rebalance / mc.dt).round().max(1.0);
    let paths = simulate_paths(
        &bundle.params,
        &bundle.kernel,
        &bundle.state0,
        horizon_days / 365.0,
        dt,
        n_paths,
        mc.seed,
    )?;
    let mut summary = CsvTable::new("path,terminal_jdelta,terminal_jp,terminal_error");
    let mut series = CsvTable::new("t,jdelta,jp");
    let mut err_sq = 0.0;
    let mut jp_sq = 0.0;
    for (i, path) in paths.iter().enumerate() {
        let mc_path = qrh_mm::pricer::McConfig {
            seed: mc.seed ^ ((i as u64 + 1) << 32),
            ..mc
        };
        let report = hedging_pnl(path, &instrument, &bundle.params, &bundle.kernel, rebalance, &mc_path)?;
        let jd = *report.hedge_pnl.last().unwrap();
        let jp = *report.price_pnl.last().unwrap();
        summary.row([i.to_string(), fmt(jd), fmt(jp), fmt(jd - jp)]);
        err_sq += (jd - jp) * (jd - jp);
        jp_sq += jp * jp;
        if i == 0 {
            for ((t, a), b) in report
                .times
                .iter()
                .zip(&report.hedge_pnl)
                .zip(&report.price_pnl)
            {
                series.row([fmt(*t), fmt(*a), fmt(*b)]);
            }
        }
    }
    summary.write(&out_dir.join("hedge_summary.csv"))?;
    series.write(&out_dir.join("hedge_series_0000.csv"))?;
    let ratio = (err_sq / jp_sq.max(f64::MIN_POSITIVE)).sqrt();
    println!("hedge tracking error ratio std(Jd - Jp)/std(Jp) ~ {ratio:.4}");
    Ok(written(
        out_dir,
        &["hedge_summary.csv", "hedge_series_0000.csv"],
    ))
}

fn parse_times(times: &str) -> Result<Vec<f64>> {
    times
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| ConfigError(format!("bad time {t:?}: {e}")).into())
        })
        .collect()
}

fn cmd_solve_hjb(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    portfolio_risk: bool,
    times: &str,
    steps: Option<usize>,
    spacing: f64,
) -> Result<Written> {
    let spec = cfg.portfolio_spec()?;
    let times = parse_times(times)?;
    let steps = steps.unwrap_or_else(|| spec.default_steps());
    let d = spec.d();

    if portfolio_risk {
        let bound = cfg
            .portfolio
            .risk_bound
            .ok_or_else(|| ConfigError("portfolio.risk_bound required".into()))?;
        let mut spec = spec;
        // The net-risk formulation has no per-asset penalties.
        for asset in &mut spec.assets {
            asset.kappa_j = 0.0;
        }
        let grid = solve_portfolio(&spec, bound, spacing, steps)?;
        for w in &grid.warnings {
            eprintln!("warning: {w}");
        }
        let mut values = CsvTable::new("t,r,theta");
        let mut decisions = CsvTable::new(&decision_header_1d(d));
        for &t in &times {
            let slice = grid.slice_index(t)?;
            let controls = extract_portfolio_controls(&grid, t)?;
            for (i, &r) in grid.r_grid.iter().enumerate() {
                values.row([fmt(t), fmt(r), fmt(grid.values[slice][i])]);
                let mut cells = vec![fmt(t), fmt(r)];
                for j in 0..d {
                    for side in SIDES {
                        cells.push(u8::from(controls[(i * d + j) * 2 + side.index()]).to_string());
                    }
                }
                decisions.row(cells);
            }
        }
        values.write(&out_dir.join("theta_grid.csv"))?;
        decisions.write(&out_dir.join("theta_decisions.csv"))?;
        return Ok(written(out_dir, &["theta_grid.csv", "theta_decisions.csv"]));
    }

    let grid = solve_full(&spec, steps, &HamiltonianKind::Exact)?;
    if grid.stability_load > 1.0 {
        eprintln!(
            "warning: dt load {} exceeds the monotone-scheme bound; increase --steps",
            grid.stability_load
        );
    }
    let mut values = CsvTable::new(&grid_header(d, "v"));
    let mut decisions = CsvTable::new(&decision_header(d));
    for &t in &times {
        let slice = grid.slice_index(t)?;
        let controls = extract_controls(&grid, t)?;
        for node in 0..grid.lattice.n_nodes() {
            let q = grid.lattice.inventory(node);
            let mut cells = vec![fmt(t)];
            cells.extend(q.iter().map(|x| fmt(*x)));
            cells.push(fmt(grid.values[slice][node]));
            values.row(cells);

            let mut cells = vec![fmt(t)];
            cells.extend(q.iter().map(|x| fmt(*x)));
            for j in 0..d {
                for side in SIDES {
                    cells.push(u8::from(controls.get(node, j, side)).to_string());
                }
            }
            decisions.row(cells);
        }
    }
    values.write(&out_dir.join("value_grid.csv"))?;
    decisions.write(&out_dir.join("decisions.csv"))?;
    Ok(written(out_dir, &["value_grid.csv", "decisions.csv"]))
}

fn grid_header(d: usize, value_name: &str) -> String {
    let mut header = String::from("t");
    for j in 1..=d {
        header.push_str(&format!(",q{j}"));
    }
    header.push(',');
    header.push_str(value_name);
    header
}

fn decision_header(d: usize) -> String {
    let mut header = String::from("t");
    for j in 1..=d {
        header.push_str(&format!(",q{j}"));
    }
    for j in 1..=d {
        header.push_str(&format!(",l_{j}b,l_{j}a"));
    }
    header
}

fn decision_header_1d(d: usize) -> String {
    let mut header = String::from("t,r");
    for j in 1..=d {
        header.push_str(&format!(",l_{j}b,l_{j}a"));
    }
    header
}

fn cmd_solve_quadratic(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Written> {
    let spec = cfg.portfolio_spec()?;
    let qspec = QuadraticHamiltonianSpec::default_for(&spec);
    let sol = asymptotic_solution(&spec, &qspec)?;
    let d = spec.d();
    let mut a = CsvTable::new(&(1..=d).map(|j| format!("a{j}")).collect::<Vec<_>>().join(","));
    for i in 0..d {
        a.row((0..d).map(|j| fmt(sol.a[(i, j)])));
    }
    a.write(&out_dir.join("a.csv"))?;
    let mut b = CsvTable::new("b");
    for i in 0..d {
        b.row([fmt(sol.b[i])]);
    }
    b.write(&out_dir.join("b.csv"))?;
    Ok(written(out_dir, &["a.csv", "b.csv"]))
}

fn cmd_decide(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Written> {
    let spec = cfg.portfolio_spec()?;
    let qspec = QuadraticHamiltonianSpec::default_for(&spec);
    let sol = asymptotic_solution(&spec, &qspec)?;
    let lattice = InventoryLattice::new(&spec)
        .map_err(|e| ConfigError(format!("decide needs finite caps: {e}")))?;
    let d = spec.d();
    let mut table = CsvTable::new(&decision_header(d));
    for node in 0..lattice.n_nodes() {
        let q = lattice.inventory(node);
        let mut cells = vec![fmt(0.0)];
        cells.extend(q.iter().map(|x| fmt(*x)));
        for j in 0..d {
            for side in SIDES {
                cells.push(u8::from(greedy_decision(&q, j, side, &sol, &spec)).to_string());
            }
        }
        table.row(cells);
    }
    table.write(&out_dir.join("greedy_decisions.csv"))?;
    Ok(written(out_dir, &["greedy_decisions.csv"]))
}

#[allow(clippy::too_many_arguments)]
fn cmd_backtest(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    paths: Option<usize>,
    kappa_grid: Option<&str>,
    strategies: &[StrategyArg],
    horizon_secs: Option<f64>,
    dump_episodes: bool,
    svg: bool,
) -> Result<Written> {
    let n_paths = paths.unwrap_or(cfg.backtest.n_paths);
    if n_paths == 0 {
        bail!(ConfigError("backtest needs at least one path".into()));
    }
    let kappa_grid = match kappa_grid {
        Some(list) => parse_times(list)?,
        None => cfg.backtest.kappa_grid.clone(),
    };
    if kappa_grid.is_empty() || kappa_grid.iter().any(|k| *k < 0.0) {
        bail!(ConfigError("kappa grid must be non-empty, nonnegative".into()));
    }
    let bundle = cfg.bundle()?;
    let template = cfg.portfolio_spec()?;
    let kinds: Vec<StrategyKind> = strategies.iter().map(|&s| s.into()).collect();
    let recal = if kinds.contains(&StrategyKind::Online) {
        Some(RecalConfig {
            period_secs: cfg.backtest.recal_period_secs,
            mc: cfg.mc_config(),
            instruments: cfg.instruments()?,
        })
    } else {
        None
    };
    let sweep = SweepConfig {
        kappa_grid,
        kappa_split: cfg.backtest.kappa_split,
        n_paths,
        horizon_secs: horizon_secs.unwrap_or(cfg.backtest.horizon_secs),
        engine_dt_secs: cfg.backtest.engine_dt_secs,
        seed: cfg.mc.seed,
        strategies: kinds,
        frozen_controls: cfg.backtest.frozen_controls,
        grid_steps: None,
        recal,
        keep_episodes: dump_episodes,
    };
    let report = sweep_frontier(&bundle, &template, &sweep)?;
    frontier_csv(&report).write(&out_dir.join("frontier.csv"))?;
    let mut files = vec!["frontier.csv"];
    if dump_episodes {
        let mut table = CsvTable::new("kappa,strategy,episode,pnl");
        for (row, pnls) in report.rows.iter().zip(&report.episode_pnls) {
            for (i, pnl) in pnls.iter().enumerate() {
                table.row([
                    fmt(row.kappa),
                    row.strategy.to_string(),
                    i.to_string(),
                    fmt(*pnl),
                ]);
            }
        }
        table.write(&out_dir.join("episodes.csv"))?;
        files.push("episodes.csv");
    }
    if svg || cfg.output.svg {
        write_atomic(&out_dir.join("frontier.svg"), &frontier_svg(&report))?;
        files.push("frontier.svg");
    }
    Ok(written(out_dir, &files))
}
