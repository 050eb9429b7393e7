//! Closed-form and coupling oracles for the Monte-Carlo pricer.

use qrh_mm::kernel::build_kernel_approx;
use qrh_mm::model::{ModelState, QrhParams};
use qrh_mm::pricer::{
    delta, hedging_pnl, price, vix, Instrument, InstrumentKind, McConfig, VixConvention,
};
use qrh_mm::simulate::simulate_paths;

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

fn const_vol_params(c: f64) -> QrhParams {
    QrhParams {
        lambda: 0.0,
        eta: 0.0,
        a: 0.0,
        b: 0.0,
        c,
        mu: 0.0,
    }
}

/// Black-Scholes call with zero rate; the oracle for constant-variance runs.
fn bs_call(s: f64, k: f64, vol: f64, tau: f64) -> f64 {
    let phi = |x: f64| 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let sd = vol * tau.sqrt();
    let d1 = ((s / k).ln() + 0.5 * vol * vol * tau) / sd;
    s * phi(d1) - k * phi(d1 - sd)
}

#[test]
fn put_call_parity_within_combined_errors() {
    let kernel = build_kernel_approx(0.6, 10, 1.0).unwrap();
    let params = example_params();
    let state = ModelState::new(0.0, 3000.0, example_z0()).unwrap();
    let mc = McConfig {
        n_outer: 8000,
        n_inner: 1,
        dt: 1.0 / 2520.0,
        bump_rel: 0.01,
        bump_abs: 0.001,
        seed: 100,
    };
    let expiry = 30.0 / 365.0;
    let strike = 3050.0;
    let call = Instrument::new(InstrumentKind::SpxCall, expiry, Some(strike)).unwrap();
    let put = Instrument::new(InstrumentKind::SpxPut, expiry, Some(strike)).unwrap();
    let c = price(&call, &state, &params, &kernel, &mc).unwrap();
    let p = price(&put, &state, &params, &kernel, &mc).unwrap();
    let gap = (c.value - p.value) - (state.s - strike);
    let combined = (c.std_error * c.std_error + p.std_error * p.std_error).sqrt();
    assert!(
        gap.abs() <= 3.0 * combined,
        "parity gap {gap} vs 3σ {}",
        3.0 * combined
    );
}

#[test]
fn call_prices_are_nonincreasing_in_strike_under_shared_seeds() {
    let kernel = build_kernel_approx(0.6, 10, 1.0).unwrap();
    let params = example_params();
    let state = ModelState::new(0.0, 3000.0, example_z0()).unwrap();
    let mc = McConfig {
        n_outer: 2000,
        n_inner: 1,
        dt: 1.0 / 2520.0,
        bump_rel: 0.01,
        bump_abs: 0.001,
        seed: 101,
    };
    let mut prev = f64::INFINITY;
    for strike in [2900.0, 3000.0, 3100.0] {
        let call = Instrument::new(InstrumentKind::SpxCall, 30.0 / 365.0, Some(strike)).unwrap();
        let est = price(&call, &state, &params, &kernel, &mc).unwrap();
        // Same seed, pointwise-dominated payoffs: the order is exact.
        assert!(est.value <= prev, "price rose with strike {strike}");
        prev = est.value;
    }
}

#[test]
fn vix_is_invariant_under_spot_rescaling() {
    let kernel = build_kernel_approx(0.6, 10, 1.0).unwrap();
    let params = example_params();
    let mc = McConfig {
        n_outer: 1,
        n_inner: 400,
        dt: (30.0 / 365.0) / 50.0,
        bump_rel: 0.01,
        bump_abs: 0.001,
        seed: 102,
    };
    let window = 30.0 / 365.0;
    let base = ModelState::new(0.0, 3000.0, example_z0()).unwrap();
    let scaled = ModelState::new(0.0, 7.5 * 3000.0, example_z0()).unwrap();
    let a = vix(&base, &params, &kernel, window, &mc, VixConvention::Annualized).unwrap();
    let b = vix(&scaled, &params, &kernel, window, &mc, VixConvention::Annualized).unwrap();
    assert_eq!(a.value, b.value);
    assert_eq!(a.std_error, b.std_error);
}

#[test]
fn constant_vol_call_matches_black_scholes() {
    let kernel = build_kernel_approx(0.6, 1, 1.0).unwrap();
    let params = const_vol_params(0.04);
    let state = ModelState::new(0.0, 3000.0, vec![0.0]).unwrap();
    let expiry = 30.0 / 365.0;
    let mc = McConfig {
        n_outer: 40_000,
        n_inner: 1,
        dt: expiry / 30.0,
        bump_rel: 0.01,
        bump_abs: 0.001,
        seed: 103,
    };
    for strike in [2800.0, 3000.0, 3200.0] {
        let call = Instrument::new(InstrumentKind::SpxCall, expiry, Some(strike)).unwrap();
        let est = price(&call, &state, &params, &kernel, &mc).unwrap();
        let oracle = bs_call(3000.0, strike, 0.2, expiry);
        assert!(
            (est.value - oracle).abs() <= 3.0 * est.std_error,
            "K={strike}: mc {} vs bs {oracle} (3σ = {})",
            est.value,
            3.0 * est.std_error
        );
    }
}

#[test]
fn delta_standard_error_halves_when_outer_quadruples() {
    let kernel = build_kernel_approx(0.6, 3, 1.0).unwrap();
    let params = QrhParams {
        lambda: 1.7,
        eta: 1.5,
        a: 0.265,
        b: 0.246,
        c: 0.0001,
        mu: 0.0,
    };
    let state = ModelState::new(0.0, 3000.0, vec![0.05, -0.02, 0.01]).unwrap();
    let call = Instrument::new(InstrumentKind::SpxCall, 30.0 / 365.0, Some(3000.0)).unwrap();
    let base = McConfig {
        n_outer: 2000,
        n_inner: 1,
        dt: 1.0 / 1460.0,
        bump_rel: 0.01,
        bump_abs: 0.001,
        seed: 104,
    };
    let coarse = delta(&call, &state, &params, &kernel, &base).unwrap();
    let fine = delta(
        &call,
        &state,
        &params,
        &kernel,
        &McConfig {
            n_outer: 8000,
            ..base
        },
    )
    .unwrap();
    let ratio = fine.std_error / coarse.std_error;
    assert!(
        (ratio - 0.5).abs() <= 0.15,
        "se ratio {ratio} strays from 1/2"
    );
    // The two estimates agree within their noise.
    let combined = (coarse.std_error.powi(2) + fine.std_error.powi(2)).sqrt();
    assert!((coarse.value - fine.value).abs() <= 4.0 * combined);
}

#[test]
fn complete_market_hedge_error_vanishes_with_rebalance_frequency() {
    // λ = η = 0 with a = 0: constant volatility, the hedge is exact in the
    // continuous limit, so halving the rebalance interval must shrink the
    // across-path tracking error materially.
    let kernel = build_kernel_approx(0.6, 1, 1.0).unwrap();
    let params = const_vol_params(0.04);
    let state = ModelState::new(0.0, 3000.0, vec![0.0]).unwrap();
    let day = 1.0 / 365.0;
    let dt = day / 4.0;
    let horizon = 20.0 * day;
    let expiry = 30.0 * day;
    let call = Instrument::new(InstrumentKind::SpxCall, expiry, Some(3000.0)).unwrap();
    let n_paths = 32;
    let paths = simulate_paths(&params, &kernel, &state, horizon, dt, n_paths, 105).unwrap();
    let mc = McConfig {
        n_outer: 1500,
        n_inner: 1,
        dt,
        bump_rel: 0.01,
        bump_abs: 0.001,
        seed: 105,
    };
    let std_of = |rebalance: f64| {
        let errs: Vec<f64> = paths
            .iter()
            .map(|p| {
                hedging_pnl(p, &call, &params, &kernel, rebalance, &mc)
                    .unwrap()
                    .terminal_error
            })
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (errs.len() - 1) as f64)
            .sqrt()
    };
    let daily = std_of(day);
    let quarter_daily = std_of(day / 4.0);
    assert!(
        quarter_daily <= 0.75 * daily,
        "hedge error did not shrink: daily {daily}, quarter-daily {quarter_daily}"
    );
}
