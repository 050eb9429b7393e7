//! Property tests for the structural invariants that hold on every input.

use nalgebra::DMatrix;
use proptest::prelude::*;
use qrh_mm::hjb::hamiltonian;
use qrh_mm::kernel::build_kernel_approx;
use qrh_mm::quad::{approx_hamiltonian, psd_sqrt};

proptest! {
    #[test]
    fn hamiltonian_is_nonnegative_and_decreasing(
        p1 in -10.0f64..10.0,
        p2 in -10.0f64..10.0,
        intensity in 0.0f64..5.0,
        tick in 1e-3f64..1.0,
    ) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let h_lo = hamiltonian(lo, intensity, tick);
        let h_hi = hamiltonian(hi, intensity, tick);
        prop_assert!(h_lo >= 0.0 && h_hi >= 0.0);
        prop_assert!(h_lo >= h_hi);
        // Past half a tick the execution gain is gone.
        prop_assert_eq!(hamiltonian(0.5 * tick + 1e-12, intensity, tick), 0.0);
    }

    #[test]
    fn surrogate_matches_value_and_slope_at_zero(
        intensity in 1e-3f64..5.0,
        tick in 1e-3f64..1.0,
        curvature in 1e-2f64..50.0,
    ) {
        prop_assert_eq!(
            approx_hamiltonian(0.0, intensity, tick, curvature),
            hamiltonian(0.0, intensity, tick)
        );
        let h = 1e-7;
        let slope = (approx_hamiltonian(h, intensity, tick, curvature)
            - approx_hamiltonian(-h, intensity, tick, curvature)) / (2.0 * h);
        prop_assert!((slope + intensity).abs() <= 1e-6 * intensity.max(1.0));
    }

    #[test]
    fn kernel_construction_invariants(
        alpha in 0.51f64..0.99,
        n in 1usize..12,
        horizon in 0.1f64..5.0,
    ) {
        let k = build_kernel_approx(alpha, n, horizon).unwrap();
        prop_assert!(k.weights().iter().all(|&c| c > 0.0));
        prop_assert!(k.rates().windows(2).all(|w| w[0] < w[1]));
        for i in 0..40 {
            let t = horizon * (i as f64 + 0.5) / 40.0;
            prop_assert!(k.eval(t) > 0.0);
        }
    }

    #[test]
    fn psd_sqrt_squares_back(values in prop::collection::vec(-2.0f64..2.0, 9)) {
        // M = G Gᵀ + εI is symmetric positive definite by construction.
        let g = DMatrix::from_row_slice(3, 3, &values);
        let m = &g * g.transpose() + DMatrix::identity(3, 3) * 1e-6;
        let root = psd_sqrt(&m).unwrap();
        let err = (&root * &root - &m).norm();
        prop_assert!(err <= 1e-10 * m.norm().max(1.0), "residual {err}");
    }
}
