use std::f64::consts::TAU;

use hjks_core::quantum::{
    density_decay_ks, evolve, field_at, quantum_ks, trace_mb_orbit, unitarity_drift, OrbitOptions, Rotor, WaveState,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn norm_is_conserved_over_ten_thousand_periods(k in 0.5..8.0f64, center in 0.0..TAU, width in 0.2..1.0f64) {
        let psi = WaveState::gaussian(2048, 1.0, center, width).unwrap();
        let drift = unitarity_drift(&psi, Rotor { strength: k, period: 1.0 }, 10_000).unwrap();
        prop_assert!(drift <= 1e-10, "drift {}", drift);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn grid_doubling_leaves_fields_unchanged(k in 0.2..2.0f64, center in 0.0..TAU, q in 0.0..TAU, t in 0.0..5.0f64) {
        let rotor = Rotor { strength: k, period: 1.0 };
        let coarse = evolve(&WaveState::gaussian(256, 1.0, center, 0.6).unwrap(), rotor, 5, 8).unwrap();
        let fine = evolve(&WaveState::gaussian(512, 1.0, center, 0.6).unwrap(), rotor, 5, 8).unwrap();
        let (a, b) = (field_at(&coarse, q, t), field_at(&fine, q, t));
        prop_assert!((a.density - b.density).abs() < 1e-8 * a.density.max(1e-3));
        if a.density > 1e-3 {
            prop_assert!((a.v - b.v).abs() < 1e-6, "v {} vs {}", a.v, b.v);
        }
    }

    #[test]
    fn mb_orbit_satisfies_the_density_identity(k in 0.5..5.0f64, q0 in 0.0..TAU) {
        let rotor = Rotor { strength: k, period: 1.0 };
        let evo = evolve(&WaveState::uniform(256, 1.0).unwrap(), rotor, 20, 16).unwrap();
        let orbit = match trace_mb_orbit(&evo, q0, &OrbitOptions { substeps: 16, tolerance: 1e-9 }) {
            Ok(o) => o,
            Err(_) => return Ok(()),
        };
        let k_mb = quantum_ks(&orbit, None).unwrap().k;
        let k_density = density_decay_ks(&orbit).unwrap();
        prop_assert!((k_mb - k_density).abs() < 1e-4, "{} vs {}", k_mb, k_density);
    }
}
