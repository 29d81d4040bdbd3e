use hjks_core::matkernel::{
    log_abs_det, phase_functions_direct, phase_functions_inverted, shift_phase, sym_eigen, SymMatrix,
};
use proptest::prelude::*;

fn sym(max_n: usize, scale: f64) -> impl Strategy<Value = SymMatrix> {
    (1..=max_n).prop_flat_map(move |n| {
        prop::collection::vec(-scale..scale, n * (n + 1) / 2)
            .prop_map(move |packed| SymMatrix::from_packed(n, packed).unwrap())
    })
}

fn dist(a: &SymMatrix, b: &SymMatrix) -> f64 {
    (a - b).frobenius_norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn eigen_reconstructs(m in sym(5, 10.0)) {
        let e = sym_eigen(&m).unwrap();
        prop_assert!(dist(&e.reconstruct(), &m) <= 1e-12 * m.frobenius_norm().max(1.0));
        prop_assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
        let q = &e.vectors;
        let qtq = q.transpose().mul(q);
        for i in 0..m.order() {
            for j in 0..m.order() {
                let delta = if i == j { 1.0 } else { 0.0 };
                prop_assert!((qtq.get(i, j) - delta).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_phase_matches_eigen_form(sigma in sym(4, 5.0)) {
        let e = sym_eigen(&sigma).unwrap();
        let (sin, cos) = phase_functions_direct(&sigma);
        prop_assert!(dist(&sin, &e.reconstruct_with(|s| -2.0 * s / (1.0 + s * s))) < 1e-12);
        prop_assert!(dist(&cos, &e.reconstruct_with(|s| (1.0 - s * s) / (1.0 + s * s))) < 1e-12);
    }

    #[test]
    fn representations_agree(sigma in sym(4, 5.0)) {
        let e = sym_eigen(&sigma).unwrap();
        prop_assume!(e.values.iter().all(|v| v.abs() > 1e-2));
        let (s1, c1) = phase_functions_direct(&sigma);
        let (s2, c2) = phase_functions_inverted(&sigma.inverse().unwrap());
        prop_assert!(dist(&s1, &s2) + dist(&c1, &c2) < 1e-9);
    }

    #[test]
    fn phase_functions_are_bounded_and_unit(sigma in sym(4, 50.0)) {
        let (sin, cos) = phase_functions_direct(&sigma);
        for m in [&sin, &cos] {
            let v = sym_eigen(m).unwrap().values;
            prop_assert!(v.iter().all(|x| x.abs() <= 1.0 + 1e-12));
        }
        // sin² + cos² = I since both are functions of the same σ
        let sum = &sin.square() + &cos.square();
        prop_assert!(dist(&sum, &SymMatrix::identity(sigma.order())) < 1e-10);
    }

    #[test]
    fn quarter_turn_shift_negates(sigma in sym(3, 5.0)) {
        let (sin, cos) = phase_functions_direct(&sigma);
        let (s, c) = shift_phase(&sin, &cos, std::f64::consts::FRAC_PI_2);
        prop_assert!(dist(&s, &sin.scale(-1.0)) < 1e-12);
        prop_assert!(dist(&c, &cos.scale(-1.0)) < 1e-12);
    }

    #[test]
    fn log_abs_det_is_sum_of_log_eigenvalues(m in sym(5, 3.0)) {
        let e = sym_eigen(&m).unwrap();
        prop_assume!(e.values.iter().all(|v| v.abs() > 1e-6));
        let expected: f64 = e.values.iter().map(|v| v.abs().ln()).sum();
        let got = log_abs_det(&m.to_dense()).unwrap();
        prop_assert!((got - expected).abs() < 1e-9 * expected.abs().max(1.0));
    }
}
