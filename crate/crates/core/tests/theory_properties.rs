use coldkey::theory::{
    cold_effective_resistance, cold_effective_temperature, effective_temperature, expected_sign,
    johnson_spectrum, kljn_parallel, kljn_wire_msq, loop_amplification, steady_moments,
    steady_moments_general, ColdResistorSpec, Sign,
};
use coldkey::BOLTZMANN;
use proptest::prelude::*;

/// Solves the stationary linear loop `U_A = u1 + a1 U_B`, `U_B = u2 + a2 U_A`
/// directly for its moments, as an oracle for the closed forms.
fn linear_loop_moments(a1: f64, a2: f64, v1: f64, v2: f64, c12: f64) -> (f64, f64, f64) {
    // [U_A, U_B] = M [u1, u2] with M = [[1, a1], [a2, 1]] / (1 - a1 a2).
    let d = 1.0 - a1 * a2;
    let m = [[1.0 / d, a1 / d], [a2 / d, 1.0 / d]];
    let cov = [[v1, c12], [c12, v2]];
    let quad = |r: usize, s: usize| {
        let mut acc = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                acc += m[r][i] * cov[i][j] * m[s][j];
            }
        }
        acc
    };
    (quad(0, 0), quad(1, 1), quad(0, 1))
}

fn gain() -> impl Strategy<Value = f64> {
    prop_oneof![-20.0f64..-0.05, 0.05f64..20.0]
}

proptest! {
    #[test]
    fn moments_match_linear_solve(a1 in gain(), a2 in gain(), v1 in 0.01f64..10.0, v2 in 0.01f64..10.0, rho in -0.9f64..0.9) {
        prop_assume!((1.0 - a1 * a2).abs() > 1e-3);
        let c12 = rho * (v1 * v2).sqrt();
        let m = steady_moments_general(a1, a2, v1, v2, c12).unwrap();
        let (msq_a, msq_b, cross) = linear_loop_moments(a1, a2, v1, v2, c12);
        let tol = 1e-10 * (msq_a.abs() + msq_b.abs());
        prop_assert!((m.msq_a - msq_a).abs() <= tol);
        prop_assert!((m.msq_b - msq_b).abs() <= tol);
        prop_assert!((m.cross - cross).abs() <= tol);
        prop_assert_eq!(m.unreachable, a1 * a2 > 1.0);
    }

    #[test]
    fn moments_obey_cauchy_schwarz(a1 in gain(), a2 in gain(), s in 0.01f64..10.0) {
        prop_assume!((1.0 - a1 * a2).abs() > 1e-3);
        let m = steady_moments(a1, a2, s).unwrap();
        prop_assert!(m.msq_a > 0.0 && m.msq_b > 0.0);
        prop_assert!(m.cross * m.cross <= m.msq_a * m.msq_b * (1.0 + 1e-12));
    }

    #[test]
    fn swapping_gains_swaps_wires(a1 in gain(), a2 in gain(), s in 0.01f64..10.0) {
        prop_assume!((1.0 - a1 * a2).abs() > 1e-3);
        let m = steady_moments(a1, a2, s).unwrap();
        let w = steady_moments(a2, a1, s).unwrap();
        prop_assert_eq!(m.msq_a, w.msq_b);
        prop_assert_eq!(m.msq_b, w.msq_a);
        prop_assert!((m.cross - w.cross).abs() <= 1e-12 * m.cross.abs().max(1e-300));
    }

    #[test]
    fn moments_scale_with_source_variance(a1 in gain(), a2 in gain(), s in 0.01f64..10.0, k in 0.1f64..10.0) {
        prop_assume!((1.0 - a1 * a2).abs() > 1e-3);
        let m = steady_moments(a1, a2, s).unwrap();
        let n = steady_moments(a1, a2, k * s).unwrap();
        for (x, y) in [(m.msq_a, n.msq_a), (m.msq_b, n.msq_b), (m.cross, n.cross)] {
            prop_assert!((k * x - y).abs() <= 1e-12 * y.abs().max(1e-300));
        }
    }

    #[test]
    fn cross_sign_follows_gain_sum(a1 in gain(), a2 in gain()) {
        prop_assume!((1.0 - a1 * a2).abs() > 1e-3 && (a1 + a2).abs() > 1e-6);
        let m = steady_moments(a1, a2, 1.0).unwrap();
        let want = if a1 + a2 > 0.0 { Sign::Positive } else { Sign::Negative };
        prop_assert_eq!(expected_sign(a1, a2), want);
        prop_assert_eq!(m.cross > 0.0, want == Sign::Positive);
    }

    #[test]
    fn cold_resistor_identities(r0 in 1.0f64..1e6, t in 1.0f64..1000.0, a1 in 0.01f64..50.0, a2 in -50.0f64..-0.01) {
        let spec = ColdResistorSpec::new(r0, t, a1, a2).unwrap();
        let a = loop_amplification(a1, a2).unwrap();
        prop_assert_eq!(a, spec.loop_amplification());
        let r = spec.effective_resistance();
        let te = spec.effective_temperature();
        // Resistance and temperature are cooled by the same factor.
        prop_assert!((r / r0 - te / t).abs() <= 1e-14);
        prop_assert!((r * (1.0 + a) - r0).abs() <= 1e-12 * r0);
        prop_assert_eq!(te, cold_effective_temperature(t, a));
        prop_assert_eq!(r, cold_effective_resistance(r0, a));
        // The Johnson spectrum of R_eff at T_eff reads back as T_eff.
        let s = johnson_spectrum(te, r).unwrap();
        prop_assert!((effective_temperature(s, r).unwrap() / te - 1.0).abs() <= 1e-12);
        prop_assert!((s / (4.0 * BOLTZMANN * t * r0) - 1.0 / ((1.0 + a) * (1.0 + a))).abs() <= 1e-12);
    }

    #[test]
    fn kljn_parallel_is_symmetric_and_bounded(ra in 1.0f64..1e6, rb in 1.0f64..1e6, t in 1.0f64..1e4, df in 1.0f64..1e6) {
        let p = kljn_parallel(ra, rb).unwrap();
        prop_assert_eq!(p, kljn_parallel(rb, ra).unwrap());
        prop_assert!(p <= ra.min(rb) && p >= ra.min(rb) / 2.0 * (1.0 - 1e-12));
        prop_assert!((1.0 / p - 1.0 / ra - 1.0 / rb).abs() <= 1e-12 / p);
        let msq = kljn_wire_msq(t, p, df).unwrap();
        prop_assert!((msq - johnson_spectrum(t, p).unwrap() * df).abs() <= 1e-12 * msq);
    }
}

#[test]
fn non_negative_loop_products_are_rejected() {
    assert!(loop_amplification(1.0, 1.0).is_err());
    assert!(loop_amplification(0.0, -1.0).is_err());
    assert!(ColdResistorSpec::new(1000.0, 300.0, -2.0, -2.0).is_err());
    assert!(steady_moments(1.0, 1.0, 1.0).is_err());
}
