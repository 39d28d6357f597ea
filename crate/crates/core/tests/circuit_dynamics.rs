use coldkey::circuit::{
    frozen_transient, steady_consistent_state, CircuitParams, GainPair, LoopSimulator, TraceRequest,
};
use coldkey::noise::{NoiseSource, NoiseSpec};
use coldkey::stats;
use coldkey::theory::steady_moments_general;
use proptest::prelude::*;

const L: f64 = -5.0;
const H: f64 = 5.0;

fn dt(p: &CircuitParams) -> f64 {
    p.dt(NoiseSpec::default().sample_rate_hz)
}

#[test]
fn secure_moments_agree_with_linear_theory() {
    let noise = NoiseSpec::default();
    let circuit = CircuitParams::default();
    let gain = noise.calibration_gain();
    let (s1, s2) = (
        NoiseSource::with_gain(noise, 21, gain),
        NoiseSource::with_gain(noise, 22, gain),
    );
    let (mut r1, mut r2) = (s1.clone(), s2.clone());
    let mut sim = LoopSimulator::new(circuit, s1, s2, GainPair::new(L, H)).unwrap();
    let hold = circuit.internal_oversample;
    sim.run_segment((1000 * hold) as u64, TraceRequest::default())
        .unwrap();
    r1.take(1000);
    r2.take(1000);

    // Sample once per noise draw, right before the next one lands.
    let (batches, per_batch) = (40, 5000);
    let mut msq = Vec::new();
    let (mut u11, mut u22, mut u12) = (0.0, 0.0, 0.0);
    for _ in 0..batches {
        let tr = sim
            .run_segment(
                (per_batch * hold) as u64,
                TraceRequest {
                    decimation: hold,
                    full_prefix: 0,
                },
            )
            .unwrap()
            .decimated;
        msq.push(tr.v_ab.iter().map(|v| v * v).sum::<f64>() / tr.len() as f64);
        for _ in 0..per_batch {
            let (x, y) = (r1.next_noise(), r2.next_noise());
            u11 += x * x;
            u22 += y * y;
            u12 += x * y;
        }
    }
    let m = (batches * per_batch) as f64;
    let theory = steady_moments_general(L, H, u11 / m, u22 / m, u12 / m).unwrap();
    let (mean, se) = (
        stats::mean(&msq),
        stats::std_dev(&msq) / (batches as f64).sqrt(),
    );
    assert!(
        (mean - theory.msq_a).abs() < 3.0 * se,
        "{mean} vs {} (se {se})",
        theory.msq_a
    );
}

#[test]
fn same_seeds_reproduce_the_trace() {
    let run = || {
        let noise = NoiseSpec::default();
        let gain = noise.calibration_gain();
        let mut sim = LoopSimulator::new(
            CircuitParams::default(),
            NoiseSource::with_gain(noise, 5, gain),
            NoiseSource::with_gain(noise, 6, gain),
            GainPair::new(H, L),
        )
        .unwrap();
        let a = sim.run_for(1e-4, 64).unwrap();
        sim.switch_to(GainPair::new(H, H));
        let b = sim.run_for(1e-4, 64).unwrap();
        (a, b)
    };
    assert_eq!(run(), run());
}

#[test]
fn positive_loop_latches_and_negative_loop_does_not() {
    let noise = NoiseSpec::default();
    let gain = noise.calibration_gain();
    let rail = CircuitParams::default().saturation_volts;
    for (gains, latched) in [
        (GainPair::new(H, H), true),
        (GainPair::new(L, L), true),
        (GainPair::new(L, H), false),
    ] {
        let mut sim = LoopSimulator::new(
            CircuitParams::default(),
            NoiseSource::with_gain(noise, 7, gain),
            NoiseSource::with_gain(noise, 8, gain),
            gains,
        )
        .unwrap();
        let tr = sim.run_for(2e-3, 64).unwrap();
        let tail = &tr.v_ab[tr.len() / 2..];
        let peak = tail.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(peak > rail - 5.0, latched, "{gains:?}: peak {peak}");
    }
}

#[test]
fn frozen_transient_settles_on_the_linear_fixed_point() {
    let p = CircuitParams::default();
    let (v_a0, v_b0) = (0.4, -0.3);
    let pre = GainPair::new(L, H);
    let post = GainPair::new(H, L);
    let s = steady_consistent_state(v_a0, v_b0, pre, p.saturation_volts);
    let tr = frozen_transient(v_a0, v_b0, pre, post, &p, dt(&p), 2000).unwrap();
    // U_A = u1 + a1 U_B and U_B = u2 + a2 U_A with the noise held.
    let d = 1.0 - post.a1 * post.a2;
    let want_a = (s.u1 + post.a1 * s.u2) / d;
    let want_b = (s.u2 + post.a2 * s.u1) / d;
    let n = tr.len() - 1;
    assert!((tr.v_ab[n] - want_a).abs() < 1e-9 && (tr.v_ba[n] - want_b).abs() < 1e-9);
    assert_eq!((tr.v_ab[0], tr.v_ba[0]), (v_a0, v_b0));
}

fn situation() -> impl Strategy<Value = GainPair> {
    prop_oneof![
        Just(GainPair::new(L, L)),
        Just(GainPair::new(L, H)),
        Just(GainPair::new(H, L)),
        Just(GainPair::new(H, H)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mirrored_transient_is_the_wire_swap(
        a in -16.0f64..16.0, b in -16.0f64..16.0, pre in situation(), post in situation()
    ) {
        let p = CircuitParams::default();
        let t = frozen_transient(a, b, pre, post, &p, dt(&p), 64).unwrap();
        let m = frozen_transient(b, a, pre.swapped(), post.swapped(), &p, dt(&p), 64).unwrap();
        prop_assert_eq!(t.wire_swapped(), m);
    }

    #[test]
    fn halving_the_step_barely_moves_transients(
        a in -3.0f64..3.0, b in -3.0f64..3.0, pre in situation(), post in situation()
    ) {
        let coarse_p = CircuitParams::default();
        let fine_p = CircuitParams { internal_oversample: 2 * coarse_p.internal_oversample, ..coarse_p };
        let coarse = frozen_transient(a, b, pre, post, &coarse_p, dt(&coarse_p), 64).unwrap();
        let fine = frozen_transient(a, b, pre, post, &fine_p, dt(&fine_p), 127).unwrap();
        let scale = coarse.v_ab.iter().chain(&coarse.v_ba).fold(1e-3f64, |m, v| m.max(v.abs()));
        for n in 0..64 {
            let e = (coarse.v_ab[n] - fine.v_ab[2 * n]).abs().max((coarse.v_ba[n] - fine.v_ba[2 * n]).abs());
            prop_assert!(e <= 5e-3 * scale, "sample {}: {} of {}", n, e, scale);
        }
    }
}
