//! How a gradual gain change alters the switching transient that the
//! attack relies on. Prints, for several ramp durations, how far the
//! transient moves away from the abrupt-step one and its steepest edge.
//!
//! This is a report only; it makes no claim about which profile is safer.
//!
//! Run with `cargo run --release --example ramp_softening`.

use coldkey::circuit::{frozen_transient, CircuitParams, GainPair, SwitchingProfile};
use coldkey::noise::NoiseSpec;

fn main() -> coldkey::Result<()> {
    let dt = CircuitParams::default().dt(NoiseSpec::default().sample_rate_hz);
    let (pre, post) = (GainPair::new(-5.0, 5.0), GainPair::new(5.0, -5.0));
    let (v_a0, v_b0) = (0.3, -0.2);
    let k = 256;
    let step = frozen_transient(v_a0, v_b0, pre, post, &CircuitParams::default(), dt, k)?;
    println!(
        "{:>10} {:>14} {:>14} {:>12}",
        "ramp_us", "max_dev_v", "max_slope_v", "final_v_ab"
    );
    for ramp_us in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let p = CircuitParams {
            switching_profile: SwitchingProfile::Ramp {
                duration_s: ramp_us * 1e-6,
            },
            ..Default::default()
        };
        let tr = frozen_transient(v_a0, v_b0, pre, post, &p, dt, k)?;
        let dev = tr
            .v_ab
            .iter()
            .zip(&step.v_ab)
            .chain(tr.v_ba.iter().zip(&step.v_ba))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let slope = tr
            .v_ab
            .windows(2)
            .fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs()));
        println!(
            "{ramp_us:>10.1} {dev:>14.4} {slope:>14.4} {:>12.4}",
            tr.v_ab[k - 1]
        );
    }
    Ok(())
}
