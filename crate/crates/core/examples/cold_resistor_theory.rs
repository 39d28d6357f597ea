//! Closed-form cold-resistor numbers: effective resistance and temperature
//! for a few loop amplifications, and the steady-state wire moments of each
//! gain situation.
//!
//! Run with `cargo run --example cold_resistor_theory`.

use coldkey::theory::{johnson_spectrum, steady_moments, ColdResistorSpec};

fn main() -> coldkey::Result<()> {
    println!(
        "{:>6} {:>12} {:>10} {:>14}",
        "A", "R_eff_ohm", "T_eff_K", "S_u_V2_per_Hz"
    );
    for (a1, a2) in [(1.0, -1.0), (3.0, -3.0), (5.0, -5.0), (10.0, -10.0)] {
        let c = ColdResistorSpec::new(1_000.0, 300.0, a1, a2)?;
        let (r, t) = (c.effective_resistance(), c.effective_temperature());
        println!(
            "{:>6} {r:>12.3} {t:>10.3} {:>14.4e}",
            c.loop_amplification(),
            johnson_spectrum(t, r)?
        );
    }

    let sigma = 0.96f64;
    println!("\nsteady moments with source rms {sigma} V:");
    for (name, a1, a2) in [
        ("LL", -5.0, -5.0),
        ("LH", -5.0, 5.0),
        ("HL", 5.0, -5.0),
        ("HH", 5.0, 5.0),
    ] {
        let m = steady_moments(a1, a2, sigma * sigma)?;
        let note = if m.unreachable {
            "  (latches: formula not reached)"
        } else {
            ""
        };
        println!(
            "  {name}: <U_A^2> = {:.4}, <U_B^2> = {:.4}, <U_A U_B> = {:+.4}{note}",
            m.msq_a, m.msq_b, m.cross
        );
    }
    Ok(())
}
