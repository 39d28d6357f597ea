//! Runs the loop in the secure `LH` situation and compares measured wire
//! moments with the linear-theory prediction.
//!
//! Run with `cargo run --release --example steady_state_moments`.

use coldkey::circuit::{CircuitParams, GainPair, LoopSimulator};
use coldkey::noise::{NoiseSource, NoiseSpec};
use coldkey::stats;
use coldkey::theory::steady_moments;

fn main() -> coldkey::Result<()> {
    let noise = NoiseSpec::default();
    let circuit = CircuitParams::default();
    let gain = noise.calibration_gain();
    let mut sim = LoopSimulator::new(
        circuit,
        NoiseSource::with_gain(noise, 1, gain),
        NoiseSource::with_gain(noise, 2, gain),
        GainPair::new(-5.0, 5.0),
    )?;
    sim.run_for(4e-3, 64)?;
    let tr = sim.run_for(1.5, 64)?;
    let msq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64;
    let cross = tr
        .v_ab
        .iter()
        .zip(&tr.v_ba)
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / tr.len() as f64;
    let want = steady_moments(-5.0, 5.0, noise.target_rms_volts.powi(2))?;
    println!("{} samples at {:.0} Hz", tr.len(), 1.0 / tr.period_s);
    println!(
        "<U_A^2>   measured {:.4}  theory {:.4}",
        msq(&tr.v_ab),
        want.msq_a
    );
    println!(
        "<U_B^2>   measured {:.4}  theory {:.4}",
        msq(&tr.v_ba),
        want.msq_b
    );
    println!(
        "<U_A U_B> measured {:+.4}  theory {:+.4}",
        cross, want.cross
    );
    println!(
        "correlation coefficient {:+.4}",
        stats::correlation(&tr.v_ab, &tr.v_ba)
    );
    Ok(())
}
