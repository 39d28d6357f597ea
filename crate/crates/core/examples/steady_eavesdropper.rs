//! An eavesdropper who only sees the public correlation estimates. She can
//! spot the discarded `LL`/`HH` periods but has to guess every key bit.
//!
//! Run with `cargo run --release --example steady_eavesdropper`.

use coldkey::attack::{steady_eve, truth_from_session, AttackMode, AttackReport};
use coldkey::circuit::CircuitParams;
use coldkey::noise::NoiseSpec;
use coldkey::protocol::{run_session, ProtocolConfig, Seeds};

fn main() -> coldkey::Result<()> {
    let protocol = ProtocolConfig {
        n_bep: 2000,
        ..Default::default()
    };
    let seeds = Seeds::from_master(3);
    let out = run_session(
        &protocol,
        &CircuitParams::default(),
        &NoiseSpec::default(),
        &seeds,
        0,
    )?;
    let corr: Vec<f64> = out
        .session
        .records
        .iter()
        .map(|r| r.correlation_estimate)
        .collect();
    let guesses = steady_eve(
        &corr,
        out.session.summary.threshold_volts_sq,
        &protocol.truth_table,
        seeds.eve,
    );
    let report = AttackReport::score(
        AttackMode::Steady,
        guesses,
        truth_from_session(&out.session),
    )?;
    let e = report.evaluation;
    println!(
        "{} of {} key bits right = {:.4}, 95% CI [{:.4}, {:.4}], p = {:.3}",
        e.correct, e.n, e.accuracy, e.wilson_low, e.wilson_high, e.p_value
    );
    Ok(())
}
