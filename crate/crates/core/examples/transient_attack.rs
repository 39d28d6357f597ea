//! The switching-transient attack: build a template database, record the
//! wires right after every boundary, and match each recording.
//!
//! Run with `cargo run --release --example transient_attack`.

use coldkey::attack::{
    build_database, transient_attack, truth_from_session, AttackMode, AttackParams, AttackReport,
    Observation,
};
use coldkey::circuit::CircuitParams;
use coldkey::noise::NoiseSpec;
use coldkey::protocol::{run_session, ProtocolConfig, Seeds};
use std::time::Instant;

fn main() -> coldkey::Result<()> {
    let (circuit, noise, params) = (
        CircuitParams::default(),
        NoiseSpec::default(),
        AttackParams::default(),
    );
    let t = Instant::now();
    let db = build_database(&circuit, &noise, &params)?;
    println!(
        "database: {} templates stored for {} lattice points, {} samples each, ceiling {:.3} V^2 ({:.1} s)",
        db.templates.len(),
        db.implied_len(),
        db.k_samples,
        db.abstention_ceiling,
        t.elapsed().as_secs_f64()
    );

    let protocol = ProtocolConfig {
        n_bep: 600,
        ..Default::default()
    };
    let seeds = Seeds::from_master(5);
    let out = run_session(&protocol, &circuit, &noise, &seeds, db.k_samples)?;
    let threshold = out.session.summary.threshold_volts_sq;
    let corr = out
        .session
        .records
        .iter()
        .map(|r| r.correlation_estimate)
        .collect();
    let obs = Observation::new(corr, &out.archive);
    let guesses = transient_attack(
        &obs,
        &db,
        &params,
        threshold,
        &protocol.truth_table,
        seeds.eve,
    )?;
    let report = AttackReport::score(
        AttackMode::Transient,
        guesses,
        truth_from_session(&out.session),
    )?;
    print!("{}", report.to_text());
    Ok(())
}
