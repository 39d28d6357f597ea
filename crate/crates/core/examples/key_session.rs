//! A complete key exchange: random gain choices, simulated wires,
//! classification by correlation sign, and the resulting shared key.
//!
//! Run with `cargo run --release --example key_session`.

use coldkey::circuit::CircuitParams;
use coldkey::noise::NoiseSpec;
use coldkey::protocol::{key_string, run_session, ProtocolConfig, Seeds};

fn main() -> coldkey::Result<()> {
    let protocol = ProtocolConfig {
        n_bep: 400,
        ..Default::default()
    };
    let out = run_session(
        &protocol,
        &CircuitParams::default(),
        &NoiseSpec::default(),
        &Seeds::from_master(1),
        0,
    )?;
    let s = &out.session.summary;
    println!("threshold {:.4} V^2 (calibrated)", s.threshold_volts_sq);
    println!("situations LL/LH/HL/HH: {:?}", s.situation_counts);
    println!(
        "{} BEPs -> {} shared bits (yield {:.3}), {} disagreements",
        s.n_bep, s.shared_bits, s.secure_yield, s.bit_errors
    );
    for r in out.session.records.iter().take(8) {
        println!(
            "  BEP {:>3}: {:?}{:?}  corr {:+10.4}  bit {:?}",
            r.index, r.alice_choice, r.bob_choice, r.correlation_estimate, r.bit
        );
    }
    let key = key_string(&out.session.alice_key);
    println!("key[..64] {}", &key[..key.len().min(64)]);
    assert_eq!(out.session.alice_key, out.session.bob_key);
    Ok(())
}
