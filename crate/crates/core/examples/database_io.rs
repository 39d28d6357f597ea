//! Writes a small transient database to disk, reads it back, and shows the
//! fingerprint check that guards against attacking a different system.
//!
//! Run with `cargo run --release --example database_io`.

use coldkey::attack::{build_database, read_database, write_database, AttackParams, GridSpec};
use coldkey::circuit::CircuitParams;
use coldkey::noise::NoiseSpec;
use std::fs::File;
use std::io::{BufReader, BufWriter};

fn main() -> coldkey::Result<()> {
    let params = AttackParams {
        grid: GridSpec {
            half_width_rms: 1.0,
            spacing_rms: 0.25,
        },
        ..Default::default()
    };
    let (circuit, noise) = (CircuitParams::default(), NoiseSpec::default());
    let db = build_database(&circuit, &noise, &params)?;

    let path = std::env::temp_dir().join("coldkey_example.ckdb");
    write_database(&db, BufWriter::new(File::create(&path)?))?;
    let back = read_database(BufReader::new(File::open(&path)?))?;
    println!(
        "{}: {} bytes, {} templates, fingerprint {}",
        path.display(),
        std::fs::metadata(&path)?.len(),
        back.templates.len(),
        back.fingerprint_hex()
    );
    assert_eq!(back, db);

    back.check_fingerprint(&circuit, &noise)?;
    let other = CircuitParams {
        saturation_volts: 12.0,
        ..circuit
    };
    match back.check_fingerprint(&other, &noise) {
        Err(e) => println!("different system refused: {e}"),
        Ok(()) => unreachable!("fingerprints of different systems collide"),
    }
    std::fs::remove_file(&path)?;
    Ok(())
}
