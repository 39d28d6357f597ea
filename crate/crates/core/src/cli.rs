//! The batch commands behind the `coldkey` binary.
//!
//! Each command takes a validated [`RunConfig`] and writes its artifacts into
//! a run directory. They live in the library so they can be driven and
//! tested without spawning processes.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::acceptance::{self, CheckResult};
use crate::attack::{
    self, build_database, read_database, steady_eve, transient_attack, write_database,
    write_database_csv, AttackMode, AttackReport, Observation, TransientDatabase,
};
use crate::circuit::{TraceRate, WireTrace};
use crate::config::{Manifest, RunConfig, MANIFEST_FILE};
use crate::protocol::{
    key_string, read_session_csv, run_session, write_session_csv, BitSituation, KeySession,
    SessionOutput,
};
use crate::theory::{
    cold_effective_resistance, cold_effective_temperature, expected_sign, johnson_spectrum,
    kljn_parallel, kljn_wire_msq, loop_amplification, steady_moments, Sign,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAULT: i32 = 3;
pub const EXIT_FINGERPRINT: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Calibration(_) => EXIT_VALIDATION,
        Error::Fault { .. } => EXIT_FAULT,
        Error::FingerprintMismatch { .. } => EXIT_FINGERPRINT,
        _ => EXIT_CONFIG,
    }
}

/// Series resistor and ambient temperature of the reference cold resistor
/// reported by `theory`.
pub const REFERENCE_R0_OHM: f64 = 1_000.0;
pub const REFERENCE_T_KELVIN: f64 = 300.0;
/// Low and high resistors of the reference KLJN pair.
pub const REFERENCE_KLJN_OHM: (f64, f64) = (100.0, 500.0);

pub const THEORY_CSV_HEADER: &str = "section,label,quantity,value,unit";

fn sign_value(s: Sign) -> i32 {
    match s {
        Sign::Negative => -1,
        Sign::Zero => 0,
        Sign::Positive => 1,
    }
}

/// Closed-form reference values as long-format CSV.
pub fn cmd_theory(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let mut s = String::new();
    let mut row = |section: &str, label: &str, quantity: &str, value: String, unit: &str| {
        let _ = writeln!(s, "{section},{label},{quantity},{value},{unit}");
    };
    let mag = cfg.circuit.gain_magnitude;
    let a_loop = loop_amplification(-mag, mag)?;
    let r_eff = cold_effective_resistance(REFERENCE_R0_OHM, a_loop);
    let t_eff = cold_effective_temperature(REFERENCE_T_KELVIN, a_loop);
    row(
        "cold_resistor",
        "reference",
        "r0",
        REFERENCE_R0_OHM.to_string(),
        "ohm",
    );
    row(
        "cold_resistor",
        "reference",
        "t_ambient",
        REFERENCE_T_KELVIN.to_string(),
        "K",
    );
    row(
        "cold_resistor",
        "reference",
        "loop_amplification",
        a_loop.to_string(),
        "",
    );
    row(
        "cold_resistor",
        "reference",
        "r_eff",
        r_eff.to_string(),
        "ohm",
    );
    row(
        "cold_resistor",
        "reference",
        "t_eff",
        t_eff.to_string(),
        "K",
    );
    row(
        "johnson",
        "ambient",
        "spectrum",
        johnson_spectrum(REFERENCE_T_KELVIN, REFERENCE_R0_OHM)?.to_string(),
        "V^2/Hz",
    );
    row(
        "johnson",
        "cold",
        "spectrum",
        johnson_spectrum(t_eff, r_eff)?.to_string(),
        "V^2/Hz",
    );

    let (rl, rh) = REFERENCE_KLJN_OHM;
    let bw = cfg.noise.cutoff_hz;
    for (label, ra, rb) in [
        ("LL", rl, rl),
        ("LH", rl, rh),
        ("HL", rh, rl),
        ("HH", rh, rh),
    ] {
        let rp = kljn_parallel(ra, rb)?;
        row("kljn", label, "r_parallel", rp.to_string(), "ohm");
        row(
            "kljn",
            label,
            "wire_msq",
            kljn_wire_msq(REFERENCE_T_KELVIN, rp, bw)?.to_string(),
            "V^2",
        );
    }

    let sigma_sq = cfg.noise.target_rms_volts * cfg.noise.target_rms_volts;
    for sit in BitSituation::ALL {
        let g = sit.gains(mag);
        let label = sit.to_string();
        row("moments", &label, "a1", g.a1.to_string(), "");
        row("moments", &label, "a2", g.a2.to_string(), "");
        match steady_moments(g.a1, g.a2, sigma_sq) {
            Ok(m) => {
                row("moments", &label, "msq_a", m.msq_a.to_string(), "V^2");
                row("moments", &label, "msq_b", m.msq_b.to_string(), "V^2");
                row("moments", &label, "cross", m.cross.to_string(), "V^2");
                row(
                    "moments",
                    &label,
                    "reachable",
                    u8::from(!m.unreachable).to_string(),
                    "",
                );
            }
            Err(Error::Singular(_)) => row("moments", &label, "singular", "1".into(), ""),
            Err(e) => return Err(e),
        }
        row(
            "moments",
            &label,
            "expected_sign",
            sign_value(expected_sign(g.a1, g.a2)).to_string(),
            "",
        );
    }
    Ok(format!("{THEORY_CSV_HEADER}\n{s}"))
}

pub const SESSION_FILE: &str = "session.csv";
pub const CORRELATIONS_FILE: &str = "correlations.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TRANSITIONS_DIR: &str = "transitions";
pub const DATABASE_FILE: &str = "transients.ckdb";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::config("output_dir", format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

/// Runs a key-exchange session and writes session, keys, correlations,
/// transition windows, summary and manifest into `out`.
pub fn cmd_simulate(cfg: &RunConfig, beps: Option<usize>, out: &Path) -> Result<SessionOutput> {
    let mut cfg = cfg.clone();
    if let Some(n) = beps {
        cfg.protocol.n_bep = n;
    }
    cfg.validate()?;
    create_dir(out)?;
    let seeds = cfg.seeds();
    let k = cfg.attack.k_samples(&cfg.circuit, &cfg.noise);
    let output = run_session(&cfg.protocol, &cfg.circuit, &cfg.noise, &seeds, k)?;
    let session = &output.session;

    write_file(&out.join(SESSION_FILE), |w| write_session_csv(session, w))?;
    fs::write(
        out.join("alice_key.txt"),
        key_string(&session.alice_key) + "\n",
    )?;
    fs::write(out.join("bob_key.txt"), key_string(&session.bob_key) + "\n")?;
    write_file(&out.join(CORRELATIONS_FILE), |w| {
        writeln!(w, "index,t_start_s,situation,correlation_v2")?;
        for r in &session.records {
            let t = r.index as f64 * cfg.protocol.bep_duration_s;
            writeln!(
                w,
                "{},{},{},{}",
                r.index,
                t,
                r.situation(),
                r.correlation_estimate
            )?;
        }
        Ok(())
    })?;
    let tdir = out.join(TRANSITIONS_DIR);
    create_dir(&tdir)?;
    for win in &output.archive {
        write_file(&tdir.join(format!("transition_{}.csv", win.index)), |w| {
            win.trace.write_csv(w)
        })?;
    }
    fs::write(out.join(SUMMARY_FILE), summary_text(session))?;
    Manifest::new("simulate", Some(cfg.protocol.n_bep), &cfg).write(out)?;
    Ok(output)
}

fn summary_text(session: &KeySession) -> String {
    let s = &session.summary;
    let c = s.situation_counts;
    format!(
        "n_bep={}\nsecure={}\nshared_bits={}\nsecure_yield={}\nbit_errors={}\nkeys_agree={}\n\
         threshold_volts_sq={}\ncount_LL={}\ncount_LH={}\ncount_HL={}\ncount_HH={}\n",
        s.n_bep,
        s.secure,
        s.shared_bits,
        s.secure_yield,
        s.bit_errors,
        session.alice_key == session.bob_key,
        s.threshold_volts_sq,
        c[0],
        c[1],
        c[2],
        c[3],
    )
}

fn summary_value(text: &str, key: &str) -> Result<String> {
    text.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .map(str::to_string)
        .ok_or_else(|| Error::Format(format!("summary has no `{key}`")))
}

/// Builds Eve's database for the configured system and writes it to
/// `out/transients.ckdb` (plus a CSV export on request).
pub fn cmd_build_db(cfg: &RunConfig, out: &Path, export_csv: bool) -> Result<TransientDatabase> {
    cfg.validate()?;
    create_dir(out)?;
    let db = build_database(&cfg.circuit, &cfg.noise, &cfg.attack)?;
    write_file(&out.join(DATABASE_FILE), |w| write_database(&db, w))?;
    if export_csv {
        write_file(&out.join("transients.csv"), |w| write_database_csv(&db, w))?;
    }
    Manifest::new("build-db", None, cfg).write(out)?;
    Ok(db)
}

pub fn load_database(path: &Path) -> Result<TransientDatabase> {
    let f =
        File::open(path).map_err(|e| Error::config("db", format!("{}: {e}", path.display())))?;
    read_database(BufReader::new(f))
}

/// Attacks the session stored in `session_dir`. Eve's seed and attack
/// parameters come from `cfg`; the system parameters come from the
/// session's manifest and must match the database fingerprint.
pub fn cmd_attack(
    cfg: &RunConfig,
    session_dir: &Path,
    db_path: Option<&Path>,
    mode: AttackMode,
    out: &Path,
) -> Result<AttackReport> {
    cfg.validate()?;
    let manifest = Manifest::load(&session_dir.join(MANIFEST_FILE))?;
    let system = &manifest.config;
    let summary = fs::read_to_string(session_dir.join(SUMMARY_FILE))?;
    let threshold: f64 = summary_value(&summary, "threshold_volts_sq")?
        .parse()
        .map_err(|_| Error::Format("bad threshold in summary".into()))?;
    let rows = read_session_csv(BufReader::new(File::open(session_dir.join(SESSION_FILE))?))?;
    let correlations: Vec<f64> = rows.iter().map(|r| r.correlation).collect();
    let truth = attack::truth_from_rows(&rows);
    let table = &system.protocol.truth_table;
    let eve_seed = cfg.seeds().eve;

    let guesses = match mode {
        AttackMode::Steady => steady_eve(&correlations, threshold, table, eve_seed),
        AttackMode::Transient => {
            let path =
                db_path.ok_or_else(|| Error::config("db", "transient mode needs a database"))?;
            let db = load_database(path)?;
            db.check_fingerprint(&system.circuit, &system.noise)?;
            let tdir = session_dir.join(TRANSITIONS_DIR);
            let mut windows = vec![None; rows.len()];
            for (i, w) in windows.iter_mut().enumerate().skip(1) {
                let p = tdir.join(format!("transition_{i}.csv"));
                if p.exists() {
                    *w = Some(WireTrace::read_csv(
                        BufReader::new(File::open(p)?),
                        TraceRate::Internal,
                    )?);
                }
            }
            let obs = Observation {
                correlations,
                windows,
            };
            transient_attack(&obs, &db, &cfg.attack, threshold, table, eve_seed)?
        }
    };
    let report = AttackReport::score(mode, guesses, truth)?;
    create_dir(out)?;
    let name = match mode {
        AttackMode::Transient => "attack_transient",
        AttackMode::Steady => "attack_steady",
    };
    fs::write(out.join(format!("{name}.txt")), report.to_text())?;
    write_file(&out.join(format!("{name}.csv")), |w| report.write_csv(w))?;
    Ok(report)
}

/// One-line verdict of the one-sided binomial test against coin flipping.
pub fn verdict(report: &AttackReport) -> String {
    let e = &report.evaluation;
    let call = if e.p_value < 1e-6 {
        "Eve beats coin flipping (p < 1e-6)"
    } else if e.wilson_low <= 0.5 && 0.5 <= e.wilson_high {
        "consistent with coin flipping"
    } else {
        "inconclusive"
    };
    format!(
        "accuracy {:.4} on {} key bits, 95% CI [{:.4}, {:.4}], p = {:.3e}: {call}",
        e.accuracy, e.n, e.wilson_low, e.wilson_high, e.p_value
    )
}

#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub warnings: Vec<String>,
    pub checks: Vec<CheckResult>,
}

impl ValidationOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_json(&self) -> String {
        let v = serde_json::json!({
            "passed": self.passed(),
            "warnings": self.warnings,
            "checks": self.checks,
        });
        serde_json::to_string_pretty(&v).expect("json") + "\n"
    }
}

/// Runs the acceptance checks. Configuration errors propagate; everything
/// else, including threshold calibration, is reported as a failed check.
pub fn cmd_validate(cfg: &RunConfig, out: Option<&Path>) -> Result<ValidationOutcome> {
    let warnings = cfg.validate()?;
    let scratch = match out {
        Some(dir) => dir.join("validate_scratch"),
        None => std::env::temp_dir().join(format!("coldkey-validate-{}", std::process::id())),
    };
    let checks = acceptance::run_all(cfg, &scratch, |c| println!("{}", c.line()));
    let _ = fs::remove_dir_all(&scratch);
    let outcome = ValidationOutcome { warnings, checks };
    if let Some(dir) = out {
        create_dir(dir)?;
        fs::write(dir.join("validation.json"), outcome.to_json())?;
    }
    Ok(outcome)
}

/// Where a command writes when no `--out` is given.
pub fn output_dir(cfg: &RunConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("coldkey-out"))
}

/// Loads the configuration from a manifest or config file, then applies a
/// seed override.
pub fn resolve_config(
    config: Option<&Path>,
    manifest: Option<&Path>,
    seed: Option<u64>,
) -> Result<(RunConfig, Option<usize>)> {
    let (mut cfg, beps) = match (manifest, config) {
        (Some(m), _) => {
            let m = Manifest::load(m)?;
            (m.config, m.beps)
        }
        (None, Some(c)) => (RunConfig::load(c)?, None),
        (None, None) => (RunConfig::default(), None),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    Ok((cfg, beps))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x", "y")), EXIT_CONFIG);
        assert_eq!(exit_code(&Error::Calibration("x".into())), EXIT_VALIDATION);
        assert_eq!(
            exit_code(&Error::Fault {
                time_s: 0.0,
                reason: "nan".into()
            }),
            EXIT_FAULT
        );
        let fp = Error::FingerprintMismatch {
            database: "a".into(),
            session: "b".into(),
        };
        assert_eq!(exit_code(&fp), EXIT_FINGERPRINT);
    }

    #[test]
    fn theory_table() {
        let csv = cmd_theory(&RunConfig::default()).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(THEORY_CSV_HEADER));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert!(rows.iter().all(|r| r.len() == 5));
        let get = |label: &str, q: &str| -> f64 {
            rows.iter()
                .find(|r| r[0] == "moments" && r[1] == label && r[2] == q)
                .unwrap()[3]
                .parse()
                .unwrap()
        };
        assert_eq!(get("LH", "cross"), 0.0);
        assert_eq!(get("HL", "cross"), 0.0);
        assert!(get("LL", "cross") < 0.0);
        assert_eq!(get("LL", "expected_sign"), -1.0);
        assert_eq!(get("HH", "reachable"), 0.0);
    }

    #[test]
    fn summary_lookup() {
        assert_eq!(
            summary_value("a=1\nbit_errors=0\n", "bit_errors").unwrap(),
            "0"
        );
        assert!(summary_value("a=1\n", "b").is_err());
    }
}
