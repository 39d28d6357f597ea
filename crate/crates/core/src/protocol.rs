//! The bit-exchange protocol.
//!
//! In every bit exchange period (BEP) Alice and Bob independently pick the low
//! (negative) or high (positive) gain, let the loop run, and estimate the wire
//! cross-correlation `<v_ab * v_ba>`. Knowing their own choice, each decides
//! between two candidate situations. `LL` and `HH` are discarded; `LH` and
//! `HL` become key bits through a public truth table.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize, Serializer};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::circuit::{CircuitParams, GainPair, LoopSimulator, TraceRequest, WireTrace};
use crate::noise::{NoiseSource, NoiseSpec};
use crate::stats;
use crate::{Error, Result};

/// A party's gain choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    L,
    H,
}

impl Level {
    pub fn gain(self, magnitude: f64) -> f64 {
        match self {
            Level::L => -magnitude,
            Level::H => magnitude,
        }
    }

    fn letter(self) -> char {
        match self {
            Level::L => 'L',
            Level::H => 'H',
        }
    }
}

/// Alice's choice followed by Bob's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BitSituation {
    LL,
    LH,
    HL,
    HH,
}

impl BitSituation {
    pub const ALL: [BitSituation; 4] = [Self::LL, Self::LH, Self::HL, Self::HH];

    pub fn new(alice: Level, bob: Level) -> Self {
        match (alice, bob) {
            (Level::L, Level::L) => Self::LL,
            (Level::L, Level::H) => Self::LH,
            (Level::H, Level::L) => Self::HL,
            (Level::H, Level::H) => Self::HH,
        }
    }

    pub fn alice(self) -> Level {
        match self {
            Self::LL | Self::LH => Level::L,
            Self::HL | Self::HH => Level::H,
        }
    }

    pub fn bob(self) -> Level {
        match self {
            Self::LL | Self::HL => Level::L,
            Self::LH | Self::HH => Level::H,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// The situation with the parties' roles exchanged.
    pub fn mirrored(self) -> Self {
        Self::new(self.bob(), self.alice())
    }

    pub fn is_secure(self) -> bool {
        matches!(self, Self::LH | Self::HL)
    }

    pub fn gains(self, magnitude: f64) -> GainPair {
        GainPair::new(self.alice().gain(magnitude), self.bob().gain(magnitude))
    }
}

impl fmt::Display for BitSituation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.alice().letter(), self.bob().letter())
    }
}

impl FromStr for BitSituation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LL" => Ok(Self::LL),
            "LH" => Ok(Self::LH),
            "HL" => Ok(Self::HL),
            "HH" => Ok(Self::HH),
            _ => Err(Error::Format(format!("unknown bit situation `{s}`"))),
        }
    }
}

/// Decision threshold on the correlation estimate, in V^2.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Threshold {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Threshold::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(Threshold::Auto),
            Raw::Text(t) => Err(de::Error::custom(format!(
                "threshold must be a number or \"auto\", got \"{t}\""
            ))),
        }
    }
}

/// Public mapping of the secure situations to bit values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthTable {
    #[serde(rename = "LH")]
    pub lh: u8,
    #[serde(rename = "HL")]
    pub hl: u8,
}

impl Default for TruthTable {
    fn default() -> Self {
        Self { lh: 0, hl: 1 }
    }
}

impl TruthTable {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lh <= 1 && self.hl <= 1 && self.lh != self.hl;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "protocol.truth_table",
                "must map LH and HL to distinct bits 0/1",
            ))
        }
    }

    /// The secure situation that carries `bit`.
    pub fn situation_for(&self, bit: u8) -> BitSituation {
        if bit == self.lh {
            BitSituation::LH
        } else {
            BitSituation::HL
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub bep_duration_s: f64,
    pub measurement_rate_hz: f64,
    /// Leading fraction of each BEP excluded from the correlation average.
    pub guard_fraction: f64,
    pub threshold_volts_sq: Threshold,
    pub truth_table: TruthTable,
    pub n_bep: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            bep_duration_s: 1.25e-3,
            measurement_rate_hz: 250_000.0,
            guard_fraction: 0.1,
            threshold_volts_sq: Threshold::Auto,
            truth_table: TruthTable::default(),
            n_bep: 1000,
        }
    }
}

/// BEPs of each kind used by [`auto_threshold`] by default.
pub const DEFAULT_CALIBRATION_BEPS: usize = 200;

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bep_duration_s > 0.0 && self.bep_duration_s.is_finite()) {
            return Err(Error::config("protocol.bep_duration_s", "must be positive"));
        }
        if !(self.measurement_rate_hz > 0.0) {
            return Err(Error::config(
                "protocol.measurement_rate_hz",
                "must be positive",
            ));
        }
        if !(0.0..0.5).contains(&self.guard_fraction) {
            return Err(Error::config(
                "protocol.guard_fraction",
                "must lie in [0, 0.5)",
            ));
        }
        self.truth_table.validate()
    }

    /// Internal steps between measurement samples.
    pub fn decimation(&self, circuit: &CircuitParams, noise: &NoiseSpec) -> Result<usize> {
        let internal = circuit.internal_oversample as f64 * noise.sample_rate_hz;
        let ratio = internal / self.measurement_rate_hz;
        let d = ratio.round();
        if d < 1.0 || (ratio - d).abs() > 1e-9 * ratio {
            return Err(Error::config(
                "protocol.measurement_rate_hz",
                format!("must divide the internal rate {internal} Hz"),
            ));
        }
        Ok(d as usize)
    }
}

/// Seeds for every independent random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub noise1: u64,
    pub noise2: u64,
    pub alice: u64,
    pub bob: u64,
    pub eve: u64,
    pub calibration: u64,
}

impl Seeds {
    /// Fixed per-role offsets from a master seed, so changing one role's
    /// randomness never perturbs another's.
    pub fn from_master(master: u64) -> Self {
        Self {
            noise1: master.wrapping_add(1),
            noise2: master.wrapping_add(2),
            alice: master.wrapping_add(3),
            bob: master.wrapping_add(4),
            eve: master.wrapping_add(5),
            calibration: master.wrapping_add(6),
        }
    }
}

/// Independent uniform choice streams for the two parties.
#[derive(Debug, Clone)]
pub struct ChoiceStreams {
    alice: ChaCha12Rng,
    bob: ChaCha12Rng,
}

impl ChoiceStreams {
    pub fn new(alice_seed: u64, bob_seed: u64) -> Self {
        Self {
            alice: ChaCha12Rng::seed_from_u64(alice_seed),
            bob: ChaCha12Rng::seed_from_u64(bob_seed),
        }
    }

    pub fn draw(&mut self) -> (Level, Level) {
        choose_gains(&mut self.alice, &mut self.bob)
    }
}

pub fn choose_gains<R: Rng>(rng_a: &mut R, rng_b: &mut R) -> (Level, Level) {
    let pick = |r: &mut R| {
        if r.random::<bool>() {
            Level::H
        } else {
            Level::L
        }
    };
    (pick(rng_a), pick(rng_b))
}

/// Mean of `v_ab * v_ba` after skipping the leading `guard_fraction` of the
/// samples.
pub fn estimate_correlation(trace: &WireTrace, guard_fraction: f64) -> Result<f64> {
    let skip = (trace.len() as f64 * guard_fraction).floor() as usize;
    let n = trace.len().saturating_sub(skip);
    if n == 0 {
        return Err(Error::Empty("correlation window"));
    }
    let sum: f64 = trace.v_ab[skip..]
        .iter()
        .zip(&trace.v_ba[skip..])
        .map(|(a, b)| a * b)
        .sum();
    Ok(sum / n as f64)
}

/// A party's decision between its two candidate situations, written from
/// that party's point of view (first letter is its own choice). Use
/// [`BitSituation::mirrored`] to express Bob's view in Alice-first order.
pub fn classify(correlation: f64, own: Level, threshold: f64) -> BitSituation {
    match own {
        Level::L if correlation < -threshold => BitSituation::LL,
        Level::L => BitSituation::LH,
        Level::H if correlation > threshold => BitSituation::HH,
        Level::H => BitSituation::HL,
    }
}

pub fn extract_bit(situation: BitSituation, table: &TruthTable) -> Option<u8> {
    match situation {
        BitSituation::LH => Some(table.lh),
        BitSituation::HL => Some(table.hl),
        BitSituation::LL | BitSituation::HH => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BepRecord {
    pub index: usize,
    pub alice_choice: Level,
    pub bob_choice: Level,
    pub correlation_estimate: f64,
    pub alice_inferred: BitSituation,
    pub bob_inferred: BitSituation,
    pub secure: bool,
    /// Shared bit, present when the situation is secure and both parties
    /// classified it correctly.
    pub bit: Option<u8>,
    pub alice_bit: Option<u8>,
    pub bob_bit: Option<u8>,
    pub transition_from_previous: Option<(BitSituation, BitSituation)>,
}

impl BepRecord {
    pub fn situation(&self) -> BitSituation {
        BitSituation::new(self.alice_choice, self.bob_choice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub n_bep: usize,
    pub secure: usize,
    pub shared_bits: usize,
    pub secure_yield: f64,
    /// BEPs where the two parties' kept bits differ (including one-sided keeps).
    pub bit_errors: usize,
    /// Counts of LL, LH, HL, HH.
    pub situation_counts: [usize; 4],
    pub threshold_volts_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeySession {
    pub config: ProtocolConfig,
    pub records: Vec<BepRecord>,
    /// Bits Alice kept, in BEP order.
    pub alice_key: Vec<u8>,
    pub bob_key: Vec<u8>,
    pub summary: SessionSummary,
}

/// Internal-rate wire samples right after a BEP boundary, starting at the
/// switch instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionWindow {
    /// Index of the BEP that starts at this boundary.
    pub index: usize,
    pub from: BitSituation,
    pub to: BitSituation,
    pub trace: WireTrace,
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub session: KeySession,
    pub archive: Vec<TransitionWindow>,
    /// Measurement-rate traces per BEP, kept only on request.
    pub bep_traces: Vec<WireTrace>,
}

/// Raw simulation of a fixed situation sequence.
#[derive(Debug, Clone)]
pub struct SituationRun {
    pub correlations: Vec<f64>,
    pub archive: Vec<TransitionWindow>,
    pub bep_traces: Vec<WireTrace>,
}

/// Simulates back-to-back BEPs with the given situations; the circuit state
/// carries across boundaries. `archive_samples` internal-rate samples are
/// kept after every boundary.
pub fn simulate_situations(
    situations: &[BitSituation],
    protocol: &ProtocolConfig,
    circuit: &CircuitParams,
    noise: &NoiseSpec,
    noise_seeds: (u64, u64),
    archive_samples: usize,
    keep_bep_traces: bool,
) -> Result<SituationRun> {
    noise.validate()?;
    let decimation = protocol.decimation(circuit, noise)?;
    let gain = noise.calibration_gain();
    let src1 = NoiseSource::with_gain(*noise, noise_seeds.0, gain);
    let src2 = NoiseSource::with_gain(*noise, noise_seeds.1, gain);
    let first = situations.first().copied().unwrap_or(BitSituation::LH);
    let mag = circuit.gain_magnitude;
    let mut sim = LoopSimulator::new(*circuit, src1, src2, first.gains(mag))?;
    let n_steps = sim.steps_for(protocol.bep_duration_s);

    let mut out = SituationRun {
        correlations: Vec::with_capacity(situations.len()),
        archive: Vec::new(),
        bep_traces: Vec::new(),
    };
    let mut previous = first;
    for (i, &situation) in situations.iter().enumerate() {
        let prefix = if i > 0 {
            sim.switch_to(situation.gains(mag));
            archive_samples
        } else {
            0
        };
        let seg = sim.run_segment(
            n_steps,
            TraceRequest {
                decimation,
                full_prefix: prefix,
            },
        )?;
        out.correlations.push(estimate_correlation(
            &seg.decimated,
            protocol.guard_fraction,
        )?);
        if i > 0 && archive_samples > 0 {
            out.archive.push(TransitionWindow {
                index: i,
                from: previous,
                to: situation,
                trace: seg.prefix,
            });
        }
        if keep_bep_traces {
            out.bep_traces.push(seg.decimated);
        }
        previous = situation;
    }
    Ok(out)
}

/// Calibrates the decision threshold as six standard deviations of the
/// correlation estimate in steady `LH`.
pub fn auto_threshold(
    circuit: &CircuitParams,
    noise: &NoiseSpec,
    protocol: &ProtocolConfig,
    calibration_beps: usize,
    seed: u64,
) -> Result<f64> {
    if calibration_beps < 100 {
        return Err(Error::Calibration(format!(
            "need at least 100 calibration BEPs, got {calibration_beps}"
        )));
    }
    let seeds = (seed, seed ^ 0x5EED_0000_0000_0001);
    let lh = vec![BitSituation::LH; calibration_beps];
    let lh_run = simulate_situations(&lh, protocol, circuit, noise, seeds, 0, false)?;
    let sd = stats::std_dev(&lh_run.correlations);
    let threshold = 6.0 * sd;
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(Error::Calibration(format!(
            "non-positive threshold {threshold}"
        )));
    }

    let extremes: Vec<BitSituation> = (0..20)
        .map(|i| {
            if i % 2 == 0 {
                BitSituation::LL
            } else {
                BitSituation::HH
            }
        })
        .collect();
    let ext_run = simulate_situations(
        &extremes,
        protocol,
        circuit,
        noise,
        (seeds.1, seeds.0),
        0,
        false,
    )?;
    for (s, c) in extremes.iter().zip(&ext_run.correlations) {
        let ok = match s {
            BitSituation::LL => *c < 0.0,
            _ => *c > 0.0,
        };
        if !ok {
            return Err(Error::Calibration(format!(
                "{s} estimate {c} has the wrong sign"
            )));
        }
    }
    let smallest = ext_run
        .correlations
        .iter()
        .map(|c| c.abs())
        .fold(f64::INFINITY, f64::min);
    let largest_lh = lh_run
        .correlations
        .iter()
        .map(|c| c.abs())
        .fold(0.0, f64::max);
    if largest_lh > 0.5 * smallest || threshold >= 0.5 * smallest {
        return Err(Error::Calibration(format!(
            "LH estimates up to {largest_lh:.4} V^2 overlap LL/HH levels down to {smallest:.4} V^2"
        )));
    }
    Ok(threshold)
}

pub fn resolve_threshold(
    protocol: &ProtocolConfig,
    circuit: &CircuitParams,
    noise: &NoiseSpec,
    calibration_seed: u64,
) -> Result<f64> {
    match protocol.threshold_volts_sq {
        Threshold::Fixed(t) if t > 0.0 && t.is_finite() => Ok(t),
        Threshold::Fixed(t) => Err(Error::Calibration(format!(
            "protocol.threshold_volts_sq is fixed at {t}; it must be positive"
        ))),
        Threshold::Auto => auto_threshold(
            circuit,
            noise,
            protocol,
            DEFAULT_CALIBRATION_BEPS,
            calibration_seed,
        ),
    }
}

/// Turns per-BEP correlations into records, keys and a summary.
pub fn assemble_session(
    protocol: &ProtocolConfig,
    situations: &[BitSituation],
    correlations: &[f64],
    threshold: f64,
) -> KeySession {
    let table = &protocol.truth_table;
    let mut records = Vec::with_capacity(situations.len());
    let mut alice_key = Vec::new();
    let mut bob_key = Vec::new();
    let mut counts = [0usize; 4];
    let mut bit_errors = 0;
    for (i, (&truth, &c)) in situations.iter().zip(correlations).enumerate() {
        let alice_inferred = classify(c, truth.alice(), threshold);
        let bob_inferred = classify(c, truth.bob(), threshold).mirrored();
        let alice_bit = extract_bit(alice_inferred, table);
        let bob_bit = extract_bit(bob_inferred, table);
        let secure = truth.is_secure();
        let bit = if secure && alice_inferred == truth && bob_inferred == truth {
            extract_bit(truth, table)
        } else {
            None
        };
        alice_key.extend(alice_bit);
        bob_key.extend(bob_bit);
        if alice_bit != bob_bit {
            bit_errors += 1;
        }
        counts[truth.index()] += 1;
        records.push(BepRecord {
            index: i,
            alice_choice: truth.alice(),
            bob_choice: truth.bob(),
            correlation_estimate: c,
            alice_inferred,
            bob_inferred,
            secure,
            bit,
            alice_bit,
            bob_bit,
            transition_from_previous: (i > 0).then(|| (situations[i - 1], truth)),
        });
    }
    let secure = records.iter().filter(|r| r.secure).count();
    let shared_bits = records.iter().filter(|r| r.bit.is_some()).count();
    let n = records.len();
    KeySession {
        config: *protocol,
        summary: SessionSummary {
            n_bep: n,
            secure,
            shared_bits,
            secure_yield: if n > 0 { secure as f64 / n as f64 } else { 0.0 },
            bit_errors,
            situation_counts: counts,
            threshold_volts_sq: threshold,
        },
        records,
        alice_key,
        bob_key,
    }
}

/// Full protocol run: random choices, simulation, classification, keys.
pub fn run_session(
    protocol: &ProtocolConfig,
    circuit: &CircuitParams,
    noise: &NoiseSpec,
    seeds: &Seeds,
    archive_samples: usize,
) -> Result<SessionOutput> {
    protocol.validate()?;
    let threshold = resolve_threshold(protocol, circuit, noise, seeds.calibration)?;
    run_session_with_threshold(protocol, circuit, noise, seeds, archive_samples, threshold)
}

pub fn run_session_with_threshold(
    protocol: &ProtocolConfig,
    circuit: &CircuitParams,
    noise: &NoiseSpec,
    seeds: &Seeds,
    archive_samples: usize,
    threshold: f64,
) -> Result<SessionOutput> {
    let mut choices = ChoiceStreams::new(seeds.alice, seeds.bob);
    let situations: Vec<BitSituation> = (0..protocol.n_bep)
        .map(|_| {
            let (a, b) = choices.draw();
            BitSituation::new(a, b)
        })
        .collect();
    let run = simulate_situations(
        &situations,
        protocol,
        circuit,
        noise,
        (seeds.noise1, seeds.noise2),
        archive_samples,
        false,
    )?;
    Ok(SessionOutput {
        session: assemble_session(protocol, &situations, &run.correlations, threshold),
        archive: run.archive,
        bep_traces: run.bep_traces,
    })
}

pub const SESSION_CSV_HEADER: &str =
    "index,alice_choice,bob_choice,correlation_v2,secure,bit,alice_inferred,bob_inferred";

fn level_str(l: Level) -> &'static str {
    match l {
        Level::L => "L",
        Level::H => "H",
    }
}

fn parse_level(s: &str) -> Result<Level> {
    match s {
        "L" => Ok(Level::L),
        "H" => Ok(Level::H),
        _ => Err(Error::Format(format!("unknown level `{s}`"))),
    }
}

pub fn write_session_csv<W: Write>(session: &KeySession, mut w: W) -> Result<()> {
    writeln!(w, "{SESSION_CSV_HEADER}")?;
    for r in &session.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.index,
            level_str(r.alice_choice),
            level_str(r.bob_choice),
            r.correlation_estimate,
            u8::from(r.secure),
            r.bit.map(|b| b.to_string()).unwrap_or_default(),
            r.alice_inferred,
            r.bob_inferred,
        )?;
    }
    Ok(())
}

/// One row of a session CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRow {
    pub index: usize,
    pub situation: BitSituation,
    pub correlation: f64,
    pub secure: bool,
    pub bit: Option<u8>,
    pub alice_inferred: BitSituation,
    pub bob_inferred: BitSituation,
}

pub fn read_session_csv<R: BufRead>(r: R) -> Result<Vec<SessionRow>> {
    let mut lines = r.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == SESSION_CSV_HEADER => {}
        _ => {
            return Err(Error::Format(format!(
                "expected header `{SESSION_CSV_HEADER}`"
            )))
        }
    }
    let bad = |what: &str, s: &str| Error::Format(format!("bad {what} `{s}`"));
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 8 {
            return Err(Error::Format(format!("expected 8 fields in `{line}`")));
        }
        rows.push(SessionRow {
            index: f[0].parse().map_err(|_| bad("index", f[0]))?,
            situation: BitSituation::new(parse_level(f[1])?, parse_level(f[2])?),
            correlation: f[3].parse().map_err(|_| bad("correlation", f[3]))?,
            secure: f[4] == "1",
            bit: if f[5].is_empty() {
                None
            } else {
                Some(f[5].parse().map_err(|_| bad("bit", f[5]))?)
            },
            alice_inferred: f[6].parse()?,
            bob_inferred: f[7].parse()?,
        });
    }
    Ok(rows)
}

pub fn key_string(bits: &[u8]) -> String {
    bits.iter()
        .map(|b| if *b == 0 { '0' } else { '1' })
        .collect()
}
