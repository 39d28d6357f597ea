//! Eavesdroppers.
//!
//! The steady-state eavesdropper sees only the public correlation level and
//! must guess every secure bit. The transient eavesdropper additionally
//! records the wires right after each BEP boundary and matches the recording
//! against a database of frozen-noise switching transients.

mod database;
mod matching;

pub use database::{
    all_transitions, build_database, build_patches, fingerprint, is_discarded_transition,
    read_database, write_database, write_database_csv, AttackParams, GridSpec, Patch, TemplateKey,
    TransientDatabase, TransientTemplate, DATABASE_CSV_HEADER, MAGIC,
};
pub use matching::{match_transient, Candidates, MatchOptions, MatchResult, Transition};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::io::Write;

use crate::circuit::WireTrace;
use crate::protocol::{BitSituation, KeySession, SessionRow, TransitionWindow, TruthTable};
use crate::stats::{binomial_upper_tail, wilson_interval, Z_95};
use crate::{Error, Result};

/// What the public correlation level alone reveals about a BEP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum SteadyClass {
    LL,
    HH,
    /// `LH` or `HL`, indistinguishable in steady state.
    Secure,
}

impl SteadyClass {
    pub fn of(correlation: f64, threshold: f64) -> Self {
        if correlation < -threshold {
            SteadyClass::LL
        } else if correlation > threshold {
            SteadyClass::HH
        } else {
            SteadyClass::Secure
        }
    }

    pub fn situations(self) -> &'static [BitSituation] {
        match self {
            SteadyClass::LL => &[BitSituation::LL],
            SteadyClass::HH => &[BitSituation::HH],
            SteadyClass::Secure => &[BitSituation::LH, BitSituation::HL],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Transient,
    Steady,
}

impl std::str::FromStr for AttackMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transient" => Ok(AttackMode::Transient),
            "steady" => Ok(AttackMode::Steady),
            _ => Err(Error::config("mode", format!("unknown attack mode `{s}`"))),
        }
    }
}

/// Everything Eve can see: the public per-BEP correlation estimates and the
/// wire recordings after each boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub correlations: Vec<f64>,
    /// Indexed by BEP; entry `i` starts at the boundary into BEP `i`.
    pub windows: Vec<Option<WireTrace>>,
}

impl Observation {
    pub fn new(correlations: Vec<f64>, archive: &[TransitionWindow]) -> Self {
        let mut windows = vec![None; correlations.len()];
        for w in archive {
            if w.index < windows.len() {
                windows[w.index] = Some(w.trace.clone());
            }
        }
        Self {
            correlations,
            windows,
        }
    }
}

/// Ground truth used only for scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BepTruth {
    pub situation: BitSituation,
    /// The bit Alice and Bob share, if any.
    pub bit: Option<u8>,
}

pub fn truth_from_session(session: &KeySession) -> Vec<BepTruth> {
    session
        .records
        .iter()
        .map(|r| BepTruth {
            situation: r.situation(),
            bit: r.bit,
        })
        .collect()
}

pub fn truth_from_rows(rows: &[SessionRow]) -> Vec<BepTruth> {
    rows.iter()
        .map(|r| BepTruth {
            situation: r.situation,
            bit: r.bit,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EveGuess {
    pub index: usize,
    pub class: SteadyClass,
    pub situation: BitSituation,
    /// Guessed key bit for BEPs Eve believes are secure.
    pub bit: Option<u8>,
    /// Transition Eve infers at the boundary into this BEP; `None` when she
    /// abstained or had no recording.
    pub transition: Option<(BitSituation, BitSituation)>,
    pub distance: Option<f64>,
    pub abstained: bool,
    /// The bit came from a coin flip rather than evidence.
    pub coin_flip: bool,
}

/// Guesses from the correlation level only: `LL`/`HH` are recognised, secure
/// bits are coin flips.
pub fn steady_eve(
    correlations: &[f64],
    threshold: f64,
    table: &TruthTable,
    seed: u64,
) -> Vec<EveGuess> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    correlations
        .iter()
        .enumerate()
        .map(|(index, &c)| {
            let class = SteadyClass::of(c, threshold);
            let (situation, bit) = match class {
                SteadyClass::LL => (BitSituation::LL, None),
                SteadyClass::HH => (BitSituation::HH, None),
                SteadyClass::Secure => {
                    let b = rng.random_range(0..2u8);
                    (table.situation_for(b), Some(b))
                }
            };
            EveGuess {
                index,
                class,
                situation,
                bit,
                transition: None,
                distance: None,
                abstained: false,
                coin_flip: bit.is_some(),
            }
        })
        .collect()
}

/// Infers each BEP's situation from the transient at its leading boundary.
///
/// The steady class of both neighbouring BEPs restricts the candidate
/// transitions. A flat trace means nobody switched, so the situation carries
/// over from Eve's guess for the previous BEP. Abstentions, the first BEP and
/// missing recordings fall back to coin flips.
pub fn transient_attack(
    obs: &Observation,
    db: &TransientDatabase,
    params: &AttackParams,
    threshold: f64,
    table: &TruthTable,
    seed: u64,
) -> Result<Vec<EveGuess>> {
    params.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let opts = MatchOptions {
        decimation: params.eve_decimation,
        ceiling: db.abstention_ceiling,
    };
    let mut out: Vec<EveGuess> = Vec::with_capacity(obs.correlations.len());
    let mut prev: Option<(SteadyClass, BitSituation)> = None;

    for (index, &c) in obs.correlations.iter().enumerate() {
        let class = SteadyClass::of(c, threshold);
        let window = obs.windows.get(index).and_then(|w| w.as_ref());
        let mut guess = EveGuess {
            index,
            class,
            situation: BitSituation::LL,
            bit: None,
            transition: None,
            distance: None,
            abstained: false,
            coin_flip: false,
        };
        let mut inferred = None;
        if let (Some((prev_class, prev_situation)), Some(trace)) = (prev, window) {
            let cands = Candidates::between(prev_class.situations(), class.situations());
            let m = match_transient(trace, db, &cands, &opts);
            guess.distance = Some(m.distance);
            guess.abstained = m.abstained;
            if !m.abstained {
                let (pre, post) = match m.transition {
                    Transition::Switch { pre, post } => (pre, post),
                    Transition::Hold => (prev_situation, prev_situation),
                };
                guess.transition = Some((pre, post));
                if class.situations().contains(&post) {
                    inferred = Some(post);
                }
            }
        }
        guess.situation = match (class, inferred) {
            (SteadyClass::LL, _) => BitSituation::LL,
            (SteadyClass::HH, _) => BitSituation::HH,
            (SteadyClass::Secure, Some(s)) => s,
            (SteadyClass::Secure, None) => {
                guess.coin_flip = true;
                table.situation_for(rng.random_range(0..2u8))
            }
        };
        if class == SteadyClass::Secure {
            guess.bit = crate::protocol::extract_bit(guess.situation, table);
        }
        prev = Some((class, guess.situation));
        out.push(guess);
    }
    Ok(out)
}

/// Accuracy of guessed bits against the true shared bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub n: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// One-sided `P(X >= correct)` under coin flipping.
    pub p_value: f64,
}

pub fn evaluate(guesses: &[u8], truth: &[u8]) -> Result<Evaluation> {
    if guesses.len() != truth.len() {
        return Err(Error::Format(format!(
            "{} guesses for {} true bits",
            guesses.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Empty("evaluation needs at least one key bit"));
    }
    let n = truth.len() as u64;
    let correct = guesses.iter().zip(truth).filter(|(g, t)| g == t).count() as u64;
    let (wilson_low, wilson_high) = wilson_interval(correct, n, Z_95);
    Ok(Evaluation {
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        wilson_low,
        wilson_high,
        p_value: binomial_upper_tail(correct, n, 0.5),
    })
}

/// Sixteen ordered situation pairs, `LL->LL` first.
fn transition_index(pre: BitSituation, post: BitSituation) -> usize {
    4 * pre.index() + post.index()
}

fn transition_label(i: usize) -> String {
    format!("{}->{}", BitSituation::ALL[i / 4], BitSituation::ALL[i % 4])
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub mode: AttackMode,
    pub guesses: Vec<EveGuess>,
    pub truth: Vec<BepTruth>,
    pub evaluation: Evaluation,
    pub abstentions: usize,
    pub coin_flips: usize,
    /// Rows: true transition; columns: guessed transition, then abstain.
    pub confusion: [[usize; 17]; 16],
}

impl AttackReport {
    /// Scores guesses over the BEPs where Alice and Bob share a bit. A secure
    /// BEP Eve thought was `LL`/`HH` counts as a wrong guess.
    pub fn score(mode: AttackMode, guesses: Vec<EveGuess>, truth: Vec<BepTruth>) -> Result<Self> {
        if guesses.len() != truth.len() {
            return Err(Error::Format(format!(
                "{} guesses for {} BEPs",
                guesses.len(),
                truth.len()
            )));
        }
        let mut g_bits = Vec::new();
        let mut t_bits = Vec::new();
        for (g, t) in guesses.iter().zip(&truth) {
            if let Some(b) = t.bit {
                t_bits.push(b);
                g_bits.push(g.bit.unwrap_or(1 - b));
            }
        }
        let evaluation = evaluate(&g_bits, &t_bits)?;
        let mut confusion = [[0usize; 17]; 16];
        for i in 1..truth.len() {
            let row = transition_index(truth[i - 1].situation, truth[i].situation);
            let col = match guesses[i].transition {
                Some((p, q)) if !guesses[i].abstained => transition_index(p, q),
                _ => 16,
            };
            if mode == AttackMode::Transient {
                confusion[row][col] += 1;
            }
        }
        Ok(Self {
            mode,
            abstentions: guesses.iter().filter(|g| g.abstained).count(),
            coin_flips: guesses.iter().filter(|g| g.coin_flip).count(),
            guesses,
            truth,
            evaluation,
            confusion,
        })
    }

    pub fn to_text(&self) -> String {
        let e = &self.evaluation;
        let mut s = String::new();
        let mode = match self.mode {
            AttackMode::Transient => "transient",
            AttackMode::Steady => "steady",
        };
        let _ = writeln!(s, "mode={mode}");
        let _ = writeln!(s, "n_bep={}", self.guesses.len());
        let _ = writeln!(s, "key_bits={}", e.n);
        let _ = writeln!(s, "correct={}", e.correct);
        let _ = writeln!(s, "accuracy={:.6}", e.accuracy);
        let _ = writeln!(s, "wilson95_low={:.6}", e.wilson_low);
        let _ = writeln!(s, "wilson95_high={:.6}", e.wilson_high);
        let _ = writeln!(s, "p_value={:.6e}", e.p_value);
        let _ = writeln!(s, "abstentions={}", self.abstentions);
        let _ = writeln!(s, "coin_flips={}", self.coin_flips);
        if self.mode == AttackMode::Transient {
            let _ = writeln!(s, "\nconfusion (rows: true transition, columns: guessed)");
            let _ = write!(s, "{:>8}", "");
            for c in 0..16 {
                let _ = write!(s, "{:>8}", transition_label(c));
            }
            let _ = writeln!(s, "{:>8}", "abstain");
            for (r, row) in self.confusion.iter().enumerate() {
                let _ = write!(s, "{:>8}", transition_label(r));
                for v in row {
                    let _ = write!(s, "{v:>8}");
                }
                let _ = writeln!(s);
            }
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "index,truth_bit,guess_bit,transition_truth,transition_guess,distance,abstained"
        )?;
        let opt = |b: Option<u8>| b.map(|b| b.to_string()).unwrap_or_default();
        for (i, (g, t)) in self.guesses.iter().zip(&self.truth).enumerate() {
            let truth_tr = if i > 0 {
                format!("{}->{}", self.truth[i - 1].situation, t.situation)
            } else {
                String::new()
            };
            let guess_tr = g
                .transition
                .map(|(p, q)| format!("{p}->{q}"))
                .unwrap_or_default();
            let dist = g.distance.map(|d| format!("{d:e}")).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                g.index,
                opt(t.bit),
                opt(g.bit),
                truth_tr,
                guess_tr,
                dist,
                u8::from(g.abstained)
            )?;
        }
        Ok(())
    }
}
