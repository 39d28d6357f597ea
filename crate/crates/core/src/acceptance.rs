//! The acceptance checks, shared by the `validate` command and the
//! `acceptance` test target.
//!
//! Each check returns a [`CheckResult`] instead of panicking so a run always
//! reports every criterion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::attack::{
    all_transitions, build_database, build_patches, steady_eve, transient_attack,
    truth_from_session, AttackMode, AttackReport, Observation,
};
use crate::circuit::{
    frozen_transient, CircuitParams, GainPair, LoopSimulator, TraceRequest, WireTrace,
};
use crate::cli::{cmd_build_db, cmd_simulate, resolve_config};
use crate::config::{RunConfig, MANIFEST_FILE};
use crate::noise::NoiseSource;
use crate::protocol::{
    resolve_threshold, run_session_with_threshold, simulate_situations, BitSituation, KeySession,
    Seeds,
};
use crate::stats::{self, ks_two_sample, wilson_interval, Z_95};
use crate::theory::{
    cold_effective_resistance, cold_effective_temperature, effective_temperature, johnson_spectrum,
    steady_moments_general,
};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<32} {}  {} [{:.1} s]",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail,
            self.seconds
        )
    }
}

fn finish(id: u32, name: &str, start: Instant, outcome: Result<(bool, String)>) -> CheckResult {
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckResult {
        id,
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Derived seeds for one check, so checks never share random streams.
fn seeds_for(cfg: &RunConfig, check: u64) -> Seeds {
    Seeds::from_master(cfg.master_seed.wrapping_add(check.wrapping_mul(1_000_003)))
}

pub const MOMENT_GAIN_PAIRS: [(f64, f64); 4] = [(-0.5, -0.5), (0.5, 0.5), (-5.0, 5.0), (5.0, -5.0)];
pub const MOMENT_SAMPLES: usize = 2_000_000;
const MOMENT_BATCHES: usize = 100;

/// Long-run wire moments against the closed form evaluated with the
/// measured source statistics.
pub fn moment_agreement(cfg: &RunConfig) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let seeds = seeds_for(cfg, 1);
        let d = cfg.protocol.decimation(&cfg.circuit, &cfg.noise)?;
        let hold = cfg.circuit.internal_oversample;
        let gain = cfg.noise.calibration_gain();
        let per_batch = MOMENT_SAMPLES / MOMENT_BATCHES;
        let mut worst: f64 = 0.0;
        let mut notes = Vec::new();
        for (k, &(a1, a2)) in MOMENT_GAIN_PAIRS.iter().enumerate() {
            let s1 = NoiseSource::with_gain(cfg.noise, seeds.noise1.wrapping_add(k as u64), gain);
            let s2 = NoiseSource::with_gain(cfg.noise, seeds.noise2.wrapping_add(k as u64), gain);
            // Replicas of the sources replay exactly the noise the loop sees.
            let (mut r1, mut r2) = (s1.clone(), s2.clone());
            let mut sim = LoopSimulator::new(cfg.circuit, s1, s2, GainPair::new(a1, a2))?;
            let warm_blocks = 4096;
            sim.run_segment((warm_blocks * hold) as u64, TraceRequest::default())?;
            r1.take(warm_blocks);
            r2.take(warm_blocks);

            let draws_per_batch = per_batch * d / hold;
            let mut batches = [Vec::new(), Vec::new(), Vec::new()];
            let (mut u11, mut u22, mut u12) = (0.0, 0.0, 0.0);
            for _ in 0..MOMENT_BATCHES {
                let tr = sim
                    .run_segment(
                        (per_batch * d) as u64,
                        TraceRequest {
                            decimation: d,
                            full_prefix: 0,
                        },
                    )?
                    .decimated;
                let n = tr.len() as f64;
                batches[0].push(tr.v_ab.iter().map(|v| v * v).sum::<f64>() / n);
                batches[1].push(tr.v_ba.iter().map(|v| v * v).sum::<f64>() / n);
                batches[2].push(
                    tr.v_ab
                        .iter()
                        .zip(&tr.v_ba)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / n,
                );
                for _ in 0..draws_per_batch {
                    let (x, y) = (r1.next_noise(), r2.next_noise());
                    u11 += x * x;
                    u22 += y * y;
                    u12 += x * y;
                }
            }
            let m = (MOMENT_BATCHES * draws_per_batch) as f64;
            let theory = steady_moments_general(a1, a2, u11 / m, u22 / m, u12 / m)?;
            for (b, want) in batches
                .iter()
                .zip([theory.msq_a, theory.msq_b, theory.cross])
            {
                let (mean, se) = (stats::mean(b), stats::std_dev(b) / (b.len() as f64).sqrt());
                let z = (mean - want).abs() / se;
                worst = worst.max(z);
            }
            notes.push(format!(
                "({a1},{a2}) cross {:.4} vs {:.4}",
                stats::mean(&batches[2]),
                theory.cross
            ));
        }
        let elapsed = start.elapsed().as_secs_f64();
        Ok((
            worst <= 3.0 && elapsed <= 60.0,
            format!(
                "worst deviation {worst:.2} SE over 12 moments; {}",
                notes.join("; ")
            ),
        ))
    })();
    finish(1, "moment agreement", start, outcome)
}

/// Per-BEP correlation estimates of sessions pinned to one situation.
#[derive(Debug, Clone)]
pub struct PinnedRuns {
    pub by_situation: BTreeMap<BitSituation, Vec<f64>>,
}

impl PinnedRuns {
    pub fn simulate(cfg: &RunConfig, beps_each: usize) -> Result<Self> {
        let seeds = seeds_for(cfg, 2);
        let mut by_situation = BTreeMap::new();
        for (k, s) in BitSituation::ALL.into_iter().enumerate() {
            let noise_seeds = (
                seeds.noise1.wrapping_add(10 * k as u64),
                seeds.noise2.wrapping_add(10 * k as u64),
            );
            let run = simulate_situations(
                &vec![s; beps_each],
                &cfg.protocol,
                &cfg.circuit,
                &cfg.noise,
                noise_seeds,
                0,
                false,
            )?;
            by_situation.insert(s, run.correlations);
        }
        Ok(Self { by_situation })
    }

    pub fn get(&self, s: BitSituation) -> &[f64] {
        &self.by_situation[&s]
    }
}

/// `LL` always negative, `HH` always positive, `LH`/`HL` centred on zero.
pub fn sign_pattern(runs: &PinnedRuns) -> CheckResult {
    let start = Instant::now();
    let ll = runs.get(BitSituation::LL);
    let hh = runs.get(BitSituation::HH);
    let ll_ok = ll.iter().all(|c| *c < 0.0);
    let hh_ok = hh.iter().all(|c| *c > 0.0);
    let mut detail = format!(
        "LL max {:.1} V^2, HH min {:.1} V^2",
        ll.iter().cloned().fold(f64::MIN, f64::max),
        hh.iter().cloned().fold(f64::MAX, f64::min)
    );
    let mut centred = true;
    for s in [BitSituation::LH, BitSituation::HL] {
        let c = runs.get(s);
        let mean = stats::mean(c);
        let half = 2.575_829 * stats::std_dev(c) / (c.len() as f64).sqrt();
        centred &= mean.abs() <= half;
        detail += &format!(", {s} mean {mean:.5} (99% half-width {half:.5})");
    }
    finish(
        2,
        "correlation sign pattern",
        start,
        Ok((ll_ok && hh_ok && centred, detail)),
    )
}

/// Three standard deviations of secure-situation estimates.
pub fn scatter_scale(runs: &PinnedRuns) -> CheckResult {
    let start = Instant::now();
    let mut pooled = runs.get(BitSituation::LH).to_vec();
    pooled.extend_from_slice(runs.get(BitSituation::HL));
    let three_sigma = 3.0 * stats::std_dev(&pooled);
    let ok = (0.015..=0.06).contains(&three_sigma);
    finish(
        3,
        "secure scatter scale",
        start,
        Ok((
            ok,
            format!("3 sigma = {three_sigma:.4} V^2, required [0.015, 0.06]"),
        )),
    )
}

/// Two-sample KS test between `LH` and `HL` estimates.
pub fn indistinguishability(runs: &PinnedRuns) -> CheckResult {
    let start = Instant::now();
    let outcome = ks_two_sample(runs.get(BitSituation::LH), runs.get(BitSituation::HL)).map(|r| {
        (
            r.p_value > 0.01,
            format!("KS D = {:.4}, p = {:.3}", r.statistic, r.p_value),
        )
    });
    finish(6, "LH/HL indistinguishability", start, outcome)
}

pub const SESSION_BEPS: usize = 10_000;

/// Secure yield and key agreement on a long session.
pub fn yield_and_agreement(session: &KeySession) -> CheckResult {
    let start = Instant::now();
    let s = &session.summary;
    let yield_ok = (s.secure_yield - 0.5).abs() <= 0.015;
    let agree = session.alice_key == session.bob_key && s.bit_errors == 0;
    finish(
        4,
        "yield and key agreement",
        start,
        Ok((
            yield_ok && agree && s.n_bep >= SESSION_BEPS,
            format!(
                "{} BEPs, yield {:.4}, {} shared bits, {} bit errors, keys equal: {}",
                s.n_bep,
                s.secure_yield,
                s.shared_bits,
                s.bit_errors,
                session.alice_key == session.bob_key
            ),
        )),
    )
}

/// Steady-state Eve over every shared bit of the given sessions.
pub fn steady_security(cfg: &RunConfig, sessions: &[KeySession]) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let (mut k, mut n) = (0u64, 0u64);
        for (i, s) in sessions.iter().enumerate() {
            let corr: Vec<f64> = s.records.iter().map(|r| r.correlation_estimate).collect();
            let eve_seed = seeds_for(cfg, 5).eve.wrapping_add(i as u64);
            let g = steady_eve(
                &corr,
                s.summary.threshold_volts_sq,
                &s.config.truth_table,
                eve_seed,
            );
            let r = AttackReport::score(AttackMode::Steady, g, truth_from_session(s))?;
            k += r.evaluation.correct;
            n += r.evaluation.n;
        }
        let (lo, hi) = wilson_interval(k, n, Z_95);
        Ok((
            n >= 10_000 && lo <= 0.5 && 0.5 <= hi,
            format!(
                "{k}/{n} correct = {:.4}, 95% CI [{lo:.4}, {hi:.4}]",
                k as f64 / n as f64
            ),
        ))
    })();
    finish(5, "steady-state security", start, outcome)
}

pub const SYMMETRY_CASES: usize = 100;

/// Mirror identity of frozen transients and step-size convergence.
pub fn transient_symmetry(cfg: &RunConfig) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let c = &cfg.circuit;
        let dt = c.dt(cfg.noise.sample_rate_hz);
        let k = cfg.attack.k_samples(c, &cfg.noise);
        let fine = CircuitParams {
            internal_oversample: 2 * c.internal_oversample,
            ..*c
        };
        let patches = build_patches(c, &cfg.noise, &cfg.attack.grid)?;
        let transitions = all_transitions();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.master_seed ^ 0x7_5EED);
        let (mut worst_mirror, mut worst_dt): (f64, f64) = (0.0, 0.0);
        let max_abs = |t: &WireTrace| {
            t.v_ab
                .iter()
                .chain(&t.v_ba)
                .fold(0.0f64, |m, v| m.max(v.abs()))
        };
        for _ in 0..SYMMETRY_CASES {
            let (pre, post) = transitions[rng.random_range(0..transitions.len())];
            let choices: Vec<_> = patches.iter().filter(|p| p.pre == pre).collect();
            let p = choices[rng.random_range(0..choices.len())];
            let r = p.half_count as f64 * p.spacing;
            let a = p.center.0 + rng.random_range(-r..=r);
            let b = p.center.1 + rng.random_range(-r..=r);
            let mag = c.gain_magnitude;
            let t = frozen_transient(a, b, pre.gains(mag), post.gains(mag), c, dt, k)?;
            let m = frozen_transient(
                b,
                a,
                pre.mirrored().gains(mag),
                post.mirrored().gains(mag),
                c,
                dt,
                k,
            )?
            .wire_swapped();
            let scale = max_abs(&t).max(f64::MIN_POSITIVE);
            let diff = (0..k)
                .map(|n| {
                    (t.v_ab[n] - m.v_ab[n])
                        .abs()
                        .max((t.v_ba[n] - m.v_ba[n]).abs())
                })
                .fold(0.0, f64::max);
            worst_mirror = worst_mirror.max(diff / scale);

            let h = frozen_transient(
                a,
                b,
                pre.gains(mag),
                post.gains(mag),
                &fine,
                dt / 2.0,
                2 * k - 1,
            )?;
            let diff = (0..k)
                .map(|n| {
                    (t.v_ab[n] - h.v_ab[2 * n])
                        .abs()
                        .max((t.v_ba[n] - h.v_ba[2 * n]).abs())
                })
                .fold(0.0, f64::max);
            worst_dt = worst_dt.max(diff / scale);
        }
        Ok((
            worst_mirror <= 1e-9 && worst_dt <= 0.005,
            format!(
                "mirror error {worst_mirror:.1e}, halving dt changes traces by {:.3}%",
                100.0 * worst_dt
            ),
        ))
    })();
    finish(7, "transient symmetry and dt", start, outcome)
}

pub const ATTACK_BEPS: usize = 1_200;

/// Database build, session and transient attack in the configured regime.
pub fn transient_attack_works(cfg: &RunConfig, threshold: f64) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let seeds = seeds_for(cfg, 8);
        let db = build_database(&cfg.circuit, &cfg.noise, &cfg.attack)?;
        let protocol = crate::protocol::ProtocolConfig {
            n_bep: ATTACK_BEPS,
            ..cfg.protocol
        };
        let out = run_session_with_threshold(
            &protocol,
            &cfg.circuit,
            &cfg.noise,
            &seeds,
            db.k_samples,
            threshold,
        )?;
        let corr = out
            .session
            .records
            .iter()
            .map(|r| r.correlation_estimate)
            .collect();
        let obs = Observation::new(corr, &out.archive);
        let g = transient_attack(
            &obs,
            &db,
            &cfg.attack,
            threshold,
            &protocol.truth_table,
            seeds.eve,
        )?;
        let r = AttackReport::score(AttackMode::Transient, g, truth_from_session(&out.session))?;
        let e = r.evaluation;
        let elapsed = start.elapsed().as_secs_f64();
        Ok((
            e.n >= 500 && e.accuracy >= 0.9 && e.p_value < 1e-6 && elapsed <= 300.0,
            format!(
                "{}/{} key bits = {:.4} (CI [{:.4}, {:.4}]), p = {:.1e}, {} abstentions, {} templates",
                e.correct, e.n, e.accuracy, e.wilson_low, e.wilson_high, e.p_value, r.abstentions, db.templates.len()
            ),
        ))
    })();
    finish(8, "transient attack", start, outcome)
}

/// Cold-resistor and Johnson-noise identities on random inputs.
pub fn cold_resistor_algebra(seed: u64) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
        let mut worst: f64 = 0.0;
        for _ in 0..10_000 {
            let r0 = 10f64.powf(rng.random_range(0.0..6.0));
            let t = rng.random_range(1.0..1000.0);
            let a_loop = rng.random_range(0.0..1000.0);
            let r_eff = cold_effective_resistance(r0, a_loop);
            let t_eff = cold_effective_temperature(t, a_loop);
            worst = worst
                .max(rel(r_eff * (1.0 + a_loop), r0))
                .max(rel(t_eff * (1.0 + a_loop), t))
                .max(rel(effective_temperature(johnson_spectrum(t, r0)?, r0)?, t))
                .max(rel(
                    johnson_spectrum(2.0 * t, r0)?,
                    2.0 * johnson_spectrum(t, r0)?,
                ))
                .max(rel(
                    johnson_spectrum(t_eff, r_eff)?,
                    johnson_spectrum(t, r0)? / ((1.0 + a_loop) * (1.0 + a_loop)),
                ));
        }
        Ok((
            worst <= 1e-12,
            format!("worst relative error {worst:.1e} over 10000 random cases"),
        ))
    })();
    finish(9, "cold-resistor algebra", start, outcome)
}

fn list_files(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Whether two artifact directories hold byte-identical files.
pub fn same_artifacts(a: &Path, b: &Path) -> Result<bool> {
    let (fa, fb) = (list_files(a)?, list_files(b)?);
    if fa != fb {
        return Ok(false);
    }
    for f in &fa {
        if fs::read(a.join(f))? != fs::read(b.join(f))? {
            return Ok(false);
        }
    }
    Ok(true)
}

pub const REPRO_BEPS: usize = 40;

/// Reruns `simulate` and `build-db` from their manifests.
pub fn reproducibility(cfg: &RunConfig, scratch: &Path) -> CheckResult {
    let start = Instant::now();
    let outcome = (|| {
        let _ = fs::remove_dir_all(scratch);
        let (sa, sb, da, db) = (
            scratch.join("sim_a"),
            scratch.join("sim_b"),
            scratch.join("db_a"),
            scratch.join("db_b"),
        );
        cmd_simulate(cfg, Some(REPRO_BEPS), &sa)?;
        let (replay, beps) = resolve_config(None, Some(&sa.join(MANIFEST_FILE)), None)?;
        cmd_simulate(&replay, beps, &sb)?;
        cmd_build_db(cfg, &da, false)?;
        let (replay, _) = resolve_config(None, Some(&da.join(MANIFEST_FILE)), None)?;
        cmd_build_db(&replay, &db, false)?;
        let sim_same = same_artifacts(&sa, &sb)?;
        let db_same = same_artifacts(&da, &db)?;
        let _ = fs::remove_dir_all(scratch);
        Ok((
            sim_same && db_same,
            format!("simulate identical: {sim_same}, build-db identical: {db_same}"),
        ))
    })();
    finish(10, "manifest reproducibility", start, outcome)
}

/// Runs every check in order, reporting each as soon as it finishes.
/// A threshold calibration failure is reported as check 0 and stops the run.
fn with_setup(mut r: CheckResult, setup_s: f64) -> CheckResult {
    r.seconds += setup_s;
    r
}

pub fn run_all(
    cfg: &RunConfig,
    scratch: &Path,
    mut report: impl FnMut(&CheckResult),
) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut push = |r: CheckResult, results: &mut Vec<CheckResult>| {
        report(&r);
        results.push(r);
    };

    let start = Instant::now();
    let threshold = resolve_threshold(
        &cfg.protocol,
        &cfg.circuit,
        &cfg.noise,
        cfg.seeds().calibration,
    );
    let threshold = match threshold {
        Ok(t) => t,
        Err(e) => {
            push(
                finish(0, "threshold calibration", start, Err(e)),
                &mut results,
            );
            return results;
        }
    };

    push(moment_agreement(cfg), &mut results);
    let start = Instant::now();
    match PinnedRuns::simulate(cfg, 1000) {
        Ok(runs) => {
            // Checks sharing a simulation each report its cost plus their own.
            let setup = start.elapsed().as_secs_f64();
            push(with_setup(sign_pattern(&runs), setup), &mut results);
            push(with_setup(scatter_scale(&runs), setup), &mut results);
            push(with_setup(indistinguishability(&runs), setup), &mut results);
        }
        Err(e) => {
            for (id, name) in [
                (2, "correlation sign pattern"),
                (3, "secure scatter scale"),
                (6, "LH/HL indistinguishability"),
            ] {
                push(
                    finish(id, name, start, Err(crate::Error::Format(e.to_string()))),
                    &mut results,
                );
            }
        }
    }

    let start = Instant::now();
    let sessions: Result<Vec<KeySession>> = [(4u64, SESSION_BEPS), (5, SESSION_BEPS + 2_000)]
        .iter()
        .map(|&(check, n)| {
            let protocol = crate::protocol::ProtocolConfig {
                n_bep: n,
                ..cfg.protocol
            };
            let seeds = seeds_for(cfg, check);
            Ok(run_session_with_threshold(
                &protocol,
                &cfg.circuit,
                &cfg.noise,
                &seeds,
                0,
                threshold,
            )?
            .session)
        })
        .collect();
    match sessions {
        Ok(s) => {
            let setup = start.elapsed().as_secs_f64();
            push(with_setup(yield_and_agreement(&s[0]), setup), &mut results);
            push(with_setup(steady_security(cfg, &s), setup), &mut results);
        }
        Err(e) => {
            let msg = e.to_string();
            push(
                finish(
                    4,
                    "yield and key agreement",
                    start,
                    Err(crate::Error::Format(msg.clone())),
                ),
                &mut results,
            );
            push(
                finish(
                    5,
                    "steady-state security",
                    start,
                    Err(crate::Error::Format(msg)),
                ),
                &mut results,
            );
        }
    }

    push(transient_symmetry(cfg), &mut results);
    push(transient_attack_works(cfg, threshold), &mut results);
    push(cold_resistor_algebra(cfg.master_seed), &mut results);
    push(reproducibility(cfg, scratch), &mut results);
    results.sort_by_key(|r| r.id);
    results
}
