//! Eve's precomputed transient database.
//!
//! Templates are frozen-noise switching transients on a lattice of initial
//! wire voltages around each situation's steady operating points. Only one
//! member of every mirror pair is stored; the other is answered by swapping
//! wires and grid coordinates.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::{Read, Write};

use crate::circuit::{frozen_transient, stability, CircuitParams, Stability};
use crate::noise::NoiseSpec;
use crate::protocol::BitSituation;
use crate::theory::steady_moments;
use crate::{Error, Result};

use super::matching::{match_transient, Candidates, MatchOptions};

pub const MAGIC: &[u8; 5] = b"CKDB1";

/// Seed of the off-grid queries used to set the abstention ceiling.
const CEILING_SEED: u64 = 0xC0FF_EE00_DB00_0001;

/// Lattice extent and resolution, in units of the local steady RMS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub half_width_rms: f64,
    pub spacing_rms: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            half_width_rms: 3.0,
            spacing_rms: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackParams {
    pub grid: GridSpec,
    /// Samples per template; `null` means four amplifier time constants.
    pub k_samples: Option<usize>,
    /// Abstain when the best distance exceeds this multiple of the median
    /// calibration distance.
    pub abstention_factor: f64,
    /// Eve compares every `eve_decimation`-th internal sample.
    pub eve_decimation: usize,
    pub calibration_queries: usize,
}

impl Default for AttackParams {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            k_samples: None,
            abstention_factor: 10.0,
            eve_decimation: 1,
            calibration_queries: 200,
        }
    }
}

impl AttackParams {
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.half_width_rms > 0.0 && g.spacing_rms > 0.0 && g.spacing_rms <= g.half_width_rms) {
            return Err(Error::config(
                "attack.grid",
                "need 0 < spacing_rms <= half_width_rms",
            ));
        }
        if self.k_samples == Some(0) || self.k_samples == Some(1) {
            return Err(Error::config("attack.k_samples", "must be at least 2"));
        }
        if !(self.abstention_factor > 0.0) {
            return Err(Error::config(
                "attack.abstention_factor",
                "must be positive",
            ));
        }
        if self.eve_decimation == 0 {
            return Err(Error::config("attack.eve_decimation", "must be at least 1"));
        }
        Ok(())
    }

    pub fn k_samples(&self, circuit: &CircuitParams, noise: &NoiseSpec) -> usize {
        self.k_samples.unwrap_or_else(|| {
            let dt = circuit.dt(noise.sample_rate_hz);
            (4.0 * circuit.amp_time_constant_s / dt).round() as usize
        })
    }
}

/// A square lattice `center + (i, j) * spacing`, `|i|, |j| <= half_count`,
/// of initial points for one pre-switch situation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Patch {
    pub pre: BitSituation,
    pub center: (f64, f64),
    pub spacing: f64,
    pub half_count: i32,
}

impl Patch {
    pub fn point(&self, i: i32, j: i32) -> (f64, f64) {
        (
            self.center.0 + i as f64 * self.spacing,
            self.center.1 + j as f64 * self.spacing,
        )
    }

    pub fn side(&self) -> usize {
        (2 * self.half_count + 1) as usize
    }

    pub fn contains(&self, i: i32, j: i32) -> bool {
        i.abs() <= self.half_count && j.abs() <= self.half_count
    }
}

/// Identifies one (possibly implicit) template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemplateKey {
    pub pre: BitSituation,
    pub post: BitSituation,
    pub patch: u32,
    pub i: i32,
    pub j: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientTemplate {
    pub key: TemplateKey,
    pub initial_point: (f64, f64),
    /// `k_samples` pairs `(v_ab, v_ba)`, interleaved.
    pub trajectory: Vec<f64>,
}

/// The twelve transitions between distinct situations.
pub fn all_transitions() -> Vec<(BitSituation, BitSituation)> {
    let mut out = Vec::with_capacity(12);
    for p in BitSituation::ALL {
        for q in BitSituation::ALL {
            if p != q {
                out.push((p, q));
            }
        }
    }
    out
}

/// `LL -> HH` and `HH -> LL` carry no key bit on either side.
pub fn is_discarded_transition(pre: BitSituation, post: BitSituation) -> bool {
    !pre.is_secure() && !post.is_secure()
}

/// Hash of every parameter that shapes a template.
pub fn fingerprint(circuit: &CircuitParams, noise: &NoiseSpec) -> [u8; 32] {
    canonical_params(circuit, noise).1
}

fn canonical_params(circuit: &CircuitParams, noise: &NoiseSpec) -> (String, [u8; 32]) {
    #[derive(Serialize)]
    struct Fp<'a> {
        circuit: &'a CircuitParams,
        noise: &'a NoiseSpec,
    }
    let json = serde_json::to_string(&Fp { circuit, noise }).expect("params serialize");
    let digest = Sha256::digest(json.as_bytes());
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    (json, out)
}

/// Lattices around the steady operating points of every situation.
pub fn build_patches(
    circuit: &CircuitParams,
    noise: &NoiseSpec,
    grid: &GridSpec,
) -> Result<Vec<Patch>> {
    let sigma = noise.target_rms_volts;
    let rail = circuit.saturation_volts;
    let half_count = (grid.half_width_rms / grid.spacing_rms).round() as i32;
    let mut patches = Vec::new();
    for pre in BitSituation::ALL {
        let gains = pre.gains(circuit.gain_magnitude);
        if stability(gains) == Stability::Stable {
            let m = steady_moments(gains.a1, gains.a2, sigma * sigma)?;
            let rms = m.msq_a.max(m.msq_b).sqrt();
            patches.push(Patch {
                pre,
                center: (0.0, 0.0),
                spacing: grid.spacing_rms * rms,
                half_count,
            });
        } else {
            // Latched on the rails; noise rides on top at its own RMS.
            let s = if gains.a1 > 0.0 { 1.0 } else { -1.0 };
            for sign in [1.0, -1.0] {
                patches.push(Patch {
                    pre,
                    center: (sign * rail, s * sign * rail),
                    spacing: grid.spacing_rms * sigma,
                    half_count,
                });
            }
        }
    }
    if patches.iter().any(|p| !(p.spacing > 0.0)) {
        return Err(Error::config(
            "noise.target_rms_volts",
            "grid spacing collapses to zero",
        ));
    }
    Ok(patches)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientDatabase {
    pub fingerprint: [u8; 32],
    /// Canonical JSON of the parameters hashed into `fingerprint`.
    pub params_json: String,
    pub circuit: CircuitParams,
    pub noise: NoiseSpec,
    pub grid: GridSpec,
    pub dt: f64,
    pub k_samples: usize,
    pub abstention_ceiling: f64,
    pub patches: Vec<Patch>,
    pub templates: Vec<TransientTemplate>,
    index: HashMap<TemplateKey, usize>,
    mirror_patch: Vec<u32>,
}

fn mirror_patches(patches: &[Patch]) -> Result<Vec<u32>> {
    patches
        .iter()
        .map(|p| {
            patches
                .iter()
                .position(|q| {
                    q.pre == p.pre.mirrored()
                        && q.center == (p.center.1, p.center.0)
                        && q.spacing == p.spacing
                        && q.half_count == p.half_count
                })
                .map(|i| i as u32)
                .ok_or_else(|| Error::Format("grid is not closed under mirroring".into()))
        })
        .collect()
}

impl TransientDatabase {
    /// Mirror image of a template key.
    pub fn mirror_key(&self, key: TemplateKey) -> TemplateKey {
        TemplateKey {
            pre: key.pre.mirrored(),
            post: key.post.mirrored(),
            patch: self.mirror_patch[key.patch as usize],
            i: key.j,
            j: key.i,
        }
    }

    fn is_canonical(mirror_patch: &[u32], key: TemplateKey) -> bool {
        let m = TemplateKey {
            pre: key.pre.mirrored(),
            post: key.post.mirrored(),
            patch: mirror_patch[key.patch as usize],
            i: key.j,
            j: key.i,
        };
        key <= m
    }

    pub fn patches_for(&self, pre: BitSituation) -> impl Iterator<Item = (u32, &Patch)> {
        self.patches
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.pre == pre)
            .map(|(i, p)| (i as u32, p))
    }

    /// Number of templates answered by the database, stored or mirrored.
    pub fn implied_len(&self) -> usize {
        self.patches.iter().map(|p| p.side() * p.side() * 3).sum()
    }

    /// Template for `key` and whether it had to be wire-swapped from storage.
    pub fn lookup(&self, key: TemplateKey) -> Option<(&TransientTemplate, bool)> {
        if let Some(&i) = self.index.get(&key) {
            return Some((&self.templates[i], false));
        }
        self.index
            .get(&self.mirror_key(key))
            .map(|&i| (&self.templates[i], true))
    }

    /// Materialised trajectory for `key`, swapping wires for mirrored entries.
    pub fn trajectory(&self, key: TemplateKey) -> Option<Vec<f64>> {
        let (t, swapped) = self.lookup(key)?;
        if !swapped {
            return Some(t.trajectory.clone());
        }
        Some(
            t.trajectory
                .chunks_exact(2)
                .flat_map(|p| [p[1], p[0]])
                .collect(),
        )
    }

    fn from_parts(
        circuit: CircuitParams,
        noise: NoiseSpec,
        grid: GridSpec,
        k_samples: usize,
        abstention_ceiling: f64,
        patches: Vec<Patch>,
        templates: Vec<TransientTemplate>,
    ) -> Result<Self> {
        let (params_json, fingerprint) = canonical_params(&circuit, &noise);
        let mirror_patch = mirror_patches(&patches)?;
        let index = templates
            .iter()
            .enumerate()
            .map(|(i, t)| (t.key, i))
            .collect();
        Ok(Self {
            fingerprint,
            params_json,
            dt: circuit.dt(noise.sample_rate_hz),
            circuit,
            noise,
            grid,
            k_samples,
            abstention_ceiling,
            patches,
            templates,
            index,
            mirror_patch,
        })
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    /// Refuses to attack a system whose parameters differ from the database's.
    pub fn check_fingerprint(&self, circuit: &CircuitParams, noise: &NoiseSpec) -> Result<()> {
        let other = fingerprint(circuit, noise);
        if other == self.fingerprint {
            Ok(())
        } else {
            Err(Error::FingerprintMismatch {
                database: self.fingerprint_hex(),
                session: hex::encode(other),
            })
        }
    }
}

/// Simulates every canonical template and calibrates the abstention ceiling.
pub fn build_database(
    circuit: &CircuitParams,
    noise: &NoiseSpec,
    attack: &AttackParams,
) -> Result<TransientDatabase> {
    attack.validate()?;
    noise.validate()?;
    circuit.validate(noise)?;
    let k = attack.k_samples(circuit, noise);
    let dt = circuit.dt(noise.sample_rate_hz);
    let patches = build_patches(circuit, noise, &attack.grid)?;
    let mirror_patch = mirror_patches(&patches)?;

    let mut keys = Vec::new();
    for (pi, patch) in patches.iter().enumerate() {
        for (pre, post) in all_transitions() {
            if pre != patch.pre {
                continue;
            }
            for i in -patch.half_count..=patch.half_count {
                for j in -patch.half_count..=patch.half_count {
                    let key = TemplateKey {
                        pre,
                        post,
                        patch: pi as u32,
                        i,
                        j,
                    };
                    if TransientDatabase::is_canonical(&mirror_patch, key) {
                        keys.push(key);
                    }
                }
            }
        }
    }
    let mag = circuit.gain_magnitude;
    let templates = keys
        .par_iter()
        .map(|&key| {
            let (a, b) = patches[key.patch as usize].point(key.i, key.j);
            let trace = frozen_transient(
                a,
                b,
                key.pre.gains(mag),
                key.post.gains(mag),
                circuit,
                dt,
                k,
            )?;
            let trajectory = trace
                .v_ab
                .iter()
                .zip(&trace.v_ba)
                .flat_map(|(x, y)| [*x, *y])
                .collect();
            Ok(TransientTemplate {
                key,
                initial_point: (a, b),
                trajectory,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut db = TransientDatabase::from_parts(
        *circuit,
        *noise,
        attack.grid,
        k,
        f64::INFINITY,
        patches,
        templates,
    )?;
    db.abstention_ceiling = attack.abstention_factor * calibration_median(&db, attack)?;
    Ok(db)
}

/// Median best-match distance of frozen transients started between grid points.
fn calibration_median(db: &TransientDatabase, attack: &AttackParams) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(CEILING_SEED);
    let transitions = all_transitions();
    let mag = db.circuit.gain_magnitude;
    let mut queries = Vec::with_capacity(attack.calibration_queries);
    for _ in 0..attack.calibration_queries.max(1) {
        let (pre, post) = transitions[rng.random_range(0..transitions.len())];
        let choices: Vec<&Patch> = db.patches.iter().filter(|p| p.pre == pre).collect();
        let patch = choices[rng.random_range(0..choices.len())];
        let span = (patch.half_count - 1).max(0) as f64 * patch.spacing;
        let a = patch.center.0 + rng.random_range(-span..=span);
        let b = patch.center.1 + rng.random_range(-span..=span);
        queries.push((pre, post, a, b));
    }
    let opts = MatchOptions {
        decimation: attack.eve_decimation,
        ceiling: f64::INFINITY,
    };
    let mut distances = queries
        .par_iter()
        .map(|&(pre, post, a, b)| {
            let t = frozen_transient(
                a,
                b,
                pre.gains(mag),
                post.gains(mag),
                &db.circuit,
                db.dt,
                db.k_samples,
            )?;
            Ok(match_transient(&t, db, &Candidates::all_switches(), &opts).distance)
        })
        .collect::<Result<Vec<f64>>>()?;
    distances.sort_by(f64::total_cmp);
    Ok(distances[distances.len() / 2])
}

fn situation_code(s: BitSituation) -> u8 {
    s.index() as u8
}

fn situation_from_code(c: u8) -> Result<BitSituation> {
    BitSituation::ALL
        .get(c as usize)
        .copied()
        .ok_or_else(|| Error::Format(format!("bad situation code {c}")))
}

/// Writes the `CKDB1` container (little-endian throughout).
///
/// Layout: magic, 32-byte fingerprint, `u32` length + params JSON, grid spec
/// (`f64` x2), `dt`, `u32 k_samples`, abstention ceiling, `u32` patch count and
/// patches (`u8 pre`, centre `f64` x2, spacing, `i32 half_count`), `u64`
/// template count and templates (`u8 pre`, `u8 post`, `u32 patch`, `i32 i`,
/// `i32 j`, initial point `f64` x2, `2 * k_samples` trajectory values).
pub fn write_database<W: Write>(db: &TransientDatabase, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&db.fingerprint)?;
    w.write_u32::<LittleEndian>(db.params_json.len() as u32)?;
    w.write_all(db.params_json.as_bytes())?;
    w.write_f64::<LittleEndian>(db.grid.half_width_rms)?;
    w.write_f64::<LittleEndian>(db.grid.spacing_rms)?;
    w.write_f64::<LittleEndian>(db.dt)?;
    w.write_u32::<LittleEndian>(db.k_samples as u32)?;
    w.write_f64::<LittleEndian>(db.abstention_ceiling)?;
    w.write_u32::<LittleEndian>(db.patches.len() as u32)?;
    for p in &db.patches {
        w.write_u8(situation_code(p.pre))?;
        w.write_f64::<LittleEndian>(p.center.0)?;
        w.write_f64::<LittleEndian>(p.center.1)?;
        w.write_f64::<LittleEndian>(p.spacing)?;
        w.write_i32::<LittleEndian>(p.half_count)?;
    }
    w.write_u64::<LittleEndian>(db.templates.len() as u64)?;
    for t in &db.templates {
        w.write_u8(situation_code(t.key.pre))?;
        w.write_u8(situation_code(t.key.post))?;
        w.write_u32::<LittleEndian>(t.key.patch)?;
        w.write_i32::<LittleEndian>(t.key.i)?;
        w.write_i32::<LittleEndian>(t.key.j)?;
        w.write_f64::<LittleEndian>(t.initial_point.0)?;
        w.write_f64::<LittleEndian>(t.initial_point.1)?;
        for v in &t.trajectory {
            w.write_f64::<LittleEndian>(*v)?;
        }
    }
    Ok(())
}

pub fn read_database<R: Read>(mut r: R) -> Result<TransientDatabase> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a CKDB1 database".into()));
    }
    let mut fp = [0u8; 32];
    r.read_exact(&mut fp)?;
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let json = String::from_utf8(json).map_err(|e| Error::Format(e.to_string()))?;

    #[derive(Deserialize)]
    struct Fp {
        circuit: CircuitParams,
        noise: NoiseSpec,
    }
    let params: Fp = serde_json::from_str(&json)?;
    let (canon, expected) = canonical_params(&params.circuit, &params.noise);
    if expected != fp || canon != json {
        return Err(Error::Format(
            "stored fingerprint does not hash the stored parameters; refusing database".into(),
        ));
    }
    let grid = GridSpec {
        half_width_rms: r.read_f64::<LittleEndian>()?,
        spacing_rms: r.read_f64::<LittleEndian>()?,
    };
    let _dt = r.read_f64::<LittleEndian>()?;
    let k = r.read_u32::<LittleEndian>()? as usize;
    let ceiling = r.read_f64::<LittleEndian>()?;
    let n_patches = r.read_u32::<LittleEndian>()? as usize;
    let mut patches = Vec::with_capacity(n_patches);
    for _ in 0..n_patches {
        patches.push(Patch {
            pre: situation_from_code(r.read_u8()?)?,
            center: (r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?),
            spacing: r.read_f64::<LittleEndian>()?,
            half_count: r.read_i32::<LittleEndian>()?,
        });
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut templates = Vec::with_capacity(n);
    for _ in 0..n {
        let key = TemplateKey {
            pre: situation_from_code(r.read_u8()?)?,
            post: situation_from_code(r.read_u8()?)?,
            patch: r.read_u32::<LittleEndian>()?,
            i: r.read_i32::<LittleEndian>()?,
            j: r.read_i32::<LittleEndian>()?,
        };
        if key.patch as usize >= patches.len() {
            return Err(Error::Format(format!(
                "template refers to missing patch {}",
                key.patch
            )));
        }
        let initial_point = (r.read_f64::<LittleEndian>()?, r.read_f64::<LittleEndian>()?);
        let mut trajectory = vec![0.0; 2 * k];
        r.read_f64_into::<LittleEndian>(&mut trajectory)?;
        templates.push(TransientTemplate {
            key,
            initial_point,
            trajectory,
        });
    }
    TransientDatabase::from_parts(
        params.circuit,
        params.noise,
        grid,
        k,
        ceiling,
        patches,
        templates,
    )
}

pub const DATABASE_CSV_HEADER: &str = "pre,post,v_a0,v_b0,sample,v_ab_volts,v_ba_volts";

/// Stored templates as long-format CSV for inspection.
pub fn write_database_csv<W: Write>(db: &TransientDatabase, mut w: W) -> Result<()> {
    writeln!(w, "{DATABASE_CSV_HEADER}")?;
    for t in &db.templates {
        for (n, p) in t.trajectory.chunks_exact(2).enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                t.key.pre, t.key.post, t.initial_point.0, t.initial_point.1, n, p[0], p[1]
            )?;
        }
    }
    Ok(())
}
