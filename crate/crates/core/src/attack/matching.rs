//! Nearest-template search.

use serde::Serialize;

use crate::circuit::WireTrace;
use crate::protocol::BitSituation;

use super::database::{all_transitions, TemplateKey, TransientDatabase};

/// What Eve concludes happened at a boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Transition {
    Switch {
        pre: BitSituation,
        post: BitSituation,
    },
    /// Neither party changed its resistor; the trace stays flat.
    Hold,
}

/// The transitions a match may return.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidates {
    pub switches: Vec<(BitSituation, BitSituation)>,
    pub hold: bool,
}

impl Candidates {
    pub fn all_switches() -> Self {
        Self {
            switches: all_transitions(),
            hold: false,
        }
    }

    pub fn everything() -> Self {
        Self {
            switches: all_transitions(),
            hold: true,
        }
    }

    /// Transitions compatible with the situation sets on either side.
    pub fn between(before: &[BitSituation], after: &[BitSituation]) -> Self {
        let mut switches = Vec::new();
        for &p in before {
            for &q in after {
                if p != q {
                    switches.push((p, q));
                }
            }
        }
        let hold = before.iter().any(|s| after.contains(s));
        Self { switches, hold }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOptions {
    /// Compare every `decimation`-th sample.
    pub decimation: usize,
    pub ceiling: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchResult {
    pub transition: Transition,
    /// Grid template behind a switch verdict.
    pub key: Option<TemplateKey>,
    /// Sum of squared differences over the compared samples, V^2.
    pub distance: f64,
    /// Best distance exceeded the abstention ceiling.
    pub abstained: bool,
}

fn observed(trace: &WireTrace, k: usize, stride: usize) -> Vec<(f64, f64)> {
    (0..k.min(trace.len()))
        .step_by(stride)
        .map(|n| (trace.v_ab[n], trace.v_ba[n]))
        .collect()
}

/// Squared distance to a stored trajectory, giving up once `bound` is passed.
fn distance(obs: &[(f64, f64)], traj: &[f64], stride: usize, swapped: bool, bound: f64) -> f64 {
    let mut d = 0.0;
    for (m, &(a, b)) in obs.iter().enumerate() {
        let n = 2 * m * stride;
        let (ta, tb) = if swapped {
            (traj[n + 1], traj[n])
        } else {
            (traj[n], traj[n + 1])
        };
        d += (a - ta) * (a - ta) + (b - tb) * (b - tb);
        if d >= bound {
            return d;
        }
    }
    d
}

/// Exact nearest template among `candidates`.
///
/// The first-sample term of the distance is a lower bound for the whole sum,
/// so lattice points whose starting voltage alone is already too far are
/// skipped without touching their trajectories.
pub fn match_transient(
    trace: &WireTrace,
    db: &TransientDatabase,
    candidates: &Candidates,
    opts: &MatchOptions,
) -> MatchResult {
    let stride = opts.decimation.max(1);
    let obs = observed(trace, db.k_samples, stride);
    let mut best = MatchResult {
        transition: Transition::Hold,
        key: None,
        distance: f64::INFINITY,
        abstained: true,
    };
    if obs.is_empty() {
        return best;
    }
    let (a0, b0) = obs[0];
    if candidates.hold {
        best.distance = obs
            .iter()
            .map(|(a, b)| (a - a0) * (a - a0) + (b - b0) * (b - b0))
            .sum();
    }

    let try_key = |key: TemplateKey, best: &mut MatchResult| {
        if let Some((t, swapped)) = db.lookup(key) {
            let d = distance(&obs, &t.trajectory, stride, swapped, best.distance);
            if d < best.distance {
                *best = MatchResult {
                    transition: Transition::Switch {
                        pre: key.pre,
                        post: key.post,
                    },
                    key: Some(key),
                    distance: d,
                    abstained: false,
                };
            }
        }
    };

    for &(pre, post) in &candidates.switches {
        for (pi, patch) in db.patches_for(pre) {
            let h = patch.half_count;
            let nearest = |x: f64, c: f64| (((x - c) / patch.spacing).round() as i32).clamp(-h, h);
            let (ni, nj) = (nearest(a0, patch.center.0), nearest(b0, patch.center.1));
            try_key(
                TemplateKey {
                    pre,
                    post,
                    patch: pi,
                    i: ni,
                    j: nj,
                },
                &mut best,
            );

            let dx: Vec<f64> = (-h..=h)
                .map(|i| {
                    let x = patch.center.0 + i as f64 * patch.spacing - a0;
                    x * x
                })
                .collect();
            let dy: Vec<f64> = (-h..=h)
                .map(|j| {
                    let y = patch.center.1 + j as f64 * patch.spacing - b0;
                    y * y
                })
                .collect();
            for (ii, &ex) in dx.iter().enumerate() {
                if ex >= best.distance {
                    continue;
                }
                for (jj, &ey) in dy.iter().enumerate() {
                    if ex + ey >= best.distance {
                        continue;
                    }
                    let (i, j) = (ii as i32 - h, jj as i32 - h);
                    if (i, j) != (ni, nj) {
                        try_key(
                            TemplateKey {
                                pre,
                                post,
                                patch: pi,
                                i,
                                j,
                            },
                            &mut best,
                        );
                    }
                }
            }
        }
    }
    best.abstained = !(best.distance <= opts.ceiling);
    best
}
