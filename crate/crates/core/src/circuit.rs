//! Discrete-time model of the symmetrised cold-resistor loop.
//!
//! Alice's amplifier output `y1` plus her series noise source `u1` forms the
//! voltage `v_a` on the wire towards Bob; Bob's `y2 + u2` forms `v_b`. Each
//! amplifier is a saturating first-order lag driven by the other party's wire:
//!
//! ```text
//! tau * dy1/dt = -y1 + clip(a1 * v_b)
//! tau * dy2/dt = -y2 + clip(a2 * v_a)
//! ```
//!
//! Both equations are advanced together from the pre-step state with a
//! classical Runge-Kutta step, so swapping the parties (gains, wires and
//! noise) maps trajectories onto each other exactly.

use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

use crate::noise::{NoiseSource, NoiseSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainPair {
    /// Alice's gain.
    pub a1: f64,
    /// Bob's gain.
    pub a2: f64,
}

impl GainPair {
    pub const fn new(a1: f64, a2: f64) -> Self {
        Self { a1, a2 }
    }

    pub fn swapped(self) -> Self {
        Self {
            a1: self.a2,
            a2: self.a1,
        }
    }

    pub fn loop_product(self) -> f64 {
        self.a1 * self.a2
    }

    fn lerp(self, to: GainPair, frac: f64) -> Self {
        Self {
            a1: self.a1 + (to.a1 - self.a1) * frac,
            a2: self.a2 + (to.a2 - self.a2) * frac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchingProfile {
    #[default]
    Step,
    /// Linear interpolation of each gain over `duration_s`.
    Ramp { duration_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitParams {
    pub gain_magnitude: f64,
    pub amp_time_constant_s: f64,
    pub saturation_volts: f64,
    /// Internal integration steps per noise sample.
    pub internal_oversample: usize,
    pub switching_profile: SwitchingProfile,
}

impl Default for CircuitParams {
    fn default() -> Self {
        Self {
            gain_magnitude: 5.0,
            amp_time_constant_s: 1e-6,
            saturation_volts: 15.0,
            internal_oversample: 64,
            switching_profile: SwitchingProfile::Step,
        }
    }
}

/// Minimum ratio of noise correlation time to amplifier time constant.
pub const MIN_TIMESCALE_SEPARATION: f64 = 5.0;
/// Below this ratio the frozen-noise picture of a transient is only approximate.
pub const FROZEN_NOISE_SEPARATION: f64 = 100.0;

impl CircuitParams {
    /// Internal integration step for a given noise sample rate.
    pub fn dt(&self, sample_rate_hz: f64) -> f64 {
        1.0 / (self.internal_oversample as f64 * sample_rate_hz)
    }

    /// `A_L` and `A_H`.
    pub fn levels(&self) -> (f64, f64) {
        (-self.gain_magnitude, self.gain_magnitude)
    }

    pub fn timescale_separation(&self, noise: &NoiseSpec) -> f64 {
        noise.correlation_time_s() / self.amp_time_constant_s
    }

    /// Checks the parameters against the noise they will be driven by and
    /// returns non-fatal warnings.
    pub fn validate(&self, noise: &NoiseSpec) -> Result<Vec<String>> {
        let pos = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {x}")))
            }
        };
        pos("circuit.gain_magnitude", self.gain_magnitude)?;
        pos("circuit.amp_time_constant_s", self.amp_time_constant_s)?;
        pos("circuit.saturation_volts", self.saturation_volts)?;
        if self.internal_oversample == 0 {
            return Err(Error::config(
                "circuit.internal_oversample",
                "must be at least 1",
            ));
        }
        if let SwitchingProfile::Ramp { duration_s } = self.switching_profile {
            if !(duration_s >= 0.0 && duration_s.is_finite()) {
                return Err(Error::config(
                    "circuit.switching_profile.duration_s",
                    "must be finite and non-negative",
                ));
            }
        }
        let dt = self.dt(noise.sample_rate_hz);
        if dt > self.amp_time_constant_s / 4.0 {
            return Err(Error::config(
                "circuit.internal_oversample",
                format!("internal step {dt:e} s exceeds a quarter of the amplifier time constant"),
            ));
        }
        let ratio = self.timescale_separation(noise);
        if ratio < MIN_TIMESCALE_SEPARATION {
            return Err(Error::config(
                "circuit.amp_time_constant_s",
                format!("noise correlation time is only {ratio:.2}x the amplifier time constant"),
            ));
        }
        let mut warnings = Vec::new();
        if ratio < FROZEN_NOISE_SEPARATION {
            warnings.push(format!(
                "timescale separation {ratio:.1} is below {FROZEN_NOISE_SEPARATION}; \
                 noise is only approximately frozen during transients"
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
}

/// Linear stability of the loop: the two-lag loop is stable iff `a1*a2 < 1`.
pub fn stability(gains: GainPair) -> Stability {
    if gains.loop_product() < 1.0 {
        Stability::Stable
    } else {
        Stability::Unstable
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitState {
    pub y1: f64,
    pub y2: f64,
    /// Noise currently injected in series with Alice's amplifier.
    pub u1: f64,
    pub u2: f64,
    pub gains: GainPair,
    pub time_s: f64,
}

impl CircuitState {
    pub fn at_rest(gains: GainPair) -> Self {
        Self {
            y1: 0.0,
            y2: 0.0,
            u1: 0.0,
            u2: 0.0,
            gains,
            time_s: 0.0,
        }
    }

    /// Wire voltage at point A (Alice to Bob).
    #[inline]
    pub fn v_a(&self) -> f64 {
        self.y1 + self.u1
    }

    /// Wire voltage at point B (Bob to Alice).
    #[inline]
    pub fn v_b(&self) -> f64 {
        self.y2 + self.u2
    }
}

#[inline]
fn clip(x: f64, rail: f64) -> f64 {
    x.clamp(-rail, rail)
}

/// Substeps used for a step during which an amplifier enters or leaves
/// saturation.
const KINK_SUBSTEPS: usize = 16;

/// Classical RK4 for the two lags with noise held, in units where the step
/// is `c = dt / tau`.
struct Rk4 {
    a1: f64,
    a2: f64,
    u1: f64,
    u2: f64,
    rail: f64,
    c: f64,
}

/// Bit mask of which rail, if any, an amplifier input is beyond.
#[inline]
fn rail_bits(x: f64, rail: f64) -> u8 {
    (x > rail) as u8 | ((x < -rail) as u8) << 1
}

impl Rk4 {
    /// One step, plus whether the saturation pattern changed within it.
    ///
    /// Each amplifier's lag obeys `y' = (z - y) / tau` with `z` its clipped
    /// drive. With `h = c / 2` the RK4 stage states are affine in `y` and the
    /// earlier drives:
    ///
    /// ```text
    /// Y1 = y
    /// Y2 = (1 - h) y + h z1
    /// Y3 = (1 - h + h^2) y - h^2 z1 + h z2
    /// Y4 = (1 - c (1 - h + h^2)) y + c h^2 z1 - c h z2 + c z3
    /// y' = y + c/6 (z1 + 2 z2 + 2 z3 + z4 - Y1 - 2 Y2 - 2 Y3 - Y4)
    /// ```
    ///
    /// Written this way, consecutive stages are linked by a single
    /// multiply-add, which roughly halves the dependency chain.
    #[inline(always)]
    fn step(&self, y1: f64, y2: f64) -> (f64, f64, bool) {
        let Self {
            a1,
            a2,
            u1,
            u2,
            rail,
            c,
        } = *self;
        let h = 0.5 * c;
        let g3 = 1.0 - h + h * h;
        let g4 = 1.0 - c * g3;
        // Drive of amplifier 1 depends on wire B, amplifier 2 on wire A.
        let drive = |ya: f64, yb: f64| (a1 * (yb + u2), a2 * (ya + u1));

        let (x1a, x1b) = drive(y1, y2);
        let (z1a, z1b) = (clip(x1a, rail), clip(x1b, rail));
        let (x2a, x2b) = (
            a1 * ((1.0 - h) * y2 + u2) + a1 * h * z1b,
            a2 * ((1.0 - h) * y1 + u1) + a2 * h * z1a,
        );
        let (z2a, z2b) = (clip(x2a, rail), clip(x2b, rail));
        let (x3a, x3b) = (
            a1 * (g3 * y2 + u2 - h * h * z1b) + a1 * h * z2b,
            a2 * (g3 * y1 + u1 - h * h * z1a) + a2 * h * z2a,
        );
        let (z3a, z3b) = (clip(x3a, rail), clip(x3b, rail));
        let (x4a, x4b) = (
            a1 * (g4 * y2 + u2 + c * h * h * z1b - c * h * z2b) + a1 * c * z3b,
            a2 * (g4 * y1 + u1 + c * h * h * z1a - c * h * z2a) + a2 * c * z3a,
        );
        let (z4a, z4b) = (clip(x4a, rail), clip(x4b, rail));

        let stage_sum = |y: f64, z1: f64, z2: f64, z3: f64| {
            let s2 = (1.0 - h) * y + h * z1;
            let s3 = g3 * y - h * h * z1 + h * z2;
            let s4 = g4 * y + c * h * h * z1 - c * h * z2 + c * z3;
            y + 2.0 * s2 + 2.0 * s3 + s4
        };
        let n1 = y1 + c / 6.0 * (z1a + 2.0 * z2a + 2.0 * z3a + z4a - stage_sum(y1, z1a, z2a, z3a));
        let n2 = y2 + c / 6.0 * (z1b + 2.0 * z2b + 2.0 * z3b + z4b - stage_sum(y2, z1b, z2b, z3b));

        let bits = |xa: f64, xb: f64| rail_bits(xa, rail) | rail_bits(xb, rail) << 2;
        let s1 = bits(x1a, x1b);
        let kinked = ((s1 ^ bits(x2a, x2b)) | (s1 ^ bits(x3a, x3b)) | (s1 ^ bits(x4a, x4b))) != 0;
        (n1, n2, kinked)
    }
}

/// Advances the loop by one internal step with noise `u1`, `u2` held.
///
/// Classical RK4; a step in which either amplifier crosses a rail is redone
/// with [`KINK_SUBSTEPS`] substeps.
#[inline]
pub fn step(
    state: &CircuitState,
    params: &CircuitParams,
    u1: f64,
    u2: f64,
    dt: f64,
) -> Result<CircuitState> {
    let tau = params.amp_time_constant_s;
    if dt > tau / 4.0 {
        return Err(Error::config(
            "dt",
            format!("step {dt:e} s exceeds a quarter of the time constant {tau:e} s"),
        ));
    }
    let rail = params.saturation_volts;
    let mut sub = Rk4 {
        a1: state.gains.a1,
        a2: state.gains.a2,
        u1,
        u2,
        rail,
        c: dt / tau,
    };
    let (mut n1, mut n2, kinked) = sub.step(state.y1, state.y2);
    if kinked {
        // A rail was crossed inside the step, where RK4 drops to first order.
        sub.c /= KINK_SUBSTEPS as f64;
        (n1, n2) = (state.y1, state.y2);
        for _ in 0..KINK_SUBSTEPS {
            (n1, n2, _) = sub.step(n1, n2);
        }
    }
    if !(n1.is_finite() && n2.is_finite()) {
        return Err(Error::Fault {
            time_s: state.time_s,
            reason: format!("non-finite amplifier output ({n1}, {n2})"),
        });
    }
    // RK4 can overshoot a rail by rounding; the lag never leaves [-rail, rail].
    Ok(CircuitState {
        y1: clip(n1, rail),
        y2: clip(n2, rail),
        u1,
        u2,
        gains: state.gains,
        time_s: state.time_s + dt,
    })
}

/// Gains as a function of time around one switching event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSchedule {
    pub from: GainPair,
    pub to: GainPair,
    pub start_s: f64,
    /// Zero for an abrupt step.
    pub ramp_s: f64,
}

impl GainSchedule {
    pub fn constant(gains: GainPair) -> Self {
        Self {
            from: gains,
            to: gains,
            start_s: 0.0,
            ramp_s: 0.0,
        }
    }

    pub fn gains_at(&self, t: f64) -> GainPair {
        if t < self.start_s {
            self.from
        } else if self.ramp_s <= 0.0 || t >= self.start_s + self.ramp_s {
            self.to
        } else {
            self.from.lerp(self.to, (t - self.start_s) / self.ramp_s)
        }
    }
}

/// Schedules a change from the state's current gains to `target`, starting now.
pub fn set_gains(
    state: &CircuitState,
    target: GainPair,
    profile: SwitchingProfile,
) -> GainSchedule {
    let ramp_s = match profile {
        SwitchingProfile::Step => 0.0,
        SwitchingProfile::Ramp { duration_s } => duration_s,
    };
    GainSchedule {
        from: state.gains,
        to: target,
        start_s: state.time_s,
        ramp_s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceRate {
    /// One sample per internal integration step.
    Internal,
    /// Decimated to the measurement rate.
    Measurement,
}

/// Voltages observed on the two wires.
#[derive(Debug, Clone, PartialEq)]
pub struct WireTrace {
    pub start_s: f64,
    pub period_s: f64,
    pub rate: TraceRate,
    pub v_ab: Vec<f64>,
    pub v_ba: Vec<f64>,
}

pub const TRACE_CSV_HEADER: &str = "t_s,v_ab_volts,v_ba_volts";

impl WireTrace {
    pub fn new(start_s: f64, period_s: f64, rate: TraceRate) -> Self {
        Self {
            start_s,
            period_s,
            rate,
            v_ab: Vec::new(),
            v_ba: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.v_ab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_ab.is_empty()
    }

    pub fn push(&mut self, v_ab: f64, v_ba: f64) {
        self.v_ab.push(v_ab);
        self.v_ba.push(v_ba);
    }

    /// The same trace with the two wires exchanged.
    pub fn wire_swapped(&self) -> Self {
        Self {
            v_ab: self.v_ba.clone(),
            v_ba: self.v_ab.clone(),
            ..self.clone()
        }
    }

    pub fn time_at(&self, i: usize) -> f64 {
        self.start_s + i as f64 * self.period_s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{}", self.time_at(i), self.v_ab[i], self.v_ba[i])?;
        }
        Ok(())
    }

    /// Reads a trace written by [`WireTrace::write_csv`]. The sample period is
    /// recovered from the first two rows.
    pub fn read_csv<R: BufRead>(r: R, rate: TraceRate) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == TRACE_CSV_HEADER => {}
            _ => {
                return Err(Error::Format(format!(
                    "expected header `{TRACE_CSV_HEADER}`"
                )))
            }
        }
        let mut t = Vec::new();
        let mut trace = WireTrace::new(0.0, 0.0, rate);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',').map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("bad number `{s}`: {e}")))
            });
            let mut next = || {
                fields
                    .next()
                    .unwrap_or_else(|| Err(Error::Format(format!("short row `{line}`"))))
            };
            t.push(next()?);
            let (a, b) = (next()?, next()?);
            trace.push(a, b);
        }
        trace.start_s = t.first().copied().unwrap_or(0.0);
        if t.len() > 1 {
            trace.period_s = t[1] - t[0];
        }
        Ok(trace)
    }
}

/// Which samples [`LoopSimulator::run_segment`] should keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TraceRequest {
    /// Keep one sample every `decimation` internal steps; 0 keeps none.
    pub decimation: usize,
    /// Also keep the first `full_prefix` samples at the internal rate,
    /// starting with the state at the segment start.
    pub full_prefix: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTrace {
    pub decimated: WireTrace,
    pub prefix: WireTrace,
}

/// Time-marching driver: circuit state, two noise sources and a gain schedule.
///
/// One noise sample per source is drawn every `internal_oversample` steps and
/// held in between.
#[derive(Debug, Clone)]
pub struct LoopSimulator {
    params: CircuitParams,
    dt: f64,
    hold: u64,
    state: CircuitState,
    sources: [NoiseSource; 2],
    schedule: GainSchedule,
    step_index: u64,
}

impl LoopSimulator {
    pub fn new(
        params: CircuitParams,
        src1: NoiseSource,
        src2: NoiseSource,
        gains: GainPair,
    ) -> Result<Self> {
        let spec = *src1.spec();
        if *src2.spec() != spec {
            return Err(Error::config("noise", "both sources must share one spec"));
        }
        params.validate(&spec)?;
        Ok(Self {
            params,
            dt: params.dt(spec.sample_rate_hz),
            hold: params.internal_oversample as u64,
            state: CircuitState::at_rest(gains),
            sources: [src1, src2],
            schedule: GainSchedule::constant(gains),
            step_index: 0,
        })
    }

    pub fn state(&self) -> &CircuitState {
        &self.state
    }

    pub fn params(&self) -> &CircuitParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn steps_for(&self, duration_s: f64) -> u64 {
        (duration_s / self.dt).round() as u64
    }

    /// Switches towards `target` using the configured profile, from now on.
    pub fn switch_to(&mut self, target: GainPair) {
        let current = self.schedule.gains_at(self.state.time_s);
        self.state.gains = current;
        self.schedule = set_gains(&self.state, target, self.params.switching_profile);
    }

    /// Advances `n_steps` internal steps.
    pub fn run_segment(&mut self, n_steps: u64, req: TraceRequest) -> Result<SegmentTrace> {
        let t0 = self.state.time_s;
        let dec = req.decimation as u64;
        let mut decimated = WireTrace::new(
            t0 + dec as f64 * self.dt,
            dec as f64 * self.dt,
            TraceRate::Measurement,
        );
        let mut prefix = WireTrace::new(t0, self.dt, TraceRate::Internal);
        if let Some(cap) = n_steps.checked_div(dec) {
            let cap = cap as usize;
            decimated.v_ab.reserve(cap);
            decimated.v_ba.reserve(cap);
        }
        // Phase counters instead of per-step modulo.
        let mut hold_phase = self.step_index % self.hold;
        let mut dec_phase = 0;
        for j in 0..n_steps {
            let (u1, u2) = if hold_phase == 0 {
                (self.sources[0].next_noise(), self.sources[1].next_noise())
            } else {
                (self.state.u1, self.state.u2)
            };
            hold_phase += 1;
            if hold_phase == self.hold {
                hold_phase = 0;
            }
            self.state.u1 = u1;
            self.state.u2 = u2;
            self.state.gains = self.schedule.gains_at(self.state.time_s);
            if (j as usize) < req.full_prefix {
                prefix.push(self.state.v_a(), self.state.v_b());
            }
            self.state = step(&self.state, &self.params, u1, u2, self.dt)?;
            self.step_index += 1;
            self.state.time_s = self.step_index as f64 * self.dt;
            dec_phase += 1;
            if dec_phase == dec {
                dec_phase = 0;
                decimated.push(self.state.v_a(), self.state.v_b());
            }
        }
        Ok(SegmentTrace { decimated, prefix })
    }

    /// Runs for `duration_s`, returning a measurement-rate trace decimated by
    /// `decimation` internal steps.
    pub fn run_for(&mut self, duration_s: f64, decimation: usize) -> Result<WireTrace> {
        let n = self.steps_for(duration_s);
        Ok(self
            .run_segment(
                n,
                TraceRequest {
                    decimation,
                    full_prefix: 0,
                },
            )?
            .decimated)
    }
}

/// Internal state consistent with wire voltages `(v_a0, v_b0)` in steady state
/// under `gains`, assuming the noise is frozen.
pub fn steady_consistent_state(v_a0: f64, v_b0: f64, gains: GainPair, rail: f64) -> CircuitState {
    let y1 = clip(gains.a1 * v_b0, rail);
    let y2 = clip(gains.a2 * v_a0, rail);
    CircuitState {
        y1,
        y2,
        u1: v_a0 - y1,
        u2: v_b0 - y2,
        gains,
        time_s: 0.0,
    }
}

/// Deterministic switching transient from `pre` to `post` gains with the noise
/// frozen at the values implied by the initial wire voltages.
///
/// Returns `k_samples` internal-rate samples; sample 0 is `(v_a0, v_b0)`.
pub fn frozen_transient(
    v_a0: f64,
    v_b0: f64,
    pre: GainPair,
    post: GainPair,
    params: &CircuitParams,
    dt: f64,
    k_samples: usize,
) -> Result<WireTrace> {
    let mut state = steady_consistent_state(v_a0, v_b0, pre, params.saturation_volts);
    let (u1, u2) = (state.u1, state.u2);
    let schedule = set_gains(&state, post, params.switching_profile);
    let mut trace = WireTrace::new(0.0, dt, TraceRate::Internal);
    trace.v_ab.reserve(k_samples);
    trace.v_ba.reserve(k_samples);
    for n in 0..k_samples {
        trace.push(state.v_a(), state.v_b());
        if n + 1 == k_samples {
            break;
        }
        state.gains = schedule.gains_at(n as f64 * dt);
        state = step(&state, params, u1, u2, dt)?;
    }
    // The reconstruction is exact only when the clipped products are exact.
    trace.v_ab[0] = v_a0;
    trace.v_ba[0] = v_b0;
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1.0 / (64.0 * 250_000.0);

    fn params() -> CircuitParams {
        CircuitParams::default()
    }

    fn settle(gains: GainPair, u1: f64, u2: f64, n: usize) -> CircuitState {
        let mut s = CircuitState::at_rest(gains);
        for _ in 0..n {
            s = step(&s, &params(), u1, u2, DT).unwrap();
        }
        s
    }

    /// Textbook RK4 on `tau y' = -y + clip(a x)`, used as an oracle.
    fn textbook_rk4(y: [f64; 2], g: GainPair, u: [f64; 2], dt: f64, p: &CircuitParams) -> [f64; 2] {
        let r = p.saturation_volts;
        let f = |y: [f64; 2]| {
            [
                (-y[0] + (g.a1 * (y[1] + u[1])).clamp(-r, r)) / p.amp_time_constant_s,
                (-y[1] + (g.a2 * (y[0] + u[0])).clamp(-r, r)) / p.amp_time_constant_s,
            ]
        };
        let add = |y: [f64; 2], k: [f64; 2], s: f64| [y[0] + s * k[0], y[1] + s * k[1]];
        let k1 = f(y);
        let k2 = f(add(y, k1, dt / 2.0));
        let k3 = f(add(y, k2, dt / 2.0));
        let k4 = f(add(y, k3, dt));
        [0, 1].map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    #[test]
    fn step_matches_textbook_rk4_away_from_rails() {
        let p = params();
        let cases = [
            (GainPair::new(-5.0, 5.0), [0.3, -0.7], [0.05, 0.02]),
            (GainPair::new(0.5, 0.5), [1.2, 0.4], [-0.1, 0.3]),
            (GainPair::new(-0.5, -0.5), [-2.0, 1.0], [0.2, -0.2]),
            // Both amplifiers pinned to a rail for the whole step.
            (GainPair::new(5.0, 5.0), [14.0, 14.5], [1.0, 1.0]),
        ];
        for (g, y, u) in cases {
            let s = CircuitState {
                y1: y[0],
                y2: y[1],
                u1: u[0],
                u2: u[1],
                gains: g,
                time_s: 0.0,
            };
            let n = step(&s, &p, u[0], u[1], DT).unwrap();
            let want = textbook_rk4(y, g, u, DT, &p);
            for (got, want) in [(n.y1, want[0]), (n.y2, want[1])] {
                assert!(
                    (got - want).abs() <= 1e-12 * want.abs().max(1.0),
                    "{g:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn rail_crossing_step_is_substepped() {
        // Drive of amplifier 1 enters saturation mid-step.
        let p = params();
        let g = GainPair::new(5.0, 5.0);
        let s = CircuitState {
            y1: 2.9,
            y2: 2.99,
            u1: 0.0,
            u2: 0.0,
            gains: g,
            time_s: 0.0,
        };
        let n = step(&s, &p, 0.0, 0.0, DT).unwrap();
        let mut fine = [s.y1, s.y2];
        for _ in 0..KINK_SUBSTEPS {
            fine = textbook_rk4(fine, g, [0.0, 0.0], DT / KINK_SUBSTEPS as f64, &p);
        }
        assert!(
            (n.y1 - fine[0]).abs() < 1e-12 && (n.y2 - fine[1]).abs() < 1e-12,
            "{n:?} vs {fine:?}"
        );
    }

    #[test]
    fn zero_stays_zero() {
        for g in [
            GainPair::new(-5.0, 5.0),
            GainPair::new(5.0, 5.0),
            GainPair::new(-5.0, -5.0),
        ] {
            let s = settle(g, 0.0, 0.0, 1000);
            assert_eq!((s.y1, s.y2), (0.0, 0.0));
        }
    }

    #[test]
    fn constant_input_fixed_point() {
        let c = 0.2;
        for g in [
            GainPair::new(-5.0, 5.0),
            GainPair::new(-0.5, -0.5),
            GainPair::new(0.5, 0.5),
        ] {
            let s = settle(g, c, 0.0, 4000);
            let d = 1.0 - g.a1 * g.a2;
            let (va, vb) = (c / d, g.a2 * c / d);
            assert!(
                (s.v_a() - va).abs() <= 1e-3 * va.abs(),
                "{g:?}: {} vs {va}",
                s.v_a()
            );
            assert!(
                (s.v_b() - vb).abs() <= 1e-3 * vb.abs().max(1e-12),
                "{g:?}: {} vs {vb}",
                s.v_b()
            );
        }
    }

    #[test]
    fn positive_feedback_latches_to_rails() {
        let s = settle(GainPair::new(-5.0, -5.0), 1e-3, 0.0, 2000);
        assert!((s.y1.abs() - 15.0).abs() < 1e-9 && (s.y2.abs() - 15.0).abs() < 1e-9);
        assert!(s.v_a() * s.v_b() < 0.0);
        let s = settle(GainPair::new(5.0, 5.0), 1e-3, 0.0, 2000);
        assert!(s.v_a() * s.v_b() > 0.0);
    }

    #[test]
    fn dt_bound_enforced() {
        let s = CircuitState::at_rest(GainPair::new(-5.0, 5.0));
        assert!(step(&s, &params(), 0.0, 0.0, 0.3e-6).is_err());
    }

    #[test]
    fn non_finite_is_fault() {
        let s = CircuitState::at_rest(GainPair::new(-5.0, 5.0));
        assert!(matches!(
            step(&s, &params(), f64::NAN, 0.0, DT),
            Err(Error::Fault { .. })
        ));
    }

    #[test]
    fn schedules() {
        let mut s = CircuitState::at_rest(GainPair::new(-5.0, 5.0));
        s.time_s = 0.25;
        let step_sched = set_gains(&s, GainPair::new(5.0, 5.0), SwitchingProfile::Step);
        assert_eq!(step_sched.gains_at(0.25 - DT), GainPair::new(-5.0, 5.0));
        assert_eq!(step_sched.gains_at(0.25), GainPair::new(5.0, 5.0));
        let ramp = set_gains(
            &s,
            GainPair::new(5.0, 5.0),
            SwitchingProfile::Ramp { duration_s: 0.5 },
        );
        assert_eq!(ramp.gains_at(0.5), GainPair::new(0.0, 5.0));
        assert_eq!(ramp.gains_at(2.0), GainPair::new(5.0, 5.0));
    }

    #[test]
    fn zero_ramp_equals_step() {
        let pre = GainPair::new(-5.0, 5.0);
        let post = GainPair::new(5.0, -5.0);
        let a = frozen_transient(0.1, -0.2, pre, post, &params(), DT, 64).unwrap();
        let p = CircuitParams {
            switching_profile: SwitchingProfile::Ramp { duration_s: 0.0 },
            ..params()
        };
        let b = frozen_transient(0.1, -0.2, pre, post, &p, DT, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_transient_trivial_cases() {
        let lh = GainPair::new(-5.0, 5.0);
        let hl = lh.swapped();
        let t = frozen_transient(0.13, -0.07, lh, lh, &params(), DT, 64).unwrap();
        assert!(t.v_ab.iter().all(|&v| (v - 0.13).abs() < 1e-12));
        assert!(t.v_ba.iter().all(|&v| (v + 0.07).abs() < 1e-12));
        let z = frozen_transient(0.0, 0.0, lh, hl, &params(), DT, 64).unwrap();
        assert!(z.v_ab.iter().chain(&z.v_ba).all(|&v| v == 0.0));
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let lh = GainPair::new(-5.0, 5.0);
        let ll = GainPair::new(-5.0, -5.0);
        let a = frozen_transient(0.31, -0.12, lh, ll, &params(), DT, 128).unwrap();
        let b =
            frozen_transient(-0.12, 0.31, lh.swapped(), ll.swapped(), &params(), DT, 128).unwrap();
        assert_eq!(a.wire_swapped(), b);
    }

    #[test]
    fn stability_rule() {
        assert_eq!(stability(GainPair::new(-5.0, 5.0)), Stability::Stable);
        assert_eq!(stability(GainPair::new(5.0, 5.0)), Stability::Unstable);
        assert_eq!(stability(GainPair::new(-0.5, -0.5)), Stability::Stable);
        assert_eq!(stability(GainPair::new(1.0, 1.0)), Stability::Unstable);
    }

    #[test]
    fn validation() {
        let noise = NoiseSpec::default();
        let warnings = params().validate(&noise).unwrap();
        assert_eq!(warnings.len(), 1, "default separation is ~32x");
        let coarse = CircuitParams {
            internal_oversample: 2,
            ..params()
        };
        assert!(coarse.validate(&noise).is_err());
        let slow = CircuitParams {
            amp_time_constant_s: 20e-6,
            ..params()
        };
        assert!(slow.validate(&noise).is_err());
        let fast = CircuitParams {
            amp_time_constant_s: 0.25e-6,
            internal_oversample: 256,
            ..params()
        };
        assert!(fast.validate(&noise).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let mut t = WireTrace::new(1.25e-3, 1.0 / 16e6, TraceRate::Internal);
        t.push(0.1, -0.2);
        t.push(1.0 / 3.0, 15.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = WireTrace::read_csv(&buf[..], TraceRate::Internal).unwrap();
        assert_eq!(back.v_ab, t.v_ab);
        assert_eq!(back.v_ba, t.v_ba);
        assert_eq!(back.start_s, t.start_s);
        assert!(WireTrace::read_csv(&b"t,a,b\n"[..], TraceRate::Internal).is_err());
    }
}
