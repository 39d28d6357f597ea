//! Seeded band-limited Gaussian noise.
//!
//! A [`NoiseSource`] draws unit-variance white Gaussian samples from a ChaCha
//! stream, passes them through a Butterworth low-pass realised as cascaded
//! second-order sections (bilinear transform with pre-warping), and scales the
//! result so the stationary RMS equals [`NoiseSpec::target_rms_volts`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::{Error, Result, BOLTZMANN};

/// Seed of the private stream used to measure the filter's output RMS.
const CALIBRATION_SEED: u64 = 0x00C0_1D5E_ED00_CA1B;
const CALIBRATION_SAMPLES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sample_rate_hz: f64,
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub target_rms_volts: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sample_rate_hz: 250_000.0,
            cutoff_hz: 5_000.0,
            filter_order: 4,
            target_rms_volts: 0.96,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::config("noise.sample_rate_hz", "must be positive"));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < self.sample_rate_hz / 2.0) {
            return Err(Error::config(
                "noise.cutoff_hz",
                format!("must lie in (0, {})", self.sample_rate_hz / 2.0),
            ));
        }
        if self.filter_order == 0 {
            return Err(Error::config("noise.filter_order", "must be at least 1"));
        }
        if !(self.target_rms_volts.is_finite() && self.target_rms_volts >= 0.0) {
            return Err(Error::config(
                "noise.target_rms_volts",
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }

    pub fn sample_period_s(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    /// Samples discarded at construction so the filter starts stationary.
    pub fn warmup_samples(&self) -> usize {
        (10.0 / self.cutoff_hz * self.sample_rate_hz).ceil() as usize
    }

    /// Time scale over which the noise voltage is effectively frozen,
    /// `1 / (2π f_c)`.
    pub fn correlation_time_s(&self) -> f64 {
        1.0 / (2.0 * PI * self.cutoff_hz)
    }

    pub fn lowpass(&self) -> Lowpass {
        Lowpass::butterworth(self.filter_order, self.cutoff_hz, self.sample_rate_hz)
    }

    /// Gain mapping the unit-input filter output to the target RMS, measured on
    /// a fixed private stream.
    pub fn calibration_gain(&self) -> f64 {
        if self.target_rms_volts == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha12Rng::seed_from_u64(CALIBRATION_SEED);
        let mut filter = self.lowpass();
        for _ in 0..self.warmup_samples() {
            filter.step(rng.sample(StandardNormal));
        }
        let mut acc = 0.0;
        for _ in 0..CALIBRATION_SAMPLES {
            let y = filter.step(rng.sample(StandardNormal));
            acc += y * y;
        }
        let rms = (acc / CALIBRATION_SAMPLES as f64).sqrt();
        self.target_rms_volts / rms
    }
}

/// One biquad in transposed direct form II. First-order sections use
/// `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
    z1: f64,
    z2: f64,
}

impl Section {
    fn new(b: [f64; 3], a: [f64; 2]) -> Self {
        Self {
            b,
            a,
            z1: 0.0,
            z2: 0.0,
        }
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z1;
        self.z1 = self.b[1] * x - self.a[0] * y + self.z2;
        self.z2 = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Cascade of second-order sections with Butterworth pole placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Lowpass {
    sections: Vec<Section>,
}

impl Lowpass {
    pub fn butterworth(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Self {
        assert!(order >= 1, "filter order must be positive");
        // Pre-warped analog cutoff; the bilinear map then hits -3 dB exactly at f_c.
        let k = (PI * cutoff_hz / sample_rate_hz).tan();
        let k2 = k * k;
        let mut sections = Vec::with_capacity(order.div_ceil(2));
        for i in 0..order / 2 {
            let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
            let q = 1.0 / (2.0 * theta.sin());
            let norm = 1.0 / (1.0 + k / q + k2);
            let b0 = k2 * norm;
            sections.push(Section::new(
                [b0, 2.0 * b0, b0],
                [2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
            ));
        }
        if order % 2 == 1 {
            let b0 = k / (k + 1.0);
            sections.push(Section::new([b0, b0, 0.0], [(k - 1.0) / (k + 1.0), 0.0]));
        }
        Self { sections }
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.step(acc))
    }

    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.z1 = 0.0;
            s.z2 = 0.0;
        }
    }
}

/// A seeded generator of band-limited Gaussian noise voltage.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    spec: NoiseSpec,
    rng: ChaCha12Rng,
    filter: Lowpass,
    calibration_gain: f64,
}

impl NoiseSource {
    pub fn new(spec: NoiseSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let gain = spec.calibration_gain();
        Ok(Self::with_gain(spec, seed, gain))
    }

    /// Builds a source reusing an already measured calibration gain.
    pub fn with_gain(spec: NoiseSpec, seed: u64, calibration_gain: f64) -> Self {
        let mut source = Self {
            spec,
            rng: ChaCha12Rng::seed_from_u64(seed),
            filter: spec.lowpass(),
            calibration_gain,
        };
        for _ in 0..spec.warmup_samples() {
            let w = source.white_gaussian();
            source.lowpass_step(w);
        }
        source
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn calibration_gain(&self) -> f64 {
        self.calibration_gain
    }

    /// Next unit-variance deviate of the seeded stream.
    #[inline]
    pub fn white_gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    #[inline]
    pub fn lowpass_step(&mut self, x: f64) -> f64 {
        self.filter.step(x)
    }

    #[inline]
    pub fn next_noise(&mut self) -> f64 {
        let w = self.white_gaussian();
        self.lowpass_step(w) * self.calibration_gain
    }

    pub fn take(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_noise()).collect()
    }
}

/// RMS voltage a generator must produce over `bandwidth_hz` to emulate the
/// thermal noise of resistance `r_ohm` at temperature `t_eff_kelvin`.
pub fn external_noise_scale(t_eff_kelvin: f64, r_ohm: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(t_eff_kelvin >= 0.0 && t_eff_kelvin.is_finite()) {
        return Err(Error::Domain(format!(
            "temperature must be non-negative, got {t_eff_kelvin}"
        )));
    }
    if !(r_ohm > 0.0 && bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!(
            "resistance and bandwidth must be positive, got R = {r_ohm}, df = {bandwidth_hz}"
        )));
    }
    Ok((4.0 * BOLTZMANN * t_eff_kelvin * r_ohm * bandwidth_hz).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex_free::*;

    /// Minimal complex arithmetic so the oracle does not share code with the filter.
    mod num_complex_free {
        #[derive(Clone, Copy)]
        pub struct C(pub f64, pub f64);
        impl C {
            pub fn mul(self, o: C) -> C {
                C(self.0 * o.0 - self.1 * o.1, self.0 * o.1 + self.1 * o.0)
            }
            pub fn div(self, o: C) -> C {
                let d = o.0 * o.0 + o.1 * o.1;
                C(
                    (self.0 * o.0 + self.1 * o.1) / d,
                    (self.1 * o.0 - self.0 * o.1) / d,
                )
            }
            pub fn abs(self) -> f64 {
                self.0.hypot(self.1)
            }
        }
    }

    fn cascade_response(filter: &Lowpass, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        let z1 = C(w.cos(), -w.sin());
        let z2 = z1.mul(z1);
        filter.sections().iter().fold(1.0, |acc, s| {
            let num = C(
                s.b[0] + s.b[1] * z1.0 + s.b[2] * z2.0,
                s.b[1] * z1.1 + s.b[2] * z2.1,
            );
            let den = C(
                1.0 + s.a[0] * z1.0 + s.a[1] * z2.0,
                s.a[0] * z1.1 + s.a[1] * z2.1,
            );
            acc * num.div(den).abs()
        })
    }

    /// Analog Butterworth magnitude at the pre-warped frequency.
    fn butterworth_oracle(order: usize, f: f64, fc: f64, fs: f64) -> f64 {
        let ratio = (PI * f / fs).tan() / (PI * fc / fs).tan();
        1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
    }

    fn sine_gain(order: usize, f: f64) -> f64 {
        let spec = NoiseSpec {
            filter_order: order,
            ..NoiseSpec::default()
        };
        let mut lp = spec.lowpass();
        let n = 200_000;
        let mut peak: f64 = 0.0;
        for i in 0..n {
            let y = lp.step((2.0 * PI * f * i as f64 / spec.sample_rate_hz).sin());
            if i > n / 2 {
                peak = peak.max(y.abs());
            }
        }
        peak
    }

    #[test]
    fn white_stream_is_reproducible() {
        let spec = NoiseSpec::default();
        let mut a = NoiseSource::with_gain(spec, 99, 1.0);
        let mut b = NoiseSource::with_gain(spec, 99, 1.0);
        let xa: Vec<f64> = (0..3).map(|_| a.white_gaussian()).collect();
        let xb: Vec<f64> = (0..3).map(|_| b.white_gaussian()).collect();
        assert_eq!(xa, xb);
    }

    #[test]
    fn white_moments() {
        let mut s = NoiseSource::with_gain(NoiseSpec::default(), 3, 1.0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| s.white_gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn unity_dc_gain() {
        let spec = NoiseSpec::default();
        let mut lp = spec.lowpass();
        let n = (50.0 / spec.cutoff_hz * spec.sample_rate_hz) as usize;
        let mut y = 0.0;
        for _ in 0..n {
            y = lp.step(2.5);
        }
        assert!((y - 2.5).abs() < 2.5e-3, "{y}");
    }

    #[test]
    fn minus_three_db_at_cutoff() {
        let spec = NoiseSpec::default();
        let oracle = butterworth_oracle(4, spec.cutoff_hz, spec.cutoff_hz, spec.sample_rate_hz);
        assert!((oracle - 1.0 / 2f64.sqrt()).abs() < 1e-12);
        let h = cascade_response(&spec.lowpass(), spec.cutoff_hz, spec.sample_rate_hz);
        assert!((h - oracle).abs() < 1e-9, "{h} vs {oracle}");
        let measured = sine_gain(4, spec.cutoff_hz);
        assert!((measured / oracle - 1.0).abs() < 0.02, "{measured}");
    }

    #[test]
    fn decade_above_cutoff_attenuates_75_db() {
        let spec = NoiseSpec::default();
        let f = 10.0 * spec.cutoff_hz;
        let oracle_db =
            20.0 * butterworth_oracle(4, f, spec.cutoff_hz, spec.sample_rate_hz).log10();
        let h_db = 20.0 * cascade_response(&spec.lowpass(), f, spec.sample_rate_hz).log10();
        assert!(oracle_db <= -75.0, "{oracle_db}");
        assert!((h_db - oracle_db).abs() < 1e-6, "{h_db} vs {oracle_db}");
    }

    #[test]
    fn odd_order_matches_oracle() {
        let spec = NoiseSpec {
            filter_order: 3,
            ..NoiseSpec::default()
        };
        let lp = spec.lowpass();
        assert_eq!(lp.sections().len(), 2);
        for f in [100.0, 2_500.0, 5_000.0, 20_000.0] {
            let h = cascade_response(&lp, f, spec.sample_rate_hz);
            let o = butterworth_oracle(3, f, spec.cutoff_hz, spec.sample_rate_hz);
            assert!((h - o).abs() < 1e-9, "f={f}: {h} vs {o}");
        }
    }

    #[test]
    fn zero_target_gives_silence() {
        let spec = NoiseSpec {
            target_rms_volts: 0.0,
            ..NoiseSpec::default()
        };
        let mut s = NoiseSource::new(spec, 1).unwrap();
        assert!(s.take(1000).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn calibrated_rms() {
        let spec = NoiseSpec {
            target_rms_volts: 1.0,
            ..NoiseSpec::default()
        };
        let mut s = NoiseSource::new(spec, 11).unwrap();
        let xs = s.take(1_000_000);
        let rms = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 0.02, "rms {rms}");
    }

    #[test]
    fn rejects_bad_specs() {
        let bad = [
            NoiseSpec {
                cutoff_hz: 125_000.0,
                ..NoiseSpec::default()
            },
            NoiseSpec {
                filter_order: 0,
                ..NoiseSpec::default()
            },
            NoiseSpec {
                target_rms_volts: -1.0,
                ..NoiseSpec::default()
            },
        ];
        for spec in bad {
            assert!(matches!(
                NoiseSource::new(spec, 0),
                Err(Error::Config { .. })
            ));
        }
    }

    #[test]
    fn external_scale() {
        assert_eq!(external_noise_scale(0.0, 100.0, 5e3).unwrap(), 0.0);
        let a = external_noise_scale(300.0, 100.0, 5e3).unwrap();
        let b = external_noise_scale(300.0, 200.0, 5e3).unwrap();
        assert!((b / a - 2f64.sqrt()).abs() < 1e-12);
        // 4 * 1.380649e-23 * 300 * 100 * 5000 = 8.283894e-15 V^2
        assert!((a * a - 8.283894e-15).abs() < 1e-27);
        assert!(external_noise_scale(-1.0, 100.0, 5e3).is_err());
        assert!(external_noise_scale(300.0, 0.0, 5e3).is_err());
        assert!(external_noise_scale(300.0, 100.0, -5.0).is_err());
    }
}
