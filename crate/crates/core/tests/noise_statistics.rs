use coldkey::noise::{NoiseSource, NoiseSpec};
use coldkey::stats;
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use std::f64::consts::PI;

/// One-sided Welch power spectrum with a Hann window, normalized so that
/// integrating over `[0, fs/2]` returns the signal variance.
fn welch_psd(xs: &[f64], seg: usize, fs: f64) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let window: Vec<f64> = (0..seg)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / seg as f64).cos())
        .collect();
    let w_energy: f64 = window.iter().map(|w| w * w).sum();
    let mut psd = vec![0.0; seg / 2 + 1];
    let mut count = 0;
    for chunk in xs.chunks_exact(seg) {
        let mut buf: Vec<Complex<f64>> = chunk
            .iter()
            .zip(&window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            let scale = if k == 0 || k == seg / 2 { 1.0 } else { 2.0 };
            *p += scale * buf[k].norm_sqr() / (w_energy * fs);
        }
        count += 1;
    }
    psd.iter_mut().for_each(|p| *p /= count as f64);
    psd
}

/// Squared magnitude of a bilinear-transformed Butterworth low-pass with
/// pre-warped cutoff.
fn butterworth_gain_sq(f: f64, spec: &NoiseSpec) -> f64 {
    let warp = |f: f64| (PI * f / spec.sample_rate_hz).tan();
    1.0 / (1.0 + (warp(f) / warp(spec.cutoff_hz)).powi(2 * spec.filter_order as i32))
}

#[test]
fn white_stream_is_spectrally_flat() {
    let spec = NoiseSpec::default();
    let mut src = NoiseSource::new(spec, 11).unwrap();
    let xs: Vec<f64> = (0..1 << 19).map(|_| src.white_gaussian()).collect();
    let psd = welch_psd(&xs, 1024, spec.sample_rate_hz);
    let level = 2.0 / spec.sample_rate_hz;
    // Average bins in groups of 32 to tame the per-bin scatter.
    for group in psd[1..512].chunks(32) {
        let avg = stats::mean(group);
        assert!(
            (avg / level - 1.0).abs() < 0.06,
            "band level {avg:e} vs {level:e}"
        );
    }
}

#[test]
fn filtered_spectrum_follows_butterworth_response() {
    let spec = NoiseSpec::default();
    let mut src = NoiseSource::new(spec, 12).unwrap();
    let xs: Vec<f64> = (0..1 << 20)
        .map(|_| {
            let w = src.white_gaussian();
            src.lowpass_step(w)
        })
        .collect();
    let seg = 4096;
    let psd = welch_psd(&xs, seg, spec.sample_rate_hz);
    let df = spec.sample_rate_hz / seg as f64;
    let white = 2.0 / spec.sample_rate_hz;
    // Up to twice the cutoff the response spans about 24 dB.
    for k in (4..=(2.0 * spec.cutoff_hz / df) as usize).step_by(8) {
        let measured = stats::mean(&psd[k - 3..=k + 3]);
        let f = k as f64 * df;
        let want = white * butterworth_gain_sq(f, &spec);
        assert!(
            (measured / want - 1.0).abs() < 0.1,
            "f = {f}: {measured:e} vs {want:e}"
        );
    }
}

#[test]
fn calibration_gain_matches_noise_bandwidth() {
    // Variance of unit white noise through the filter is its equivalent
    // noise bandwidth relative to Nyquist.
    let spec = NoiseSpec::default();
    let n = 200_000;
    let nyquist = spec.sample_rate_hz / 2.0;
    let integral: f64 = (0..n)
        .map(|i| butterworth_gain_sq((i as f64 + 0.5) * nyquist / n as f64, &spec))
        .sum::<f64>()
        / n as f64;
    let want = spec.target_rms_volts / integral.sqrt();
    let got = spec.calibration_gain();
    // The gain is measured on 2^20 correlated samples, about 0.2% RMS error.
    assert!((got / want - 1.0).abs() < 1e-2, "{got} vs {want}");
}

#[test]
fn autocorrelation_matches_inverse_transform_of_response() {
    let spec = NoiseSpec::default();
    let mut src = NoiseSource::new(spec, 13).unwrap();
    let xs = src.take(1 << 20);
    let var = stats::variance(&xs);
    let n = 100_000;
    let nyquist = spec.sample_rate_hz / 2.0;
    let oracle = |lag: usize| {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..n {
            let f = (i as f64 + 0.5) * nyquist / n as f64;
            let g = butterworth_gain_sq(f, &spec);
            num += g * (2.0 * PI * f * lag as f64 / spec.sample_rate_hz).cos();
            den += g;
        }
        num / den
    };
    for lag in [1, 4, 8, 16, 32] {
        let r = stats::correlation(&xs[..xs.len() - lag], &xs[lag..]);
        let want = oracle(lag);
        assert!(
            (r - want).abs() < 0.02,
            "lag {lag}: {r} vs {want} (var {var})"
        );
    }
}

#[test]
fn sources_with_different_seeds_are_uncorrelated() {
    let spec = NoiseSpec::default();
    let gain = spec.calibration_gain();
    let a = NoiseSource::with_gain(spec, 1, gain).take(1 << 19);
    let b = NoiseSource::with_gain(spec, 2, gain).take(1 << 19);
    // About one independent sample per correlation time of ~8 samples.
    let n_eff = (a.len() / 8) as f64;
    let r = stats::correlation(&a, &b);
    assert!(r.abs() < 4.0 / n_eff.sqrt(), "r = {r}");
}

#[test]
fn filtered_output_is_gaussian() {
    let mut src = NoiseSource::new(NoiseSpec::default(), 14).unwrap();
    let xs = src.take(1 << 20);
    assert!(stats::excess_kurtosis(&xs).abs() < 0.05);
    let skew = {
        let m = stats::mean(&xs);
        let s = stats::std_dev(&xs);
        xs.iter().map(|x| ((x - m) / s).powi(3)).sum::<f64>() / xs.len() as f64
    };
    assert!(skew.abs() < 0.03, "skew {skew}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn output_rms_tracks_target(seed in any::<u64>(), target in 0.01f64..5.0) {
        let spec = NoiseSpec { target_rms_volts: target, ..Default::default() };
        let xs = NoiseSource::new(spec, seed).unwrap().take(1 << 17);
        let rms = (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt();
        prop_assert!((rms / target - 1.0).abs() < 0.05, "rms {} vs {}", rms, target);
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>()) {
        let spec = NoiseSpec::default();
        let gain = spec.calibration_gain();
        let a = NoiseSource::with_gain(spec, seed, gain).take(256);
        let b = NoiseSource::with_gain(spec, seed, gain).take(256);
        prop_assert_eq!(a, b);
    }
}
