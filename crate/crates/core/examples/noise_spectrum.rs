//! Draws band-limited noise and prints its measured power spectrum next to
//! the Butterworth design response.
//!
//! Run with `cargo run --example noise_spectrum`.

use coldkey::noise::{NoiseSource, NoiseSpec};
use coldkey::stats;
use rustfft::{num_complex::Complex, FftPlanner};
use std::f64::consts::PI;

fn main() -> coldkey::Result<()> {
    let spec = NoiseSpec::default();
    let mut src = NoiseSource::new(spec, 2024)?;
    let xs = src.take(1 << 20);
    println!(
        "rms {:.4} V (target {}), excess kurtosis {:+.4}",
        stats::std_dev(&xs),
        spec.target_rms_volts,
        stats::excess_kurtosis(&xs)
    );

    // Welch estimate with Hann windows.
    let seg = 4096;
    let fs = spec.sample_rate_hz;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg);
    let window: Vec<f64> = (0..seg)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / seg as f64).cos())
        .collect();
    let norm: f64 = window.iter().map(|w| w * w).sum::<f64>() * fs;
    let mut psd = vec![0.0; seg / 2];
    let chunks = xs.chunks_exact(seg);
    let n_chunks = chunks.len() as f64;
    for chunk in chunks {
        let mut buf: Vec<Complex<f64>> = chunk
            .iter()
            .zip(&window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        fft.process(&mut buf);
        for (k, p) in psd.iter_mut().enumerate() {
            *p += 2.0 * buf[k].norm_sqr() / norm / n_chunks;
        }
    }

    let df = fs / seg as f64;
    let passband = stats::mean(&psd[2..20]);
    let warp = |f: f64| (PI * f / fs).tan();
    println!("{:>10} {:>12} {:>12}", "f_hz", "measured_db", "design_db");
    for f in [
        500.0, 2_000.0, 4_000.0, 5_000.0, 7_000.0, 10_000.0, 20_000.0,
    ] {
        let k = (f / df).round() as usize;
        let measured = stats::mean(&psd[k - 2..=k + 2]) / passband;
        let design =
            1.0 / (1.0 + (warp(f) / warp(spec.cutoff_hz)).powi(2 * spec.filter_order as i32));
        println!(
            "{f:>10.0} {:>12.2} {:>12.2}",
            10.0 * measured.log10(),
            10.0 * design.log10()
        );
    }
    Ok(())
}
