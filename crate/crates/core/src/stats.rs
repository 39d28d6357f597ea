//! Estimators and hypothesis tests used by the protocol, the attacks and the
//! acceptance checks.

use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let (m2, m4) = xs.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d2 = (x - m) * (x - m);
        (a + d2, b + d2 * d2)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    m4 / (m2 * m2) - 3.0
}

/// Pearson correlation coefficient of two equal-length series.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Mean and its standard error from non-overlapping batch means, which
/// accounts for serial correlation shorter than a batch.
pub fn batch_mean_se(xs: &[f64], n_batches: usize) -> (f64, f64) {
    assert!(n_batches >= 2 && xs.len() >= n_batches);
    let size = xs.len() / n_batches;
    let means: Vec<f64> = xs.chunks_exact(size).take(n_batches).map(mean).collect();
    (mean(&means), std_dev(&means) / (n_batches as f64).sqrt())
}

/// Wilson score interval for `k` successes out of `n` at normal quantile `z`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let centre = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

pub const Z_95: f64 = 1.959_963_984_540_054;

fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`, summed in log space so tiny tails
/// stay accurate.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    // Incremental log C(n, i) avoids recomputing the prefix products.
    let mut lc = ln_choose(n, k);
    let terms = (k..=n).map(|i| {
        let t = lc + i as f64 * lp + (n - i) as f64 * lq;
        if i < n {
            lc += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        t
    });
    log_sum_exp(terms).exp().min(1.0)
}

pub fn binomial_lower_tail(k: u64, n: u64, p: f64) -> f64 {
    binomial_upper_tail(n - k, n, 1.0 - p)
}

/// Two-sided binomial test p-value (doubled smaller tail).
pub fn binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    (2.0 * binomial_upper_tail(k, n, p).min(binomial_lower_tail(k, n, p))).min(1.0)
}

/// Survival function of the Kolmogorov distribution.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powi(j as i32 - 1) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("KS samples"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_q(lambda),
    })
}
