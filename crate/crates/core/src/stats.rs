//! Summary statistics shared by the samplers and the benchmark harness.

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance (0 for fewer than two values).
pub fn variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Linear-interpolation quantile of already sorted data (R/NumPy default, type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval at `level` from unsorted draws.
pub fn equal_tailed(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("interval level must lie in (0, 1), got {level}")));
    }
    if draws.is_empty() {
        return Err(Error::domain("no draws to summarize"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail)))
}

/// Monte Carlo standard error of the mean by non-overlapping batch means,
/// with ⌊√N⌋ batches of equal size (the remainder at the front is dropped).
pub fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return f64::NAN;
    }
    let size = n / batches;
    let tail = &values[n - batches * size..];
    let means: Vec<f64> = tail.chunks_exact(size).map(mean).collect();
    (variance(&means) / batches as f64).sqrt()
}

/// Effective sample size N·s²/(N·se²), with se from batch means.
pub fn effective_sample_size(values: &[f64]) -> f64 {
    let se = batch_means_se(values);
    let var = variance(values);
    if !(se > 0.0) {
        return values.len() as f64;
    }
    var / (se * se)
}
