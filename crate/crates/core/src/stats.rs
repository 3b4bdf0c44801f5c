//! Summary statistics for batches of runs: mean, standard deviation and
//! basic (reverse-percentile) bootstrap confidence intervals.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("confidence level must lie strictly between 0 and 1, got {0}")]
    InvalidLevel(f64),
    #[error("need at least {min} bootstrap resamples, got {got}")]
    TooFewResamples { min: usize, got: usize },
}

pub const MIN_RESAMPLES: usize = 1000;
pub const DEFAULT_RESAMPLES: usize = 10_000;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two samples.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of already sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Basic bootstrap interval for the mean: `(2m - q_hi, 2m - q_lo)` where the
/// `q` are quantiles of the resampled means.
pub fn basic_bootstrap_ci<R: Rng + ?Sized>(
    samples: &[f64],
    level: f64,
    resamples: usize,
    rng: &mut R,
) -> Result<(f64, f64), StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    if resamples < MIN_RESAMPLES {
        return Err(StatsError::TooFewResamples {
            min: MIN_RESAMPLES,
            got: resamples,
        });
    }
    if samples.iter().all(|&x| x == samples[0]) {
        return Ok((samples[0], samples[0]));
    }
    let n = samples.len();
    let m = mean(samples);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| samples[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let q_lo = quantile_sorted(&means, (1.0 - level) / 2.0);
    let q_hi = quantile_sorted(&means, (1.0 + level) / 2.0);
    let lo = 2.0 * m - q_hi;
    let hi = 2.0 * m - q_lo;
    Ok((lo.min(hi), lo.max(hi)))
}
