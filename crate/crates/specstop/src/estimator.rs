//! Sample statistics, the spectral cut-off estimator and data-error
//! estimates.

use crate::error::{Error, Result};
use crate::noise::MeasurementBatch;

/// Column means and unbiased sample variances of a measurement batch.
#[derive(Debug, Clone)]
pub struct BatchSummary {
    /// (Ȳ_n, u_j) per component.
    pub mean: Vec<f64>,
    /// s²_{j,n} = (1/(n−1)) Σ_i (Y_i − Ȳ_n, u_j)².
    pub s2: Vec<f64>,
    pub n: usize,
}

#[inline]
fn kahan_add(sum: &mut f64, comp: &mut f64, x: f64) {
    let y = x - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Two-pass mean/variance with compensated summation; the largest runs
/// accumulate up to n·m ≈ 5·10⁸ terms.
pub fn summarize(batch: &MeasurementBatch) -> Result<BatchSummary> {
    if batch.n < 2 {
        return Err(Error::InsufficientSamples {
            required: 2,
            got: batch.n,
        });
    }
    let (n, m) = (batch.n, batch.m);
    let mut mean = vec![0.0; m];
    let mut comp = vec![0.0; m];
    for i in 0..n {
        let row = batch.row(i);
        for j in 0..m {
            kahan_add(&mut mean[j], &mut comp[j], row[j]);
        }
    }
    for v in mean.iter_mut() {
        *v /= n as f64;
    }
    let mut s2 = vec![0.0; m];
    comp.iter_mut().for_each(|c| *c = 0.0);
    for i in 0..n {
        let row = batch.row(i);
        for j in 0..m {
            let d = row[j] - mean[j];
            kahan_add(&mut s2[j], &mut comp[j], d * d);
        }
    }
    for v in s2.iter_mut() {
        *v /= (n - 1) as f64;
    }
    Ok(BatchSummary { mean, s2, n })
}

/// Spectral cut-off: x̄_j = mean_j / σ_j for j ≤ k, zero beyond.
pub fn cutoff_estimate(mean: &[f64], sigma: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = mean.len().min(sigma.len());
    if k > m {
        return Err(Error::invalid(format!(
            "truncation k = {k} exceeds m = {m}"
        )));
    }
    let mut out = vec![0.0; mean.len()];
    for j in 0..k {
        out[j] = mean[j] / sigma[j];
    }
    Ok(out)
}

/// ‖x_est − x̂‖₂ / ‖x̂‖₂, with the shorter array zero-padded.
pub fn relative_error(x_est: &[f64], xhat: &[f64]) -> Result<f64> {
    let norm2: f64 = xhat.iter().map(|x| x * x).sum();
    if norm2 == 0.0 {
        return Err(Error::UndefinedRelativeError);
    }
    let len = x_est.len().max(xhat.len());
    let mut err2 = 0.0;
    for j in 0..len {
        let a = x_est.get(j).copied().unwrap_or(0.0);
        let b = xhat.get(j).copied().unwrap_or(0.0);
        err2 += (a - b) * (a - b);
    }
    Ok((err2 / norm2).sqrt())
}

/// The crude data-error estimate 1/√n.
pub fn noise_level_simple(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InsufficientSamples {
            required: 1,
            got: 0,
        });
    }
    Ok(1.0 / (n as f64).sqrt())
}

/// Sample-based estimate √(Σ_j s²_j / n) of ‖Ȳ_n − ŷ‖.
pub fn noise_level_sample(batch: &MeasurementBatch) -> Result<f64> {
    let summary = summarize(batch)?;
    Ok(noise_level_from_summary(&summary))
}

pub fn noise_level_from_summary(summary: &BatchSummary) -> f64 {
    let (mut sum, mut comp) = (0.0, 0.0);
    for &v in &summary.s2 {
        kahan_add(&mut sum, &mut comp, v);
    }
    (sum / summary.n as f64).sqrt()
}
