//! Log-space helpers for importance weights.

use crate::error::{Error, Result};

/// `ln sum exp(v)`, computed with max subtraction. Returns `-inf` for an
/// empty slice or when every entry is `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `ln mean exp(v)`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    log_sum_exp(values) - (values.len() as f64).ln()
}

fn check_log_weights(log_w: &[f64]) -> Result<f64> {
    if log_w.is_empty() {
        return Err(Error::DegenerateWeights("no samples".into()));
    }
    if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::DegenerateWeights("log-weights contain NaN or +inf".into()));
    }
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights("every weight is zero".into()));
    }
    Ok(m)
}

/// Weights `exp(log_w)` scaled to sum to one.
pub fn normalized_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let m = check_log_weights(log_w)?;
    let mut w: Vec<f64> = log_w.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    Ok(w)
}

/// Effective sample size `(sum w)^2 / sum w^2` of nonnegative weights.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::DegenerateWeights("weights must be finite and nonnegative".into()));
    }
    let m = weights.iter().copied().fold(0.0, f64::max);
    if m == 0.0 {
        return Err(Error::DegenerateWeights("every weight is zero".into()));
    }
    let (s1, s2) = weights.iter().fold((0.0, 0.0), |(a, b), w| {
        let u = w / m;
        (a + u, b + u * u)
    });
    Ok(s1 * s1 / s2)
}

/// [`ess`] of `exp(log_w)`, evaluated without leaving log space for the
/// scale.
pub fn ess_from_log_weights(log_w: &[f64]) -> Result<f64> {
    let m = check_log_weights(log_w)?;
    let (s1, s2) = log_w.iter().fold((0.0, 0.0), |(a, b), v| {
        let u = (v - m).exp();
        (a + u, b + u * u)
    });
    Ok(s1 * s1 / s2)
}
