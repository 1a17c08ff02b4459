use crate::error::{Error, Result};
use crate::stats::ess_from_log_weights;
use crate::target::tempered;

/// Absolute tolerance of the inverse-temperature bisection.
pub const BETA_TOLERANCE: f64 = 1e-8;

/// Per-sample cached densities of one batch: prior, likelihood, and the
/// density of whatever produced the samples.
#[derive(Clone, Copy, Debug)]
pub struct WeightView<'a> {
    pub log_prior: &'a [f64],
    pub log_lik: &'a [f64],
    pub log_q: &'a [f64],
}

impl<'a> WeightView<'a> {
    pub fn new(log_prior: &'a [f64], log_lik: &'a [f64], log_q: &'a [f64]) -> Self {
        assert!(log_prior.len() == log_lik.len() && log_lik.len() == log_q.len());
        Self {
            log_prior,
            log_lik,
            log_q,
        }
    }

    pub fn log_weights(&self, beta: f64) -> Vec<f64> {
        self.log_prior
            .iter()
            .zip(self.log_lik)
            .zip(self.log_q)
            .map(|((p, l), q)| tempered(*p, *l, beta) - q)
            .collect()
    }

    pub fn n_eff(&self, beta: f64) -> Result<f64> {
        ess_from_log_weights(&self.log_weights(beta))
    }
}

/// `lambda * n_eff + (1 - lambda) * ema`.
pub fn ema_update(ema: f64, n_eff: f64, lambda: f64) -> f64 {
    lambda * n_eff + (1.0 - lambda) * ema
}

/// Next inverse temperature: the `beta` in `(beta_s, 1]` at which the batch
/// ESS has fallen to `gamma` times its value at `beta_s`, located by
/// bisection. Returns 1 when the ESS at 1 still meets the target.
pub fn solve_beta(view: &WeightView<'_>, beta_s: f64, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta_s) {
        return Err(Error::InvalidInput(format!("beta_s = {beta_s} outside [0, 1)")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("gamma = {gamma} outside (0, 1]")));
    }
    let n0 = view.n_eff(beta_s)?;
    if n0 <= 1.0 + 1e-9 {
        return Err(Error::ScheduleStall {
            beta: beta_s,
            reason: format!("batch ESS {n0} is degenerate"),
        });
    }
    let goal = gamma * n0;
    // a fully degenerate batch at beta counts as below the goal
    let meets = |beta: f64| view.n_eff(beta).map_or(false, |n| n >= goal);
    if meets(1.0) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (beta_s, 1.0);
    while hi - lo > BETA_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if meets(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}
