//! Integrated-autocorrelation effective sample size.

use crate::error::{Error, Result};

/// Autocovariance at `lag`, averaged over chains, about the pooled mean.
fn autocov(chains: &[&[f64]], mean: f64, lag: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for c in chains {
        let len = c.len();
        if lag >= len {
            continue;
        }
        s += (0..len - lag).map(|i| (c[i] - mean) * (c[i + lag] - mean)).sum::<f64>();
        n += len;
    }
    s / n as f64
}

/// ESS `N / (1 + 2 sum rho_t)` of one or more chains of equal length, with
/// the autocorrelation sum truncated by the initial positive sequence rule:
/// pairs `rho_{2m} + rho_{2m+1}` are accumulated while positive.
pub fn multi_chain_ess(chains: &[&[f64]]) -> Result<f64> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    let len = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if len < 10 {
        return Err(Error::InvalidInput("autocorrelation ESS needs at least 10 draws per chain".into()));
    }
    let mean = chains.iter().flat_map(|c| c.iter()).sum::<f64>() / total as f64;
    let c0 = autocov(chains, mean, 0);
    if !(c0 > 0.0) || !c0.is_finite() {
        return Err(Error::InvalidInput("chain has zero variance; ESS is undefined".into()));
    }
    let rho = |t: usize| autocov(chains, mean, t) / c0;
    // tau = -1 + 2 sum_m (rho_{2m} + rho_{2m+1})
    let mut tau = -1.0;
    let mut m = 0;
    while 2 * m + 1 < len {
        let pair = if m == 0 { 1.0 + rho(1) } else { rho(2 * m) + rho(2 * m + 1) };
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        m += 1;
    }
    Ok(total as f64 / tau)
}

/// Single-chain autocorrelation ESS.
pub fn mcmc_ess(chain: &[f64]) -> Result<f64> {
    multi_chain_ess(&[chain])
}
