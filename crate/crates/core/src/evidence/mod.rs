//! Marginal likelihood by importance sampling and by thermodynamic
//! integration over the annealing ladder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anneal::{Checkpoint, SampleArchive};
use crate::error::{Error, Result};
use crate::flow::{FlowModel, SampleMatrix};
use crate::par::Executor;
use crate::stats::{ess_from_log_weights, log_mean_exp, normalized_weights};
use crate::table::Table;
use crate::target::{tempered, AnnealTarget};

/// Integrand values below this are dropped from the TI ladder.
pub const TI_CUTOFF: f64 = -1e5;

/// Which density serves as the importance proposal at `beta = 1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Count-weighted mixture of the models retained in the archive.
    #[default]
    Mixture,
    /// The final flow alone, with fresh samples.
    Model,
}

/// Samples with their unnormalized log posterior and log proposal density.
#[derive(Clone, Debug)]
pub struct WeightedSampleSet {
    pub samples: SampleMatrix,
    pub log_target: Vec<f64>,
    pub log_proposal: Vec<f64>,
}

impl WeightedSampleSet {
    pub fn new(samples: SampleMatrix, log_target: Vec<f64>, log_proposal: Vec<f64>) -> Result<Self> {
        if samples.rows() != log_target.len() || log_target.len() != log_proposal.len() {
            return Err(Error::InvalidInput("sample, target and proposal lengths differ".into()));
        }
        Ok(Self {
            samples,
            log_target,
            log_proposal,
        })
    }

    /// Archived samples at `beta = 1` against the archive mixture.
    pub fn from_archive(archive: &SampleArchive) -> Result<Self> {
        let log_target = archive
            .log_prior()
            .iter()
            .zip(archive.log_lik())
            .map(|(p, l)| p + l)
            .collect();
        Self::new(archive.samples(), log_target, archive.mixture_log_q().to_vec())
    }

    /// `n` fresh draws from `model`.
    pub fn from_model<T: AnnealTarget + ?Sized, R: Rng + ?Sized>(
        target: &T,
        model: &FlowModel,
        n: usize,
        rng: &mut R,
        exec: &Executor,
    ) -> Result<Self> {
        let (samples, log_q) = model.sample(n, rng, exec)?;
        let log_target = exec.map_range(n, |i| {
            let c = target.components(samples.row(i));
            c.log_prior + c.log_lik
        });
        Self::new(samples, log_target, log_q)
    }

    pub fn len(&self) -> usize {
        self.log_target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_target.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.log_target.iter().zip(&self.log_proposal).map(|(t, q)| t - q).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMethod {
    IsPruned,
    IsUnpruned,
    Ti,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceDiagnostics {
    /// Samples or ladder points available.
    pub total: usize,
    /// Samples pruned or ladder points cut off.
    pub excluded: usize,
    pub ess_before: Option<f64>,
    pub ess_after: Option<f64>,
    /// The estimate with nothing excluded, when pruning was applied.
    pub unpruned_log_evidence: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEstimate {
    pub log_evidence: f64,
    pub method: EvidenceMethod,
    pub diagnostics: EvidenceDiagnostics,
}

/// Removes the `k` largest weights for the `k` that maximizes the ESS of
/// the remainder (ties go to the smallest `k`). Returns the kept indices in
/// their original order together with the resulting ESS.
pub fn prune_max_ess(log_weights: &[f64]) -> Result<(Vec<usize>, f64)> {
    if log_weights.is_empty() {
        return Err(Error::InvalidInput("no weights to prune".into()));
    }
    let w = normalized_weights(log_weights)?;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    // suffix sums over the descending order: removing the first k leaves
    // order[k..]
    let n = w.len();
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    for j in (0..n).rev() {
        let v = w[order[j]];
        s1[j] = s1[j + 1] + v;
        s2[j] = s2[j + 1] + v * v;
    }
    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..n {
        if s2[k] <= 0.0 {
            break;
        }
        let e = s1[k] * s1[k] / s2[k];
        if e > best {
            best = e;
            best_k = k;
        }
    }
    let mut kept: Vec<usize> = order[best_k..].to_vec();
    kept.sort_unstable();
    Ok((kept, best))
}

/// Importance-sampling estimate `ln mean exp(log_w)`, optionally after
/// max-ESS pruning (the mean is then over the kept samples).
pub fn evidence_is(set: &WeightedSampleSet, prune: bool) -> Result<EvidenceEstimate> {
    if set.is_empty() {
        return Err(Error::InvalidInput("empty sample set".into()));
    }
    let log_w = set.log_weights();
    if log_w.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateWeights("NaN log-weight".into()));
    }
    let full = log_mean_exp(&log_w);
    let ess_before = ess_from_log_weights(&log_w)?;
    if !prune {
        return Ok(EvidenceEstimate {
            log_evidence: full,
            method: EvidenceMethod::IsUnpruned,
            diagnostics: EvidenceDiagnostics {
                total: log_w.len(),
                excluded: 0,
                ess_before: Some(ess_before),
                ess_after: Some(ess_before),
                unpruned_log_evidence: Some(full),
            },
        });
    }
    let (kept, ess_after) = prune_max_ess(&log_w)?;
    let kept_w: Vec<f64> = kept.iter().map(|&i| log_w[i]).collect();
    Ok(EvidenceEstimate {
        log_evidence: log_mean_exp(&kept_w),
        method: EvidenceMethod::IsPruned,
        diagnostics: EvidenceDiagnostics {
            total: log_w.len(),
            excluded: log_w.len() - kept.len(),
            ess_before: Some(ess_before),
            ess_after: Some(ess_after),
            unpruned_log_evidence: Some(full),
        },
    })
}

/// Self-normalized estimate of `E_beta[f]` from samples with cached
/// `log p_b`, `log p_u` and proposal density `log q`.
pub fn reweight_expectation<F: Fn(usize) -> f64>(
    log_prior: &[f64],
    log_lik: &[f64],
    log_q: &[f64],
    beta: f64,
    f: F,
) -> Result<f64> {
    if log_prior.len() != log_lik.len() || log_lik.len() != log_q.len() {
        return Err(Error::InvalidInput("cached column lengths differ".into()));
    }
    let log_w: Vec<f64> = (0..log_q.len())
        .map(|i| tempered(log_prior[i], log_lik[i], beta) - log_q[i])
        .collect();
    let w = normalized_weights(&log_w)?;
    Ok(w.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(i, w)| w * f(i)).sum())
}

/// Inverse temperatures with the expected log likelihood at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TiLadder {
    pub betas: Vec<f64>,
    pub expectations: Vec<f64>,
    pub counts: Vec<usize>,
}

impl TiLadder {
    pub fn new(betas: Vec<f64>, expectations: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let l = Self {
            betas,
            expectations,
            counts,
        };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.betas.len();
        if self.expectations.len() != n || self.counts.len() != n {
            return Err(Error::InvalidInput("ladder columns differ in length".into()));
        }
        if n < 2 {
            return Err(Error::InsufficientLadder { surviving: n });
        }
        if self.betas[0] != 0.0 || self.betas[n - 1] != 1.0 {
            return Err(Error::InvalidInput("ladder must start at beta = 0 and end at beta = 1".into()));
        }
        if self.betas.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("ladder betas must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Columns `beta`, `integrand`, `count`, `kept` (1 if the point survives
    /// `cutoff`).
    pub fn to_table(&self, cutoff: f64) -> Table {
        let mut t = Table::new(["beta", "integrand", "count", "kept"]);
        for i in 0..self.len() {
            let kept = self.expectations[i] >= cutoff;
            t.push(vec![
                self.betas[i],
                self.expectations[i],
                self.counts[i] as f64,
                if kept { 1.0 } else { 0.0 },
            ]);
        }
        t
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        let count = t.column("count")?;
        Self::new(
            t.column("beta")?,
            t.column("integrand")?,
            count.iter().map(|c| *c as usize).collect(),
        )
    }
}

/// Trapezoid rule over the `(beta, <log p_u>)` points at or above
/// `cutoff`.
pub fn evidence_ti(ladder: &TiLadder, cutoff: f64) -> Result<EvidenceEstimate> {
    ladder.validate()?;
    let kept: Vec<(f64, f64)> = ladder
        .betas
        .iter()
        .zip(&ladder.expectations)
        .filter(|(_, e)| e.is_finite() && **e >= cutoff)
        .map(|(b, e)| (*b, *e))
        .collect();
    if kept.len() < 2 {
        return Err(Error::InsufficientLadder { surviving: kept.len() });
    }
    let integral = kept
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    Ok(EvidenceEstimate {
        log_evidence: integral,
        method: EvidenceMethod::Ti,
        diagnostics: EvidenceDiagnostics {
            total: ladder.len(),
            excluded: ladder.len() - kept.len(),
            ..EvidenceDiagnostics::default()
        },
    })
}

/// Expected log likelihood at each checkpoint's inverse temperature, from
/// `n` fresh draws of that checkpoint's model.
pub fn ti_ladder_from_checkpoints<T: AnnealTarget + ?Sized, R: Rng + ?Sized>(
    target: &T,
    checkpoints: &[Checkpoint],
    n: usize,
    rng: &mut R,
    exec: &Executor,
) -> Result<TiLadder> {
    let mut betas = Vec::with_capacity(checkpoints.len());
    let mut expectations = Vec::with_capacity(checkpoints.len());
    for c in checkpoints {
        let (samples, log_q) = c.model.sample(n, rng, exec)?;
        let comps = exec.map_range(n, |i| target.components(samples.row(i)));
        let lp: Vec<f64> = comps.iter().map(|c| c.log_prior).collect();
        let ll: Vec<f64> = comps.iter().map(|c| c.log_lik).collect();
        betas.push(c.beta);
        expectations.push(reweight_expectation(&lp, &ll, &log_q, c.beta, |i| ll[i])?);
    }
    TiLadder::new(betas, expectations, vec![n; checkpoints.len()])
}
