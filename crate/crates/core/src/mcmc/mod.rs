//! Annealed affine-invariant ensemble MCMC on the tempered posterior, used
//! as a baseline for the flow sampler.

pub mod autocorr;
pub mod moves;

pub use autocorr::{mcmc_ess, multi_chain_ess};
pub use moves::{de_move, mh_accept, sample_stretch_z, stretch_move, stretch_with};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evidence::TiLadder;
use crate::table::Table;
use crate::target::{AnnealTarget, Components};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub walkers: usize,
    /// Sweeps per stage; each sweep updates every walker once.
    pub sweeps: usize,
    /// Number of tempered stages `S`; stage `s` runs at `(s/S)^exponent`.
    pub stages: usize,
    pub exponent: f64,
    /// Stretch-move scale `a`.
    pub stretch_scale: f64,
    /// Differential-evolution scale; `None` means `2.38 / sqrt(2 d)`.
    pub de_scale: Option<f64>,
    pub jitter_var: f64,
    /// Store every `thin`-th sweep.
    pub thin: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            walkers: 16,
            sweeps: 1500,
            stages: 1000,
            exponent: 4.0,
            stretch_scale: 2.0,
            de_scale: None,
            jitter_var: 1e-5,
            thin: 1,
            seed: 0,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.walkers < 4 {
            return bad("at least 4 walkers are required");
        }
        if self.sweeps == 0 || self.stages == 0 || self.thin == 0 {
            return bad("sweeps, stages and thin must be positive");
        }
        if !(self.exponent > 0.0) {
            return bad("exponent must be positive");
        }
        if !(self.stretch_scale > 1.0) {
            return bad("stretch_scale must exceed 1");
        }
        if !(self.jitter_var >= 0.0) {
            return bad("jitter_var must be nonnegative");
        }
        if matches!(self.de_scale, Some(g) if !g.is_finite()) {
            return bad("de_scale must be finite");
        }
        Ok(())
    }

    pub fn de_scale_for(&self, dim: usize) -> f64 {
        self.de_scale.unwrap_or(2.38 / (2.0 * dim as f64).sqrt())
    }

    /// `[0, (1/S)^p, (2/S)^p, ..., 1]`: the power-law ladder with a
    /// prior-only stage in front.
    pub fn ladder(&self) -> Vec<f64> {
        let s = self.stages as f64;
        std::iter::once(0.0)
            .chain((1..=self.stages).map(|i| (i as f64 / s).powf(self.exponent)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Stretch,
    DifferentialEvolution,
}

/// Walker positions with cached target components.
#[derive(Clone, Debug)]
pub struct WalkerEnsemble {
    pub positions: Vec<Vec<f64>>,
    pub components: Vec<Components>,
}

impl WalkerEnsemble {
    /// `walkers` independent prior draws.
    pub fn from_prior<T: AnnealTarget + ?Sized>(target: &T, walkers: usize, rng: &mut ChaCha8Rng) -> Self {
        let positions: Vec<Vec<f64>> = (0..walkers).map(|_| target.sample_prior(rng)).collect();
        let components = positions.iter().map(|p| target.components(p)).collect();
        Self { positions, components }
    }

    pub fn from_positions<T: AnnealTarget + ?Sized>(target: &T, positions: Vec<Vec<f64>>) -> Result<Self> {
        if positions.len() < 4 {
            return Err(Error::InvalidInput("at least 4 walkers are required".into()));
        }
        if positions.iter().any(|p| p.len() != target.dim()) {
            return Err(Error::InvalidInput("walker dimension mismatch".into()));
        }
        let components = positions.iter().map(|p| target.components(p)).collect();
        Ok(Self { positions, components })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }
}

/// Outcome of one walker update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Update {
    pub kind: MoveKind,
    pub accepted: bool,
}

/// Draws stored at one stage, row-major `(sweep, walker)`.
#[derive(Clone, Debug, Default)]
pub struct StageSamples {
    pub stage: usize,
    pub beta: f64,
    pub positions: Vec<Vec<f64>>,
    pub log_prior: Vec<f64>,
    pub log_lik: Vec<f64>,
    pub accepted: Vec<bool>,
    pub walker: Vec<usize>,
    pub sweep: Vec<usize>,
}

/// Per-stage summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub beta: f64,
    pub acceptance: f64,
    pub stretch_acceptance: f64,
    pub de_acceptance: f64,
    pub mean_log_lik: f64,
    pub stored: usize,
    /// Autocorrelation ESS per parameter across walkers; `NaN` where
    /// undefined.
    pub ess: Vec<f64>,
}

/// The ensemble sampler: holds the walkers and rng between stages.
pub struct EnsembleSampler<'a, T: AnnealTarget + ?Sized> {
    target: &'a T,
    config: McmcConfig,
    rng: ChaCha8Rng,
    ensemble: WalkerEnsemble,
    de_scale: f64,
}

impl<'a, T: AnnealTarget + ?Sized> EnsembleSampler<'a, T> {
    pub fn new(target: &'a T, config: McmcConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let ensemble = WalkerEnsemble::from_prior(target, config.walkers, &mut rng);
        let de_scale = config.de_scale_for(target.dim());
        Ok(Self {
            target,
            config,
            rng,
            ensemble,
            de_scale,
        })
    }

    pub fn ensemble(&self) -> &WalkerEnsemble {
        &self.ensemble
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    /// One update of walker `k` at inverse temperature `beta`, choosing the
    /// move family with equal probability.
    pub fn update_walker(&mut self, k: usize, beta: f64) -> Update {
        let use_stretch = self.rng.random::<bool>();
        let (proposal, factor, kind) = if use_stretch {
            let (y, f) = stretch_move(k, &self.ensemble.positions, self.config.stretch_scale, &mut self.rng);
            (y, f, MoveKind::Stretch)
        } else {
            let y = de_move(k, &self.ensemble.positions, self.de_scale, self.config.jitter_var, &mut self.rng);
            (y, 0.0, MoveKind::DifferentialEvolution)
        };
        let comps = self.target.components(&proposal);
        let old = self.ensemble.components[k].at(beta);
        let accepted = mh_accept(comps.at(beta), old, factor, &mut self.rng);
        if accepted {
            self.ensemble.positions[k] = proposal;
            self.ensemble.components[k] = comps;
        }
        Update { kind, accepted }
    }

    /// All sweeps of one stage.
    pub fn run_stage(&mut self, stage: usize, beta: f64) -> (StageRecord, StageSamples) {
        let w = self.ensemble.len();
        let dim = self.ensemble.dim();
        let mut samples = StageSamples {
            stage,
            beta,
            ..StageSamples::default()
        };
        let mut tried = [0usize; 2];
        let mut acc = [0usize; 2];
        let mut traces: Vec<Vec<Vec<f64>>> = vec![vec![Vec::with_capacity(self.config.sweeps); w]; dim];
        for sweep in 0..self.config.sweeps {
            let store = sweep % self.config.thin == 0;
            for k in 0..w {
                let u = self.update_walker(k, beta);
                let slot = (u.kind == MoveKind::DifferentialEvolution) as usize;
                tried[slot] += 1;
                acc[slot] += u.accepted as usize;
                if store {
                    let c = self.ensemble.components[k];
                    samples.positions.push(self.ensemble.positions[k].clone());
                    samples.log_prior.push(c.log_prior);
                    samples.log_lik.push(c.log_lik);
                    samples.accepted.push(u.accepted);
                    samples.walker.push(k);
                    samples.sweep.push(sweep);
                }
            }
            if store {
                for (p, trace) in traces.iter_mut().enumerate() {
                    for (k, t) in trace.iter_mut().enumerate() {
                        t.push(self.ensemble.positions[k][p]);
                    }
                }
            }
        }
        let ratio = |a: usize, t: usize| if t == 0 { f64::NAN } else { a as f64 / t as f64 };
        let ess = traces
            .iter()
            .map(|trace| {
                let chains: Vec<&[f64]> = trace.iter().map(Vec::as_slice).collect();
                multi_chain_ess(&chains).unwrap_or(f64::NAN)
            })
            .collect();
        let stored = samples.log_lik.len();
        let record = StageRecord {
            stage,
            beta,
            acceptance: ratio(acc[0] + acc[1], tried[0] + tried[1]),
            stretch_acceptance: ratio(acc[0], tried[0]),
            de_acceptance: ratio(acc[1], tried[1]),
            mean_log_lik: samples.log_lik.iter().sum::<f64>() / stored as f64,
            stored,
            ess,
        };
        (record, samples)
    }
}

/// Result of [`run_annealed_ensemble`].
#[derive(Clone, Debug)]
pub struct McmcRun {
    pub stages: Vec<StageRecord>,
    /// Stored draws per stage; empty unless requested.
    pub chains: Vec<StageSamples>,
    pub ladder: TiLadder,
    pub final_ensemble: WalkerEnsemble,
}

impl McmcRun {
    /// Columns `stage`, `beta`, `acceptance`, `stretch_acceptance`,
    /// `de_acceptance`, `mean_log_lik`, `stored`, `ess_0..`.
    pub fn diagnostics_table(&self) -> Table {
        diagnostics_table(&self.stages)
    }
}

pub fn diagnostics_table(stages: &[StageRecord]) -> Table {
    let dim = stages.first().map_or(0, |s| s.ess.len());
    let mut cols: Vec<String> = [
        "stage",
        "beta",
        "acceptance",
        "stretch_acceptance",
        "de_acceptance",
        "mean_log_lik",
        "stored",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((0..dim).map(|i| format!("ess_{i}")));
    let mut t = Table::new(cols);
    for s in stages {
        let mut row = vec![
            s.stage as f64,
            s.beta,
            s.acceptance,
            s.stretch_acceptance,
            s.de_acceptance,
            s.mean_log_lik,
            s.stored as f64,
        ];
        row.extend(&s.ess);
        t.push(row);
    }
    t
}

/// Column names of the chain export for a `dim`-parameter target.
pub fn chain_columns(dim: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["stage", "beta", "sweep", "walker"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..dim).map(|i| format!("x{i}")));
    cols.extend(["log_prior", "log_lik", "accepted"].iter().map(|s| s.to_string()));
    cols
}

/// Chain-export rows of one stage.
pub fn chain_rows(s: &StageSamples) -> impl Iterator<Item = Vec<f64>> + '_ {
    (0..s.log_lik.len()).map(move |i| {
        let mut row = vec![s.stage as f64, s.beta, s.sweep[i] as f64, s.walker[i] as f64];
        row.extend(&s.positions[i]);
        row.extend([s.log_prior[i], s.log_lik[i], s.accepted[i] as u8 as f64]);
        row
    })
}

/// Runs every stage of the ladder (prior-only stage first), calling
/// `observe` after each stage.
pub fn run_annealed_ensemble_with<T, F>(target: &T, config: McmcConfig, mut observe: F) -> Result<McmcRun>
where
    T: AnnealTarget + ?Sized,
    F: FnMut(&StageRecord, &StageSamples) -> Result<()>,
{
    let ladder = config.ladder();
    let mut sampler = EnsembleSampler::new(target, config)?;
    let mut stages = Vec::with_capacity(ladder.len());
    for (s, &beta) in ladder.iter().enumerate() {
        let (record, samples) = sampler.run_stage(s, beta);
        observe(&record, &samples)?;
        stages.push(record);
    }
    let ti = TiLadder::new(
        stages.iter().map(|s| s.beta).collect(),
        stages.iter().map(|s| s.mean_log_lik).collect(),
        stages.iter().map(|s| s.stored).collect(),
    )?;
    Ok(McmcRun {
        stages,
        chains: Vec::new(),
        ladder: ti,
        final_ensemble: sampler.ensemble.clone(),
    })
}

/// Runs the annealed ensemble and keeps every stored draw in memory.
pub fn run_annealed_ensemble<T: AnnealTarget + ?Sized>(target: &T, config: McmcConfig) -> Result<McmcRun> {
    let mut chains = Vec::new();
    let mut run = run_annealed_ensemble_with(target, config, |_, s| {
        chains.push(s.clone());
        Ok(())
    })?;
    run.chains = chains;
    Ok(run)
}
