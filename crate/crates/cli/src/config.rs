//! Run configuration: one TOML file per run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use annealflow::anneal::AnnealConfig;
use annealflow::evidence::{Proposal, TI_CUTOFF};
use annealflow::mcmc::McmcConfig;
use annealflow::target::ode::Tsit5;
use annealflow::target::{
    ConjugateGaussian, Dataset, DiagGaussian, OdePosterior, RepressilatorParams, TrimodalGaussian, CANONICAL_THETA,
};
use annealflow::AnnealTarget;

use crate::Validation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads for likelihood and flow batches; 0 uses every core.
    #[serde(default)]
    pub workers: usize,
    pub target: TargetConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nf: Option<AnnealConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mcmc: Option<McmcConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<EvidenceConfig>,
    pub output: OutputConfig,
    /// Run summary written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<toml::Table>,
    /// Per-stage records written into manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Vec<toml::Table>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetConfig {
    Repressilator(RepressilatorConfig),
    Gaussian(GaussianConfig),
    Trimodal(TrimodalConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepressilatorConfig {
    /// Dataset file, read by the inference commands and written by
    /// `simulate`.
    pub dataset: PathBuf,
    #[serde(default = "default_rtol")]
    pub rtol: f64,
    #[serde(default = "default_atol")]
    pub atol: f64,
    #[serde(default)]
    pub simulate: SimulateConfig,
}

fn default_rtol() -> f64 {
    Tsit5::default().rtol
}

fn default_atol() -> f64 {
    Tsit5::default().atol
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub theta: [f64; 8],
    pub sigma2: f64,
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            theta: CANONICAL_THETA,
            sigma2: 0.25,
            t0: 0.0,
            t_end: 30.0,
            dt: 0.6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianConfig {
    pub prior_mean: Vec<f64>,
    pub prior_var: Vec<f64>,
    pub observation: Vec<f64>,
    pub lik_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrimodalConfig {
    pub radius: f64,
    pub mode_var: f64,
    pub prior_var: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvidenceConfig {
    pub proposal: Proposal,
    /// Fresh draws per checkpoint for the TI ladder; `None` means ten
    /// batches.
    pub ti_samples: Option<usize>,
    /// Fresh draws for importance sampling with `proposal = "model"`;
    /// `None` means ten batches.
    pub is_samples: Option<usize>,
    pub cutoff: f64,
    pub seed: u64,
}

impl Default for EvidenceConfig {
    fn default() -> Self {
        Self {
            proposal: Proposal::Mixture,
            ti_samples: None,
            is_samples: None,
            cutoff: TI_CUTOFF,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// A target ready for inference, plus its closed-form evidence if known.
pub struct BuiltTarget {
    pub target: Box<dyn AnnealTarget + Send>,
    pub analytic_log_evidence: Option<f64>,
}

impl RunConfig {
    /// Parses `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Validation(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = if base.as_os_str().is_empty() { Path::new(".") } else { base };
        let base = std::path::absolute(base).context("resolving the config directory")?;
        cfg.output.dir = base.join(&cfg.output.dir);
        if let TargetConfig::Repressilator(r) = &mut cfg.target {
            r.dataset = base.join(&r.dataset);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let check = |r: annealflow::Result<()>| r.map_err(|e| Validation(e.to_string()));
        if let Some(nf) = &self.nf {
            check(nf.validate())?;
        }
        if let Some(m) = &self.mcmc {
            check(m.validate())?;
        }
        match &self.target {
            TargetConfig::Repressilator(r) => {
                if !(r.rtol > 0.0 && r.atol > 0.0) {
                    bail!(Validation("solver tolerances must be positive".into()));
                }
                let s = &r.simulate;
                if !(s.dt > 0.0 && s.t_end > s.t0) || !(s.sigma2 >= 0.0) {
                    bail!(Validation("simulate needs dt > 0, t_end > t0 and sigma2 >= 0".into()));
                }
            }
            TargetConfig::Gaussian(g) => {
                let n = g.prior_mean.len();
                if n == 0 || g.prior_var.len() != n || g.observation.len() != n {
                    bail!(Validation("gaussian target vectors must share a positive length".into()));
                }
                if g.prior_var.iter().any(|v| !(*v > 0.0)) || !(g.lik_var > 0.0) {
                    bail!(Validation("gaussian variances must be positive".into()));
                }
            }
            TargetConfig::Trimodal(t) => {
                if !(t.radius > 0.0 && t.mode_var > 0.0 && t.prior_var > 0.0) {
                    bail!(Validation("trimodal radius and variances must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn evidence_config(&self) -> EvidenceConfig {
        self.evidence.clone().unwrap_or_default()
    }

    pub fn build_target(&self) -> anyhow::Result<BuiltTarget> {
        Ok(match &self.target {
            TargetConfig::Repressilator(r) => {
                if !r.dataset.exists() {
                    bail!(Validation(format!("dataset file {} does not exist", r.dataset.display())));
                }
                let data = Dataset::load(&r.dataset)
                    .map_err(|e| Validation(format!("cannot load dataset {}: {e}", r.dataset.display())))?;
                BuiltTarget {
                    target: Box::new(OdePosterior::new(data).with_solver(Tsit5::new(r.rtol, r.atol))),
                    analytic_log_evidence: None,
                }
            }
            TargetConfig::Gaussian(g) => {
                let t = ConjugateGaussian::new(
                    DiagGaussian::new(g.prior_mean.clone(), g.prior_var.clone()),
                    g.observation.clone(),
                    g.lik_var,
                );
                let z = t.log_evidence();
                BuiltTarget {
                    target: Box::new(t),
                    analytic_log_evidence: Some(z),
                }
            }
            TargetConfig::Trimodal(t) => BuiltTarget {
                target: Box::new(TrimodalGaussian::symmetric(t.radius, t.mode_var, t.prior_var)),
                analytic_log_evidence: None,
            },
        })
    }
}

/// Parameters to simulate from, checked for the repressilator target.
pub fn simulate_params(cfg: &RunConfig) -> anyhow::Result<(&RepressilatorConfig, RepressilatorParams)> {
    match &cfg.target {
        TargetConfig::Repressilator(r) => Ok((r, RepressilatorParams(r.simulate.theta))),
        _ => bail!(Validation("simulate requires target.kind = \"repressilator\"".into())),
    }
}
