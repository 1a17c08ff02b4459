use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::archive::{FreshBatch, SampleArchive};
use super::schedule::{ema_update, solve_beta, WeightView};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::par::Executor;
use crate::stats::{ess_from_log_weights, normalized_weights};
use crate::target::AnnealTarget;

/// Smallest increase of `beta` counted as schedule progress.
pub const MIN_BETA_PROGRESS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnnealConfig {
    /// Samples per batch `B`.
    pub batch_size: usize,
    /// Optimizer steps per batch `J`.
    pub train_steps: usize,
    /// Number of retained batches `M`.
    pub window: usize,
    /// Threshold ratio `n*/B`.
    pub ess_threshold: f64,
    /// ESS discount `gamma` for each schedule step.
    pub gamma: f64,
    /// EMA decay `lambda`.
    pub ema_decay: f64,
    /// Coupling layers `L`.
    pub n_layers: usize,
    /// Batches without schedule progress before the run is aborted.
    pub stall_batches: usize,
    /// Hard cap on the number of batches; `None` for no cap.
    pub max_batches: Option<usize>,
    /// Minimum number of completed batches at `beta = 1` before the run may
    /// end.
    pub final_batches: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            batch_size: 1024,
            train_steps: 50,
            window: 20,
            ess_threshold: 0.4,
            gamma: 0.95,
            ema_decay: 0.01,
            n_layers: 8,
            stall_batches: 200,
            max_batches: None,
            final_batches: 1,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.train_steps == 0 || self.window == 0 || self.n_layers == 0 || self.stall_batches == 0 {
            return bad("train_steps, window, n_layers and stall_batches must be positive");
        }
        if !(self.ess_threshold > 0.0 && self.ess_threshold < 1.0) {
            return bad("ess_threshold must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay <= 1.0) {
            return bad("ema_decay must lie in (0, 1]");
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.clip_norm > 0.0 && a.epsilon > 0.0) {
            return bad("adam learning_rate, clip_norm and epsilon must be positive");
        }
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad("adam moment decay rates must lie in [0, 1)");
        }
        if self.max_batches == Some(0) {
            return bad("max_batches must be positive");
        }
        Ok(())
    }

    /// `n*` in samples.
    pub fn ess_target(&self) -> f64 {
        self.ess_threshold * self.batch_size as f64
    }
}

/// Diagnostics of one batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch: usize,
    /// Inverse temperature used for training on this batch.
    pub beta: f64,
    /// ESS of the fresh batch against the model that drew it, at the
    /// inverse temperature in force when it was drawn.
    pub n_eff: f64,
    pub ema: f64,
    /// Cumulative likelihood evaluations.
    pub evaluations: usize,
    /// Loss of the last optimizer step.
    pub loss: f64,
    /// Optimizer steps skipped because the mini-batch carried no weight.
    pub skipped_steps: usize,
}

/// Model snapshot taken when leaving an inverse temperature.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub beta: f64,
    pub batch: usize,
    pub n_eff: f64,
    pub ema: f64,
    pub evaluations: usize,
    pub model: FlowModel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Adaptive,
    Fixed,
}

/// Adaptive annealing driver. Each call to [`Annealer::step`] draws one
/// batch, updates the schedule, appends the batch to the archive and trains
/// the flow.
pub struct Annealer<'a, T: AnnealTarget + ?Sized> {
    target: &'a T,
    config: AnnealConfig,
    exec: Executor,
    rng: ChaCha8Rng,
    model: FlowModel,
    adam: AdamState,
    archive: SampleArchive,
    beta: f64,
    ema: f64,
    batch: usize,
    cooldown: usize,
    batches_at_one: usize,
    last_progress: usize,
    evaluations: usize,
    done: bool,
    mode: Mode,
    history: Vec<BatchRecord>,
    checkpoints: Vec<Checkpoint>,
}

impl<'a, T: AnnealTarget + ?Sized> Annealer<'a, T> {
    pub fn new(target: &'a T, config: AnnealConfig, exec: Executor) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = FlowModel::new(target.dim(), config.n_layers, &mut rng)?;
        Ok(Self::with_model(target, config, exec, model, rng))
    }

    /// Starts from an existing model instead of a fresh one.
    pub fn from_model(target: &'a T, config: AnnealConfig, exec: Executor, model: FlowModel) -> Result<Self> {
        config.validate()?;
        if model.dim() != target.dim() {
            return Err(Error::InvalidInput("model and target dimensions differ".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self::with_model(target, config, exec, model, rng))
    }

    fn with_model(target: &'a T, config: AnnealConfig, exec: Executor, model: FlowModel, rng: ChaCha8Rng) -> Self {
        let adam = AdamState::new(model.n_params());
        let archive = SampleArchive::new(config.window);
        Self {
            target,
            config,
            exec,
            rng,
            model,
            adam,
            archive,
            beta: 0.0,
            ema: 0.0,
            batch: 0,
            cooldown: 0,
            batches_at_one: 0,
            last_progress: 0,
            evaluations: 0,
            done: false,
            mode: Mode::Adaptive,
            history: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    /// Disables the adaptive schedule and trains at the given `beta` until
    /// changed. Used for preset-schedule and fixed-temperature baselines.
    pub fn fix_beta(&mut self, beta: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidInput(format!("beta = {beta} outside [0, 1]")));
        }
        if self.mode == Mode::Fixed && beta != self.beta {
            self.checkpoint();
        }
        self.mode = Mode::Fixed;
        self.beta = beta;
        Ok(())
    }

    pub fn config(&self) -> &AnnealConfig {
        &self.config
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn ema(&self) -> f64 {
        self.ema
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    pub fn archive(&self) -> &SampleArchive {
        &self.archive
    }

    pub fn history(&self) -> &[BatchRecord] {
        &self.history
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn executor(&self) -> &Executor {
        &self.exec
    }

    fn checkpoint(&mut self) {
        let (n_eff, ema) = self.history.last().map_or((0.0, 0.0), |r| (r.n_eff, r.ema));
        self.checkpoints.push(Checkpoint {
            beta: self.beta,
            batch: self.batch,
            n_eff,
            ema,
            evaluations: self.evaluations,
            model: self.model.clone(),
        });
    }

    fn draw(&mut self) -> Result<FreshBatch> {
        let (samples, log_q) = self.model.sample(self.config.batch_size, &mut self.rng, &self.exec)?;
        let target = self.target;
        let comps = self.exec.map_range(samples.rows(), |i| target.components(samples.row(i)));
        self.evaluations += samples.rows();
        Ok(FreshBatch {
            log_prior: comps.iter().map(|c| c.log_prior).collect(),
            log_lik: comps.iter().map(|c| c.log_lik).collect(),
            samples,
            log_q,
        })
    }

    /// Processes one batch. Returns `Ok(true)` once the run has finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.done {
            return Ok(true);
        }
        let fresh = self.draw()?;
        let view = WeightView::new(&fresh.log_prior, &fresh.log_lik, &fresh.log_q);
        let n_eff = ess_from_log_weights(&view.log_weights(self.beta)).unwrap_or(0.0);
        self.ema = ema_update(self.ema, n_eff, self.config.ema_decay);

        let fire = self.mode == Mode::Adaptive && self.ema > self.config.ess_target() && self.cooldown == 0;
        self.cooldown = self.cooldown.saturating_sub(1);
        let mut finishing = false;
        if fire && self.beta < 1.0 {
            match solve_beta(&view, self.beta, self.config.gamma) {
                Ok(next) => {
                    self.checkpoint();
                    if next - self.beta >= MIN_BETA_PROGRESS {
                        self.last_progress = self.batch;
                    }
                    self.beta = next;
                    self.cooldown = 1;
                }
                Err(Error::ScheduleStall { .. }) => {}
                Err(e) => return Err(e),
            }
        } else if fire && self.batches_at_one >= self.config.final_batches {
            finishing = true;
        }

        let model_id = self.batch;
        self.archive.push(self.batch, fresh, model_id, &self.model, &self.exec)?;
        let (loss, skipped) = self.train()?;
        self.history.push(BatchRecord {
            batch: self.batch,
            beta: self.beta,
            n_eff,
            ema: self.ema,
            evaluations: self.evaluations,
            loss,
            skipped_steps: skipped,
        });
        self.batch += 1;
        if self.beta == 1.0 {
            self.batches_at_one += 1;
        }
        if finishing {
            self.checkpoint();
            self.done = true;
            return Ok(true);
        }
        if self.mode == Mode::Adaptive && self.batch - self.last_progress > self.config.stall_batches {
            return Err(Error::ScheduleStall {
                beta: self.beta,
                reason: format!(
                    "no progress for {} batches (EMA ESS {:.1}, target {:.1})",
                    self.config.stall_batches,
                    self.ema,
                    self.config.ess_target()
                ),
            });
        }
        if let Some(max) = self.config.max_batches {
            if self.batch >= max {
                return Err(Error::ScheduleStall {
                    beta: self.beta,
                    reason: format!("reached max_batches = {max}"),
                });
            }
        }
        Ok(false)
    }

    /// `J` Adam steps on mini-batches drawn with replacement from the
    /// archive, weighted by the mixture importance weights at the current
    /// `beta`.
    fn train(&mut self) -> Result<(f64, usize)> {
        let weights = self.archive.weights(self.beta)?;
        let all = self.archive.samples();
        let n = weights.len();
        let b = self.config.batch_size;
        let mut idx = vec![0usize; b];
        let mut w = vec![0.0; b];
        let mut loss = f64::NAN;
        let mut skipped = 0;
        for _ in 0..self.config.train_steps {
            for (slot, wi) in idx.iter_mut().zip(w.iter_mut()) {
                *slot = self.rng.random_range(0..n);
                *wi = weights[*slot];
            }
            let total: f64 = w.iter().sum();
            if total <= 0.0 {
                skipped += 1;
                continue;
            }
            w.iter_mut().for_each(|x| *x /= total);
            let mini = all.select(&idx);
            let (l, g) = self.model.loss_and_grad(&mini, &w, &self.exec)?;
            adam_step(self.model.params_mut(), &g, &mut self.adam, &self.config.adam)?;
            loss = l;
        }
        Ok((loss, skipped))
    }

    /// Runs the adaptive schedule to completion.
    pub fn run(&mut self) -> Result<()> {
        while !self.step()? {}
        Ok(())
    }

    /// Trains for `batches` batches at the fixed inverse temperature.
    pub fn run_batches(&mut self, batches: usize) -> Result<()> {
        for _ in 0..batches {
            self.step()?;
        }
        Ok(())
    }

    /// Preset schedule: `batches_per_stage` batches at each listed `beta`,
    /// with a checkpoint at every change and at the end.
    pub fn run_preset(&mut self, betas: &[f64], batches_per_stage: usize) -> Result<()> {
        for &b in betas {
            self.fix_beta(b)?;
            self.run_batches(batches_per_stage)?;
        }
        self.checkpoint();
        self.done = true;
        Ok(())
    }

    pub fn into_result(self) -> AnnealRun {
        AnnealRun {
            model: self.model,
            archive: self.archive,
            history: self.history,
            checkpoints: self.checkpoints,
            evaluations: self.evaluations,
        }
    }
}

/// Outputs of a completed annealing run.
#[derive(Clone, Debug)]
pub struct AnnealRun {
    pub model: FlowModel,
    pub archive: SampleArchive,
    pub history: Vec<BatchRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub evaluations: usize,
}

impl AnnealRun {
    /// The inverse temperatures visited, one per checkpoint.
    pub fn betas(&self) -> Vec<f64> {
        self.checkpoints.iter().map(|c| c.beta).collect()
    }

    /// Normalized mixture weights of the final archive at `beta = 1`.
    pub fn final_weights(&self) -> Result<Vec<f64>> {
        normalized_weights(&self.archive.log_weights(1.0))
    }
}

/// Runs the adaptive annealing schedule from a fresh flow.
pub fn anneal_run<T: AnnealTarget + ?Sized>(target: &T, config: AnnealConfig, exec: Executor) -> Result<AnnealRun> {
    let mut a = Annealer::new(target, config, exec)?;
    a.run()?;
    Ok(a.into_result())
}
