//! Adaptive annealing of a normalizing flow from the prior to the posterior.

pub mod adam;
pub mod archive;
pub mod driver;
pub mod schedule;

pub use crate::stats::ess;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use archive::{mixture_log_density, ArchivedBatch, FreshBatch, SampleArchive};
pub use driver::{anneal_run, AnnealConfig, AnnealRun, Annealer, BatchRecord, Checkpoint};
pub use schedule::{ema_update, solve_beta, WeightView, BETA_TOLERANCE};
