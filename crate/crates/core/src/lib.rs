//! Bayesian parameter estimation with normalizing flows trained under an
//! ESS-adaptive annealing schedule.
//!
//! * [`flow`]: RealNVP model, exact densities, weighted forward-KL gradients.
//! * [`anneal`]: adaptive inverse-temperature schedule, mixture sample
//!   archive, Adam training loop.
//! * [`target`]: annealed targets, including the repressilator ODE posterior.
//! * [`evidence`]: marginal likelihood by importance sampling and by
//!   thermodynamic integration.
//! * [`mcmc`]: annealed affine-invariant ensemble sampler used as a baseline.

pub mod anneal;
pub mod error;
pub mod evidence;
pub mod flow;
pub mod mcmc;
pub mod par;
pub mod stats;
pub mod table;
pub mod target;

pub use error::{Error, Result};
pub use flow::{FlowModel, SampleMatrix};
pub use par::Executor;
pub use target::AnnealTarget;
