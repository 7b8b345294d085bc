//! Transfer-learning Bayesian optimization for online process parameter
//! adaptation.
//!
//! Source tasks (previous materials) are modelled by independent Gaussian
//! processes in optimum-centered coordinates, combined with a target GP by a
//! ranking-weighted ensemble, and the ensemble mean is minimized to propose
//! the next parameters.

pub mod acquisition;
pub mod bounds;
pub mod data;
pub mod gp;
pub mod rgpe;
pub mod seed;
pub mod session;
pub mod synthetic;
pub mod transform;

pub use nalgebra;

pub use acquisition::{minimize_surrogate, Minimum, OptimizeError, OptimizerConfig};
pub use bounds::{BoundsError, ParamBox};
pub use data::{read_task, DataError};
pub use gp::{
    fit_hyperparameters, FitConfig, FitResult, GpError, GpModel, KernelFamily, KernelSpec,
    Posterior,
};
pub use rgpe::{
    compute_weights, force_target_weight, ranking_loss, EnsembleState, RgpeError, Schedule,
    WeightConfig,
};
pub use session::{
    HistoryRecord, Normalization, Phase, Proposal, Session, SessionConfig, SessionError,
    StartRule, StopRule, Suggestion,
};
pub use transform::{NormTransform, TaskDataset, TransformError};
