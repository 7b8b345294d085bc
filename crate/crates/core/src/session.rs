//! Ask/tell state machine for online parameter adaptation.
//!
//! A session is created from source task data, hands out two start points,
//! and then alternates between `ask` (renormalize target data, condition the
//! target GP, weight the ensemble, minimize it) and `tell` (record the
//! measured quality). `ask` is a pure function of the session state.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{minimize_surrogate, OptimizeError, OptimizerConfig};
use crate::bounds::ParamBox;
use crate::gp::{fit_hyperparameters, FitConfig, GpError, GpModel, KernelFamily, KernelSpec};
use crate::rgpe::{ranking_loss, EnsembleState, RgpeError, Schedule, WeightConfig};
use crate::seed::derive_seed;
use crate::transform::{
    box_normalize, minmax_normalize, source_normalize, target_normalize,
    NormTransform, TaskDataset, TransformError,
};

/// Target observations needed before target hyperparameters are refit.
pub const MIN_POINTS_FOR_TARGET_FIT: usize = 4;
/// Standard deviations above the worst observation recorded for a failure.
pub const FAILURE_SIGMAS: f64 = 3.0;
/// Offset of the second start point, as a fraction of the box width.
pub const START_OFFSET: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("at least one source task is required")]
    NoSources,
    #[error("source task `{task}` has {found} observations, need at least 2")]
    TooFewSourcePoints { task: String, found: usize },
    #[error("`{task}` has input dimension {found}, box has {expected}")]
    DimensionMismatch {
        task: String,
        expected: usize,
        found: usize,
    },
    #[error("operation not allowed in phase {0}")]
    WrongPhase(Phase),
    #[error("parameters {0:?} lie outside the box")]
    OutsideBox(Vec<f64>),
    #[error("measured quality must be finite unless flagged as a failure")]
    NonFiniteObservation,
    #[error("a failure cannot be recorded before any successful observation")]
    FailureWithoutHistory,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Rgpe(#[from] RgpeError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error("snapshot: {0}")]
    Snapshot(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "await_init_1")]
    AwaitInit1,
    #[serde(rename = "await_init_2")]
    AwaitInit2,
    #[serde(rename = "running")]
    Running,
    #[serde(rename = "stopped")]
    Stopped,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::AwaitInit1 => "await_init_1",
            Phase::AwaitInit2 => "await_init_2",
            Phase::Running => "running",
            Phase::Stopped => "stopped",
        })
    }
}

/// How source and target inputs are mapped into the shared coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Sources centered on their best observation, target on its first
    /// observation.
    #[default]
    OptimumCentered,
    /// Each task min-max scaled onto its own input range (target: the box).
    MinMax,
}

/// Where the first target measurement is taken.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StartRule {
    /// Best observed parameters of the most recently added source task.
    #[default]
    LastSourceOptimum,
    SourceOptimum { index: usize },
    Fixed { x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StopRule {
    /// Maximum number of suggestions after the two start points.
    pub max_iterations: usize,
    /// Stop once the best observed quality is at or below this value.
    pub quality_threshold: Option<f64>,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            quality_threshold: None,
        }
    }
}

fn default_schedule() -> Option<Schedule> {
    Some(Schedule::default())
}

fn default_weight_samples() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(rename = "box")]
    pub bounds: ParamBox,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub fit: FitConfig,
    /// Forced target-weight schedule; `null` disables forcing.
    #[serde(default = "default_schedule")]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_weight_samples")]
    pub weight_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default)]
    pub start: StartRule,
}

impl SessionConfig {
    pub fn new(bounds: ParamBox) -> Self {
        Self {
            bounds,
            kernel: KernelFamily::default(),
            fit: FitConfig::default(),
            schedule: default_schedule(),
            normalization: Normalization::default(),
            optimizer: OptimizerConfig::default(),
            weight_samples: default_weight_samples(),
            seed: 0,
            stop: StopRule::default(),
            start: StartRule::default(),
        }
    }

    fn validate(&self, n_sources: usize) -> Result<(), SessionError> {
        if self.stop.max_iterations < 1 {
            return Err(SessionError::InvalidConfig("max_iterations must be ≥ 1".into()));
        }
        if self.weight_samples < 1 {
            return Err(SessionError::InvalidConfig("weight_samples must be ≥ 1".into()));
        }
        if let Some(s) = &self.schedule {
            if !s.is_valid() {
                return Err(SessionError::InvalidConfig(
                    "schedule needs α0, α1 ≥ 0 and β in (0, 1]".into(),
                ));
            }
        }
        self.optimizer.validate()?;
        match &self.start {
            StartRule::SourceOptimum { index } if *index >= n_sources => Err(
                SessionError::InvalidConfig(format!("start source index {index} out of range")),
            ),
            StartRule::Fixed { x } if !self.bounds.contains(x) => {
                Err(SessionError::OutsideBox(x.clone()))
            }
            _ => Ok(()),
        }
    }
}

/// A source task with its normalization and fitted hyperparameters.
#[derive(Clone, Serialize, Deserialize)]
pub struct SourceTask {
    pub data: TaskDataset,
    pub transform: NormTransform,
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    #[serde(skip)]
    model: Option<Arc<GpModel>>,
}

impl fmt::Debug for SourceTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SourceTask")
            .field("task_id", &self.data.task_id)
            .field("n", &self.data.len())
            .field("kernel", &self.kernel)
            .field("noise_variance", &self.noise_variance)
            .finish()
    }
}

impl SourceTask {
    fn condition(&mut self) -> Result<(), SessionError> {
        let normalized = self.transform.apply(&self.data);
        let model = GpModel::condition(
            &normalized.input_matrix(),
            &normalized.output_vector(),
            self.kernel.clone(),
            self.noise_variance,
        )?;
        self.model = Some(Arc::new(model));
        Ok(())
    }

    pub fn model(&self) -> &Arc<GpModel> {
        self.model.as_ref().expect("source models are conditioned on construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
    #[serde(default)]
    pub failure: bool,
}

/// One `tell`, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub index: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub failure: bool,
    /// The point was one of the two start points.
    pub suggested_start: bool,
    /// Ensemble weights of the ask preceding this tell.
    pub weights: Option<Vec<f64>>,
    pub surrogate_value: Option<f64>,
    pub best_y: f64,
}

/// Result of one loop body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    /// Next parameters, physical units.
    pub x: Vec<f64>,
    /// Sources in order, target last.
    pub weights: Vec<f64>,
    /// Mean-prediction ranking losses, same order as `weights`.
    pub losses: Vec<usize>,
    /// Minimized surrogate value (normalized units).
    pub surrogate_value: f64,
    /// Ensemble mean at `x` mapped back to target quality units.
    pub predicted_y: f64,
    pub iteration: usize,
    pub n_observations: usize,
}

/// What the session wants measured next.
#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Start(Vec<f64>),
    Suggestion(Suggestion),
}

impl Proposal {
    pub fn x(&self) -> &[f64] {
        match self {
            Proposal::Start(x) => x,
            Proposal::Suggestion(s) => &s.x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Random streams are keyed by the observation count.
    pub stream: u64,
}

/// Soft-constraint penalty on physical parameters.
#[derive(Clone)]
pub struct PenaltyFn(pub Arc<Penalty>);

type Penalty = dyn Fn(&[f64]) -> f64 + Send + Sync;

impl fmt::Debug for PenaltyFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PenaltyFn(..)")
    }
}

/// Deserializing validates the snapshot and reconditions the source models
/// from the stored hyperparameters, so the next `ask` matches the original.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SessionData")]
pub struct Session {
    config: SessionConfig,
    sources: Vec<SourceTask>,
    observations: Vec<Observation>,
    phase: Phase,
    history: Vec<HistoryRecord>,
    rng: RngState,
    #[serde(skip)]
    pending: Option<Suggestion>,
    #[serde(skip)]
    penalty: Option<PenaltyFn>,
}

impl Session {
    /// Normalizes and fits a GP to every source task.
    pub fn create(sources: Vec<TaskDataset>, config: SessionConfig) -> Result<Self, SessionError> {
        if sources.is_empty() {
            return Err(SessionError::NoSources);
        }
        let dim = config.bounds.dim();
        for s in &sources {
            if s.dim() != dim {
                return Err(SessionError::DimensionMismatch {
                    task: s.task_id.clone(),
                    expected: dim,
                    found: s.dim(),
                });
            }
            if s.len() < 2 {
                return Err(SessionError::TooFewSourcePoints {
                    task: s.task_id.clone(),
                    found: s.len(),
                });
            }
        }
        config.validate(sources.len())?;

        let mut tasks = Vec::with_capacity(sources.len());
        for (i, data) in sources.into_iter().enumerate() {
            let (normalized, transform) = match config.normalization {
                Normalization::OptimumCentered => source_normalize(&data)?,
                Normalization::MinMax => minmax_normalize(&data)?,
            };
            let fit_cfg = FitConfig {
                seed: derive_seed(config.seed, "source-fit", i as u64),
                ..config.fit.clone()
            };
            let fit = fit_hyperparameters(
                &normalized.input_matrix(),
                &normalized.output_vector(),
                config.kernel,
                &fit_cfg,
            )?;
            let mut task = SourceTask {
                data,
                transform,
                kernel: fit.kernel,
                noise_variance: fit.noise_variance,
                model: None,
            };
            task.condition()?;
            tasks.push(task);
        }
        Ok(Self {
            rng: RngState {
                seed: config.seed,
                stream: 0,
            },
            config,
            sources: tasks,
            observations: Vec::new(),
            phase: Phase::AwaitInit1,
            history: Vec::new(),
            pending: None,
            penalty: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn sources(&self) -> &[SourceTask] {
        &self.sources
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    /// `N_t − 2` once both start points are measured.
    pub fn iteration(&self) -> usize {
        self.observations.len().saturating_sub(2)
    }

    pub fn rng_state(&self) -> RngState {
        self.rng
    }

    pub fn set_penalty(&mut self, penalty: Option<PenaltyFn>) {
        self.penalty = penalty;
        self.pending = None;
    }

    /// Lowest observed quality, earliest on ties.
    pub fn best_so_far(&self) -> Option<(Vec<f64>, f64)> {
        let mut best: Option<&Observation> = None;
        for o in &self.observations {
            if best.is_none_or(|b| o.y < b.y) {
                best = Some(o);
            }
        }
        best.map(|o| (o.x.clone(), o.y))
    }

    /// Start point for the current initialization phase.
    pub fn suggest_start(&self) -> Result<Vec<f64>, SessionError> {
        let b = &self.config.bounds;
        match self.phase {
            Phase::AwaitInit1 => {
                let x = match &self.config.start {
                    StartRule::LastSourceOptimum => {
                        let d = &self.sources[self.sources.len() - 1].data;
                        d.inputs()[d.argmin()].clone()
                    }
                    StartRule::SourceOptimum { index } => {
                        let d = &self.sources[*index].data;
                        d.inputs()[d.argmin()].clone()
                    }
                    StartRule::Fixed { x } => x.clone(),
                };
                Ok(b.clamp(&x))
            }
            Phase::AwaitInit2 => Ok(vicinity_point(&self.observations[0].x, b)),
            other => Err(SessionError::WrongPhase(other)),
        }
    }

    /// Start point during initialization, otherwise a full `ask`.
    pub fn propose(&mut self) -> Result<Proposal, SessionError> {
        match self.phase {
            Phase::AwaitInit1 | Phase::AwaitInit2 => Ok(Proposal::Start(self.suggest_start()?)),
            _ => Ok(Proposal::Suggestion(self.ask()?)),
        }
    }

    /// Runs one loop body and returns the next parameters to measure.
    /// Repeated calls without an intervening `tell` return the same result.
    pub fn ask(&mut self) -> Result<Suggestion, SessionError> {
        if self.phase != Phase::Running {
            return Err(SessionError::WrongPhase(self.phase));
        }
        if let Some(p) = &self.pending {
            if p.n_observations == self.observations.len() {
                return Ok(p.clone());
            }
        }
        let s = self.compute_suggestion()?;
        self.pending = Some(s.clone());
        Ok(s)
    }

    fn target_dataset(&self) -> Result<TaskDataset, SessionError> {
        Ok(TaskDataset::new(
            "target",
            self.observations.iter().map(|o| o.x.clone()).collect(),
            self.observations.iter().map(|o| o.y).collect(),
        )?)
    }

    fn compute_suggestion(&self) -> Result<Suggestion, SessionError> {
        let cfg = &self.config;
        let n_t = self.observations.len();
        let stream = n_t as u64;
        let data = self.target_dataset()?;
        let (normalized, transform) = match cfg.normalization {
            Normalization::OptimumCentered => {
                target_normalize(&data, &self.observations[0].x, &cfg.bounds)?
            }
            Normalization::MinMax => box_normalize(&data, &cfg.bounds)?,
        };
        let xt = normalized.input_matrix();
        let yt = normalized.output_vector();
        let sources: Vec<Arc<GpModel>> = self.sources.iter().map(|s| s.model().clone()).collect();

        let (kernel, noise) = self.target_hyperparameters(&sources, &normalized, stream)?;
        let target = Arc::new(GpModel::condition(&xt, &yt, kernel, noise)?);
        let ensemble = EnsembleState::build(
            sources,
            target,
            &WeightConfig {
                samples: cfg.weight_samples,
                seed: derive_seed(cfg.seed, "weights", stream),
            },
            cfg.schedule,
            // Schedule counter starts at 1 on the first loop body.
            self.iteration() + 1,
        )?;

        let opt_cfg = OptimizerConfig {
            seed: derive_seed(cfg.seed, "optimizer", stream),
            ..cfg.optimizer.clone()
        };
        let with_var = opt_cfg.exploration > 0.0;
        let exclude: Vec<Vec<f64>> = normalized.inputs().to_vec();
        let penalty = self.penalty.as_ref().map(|p| p.0.clone());
        let penalty_ref = penalty
            .as_ref()
            .map(|p| p.as_ref() as &(dyn Fn(&[f64]) -> f64 + Sync));
        let min = minimize_surrogate(
            |z| ensemble.predict(z, with_var),
            &cfg.bounds,
            &transform,
            &opt_cfg,
            penalty_ref,
            &exclude,
        )?;
        let predicted = ensemble.predict(&min.normalized, false).0;

        Ok(Suggestion {
            x: min.x,
            weights: ensemble.weights.clone(),
            losses: ensemble.raw_losses.clone(),
            surrogate_value: min.value,
            predicted_y: transform.invert_output(predicted),
            iteration: self.iteration(),
            n_observations: n_t,
        })
    }

    /// Fitted target hyperparameters from enough data; before that, those of
    /// the source whose mean ranks the target data best (lowest index on ties).
    fn target_hyperparameters(
        &self,
        sources: &[Arc<GpModel>],
        normalized: &TaskDataset,
        stream: u64,
    ) -> Result<(KernelSpec, f64), SessionError> {
        let xt = normalized.input_matrix();
        let yt = normalized.output_vector();
        if normalized.len() >= MIN_POINTS_FOR_TARGET_FIT {
            let fit_cfg = FitConfig {
                seed: derive_seed(self.config.seed, "target-fit", stream),
                ..self.config.fit.clone()
            };
            if let Ok(fit) = fit_hyperparameters(&xt, &yt, self.config.kernel, &fit_cfg) {
                return Ok((fit.kernel, fit.noise_variance));
            }
        }
        let mut best = (usize::MAX, 0);
        for (i, s) in sources.iter().enumerate() {
            let post = s.predict(&xt, false)?;
            let loss = ranking_loss(post.mean.as_slice(), yt.as_slice())?;
            if loss < best.0 {
                best = (loss, i);
            }
        }
        let src = &self.sources[best.1];
        Ok((src.kernel.clone(), src.noise_variance))
    }

    /// Records a measurement. A failure (e.g. cut interruption) is stored
    /// as the worst quality so far plus three standard deviations.
    pub fn tell(
        &mut self,
        x: &[f64],
        y: Option<f64>,
        failure: bool,
    ) -> Result<&HistoryRecord, SessionError> {
        if self.phase == Phase::Stopped {
            return Err(SessionError::WrongPhase(self.phase));
        }
        if x.len() != self.config.bounds.dim() {
            return Err(SessionError::DimensionMismatch {
                task: "target".into(),
                expected: self.config.bounds.dim(),
                found: x.len(),
            });
        }
        if !self.config.bounds.contains(x) {
            return Err(SessionError::OutsideBox(x.to_vec()));
        }
        let y = if failure {
            self.failure_value()?
        } else {
            match y {
                Some(v) if v.is_finite() => v,
                _ => return Err(SessionError::NonFiniteObservation),
            }
        };

        let n_before = self.observations.len();
        let from_ask = self
            .pending
            .take()
            .filter(|p| p.n_observations == n_before && self.phase == Phase::Running);
        let suggested_start = matches!(self.phase, Phase::AwaitInit1 | Phase::AwaitInit2);
        self.observations.push(Observation {
            x: x.to_vec(),
            y,
            failure,
        });
        let best_y = self.best_so_far().map(|b| b.1).unwrap_or(y);
        self.history.push(HistoryRecord {
            index: n_before,
            x: x.to_vec(),
            y,
            failure,
            suggested_start,
            weights: from_ask.as_ref().map(|p| p.weights.clone()),
            surrogate_value: from_ask.as_ref().map(|p| p.surrogate_value),
            best_y,
        });
        self.rng.stream = self.observations.len() as u64;

        self.phase = match self.phase {
            Phase::AwaitInit1 => Phase::AwaitInit2,
            Phase::AwaitInit2 | Phase::Running => {
                let done_iters = self.iteration() >= self.config.stop.max_iterations;
                let good_enough = self
                    .config
                    .stop
                    .quality_threshold
                    .is_some_and(|t| best_y <= t);
                if done_iters || good_enough {
                    Phase::Stopped
                } else {
                    Phase::Running
                }
            }
            Phase::Stopped => unreachable!(),
        };
        Ok(self.history.last().expect("just pushed"))
    }

    fn failure_value(&self) -> Result<f64, SessionError> {
        let ys: Vec<f64> = self.observations.iter().map(|o| o.y).collect();
        if ys.is_empty() {
            return Err(SessionError::FailureWithoutHistory);
        }
        let worst = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let std = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        Ok(worst + FAILURE_SIGMAS * std)
    }

    /// Serializes config, source data with fitted hyperparameters, target
    /// data, history and RNG state.
    pub fn to_json(&self) -> Result<String, SessionError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Deserialize)]
struct SessionData {
    config: SessionConfig,
    sources: Vec<SourceTask>,
    observations: Vec<Observation>,
    phase: Phase,
    history: Vec<HistoryRecord>,
    rng: RngState,
}

impl TryFrom<SessionData> for Session {
    type Error = SessionError;

    fn try_from(d: SessionData) -> Result<Self, SessionError> {
        if d.sources.is_empty() {
            return Err(SessionError::NoSources);
        }
        d.config.validate(d.sources.len())?;
        let dim = d.config.bounds.dim();
        if d.observations.iter().any(|o| o.x.len() != dim || !d.config.bounds.contains(&o.x)) {
            return Err(SessionError::InvalidConfig("snapshot observation outside the box".into()));
        }
        if d.history.len() != d.observations.len() {
            return Err(SessionError::InvalidConfig("history and observations differ".into()));
        }
        let mut s = Session {
            config: d.config,
            sources: d.sources,
            observations: d.observations,
            phase: d.phase,
            history: d.history,
            rng: d.rng,
            pending: None,
            penalty: None,
        };
        for t in &mut s.sources {
            if t.data.dim() != dim {
                return Err(SessionError::DimensionMismatch {
                    task: t.data.task_id.clone(),
                    expected: dim,
                    found: t.data.dim(),
                });
            }
            t.condition()?;
        }
        Ok(s)
    }
}

/// Second start point: `x0` moved by [`START_OFFSET`] of the box width in
/// every dimension, clamped to the box.
pub fn vicinity_point(x0: &[f64], bounds: &ParamBox) -> Vec<f64> {
    let x: Vec<f64> = x0
        .iter()
        .zip(bounds.widths())
        .zip(bounds.upper())
        .map(|((v, w), hi)| {
            let up = v + START_OFFSET * w;
            // Step the other way rather than collapse onto x0 at the upper bound.
            if up > *hi {
                v - START_OFFSET * w
            } else {
                up
            }
        })
        .collect();
    bounds.clamp(&x)
}
