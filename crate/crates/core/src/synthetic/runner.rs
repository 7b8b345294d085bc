use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{generate_family, Family, FamilyError, TaskFamilySpec};
use crate::acquisition::{minimize_surrogate, OptimizerConfig};
use crate::gp::{fit_hyperparameters, FitConfig, GpModel, KernelFamily};
use crate::rgpe::Schedule;
use crate::seed::derive_seed;
use crate::session::{
    vicinity_point, Normalization, Session, SessionConfig, StartRule, StopRule,
};
use crate::transform::{box_normalize, TaskDataset};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("at least one strategy is required")]
    NoStrategies,
    #[error("unknown strategy `{0}` (expected random, vanilla_bo, vanilla_rgpe or ours)")]
    UnknownStrategy(String),
    #[error("invalid bench config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error("trial {trial}, {strategy}: {source}")]
    Strategy {
        trial: usize,
        strategy: Strategy,
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Uniform draws in the box.
    Random,
    /// Target-only GP with a lower confidence bound.
    VanillaBo,
    /// Ensemble on min-max scaled tasks without forced target weight.
    VanillaRgpe,
    /// Optimum-centered ensemble with forced target weight.
    Ours,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::VanillaBo,
        Strategy::VanillaRgpe,
        Strategy::Ours,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::VanillaBo => "vanilla_bo",
            Strategy::VanillaRgpe => "vanilla_rgpe",
            Strategy::Ours => "ours",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BenchError::UnknownStrategy(s.to_string()))
    }
}

/// Exploration weight of the target-only baseline.
pub const VANILLA_BO_KAPPA: f64 = 2.0;

fn default_threshold() -> f64 {
    0.05
}

fn default_weight_samples() -> usize {
    100
}

fn default_schedule() -> Option<Schedule> {
    Some(Schedule::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub family: TaskFamilySpec,
    pub strategies: Vec<Strategy>,
    pub iterations: usize,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// A trial succeeds once best `y ≤ f* + threshold · |f*|`.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub kernel: KernelFamily,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_weight_samples")]
    pub weight_samples: usize,
    #[serde(default = "default_schedule")]
    pub schedule: Option<Schedule>,
}

impl BenchConfig {
    pub fn new(family: TaskFamilySpec, strategies: Vec<Strategy>, iterations: usize, trials: usize) -> Self {
        Self {
            family,
            strategies,
            iterations,
            trials,
            seed: 0,
            threshold: default_threshold(),
            kernel: KernelFamily::default(),
            fit: FitConfig::default(),
            optimizer: OptimizerConfig::default(),
            weight_samples: default_weight_samples(),
            schedule: default_schedule(),
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.strategies.is_empty() {
            return Err(BenchError::NoStrategies);
        }
        let mut seen = self.strategies.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.strategies.len() {
            return Err(BenchError::InvalidConfig("duplicate strategy".into()));
        }
        if self.iterations < 1 || self.trials < 1 {
            return Err(BenchError::InvalidConfig("iterations and trials must be ≥ 1".into()));
        }
        if !(self.threshold >= 0.0 && self.threshold.is_finite()) {
            return Err(BenchError::InvalidConfig("threshold must be ≥ 0".into()));
        }
        if self.weight_samples < 1 {
            return Err(BenchError::InvalidConfig("weight_samples must be ≥ 1".into()));
        }
        self.optimizer
            .validate()
            .map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
        self.family.validate()?;
        Ok(())
    }
}

/// Best-so-far curve of one strategy in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub strategy: Strategy,
    pub trial: usize,
    /// Entry `k − 1` is the best noise-free value after iteration `k`
    /// (the two start points plus `k` suggestions).
    pub best_y: Vec<f64>,
    pub iterations_to_threshold: Option<usize>,
    /// Suggestions that fell outside the box.
    pub outside_box: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOptimum {
    pub trial: usize,
    pub x: Vec<f64>,
    pub y: f64,
    pub threshold: f64,
    pub starts: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub strategies: Vec<Strategy>,
    pub iterations: usize,
    pub trials: usize,
    pub relative_threshold: f64,
    pub optima: Vec<TrialOptimum>,
    /// Ordered by strategy (config order), then trial.
    pub curves: Vec<Curve>,
}

impl BenchReport {
    pub fn curves_for(&self, s: Strategy) -> impl Iterator<Item = &Curve> {
        self.curves.iter().filter(move |c| c.strategy == s)
    }

    pub fn successes(&self, s: Strategy) -> usize {
        self.curves_for(s)
            .filter(|c| c.iterations_to_threshold.is_some())
            .count()
    }
}

/// Runs every strategy on `trials` independent family draws. Within a trial
/// all strategies share the family, start points and observation noise.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let per_trial: Vec<(TrialOptimum, Vec<Curve>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, t))
        .collect::<Result<_, _>>()?;

    let mut optima = Vec::with_capacity(cfg.trials);
    let mut by_trial = Vec::with_capacity(cfg.trials);
    for (o, c) in per_trial {
        optima.push(o);
        by_trial.push(c);
    }
    let mut curves = Vec::with_capacity(cfg.trials * cfg.strategies.len());
    for si in 0..cfg.strategies.len() {
        for c in &by_trial {
            curves.push(c[si].clone());
        }
    }
    Ok(BenchReport {
        strategies: cfg.strategies.clone(),
        iterations: cfg.iterations,
        trials: cfg.trials,
        relative_threshold: cfg.threshold,
        optima,
        curves,
    })
}

struct Trial<'a> {
    cfg: &'a BenchConfig,
    index: usize,
    family: Family,
    starts: [Vec<f64>; 2],
}

fn run_trial(cfg: &BenchConfig, index: usize) -> Result<(TrialOptimum, Vec<Curve>), BenchError> {
    let spec = TaskFamilySpec {
        seed: derive_seed(cfg.seed ^ cfg.family.seed, "family", index as u64),
        ..cfg.family.clone()
    };
    let family = generate_family(&spec)?;
    let bounds = &family.target.bounds;
    let last = &family.sources[family.sources.len() - 1];
    let x0 = bounds.clamp(&last.inputs()[last.argmin()]);
    let x1 = vicinity_point(&x0, bounds);
    let threshold = family.optimum_y + cfg.threshold * family.optimum_y.abs();
    let trial = Trial {
        cfg,
        index,
        starts: [x0, x1],
        family,
    };

    let mut curves = Vec::with_capacity(cfg.strategies.len());
    for &s in &cfg.strategies {
        let (values, outside_box) = trial.run(s).map_err(|source| BenchError::Strategy {
            trial: index,
            strategy: s,
            source,
        })?;
        let mut best_y = Vec::with_capacity(cfg.iterations);
        let mut best = values[0].min(values[1]);
        for v in &values[2..] {
            best = best.min(*v);
            best_y.push(best);
        }
        let iterations_to_threshold = best_y.iter().position(|b| *b <= threshold).map(|k| k + 1);
        curves.push(Curve {
            strategy: s,
            trial: index,
            best_y,
            iterations_to_threshold,
            outside_box,
        });
    }
    Ok((
        TrialOptimum {
            trial: index,
            x: trial.family.optimum_x.clone(),
            y: trial.family.optimum_y,
            threshold,
            starts: trial.starts.clone(),
        },
        curves,
    ))
}

type StrategyResult = Result<(Vec<f64>, usize), Box<dyn std::error::Error + Send + Sync>>;

impl Trial<'_> {
    fn seed(&self, stream: &str) -> u64 {
        derive_seed(self.cfg.seed, stream, self.index as u64)
    }

    /// Noise stream shared by all strategies of the trial.
    fn observer(&self) -> impl FnMut(&[f64]) -> (f64, f64) + '_ {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed("observation-noise"));
        let std = self.family_noise();
        let normal = Normal::new(0.0, std).expect("finite std");
        move |x: &[f64]| {
            let truth = self.family.target.eval(x);
            let e = if std > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            (truth, truth + e)
        }
    }

    fn family_noise(&self) -> f64 {
        self.cfg.family.noise_std
    }

    fn run(&self, s: Strategy) -> StrategyResult {
        match s {
            Strategy::Random => self.run_random(),
            Strategy::VanillaBo => self.run_vanilla_bo(),
            Strategy::VanillaRgpe => self.run_session(Normalization::MinMax, None),
            Strategy::Ours => self.run_session(Normalization::OptimumCentered, self.cfg.schedule),
        }
    }

    fn run_random(&self) -> StrategyResult {
        let bounds = &self.family.target.bounds;
        let mut observe = self.observer();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed("random"));
        let mut values: Vec<f64> = self.starts.iter().map(|x| observe(x).0).collect();
        for _ in 0..self.cfg.iterations {
            let u: Vec<f64> = (0..bounds.dim()).map(|_| rng.random::<f64>()).collect();
            values.push(observe(&bounds.from_unit(&u)).0);
        }
        Ok((values, 0))
    }

    fn run_vanilla_bo(&self) -> StrategyResult {
        let bounds = &self.family.target.bounds;
        let dim = bounds.dim();
        let mut observe = self.observer();
        let mut xs: Vec<Vec<f64>> = Vec::new();
        let mut ys = Vec::new();
        let mut values = Vec::new();
        for x in &self.starts {
            let (truth, y) = observe(x);
            xs.push(x.clone());
            ys.push(y);
            values.push(truth);
        }
        let mut outside = 0;
        for it in 0..self.cfg.iterations {
            let stream = (self.index as u64) << 32 | it as u64;
            let ds = TaskDataset::new("target", xs.clone(), ys.clone())?;
            let (nd, tr) = box_normalize(&ds, bounds)?;
            let (xm, ym) = (nd.input_matrix(), nd.output_vector());
            let fitted = if nd.len() >= crate::session::MIN_POINTS_FOR_TARGET_FIT {
                let fit_cfg = FitConfig {
                    seed: derive_seed(self.cfg.seed, "bo-fit", stream),
                    ..self.cfg.fit.clone()
                };
                fit_hyperparameters(&xm, &ym, self.cfg.kernel, &fit_cfg).ok()
            } else {
                None
            };
            let (kernel, noise) = match fitted {
                Some(f) => (f.kernel, f.noise_variance),
                None => (self.cfg.kernel.instantiate(dim, 1.0, 0.3), 1e-4),
            };
            let gp = GpModel::condition(&xm, &ym, kernel, noise)?;
            let opt = OptimizerConfig {
                exploration: VANILLA_BO_KAPPA,
                seed: derive_seed(self.cfg.seed, "bo-optimizer", stream),
                ..self.cfg.optimizer.clone()
            };
            let m = minimize_surrogate(
                |z| gp.predict_point(z, true),
                bounds,
                &tr,
                &opt,
                None,
                nd.inputs(),
            )?;
            if !bounds.contains(&m.x) {
                outside += 1;
            }
            let (truth, y) = observe(&m.x);
            xs.push(m.x);
            ys.push(y);
            values.push(truth);
        }
        Ok((values, outside))
    }

    fn run_session(&self, normalization: Normalization, schedule: Option<Schedule>) -> StrategyResult {
        let cfg = SessionConfig {
            bounds: self.family.target.bounds.clone(),
            kernel: self.cfg.kernel,
            fit: self.cfg.fit.clone(),
            schedule,
            normalization,
            optimizer: self.cfg.optimizer.clone(),
            weight_samples: self.cfg.weight_samples,
            seed: self.seed("session"),
            stop: StopRule {
                max_iterations: self.cfg.iterations,
                quality_threshold: None,
            },
            start: StartRule::Fixed {
                x: self.starts[0].clone(),
            },
        };
        let mut session = Session::create(self.family.sources.clone(), cfg)?;
        let mut observe = self.observer();
        let mut values = Vec::new();
        for x in &self.starts {
            let (truth, y) = observe(x);
            session.tell(x, Some(y), false)?;
            values.push(truth);
        }
        let mut outside = 0;
        for _ in 0..self.cfg.iterations {
            let s = session.ask()?;
            if !session.config().bounds.contains(&s.x) {
                outside += 1;
            }
            let (truth, y) = observe(&s.x);
            session.tell(&s.x, Some(y), false)?;
            values.push(truth);
        }
        Ok((values, outside))
    }
}
