//! Synthetic task families: affine variants of a base function with a known
//! optimum, plus a benchmark runner comparing optimization strategies.

mod report;
mod runner;

pub use report::{emit_report, write_curves_csv, ReportError, StrategySummary, Summary};
pub use runner::{
    run_benchmark, BenchConfig, BenchError, BenchReport, Curve, Strategy, TrialOptimum,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::acquisition::{minimize_surrogate, OptimizerConfig};
use crate::bounds::ParamBox;
use crate::transform::{NormTransform, TaskDataset};

#[derive(Debug, Error, PartialEq)]
pub enum FamilyError {
    #[error("invalid family spec: {0}")]
    Invalid(String),
}

/// Base functions on the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaseFunction {
    /// Anisotropic quadratic with minimum 0 at the cube center.
    QuadraticValley { dim: usize },
    /// Branin on `[-5, 10] x [0, 15]`, three global minima of value 0.397887.
    Branin2d,
    /// Cosine ripples under a Gaussian envelope, minimum 0 at 0.5.
    DampedCosine1d,
}

impl BaseFunction {
    pub fn dim(&self) -> usize {
        match self {
            BaseFunction::QuadraticValley { dim } => *dim,
            BaseFunction::Branin2d => 2,
            BaseFunction::DampedCosine1d => 1,
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            BaseFunction::QuadraticValley { .. } => u
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 { 1.0 } else { 4.0 } * (v - 0.5).powi(2))
                .sum(),
            BaseFunction::Branin2d => {
                let x = -5.0 + 15.0 * u[0];
                let y = 15.0 * u[1];
                let b = 5.1 / (4.0 * PI * PI);
                let c = 5.0 / PI;
                let t = 1.0 / (8.0 * PI);
                (y - b * x * x + c * x - 6.0).powi(2) + 10.0 * (1.0 - t) * x.cos() + 10.0
            }
            BaseFunction::DampedCosine1d => {
                let d = u[0] - 0.5;
                1.0 - (6.0 * PI * d).cos() * (-(d / 0.25).powi(2)).exp()
            }
        }
    }
}

/// `f(x) = a · base(c + (u − c − s) / r) + b`, with `u` the unit-cube
/// coordinates of `x` and `c` the cube center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub output_scale: f64,
    pub output_offset: f64,
    /// Fraction of the box width, per dimension.
    pub input_shift: Vec<f64>,
    pub input_scale: f64,
}

impl AffineTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            output_scale: 1.0,
            output_offset: 0.0,
            input_shift: vec![0.0; dim],
            input_scale: 1.0,
        }
    }

    fn validate(&self, dim: usize) -> Result<(), FamilyError> {
        let ok = self.output_scale > 0.0
            && self.input_scale > 0.0
            && self.output_offset.is_finite()
            && self.output_scale.is_finite()
            && self.input_scale.is_finite()
            && self.input_shift.len() == dim
            && self.input_shift.iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(FamilyError::Invalid(format!(
                "transform needs a, r > 0 and a {dim}-dimensional shift"
            )))
        }
    }
}

/// Sampling interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl Range {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.1 > self.0 {
            rng.random_range(self.0..=self.1)
        } else {
            self.0
        }
    }

    fn valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.0 <= self.1
    }
}

/// Ranges from which per-task transforms are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformRanges {
    pub output_scale: Range,
    pub output_offset: Range,
    /// Shift shared by all tasks of one family draw.
    pub common_shift: Range,
    /// Additional per-task shift.
    pub task_shift: Range,
    pub input_scale: Range,
}

impl Default for TransformRanges {
    fn default() -> Self {
        Self {
            output_scale: Range(0.5, 2.0),
            output_offset: Range(0.5, 2.0),
            common_shift: Range(-0.25, 0.25),
            task_shift: Range(-0.1, 0.1),
            input_scale: Range(0.8, 1.25),
        }
    }
}

fn default_family_base() -> BaseFunction {
    BaseFunction::QuadraticValley { dim: 2 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFamilySpec {
    #[serde(default = "default_family_base")]
    pub base: BaseFunction,
    /// Defaults to the unit cube.
    #[serde(default, rename = "box")]
    pub bounds: Option<ParamBox>,
    #[serde(default = "default_n_sources")]
    pub n_sources: usize,
    #[serde(default)]
    pub ranges: TransformRanges,
    /// Fixed transforms, sources first and the target last; overrides `ranges`.
    #[serde(default)]
    pub transforms: Option<Vec<AffineTransform>>,
    #[serde(default)]
    pub noise_std: f64,
    /// Inclusive range of observations per source task.
    #[serde(default = "default_samples")]
    pub samples: (usize, usize),
    /// Jitter of grid samples as a fraction of the grid spacing.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_n_sources() -> usize {
    5
}

fn default_samples() -> (usize, usize) {
    (20, 120)
}

fn default_jitter() -> f64 {
    0.5
}

impl TaskFamilySpec {
    pub fn new(base: BaseFunction) -> Self {
        Self {
            base,
            bounds: None,
            n_sources: default_n_sources(),
            ranges: TransformRanges::default(),
            transforms: None,
            noise_std: 0.0,
            samples: default_samples(),
            jitter: default_jitter(),
            seed: 0,
        }
    }

    pub fn bounds(&self) -> ParamBox {
        self.bounds
            .clone()
            .unwrap_or_else(|| ParamBox::unit(self.base.dim()))
    }

    pub fn validate(&self) -> Result<(), FamilyError> {
        let dim = self.base.dim();
        if dim == 0 {
            return Err(FamilyError::Invalid("dimension must be ≥ 1".into()));
        }
        if self.bounds().dim() != dim {
            return Err(FamilyError::Invalid("box dimension differs from base".into()));
        }
        if self.n_sources == 0 {
            return Err(FamilyError::Invalid("need at least one source task".into()));
        }
        if self.samples.0 < 2 || self.samples.0 > self.samples.1 {
            return Err(FamilyError::Invalid("samples must satisfy 2 ≤ min ≤ max".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(FamilyError::Invalid("noise_std must be ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return Err(FamilyError::Invalid("jitter must lie in [0, 1]".into()));
        }
        let r = &self.ranges;
        let ranges = [r.output_scale, r.output_offset, r.common_shift, r.task_shift, r.input_scale];
        if !ranges.iter().all(Range::valid) || r.output_scale.0 <= 0.0 || r.input_scale.0 <= 0.0 {
            return Err(FamilyError::Invalid("bad transform ranges".into()));
        }
        if let Some(ts) = &self.transforms {
            if ts.len() != self.n_sources + 1 {
                return Err(FamilyError::Invalid(format!(
                    "expected {} transforms (sources then target), got {}",
                    self.n_sources + 1,
                    ts.len()
                )));
            }
            for t in ts {
                t.validate(dim)?;
            }
        }
        Ok(())
    }
}

/// One member of a family as a black-box function on physical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFunction {
    pub base: BaseFunction,
    pub transform: AffineTransform,
    #[serde(rename = "box")]
    pub bounds: ParamBox,
}

impl TaskFunction {
    /// Noise-free value.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let t = &self.transform;
        let u: Vec<f64> = x
            .iter()
            .zip(self.bounds.lower())
            .zip(self.bounds.widths())
            .zip(&t.input_shift)
            .map(|(((v, lo), w), s)| {
                let u = (v - lo) / w;
                0.5 + (u - 0.5 - s) / t.input_scale
            })
            .collect();
        t.output_scale * self.base.eval(&u) + t.output_offset
    }

    /// Global minimum by dense grid search plus local refinement.
    pub fn true_optimum(&self) -> (Vec<f64>, f64) {
        let dim = self.bounds.dim();
        let unit = NormTransform {
            input_shift: self.bounds.lower().to_vec(),
            input_scale: self.bounds.widths(),
            output_mean: 0.0,
            output_std: 1.0,
            floored_dims: Vec::new(),
            std_floored: false,
        };
        let cfg = OptimizerConfig {
            restarts: 16,
            grid_density: ((1u64 << 16) as f64).powf(1.0 / dim as f64).floor() as usize,
            max_iterations: 500,
            ..OptimizerConfig::default()
        };
        let m = minimize_surrogate(
            |z| (self.eval(&unit.invert_input(z)), 0.0),
            &self.bounds,
            &unit,
            &cfg,
            None,
            &[],
        )
        .expect("a finite function has a finite minimum");
        let y = self.eval(&m.x);
        (m.x, y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub sources: Vec<TaskDataset>,
    pub target: TaskFunction,
    pub optimum_x: Vec<f64>,
    pub optimum_y: f64,
}

/// Draws a family: source datasets on jittered grids and a held-out target.
pub fn generate_family(spec: &TaskFamilySpec) -> Result<Family, FamilyError> {
    spec.validate()?;
    let dim = spec.base.dim();
    let bounds = spec.bounds();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let transforms = match &spec.transforms {
        Some(ts) => ts.clone(),
        None => {
            let r = &spec.ranges;
            let common: Vec<f64> = (0..dim).map(|_| r.common_shift.sample(&mut rng)).collect();
            (0..=spec.n_sources)
                .map(|_| AffineTransform {
                    output_scale: r.output_scale.sample(&mut rng),
                    output_offset: r.output_offset.sample(&mut rng),
                    input_shift: common
                        .iter()
                        .map(|c| c + r.task_shift.sample(&mut rng))
                        .collect(),
                    input_scale: r.input_scale.sample(&mut rng),
                })
                .collect()
        }
    };
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).expect("finite std");

    let mut sources = Vec::with_capacity(spec.n_sources);
    for (m, t) in transforms[..spec.n_sources].iter().enumerate() {
        let f = TaskFunction {
            base: spec.base,
            transform: t.clone(),
            bounds: bounds.clone(),
        };
        let n = rng.random_range(spec.samples.0..=spec.samples.1);
        let inputs = jittered_grid(n, &bounds, spec.jitter, &mut rng);
        let outputs = inputs
            .iter()
            .map(|x| {
                let e = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                f.eval(x) + e
            })
            .collect();
        sources.push(
            TaskDataset::new(format!("source_{m}"), inputs, outputs)
                .expect("grid samples are finite"),
        );
    }

    let target = TaskFunction {
        base: spec.base,
        transform: transforms[spec.n_sources].clone(),
        bounds,
    };
    let (optimum_x, optimum_y) = target.true_optimum();
    Ok(Family {
        sources,
        target,
        optimum_x,
        optimum_y,
    })
}

/// `n` points drawn without replacement from a `k^dim` cell-centered grid
/// (`k` the smallest side holding `n` points), each jittered inside its cell.
fn jittered_grid(n: usize, bounds: &ParamBox, jitter: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let dim = bounds.dim();
    let mut k = 1usize;
    while k.pow(dim as u32) < n {
        k += 1;
    }
    let total = k.pow(dim as u32);
    let cells = rand::seq::index::sample(rng, total, n).into_vec();
    let mut cells = cells;
    cells.sort_unstable();
    cells
        .into_iter()
        .map(|mut c| {
            let u: Vec<f64> = (0..dim)
                .map(|_| {
                    let i = c % k;
                    c /= k;
                    let off = if jitter > 0.0 {
                        rng.random_range(-0.5..=0.5) * jitter
                    } else {
                        0.0
                    };
                    ((i as f64 + 0.5 + off) / k as f64).clamp(0.0, 1.0)
                })
                .collect();
            bounds.from_unit(&u)
        })
        .collect()
}
