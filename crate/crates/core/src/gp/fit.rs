//! Multi-start maximization of the log marginal likelihood.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GpError, GpModel, KernelFamily, KernelSpec};

/// Box bounds on the hyperparameters, in natural (not log) units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitBounds {
    pub signal_variance: (f64, f64),
    pub length_scale: (f64, f64),
    pub noise_variance: (f64, f64),
}

// Sized for standardized outputs and inputs scaled to roughly unit range.
impl Default for FitBounds {
    fn default() -> Self {
        Self {
            signal_variance: (1e-6, 10.0),
            length_scale: (1e-3, 100.0),
            noise_variance: (1e-6, 10.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub starts: usize,
    pub max_steps: usize,
    /// Converged once the projected gradient ∞-norm drops below this.
    pub grad_tol: f64,
    /// Initialization ranges, sampled log-uniformly.
    pub init_length_scale: (f64, f64),
    pub init_signal_variance: (f64, f64),
    pub init_noise_variance: (f64, f64),
    pub bounds: FitBounds,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            max_steps: 200,
            grad_tol: 1e-5,
            init_length_scale: (0.1, 2.0),
            init_signal_variance: (0.1, 5.0),
            init_noise_variance: (1e-6, 0.1),
            bounds: FitBounds::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub kernel: KernelSpec,
    pub noise_variance: f64,
    pub log_marginal_likelihood: f64,
    /// False when no start reached the gradient tolerance; the best point
    /// evaluated is returned regardless.
    pub converged: bool,
}

/// Fits kernel hyperparameters and noise of the given family to `(x, y)`.
pub fn fit_hyperparameters(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    family: KernelFamily,
    cfg: &FitConfig,
) -> Result<FitResult, GpError> {
    let n = x.nrows();
    if n < 2 {
        return Err(GpError::TooFewPoints { needed: 2, found: n });
    }
    if y.len() != n {
        return Err(GpError::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    let dim = x.ncols();
    let template = family.instantiate(dim, 1.0, 1.0);
    let (lower, upper) = log_bounds(&template, &cfg.bounds);
    let objective = Objective { x, y, template: &template };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut any_converged = false;
    let mut last_err = None;

    for _ in 0..cfg.starts.max(1) {
        let init = initial_point(&template, family, cfg, &mut rng);
        let init = clamp(&init, &lower, &upper);
        match ascend(&objective, init, &lower, &upper, cfg) {
            Ok((value, params, converged)) => {
                any_converged |= converged;
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, params));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }

    let (value, params) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or(GpError::NonFinite)),
    };
    let k = template.n_params();
    Ok(FitResult {
        kernel: template.with_log_params(&params[..k]),
        noise_variance: params[k].exp(),
        log_marginal_likelihood: value,
        converged: any_converged,
    })
}

struct Objective<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    template: &'a KernelSpec,
}

impl Objective<'_> {
    fn eval(&self, params: &[f64]) -> Result<(f64, Vec<f64>), GpError> {
        let k = self.template.n_params();
        let kernel = self.template.with_log_params(&params[..k]);
        let model = GpModel::condition(self.x, self.y, kernel, params[k].exp())?;
        let (v, g) = model.log_marginal_likelihood();
        if !v.is_finite() || g.iter().any(|g| !g.is_finite()) {
            return Err(GpError::NonFinite);
        }
        Ok((v, g))
    }
}

fn log_bounds(template: &KernelSpec, b: &FitBounds) -> (Vec<f64>, Vec<f64>) {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    let dim = template.dim();
    let terms = match template {
        KernelSpec::Sum { terms } => terms.len(),
        _ => 1,
    };
    for _ in 0..terms {
        lo.push(b.signal_variance.0.ln());
        hi.push(b.signal_variance.1.ln());
        for _ in 0..dim {
            lo.push(b.length_scale.0.ln());
            hi.push(b.length_scale.1.ln());
        }
    }
    lo.push(b.noise_variance.0.ln());
    hi.push(b.noise_variance.1.ln());
    (lo, hi)
}

fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo.ln()..=hi.ln())
}

fn initial_point(
    template: &KernelSpec,
    family: KernelFamily,
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let dim = template.dim();
    let mut p = Vec::with_capacity(template.n_params() + 1);
    for _ in 0..family.n_terms() {
        p.push(log_uniform(rng, cfg.init_signal_variance));
        for _ in 0..dim {
            p.push(log_uniform(rng, cfg.init_length_scale));
        }
    }
    p.push(log_uniform(rng, cfg.init_noise_variance));
    p
}

fn clamp(p: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect()
}

/// Gradient components that could still move the point inside the bounds.
fn projected_gradient(p: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((v, g), (l, h))| {
            if (*v <= *l && *g < 0.0) || (*v >= *h && *g > 0.0) {
                0.0
            } else {
                *g
            }
        })
        .collect()
}

/// Projected gradient ascent with Barzilai–Borwein steps and an Armijo
/// backtracking safeguard. Returns `(value, params, converged)`.
fn ascend(
    obj: &Objective<'_>,
    start: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    cfg: &FitConfig,
) -> Result<(f64, Vec<f64>, bool), GpError> {
    let (mut f, mut g) = obj.eval(&start)?;
    let mut p = start;
    let mut step = 0.1 / g.iter().fold(1e-12f64, |m, v| m.max(v.abs())).max(1.0);

    for _ in 0..cfg.max_steps {
        let pg = projected_gradient(&p, &g, lo, hi);
        if pg.iter().all(|v| v.abs() < cfg.grad_tol) {
            return Ok((f, p, true));
        }
        let mut t = step;
        let mut accepted = None;
        while t > 1e-14 {
            let trial: Vec<f64> = p.iter().zip(&g).map(|(v, g)| v + t * g).collect();
            let trial = clamp(&trial, lo, hi);
            let ascent: f64 = trial.iter().zip(&p).zip(&g).map(|((a, b), g)| (a - b) * g).sum();
            if let Ok((ft, gt)) = obj.eval(&trial) {
                if ft >= f + 1e-4 * ascent && ft.is_finite() {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((np, nf, ng)) = accepted else {
            // No ascent direction left within numerical precision.
            return Ok((f, p, false));
        };
        let s: Vec<f64> = np.iter().zip(&p).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| b - a).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        step = if sy > 1e-300 { (ss / sy).clamp(1e-8, 1e3) } else { (t * 2.0).min(1e3) };
        p = np;
        f = nf;
        g = ng;
    }
    let pg = projected_gradient(&p, &g, lo, hi);
    let converged = pg.iter().all(|v| v.abs() < cfg.grad_tol);
    Ok((f, p, converged))
}
