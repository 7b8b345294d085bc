//! Box-constrained minimization of a surrogate `mean − κ·std + λ·g(x)`.
//!
//! Seeds come from a coarse grid (its best point) and a randomly shifted
//! Halton sequence; each seed is refined by projected gradient descent with
//! central-difference gradients. Work happens in normalized coordinates, the
//! penalty `g` sees physical units.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::ParamBox;
use crate::transform::NormTransform;

/// Two points closer than this (∞-norm, normalized units) are duplicates.
pub const DUPLICATE_TOL: f64 = 1e-6;

const MAX_GRID_POINTS: usize = 4096;
const PRIMES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("objective was non-finite at every candidate")]
    NoFiniteCandidate,
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("box has dimension {0} but transform has {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Weight λ ≥ 0 of the soft-constraint penalty.
    pub penalty_weight: f64,
    pub restarts: usize,
    /// Grid points per dimension for the seed scan (total capped at 4096).
    pub grid_density: usize,
    /// Lower-confidence-bound coefficient κ ≥ 0; 0 minimizes the mean.
    pub exploration: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            penalty_weight: 0.0,
            restarts: 32,
            grid_density: 6,
            exploration: 0.0,
            max_iterations: 200,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        if self.restarts < 1 {
            return Err(OptimizeError::InvalidConfig("restarts must be ≥ 1".into()));
        }
        if self.grid_density < 2 {
            return Err(OptimizeError::InvalidConfig("grid_density must be ≥ 2".into()));
        }
        if [self.penalty_weight, self.exploration].iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(OptimizeError::InvalidConfig(
                "penalty weight and exploration must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    /// Minimizer in physical units, inside the box.
    pub x: Vec<f64>,
    /// Minimizer in normalized units.
    pub normalized: Vec<f64>,
    /// Surrogate value `mean − κ·std + λ·g(x)` at the minimizer.
    pub value: f64,
}

/// Soft-constraint term `g(x)` on physical parameters.
pub type Penalty<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Minimizes `objective` (normalized `x̃ -> (mean, variance)`) over `bounds`.
///
/// `exclude` holds normalized points already evaluated; a minimizer within
/// [`DUPLICATE_TOL`] of one of them is replaced by the best distinct local
/// optimum, if any exists.
pub fn minimize_surrogate<F>(
    objective: F,
    bounds: &ParamBox,
    transform: &NormTransform,
    cfg: &OptimizerConfig,
    penalty: Option<Penalty<'_>>,
    exclude: &[Vec<f64>],
) -> Result<Minimum, OptimizeError>
where
    F: Fn(&[f64]) -> (f64, f64),
{
    cfg.validate()?;
    let dim = bounds.dim();
    if transform.dim() != dim {
        return Err(OptimizeError::DimensionMismatch(dim, transform.dim()));
    }
    let lo = transform.to_normalized(bounds.lower());
    let hi = transform.to_normalized(bounds.upper());

    let surrogate = |z: &[f64]| -> f64 {
        let (mean, var) = objective(z);
        let mut v = mean;
        if cfg.exploration > 0.0 {
            v -= cfg.exploration * var.max(0.0).sqrt();
        }
        if cfg.penalty_weight > 0.0 {
            if let Some(g) = penalty {
                v += cfg.penalty_weight * g(&bounds.clamp(&transform.invert_input(z)));
            }
        }
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let to_z = |u: &[f64]| -> Vec<f64> {
        u.iter()
            .zip(lo.iter().zip(&hi))
            .map(|(t, (l, h))| l + t * (h - l))
            .collect()
    };

    let mut seeds = Vec::with_capacity(cfg.restarts + 1);
    if let Some(g) = best_grid_point(&surrogate, &to_z, dim, cfg.grid_density) {
        seeds.push(g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    for i in 0..cfg.restarts {
        let u: Vec<f64> = (0..dim)
            .map(|d| (radical_inverse(i as u64 + 1, PRIMES[d % PRIMES.len()]) + shift[d]).fract())
            .collect();
        seeds.push(to_z(&u));
    }

    let mut candidates: Vec<(f64, Vec<f64>)> = seeds
        .into_iter()
        .filter_map(|s| {
            let fs = surrogate(&s);
            if !fs.is_finite() {
                return None;
            }
            let (z, fz) = local_descent(&surrogate, s, fs, &lo, &hi, cfg.max_iterations);
            Some((fz, z))
        })
        .collect();
    if candidates.is_empty() {
        return Err(OptimizeError::NoFiniteCandidate);
    }
    // Stable sort keeps seed order among equal values.
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0));

    let is_dup = |z: &[f64]| {
        exclude.iter().any(|e| {
            e.iter()
                .zip(z)
                .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL)
        })
    };
    let chosen = candidates
        .iter()
        .find(|(_, z)| !is_dup(z))
        .unwrap_or(&candidates[0]);

    let x = bounds.clamp(&transform.invert_input(&chosen.1));
    Ok(Minimum {
        x,
        normalized: chosen.1.clone(),
        value: chosen.0,
    })
}

/// Best point of a `density^dim` grid over the unit cube (density reduced
/// so the grid stays below [`MAX_GRID_POINTS`]).
fn best_grid_point(
    f: &impl Fn(&[f64]) -> f64,
    to_z: &impl Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    density: usize,
) -> Option<Vec<f64>> {
    let mut density = density;
    while density > 2 && density.checked_pow(dim as u32).is_none_or(|n| n > MAX_GRID_POINTS) {
        density -= 1;
    }
    let total = density.checked_pow(dim as u32).filter(|n| *n <= MAX_GRID_POINTS)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut u = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        for ud in u.iter_mut() {
            *ud = (rem % density) as f64 / (density - 1) as f64;
            rem /= density;
        }
        let z = to_z(&u);
        let v = f(&z);
        if v.is_finite() && best.as_ref().is_none_or(|(b, _)| v < *b) {
            best = Some((v, z));
        }
    }
    best.map(|(_, z)| z)
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    r
}

fn project(z: &mut [f64], lo: &[f64], hi: &[f64]) {
    for (v, (l, h)) in z.iter_mut().zip(lo.iter().zip(hi)) {
        *v = v.clamp(*l, *h);
    }
}

fn fd_gradient(f: &impl Fn(&[f64]) -> f64, z: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; z.len()];
    let mut probe = z.to_vec();
    for d in 0..z.len() {
        let h = 1e-6 * (hi[d] - lo[d]);
        let up = (z[d] + h).min(hi[d]);
        let dn = (z[d] - h).max(lo[d]);
        probe[d] = up;
        let fu = f(&probe);
        probe[d] = dn;
        let fd = f(&probe);
        probe[d] = z[d];
        g[d] = if fu.is_finite() && fd.is_finite() && up > dn {
            (fu - fd) / (up - dn)
        } else {
            0.0
        };
    }
    g
}

/// Projected gradient descent with Barzilai–Borwein steps and Armijo
/// backtracking. Never returns a point worse than `start`.
fn local_descent(
    f: &impl Fn(&[f64]) -> f64,
    start: Vec<f64>,
    f_start: f64,
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let width = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| h - l)
        .fold(0.0f64, f64::max);
    let mut z = start;
    let mut fz = f_start;
    let mut g = fd_gradient(f, &z, lo, hi);
    let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut step = if gmax > 0.0 { 0.1 * width / gmax } else { 0.0 };

    for _ in 0..max_iter {
        if step == 0.0 {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        while t * g.iter().fold(0.0f64, |m, v| m.max(v.abs())) > 1e-12 * width {
            let mut trial: Vec<f64> = z.iter().zip(&g).map(|(v, g)| v - t * g).collect();
            project(&mut trial, lo, hi);
            let decrease: f64 = z.iter().zip(&trial).zip(&g).map(|((a, b), g)| (a - b) * g).sum();
            if decrease <= 0.0 {
                break;
            }
            let ft = f(&trial);
            if ft <= fz - 1e-4 * decrease {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((nz, nf)) = accepted else { break };
        let ng = fd_gradient(f, &nz, lo, hi);
        let s: Vec<f64> = nz.iter().zip(&z).map(|(a, b)| a - b).collect();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let sy: f64 = s.iter().zip(ng.iter().zip(&g)).map(|(s, (a, b))| s * (a - b)).sum();
        let moved = ss.sqrt();
        z = nz;
        let improvement = fz - nf;
        fz = nf;
        g = ng;
        if moved < 1e-10 * width || improvement < 1e-14 * fz.abs().max(1e-300) {
            break;
        }
        step = if sy > 0.0 { ss / sy } else { 2.0 * t };
    }
    (z, fz)
}
