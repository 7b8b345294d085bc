//! Exact Gaussian process regression.
//!
//! A [`GpModel`] is built once by [`GpModel::condition`] and never mutated
//! afterwards, so it can be shared freely between threads.

mod fit;
mod kernel;

pub use fit::{fit_hyperparameters, FitBounds, FitConfig, FitResult};
pub use kernel::{KernelFamily, KernelSpec, Stationary};

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub(crate) use kernel::rows_of;

/// Smallest and largest jitter, relative to `trace(K) / N`, tried when the
/// kernel matrix fails to factorize.
pub const JITTER_START: f64 = 1e-10;
pub const JITTER_MAX: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("need at least {needed} training points, found {found}")]
    TooFewPoints { needed: usize, found: usize },
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("noise variance must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("non-finite training data")]
    NonFinite,
    #[error("duplicate training inputs with zero noise make the kernel matrix singular")]
    DuplicateInputs,
    #[error(
        "kernel matrix is not positive definite even with jitter up to {max_jitter:.3e} \
         (jitter policy: 1e-10·trace(K)/N, escalated ×10 up to 1e-4·trace(K)/N)"
    )]
    NotPositiveDefinite { max_jitter: f64 },
}

/// Posterior marginals at a set of query points, optionally with the full
/// covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

/// A Gaussian process conditioned on training data.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    noise_variance: f64,
    jitter: f64,
    prior_mean: f64,
    train_inputs: DMatrix<f64>,
    train_rows: Vec<Vec<f64>>,
    train_targets: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Conditions a zero-mean GP on `(inputs, targets)`; rows of `inputs` are
    /// observations.
    pub fn condition(
        inputs: &DMatrix<f64>,
        targets: &DVector<f64>,
        kernel: KernelSpec,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        Self::condition_with_mean(inputs, targets, kernel, noise_variance, 0.0)
    }

    pub fn condition_with_mean(
        inputs: &DMatrix<f64>,
        targets: &DVector<f64>,
        kernel: KernelSpec,
        noise_variance: f64,
        prior_mean: f64,
    ) -> Result<Self, GpError> {
        kernel.validate()?;
        let n = inputs.nrows();
        if n == 0 {
            return Err(GpError::TooFewPoints { needed: 1, found: 0 });
        }
        if targets.len() != n {
            return Err(GpError::DimensionMismatch {
                expected: n,
                found: targets.len(),
            });
        }
        if inputs.ncols() != kernel.dim() {
            return Err(GpError::DimensionMismatch {
                expected: kernel.dim(),
                found: inputs.ncols(),
            });
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(GpError::InvalidNoise(noise_variance));
        }
        if inputs.iter().chain(targets.iter()).any(|v| !v.is_finite()) || !prior_mean.is_finite()
        {
            return Err(GpError::NonFinite);
        }
        let train_rows = rows_of(inputs);
        if noise_variance == 0.0 && has_duplicate_rows(&train_rows) {
            return Err(GpError::DuplicateInputs);
        }

        let mut k = kernel.matrix(inputs);
        for i in 0..n {
            k[(i, i)] += noise_variance;
        }
        let (factor, jitter) = factorize_with_jitter(k)?;
        let residual = targets.add_scalar(-prior_mean);
        let alpha = factor.solve(&residual);

        Ok(Self {
            kernel,
            noise_variance,
            jitter,
            prior_mean,
            train_inputs: inputs.clone(),
            train_rows,
            train_targets: targets.clone(),
            factor,
            alpha,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Jitter that had to be added to the diagonal (0 when none was needed).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn train_inputs(&self) -> &DMatrix<f64> {
        &self.train_inputs
    }

    pub fn train_targets(&self) -> &DVector<f64> {
        &self.train_targets
    }

    pub fn n_train(&self) -> usize {
        self.train_rows.len()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    /// Lower-triangular factor `L` with `L Lᵀ = K + (σ_n² + jitter) I`.
    pub fn factor(&self) -> DMatrix<f64> {
        self.factor.l()
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Posterior at the rows of `queries`.
    pub fn predict(&self, queries: &DMatrix<f64>, full_cov: bool) -> Result<Posterior, GpError> {
        if queries.ncols() != self.dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.dim(),
                found: queries.ncols(),
            });
        }
        let k_star = self.kernel.cross(&self.train_inputs, queries);
        let mean = (k_star.transpose() * &self.alpha).add_scalar(self.prior_mean);
        let v = self
            .factor
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has a positive diagonal");
        let query_rows = rows_of(queries);
        let variance = DVector::from_iterator(
            query_rows.len(),
            query_rows.iter().enumerate().map(|(j, q)| {
                let prior = self.kernel.eval_unchecked(q, q);
                clamp_variance(prior - v.column(j).norm_squared())
            }),
        );
        let covariance = full_cov.then(|| {
            let mut c = self.kernel.cross(queries, queries) - v.transpose() * &v;
            for i in 0..c.nrows() {
                c[(i, i)] = clamp_variance(c[(i, i)]);
            }
            c
        });
        Ok(Posterior {
            mean,
            variance,
            covariance,
        })
    }

    /// Mean and (optionally) variance at a single point without building
    /// query matrices. Returns variance 0 when `with_variance` is false.
    pub fn predict_point(&self, x: &[f64], with_variance: bool) -> (f64, f64) {
        debug_assert_eq!(x.len(), self.dim());
        let k_star = DVector::from_iterator(
            self.train_rows.len(),
            self.train_rows
                .iter()
                .map(|r| self.kernel.eval_unchecked(r, x)),
        );
        let mean = self.prior_mean + k_star.dot(&self.alpha);
        if !with_variance {
            return (mean, 0.0);
        }
        let v = self
            .factor
            .l_dirty()
            .solve_lower_triangular(&k_star)
            .expect("cholesky factor has a positive diagonal");
        let var = self.kernel.eval_unchecked(x, x) - v.norm_squared();
        (mean, clamp_variance(var))
    }

    /// Log marginal likelihood and its gradient with respect to the
    /// log-hyperparameters `[kernel log-params.., log σ_n²]`.
    pub fn log_marginal_likelihood(&self) -> (f64, Vec<f64>) {
        let n = self.n_train();
        let residual = self.train_targets.add_scalar(-self.prior_mean);
        let l = self.factor.l_dirty();
        let half_log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        let value =
            -0.5 * residual.dot(&self.alpha) - half_log_det - 0.5 * n as f64 * (2.0 * PI).ln();

        // ∂L/∂θ = ½ tr((ααᵀ − K⁻¹) ∂K/∂θ)
        let k_inv = self.factor.inverse();
        let w = &self.alpha * self.alpha.transpose() - k_inv;
        let n_kernel = self.kernel.n_params();
        let mut grad = vec![0.0; n_kernel + 1];
        for a in 0..n {
            for b in 0..=a {
                let scale = if a == b { 0.5 } else { 1.0 } * w[(a, b)];
                self.kernel.accumulate_log_grad(
                    &self.train_rows[a],
                    &self.train_rows[b],
                    scale,
                    &mut grad[..n_kernel],
                );
            }
        }
        grad[n_kernel] = 0.5 * w.trace() * self.noise_variance;
        (value, grad)
    }

    /// Leave-one-out posterior at every training input: entry `i` is the
    /// prediction at `x_i` of the model conditioned on all points but `i`.
    pub fn loo_predictions(&self) -> Result<Posterior, GpError> {
        let n = self.n_train();
        if n < 2 {
            return Err(GpError::TooFewPoints { needed: 2, found: n });
        }
        let k_inv = self.factor.inverse();
        let noise = self.noise_variance + self.jitter;
        let mut mean = DVector::zeros(n);
        let mut variance = DVector::zeros(n);
        for i in 0..n {
            let d = k_inv[(i, i)];
            mean[i] = self.train_targets[i] - self.alpha[i] / d;
            variance[i] = clamp_variance(1.0 / d - noise);
        }
        Ok(Posterior {
            mean,
            variance,
            covariance: None,
        })
    }
}

fn clamp_variance(v: f64) -> f64 {
    debug_assert!(v >= -1e-6, "strongly negative posterior variance {v}");
    v.max(0.0)
}

fn has_duplicate_rows(rows: &[Vec<f64>]) -> bool {
    rows.iter()
        .enumerate()
        .any(|(i, a)| rows[..i].iter().any(|b| a == b))
}

/// Cholesky factorization of a symmetric matrix, escalating a diagonal
/// jitter from `JITTER_START·trace/N` by ×10 up to `JITTER_MAX·trace/N`.
pub(crate) fn factorize_with_jitter(
    k: DMatrix<f64>,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let n = k.nrows();
    if let Some(c) = Cholesky::new(k.clone()) {
        return Ok((c, 0.0));
    }
    let base = (k.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * base;
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Ok((c, jitter));
        }
        rel *= 10.0;
    }
    Err(GpError::NotPositiveDefinite {
        max_jitter: JITTER_MAX * base,
    })
}
