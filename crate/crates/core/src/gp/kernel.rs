//! Stationary covariance functions and their log-hyperparameter gradients.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::GpError;

const SQRT5: f64 = 2.236_067_977_499_79;

/// Signal variance and per-dimension length scales of one stationary kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stationary {
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
}

impl Stationary {
    pub fn new(signal_variance: f64, length_scales: Vec<f64>) -> Self {
        Self {
            signal_variance,
            length_scales,
        }
    }

    /// Scaled squared distance `Σ ((x_d - y_d) / l_d)²`.
    fn scaled_sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter()
            .zip(y)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let u = (a - b) / l;
                u * u
            })
            .sum()
    }
}

/// A covariance function over `n`-dimensional inputs.
///
/// `Sum` holds at least two non-`Sum` terms; see [`KernelSpec::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    SquaredExponential(Stationary),
    Matern52(Stationary),
    Sum { terms: Vec<KernelSpec> },
}

/// Kernel families a model can be fitted with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
    /// Squared exponential plus Matérn ν=5/2.
    #[default]
    SquaredExponentialPlusMatern52,
}

impl KernelFamily {
    /// A kernel of this family with every summand set to the given variance
    /// and isotropic length scale.
    pub fn instantiate(self, dim: usize, signal_variance: f64, length_scale: f64) -> KernelSpec {
        let term = || Stationary::new(signal_variance, vec![length_scale; dim]);
        match self {
            KernelFamily::SquaredExponential => KernelSpec::SquaredExponential(term()),
            KernelFamily::Matern52 => KernelSpec::Matern52(term()),
            KernelFamily::SquaredExponentialPlusMatern52 => KernelSpec::Sum {
                terms: vec![
                    KernelSpec::SquaredExponential(term()),
                    KernelSpec::Matern52(term()),
                ],
            },
        }
    }

    pub fn n_terms(self) -> usize {
        match self {
            KernelFamily::SquaredExponentialPlusMatern52 => 2,
            _ => 1,
        }
    }
}

impl KernelSpec {
    pub fn squared_exponential(signal_variance: f64, length_scales: Vec<f64>) -> Self {
        KernelSpec::SquaredExponential(Stationary::new(signal_variance, length_scales))
    }

    pub fn matern52(signal_variance: f64, length_scales: Vec<f64>) -> Self {
        KernelSpec::Matern52(Stationary::new(signal_variance, length_scales))
    }

    /// Checks positivity of all hyperparameters, consistent dimensions and
    /// the flat-sum rule.
    pub fn validate(&self) -> Result<(), GpError> {
        match self {
            KernelSpec::SquaredExponential(s) | KernelSpec::Matern52(s) => {
                if !(s.signal_variance > 0.0 && s.signal_variance.is_finite()) {
                    return Err(GpError::InvalidKernel(format!(
                        "signal variance must be positive, got {}",
                        s.signal_variance
                    )));
                }
                if s.length_scales.is_empty() {
                    return Err(GpError::InvalidKernel("no length scales".into()));
                }
                if let Some(l) = s
                    .length_scales
                    .iter()
                    .find(|l| !(**l > 0.0 && l.is_finite()))
                {
                    return Err(GpError::InvalidKernel(format!(
                        "length scales must be positive, got {l}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Sum { terms } => {
                if terms.len() < 2 {
                    return Err(GpError::InvalidKernel(
                        "a sum kernel needs at least two terms".into(),
                    ));
                }
                let dim = terms[0].dim();
                for t in terms {
                    if matches!(t, KernelSpec::Sum { .. }) {
                        return Err(GpError::InvalidKernel("nested sum kernel".into()));
                    }
                    t.validate()?;
                    if t.dim() != dim {
                        return Err(GpError::InvalidKernel(
                            "sum terms disagree on input dimension".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Input dimension, i.e. the number of length scales.
    pub fn dim(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential(s) | KernelSpec::Matern52(s) => s.length_scales.len(),
            KernelSpec::Sum { terms } => terms.first().map_or(0, KernelSpec::dim),
        }
    }

    /// `k(x, x)`, the sum of all signal variances.
    pub fn total_variance(&self) -> f64 {
        match self {
            KernelSpec::SquaredExponential(s) | KernelSpec::Matern52(s) => s.signal_variance,
            KernelSpec::Sum { terms } => terms.iter().map(KernelSpec::total_variance).sum(),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64, GpError> {
        let dim = self.dim();
        if x.len() != dim || y.len() != dim {
            return Err(GpError::DimensionMismatch {
                expected: dim,
                found: if x.len() != dim { x.len() } else { y.len() },
            });
        }
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::SquaredExponential(s) => {
                s.signal_variance * (-0.5 * s.scaled_sq_dist(x, y)).exp()
            }
            KernelSpec::Matern52(s) => {
                let r = s.scaled_sq_dist(x, y).sqrt();
                let sr = SQRT5 * r;
                s.signal_variance * (1.0 + sr + sr * sr / 3.0) * (-sr).exp()
            }
            KernelSpec::Sum { terms } => terms.iter().map(|t| t.eval_unchecked(x, y)).sum(),
        }
    }

    /// Number of kernel hyperparameters (excluding observation noise).
    pub fn n_params(&self) -> usize {
        match self {
            KernelSpec::SquaredExponential(s) | KernelSpec::Matern52(s) => 1 + s.length_scales.len(),
            KernelSpec::Sum { terms } => terms.iter().map(KernelSpec::n_params).sum(),
        }
    }

    /// Log-hyperparameters, laid out per term as `[log σ², log l_1, .., log l_n]`.
    pub fn log_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_log_params(&mut out);
        out
    }

    fn push_log_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::SquaredExponential(s) | KernelSpec::Matern52(s) => {
                out.push(s.signal_variance.ln());
                out.extend(s.length_scales.iter().map(|l| l.ln()));
            }
            KernelSpec::Sum { terms } => terms.iter().for_each(|t| t.push_log_params(out)),
        }
    }

    /// Same structure with hyperparameters replaced from a log-parameter slice.
    pub fn with_log_params(&self, params: &[f64]) -> KernelSpec {
        let mut pos = 0;
        let out = self.rebuild(params, &mut pos);
        debug_assert_eq!(pos, params.len());
        out
    }

    fn rebuild(&self, params: &[f64], pos: &mut usize) -> KernelSpec {
        let take = |s: &Stationary, pos: &mut usize| {
            let n = s.length_scales.len();
            let st = Stationary::new(
                params[*pos].exp(),
                params[*pos + 1..*pos + 1 + n].iter().map(|p| p.exp()).collect(),
            );
            *pos += 1 + n;
            st
        };
        match self {
            KernelSpec::SquaredExponential(s) => KernelSpec::SquaredExponential(take(s, pos)),
            KernelSpec::Matern52(s) => KernelSpec::Matern52(take(s, pos)),
            KernelSpec::Sum { terms } => KernelSpec::Sum {
                terms: terms.iter().map(|t| t.rebuild(params, pos)).collect(),
            },
        }
    }

    /// Adds `∂k(x, y)/∂θ` for every log-hyperparameter θ into `grad`.
    pub(crate) fn accumulate_log_grad(&self, x: &[f64], y: &[f64], scale: f64, grad: &mut [f64]) {
        match self {
            KernelSpec::SquaredExponential(s) => {
                let k = s.signal_variance * (-0.5 * s.scaled_sq_dist(x, y)).exp();
                grad[0] += scale * k;
                for (d, l) in s.length_scales.iter().enumerate() {
                    let u = (x[d] - y[d]) / l;
                    grad[1 + d] += scale * k * u * u;
                }
            }
            KernelSpec::Matern52(s) => {
                let r = s.scaled_sq_dist(x, y).sqrt();
                let sr = SQRT5 * r;
                let e = (-sr).exp();
                grad[0] += scale * s.signal_variance * (1.0 + sr + sr * sr / 3.0) * e;
                // dk/dlog l_d = σ² (5/3)(1 + √5 r) e^{-√5 r} u_d², finite at r = 0
                let common = s.signal_variance * (5.0 / 3.0) * (1.0 + sr) * e;
                for (d, l) in s.length_scales.iter().enumerate() {
                    let u = (x[d] - y[d]) / l;
                    grad[1 + d] += scale * common * u * u;
                }
            }
            KernelSpec::Sum { terms } => {
                let mut pos = 0;
                for t in terms {
                    let n = t.n_params();
                    t.accumulate_log_grad(x, y, scale, &mut grad[pos..pos + n]);
                    pos += n;
                }
            }
        }
    }

    /// Kernel matrix `K_ij = k(x_i, x_j)` over the rows of `x`.
    pub fn matrix(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = x.nrows();
        let rows = rows_of(x);
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(&rows[i], &rows[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Cross-covariance `K_ij = k(a_i, b_j)`.
    pub fn cross(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let ra = rows_of(a);
        let rb = rows_of(b);
        DMatrix::from_fn(ra.len(), rb.len(), |i, j| self.eval_unchecked(&ra[i], &rb[j]))
    }
}

pub(crate) fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows())
        .map(|i| x.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_exponential_values() {
        let k = KernelSpec::squared_exponential(1.0, vec![1.0]);
        assert_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 1.0);
        let v = k.eval(&[0.0], &[1.0]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn matern_at_zero_distance_is_variance() {
        let k = KernelSpec::matern52(2.0, vec![0.7, 1.3]);
        assert_eq!(k.eval(&[0.3, 0.1], &[0.3, 0.1]).unwrap(), 2.0);
    }

    #[test]
    fn matern_closed_form() {
        // r = 1: σ²(1 + √5 + 5/3) e^{-√5}
        let k = KernelSpec::matern52(1.0, vec![2.0]);
        let expected = (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        assert!((k.eval(&[0.0], &[2.0]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn symmetric_and_sum_variance() {
        let k = KernelFamily::SquaredExponentialPlusMatern52.instantiate(2, 1.5, 0.4);
        let a = [0.1, -0.3];
        let b = [0.7, 0.2];
        assert_eq!(k.eval(&a, &b).unwrap(), k.eval(&b, &a).unwrap());
        assert!((k.eval(&a, &a).unwrap() - 3.0).abs() < 1e-15);
        assert_eq!(k.total_variance(), 3.0);
    }

    #[test]
    fn dimension_mismatch() {
        let k = KernelSpec::squared_exponential(1.0, vec![1.0, 1.0]);
        assert!(matches!(
            k.eval(&[0.0], &[0.0, 1.0]),
            Err(GpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validation_rules() {
        assert!(KernelSpec::squared_exponential(0.0, vec![1.0]).validate().is_err());
        assert!(KernelSpec::matern52(1.0, vec![-1.0]).validate().is_err());
        let single = KernelSpec::Sum {
            terms: vec![KernelSpec::squared_exponential(1.0, vec![1.0])],
        };
        assert!(single.validate().is_err());
        let nested = KernelSpec::Sum {
            terms: vec![
                KernelSpec::squared_exponential(1.0, vec![1.0]),
                KernelFamily::SquaredExponentialPlusMatern52.instantiate(1, 1.0, 1.0),
            ],
        };
        assert!(nested.validate().is_err());
    }

    #[test]
    fn log_param_round_trip() {
        let k = KernelSpec::Sum {
            terms: vec![
                KernelSpec::squared_exponential(1.5, vec![0.2, 3.0]),
                KernelSpec::matern52(0.3, vec![1.0, 0.5]),
            ],
        };
        let p = k.log_params();
        assert_eq!(p.len(), k.n_params());
        let back = k.with_log_params(&p);
        for (a, b) in back.log_params().iter().zip(&p) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let k = KernelSpec::Sum {
            terms: vec![
                KernelSpec::squared_exponential(1.2, vec![0.5, 1.7]),
                KernelSpec::matern52(0.8, vec![0.9, 0.4]),
            ],
        };
        let x = [0.3, -0.2];
        let y = [-0.4, 0.5];
        let p = k.log_params();
        let mut g = vec![0.0; p.len()];
        k.accumulate_log_grad(&x, &y, 1.0, &mut g);
        let h = 1e-6;
        for i in 0..p.len() {
            let mut up = p.clone();
            up[i] += h;
            let mut dn = p.clone();
            dn[i] -= h;
            let fd = (k.with_log_params(&up).eval_unchecked(&x, &y)
                - k.with_log_params(&dn).eval_unchecked(&x, &y))
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "param {i}: fd {fd} vs {}", g[i]);
        }
    }
}
