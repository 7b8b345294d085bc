//! Ranking-weighted ensemble of Gaussian processes.
//!
//! Every source model and the target model are scored by how often they
//! order pairs of target observations differently from the observations
//! themselves. Weights are the fraction of posterior draws in which a model
//! attains the smallest such loss, optionally with a lower bound on the
//! target weight that grows linearly with the iteration count.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::{factorize_with_jitter, GpError, GpModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RgpeError {
    #[error("predictions and targets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("ranking needs at least {needed} target observations, found {found}")]
    TooFewObservations { needed: usize, found: usize },
    #[error("non-finite value in ranking input")]
    NonFinite,
    #[error("weights and models differ in length ({0} vs {1})")]
    WeightCount(usize, usize),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Number of ordered pairs `(j, k)` for which exactly one of
/// `pred_j < pred_k` and `target_j < target_k` holds.
///
/// Runs in `O(N log N)`: the XOR count equals `A + B − 2C` with `A`, `B` the
/// strictly ordered pairs of each vector and `C` the strictly concordant ones.
pub fn ranking_loss(pred: &[f64], targets: &[f64]) -> Result<usize, RgpeError> {
    if pred.len() != targets.len() {
        return Err(RgpeError::LengthMismatch(pred.len(), targets.len()));
    }
    if pred.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(RgpeError::NonFinite);
    }
    let n = pred.len();
    if n < 2 {
        return Ok(0);
    }
    let strict_pairs = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        let mut ties = 0usize;
        let mut run = 1usize;
        for i in 1..=s.len() {
            if i < s.len() && s[i] == s[i - 1] {
                run += 1;
            } else {
                ties += run * (run - 1) / 2;
                run = 1;
            }
        }
        n * (n - 1) / 2 - ties
    };
    let a = strict_pairs(pred);
    let b = strict_pairs(targets);

    // Dense ranks of the targets for the Fenwick tree.
    let mut sorted_t = targets.to_vec();
    sorted_t.sort_by(f64::total_cmp);
    sorted_t.dedup();
    let rank = |t: f64| sorted_t.partition_point(|v| *v < t);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| pred[i].total_cmp(&pred[j]));
    let mut tree = Fenwick::new(sorted_t.len());
    let mut concordant = 0usize;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && pred[order[j]] == pred[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            concordant += tree.prefix(rank(targets[idx]));
        }
        for &idx in &order[i..j] {
            tree.add(rank(targets[idx]));
        }
        i = j;
    }
    Ok(a + b - 2 * concordant)
}

struct Fenwick(Vec<usize>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, pos: usize) {
        let mut i = pos + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks strictly below `pos`.
    fn prefix(&self, pos: usize) -> usize {
        let mut i = pos;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Deterministic ranking losses from posterior means: one entry per source
/// followed by the target, whose predictions come from leave-one-out.
pub fn model_losses(sources: &[Arc<GpModel>], target: &GpModel) -> Result<Vec<usize>, RgpeError> {
    let n = target.n_train();
    if n < 2 {
        return Err(RgpeError::TooFewObservations { needed: 2, found: n });
    }
    let x = target.train_inputs();
    let y = target.train_targets().as_slice();
    let mut out = Vec::with_capacity(sources.len() + 1);
    for s in sources {
        let post = s.predict(x, false)?;
        out.push(ranking_loss(post.mean.as_slice(), y)?);
    }
    let loo = target.loo_predictions()?;
    out.push(ranking_loss(loo.mean.as_slice(), y)?);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0,
        }
    }
}

/// Weights together with the per-draw losses they were counted from.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDraws {
    pub weights: Vec<f64>,
    /// `samples × (M + 1)` ranking losses, one row per posterior draw.
    pub loss_matrix: Vec<Vec<usize>>,
}

/// Splits `1/S` of weight per row uniformly over that row's argmin models.
pub fn weights_from_losses(loss_matrix: &[Vec<usize>]) -> Vec<f64> {
    let Some(first) = loss_matrix.first() else {
        return Vec::new();
    };
    let mut w = vec![0.0; first.len()];
    for row in loss_matrix {
        let best = *row.iter().min().expect("non-empty row");
        let winners: Vec<usize> = (0..row.len()).filter(|&i| row[i] == best).collect();
        let share = 1.0 / winners.len() as f64;
        for i in winners {
            w[i] += share;
        }
    }
    // Divide once so untied counts stay exact.
    let s = loss_matrix.len() as f64;
    w.iter().map(|c| c / s).collect()
}

/// Draws from a Gaussian `N(mean, cov)`, or returns the mean when the
/// covariance cannot be factorized.
struct GaussianSampler {
    mean: DVector<f64>,
    factor: Option<DMatrix<f64>>,
}

impl GaussianSampler {
    fn joint(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let degenerate = cov.diagonal().iter().all(|v| *v <= 1e-14);
        let factor = if degenerate {
            None
        } else {
            factorize_with_jitter(cov).ok().map(|(c, _)| c.l())
        };
        Self { mean, factor }
    }

    fn independent(mean: DVector<f64>, var: &DVector<f64>) -> Self {
        let factor = (var.iter().any(|v| *v > 1e-14))
            .then(|| DMatrix::from_diagonal(&var.map(|v| v.max(0.0).sqrt())));
        Self { mean, factor }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        match &self.factor {
            Some(l) => {
                let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(rng));
                &self.mean + l * z
            }
            None => self.mean.clone(),
        }
    }
}

/// Sampled ranking-loss weights over `sources` followed by `target`.
///
/// Each draw samples every source posterior jointly at the target inputs
/// and the target from its leave-one-out marginals.
pub fn compute_weights(
    sources: &[Arc<GpModel>],
    target: &GpModel,
    cfg: &WeightConfig,
) -> Result<WeightDraws, RgpeError> {
    let n = target.n_train();
    if n < 2 {
        return Err(RgpeError::TooFewObservations { needed: 2, found: n });
    }
    if cfg.samples == 0 {
        return Err(RgpeError::NoSamples);
    }
    let x = target.train_inputs();
    let y = target.train_targets().as_slice();

    let mut samplers = Vec::with_capacity(sources.len() + 1);
    for s in sources {
        let post = s.predict(x, true)?;
        let cov = post.covariance.expect("requested full covariance");
        samplers.push(GaussianSampler::joint(post.mean, cov));
    }
    let loo = target.loo_predictions()?;
    samplers.push(GaussianSampler::independent(loo.mean, &loo.variance));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_matrix = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let row = samplers
            .iter()
            .map(|s| ranking_loss(s.draw(&mut rng).as_slice(), y))
            .collect::<Result<Vec<_>, _>>()?;
        loss_matrix.push(row);
    }
    Ok(WeightDraws {
        weights: weights_from_losses(&loss_matrix),
        loss_matrix,
    })
}

/// Linear lower bound `min(α0·i + α1, β)` on the target weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            alpha0: 0.1,
            alpha1: 0.1,
            beta: 0.95,
        }
    }
}

impl Schedule {
    pub fn floor_at(&self, iteration: usize) -> f64 {
        (self.alpha0 * iteration as f64 + self.alpha1).min(self.beta)
    }

    pub fn is_valid(&self) -> bool {
        self.alpha0 >= 0.0 && self.alpha1 >= 0.0 && self.beta > 0.0 && self.beta <= 1.0
    }
}

/// Raises the target (last) weight to the schedule floor and rescales the
/// source weights proportionally so the result stays on the simplex.
pub fn force_target_weight(w: &[f64], iteration: usize, schedule: &Schedule) -> Vec<f64> {
    let Some((&wt, sources)) = w.split_last() else {
        return Vec::new();
    };
    let forced = wt.max(schedule.floor_at(iteration));
    let mut out: Vec<f64> = if wt < 1.0 {
        let factor = (1.0 - forced) / (1.0 - wt);
        sources.iter().map(|v| (v * factor).max(0.0)).collect()
    } else {
        vec![0.0; sources.len()]
    };
    out.push(forced);
    out
}

/// Weighted combination at `x`: mean `Σ wᵢ μᵢ`, variance `Σ wᵢ² σᵢ²`.
/// Models with zero weight are not evaluated.
pub fn predict_with_weights(models: &[&GpModel], weights: &[f64], x: &[f64], with_variance: bool) -> (f64, f64) {
    let mut mean = 0.0;
    let mut var = 0.0;
    for (m, w) in models.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let (mu, s2) = m.predict_point(x, with_variance);
        mean += w * mu;
        var += w * w * s2;
    }
    (mean, var)
}

/// A weighted ensemble over source models and one target model, all
/// evaluated in the target's normalized input coordinates.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub sources: Vec<Arc<GpModel>>,
    pub target: Arc<GpModel>,
    /// Sources in order, target last; on the simplex.
    pub weights: Vec<f64>,
    /// Mean-prediction ranking losses, same order as `weights`.
    pub raw_losses: Vec<usize>,
    pub schedule: Option<Schedule>,
    pub iteration: usize,
}

impl EnsembleState {
    /// Scores the models against the target data and computes weights,
    /// forcing the target weight when a schedule is given.
    pub fn build(
        sources: Vec<Arc<GpModel>>,
        target: Arc<GpModel>,
        cfg: &WeightConfig,
        schedule: Option<Schedule>,
        iteration: usize,
    ) -> Result<Self, RgpeError> {
        let raw_losses = model_losses(&sources, &target)?;
        let draws = compute_weights(&sources, &target, cfg)?;
        let weights = match &schedule {
            Some(s) => force_target_weight(&draws.weights, iteration, s),
            None => draws.weights,
        };
        Ok(Self {
            sources,
            target,
            weights,
            raw_losses,
            schedule,
            iteration,
        })
    }

    pub fn models(&self) -> Vec<&GpModel> {
        self.sources
            .iter()
            .map(|m| m.as_ref())
            .chain(std::iter::once(self.target.as_ref()))
            .collect()
    }

    pub fn predict(&self, x: &[f64], with_variance: bool) -> (f64, f64) {
        predict_with_weights(&self.models(), &self.weights, x, with_variance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::KernelSpec;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute(p: &[f64], t: &[f64]) -> usize {
        let mut c = 0;
        for j in 0..p.len() {
            for k in 0..p.len() {
                if (p[j] < p[k]) != (t[j] < t[k]) {
                    c += 1;
                }
            }
        }
        c
    }

    fn model(xs: &[f64], ys: &[f64], noise: f64) -> GpModel {
        GpModel::condition(
            &DMatrix::from_column_slice(xs.len(), 1, xs),
            &DVector::from_column_slice(ys),
            KernelSpec::squared_exponential(1.0, vec![0.5]),
            noise,
        )
        .unwrap()
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(ranking_loss(&[0.2, 0.5], &[1.0, 0.3]).unwrap(), 2);
        assert_eq!(ranking_loss(&[1.0], &[5.0]).unwrap(), 0);
        let t = [0.3, -1.0, 2.0, 0.9];
        let p: Vec<f64> = t.iter().map(|v: &f64| v.exp() * 3.0 + 1.0).collect();
        assert_eq!(ranking_loss(&p, &t).unwrap(), 0);
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert_eq!(ranking_loss(&neg, &t).unwrap(), 12);
        assert!(ranking_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ranking_with_ties() {
        // Equal targets: one ordering of the pair still disagrees.
        assert_eq!(ranking_loss(&[0.0, 1.0], &[2.0, 2.0]).unwrap(), 1);
        assert_eq!(ranking_loss(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn ranking_matches_enumeration(
            pairs in prop::collection::vec((0i32..5, 0i32..5), 1..14)
        ) {
            let p: Vec<f64> = pairs.iter().map(|a| a.0 as f64).collect();
            let t: Vec<f64> = pairs.iter().map(|a| a.1 as f64).collect();
            prop_assert_eq!(ranking_loss(&p, &t).unwrap(), brute(&p, &t));
        }

        #[test]
        fn ranking_is_monotone_invariant(t in prop::collection::vec(-5.0f64..5.0, 2..12),
                                         p in prop::collection::vec(-5.0f64..5.0, 12)) {
            let p = &p[..t.len()];
            let base = ranking_loss(p, &t).unwrap();
            let pt: Vec<f64> = p.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let tt: Vec<f64> = t.iter().map(|v| v.exp()).collect();
            prop_assert_eq!(ranking_loss(&pt, &t).unwrap(), base);
            prop_assert_eq!(ranking_loss(p, &tt).unwrap(), base);
            prop_assert_eq!(ranking_loss(&pt, &tt).unwrap(), base);
        }

        #[test]
        fn forcing_keeps_simplex(raw in prop::collection::vec(0.0f64..1.0, 2..6),
                                 it in 0usize..40,
                                 a0 in 0.0f64..0.5, a1 in 0.0f64..1.0, beta in 0.01f64..1.0) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-6);
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let s = Schedule { alpha0: a0, alpha1: a1, beta };
            let f = force_target_weight(&w, it, &s);
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(f.iter().all(|v| *v >= 0.0));
            prop_assert!(f[f.len() - 1] >= w[w.len() - 1]);
        }
    }

    #[test]
    fn forcing_example() {
        let s = Schedule {
            alpha0: 0.1,
            alpha1: 0.2,
            beta: 0.9,
        };
        let w = [0.4, 0.3, 0.3];
        let f = force_target_weight(&w, 3, &s);
        assert!((f[2] - 0.5).abs() < 1e-15);
        assert!((f[0] - 0.4 * 5.0 / 7.0).abs() < 1e-15);
        assert!((f[1] - 0.3 * 5.0 / 7.0).abs() < 1e-15);

        let unchanged = force_target_weight(&[0.3, 0.7], 3, &s);
        assert_eq!(unchanged, vec![0.3, 0.7]);

        let capped = force_target_weight(&[0.9, 0.1], 10_000, &s);
        assert!((capped[1] - 0.9).abs() < 1e-15);

        let all_target = force_target_weight(&[0.0, 1.0], 0, &s);
        assert_eq!(all_target, vec![0.0, 1.0]);
    }

    #[test]
    fn uniform_and_dominant_loss_rows() {
        let tied = vec![vec![3, 3, 3]; 10];
        let w = weights_from_losses(&tied);
        for v in &w {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let dominant = vec![vec![6, 0, 6]; 7];
        assert_eq!(weights_from_losses(&dominant), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn identical_and_negated_sources() {
        let xs = [0.0, 0.2, 0.4, 0.6, 0.8];
        let f = |x: f64| (3.0 * x).sin();
        let ys: Vec<f64> = xs.iter().map(|x| f(*x)).collect();
        let dense: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let same = model(&dense, &dense.iter().map(|x| f(*x)).collect::<Vec<_>>(), 1e-6);
        let neg = model(&dense, &dense.iter().map(|x| -f(*x)).collect::<Vec<_>>(), 1e-6);
        let target = model(&xs, &ys, 1e-4);
        let losses = model_losses(&[Arc::new(same), Arc::new(neg)], &target).unwrap();
        assert_eq!(losses[0], 0);
        assert_eq!(losses[1], 5 * 4);
    }

    #[test]
    fn model_losses_need_two_points() {
        let target = model(&[0.0], &[1.0], 1e-4);
        assert!(model_losses(&[], &target).is_err());
    }

    #[test]
    fn weights_recount_from_loss_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let xs: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x - 0.5 * x).collect();
        let dense: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let s1 = model(&dense, &dense.iter().map(|x| x * x).collect::<Vec<_>>(), 0.05);
        let s2 = model(&dense, &dense.iter().map(|x| -x).collect::<Vec<_>>(), 0.05);
        let target = model(&xs, &ys, 0.01);
        let cfg = WeightConfig {
            samples: 100,
            seed: 3,
        };
        let draws = compute_weights(&[Arc::new(s1), Arc::new(s2)], &target, &cfg).unwrap();
        assert_eq!(draws.loss_matrix.len(), 100);

        // Exhaustive recount: for every row and every model, add 1/(S·|argmin|).
        let mut recount = [0.0; 3];
        for row in &draws.loss_matrix {
            let m = row.iter().min().unwrap();
            let k = row.iter().filter(|v| *v == m).count() as f64;
            for (i, v) in row.iter().enumerate() {
                if v == m {
                    recount[i] += 1.0 / (100.0 * k);
                }
            }
        }
        for (w, r) in draws.weights.iter().zip(&recount) {
            assert!((w - r).abs() < 1e-12);
        }
        assert!((draws.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weights_deterministic_per_seed() {
        let xs = [0.1, 0.5, 0.9, 0.3];
        let ys = [1.0, 0.2, 0.7, 0.4];
        let src = Arc::new(model(&[0.0, 0.5, 1.0], &[1.0, 0.0, 1.0], 0.1));
        let target = model(&xs, &ys, 0.05);
        let cfg = WeightConfig { samples: 50, seed: 9 };
        let a = compute_weights(std::slice::from_ref(&src), &target, &cfg).unwrap();
        let b = compute_weights(std::slice::from_ref(&src), &target, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(compute_weights(&[src], &target, &WeightConfig { samples: 0, seed: 0 }).is_err());
    }

    #[test]
    fn ensemble_combination_rule() {
        // Two flat models far from their data: means are the prior means.
        let m1 = GpModel::condition_with_mean(
            &DMatrix::from_row_slice(1, 1, &[100.0]),
            &DVector::from_vec(vec![1.0]),
            KernelSpec::squared_exponential(1.0, vec![0.1]),
            0.0,
            1.0,
        )
        .unwrap();
        let m2 = GpModel::condition_with_mean(
            &DMatrix::from_row_slice(1, 1, &[100.0]),
            &DVector::from_vec(vec![3.0]),
            KernelSpec::squared_exponential(1.0, vec![0.1]),
            0.0,
            3.0,
        )
        .unwrap();
        let (mean, var) = predict_with_weights(&[&m1, &m2], &[0.5, 0.5], &[0.0], true);
        assert!((mean - 2.0).abs() < 1e-12);
        assert!((var - 0.5).abs() < 1e-12);

        let (single, sv) = predict_with_weights(&[&m1, &m2], &[0.0, 1.0], &[0.0], true);
        let own = m2.predict_point(&[0.0], true);
        assert_eq!((single, sv), own);
    }

    #[test]
    fn ensemble_mean_is_linear_in_weights() {
        let a = model(&[0.0, 0.5, 1.0], &[0.0, 1.0, 0.0], 0.01);
        let b = model(&[0.2, 0.7], &[2.0, -1.0], 0.01);
        let models = [&a, &b];
        let w1 = [0.3, 0.9];
        let w2 = [1.2, 0.4];
        let sum = [1.5, 1.3];
        let x = [0.4];
        let m1 = predict_with_weights(&models, &w1, &x, false).0;
        let m2 = predict_with_weights(&models, &w2, &x, false).0;
        let m12 = predict_with_weights(&models, &sum, &x, false).0;
        assert!((m1 + m2 - m12).abs() < 1e-12);
    }
}
