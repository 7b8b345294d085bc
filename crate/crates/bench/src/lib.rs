//! Deterministic fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tlbo_core::nalgebra::{DMatrix, DVector};
use tlbo_core::synthetic::{generate_family, BaseFunction, Family, TaskFamilySpec};

/// `n` random points in `[0, 1]^dim` with a smooth response.
pub fn regression_data(n: usize, dim: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, dim, |_, _| rng.random::<f64>());
    let y = DVector::from_fn(n, |i, _| {
        (0..dim).map(|j| (3.0 * x[(i, j)]).sin() + x[(i, j)].powi(2)).sum::<f64>()
    });
    (x, y)
}

/// Three-parameter quadratic family with five sources of 120 points each.
pub fn family(seed: u64) -> Family {
    let mut spec = TaskFamilySpec::new(BaseFunction::QuadraticValley { dim: 3 });
    spec.samples = (120, 120);
    spec.seed = seed;
    generate_family(&spec).expect("valid spec")
}
