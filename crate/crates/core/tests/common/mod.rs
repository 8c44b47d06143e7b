#![allow(dead_code)]

use noisy_dro::noise::{
    make_bernoulli, make_binomial, make_poisson, make_softmax, make_truncated_normal, make_uniform,
};
use noisy_dro::support::build_support_grid;
use noisy_dro::{DroProblem, FairnessUtility, Mode, NoiseKernel, NoisyDataset, SupportGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FAMILIES: [&str; 6] = [
    "uniform",
    "truncated_normal",
    "softmax",
    "bernoulli",
    "binomial",
    "poisson",
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A small kernel of the given family, shifted to zero mean.
pub fn centered_kernel(family: &str, dim: usize, rng: &mut impl Rng) -> NoiseKernel {
    let s = rng.random_range(0.01..0.05);
    let k = match family {
        "uniform" => make_uniform(-s, s, 3, dim),
        "truncated_normal" => make_truncated_normal(0.0, s, -2.0 * s, 2.0 * s, 3, dim),
        "softmax" => make_softmax(-s, s, 3, dim, 0.02),
        "bernoulli" => make_bernoulli(rng.random_range(0.2..0.8), s, dim),
        "binomial" => make_binomial(rng.random_range(0.2..0.8), 2, s, dim),
        "poisson" => make_poisson(rng.random_range(0.3..1.5), s, 2, dim),
        other => panic!("unknown family {other}"),
    }
    .unwrap();
    k.centered()
}

pub fn unit_grid(dim: usize, levels: usize) -> SupportGrid {
    build_support_grid(&vec![0.0; dim], &vec![1.0; dim], levels).unwrap()
}

/// `n_samples` points drawn uniformly from the unit box.
pub fn box_samples(dim: usize, n_samples: usize, rng: &mut impl Rng) -> NoisyDataset {
    let s = (0..n_samples)
        .map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    NoisyDataset::new(s, "random box").unwrap()
}

/// `n_samples` points drawn uniformly from the grid.
pub fn grid_samples(grid: &SupportGrid, n_samples: usize, rng: &mut impl Rng) -> NoisyDataset {
    let s = (0..n_samples)
        .map(|_| grid.point(rng.random_range(0..grid.len())).to_vec())
        .collect();
    NoisyDataset::new(s, "random grid").unwrap()
}

pub const ALPHAS: [f64; 6] = [0.0, 0.5, 1.0, 2.0, 5.0, 10.0];

/// Random noisy-mode instance with a centered kernel of `family`.
pub fn random_instance(family: &str, seed: u64) -> DroProblem {
    let mut r = rng(seed);
    let dim = r.random_range(2..=3);
    let n_samples = r.random_range(5..=30);
    let kernel = centered_kernel(family, dim, &mut r);
    let grid = unit_grid(dim, 3);
    let data = box_samples(dim, n_samples, &mut r);
    let alpha = ALPHAS[r.random_range(0..ALPHAS.len())];
    let eps = r.random_range(0.01..0.1);
    DroProblem::new(
        data,
        kernel,
        grid,
        FairnessUtility::new(alpha, dim).unwrap(),
        eps,
        Mode::Noisy,
    )
    .unwrap()
}

/// Ten radii evenly spaced in `[0.01, 0.1]`.
pub fn epsilon_sweep() -> Vec<f64> {
    (0..10).map(|i| 0.01 + 0.01 * i as f64).collect()
}
