//! Distributionally robust optimization from noisy observations.
//!
//! Observations are `x★ = x + e` with a known additive noise kernel. The
//! ambiguity set contains every latent distribution whose noisy image lies
//! within a Wasserstein-1 ball around the empirical distribution of the
//! observations. On a finite latent support the robust problem reduces to a
//! small jointly concave program in the allocation `w` and a multiplier `λ`,
//! solved in [`dro`].
//!
//! Modules:
//! - [`support`]: dataset ingestion, normalization and support grids
//! - [`noise`]: discrete additive noise kernels
//! - [`utility`]: α-fair aggregate utility
//! - [`dro`]: noisy-data and direct DRO, SAA baseline, brute-force oracle
//! - [`metrics`]: price of ambiguity and fairness, shadow prices, sweeps
//! - [`stats`]: Wasserstein distances and Monte Carlo experiments

pub mod dro;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod stats;
pub mod support;
pub mod utility;

pub use dro::{
    build_cost_matrix, dual_objective, oracle_grid_solve, project_simplex, solve_dro, solve_saa, Allocation,
    CostMatrix, DroProblem, DroSolution, Mode, SaaSolution, SolverConfig, SolverMethod,
};
pub use error::{Error, Result};
pub use noise::{KernelBias, NoiseFamily, NoiseKernel};
pub use support::{NoisyDataset, RawRecord, SupportGrid, UserType};
pub use utility::FairnessUtility;
