//! Monte Carlo checks of the statistical guarantees.
//!
//! - order-1 Wasserstein distances between empirical measures (`‖·‖₁` cost)
//! - the radius schedule `ε_N(β)` of the measure concentration bound
//! - coverage: how often the noisy empirical lies within `ε_N(β)` of the true
//!   noisy distribution
//! - consistency: convergence of the noisy-data DRO value to the latent optimum
//! - the biased-noise lower bound `g_noise,δ ≥ g − λ*·δ`
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, N, trial)`,
//! so results do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dro::{solve_dro, solve_weighted_saa, DroProblem, Mode, SolverConfig};
use crate::error::{Error, Result};
use crate::noise::{kernel_mean, NoiseKernel, NoiseSampler};
use crate::support::{lex_cmp, NoisyDataset, SupportGrid};
use crate::utility::FairnessUtility;

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(m³)). Returns the total cost and `assignment[row] = col`.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let m = cost.len();
    if m == 0 {
        return (0.0, Vec::new());
    }
    assert!(cost.iter().all(|r| r.len() == m), "cost matrix must be square");
    // 1-based rows/columns; column 0 is a sentinel
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; m];
    for j in 1..=m {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (total, assignment)
}

/// Exact W1 between two weighted measures on the real line, by integrating
/// the absolute difference of their CDFs.
pub fn wasserstein1_1d_weighted(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, f64)> = a
        .iter()
        .map(|&(x, w)| (x, w))
        .chain(b.iter().map(|&(x, w)| (x, -w)))
        .collect();
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

/// Order-1 Wasserstein distance between two uniform empirical measures under
/// the `ℓ₁` ground cost.
///
/// In one dimension any sizes are accepted (sorted matching when the sizes
/// agree, CDF integration otherwise). In higher dimensions both samples must
/// have the same size and the distance is an optimal assignment.
pub fn wasserstein1_empirical(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InvalidInput("empirical measures must be non-empty".into()));
    }
    let dim = p[0].len();
    for x in p.iter().chain(q) {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x.len(),
            });
        }
    }
    if dim == 1 {
        if p.len() == q.len() {
            let mut a: Vec<f64> = p.iter().map(|x| x[0]).collect();
            let mut b: Vec<f64> = q.iter().map(|x| x[0]).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
        }
        let wa = 1.0 / p.len() as f64;
        let wb = 1.0 / q.len() as f64;
        let a: Vec<(f64, f64)> = p.iter().map(|x| (x[0], wa)).collect();
        let b: Vec<(f64, f64)> = q.iter().map(|x| (x[0], wb)).collect();
        return Ok(wasserstein1_1d_weighted(&a, &b));
    }
    if p.len() != q.len() {
        return Err(Error::UnsupportedShape(format!(
            "assignment distance needs equal sizes in dimension {dim}, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let cost: Vec<Vec<f64>> = p.iter().map(|x| q.iter().map(|y| l1(x, y)).collect()).collect();
    Ok(min_cost_assignment(&cost).0 / p.len() as f64)
}

/// Constants of the radius schedule
///
/// ```text
/// ε_N(β) = (log(c1/β) / (c2·N))^(1/max(n,2))   if N ≥ log(c1/β)/c2
///          (log(c1/β) / (c2·N))^(1/a)          otherwise
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub c1: f64,
    pub c2: f64,
    pub a: f64,
    pub n: usize,
}

impl EpsilonSchedule {
    pub fn new(c1: f64, c2: f64, a: f64, n: usize) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) || !c1.is_finite() || !c2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "c1, c2 must be positive, got {c1}, {c2}"
            )));
        }
        if !(a > 1.0) || !a.is_finite() {
            return Err(Error::InvalidParameter(format!("a must exceed 1, got {a}")));
        }
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(Self { c1, c2, a, n })
    }

    /// The concentration bound is stated for `n ≠ 2`; the formula itself is
    /// still evaluable in that case.
    pub fn dimension_warning(&self) -> Option<String> {
        (self.n == 2).then(|| "the radius schedule assumes n != 2; values for n = 2 are uncalibrated".to_string())
    }

    pub fn epsilon_n(&self, beta: f64, n_samples: usize) -> Result<f64> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidParameter(format!("beta must lie in (0, 1), got {beta}")));
        }
        if n_samples == 0 {
            return Err(Error::InvalidParameter("sample count must be >= 1".into()));
        }
        let log_term = (self.c1 / beta).ln();
        let threshold = log_term / self.c2;
        let base = log_term / (self.c2 * n_samples as f64);
        let exponent = if n_samples as f64 >= threshold {
            1.0 / self.n.max(2) as f64
        } else {
            1.0 / self.a
        };
        Ok(base.max(0.0).powf(exponent))
    }
}

/// `ε_N(β)` for a schedule.
pub fn epsilon_n(schedule: &EpsilonSchedule, beta: f64, n_samples: usize) -> Result<f64> {
    schedule.epsilon_n(beta, n_samples)
}

/// Finite latent distribution observed through a noise kernel.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    grid: SupportGrid,
    latent_pmf: Vec<f64>,
    kernel: NoiseKernel,
    seed: u64,
}

impl SyntheticWorld {
    pub fn new(grid: SupportGrid, latent_pmf: Vec<f64>, kernel: NoiseKernel, seed: u64) -> Result<Self> {
        if latent_pmf.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: latent_pmf.len(),
            });
        }
        if kernel.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: kernel.dim(),
            });
        }
        if latent_pmf.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidParameter(
                "latent probabilities must be nonnegative".into(),
            ));
        }
        let total: f64 = latent_pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "latent probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self {
            grid,
            latent_pmf,
            kernel,
            seed,
        })
    }

    /// Uniform latent pmf over the grid.
    pub fn uniform(grid: SupportGrid, kernel: NoiseKernel, seed: u64) -> Result<Self> {
        let k = grid.len();
        Self::new(grid, vec![1.0 / k as f64; k], kernel, seed)
    }

    pub fn grid(&self) -> &SupportGrid {
        &self.grid
    }

    pub fn latent_pmf(&self) -> &[f64] {
        &self.latent_pmf
    }

    pub fn kernel(&self) -> &NoiseKernel {
        &self.kernel
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn with_kernel(&self, kernel: NoiseKernel) -> Result<Self> {
        Self::new(self.grid.clone(), self.latent_pmf.clone(), kernel, self.seed)
    }

    /// Independent stream for `(tag, trial)`.
    pub fn rng(&self, tag: u64, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(trial);
        rng
    }

    /// Distribution of `x + e`: merged support points with probabilities.
    pub fn noisy_distribution(&self) -> Vec<(Vec<f64>, f64)> {
        let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
        for (x, px) in self.grid.points().iter().zip(&self.latent_pmf) {
            for (e, pe) in self.kernel.offsets().iter().zip(self.kernel.probs()) {
                let y: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + b).collect();
                atoms.push((y, px * pe));
            }
        }
        atoms.sort_by(|a, b| lex_cmp(&a.0, &b.0));
        let mut merged: Vec<(Vec<f64>, f64)> = Vec::with_capacity(atoms.len());
        for (y, p) in atoms {
            match merged.last_mut() {
                Some((last, q)) if l1(last, &y) <= 1e-12 => *q += p,
                _ => merged.push((y, p)),
            }
        }
        merged
    }

    /// `N` i.i.d. draws of `x + e`.
    pub fn sample_noisy<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let latent = rand::distr::weighted::WeightedIndex::new(&self.latent_pmf).expect("valid latent pmf");
        let noise = NoiseSampler::new(&self.kernel);
        (0..n_samples)
            .map(|_| {
                let x = self.grid.point(rand::distr::Distribution::sample(&latent, rng));
                let e = noise.sample(rng);
                x.iter().zip(e).map(|(a, b)| a + b).collect()
            })
            .collect()
    }

    /// Optimal value of the latent stochastic program `max_w E_F[U(w, X)]`.
    pub fn latent_optimum(&self, utility: &FairnessUtility) -> Result<f64> {
        Ok(solve_weighted_saa(self.grid.points(), &self.latent_pmf, utility)?.value)
    }
}

/// Distance between a noisy empirical sample and the world's noisy
/// distribution: exact in one dimension, against a reference sample of size
/// `reference_factor·N` otherwise.
fn distance_to_truth<R: Rng + ?Sized>(
    world: &SyntheticWorld,
    sample: &[Vec<f64>],
    reference_factor: usize,
    rng: &mut R,
) -> Result<f64> {
    if world.dim() == 1 {
        let truth: Vec<(f64, f64)> = world.noisy_distribution().into_iter().map(|(y, p)| (y[0], p)).collect();
        let w = 1.0 / sample.len() as f64;
        let emp: Vec<(f64, f64)> = sample.iter().map(|x| (x[0], w)).collect();
        return Ok(wasserstein1_1d_weighted(&emp, &truth));
    }
    let reference = world.sample_noisy(reference_factor * sample.len(), rng);
    let replicated: Vec<Vec<f64>> = sample
        .iter()
        .flat_map(|x| std::iter::repeat_n(x.clone(), reference_factor))
        .collect();
    wasserstein1_empirical(&replicated, &reference)
}

/// Largest assignment size used by the multi-dimensional coverage path.
pub const MAX_ASSIGNMENT_SIZE: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub n: usize,
    pub beta: f64,
    pub epsilon: f64,
    /// Fraction of trials with distance at most `epsilon`.
    pub coverage: f64,
    pub mean_distance: f64,
    pub trials: usize,
}

/// Distances from `trials` noisy empirical samples of size `n` to the true
/// noisy distribution.
pub fn coverage_distances(
    world: &SyntheticWorld,
    n_samples: usize,
    trials: usize,
    reference_factor: usize,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("sample count must be >= 1".into()));
    }
    if world.dim() > 1 && reference_factor * n_samples > MAX_ASSIGNMENT_SIZE {
        return Err(Error::UnsupportedShape(format!(
            "reference size {} exceeds {MAX_ASSIGNMENT_SIZE} in dimension {}",
            reference_factor * n_samples,
            world.dim()
        )));
    }
    if world.dim() > 1 && reference_factor == 0 {
        return Err(Error::InvalidParameter("reference factor must be >= 1".into()));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = world.rng(n_samples as u64, t);
            let sample = world.sample_noisy(n_samples, &mut rng);
            distance_to_truth(world, &sample, reference_factor, &mut rng)
        })
        .collect()
}

/// Empirical coverage of the radius `ε_N(β)` for every `(N, β)` pair.
pub fn coverage_experiment(
    world: &SyntheticWorld,
    schedule: &EpsilonSchedule,
    betas: &[f64],
    ns: &[usize],
    trials: usize,
    reference_factor: usize,
) -> Result<Vec<CoverageRow>> {
    if trials < 100 {
        return Err(Error::InvalidParameter(format!(
            "coverage needs at least 100 trials, got {trials}"
        )));
    }
    let mut rows = Vec::with_capacity(ns.len() * betas.len());
    for &n in ns {
        let distances = coverage_distances(world, n, trials, reference_factor)?;
        let mean_distance = distances.iter().sum::<f64>() / trials as f64;
        for &beta in betas {
            let epsilon = schedule.epsilon_n(beta, n)?;
            let covered = distances.iter().filter(|&&d| d <= epsilon).count();
            rows.push(CoverageRow {
                n,
                beta,
                epsilon,
                coverage: covered as f64 / trials as f64,
                mean_distance,
                trials,
            });
        }
    }
    Ok(rows)
}

/// Fits `c2` (for a given `c1`) so that the radius at `pilot_n` equals the
/// empirical `(1−β)`-quantile of the distances.
pub fn calibrate_c2(
    world: &SyntheticWorld,
    c1: f64,
    a: f64,
    beta: f64,
    pilot_n: usize,
    trials: usize,
    reference_factor: usize,
) -> Result<EpsilonSchedule> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, 1), got {beta}")));
    }
    let mut d = coverage_distances(world, pilot_n, trials, reference_factor)?;
    d.sort_by(f64::total_cmp);
    let idx = (((1.0 - beta) * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    let q = d[idx];
    if !(q > 0.0) {
        return Err(Error::InvalidParameter(
            "pilot distances are all zero; any c2 covers".into(),
        ));
    }
    let log_term = (c1 / beta).ln();
    if !(log_term > 0.0) {
        return Err(Error::InvalidParameter(format!("c1 = {c1} must exceed beta = {beta}")));
    }
    let p = world.dim().max(2) as f64;
    // the branch N >= log(c1/β)/c2 is equivalent to q <= 1
    let exponent = if q <= 1.0 { p } else { a };
    let c2 = log_term / (pilot_n as f64 * q.powf(exponent));
    EpsilonSchedule::new(c1, c2, a, world.dim())
}

/// Radius used for each sample size in the consistency experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusRule {
    Fixed(f64),
    /// `ε_N(β₀/N²)`: a summable confidence sequence.
    Schedule {
        schedule: EpsilonSchedule,
        beta0: f64,
    },
}

impl RadiusRule {
    pub fn beta(&self, n_samples: usize) -> Option<f64> {
        match self {
            RadiusRule::Fixed(_) => None,
            RadiusRule::Schedule { beta0, .. } => Some(beta0 / (n_samples as f64).powi(2)),
        }
    }

    pub fn radius(&self, n_samples: usize) -> Result<f64> {
        match self {
            RadiusRule::Fixed(e) => Ok(*e),
            RadiusRule::Schedule { schedule, .. } => schedule.epsilon_n(self.beta(n_samples).unwrap(), n_samples),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    pub seed: u64,
    pub beta: Option<f64>,
    pub epsilon: f64,
    pub g_hat: f64,
    pub g_so: f64,
    pub abs_error: f64,
}

/// Solves the noisy-data DRO on `seeds` independent datasets per sample size.
pub fn consistency_experiment(
    world: &SyntheticWorld,
    utility: &FairnessUtility,
    radius: RadiusRule,
    ns: &[usize],
    seeds: usize,
    config: &SolverConfig,
) -> Result<Vec<ConsistencyRow>> {
    if ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "sample sizes must be strictly increasing".into(),
        ));
    }
    let g_so = world.latent_optimum(utility)?;
    let jobs: Vec<(usize, u64)> = ns
        .iter()
        .flat_map(|&n| (0..seeds as u64).map(move |s| (n, s)))
        .collect();
    jobs.par_iter()
        .map(|&(n, seed)| {
            let mut rng = world.rng(0xC0_5157 ^ n as u64, seed);
            let samples = world.sample_noisy(n, &mut rng);
            let epsilon = radius.radius(n)?;
            let problem = DroProblem::new(
                NoisyDataset::new(samples, format!("synthetic N={n}"))?,
                world.kernel().clone(),
                world.grid().clone(),
                utility.clone(),
                epsilon,
                Mode::Noisy,
            )?;
            let g_hat = solve_dro(&problem, config)?.g_star;
            Ok(ConsistencyRow {
                n,
                seed,
                beta: radius.beta(n),
                epsilon,
                g_hat,
                g_so,
                abs_error: (g_hat - g_so).abs(),
            })
        })
        .collect()
}

/// Median absolute error per sample size, in the order of `ns`.
pub fn median_errors(rows: &[ConsistencyRow], ns: &[usize]) -> Vec<(usize, f64)> {
    ns.iter()
        .map(|&n| {
            let mut e: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.abs_error).collect();
            e.sort_by(f64::total_cmp);
            let m = e.len();
            let med = if m == 0 {
                f64::NAN
            } else if m % 2 == 1 {
                e[m / 2]
            } else {
                0.5 * (e[m / 2 - 1] + e[m / 2])
            };
            (n, med)
        })
        .collect()
}

/// Slack allowed by the biased-noise bound check.
pub const BIASED_BOUND_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BiasedBoundRow {
    pub delta: f64,
    pub g_noisy_biased: f64,
    pub g_direct: f64,
    pub lambda_direct: f64,
    pub bound_ok: bool,
}

/// For each `δ`, shifts the centered kernel of `base` by a constant bias of
/// `ℓ₁` norm `δ` (split evenly across coordinates) and checks
/// `g_noisy ≥ g_direct − λ*_direct·δ`.
pub fn biased_bound_experiment(
    base: &DroProblem,
    deltas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<BiasedBoundRow>> {
    if deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::InvalidParameter("bias norms must be >= 0".into()));
    }
    let direct = solve_dro(&base.with_mode(Mode::Direct), config)?;
    let centered = base.kernel().centered();
    let n = base.dim();
    deltas
        .par_iter()
        .map(|&delta| {
            let kernel = centered.shifted(&vec![delta / n as f64; n])?;
            let realized = kernel_mean(&kernel).delta;
            let problem = DroProblem::new(
                base.dataset().clone(),
                kernel,
                base.grid().clone(),
                base.utility().clone(),
                base.epsilon(),
                Mode::Noisy,
            )?;
            let g = solve_dro(&problem, config)?.g_star;
            Ok(BiasedBoundRow {
                delta: realized,
                g_noisy_biased: g,
                g_direct: direct.g_star,
                lambda_direct: direct.lambda_star,
                bound_ok: g >= direct.g_star - direct.lambda_star * realized - BIASED_BOUND_TOL,
            })
        })
        .collect()
}
