//! Price of ambiguity, price of fairness, shadow prices and equity dispersion.

use rayon::prelude::*;

use crate::dro::{build_cost_matrix, solve_dro_with_costs, solve_saa, DroProblem, Mode, SolverConfig};
use crate::error::{Error, Result};
use crate::noise::NoiseKernel;
use crate::support::{NoisyDataset, SupportGrid};
use crate::utility::FairnessUtility;

/// Relative tolerance of the finite-difference shadow-price check.
pub const SHADOW_PRICE_REL_TOL: f64 = 5e-2;
/// A jump in λ* larger than this between neighbouring radii marks a kink.
pub const KINK_JUMP: f64 = 0.1;
pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// `(SYSTEM − g*) / SYSTEM`.
pub fn price_of_ambiguity(system: f64, g_star: f64) -> Result<f64> {
    if !(system > 0.0) {
        return Err(Error::UndefinedBaseline(system));
    }
    Ok((system - g_star) / system)
}

/// `(SYSTEM_F − FAIR(α)) / SYSTEM_F`.
pub fn price_of_fairness(system_f: f64, fair_value: f64) -> Result<f64> {
    if !(system_f > 0.0) {
        return Err(Error::UndefinedBaseline(system_f));
    }
    Ok((system_f - fair_value) / system_f)
}

/// `max_i w_i − min_i w_i`; zero exactly for the uniform allocation.
pub fn dispersion(w: &[f64]) -> f64 {
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShadowPricePoint {
    pub epsilon: f64,
    pub g_star: f64,
    pub lambda_star: f64,
    /// Central difference `(g*(ε+h) − g*(ε−h)) / 2h`.
    pub fd_slope: f64,
    pub minus_lambda_star: f64,
    /// `|fd_slope + λ*|`.
    pub gap: f64,
    /// λ* jumps by more than [`KINK_JUMP`] near this radius.
    pub kink: bool,
}

impl ShadowPricePoint {
    pub fn within_tolerance(&self) -> bool {
        self.gap <= SHADOW_PRICE_REL_TOL * (1.0 + self.lambda_star)
    }
}

/// Compares the slope of `ε ↦ g*(ε)` with `−λ*(ε)` at each radius.
pub fn shadow_price_check(
    problem: &DroProblem,
    epsilons: &[f64],
    h: f64,
    config: &SolverConfig,
) -> Result<Vec<ShadowPricePoint>> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    if let Some(&bad) = epsilons.iter().find(|&&e| !(e - h >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "radius {bad} is not interior for step {h}"
        )));
    }
    // the cost matrix does not depend on ε
    let costs = build_cost_matrix(problem);
    let solve = |eps: f64| -> Result<(f64, f64)> {
        let p = problem.with_epsilon(eps)?;
        let s = solve_dro_with_costs(&p, &costs, config)?;
        Ok((s.g_star, s.lambda_star))
    };
    let mut points: Vec<(ShadowPricePoint, f64, f64)> = epsilons
        .par_iter()
        .map(|&eps| {
            let (g, lambda) = solve(eps)?;
            let (g_plus, l_plus) = solve(eps + h)?;
            let (g_minus, l_minus) = solve(eps - h)?;
            let fd_slope = (g_plus - g_minus) / (2.0 * h);
            let local_jump = (l_plus - lambda).abs().max((lambda - l_minus).abs());
            Ok((
                ShadowPricePoint {
                    epsilon: eps,
                    g_star: g,
                    lambda_star: lambda,
                    fd_slope,
                    minus_lambda_star: -lambda,
                    gap: (fd_slope + lambda).abs(),
                    kink: local_jump > KINK_JUMP,
                },
                l_minus,
                l_plus,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    // neighbouring sweep points in ε order
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].0.epsilon.total_cmp(&points[b].0.epsilon));
    let lambdas: Vec<f64> = order.iter().map(|&i| points[i].0.lambda_star).collect();
    for (pos, &i) in order.iter().enumerate() {
        let prev = pos
            .checked_sub(1)
            .map(|p| (lambdas[p] - lambdas[pos]).abs())
            .unwrap_or(0.0);
        let next = lambdas.get(pos + 1).map(|l| (l - lambdas[pos]).abs()).unwrap_or(0.0);
        if prev > KINK_JUMP || next > KINK_JUMP {
            points[i].0.kink = true;
        }
    }
    Ok(points.into_iter().map(|(p, _, _)| p).collect())
}

/// One solved point of a parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub alpha: f64,
    pub mode: Mode,
    pub kernel: String,
    pub g_star: f64,
    pub lambda_star: f64,
    pub poa: Option<f64>,
    pub pof: Option<f64>,
    pub dispersion: f64,
    pub converged: bool,
    pub gap: Option<f64>,
    /// Upper bound on λ used by the solve; `λ* = lambda_max` means the
    /// ambiguity set is empty or too small to bind.
    pub lambda_max: f64,
    pub w_star: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// SAA value `SYSTEM` for each α.
    pub system: Vec<(f64, f64)>,
    /// `SYSTEM_F = g*(ε, α = 0)` for each mode and radius.
    pub system_f: Vec<(Mode, f64, f64)>,
    /// Rows sorted by `(ε, α, mode)`.
    pub rows: Vec<SweepRow>,
}

impl MetricsReport {
    pub fn system_for(&self, alpha: f64) -> Option<f64> {
        self.system.iter().find(|(a, _)| *a == alpha).map(|(_, v)| *v)
    }

    pub fn system_f_for(&self, mode: Mode, epsilon: f64) -> Option<f64> {
        self.system_f
            .iter()
            .find(|(m, e, _)| *m == mode && *e == epsilon)
            .map(|(_, _, v)| *v)
    }

    pub fn row(&self, epsilon: f64, alpha: f64, mode: Mode) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.epsilon == epsilon && r.alpha == alpha && r.mode == mode)
    }
}

/// Inputs shared by every point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub dataset: NoisyDataset,
    pub kernel: NoiseKernel,
    pub grid: SupportGrid,
    pub epsilons: Vec<f64>,
    pub alphas: Vec<f64>,
    pub modes: Vec<Mode>,
}

impl SweepSpec {
    fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.alphas.is_empty() || self.modes.is_empty() {
            return Err(Error::InvalidParameter("sweep lists must be non-empty".into()));
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0)) || self.alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidParameter("sweep radii and alphas must be >= 0".into()));
        }
        Ok(())
    }
}

fn dedup_sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// SAA baselines for each α.
pub fn system_baselines(dataset: &NoisyDataset, alphas: &[f64]) -> Result<Vec<(f64, f64)>> {
    dedup_sorted(alphas)
        .par_iter()
        .map(|&alpha| {
            let u = FairnessUtility::new(alpha, dataset.dim())?;
            Ok((alpha, solve_saa(dataset, &u)?.value))
        })
        .collect()
}

/// Solves every `(ε, α, mode)` combination and derives POA, POF and
/// dispersion. Output order is canonical and independent of scheduling.
pub fn run_sweep(spec: &SweepSpec, config: &SolverConfig) -> Result<MetricsReport> {
    spec.validate()?;
    let epsilons = dedup_sorted(&spec.epsilons);
    let alphas = dedup_sorted(&spec.alphas);
    let mut modes = spec.modes.clone();
    modes.sort();
    modes.dedup();

    let system = system_baselines(&spec.dataset, &alphas)?;
    let n = spec.dataset.dim();
    let base = DroProblem::new(
        spec.dataset.clone(),
        spec.kernel.clone(),
        spec.grid.clone(),
        FairnessUtility::new(0.0, n)?,
        epsilons[0],
        modes[0],
    )?;
    let costs: Vec<(Mode, crate::dro::CostMatrix)> = modes
        .iter()
        .map(|&m| (m, build_cost_matrix(&base.with_mode(m))))
        .collect();

    let mut jobs: Vec<(f64, f64, Mode)> = Vec::with_capacity(epsilons.len() * alphas.len() * modes.len());
    for &e in &epsilons {
        for &a in &alphas {
            for &m in &modes {
                jobs.push((e, a, m));
            }
        }
    }

    let solved: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(epsilon, alpha, mode)| {
            let problem = base
                .with_mode(mode)
                .with_epsilon(epsilon)?
                .with_utility(FairnessUtility::new(alpha, n)?)?;
            let costs = &costs.iter().find(|(m, _)| *m == mode).expect("cost matrix per mode").1;
            let s = solve_dro_with_costs(&problem, costs, config)?;
            Ok(SweepRow {
                epsilon,
                alpha,
                mode,
                kernel: match mode {
                    Mode::Direct => "dirac".to_string(),
                    Mode::Noisy => spec.kernel.label(),
                },
                g_star: s.g_star,
                lambda_star: s.lambda_star,
                poa: None,
                pof: None,
                dispersion: dispersion(&s.w_star),
                converged: s.converged,
                gap: s.gap,
                lambda_max: s.lambda_max,
                w_star: s.w_star.into_inner(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let system_f: Vec<(Mode, f64, f64)> = if alphas.contains(&0.0) {
        solved
            .iter()
            .filter(|r| r.alpha == 0.0)
            .map(|r| (r.mode, r.epsilon, r.g_star))
            .collect()
    } else {
        Vec::new()
    };

    let mut report = MetricsReport {
        system,
        system_f,
        rows: Vec::with_capacity(solved.len()),
    };
    for mut row in solved {
        row.poa = report
            .system_for(row.alpha)
            .and_then(|s| price_of_ambiguity(s, row.g_star).ok());
        row.pof = report
            .system_f_for(row.mode, row.epsilon)
            .and_then(|s| price_of_fairness(s, row.g_star).ok());
        report.rows.push(row);
    }
    Ok(report)
}
