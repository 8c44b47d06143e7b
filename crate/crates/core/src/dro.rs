//! Noisy-data and direct Wasserstein DRO on a finite latent support.
//!
//! Both models share one finite convex program over `(w, λ)`:
//!
//! ```text
//! maximize   -λ·ε + (1/N) Σ_j a_j
//! a_j      = min_k  U(w, x_k) + λ·c[j][k]
//! ```
//!
//! where `c[j][k] = E‖x_k + E − x̂★_j‖₁` under the noise kernel. The direct
//! model uses the Dirac kernel, so `c[j][k] = ‖x_k − x̂★_j‖₁`. The map
//! `(w, λ) ↦ objective` is jointly concave (a minimum of functions that are
//! concave in `w` and affine in `λ`), and a supergradient at any point is
//! read off the per-sample minimizers.

use std::borrow::Cow;
use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::{cost_with_diff, make_dirac, NoiseKernel};
use crate::support::{NoisyDataset, SupportGrid};
use crate::utility::FairnessUtility;

/// Tolerance for membership in the allocation simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Allocation on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation(Vec<f64>);

impl Allocation {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::InvalidInput("allocation must be non-empty".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput(
                "allocation entries must be finite and nonnegative".into(),
            ));
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!("allocation sums to {s}, not 1")));
        }
        Ok(Self(w))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for Allocation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Euclidean projection onto `{w ≥ 0, Σ w = 1}` by the sort-and-threshold rule.
pub fn project_simplex(v: &[f64]) -> Allocation {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let mut w: Vec<f64> = v.iter().map(|&vi| (vi - theta).max(0.0)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 && s != 1.0 {
        for wi in &mut w {
            *wi /= s;
        }
    }
    Allocation(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Samples treated as noise-free (Dirac kernel).
    Direct,
    /// Samples pulled back through the noise kernel.
    Noisy,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Noisy => "noisy",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Mode::Direct),
            "noisy" | "noise" => Ok(Mode::Noisy),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

/// One fully specified robust allocation instance.
#[derive(Debug, Clone)]
pub struct DroProblem {
    dataset: NoisyDataset,
    kernel: NoiseKernel,
    grid: SupportGrid,
    utility: FairnessUtility,
    epsilon: f64,
    mode: Mode,
}

impl DroProblem {
    pub fn new(
        dataset: NoisyDataset,
        kernel: NoiseKernel,
        grid: SupportGrid,
        utility: FairnessUtility,
        epsilon: f64,
        mode: Mode,
    ) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        let n = dataset.dim();
        for got in [grid.dim(), kernel.dim(), utility.n()] {
            if got != n {
                return Err(Error::DimensionMismatch { expected: n, got });
            }
        }
        // 1 + w·x must stay positive for every w in the simplex
        if let Some(&bad) = grid.points().iter().flatten().find(|&&v| v <= -1.0) {
            return Err(Error::Domain(1.0 + bad));
        }
        Ok(Self {
            dataset,
            kernel,
            grid,
            utility,
            epsilon,
            mode,
        })
    }

    pub fn dataset(&self) -> &NoisyDataset {
        &self.dataset
    }

    pub fn kernel(&self) -> &NoiseKernel {
        &self.kernel
    }

    pub fn grid(&self) -> &SupportGrid {
        &self.grid
    }

    pub fn utility(&self) -> &FairnessUtility {
        &self.utility
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.dataset.dim()
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(
            self.dataset.clone(),
            self.kernel.clone(),
            self.grid.clone(),
            self.utility.clone(),
            epsilon,
            self.mode,
        )
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self { mode, ..self.clone() }
    }

    pub fn with_utility(&self, utility: FairnessUtility) -> Result<Self> {
        Self::new(
            self.dataset.clone(),
            self.kernel.clone(),
            self.grid.clone(),
            utility,
            self.epsilon,
            self.mode,
        )
    }

    /// Kernel actually used for transport costs: Dirac in direct mode.
    pub fn effective_kernel(&self) -> Cow<'_, NoiseKernel> {
        match self.mode {
            Mode::Noisy => Cow::Borrowed(&self.kernel),
            Mode::Direct => Cow::Owned(make_dirac(self.dim()).expect("dimension >= 1")),
        }
    }

    /// Default cap on λ: one plus a Lipschitz bound of the utility in `x`.
    pub fn default_lambda_max(&self) -> f64 {
        1.0 + self.grid.max_abs_coordinate().max(1.0)
    }
}

/// Expected transport costs, `N × |grid|`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.cols + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

pub fn build_cost_matrix(problem: &DroProblem) -> CostMatrix {
    let kernel = problem.effective_kernel();
    let grid = problem.grid();
    let rows = problem.dataset().len();
    let cols = grid.len();
    let data: Vec<f64> = problem
        .dataset()
        .samples()
        .par_iter()
        .flat_map_iter(|xhat| {
            let kernel = &kernel;
            grid.points().iter().map(move |x| {
                let diff: Vec<f64> = x.iter().zip(xhat).map(|(a, b)| a - b).collect();
                cost_with_diff(kernel, &diff)
            })
        })
        .collect();
    CostMatrix { rows, cols, data }
}

/// Value of the reformulated objective at a fixed `(w, λ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualValue {
    pub value: f64,
    /// Per-sample epigraph values `a_j`.
    pub a: Vec<f64>,
    /// Per-sample minimizing grid index (smallest index on ties).
    pub argmin: Vec<usize>,
}

pub fn dual_objective(problem: &DroProblem, costs: &CostMatrix, w: &[f64], lambda: f64) -> DualValue {
    Evaluator::new(problem, costs).dual(w, lambda)
}

/// Shared state for repeated objective evaluations on one instance.
struct Evaluator<'a> {
    utility: &'a FairnessUtility,
    grid: &'a SupportGrid,
    costs: &'a CostMatrix,
    epsilon: f64,
}

struct Point {
    value: f64,
    /// Supergradient with respect to the full allocation vector.
    grad_w: Vec<f64>,
    grad_lambda: f64,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a DroProblem, costs: &'a CostMatrix) -> Self {
        assert_eq!(costs.rows(), problem.dataset().len(), "cost matrix rows");
        assert_eq!(costs.cols(), problem.grid().len(), "cost matrix columns");
        Self {
            utility: problem.utility(),
            grid: problem.grid(),
            costs,
            epsilon: problem.epsilon(),
        }
    }

    fn grid_utilities(&self, w: &[f64]) -> Vec<f64> {
        self.grid
            .points()
            .iter()
            .map(|x| self.utility.value_unchecked(w, x))
            .collect()
    }

    fn minimizers(&self, util: &[f64], lambda: f64) -> (Vec<f64>, Vec<usize>) {
        let n = self.costs.rows();
        let mut a = Vec::with_capacity(n);
        let mut argmin = Vec::with_capacity(n);
        for j in 0..n {
            let row = self.costs.row(j);
            let mut best = f64::INFINITY;
            let mut best_k = 0;
            for (k, (u, c)) in util.iter().zip(row).enumerate() {
                let v = u + lambda * c;
                if v < best {
                    best = v;
                    best_k = k;
                }
            }
            a.push(best);
            argmin.push(best_k);
        }
        (a, argmin)
    }

    fn dual(&self, w: &[f64], lambda: f64) -> DualValue {
        let util = self.grid_utilities(w);
        let (a, argmin) = self.minimizers(&util, lambda);
        let value = -lambda * self.epsilon + mean(&a);
        DualValue { value, a, argmin }
    }

    fn point(&self, w: &[f64], lambda: f64) -> Point {
        let util = self.grid_utilities(w);
        let (a, argmin) = self.minimizers(&util, lambda);
        let n = a.len() as f64;
        let mut counts = vec![0usize; self.grid.len()];
        let mut mean_cost = 0.0;
        for (j, &k) in argmin.iter().enumerate() {
            counts[k] += 1;
            mean_cost += self.costs.get(j, k);
        }
        let mut grad_w = vec![0.0; w.len()];
        for (k, &c) in counts.iter().enumerate() {
            if c > 0 {
                self.utility
                    .gradient_into(w, self.grid.point(k), c as f64 / n, &mut grad_w);
            }
        }
        Point {
            value: -lambda * self.epsilon + mean(&a),
            grad_w,
            grad_lambda: -self.epsilon + mean_cost / n,
        }
    }

    /// Exact maximization over `λ ∈ [0, cap]` for fixed `w` by bisection on
    /// the sign of the λ-supergradient. Returns `(λ, value)`.
    fn best_lambda(&self, w: &[f64], cap: f64, start: (f64, f64)) -> (f64, f64) {
        let util = self.grid_utilities(w);
        let eval = |lambda: f64| -> (f64, f64) {
            let (a, argmin) = self.minimizers(&util, lambda);
            let n = a.len() as f64;
            let slope = -self.epsilon
                + argmin
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| self.costs.get(j, k))
                    .sum::<f64>()
                    / n;
            (-lambda * self.epsilon + mean(&a), slope)
        };
        let mut best = start;
        let mut consider = |lambda: f64, value: f64| {
            if value > best.1 {
                best = (lambda, value);
            }
        };
        let (mut lo, mut hi) = (0.0, cap);
        for _ in 0..200 {
            if hi - lo <= 1e-14 * cap.max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let (v, slope) = eval(mid);
            consider(mid, v);
            if slope > 0.0 {
                lo = mid;
            } else if slope < 0.0 {
                hi = mid;
            } else {
                break;
            }
        }
        for lambda in [lo, hi, 0.0, cap] {
            let (v, _) = eval(lambda);
            consider(lambda, v);
        }
        best
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMethod {
    /// Deep-cut ellipsoid method with a certified optimality gap.
    Ellipsoid,
    /// Projected supergradient ascent with steps `c0/√t`.
    Supergradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub max_iters: usize,
    /// Step scale `c0` of the supergradient method.
    pub step_c0: f64,
    /// Supergradient method stops when the best value improves by less than
    /// this over `stall_window` iterations.
    pub stall_tol: f64,
    pub stall_window: usize,
    /// Ellipsoid method stops once the certified gap falls below
    /// `gap_tol · max(1, |value|)`.
    pub gap_tol: f64,
    /// Cap on λ; `None` uses [`DroProblem::default_lambda_max`].
    pub lambda_max: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Ellipsoid,
            max_iters: 5000,
            step_c0: 0.1,
            stall_tol: 1e-8,
            stall_window: 200,
            gap_tol: 1e-10,
            lambda_max: None,
        }
    }
}

impl SolverConfig {
    pub fn supergradient() -> Self {
        Self {
            method: SolverMethod::Supergradient,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.stall_window == 0 {
            return Err(Error::InvalidParameter("iteration limits must be positive".into()));
        }
        if !(self.step_c0 > 0.0) || !(self.stall_tol > 0.0) || !(self.gap_tol > 0.0) {
            return Err(Error::InvalidParameter("solver tolerances must be positive".into()));
        }
        if let Some(cap) = self.lambda_max {
            if !(cap > 0.0) || !cap.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "lambda_max must be positive, got {cap}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroSolution {
    pub w_star: Allocation,
    pub lambda_star: f64,
    pub g_star: f64,
    pub a: Vec<f64>,
    pub argmin_x: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the supergradient at the returned point.
    pub supergradient_norm: f64,
    /// Certified bound on the distance to the optimal value (ellipsoid
    /// method only).
    pub gap: Option<f64>,
    pub lambda_max: f64,
    /// Noisy mode at ε = 0: the reformulation's value is reported, although
    /// the zero-radius noisy ambiguity set need not be a singleton.
    pub zero_radius_noisy: bool,
}

struct Iterate {
    w: Vec<f64>,
    lambda: f64,
    value: f64,
}

/// Solves the reformulated program, returning the best point found.
pub fn solve_dro(problem: &DroProblem, config: &SolverConfig) -> Result<DroSolution> {
    let costs = build_cost_matrix(problem);
    solve_dro_with_costs(problem, &costs, config)
}

pub fn solve_dro_with_costs(problem: &DroProblem, costs: &CostMatrix, config: &SolverConfig) -> Result<DroSolution> {
    config.validate()?;
    let cap = config.lambda_max.unwrap_or_else(|| problem.default_lambda_max());
    let ev = Evaluator::new(problem, costs);
    let (best, iterations, converged, gap) = match config.method {
        SolverMethod::Ellipsoid => ellipsoid(&ev, problem.dim(), cap, config),
        SolverMethod::Supergradient => supergradient(&ev, problem.dim(), cap, config),
    };

    let (lambda_star, _) = ev.best_lambda(&best.w, cap, (best.lambda, best.value));
    let w_star = project_simplex(&best.w);
    let final_point = ev.point(&w_star, lambda_star);
    let dual = ev.dual(&w_star, lambda_star);
    let mut sg = final_point.grad_w.clone();
    sg.push(final_point.grad_lambda);

    Ok(DroSolution {
        w_star,
        lambda_star,
        g_star: dual.value,
        a: dual.a,
        argmin_x: dual.argmin,
        iterations,
        converged,
        supergradient_norm: norm2(&sg),
        gap,
        lambda_max: cap,
        zero_radius_noisy: problem.mode() == Mode::Noisy && problem.epsilon() == 0.0,
    })
}

/// Reduced coordinates: `z = (w_1, …, w_{n-1}, λ)` with `w_n = 1 − Σ`.
fn unpack(z: &[f64], n: usize) -> (Vec<f64>, f64) {
    let mut w: Vec<f64> = z[..n - 1].to_vec();
    let last = 1.0 - w.iter().sum::<f64>();
    w.push(last);
    (w, z[n - 1])
}

fn reduced_gradient(p: &Point, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n - 1).map(|i| p.grad_w[i] - p.grad_w[n - 1]).collect();
    g.push(p.grad_lambda);
    g
}

/// Most violated constraint of the feasible box, as `(h, q)` with the
/// constraint `h + qᵀ(y − z) ≤ 0` linearized at `z`.
fn violated_constraint(z: &[f64], n: usize, cap: f64) -> Option<(f64, Vec<f64>)> {
    let d = z.len();
    let mut worst: Option<(f64, Vec<f64>)> = None;
    let mut push = |h: f64, q: Vec<f64>| {
        if h > 0.0 && worst.as_ref().is_none_or(|(wh, _)| h > *wh) {
            worst = Some((h, q));
        }
    };
    for i in 0..n - 1 {
        let mut q = vec![0.0; d];
        q[i] = -1.0;
        push(-z[i], q);
    }
    if n > 1 {
        let mut q = vec![1.0; d];
        q[d - 1] = 0.0;
        push(z[..n - 1].iter().sum::<f64>() - 1.0, q);
    }
    let mut q = vec![0.0; d];
    q[d - 1] = -1.0;
    push(-z[d - 1], q.clone());
    q[d - 1] = 1.0;
    push(z[d - 1] - cap, q);
    worst
}

fn quad(p: &[Vec<f64>], q: &[f64]) -> (Vec<f64>, f64) {
    let pq: Vec<f64> = p
        .iter()
        .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
        .collect();
    let s = pq.iter().zip(q).map(|(a, b)| a * b).sum();
    (pq, s)
}

/// Deep-cut ellipsoid method on the reduced coordinates.
fn ellipsoid(ev: &Evaluator, n: usize, cap: f64, cfg: &SolverConfig) -> (Iterate, usize, bool, Option<f64>) {
    let d = n;
    let mut z: Vec<f64> = vec![1.0 / n as f64; n - 1];
    z.push(0.5 * cap);
    // Axis-aligned ellipsoid containing the box [0,1]^(n-1) × [0, cap].
    let mut p: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut row = vec![0.0; d];
            let half = if i < d - 1 { 1.0 } else { 0.5 * cap };
            row[i] = d as f64 * half * half * 1.0001;
            row
        })
        .collect();

    let (w0, l0) = unpack(&z, n);
    let start = ev.point(&w0, l0);
    let mut best = Iterate {
        w: w0,
        lambda: l0,
        value: start.value,
    };
    let mut upper = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let (h, q) = match violated_constraint(&z, n, cap) {
            Some(cut) => cut,
            None => {
                let (w, lambda) = unpack(&z, n);
                let pt = ev.point(&w, lambda);
                if pt.value > best.value {
                    best = Iterate {
                        w,
                        lambda,
                        value: pt.value,
                    };
                }
                let g = reduced_gradient(&pt, n);
                let (_, s) = quad(&p, &g);
                upper = upper.min(pt.value + s.max(0.0).sqrt());
                if g.iter().all(|&c| c == 0.0) {
                    upper = pt.value;
                }
                let neg: Vec<f64> = g.iter().map(|c| -c).collect();
                (best.value - pt.value, neg)
            }
        };
        if upper - best.value <= cfg.gap_tol * best.value.abs().max(1.0) {
            converged = true;
            break;
        }

        let (pq, s) = quad(&p, &q);
        if !(s > 1e-300) {
            break;
        }
        let root = s.sqrt();
        let alpha = h / root;
        if alpha >= 1.0 {
            // No point of the ellipsoid improves on the incumbent.
            upper = upper.min(best.value);
            converged = true;
            break;
        }
        if d == 1 {
            // interval update: keep {y : q(y - z) + h <= 0} ∩ [z - r, z + r]
            let r = p[0][0].sqrt();
            let sign = q[0].signum();
            let cut = z[0] - sign * h / q[0].abs();
            let (lo, hi) = if sign > 0.0 { (z[0] - r, cut) } else { (cut, z[0] + r) };
            z[0] = 0.5 * (lo + hi);
            p[0][0] = (0.5 * (hi - lo)).powi(2);
            continue;
        }
        let b: Vec<f64> = pq.iter().map(|v| v / root).collect();
        let df = d as f64;
        let tau = (1.0 + df * alpha) / (df + 1.0);
        let sigma = 2.0 * (1.0 + df * alpha) / ((df + 1.0) * (1.0 + alpha));
        let delta = df * df * (1.0 - alpha * alpha) / (df * df - 1.0);
        for i in 0..d {
            z[i] -= tau * b[i];
        }
        for i in 0..d {
            for j in 0..d {
                p[i][j] = delta * (p[i][j] - sigma * b[i] * b[j]);
            }
        }
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (p[i][j] + p[j][i]);
                p[i][j] = avg;
                p[j][i] = avg;
            }
        }
    }
    let gap = (upper - best.value).max(0.0);
    (best, iterations, converged, Some(gap))
}

/// Projected supergradient ascent with normalized steps `c0/√t`.
fn supergradient(ev: &Evaluator, n: usize, cap: f64, cfg: &SolverConfig) -> (Iterate, usize, bool, Option<f64>) {
    let mut w = vec![1.0 / n as f64; n];
    let mut lambda = 0.5 * cap;
    let mut best = Iterate {
        w: w.clone(),
        lambda,
        value: f64::NEG_INFINITY,
    };
    let mut history: Vec<f64> = Vec::with_capacity(cfg.max_iters);
    let mut converged = false;
    let mut iterations = 0;
    for t in 1..=cfg.max_iters {
        iterations = t;
        let pt = ev.point(&w, lambda);
        if pt.value > best.value {
            best = Iterate {
                w: w.clone(),
                lambda,
                value: pt.value,
            };
        }
        history.push(best.value);
        if t > cfg.stall_window && best.value - history[t - 1 - cfg.stall_window] < cfg.stall_tol {
            converged = true;
            break;
        }
        let mut g = pt.grad_w.clone();
        g.push(pt.grad_lambda);
        let gn = norm2(&g);
        if gn == 0.0 {
            converged = true;
            break;
        }
        let step = cfg.step_c0 / (t as f64).sqrt() / gn;
        let moved: Vec<f64> = w.iter().zip(&pt.grad_w).map(|(wi, gi)| wi + step * gi).collect();
        w = project_simplex(&moved).into_inner();
        lambda = (lambda + step * pt.grad_lambda).clamp(0.0, cap);
    }
    (best, iterations, converged, None)
}

/// Baseline value and maximizer of the sample average approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct SaaSolution {
    pub value: f64,
    pub w: Allocation,
    pub iterations: usize,
}

/// `max_w (1/N) Σ_j U(w, x̂★_j)` by projected gradient ascent.
pub fn solve_saa(dataset: &NoisyDataset, utility: &FairnessUtility) -> Result<SaaSolution> {
    let weights = vec![1.0 / dataset.len() as f64; dataset.len()];
    solve_weighted_saa(dataset.samples(), &weights, utility)
}

/// `max_w Σ_j p_j U(w, x_j)` by projected gradient ascent with backtracking.
pub fn solve_weighted_saa(points: &[Vec<f64>], weights: &[f64], utility: &FairnessUtility) -> Result<SaaSolution> {
    if points.is_empty() || points.len() != weights.len() {
        return Err(Error::InvalidInput(
            "need one weight per point and at least one point".into(),
        ));
    }
    let n = utility.n();
    for x in points {
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        if let Some(&bad) = x.iter().find(|&&v| v <= -1.0) {
            return Err(Error::Domain(1.0 + bad));
        }
    }
    if weights.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidInput("weights must be nonnegative".into()));
    }

    let objective = |w: &[f64]| -> f64 {
        points
            .iter()
            .zip(weights)
            .map(|(x, p)| p * utility.value_unchecked(w, x))
            .sum()
    };
    let gradient = |w: &[f64]| -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (x, p) in points.iter().zip(weights) {
            utility.gradient_into(w, x, *p, &mut g);
        }
        g
    };

    let mut w = vec![1.0 / n as f64; n];
    let mut f = objective(&w);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < 200_000 {
        iterations += 1;
        let g = gradient(&w);
        let mut accepted = false;
        while step > 1e-20 {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi + step * gi).collect();
            let next = project_simplex(&trial).into_inner();
            let d: Vec<f64> = next.iter().zip(&w).map(|(a, b)| a - b).collect();
            let lin: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
            let sq: f64 = d.iter().map(|v| v * v).sum();
            let fn_next = objective(&next);
            if fn_next >= f + lin - sq / (2.0 * step) - 1e-15 * f.abs().max(1.0) {
                let moved = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                let improved = fn_next > f;
                if improved || fn_next == f {
                    w = next;
                    f = fn_next.max(f);
                }
                accepted = true;
                if moved <= 1e-13 || !improved {
                    return finish_saa(w, f, iterations);
                }
                step = (step * 2.0).min(1e8);
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    finish_saa(w, f, iterations)
}

fn finish_saa(w: Vec<f64>, value: f64, iterations: usize) -> Result<SaaSolution> {
    Ok(SaaSolution {
        value,
        w: project_simplex(&w),
        iterations,
    })
}

/// Exhaustive maximum of the reformulated objective over a simplex lattice
/// with `w_grid_res` steps per unit and the given λ values.
pub fn oracle_grid_solve(
    problem: &DroProblem,
    costs: &CostMatrix,
    w_grid_res: usize,
    lambda_grid: &[f64],
) -> Result<f64> {
    let n = problem.dim();
    if n > 3 || problem.dataset().len() > 10 || problem.grid().len() > 10 {
        return Err(Error::SizeGuard(format!(
            "n={n}, N={}, |grid|={} exceeds n<=3, N<=10, |grid|<=10",
            problem.dataset().len(),
            problem.grid().len()
        )));
    }
    if w_grid_res == 0 || lambda_grid.is_empty() {
        return Err(Error::InvalidParameter(
            "oracle needs a positive resolution and at least one λ".into(),
        ));
    }
    if lambda_grid.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidParameter("oracle λ values must be >= 0".into()));
    }
    let ev = Evaluator::new(problem, costs);
    let mut best = f64::NEG_INFINITY;
    for w in simplex_lattice(n, w_grid_res) {
        let util = ev.grid_utilities(&w);
        for &lambda in lambda_grid {
            let (a, _) = ev.minimizers(&util, lambda);
            best = best.max(-lambda * problem.epsilon() + mean(&a));
        }
    }
    Ok(best)
}

/// All points `k / res` with nonnegative integer `k` summing to `res`.
pub fn simplex_lattice(n: usize, res: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n - 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=remaining {
            prefix.push(k);
            rec(n, remaining - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, res, &mut Vec::with_capacity(n), &mut out);
    out.into_iter()
        .map(|ks| ks.into_iter().map(|k| k as f64 / res as f64).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{make_bernoulli, make_uniform};
    use crate::support::build_support_grid;
    use proptest::prelude::*;

    fn problem_1d(samples: &[f64], grid: &[f64], kernel: NoiseKernel, alpha: f64, eps: f64, mode: Mode) -> DroProblem {
        let ds = NoisyDataset::new(samples.iter().map(|&v| vec![v]).collect(), "t").unwrap();
        let g = SupportGrid::from_points(grid.iter().map(|&v| vec![v]).collect()).unwrap();
        DroProblem::new(ds, kernel, g, FairnessUtility::new(alpha, 1).unwrap(), eps, mode).unwrap()
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.5, 0.5]).as_slice(), &[0.5, 0.5]);
        assert_eq!(project_simplex(&[2.0, 0.0]).as_slice(), &[1.0, 0.0]);
        let w = project_simplex(&[0.6, 0.6, 0.6]);
        for &v in w.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_optimal(v in prop::collection::vec(-3.0f64..3.0, 1..6)) {
            let w = project_simplex(&v);
            prop_assert!(w.iter().all(|&x| x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // projection optimality: (v - w)·(y - w) <= 0 for vertices y
            for i in 0..v.len() {
                let mut inner = 0.0;
                for k in 0..v.len() {
                    let y = if k == i { 1.0 } else { 0.0 };
                    inner += (v[k] - w[k]) * (y - w[k]);
                }
                prop_assert!(inner <= 1e-10);
            }
        }
    }

    #[test]
    fn allocation_validation() {
        assert!(Allocation::new(vec![0.5, 0.5]).is_ok());
        assert!(Allocation::new(vec![0.5, 0.6]).is_err());
        assert!(Allocation::new(vec![1.5, -0.5]).is_err());
        assert!(Allocation::new(vec![]).is_err());
    }

    #[test]
    fn problem_validation() {
        let ds = NoisyDataset::new(vec![vec![0.5]], "t").unwrap();
        let g = build_support_grid(&[0.0], &[1.0], 3).unwrap();
        let k = make_dirac(1).unwrap();
        let u = FairnessUtility::new(0.0, 1).unwrap();
        assert!(DroProblem::new(ds.clone(), k.clone(), g.clone(), u.clone(), -0.1, Mode::Direct).is_err());
        let g2 = build_support_grid(&[0.0, 0.0], &[1.0, 1.0], 3).unwrap();
        assert!(matches!(
            DroProblem::new(ds.clone(), k.clone(), g2, u.clone(), 0.1, Mode::Direct),
            Err(Error::DimensionMismatch { .. })
        ));
        let bad = SupportGrid::from_points(vec![vec![-1.5], vec![0.0]]).unwrap();
        assert!(matches!(
            DroProblem::new(ds, k, bad, u, 0.1, Mode::Direct),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn cost_matrix_examples() {
        let p = problem_1d(&[1.0], &[0.0, 1.0], make_dirac(1).unwrap(), 0.0, 0.1, Mode::Direct);
        let c = build_cost_matrix(&p);
        assert_eq!(c.row(0), &[1.0, 0.0]);

        let p = problem_1d(
            &[0.5],
            &[0.5],
            make_uniform(-0.01, 0.01, 3, 1).unwrap(),
            0.0,
            0.1,
            Mode::Noisy,
        );
        assert!((build_cost_matrix(&p).get(0, 0) - 1.0 / 150.0).abs() < 1e-15);
        // direct mode ignores the kernel
        let d = p.with_mode(Mode::Direct);
        assert_eq!(build_cost_matrix(&d).get(0, 0), 0.0);
    }

    #[test]
    fn dual_objective_two_term_enumeration() {
        let p = problem_1d(&[1.0], &[0.0, 1.0], make_dirac(1).unwrap(), 0.0, 0.1, Mode::Direct);
        let c = build_cost_matrix(&p);
        let d = dual_objective(&p, &c, &[1.0], 0.5);
        assert_eq!(d.a, vec![0.5]);
        assert_eq!(d.argmin, vec![0]);
        assert!((d.value - 0.45).abs() < 1e-15);
    }

    #[test]
    fn dual_objective_at_zero_lambda_is_grid_minimum() {
        let p = problem_1d(
            &[0.2, 0.9, 0.4],
            &[0.0, 0.5, 1.0],
            make_dirac(1).unwrap(),
            2.0,
            0.1,
            Mode::Direct,
        );
        let c = build_cost_matrix(&p);
        let d = dual_objective(&p, &c, &[1.0], 0.0);
        for &a in &d.a {
            assert_eq!(a, 0.0);
        }
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn ties_pick_smallest_index() {
        // utility 0 at x=0 with cost 1·λ, utility 1 at x=1 with cost 0: tie at λ=1
        let p = problem_1d(&[1.0], &[0.0, 1.0], make_dirac(1).unwrap(), 0.0, 0.0, Mode::Direct);
        let c = build_cost_matrix(&p);
        assert_eq!(dual_objective(&p, &c, &[1.0], 1.0).argmin, vec![0]);
    }

    #[test]
    fn scalar_saa_examples() {
        let ds = NoisyDataset::new(vec![vec![1.0]], "t").unwrap();
        let s = solve_saa(&ds, &FairnessUtility::new(0.0, 1).unwrap()).unwrap();
        assert_eq!(s.w.as_slice(), &[1.0]);
        assert!((s.value - 1.0).abs() < 1e-15);

        let ds = NoisyDataset::new(vec![vec![1.0, 1.0]], "t").unwrap();
        let s = solve_saa(&ds, &FairnessUtility::new(1.0, 2).unwrap()).unwrap();
        assert!((s.w[0] - 0.5).abs() < 1e-9);
        assert!((s.value - 2.0 * 1.5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn one_dimensional_solve_uses_interval_method() {
        let p = problem_1d(
            &[0.5, 1.0],
            &[0.0, 0.5, 1.0],
            make_dirac(1).unwrap(),
            0.0,
            0.1,
            Mode::Direct,
        );
        let s = solve_dro(&p, &SolverConfig::default()).unwrap();
        assert!(s.converged);
        // worst case shifts mass 0.1 downward at unit price: 0.75 - 0.1
        assert!((s.g_star - 0.65).abs() < 1e-9, "{}", s.g_star);
        assert!((s.lambda_star - 1.0).abs() < 1e-9, "{}", s.lambda_star);
    }

    #[test]
    fn epigraph_values_match_objective() {
        let samples = [0.1, 0.35, 0.8, 0.95];
        let grid: Vec<f64> = (0..5).map(|k| k as f64 * 0.25).collect();
        let p = problem_1d(
            &samples,
            &grid,
            make_uniform(-0.02, 0.02, 3, 1).unwrap(),
            1.0,
            0.05,
            Mode::Noisy,
        );
        let s = solve_dro(&p, &SolverConfig::default()).unwrap();
        let mean_a = s.a.iter().sum::<f64>() / s.a.len() as f64;
        assert!((s.g_star - (-s.lambda_star * 0.05 + mean_a)).abs() < 1e-9);
        let c = build_cost_matrix(&p);
        let again = dual_objective(&p, &c, &s.w_star, s.lambda_star);
        assert_eq!(again.a, s.a);
        assert_eq!(again.argmin, s.argmin_x);
    }

    #[test]
    fn zero_radius_noisy_is_flagged() {
        let p = problem_1d(
            &[0.5],
            &[0.0, 0.5, 1.0],
            make_bernoulli(0.5, 0.01, 1).unwrap(),
            0.0,
            0.0,
            Mode::Noisy,
        );
        assert!(solve_dro(&p, &SolverConfig::default()).unwrap().zero_radius_noisy);
        assert!(
            !solve_dro(&p.with_mode(Mode::Direct), &SolverConfig::default())
                .unwrap()
                .zero_radius_noisy
        );
    }

    #[test]
    fn lattice_counts() {
        assert_eq!(simplex_lattice(2, 10).len(), 11);
        assert_eq!(simplex_lattice(3, 4).len(), 15);
        for w in simplex_lattice(3, 7) {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_size_guard() {
        let samples: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let p = problem_1d(&samples, &[0.0, 1.0], make_dirac(1).unwrap(), 0.0, 0.1, Mode::Direct);
        let c = build_cost_matrix(&p);
        assert!(matches!(
            oracle_grid_solve(&p, &c, 10, &[0.0]),
            Err(Error::SizeGuard(_))
        ));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let p = problem_1d(&[0.5], &[0.0, 1.0], make_dirac(1).unwrap(), 0.0, 0.1, Mode::Direct);
        let cfg = SolverConfig {
            max_iters: 0,
            ..SolverConfig::default()
        };
        assert!(solve_dro(&p, &cfg).is_err());
        let cfg = SolverConfig {
            lambda_max: Some(-1.0),
            ..SolverConfig::default()
        };
        assert!(solve_dro(&p, &cfg).is_err());
    }
}
