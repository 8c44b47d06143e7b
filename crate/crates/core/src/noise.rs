//! Discrete additive noise kernels.
//!
//! An observation is `x★ = x + e` where the offset `e` is drawn from a finite
//! set with fixed probabilities, independently of `x`. All families are
//! product measures over the coordinates.

use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::support::{cartesian, lex_cmp, uniform_levels, SupportGrid};

/// Default number of grid levels per dimension for continuous families.
pub const DEFAULT_LEVELS: usize = 3;
/// Default Poisson truncation point.
pub const DEFAULT_POISSON_KMAX: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum NoiseFamily {
    Dirac,
    Uniform {
        a: f64,
        b: f64,
        levels: usize,
    },
    TruncatedNormal {
        mu: f64,
        sigma: f64,
        a: f64,
        b: f64,
        levels: usize,
    },
    Softmax {
        a: f64,
        b: f64,
        levels: usize,
        diam: f64,
    },
    Bernoulli {
        p: f64,
        a: f64,
    },
    Binomial {
        p: f64,
        m: usize,
        a: f64,
    },
    Poisson {
        rate: f64,
        a: f64,
        k_max: usize,
    },
}

impl NoiseFamily {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseFamily::Dirac => "dirac",
            NoiseFamily::Uniform { .. } => "uniform",
            NoiseFamily::TruncatedNormal { .. } => "truncated_normal",
            NoiseFamily::Softmax { .. } => "softmax",
            NoiseFamily::Bernoulli { .. } => "bernoulli",
            NoiseFamily::Binomial { .. } => "binomial",
            NoiseFamily::Poisson { .. } => "poisson",
        }
    }
}

/// Finite noise distribution: offsets `e` with probabilities `P(E = e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseKernel {
    family: NoiseFamily,
    dim: usize,
    offsets: Vec<Vec<f64>>,
    probs: Vec<f64>,
    /// Constant vector added to every offset after construction.
    shift: Option<Vec<f64>>,
}

/// Mean offset of a kernel and its ℓ₁ norm.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBias {
    pub bias: Vec<f64>,
    pub delta: f64,
}

impl NoiseKernel {
    pub fn family(&self) -> &NoiseFamily {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offsets(&self) -> &[Vec<f64>] {
        &self.offsets
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn shift(&self) -> Option<&[f64]> {
        self.shift.as_deref()
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn is_dirac(&self) -> bool {
        self.offsets.len() == 1 && self.offsets[0].iter().all(|&v| v == 0.0)
    }

    /// Label used in result tables, e.g. `uniform` or `bernoulli+centered`.
    pub fn label(&self) -> String {
        match &self.shift {
            None => self.family.name().to_string(),
            Some(_) if kernel_mean(self).delta < 1e-15 => format!("{}+centered", self.family.name()),
            Some(_) => format!("{}+shifted", self.family.name()),
        }
    }

    /// Same kernel with every offset moved by `bias`.
    pub fn shifted(&self, bias: &[f64]) -> Result<Self> {
        check_dim(self.dim, bias.len())?;
        if bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("shift must be finite".into()));
        }
        let offsets = self
            .offsets
            .iter()
            .map(|e| e.iter().zip(bias).map(|(x, b)| x + b).collect())
            .collect();
        let total: Vec<f64> = match &self.shift {
            Some(s) => s.iter().zip(bias).map(|(x, b)| x + b).collect(),
            None => bias.to_vec(),
        };
        Ok(Self {
            family: self.family.clone(),
            dim: self.dim,
            offsets,
            probs: self.probs.clone(),
            shift: Some(total),
        })
    }

    /// Mean-preserving version: the kernel shifted by minus its mean.
    pub fn centered(&self) -> Self {
        let mean = kernel_mean(self).bias;
        let neg: Vec<f64> = mean.iter().map(|m| -m).collect();
        self.shifted(&neg).expect("mean has kernel dimension")
    }

    /// Builds a kernel from per-dimension axis pmfs, repeated `dim` times.
    fn product(family: NoiseFamily, values: &[f64], weights: &[f64], dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        let axis_total: f64 = weights.iter().sum();
        if !(axis_total > 0.0) || !axis_total.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{} weights do not form a distribution",
                family.name()
            )));
        }
        let axis: Vec<(f64, f64)> = values.iter().zip(weights).map(|(&v, &w)| (v, w / axis_total)).collect();
        let axes = vec![axis; dim];
        let mut pairs: Vec<(Vec<f64>, f64)> = cartesian(&axes)
            .into_iter()
            .map(|combo| {
                let e = combo.iter().map(|(v, _)| *v).collect();
                let p = combo.iter().map(|(_, p)| *p).product();
                (e, p)
            })
            .collect();

        pairs.sort_by(|x, y| lex_cmp(&x.0, &y.0));
        let mut offsets: Vec<Vec<f64>> = Vec::with_capacity(pairs.len());
        let mut probs: Vec<f64> = Vec::with_capacity(pairs.len());
        for (e, p) in pairs {
            if offsets.last() == Some(&e) {
                *probs.last_mut().unwrap() += p;
            } else {
                offsets.push(e);
                probs.push(p);
            }
        }
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self {
            family,
            dim,
            offsets,
            probs,
            shift: None,
        })
    }
}

impl fmt::Display for NoiseKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (n={}, |E|={})", self.label(), self.dim, self.offsets.len())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter("noise bounds must be finite".into()));
    }
    if !(a > -1.0) {
        return Err(Error::InvalidParameter(format!(
            "lower noise bound must exceed -1, got {a}"
        )));
    }
    if a >= b {
        return Err(Error::InvalidBounds);
    }
    Ok(())
}

fn check_levels(levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::InvalidParameter("levels must be >= 1".into()));
    }
    Ok(())
}

/// Noise-free kernel: the single offset 0.
pub fn make_dirac(dim: usize) -> Result<NoiseKernel> {
    NoiseKernel::product(NoiseFamily::Dirac, &[0.0], &[1.0], dim)
}

/// Equal mass on a uniform grid over `[a, b]^n`.
pub fn make_uniform(a: f64, b: f64, levels: usize, dim: usize) -> Result<NoiseKernel> {
    check_interval(a, b)?;
    check_levels(levels)?;
    let values = uniform_levels(a, b, levels);
    let weights = vec![1.0; levels];
    NoiseKernel::product(NoiseFamily::Uniform { a, b, levels }, &values, &weights, dim)
}

/// Normal density evaluated on a uniform grid over `[a, b]^n`, renormalized.
pub fn make_truncated_normal(mu: f64, sigma: f64, a: f64, b: f64, levels: usize, dim: usize) -> Result<NoiseKernel> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    if !mu.is_finite() {
        return Err(Error::InvalidParameter("mu must be finite".into()));
    }
    check_interval(a, b)?;
    check_levels(levels)?;
    let values = uniform_levels(a, b, levels);
    // Shift the exponent so that the largest weight is exp(0).
    let z: Vec<f64> = values.iter().map(|e| -0.5 * ((e - mu) / sigma).powi(2)).collect();
    let zmax = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = z.iter().map(|v| (v - zmax).exp()).collect();
    NoiseKernel::product(
        NoiseFamily::TruncatedNormal {
            mu,
            sigma,
            a,
            b,
            levels,
        },
        &values,
        &weights,
        dim,
    )
}

/// Probabilities proportional to `exp(‖e‖₁ / diam)` on a uniform grid.
pub fn make_softmax(a: f64, b: f64, levels: usize, dim: usize, diam: f64) -> Result<NoiseKernel> {
    if !(diam > 0.0) || !diam.is_finite() {
        return Err(Error::InvalidParameter(format!("diam must be positive, got {diam}")));
    }
    check_interval(a, b)?;
    check_levels(levels)?;
    let values = uniform_levels(a, b, levels);
    // exp(‖e‖₁/d) factorizes as the product of exp(|e_i|/d).
    let weights: Vec<f64> = values.iter().map(|e| (e.abs() / diam).exp()).collect();
    NoiseKernel::product(NoiseFamily::Softmax { a, b, levels, diam }, &values, &weights, dim)
}

fn check_step(a: f64) -> Result<()> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be nonnegative, got {a}")));
    }
    Ok(())
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Each coordinate is `a` with probability `p`, else 0.
pub fn make_bernoulli(p: f64, a: f64, dim: usize) -> Result<NoiseKernel> {
    check_prob(p)?;
    check_step(a)?;
    NoiseKernel::product(NoiseFamily::Bernoulli { p, a }, &[0.0, a], &[1.0 - p, p], dim)
}

/// Each coordinate is `k·a` with `k ~ Binomial(m, p)`.
pub fn make_binomial(p: f64, m: usize, a: f64, dim: usize) -> Result<NoiseKernel> {
    check_prob(p)?;
    check_step(a)?;
    if m == 0 {
        return Err(Error::InvalidParameter("number of trials must be >= 1".into()));
    }
    let values: Vec<f64> = (0..=m).map(|k| k as f64 * a).collect();
    let weights: Vec<f64> = (0..=m)
        .map(|k| binomial_coefficient(m, k) * p.powi(k as i32) * (1.0 - p).powi((m - k) as i32))
        .collect();
    NoiseKernel::product(NoiseFamily::Binomial { p, m, a }, &values, &weights, dim)
}

/// Each coordinate is `k·a` with `k ~ Poisson(rate)` truncated at `k_max`
/// and renormalized.
pub fn make_poisson(rate: f64, a: f64, k_max: usize, dim: usize) -> Result<NoiseKernel> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "Poisson rate must be positive, got {rate}"
        )));
    }
    check_step(a)?;
    let values: Vec<f64> = (0..=k_max).map(|k| k as f64 * a).collect();
    let mut weights = Vec::with_capacity(k_max + 1);
    let mut w = (-rate).exp();
    for k in 0..=k_max {
        if k > 0 {
            w *= rate / k as f64;
        }
        weights.push(w);
    }
    NoiseKernel::product(NoiseFamily::Poisson { rate, a, k_max }, &values, &weights, dim)
}

fn binomial_coefficient(m: usize, k: usize) -> f64 {
    let k = k.min(m - k);
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// `E‖x + E − x̂‖₁` under the kernel.
pub fn expected_transport_cost(kernel: &NoiseKernel, x: &[f64], xhat: &[f64]) -> Result<f64> {
    check_dim(kernel.dim, x.len())?;
    check_dim(kernel.dim, xhat.len())?;
    let diff: Vec<f64> = x.iter().zip(xhat).map(|(a, b)| a - b).collect();
    Ok(cost_with_diff(kernel, &diff))
}

/// Cost for a precomputed difference `x − x̂`; dimensions are not checked.
pub(crate) fn cost_with_diff(kernel: &NoiseKernel, diff: &[f64]) -> f64 {
    kernel
        .offsets
        .iter()
        .zip(&kernel.probs)
        .map(|(e, p)| p * e.iter().zip(diff).map(|(ei, d)| (d + ei).abs()).sum::<f64>())
        .sum()
}

pub fn kernel_mean(kernel: &NoiseKernel) -> KernelBias {
    let mut bias = vec![0.0; kernel.dim];
    for (e, p) in kernel.offsets.iter().zip(&kernel.probs) {
        for (b, v) in bias.iter_mut().zip(e) {
            *b += p * v;
        }
    }
    let delta = bias.iter().map(|b| b.abs()).sum();
    KernelBias { bias, delta }
}

/// All points `x + e`, deduplicated and sorted.
pub fn noisy_support(kernel: &NoiseKernel, grid: &SupportGrid) -> Result<SupportGrid> {
    check_dim(kernel.dim, grid.dim())?;
    let points = grid
        .points()
        .iter()
        .flat_map(|x| {
            kernel
                .offsets
                .iter()
                .map(move |e| x.iter().zip(e).map(|(a, b)| a + b).collect::<Vec<f64>>())
        })
        .collect();
    SupportGrid::from_points(points)
}

/// Reusable sampler over a kernel's offsets.
#[derive(Debug, Clone)]
pub struct NoiseSampler<'a> {
    kernel: &'a NoiseKernel,
    index: WeightedIndex<f64>,
}

impl<'a> NoiseSampler<'a> {
    pub fn new(kernel: &'a NoiseKernel) -> Self {
        let index = WeightedIndex::new(&kernel.probs).expect("kernel probabilities form a distribution");
        Self { kernel, index }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &'a [f64] {
        &self.kernel.offsets[self.index.sample(rng)]
    }
}

/// Draws one offset. Prefer [`NoiseSampler`] for repeated draws.
pub fn sample_noise<R: Rng + ?Sized>(kernel: &NoiseKernel, rng: &mut R) -> Vec<f64> {
    NoiseSampler::new(kernel).sample(rng).to_vec()
}
