use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use noisy_dro::noise::{
    make_bernoulli, make_binomial, make_dirac, make_poisson, make_softmax, make_truncated_normal, make_uniform,
    DEFAULT_LEVELS, DEFAULT_POISSON_KMAX,
};
use noisy_dro::support::build_support_grid;
use noisy_dro::{Mode, NoiseKernel, SolverConfig, SolverMethod, SupportGrid};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: PathBuf,
    pub base_station: String,
    /// Group records by user type into 3-dimensional samples; otherwise each
    /// record is one scalar sample.
    #[serde(default = "yes")]
    pub grouped: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub levels: Option<usize>,
    /// Shift the kernel to zero mean.
    #[serde(default)]
    pub center: bool,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: "dirac".into(),
            params: BTreeMap::new(),
            levels: None,
            center: false,
        }
    }
}

impl KernelSpec {
    pub fn build(&self, dim: usize) -> Result<NoiseKernel> {
        let allowed: &[&str] = match self.family.as_str() {
            "dirac" => &[],
            "uniform" => &["a", "b"],
            "truncated_normal" => &["mu", "sigma", "a", "b"],
            "softmax" => &["a", "b", "diam"],
            "bernoulli" => &["p", "a"],
            "binomial" => &["p", "m", "a"],
            "poisson" => &["rate", "a", "k_max"],
            other => bail!("unknown kernel family '{other}'"),
        };
        if let Some(bad) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            bail!("kernel family '{}' has no parameter '{bad}'", self.family);
        }
        let get = |k: &str| {
            self.params
                .get(k)
                .copied()
                .ok_or_else(|| anyhow!("kernel family '{}' needs parameter '{k}'", self.family))
        };
        let count = |k: &str, default: Option<usize>| -> Result<usize> {
            match self.params.get(k) {
                Some(&v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as usize),
                Some(&v) => bail!("kernel parameter '{k}' must be a nonnegative integer, got {v}"),
                None => default.ok_or_else(|| anyhow!("kernel family '{}' needs parameter '{k}'", self.family)),
            }
        };
        let levels = self.levels.unwrap_or(DEFAULT_LEVELS);
        let kernel = match self.family.as_str() {
            "dirac" => make_dirac(dim),
            "uniform" => make_uniform(get("a")?, get("b")?, levels, dim),
            "truncated_normal" => make_truncated_normal(
                self.params.get("mu").copied().unwrap_or(0.0),
                get("sigma")?,
                get("a")?,
                get("b")?,
                levels,
                dim,
            ),
            "softmax" => make_softmax(
                get("a")?,
                get("b")?,
                levels,
                dim,
                self.params.get("diam").copied().unwrap_or(dim as f64),
            ),
            "bernoulli" => make_bernoulli(get("p")?, get("a")?, dim),
            "binomial" => make_binomial(get("p")?, count("m", None)?, get("a")?, dim),
            "poisson" => make_poisson(
                get("rate")?,
                get("a")?,
                count("k_max", Some(DEFAULT_POISSON_KMAX))?,
                dim,
            ),
            _ => unreachable!(),
        }?;
        Ok(if self.center { kernel.centered() } else { kernel })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Option<Vec<f64>>,
    pub hi: Option<Vec<f64>>,
    #[serde(default = "default_grid_levels")]
    pub levels: usize,
    /// Add the observed samples to the support so that the direct-mode
    /// ambiguity set is non-empty at every radius.
    #[serde(default = "yes")]
    pub include_samples: bool,
}

fn default_grid_levels() -> usize {
    5
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: None,
            hi: None,
            levels: default_grid_levels(),
            include_samples: true,
        }
    }
}

impl GridSpec {
    pub fn build(&self, dim: usize, samples: &[Vec<f64>]) -> Result<SupportGrid> {
        let lo = self.lo.clone().unwrap_or_else(|| vec![0.0; dim]);
        let hi = self.hi.clone().unwrap_or_else(|| vec![1.0; dim]);
        if lo.len() != dim || hi.len() != dim {
            bail!(
                "grid bounds must have {dim} coordinates, got {} and {}",
                lo.len(),
                hi.len()
            );
        }
        let grid = build_support_grid(&lo, &hi, self.levels)?;
        if !self.include_samples {
            return Ok(grid);
        }
        let mut points = grid.points().to_vec();
        points.extend(samples.iter().cloned());
        Ok(SupportGrid::from_points(points)?)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSpec {
    pub method: String,
    pub max_iters: usize,
    pub step_c0: f64,
    pub stall_tol: f64,
    pub stall_window: usize,
    pub gap_tol: f64,
    pub lambda_max: Option<f64>,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            method: "ellipsoid".into(),
            max_iters: d.max_iters,
            step_c0: d.step_c0,
            stall_tol: d.stall_tol,
            stall_window: d.stall_window,
            gap_tol: d.gap_tol,
            lambda_max: d.lambda_max,
        }
    }
}

impl SolverSpec {
    pub fn build(&self) -> Result<SolverConfig> {
        let method = match self.method.as_str() {
            "ellipsoid" => SolverMethod::Ellipsoid,
            "supergradient" => SolverMethod::Supergradient,
            other => bail!("unknown solver method '{other}' (expected ellipsoid or supergradient)"),
        };
        Ok(SolverConfig {
            method,
            max_iters: self.max_iters,
            step_c0: self.step_c0,
            stall_tol: self.stall_tol,
            stall_window: self.stall_window,
            gap_tol: self.gap_tol,
            lambda_max: self.lambda_max,
        })
    }
}

/// Settings of the statistical experiments run by `stats`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSpec {
    /// Dimension of the synthetic world.
    pub dim: usize,
    /// Grid levels per dimension of the synthetic world.
    pub levels: usize,
    /// Latent pmf over the world grid; uniform when absent.
    pub latent_pmf: Option<Vec<f64>>,
    pub betas: Vec<f64>,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub reference_factor: usize,
    pub c1: f64,
    /// Fitted at `pilot_n` when absent.
    pub c2: Option<f64>,
    pub a: f64,
    pub pilot_n: usize,
    pub beta0: f64,
    pub consistency_ns: Vec<usize>,
    pub seeds: usize,
    pub alpha: f64,
    pub deltas: Vec<f64>,
}

impl Default for StatsSpec {
    fn default() -> Self {
        Self {
            dim: 1,
            levels: 5,
            latent_pmf: None,
            betas: vec![0.05, 0.1],
            ns: vec![10, 100, 1000],
            trials: 200,
            reference_factor: 50,
            c1: std::f64::consts::E,
            c2: None,
            a: 2.0,
            pilot_n: 100,
            beta0: 0.05,
            consistency_ns: vec![10, 100, 1000],
            seeds: 20,
            alpha: 1.0,
            deltas: vec![0.005, 0.01, 0.02],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub kernel: KernelSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stats: StatsSpec,
}

pub fn default_epsilons() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 100.0).collect()
}

pub fn default_alphas() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 100.0]
}

fn default_modes() -> Vec<String> {
    vec!["direct".into(), "noisy".into()]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    /// Reads a TOML config. Relative dataset and output paths are resolved
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.dataset.path.is_relative() {
            cfg.dataset.path = base.join(&cfg.dataset.path);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.alphas.is_empty() || self.modes.is_empty() {
            bail!("epsilons, alphas and modes must be non-empty");
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            bail!("epsilon values must be finite and >= 0, got {e}");
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            bail!("alpha values must be finite and >= 0, got {a}");
        }
        self.modes()?;
        self.solver.build()?;
        Ok(())
    }

    pub fn modes(&self) -> Result<Vec<Mode>> {
        self.modes
            .iter()
            .map(|m| m.parse::<Mode>().map_err(|e| anyhow!("{e}")))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = parse("[dataset]\npath = \"x.csv\"\nbase_station = \"BS1\"\n").unwrap();
        assert_eq!(cfg.epsilons.len(), 10);
        assert_eq!(cfg.epsilons[0], 0.01);
        assert_eq!(cfg.epsilons[9], 0.1);
        assert_eq!(cfg.alphas, default_alphas());
        assert_eq!(cfg.modes().unwrap(), vec![Mode::Direct, Mode::Noisy]);
        assert_eq!(cfg.grid.levels, 5);
        assert!(cfg.dataset.grouped);
        assert!(cfg.kernel.build(3).unwrap().is_dirac());
        assert!(cfg.grid.include_samples);
        let g = cfg.grid.build(1, &[vec![0.3], vec![0.5]]).unwrap();
        assert_eq!(g.len(), 6);
        assert!(g.position(&[0.3]).is_some());
    }

    #[test]
    fn rejects_bad_values() {
        let base = "[dataset]\npath = \"x.csv\"\nbase_station = \"BS1\"\n";
        assert!(parse(&format!("epsilons = [-0.1]\n{base}")).is_err());
        assert!(parse(&format!("alphas = []\n{base}")).is_err());
        assert!(parse(&format!("modes = [\"sideways\"]\n{base}")).is_err());
        assert!(parse(&format!("unknown_key = 1\n{base}")).is_err());
        assert!(parse(&format!("{base}[solver]\nmethod = \"newton\"\n")).is_err());
    }

    #[test]
    fn kernel_specs() {
        let spec = |family: &str, params: &[(&str, f64)]| KernelSpec {
            family: family.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            levels: None,
            center: false,
        };
        assert_eq!(spec("uniform", &[("a", -0.1), ("b", 0.1)]).build(2).unwrap().len(), 9);
        assert_eq!(
            spec("poisson", &[("rate", 1.0), ("a", 0.01)]).build(1).unwrap().len(),
            9
        );
        assert!(spec("uniform", &[("a", -0.1)]).build(1).is_err());
        assert!(spec("uniform", &[("a", -0.1), ("b", 0.1), ("c", 1.0)])
            .build(1)
            .is_err());
        assert!(spec("binomial", &[("p", 0.5), ("m", 2.5), ("a", 0.1)])
            .build(1)
            .is_err());
        assert!(spec("gamma", &[]).build(1).is_err());
        let mut b = spec("bernoulli", &[("p", 0.5), ("a", 0.1)]);
        b.center = true;
        let k = b.build(1).unwrap();
        let mean: f64 = k.offsets().iter().zip(k.probs()).map(|(e, p)| e[0] * p).sum();
        assert!(mean.abs() < 1e-15);
    }
}
