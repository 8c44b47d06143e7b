use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use noisy_dro::dro::solve_dro_with_costs;
use noisy_dro::metrics::{run_sweep, system_baselines, MetricsReport, SweepSpec};
use noisy_dro::stats::{
    biased_bound_experiment, calibrate_c2, consistency_experiment, coverage_experiment, EpsilonSchedule, RadiusRule,
    SyntheticWorld,
};
use noisy_dro::support::{build_support_grid, ingest_dataset, ingest_grouped};
use noisy_dro::{build_cost_matrix, DroProblem, FairnessUtility, Mode, NoisyDataset};

use crate::config::ExperimentConfig;

/// Error carrying the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Data(anyhow::Error),
    Solver(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 1,
            Failure::Data(_) => 2,
            Failure::Solver(_) => 3,
        }
    }

    fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure::Config(e.into())
    }

    fn data(e: impl Into<anyhow::Error>) -> Self {
        Failure::Data(e.into())
    }

    /// Library errors from a solve: bad input data maps to the data code,
    /// everything else is a solver failure.
    fn from_core(e: noisy_dro::Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.into())
        } else {
            Failure::Solver(e.into())
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (kind, e) = match self {
            Failure::Config(e) => ("config error", e),
            Failure::Data(e) => ("data error", e),
            Failure::Solver(e) => ("solver error", e),
        };
        write!(f, "{kind}: {e:#}")
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

fn load_dataset(cfg: &ExperimentConfig) -> CmdResult<NoisyDataset> {
    let d = &cfg.dataset;
    let ds = if d.grouped {
        ingest_grouped(&d.path, &d.base_station)
    } else {
        ingest_dataset(&d.path, &d.base_station)
    };
    ds.map_err(|e| Failure::data(anyhow!(e).context(format!("ingesting {}", d.path.display()))))
}

fn sweep_spec(cfg: &ExperimentConfig) -> CmdResult<SweepSpec> {
    let dataset = load_dataset(cfg)?;
    let dim = dataset.dim();
    Ok(SweepSpec {
        kernel: cfg.kernel.build(dim).map_err(Failure::config)?,
        grid: cfg.grid.build(dim, dataset.samples()).map_err(Failure::config)?,
        dataset,
        epsilons: cfg.epsilons.clone(),
        alphas: cfg.alphas.clone(),
        modes: cfg.modes().map_err(Failure::config)?,
    })
}

fn create_out(dir: &Path, name: &str) -> CmdResult<(PathBuf, csv::Writer<File>)> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(Failure::config)?;
    let path = dir.join(name);
    let w = csv::Writer::from_path(&path)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::config)?;
    Ok((path, w))
}

fn io_fail(path: PathBuf) -> impl Fn(csv::Error) -> Failure {
    move |e| Failure::config(anyhow!(e).context(format!("writing {}", path.display())))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn results_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "epsilon",
        "alpha",
        "mode",
        "kernel",
        "g_star",
        "lambda_star",
        "poa",
        "pof",
        "dispersion",
        "converged",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((1..=n).map(|i| format!("w_{i}")));
    h
}

fn write_results(path: &Path, mut w: csv::Writer<File>, report: &MetricsReport, n: usize) -> CmdResult<()> {
    let fail = io_fail(path.to_path_buf());
    w.write_record(results_header(n)).map_err(&fail)?;
    for r in &report.rows {
        let mut rec = vec![
            r.epsilon.to_string(),
            r.alpha.to_string(),
            r.mode.to_string(),
            r.kernel.clone(),
            r.g_star.to_string(),
            r.lambda_star.to_string(),
            opt(r.poa),
            opt(r.pof),
            r.dispersion.to_string(),
            r.converged.to_string(),
        ];
        rec.extend(r.w_star.iter().map(|x| x.to_string()));
        w.write_record(rec).map_err(&fail)?;
    }
    w.flush().map_err(|e| fail(e.into()))
}

fn warn_baselines(report: &MetricsReport) {
    for &(alpha, v) in &report.system {
        if !(v > 0.0) {
            eprintln!("warning: SYSTEM({alpha}) = {v} is not positive; POA left blank");
        }
    }
}

/// Runs the (ε, α, mode) sweep and writes `results.csv`.
pub fn cmd_solve(cfg: &ExperimentConfig) -> CmdResult<PathBuf> {
    let spec = sweep_spec(cfg)?;
    let solver = cfg.solver.build().map_err(Failure::config)?;
    let report = run_sweep(&spec, &solver).map_err(Failure::from_core)?;
    warn_baselines(&report);
    let (path, w) = create_out(&cfg.output_dir, "results.csv")?;
    write_results(&path, w, &report, spec.dataset.dim())?;

    let unconverged = report.rows.iter().filter(|r| !r.converged).count();
    println!(
        "solved {} problems ({} samples, dimension {}, {} grid points, kernel {})",
        report.rows.len(),
        spec.dataset.len(),
        spec.dataset.dim(),
        spec.grid.len(),
        spec.kernel.label()
    );
    if unconverged > 0 {
        println!("warning: {unconverged} solves hit the iteration budget");
    }
    let capped = report
        .rows
        .iter()
        .filter(|r| r.lambda_star >= r.lambda_max * (1.0 - 1e-9))
        .count();
    if capped > 0 {
        println!(
            "warning: {capped} solves have lambda* at its cap; there the radius is below the smallest \
             reachable transport cost and g_star reflects the cap"
        );
    }
    let mut worst: Option<f64> = None;
    for r in report.rows.iter().filter(|r| r.mode == Mode::Noisy) {
        if let Some(d) = report.row(r.epsilon, r.alpha, Mode::Direct) {
            let gap = r.g_star - d.g_star;
            worst = Some(worst.map_or(gap, |w: f64| w.min(gap)));
        }
    }
    if let Some(w) = worst {
        println!("min over rows of g_noisy - g_direct: {w:.3e}");
    }
    println!("wrote {}", path.display());
    Ok(path)
}

/// Computes SYSTEM(α) and SYSTEM_F(mode, ε) and writes `saa.csv`.
pub fn cmd_saa(cfg: &ExperimentConfig) -> CmdResult<PathBuf> {
    let spec = sweep_spec(cfg)?;
    let solver = cfg.solver.build().map_err(Failure::config)?;
    let system = system_baselines(&spec.dataset, &spec.alphas).map_err(Failure::from_core)?;

    let n = spec.dataset.dim();
    let base = DroProblem::new(
        spec.dataset.clone(),
        spec.kernel.clone(),
        spec.grid.clone(),
        FairnessUtility::new(0.0, n).map_err(Failure::config)?,
        0.0,
        Mode::Direct,
    )
    .map_err(Failure::config)?;
    let mut modes = spec.modes.clone();
    modes.sort();
    modes.dedup();
    let mut epsilons = spec.epsilons.clone();
    epsilons.sort_by(f64::total_cmp);
    epsilons.dedup();
    let mut system_f = Vec::new();
    for &mode in &modes {
        let p = base.with_mode(mode);
        let costs = build_cost_matrix(&p);
        for &eps in &epsilons {
            let s = solve_dro_with_costs(&p.with_epsilon(eps).map_err(Failure::config)?, &costs, &solver)
                .map_err(Failure::from_core)?;
            system_f.push((mode, eps, s.g_star));
        }
    }

    let (path, mut w) = create_out(&cfg.output_dir, "saa.csv")?;
    let fail = io_fail(path.clone());
    w.write_record(["baseline", "mode", "epsilon", "alpha", "value"])
        .map_err(&fail)?;
    for &(alpha, v) in &system {
        if !(v > 0.0) {
            eprintln!("warning: SYSTEM({alpha}) = {v} is not positive; POA is undefined");
        }
        println!("SYSTEM alpha={alpha}: {v}");
        w.write_record([
            "SYSTEM".to_string(),
            String::new(),
            String::new(),
            alpha.to_string(),
            v.to_string(),
        ])
        .map_err(&fail)?;
    }
    for &(mode, eps, v) in &system_f {
        println!("SYSTEM_F mode={mode} epsilon={eps}: {v}");
        w.write_record([
            "SYSTEM_F".to_string(),
            mode.to_string(),
            eps.to_string(),
            "0".to_string(),
            v.to_string(),
        ])
        .map_err(&fail)?;
    }
    w.flush().map_err(|e| fail(e.into()))?;
    println!("wrote {}", path.display());
    Ok(path)
}

/// Runs the coverage, consistency and biased-bound experiments.
pub fn cmd_stats(cfg: &ExperimentConfig) -> CmdResult<Vec<PathBuf>> {
    let st = &cfg.stats;
    let solver = cfg.solver.build().map_err(Failure::config)?;
    let grid = build_support_grid(&vec![0.0; st.dim], &vec![1.0; st.dim], st.levels).map_err(Failure::config)?;
    let kernel = cfg.kernel.build(st.dim).map_err(Failure::config)?;
    let world = match &st.latent_pmf {
        Some(p) => SyntheticWorld::new(grid, p.clone(), kernel, cfg.seed),
        None => SyntheticWorld::uniform(grid, kernel, cfg.seed),
    }
    .map_err(Failure::config)?;

    let schedule = match st.c2 {
        Some(c2) => EpsilonSchedule::new(st.c1, c2, st.a, st.dim).map_err(Failure::config)?,
        None => {
            let beta = *st
                .betas
                .first()
                .ok_or_else(|| Failure::config(anyhow!("stats.betas is empty")))?;
            let s = calibrate_c2(&world, st.c1, st.a, beta, st.pilot_n, st.trials, st.reference_factor)
                .map_err(Failure::config)?;
            println!("calibrated c2 = {} at N = {} (beta = {beta})", s.c2, st.pilot_n);
            s
        }
    };
    if let Some(w) = schedule.dimension_warning() {
        eprintln!("warning: {w}");
    }
    let mut written = Vec::new();

    let coverage = coverage_experiment(&world, &schedule, &st.betas, &st.ns, st.trials, st.reference_factor)
        .map_err(Failure::config)?;
    let (path, mut w) = create_out(&cfg.output_dir, "coverage.csv")?;
    let fail = io_fail(path.clone());
    w.write_record(["n", "beta", "epsilon", "coverage", "mean_distance", "trials"])
        .map_err(&fail)?;
    for r in &coverage {
        w.write_record([
            r.n.to_string(),
            r.beta.to_string(),
            r.epsilon.to_string(),
            r.coverage.to_string(),
            r.mean_distance.to_string(),
            r.trials.to_string(),
        ])
        .map_err(&fail)?;
        println!(
            "coverage N={} beta={}: {} (radius {:.4})",
            r.n, r.beta, r.coverage, r.epsilon
        );
    }
    w.flush().map_err(|e| fail(e.into()))?;
    written.push(path);

    let utility = FairnessUtility::new(st.alpha, st.dim).map_err(Failure::config)?;
    let rule = RadiusRule::Schedule {
        schedule,
        beta0: st.beta0,
    };
    let rows = consistency_experiment(&world, &utility, rule, &st.consistency_ns, st.seeds, &solver)
        .map_err(Failure::from_core)?;
    let (path, mut w) = create_out(&cfg.output_dir, "consistency.csv")?;
    let fail = io_fail(path.clone());
    w.write_record(["n", "seed", "beta", "epsilon", "g_hat", "g_so", "abs_error"])
        .map_err(&fail)?;
    for r in &rows {
        w.write_record([
            r.n.to_string(),
            r.seed.to_string(),
            opt(r.beta),
            r.epsilon.to_string(),
            r.g_hat.to_string(),
            r.g_so.to_string(),
            r.abs_error.to_string(),
        ])
        .map_err(&fail)?;
    }
    w.flush().map_err(|e| fail(e.into()))?;
    for (n, m) in noisy_dro::stats::median_errors(&rows, &st.consistency_ns) {
        println!("consistency N={n}: median |g_hat - g_so| = {m:.5}");
    }
    written.push(path);

    let spec = sweep_spec(cfg)?;
    let (path, mut w) = create_out(&cfg.output_dir, "biased_bound.csv")?;
    let fail = io_fail(path.clone());
    w.write_record([
        "epsilon",
        "alpha",
        "delta",
        "g_noisy_biased",
        "g_direct",
        "lambda_direct",
        "bound_ok",
    ])
    .map_err(&fail)?;
    let mut violations = 0;
    for &eps in &spec.epsilons {
        for &alpha in &spec.alphas {
            let p = DroProblem::new(
                spec.dataset.clone(),
                spec.kernel.clone(),
                spec.grid.clone(),
                FairnessUtility::new(alpha, spec.dataset.dim()).map_err(Failure::config)?,
                eps,
                Mode::Noisy,
            )
            .map_err(Failure::config)?;
            for r in biased_bound_experiment(&p, &st.deltas, &solver).map_err(Failure::from_core)? {
                violations += usize::from(!r.bound_ok);
                w.write_record([
                    eps.to_string(),
                    alpha.to_string(),
                    r.delta.to_string(),
                    r.g_noisy_biased.to_string(),
                    r.g_direct.to_string(),
                    r.lambda_direct.to_string(),
                    r.bound_ok.to_string(),
                ])
                .map_err(&fail)?;
            }
        }
    }
    w.flush().map_err(|e| fail(e.into()))?;
    println!("biased-noise bound violations: {violations}");
    written.push(path);

    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}

const METRICS: [&str; 5] = ["g_star", "lambda_star", "poa", "pof", "dispersion"];

/// Converts a results CSV into long format with columns `x, series, value,
/// panel`: one row per (result row, metric), with `x = epsilon`, the series
/// naming mode, kernel and α, and the panel naming the metric. Blank cells
/// are skipped.
pub fn plotdata<R: io::Read, W: Write>(input: R, output: W) -> anyhow::Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let mut w = csv::Writer::from_writer(output);
    w.write_record(["x", "series", "value", "panel"])?;
    let headers = rdr.headers()?.clone();
    let mut emitted = 0;
    if headers.is_empty() {
        w.flush()?;
        return Ok(0);
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("results CSV has no column '{name}'"))
    };
    let (eps, alpha, mode, kernel) = (col("epsilon")?, col("alpha")?, col("mode")?, col("kernel")?);
    let mut panels: Vec<(usize, String)> = METRICS
        .iter()
        .map(|m| col(m).map(|i| (i, m.to_string())))
        .collect::<anyhow::Result<_>>()?;
    panels.extend(
        headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.starts_with("w_"))
            .map(|(i, h)| (i, h.to_string())),
    );
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("results row {}", line + 1))?;
        let series = format!("{}:{}:alpha={}", &rec[mode], &rec[kernel], &rec[alpha]);
        for (i, panel) in &panels {
            let v = rec.get(*i).unwrap_or("");
            if v.is_empty() {
                continue;
            }
            v.parse::<f64>()
                .with_context(|| format!("results row {}: column {panel} is not a number", line + 1))?;
            w.write_record([&rec[eps], series.as_str(), v, panel.as_str()])?;
            emitted += 1;
        }
    }
    w.flush()?;
    Ok(emitted)
}

pub fn cmd_plotdata(input: &Path, out_dir: Option<&Path>) -> CmdResult<()> {
    let file = File::open(input)
        .with_context(|| format!("opening {}", input.display()))
        .map_err(Failure::data)?;
    match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating output directory {}", dir.display()))
                .map_err(Failure::config)?;
            let path = dir.join("plotdata.csv");
            let out = File::create(&path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(Failure::config)?;
            let n = plotdata(file, out).map_err(Failure::data)?;
            println!("wrote {n} rows to {}", path.display());
        }
        None => {
            plotdata(file, io::stdout().lock()).map_err(Failure::data)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_gives_header_only() {
        let mut out = Vec::new();
        assert_eq!(plotdata(&b""[..], &mut out).unwrap(), 0);
        assert_eq!(String::from_utf8(out).unwrap(), "x,series,value,panel\n");
    }

    #[test]
    fn long_format_rows() {
        let input = "epsilon,alpha,mode,kernel,g_star,lambda_star,poa,pof,dispersion,converged,w_1,w_2\n\
                     0.01,0,direct,dirac,1.5,0.2,,0,0.4,true,0.7,0.3\n";
        let mut out = Vec::new();
        assert_eq!(plotdata(input.as_bytes(), &mut out).unwrap(), 6);
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("0.01,direct:dirac:alpha=0,1.5,g_star\n"));
        assert!(text.contains("0.01,direct:dirac:alpha=0,0.3,w_2\n"));
        assert!(!text.contains(",poa\n"));
    }

    #[test]
    fn rejects_non_numeric_cells() {
        let input = "epsilon,alpha,mode,kernel,g_star,lambda_star,poa,pof,dispersion,converged\n\
                     0.01,0,direct,dirac,abc,0.2,,0,0.4,true\n";
        assert!(plotdata(input.as_bytes(), Vec::new()).is_err());
        assert!(plotdata("a,b\n1,2\n".as_bytes(), Vec::new()).is_err());
    }

    #[test]
    fn header_lists_allocations() {
        let h = results_header(3);
        assert_eq!(h.len(), 13);
        assert_eq!(h[12], "w_3");
    }
}
