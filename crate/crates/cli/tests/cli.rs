use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisy-dro"))
}

fn sample_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample_sara.csv")
}

fn write_config(dir: &Path, extra_top: &str, extra_tables: &str) -> PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        "{extra_top}\noutput_dir = \"out\"\n\n[dataset]\npath = {:?}\nbase_station = \"BS2\"\n\n{extra_tables}\n",
        sample_data()
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let headers = rdr.headers().unwrap().iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect();
    (headers, rows)
}

const CENTERED_UNIFORM: &str = "[kernel]\nfamily = \"uniform\"\ncenter = true\nparams = { a = -0.02, b = 0.02 }\n";

#[test]
fn default_config_gives_full_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "", "");
    let out = run(&["solve", "--config", cfg.to_str().unwrap()]);
    ok(&out);
    let (headers, rows) = read_csv(&dir.path().join("out/results.csv"));
    assert_eq!(
        headers,
        [
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
            "w_1",
            "w_2",
            "w_3"
        ]
    );
    assert_eq!(rows.len(), 10 * 7 * 2);
    // canonical order: epsilon, then alpha, then mode
    let keys: Vec<(f64, f64, String)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].clone()))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    assert_eq!(keys, sorted);
}

#[test]
fn rerun_is_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "epsilons = [0.02, 0.05]\nalphas = [0, 2]", CENTERED_UNIFORM);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        a.to_str().unwrap(),
        "--jobs",
        "1",
    ]));
    ok(&run(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        b.to_str().unwrap(),
        "--jobs",
        "3",
    ]));
    assert_eq!(
        std::fs::read(a.join("results.csv")).unwrap(),
        std::fs::read(b.join("results.csv")).unwrap()
    );
}

#[test]
fn noisy_rows_dominate_direct_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "alphas = [0, 1, 5]", CENTERED_UNIFORM);
    ok(&run(&["solve", "--config", cfg.to_str().unwrap()]));
    let (_, rows) = read_csv(&dir.path().join("out/results.csv"));
    for pair in rows.chunks(2) {
        assert_eq!(pair[0][2], "direct");
        assert_eq!(pair[1][2], "noisy");
        let gd: f64 = pair[0][4].parse().unwrap();
        let gn: f64 = pair[1][4].parse().unwrap();
        assert!(gn >= gd - 1e-6, "{gn} < {gd}");
    }
}

#[test]
fn direct_zero_radius_matches_saa() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "epsilons = [0, 0.05]\nalphas = [0, 1, 10]\nmodes = [\"direct\"]",
        "",
    );
    ok(&run(&["solve", "--config", cfg.to_str().unwrap()]));
    ok(&run(&["saa", "--config", cfg.to_str().unwrap()]));
    let (_, rows) = read_csv(&dir.path().join("out/results.csv"));
    let (headers, saa) = read_csv(&dir.path().join("out/saa.csv"));
    assert_eq!(headers, ["baseline", "mode", "epsilon", "alpha", "value"]);
    for alpha in ["0", "1", "10"] {
        let g: f64 = rows.iter().find(|r| r[0] == "0" && r[1] == alpha).unwrap()[4]
            .parse()
            .unwrap();
        let s: f64 = saa.iter().find(|r| r[0] == "SYSTEM" && r[3] == alpha).unwrap()[4]
            .parse()
            .unwrap();
        assert!((g - s).abs() <= 1e-5 * s.abs().max(1.0), "alpha {alpha}: {g} vs {s}");
        let poa: f64 = rows.iter().find(|r| r[0] == "0" && r[1] == alpha).unwrap()[6]
            .parse()
            .unwrap();
        assert!(poa.abs() < 1e-5);
    }
    // SYSTEM_F of direct mode at ε = 0 is SYSTEM(α = 0)
    let sf: f64 = saa.iter().find(|r| r[0] == "SYSTEM_F" && r[2] == "0").unwrap()[4]
        .parse()
        .unwrap();
    let s0: f64 = saa.iter().find(|r| r[0] == "SYSTEM" && r[3] == "0").unwrap()[4]
        .parse()
        .unwrap();
    assert!((sf - s0).abs() <= 1e-5 * s0);
}

#[test]
fn plotdata_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "epsilons = [0.01, 0.1]\nalphas = [0, 1]", CENTERED_UNIFORM);
    ok(&run(&["solve", "--config", cfg.to_str().unwrap()]));
    let results = dir.path().join("out/results.csv");
    let plot_dir = dir.path().join("plot");
    ok(&run(&[
        "plotdata",
        results.to_str().unwrap(),
        "--out",
        plot_dir.to_str().unwrap(),
    ]));
    let (_, rows) = read_csv(&results);
    let (headers, long) = read_csv(&plot_dir.join("plotdata.csv"));
    assert_eq!(headers, ["x", "series", "value", "panel"]);
    let g_rows: Vec<&Vec<String>> = long.iter().filter(|r| r[3] == "g_star").collect();
    assert_eq!(g_rows.len(), rows.len());
    for (r, l) in rows.iter().zip(g_rows) {
        assert_eq!(l[0], r[0]);
        assert_eq!(l[2], r[4]);
        assert_eq!(l[1], format!("{}:{}:alpha={}", r[2], r[3], r[1]));
    }
    assert_eq!(long.iter().filter(|r| r[3] == "w_3").count(), rows.len());

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = run(&["plotdata", empty.to_str().unwrap()]);
    ok(&out);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "x,series,value,panel\n");
}

#[test]
fn stats_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let stats = "[stats]\ndim = 1\nlevels = 5\nlatent_pmf = [0, 0, 1, 0, 0]\nbetas = [0.05, 0.1]\nns = [5, 20, 50]\n\
                 trials = 100\nc2 = 1.0\nconsistency_ns = [10, 40]\nseeds = 3\ndeltas = [0.01]\n";
    let cfg = write_config(dir.path(), "epsilons = [0.05]\nalphas = [1]", stats);
    let out = run(&["stats", "--config", cfg.to_str().unwrap(), "--seed", "3"]);
    ok(&out);
    let (headers, coverage) = read_csv(&dir.path().join("out/coverage.csv"));
    assert_eq!(headers, ["n", "beta", "epsilon", "coverage", "mean_distance", "trials"]);
    assert_eq!(coverage.len(), 3 * 2);
    // Dirac kernel and a point-mass world: every empirical equals the truth
    assert!(coverage.iter().all(|r| r[3] == "1"));
    let (_, consistency) = read_csv(&dir.path().join("out/consistency.csv"));
    assert_eq!(consistency.len(), 2 * 3);
    let (_, biased) = read_csv(&dir.path().join("out/biased_bound.csv"));
    assert_eq!(biased.len(), 1);
    assert_eq!(biased[0][6], "true");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["solve"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        run(&["solve", "--config", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "epsilons = [\n").unwrap();
    assert_eq!(
        run(&["solve", "--config", bad.to_str().unwrap()]).status.code(),
        Some(1)
    );

    let cfg = write_config(dir.path(), "alphas = [-1]", "");
    assert_eq!(
        run(&["solve", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(1)
    );

    let no_data = dir.path().join("nodata.toml");
    std::fs::write(&no_data, "[dataset]\npath = \"missing.csv\"\nbase_station = \"BS1\"\n").unwrap();
    assert_eq!(
        run(&["solve", "--config", no_data.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let station = dir.path().join("station.toml");
    std::fs::write(
        &station,
        format!("[dataset]\npath = {:?}\nbase_station = \"BS9\"\n", sample_data()),
    )
    .unwrap();
    assert_eq!(
        run(&["saa", "--config", station.to_str().unwrap()]).status.code(),
        Some(2)
    );

    let malformed = dir.path().join("malformed.csv");
    std::fs::write(
        &malformed,
        "base_station,user_type,channel_gain_db,noise_power_db\nBS1,Regular,abc,1\n",
    )
    .unwrap();
    let cfg = dir.path().join("malformed.toml");
    std::fs::write(&cfg, "[dataset]\npath = \"malformed.csv\"\nbase_station = \"BS1\"\n").unwrap();
    assert_eq!(
        run(&["solve", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(2)
    );
}
