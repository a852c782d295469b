//! End-to-end tests of the `cavstab` binary: exit codes, bundle contents,
//! and the fit-curve/plot file pipelines.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cavstab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cavstab"))
}

fn temp_dir(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("cavstab_cli_{}_{name}", std::process::id()));
    fs::create_dir_all(&p).unwrap();
    p
}

fn write_config(dir: &Path) -> PathBuf {
    let config = "\
[scenario]
kind = gaussian
dim = 3
cov = diag:1,2,3
concept_count = 8
concept_offset = 1.5
concept_spread = 0.25
eval_count = 10
head = linear:1,0,0@0
seed = 5

[estimator]
kind = dom

[sweep]
target = cav_variance
n_grid = 20,40,80
m_sets = 5
r_runs = 4
sampling = pool:600
seed = 11

[multirun]
r_total = 100
s_grid = 1,2,4
r_inner = 4
e_outer = 2
sampling = fresh
seed = 3

[output]
dir = unused
plots = true
";
    let path = dir.join("experiment.cfg");
    fs::write(&path, config).unwrap();
    path
}

fn assert_code(output: &Output, expected: i32) {
    let code = output.status.code().unwrap_or(-1);
    assert_eq!(
        code,
        expected,
        "exit code {code}, expected {expected}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn sweep_happy_path_writes_manifest_and_tables() {
    let dir = temp_dir("sweep");
    let config = write_config(&dir);
    let out = dir.join("out");
    let output = cavstab()
        .args(["sweep", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    assert!(out.join("manifest.txt").exists());
    assert!(out.join("variance.csv").exists());
    assert!(out.join("curve.csv").exists());
    assert!(out.join("plot.svg").exists());
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_config_exits_one_and_names_the_path() {
    let dir = temp_dir("missing");
    let out = dir.join("out");
    let output = cavstab()
        .args(["sweep", "--config", "/no/such/config.cfg"])
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_code(&output, 1);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("/no/such/config.cfg"), "stderr: {stderr}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_flag_prints_usage_to_stderr_and_exits_one() {
    let output = cavstab().args(["sweep", "--frobnicate"]).output().unwrap();
    assert_code(&output, 1);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "stderr: {stderr}");
    assert!(output.stdout.is_empty());
}

#[test]
fn fit_curve_recovers_noiseless_table() {
    let dir = temp_dir("fitcurve");
    // Hand-written variance table y = 2/N + 0.5.
    let table = "\
# manifest: 0000000000000000
target,estimator,N_or_s,run,mean_variance,spread,m,r,lambda,seed,failures
cav_variance,dom,10,0,0.7,0,1,1,0,0,0
cav_variance,dom,20,0,0.6,0,1,1,0,0,0
cav_variance,dom,40,0,0.55,0,1,1,0,0,0
";
    let input = dir.join("variance.csv");
    fs::write(&input, table).unwrap();
    let out = dir.join("out");
    let output = cavstab()
        .args(["fit-curve", "--in"])
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    let curve = fs::read_to_string(out.join("curve.csv")).unwrap();
    let data_line = curve.lines().last().unwrap();
    let fields: Vec<&str> = data_line.split(',').collect();
    let a: f64 = fields[1].parse().unwrap();
    let b: f64 = fields[2].parse().unwrap();
    assert!((a - 2.0).abs() < 1e-9, "a = {a}");
    assert!((b - 0.5).abs() < 1e-9, "b = {b}");
    fs::remove_dir_all(&dir).ok();
}

#[test]
fn gen_tcav_theory_and_plot_round_trip() {
    let dir = temp_dir("full");
    let config = write_config(&dir);

    // gen
    let gen_out = dir.join("gen");
    let output = cavstab()
        .args(["gen", "--refs", "50", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&gen_out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    assert!(gen_out.join("concepts.csv").exists());
    assert!(gen_out.join("references.csv").exists());
    assert!(gen_out.join("eval.csv").exists());

    // fit-cav
    let fit_out = dir.join("fit");
    let output = cavstab()
        .args(["fit-cav", "--n", "40", "--count", "3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&fit_out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    let cavs = fs::read_to_string(fit_out.join("cavs.csv")).unwrap();
    assert_eq!(cavs.lines().count(), 5); // comment + header + 3 rows

    // tcav
    let tcav_out = dir.join("tcav");
    let output = cavstab()
        .args(["tcav", "--pool", "120", "--s", "3", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&tcav_out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    assert!(tcav_out.join("tcav.csv").exists());

    // multirun
    let multi_out = dir.join("multi");
    let output = cavstab()
        .args(["multirun", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&multi_out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    assert!(multi_out.join("variance.csv").exists());

    // theory (small sizes to stay fast)
    let theory_out = dir.join("theory");
    let output = cavstab()
        .args([
            "theory",
            "--surround-samples",
            "2000",
            "--directions",
            "64",
            "--n-ref",
            "4000",
            "--rho-count",
            "4000",
            "--config",
        ])
        .arg(&config)
        .arg("--out")
        .arg(&theory_out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    let report = fs::read_to_string(theory_out.join("theory.txt")).unwrap();
    assert!(report.contains("[surround]"));
    assert!(report.contains("[logistic_asymptotics]"));
    assert!(theory_out.join("h0.csv").exists());
    assert!(theory_out.join("sigma.csv").exists());
    assert!(theory_out.join("surround_scatter.csv").exists());

    // plot from the multirun table
    let plot_out = dir.join("plot");
    let output = cavstab()
        .args(["plot", "--log-x", "--in"])
        .arg(multi_out.join("variance.csv"))
        .arg("--out")
        .arg(&plot_out)
        .output()
        .unwrap();
    assert_code(&output, 0);
    let svg = fs::read_to_string(plot_out.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg"));

    fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_override_changes_results_and_is_recorded() {
    let dir = temp_dir("seeds");
    let config = write_config(&dir);
    let out_a = dir.join("a");
    let out_b = dir.join("b");
    for (out, seed) in [(&out_a, "11"), (&out_b, "12")] {
        let output = cavstab()
            .args(["sweep", "--seed", seed, "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert_code(&output, 0);
    }
    let a = fs::read_to_string(out_a.join("variance.csv")).unwrap();
    let b = fs::read_to_string(out_b.join("variance.csv")).unwrap();
    assert_ne!(a, b, "different seeds must change the table");
    let manifest = fs::read_to_string(out_b.join("manifest.txt")).unwrap();
    assert!(manifest.contains("seed: 12"));
    assert!(
        manifest.contains("seed = 12"),
        "config snapshot must hold the effective seed"
    );
    fs::remove_dir_all(&dir).ok();
}
