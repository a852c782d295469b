//! End-to-end experiment pipelines behind the CLI subcommands.
//!
//! Each pipeline takes a parsed configuration (with any command-line
//! overrides already applied), runs the experiment, and writes a result
//! bundle: `manifest.txt` plus the CSV tables and optional SVG plot. The
//! manifest snapshot reproduces every table byte for byte; `replay` re-runs a
//! bundle from its manifest alone.

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::ingest::{write_embedding_matrix, EmbeddingFormat};
use crate::latent::sample_references;
use crate::linalg;
use crate::plot::{render_variance_plot, PlotAxes};
use crate::report::{
    group_variance_rows, prepare_output_dir, read_curve_table, read_manifest, read_variance_table,
    write_cav_table, write_curve_table, write_manifest, write_matrix_csv, write_scatter_csv,
    write_tcav_table, write_theory_report, write_variance_table, ResultBundle, VarianceTableMeta,
};
use crate::scoring::multi_run_tcav;
use crate::seeding::child_seed;
use crate::stability::{
    fit_inverse_curve, run_multirun_sweep, run_sweep, SweepOutcome, SweepTarget, VariancePoint,
};
use crate::theory::{check_surrounded_mean, estimate_asymptotics, surround_scatter};
use std::fs;
use std::path::Path;

/// Size the global compute pool. Zero means automatic (one thread per core).
/// Results never depend on the thread count; only wall time does.
pub fn init_threads(threads: usize) -> Result<()> {
    if threads == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot initialize {threads} threads: {e}")))
}

/// Mutate a configuration with command-line overrides. The manifest snapshot
/// is taken after this, so replays see the effective values.
pub fn apply_overrides(config: &mut ExperimentConfig, seed: Option<u64>, out: Option<&Path>) {
    if let Some(s) = seed {
        if let Some(sweep) = config.sweep.as_mut() {
            sweep.seed = s;
        }
        if let Some(multirun) = config.multirun.as_mut() {
            multirun.seed = s;
        }
    }
    if let Some(dir) = out {
        config.output.dir = dir.to_path_buf();
    }
}

fn write_points_with_plot(
    bundle: &mut ResultBundle,
    dir: &Path,
    id: &str,
    outcome: &SweepOutcome,
    meta: &VarianceTableMeta,
    plots: bool,
) -> Result<()> {
    let variance_path = dir.join("variance.csv");
    write_variance_table(&variance_path, id, &outcome.points, meta)?;
    bundle.record(variance_path);

    if let Some(alt) = &outcome.alt_points {
        let alt_path = dir.join("variance_geometric.csv");
        write_variance_table(&alt_path, id, alt, meta)?;
        bundle.record(alt_path);
    }

    let curve_points: Vec<(f64, f64)> = outcome
        .points
        .iter()
        .map(|p| (p.x, p.mean_variance))
        .collect();
    let fit = if curve_points.len() >= 2 {
        // A failed fit (e.g. all-zero variances in a degenerate scenario)
        // simply omits the curve artifacts.
        fit_inverse_curve(&curve_points).ok()
    } else {
        None
    };
    if let Some(f) = &fit {
        let curve_path = dir.join("curve.csv");
        write_curve_table(&curve_path, id, &[(meta.target, f.clone())])?;
        bundle.record(curve_path);
    }
    if plots {
        let svg = render_variance_plot(&outcome.points, fit.as_ref(), PlotAxes::default())?;
        let plot_path = dir.join("plot.svg");
        fs::write(&plot_path, svg)?;
        bundle.record(plot_path);
    }
    Ok(())
}

/// `sweep`: variance-versus-N experiment from the `[sweep]` section.
pub fn run_sweep_command(config: &ExperimentConfig, out_dir: &Path) -> Result<ResultBundle> {
    let section = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [sweep] section".into()))?;
    let scenario = config.scenario.build()?;
    let sweep_config = section.to_config(config.estimator.spec());
    let outcome = run_sweep(&sweep_config, &scenario)?;

    prepare_output_dir(out_dir)?;
    let id = write_manifest(out_dir, "sweep", section.seed, &config.to_text())?;
    let mut bundle = ResultBundle::new(out_dir, id.clone());
    let meta = VarianceTableMeta {
        target: section.target,
        estimator: config.estimator.kind,
        m: section.m_sets,
        r: section.r_runs,
        lambda: config.estimator.lambda,
        seed: section.seed,
        failures: outcome.failed_cells,
    };
    write_points_with_plot(
        &mut bundle,
        out_dir,
        &id,
        &outcome,
        &meta,
        config.output.plots,
    )?;
    Ok(bundle)
}

/// `multirun`: variance of the subset-averaged TCAV score versus s.
pub fn run_multirun_command(config: &ExperimentConfig, out_dir: &Path) -> Result<ResultBundle> {
    let section = config
        .multirun
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [multirun] section".into()))?;
    let scenario = config.scenario.build()?;
    let multirun_config = section.to_config(config.estimator.spec());
    let outcome = run_multirun_sweep(&multirun_config, &scenario)?;

    prepare_output_dir(out_dir)?;
    let id = write_manifest(out_dir, "multirun", section.seed, &config.to_text())?;
    let mut bundle = ResultBundle::new(out_dir, id.clone());
    let meta = VarianceTableMeta {
        target: SweepTarget::MultirunVariance,
        estimator: config.estimator.kind,
        m: section.r_inner,
        r: section.e_outer,
        lambda: config.estimator.lambda,
        seed: section.seed,
        failures: outcome.failed_cells,
    };
    write_points_with_plot(
        &mut bundle,
        out_dir,
        &id,
        &outcome,
        &meta,
        config.output.plots,
    )?;
    Ok(bundle)
}

/// `gen`: materialize the scenario and write its embeddings to files.
pub fn run_gen_command(
    config: &ExperimentConfig,
    out_dir: &Path,
    reference_count: usize,
    format: EmbeddingFormat,
    seed: u64,
) -> Result<ResultBundle> {
    let scenario = config.scenario.build()?;
    prepare_output_dir(out_dir)?;
    let id = write_manifest(out_dir, "gen", seed, &config.to_text())?;
    let mut bundle = ResultBundle::new(out_dir, id);

    let ext = format.extension();
    let concepts_path = out_dir.join(format!("concepts.{ext}"));
    write_embedding_matrix(&concepts_path, format, scenario.concepts.points())?;
    bundle.record(concepts_path);

    let refs = sample_references(&scenario.references, reference_count, seed)?;
    let refs_path = out_dir.join(format!("references.{ext}"));
    write_embedding_matrix(&refs_path, format, &refs)?;
    bundle.record(refs_path);

    let eval_path = out_dir.join(format!("eval.{ext}"));
    write_embedding_matrix(&eval_path, format, scenario.eval.points())?;
    bundle.record(eval_path);
    Ok(bundle)
}

/// `fit-cav`: fit one or more CAVs on fresh reference draws.
pub fn run_fit_cav_command(
    config: &ExperimentConfig,
    out_dir: &Path,
    n_references: usize,
    count: usize,
    seed: u64,
) -> Result<ResultBundle> {
    if n_references == 0 || count == 0 {
        return Err(Error::Config("fit-cav needs n >= 1 and count >= 1".into()));
    }
    let scenario = config.scenario.build()?;
    let estimator = config.estimator.spec();
    let mut cavs = Vec::with_capacity(count);
    for j in 0..count {
        let set_seed = child_seed(seed, &[0xf17c, j as u64]);
        let refs = sample_references(&scenario.references, n_references, set_seed)?;
        cavs.push(estimator.fit(&scenario.concepts, &refs, set_seed)?);
    }
    prepare_output_dir(out_dir)?;
    let id = write_manifest(out_dir, "fit-cav", seed, &config.to_text())?;
    let mut bundle = ResultBundle::new(out_dir, id.clone());
    let path = out_dir.join("cavs.csv");
    write_cav_table(&path, &id, &cavs)?;
    bundle.record(path);
    Ok(bundle)
}

/// `tcav`: multi-run TCAV over a fresh reference pool.
pub fn run_tcav_command(
    config: &ExperimentConfig,
    out_dir: &Path,
    pool_size: usize,
    subsets: usize,
    seed: u64,
) -> Result<ResultBundle> {
    let scenario = config.scenario.build()?;
    let estimator = config.estimator.spec();
    let pool = sample_references(&scenario.references, pool_size, child_seed(seed, &[0x9001]))?;
    let result = multi_run_tcav(
        &scenario.concepts,
        &pool,
        subsets,
        &scenario.head,
        &scenario.eval,
        &estimator,
        seed,
    )?;
    prepare_output_dir(out_dir)?;
    let id = write_manifest(out_dir, "tcav", seed, &config.to_text())?;
    let mut bundle = ResultBundle::new(out_dir, id.clone());
    let path = out_dir.join("tcav.csv");
    write_tcav_table(&path, &id, &result)?;
    bundle.record(path);
    Ok(bundle)
}

/// Knobs of the `theory` pipeline.
#[derive(Debug, Clone)]
pub struct TheoryOptions {
    /// References drawn for the surround check.
    pub surround_samples: usize,
    pub epsilon: f64,
    pub directions: usize,
    /// Proxy fit size standing in for the N -> infinity limit.
    pub n_ref: usize,
    /// Fresh draws for the score-summand covariance.
    pub rho_count: usize,
    /// Closed-form DoM variance is reported at this N.
    pub dom_n: usize,
    pub seed: u64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            surround_samples: 10_000,
            epsilon: 0.1,
            directions: 512,
            n_ref: 50_000,
            rho_count: 50_000,
            dom_n: 100,
            seed: 0,
        }
    }
}

/// `theory`: surround check, logistic sandwich prediction, and the DoM
/// closed form, written as a structured text report plus matrix CSVs.
pub fn run_theory_command(
    config: &ExperimentConfig,
    out_dir: &Path,
    opts: &TheoryOptions,
) -> Result<ResultBundle> {
    let scenario = config.scenario.build()?;
    let refs = sample_references(
        &scenario.references,
        opts.surround_samples,
        child_seed(opts.seed, &[0x5u64]),
    )?;
    let surround = check_surrounded_mean(
        scenario.concepts.mean(),
        &refs,
        opts.epsilon,
        opts.directions,
        child_seed(opts.seed, &[0x6u64]),
    )?;
    let scatter = if scenario.dim() >= 2 {
        Some(surround_scatter(scenario.concepts.mean(), &refs)?)
    } else {
        None
    };

    let fit_opts = crate::estimators::FitOptions {
        lambda: config.estimator.lambda,
        tolerance: config.estimator.tolerance,
        max_iterations: config.estimator.max_iterations,
        centering: config.estimator.centering,
    };
    let asymptotics = estimate_asymptotics(
        &scenario.concepts,
        &scenario.references,
        opts.n_ref,
        opts.rho_count,
        &fit_opts,
        child_seed(opts.seed, &[0x7u64]),
    )?;

    // Empirical covariance of the references stands in for Sigma_z.
    let sigma_z = linalg::sample_covariance(&refs)?;
    let dom_value = sigma_z.trace() / opts.dom_n as f64;

    prepare_output_dir(out_dir)?;
    let id = write_manifest(out_dir, "theory", opts.seed, &config.to_text())?;
    let mut bundle = ResultBundle::new(out_dir, id.clone());

    let report_path = out_dir.join("theory.txt");
    write_theory_report(
        &report_path,
        &id,
        Some(&surround),
        Some(&asymptotics),
        Some((sigma_z.trace(), opts.dom_n, dom_value)),
    )?;
    bundle.record(report_path);

    let h0_path = out_dir.join("h0.csv");
    write_matrix_csv(&h0_path, &id, &asymptotics.h0.matrix)?;
    bundle.record(h0_path);
    let sigma_path = out_dir.join("sigma.csv");
    write_matrix_csv(&sigma_path, &id, &asymptotics.sigma.sigma)?;
    bundle.record(sigma_path);
    if let Some(points) = scatter {
        let scatter_path = out_dir.join("surround_scatter.csv");
        write_scatter_csv(&scatter_path, &id, &points)?;
        bundle.record(scatter_path);
    }
    Ok(bundle)
}

/// `fit-curve`: read a variance table, group rows, fit `y = a/N + b`.
pub fn run_fit_curve_command(input: &Path, out_dir: &Path) -> Result<ResultBundle> {
    let rows = read_variance_table(input)?;
    if rows.is_empty() {
        return Err(Error::Domain("variance table has no rows".into()));
    }
    let points = group_variance_rows(&rows);
    let curve_points: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.mean_variance)).collect();
    let fit = fit_inverse_curve(&curve_points)?;
    let target = SweepTarget::parse(&rows[0].target)?;

    prepare_output_dir(out_dir)?;
    let id = write_manifest(
        out_dir,
        "fit-curve",
        0,
        &format!("input = {}\n", input.display()),
    )?;
    let mut bundle = ResultBundle::new(out_dir, id.clone());
    let path = out_dir.join("curve.csv");
    write_curve_table(&path, &id, &[(target, fit)])?;
    bundle.record(path);
    Ok(bundle)
}

/// `plot`: render a variance table (and optional fitted curve) to SVG.
pub fn run_plot_command(
    input: &Path,
    curve: Option<&Path>,
    out_dir: &Path,
    axes: PlotAxes,
) -> Result<ResultBundle> {
    let rows = read_variance_table(input)?;
    let points: Vec<VariancePoint> = group_variance_rows(&rows);
    let fit = match curve {
        Some(path) => read_curve_table(path)?.into_iter().next().map(|(_, f)| f),
        None => None,
    };
    let svg = render_variance_plot(&points, fit.as_ref(), axes)?;
    prepare_output_dir(out_dir)?;
    let id = write_manifest(
        out_dir,
        "plot",
        0,
        &format!("input = {}\n", input.display()),
    )?;
    let mut bundle = ResultBundle::new(out_dir, id);
    let path = out_dir.join("plot.svg");
    fs::write(&path, svg)?;
    bundle.record(path);
    Ok(bundle)
}

/// Re-run a bundle from its manifest into a new directory.
pub fn replay(manifest_path: &Path, out_dir: &Path) -> Result<ResultBundle> {
    let manifest = read_manifest(manifest_path)?;
    let config = ExperimentConfig::parse(&manifest.config_text)?;
    match manifest.command.as_str() {
        "sweep" => run_sweep_command(&config, out_dir),
        "multirun" => run_multirun_command(&config, out_dir),
        other => Err(Error::Config(format!(
            "replay does not support command '{other}'"
        ))),
    }
}
