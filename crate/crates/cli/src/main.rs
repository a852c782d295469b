//! `cavstab` — concept activation vectors and their stability from the
//! command line.
//!
//! Subcommands mirror the library pipelines: generate synthetic embeddings,
//! fit CAVs, compute TCAV scores, run variance sweeps and multi-run sweeps,
//! evaluate the asymptotic theory checks, fit inverse curves, and render
//! plots. Every run writes a manifest alongside its outputs; re-running with
//! the same configuration and seed reproduces the outputs byte for byte.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config, missing
//! files), 2 runtime failure (fit divergence, numerical breakdown).

use cavstab_core::config::ExperimentConfig;
use cavstab_core::error::Error;
use cavstab_core::ingest::EmbeddingFormat;
use cavstab_core::pipeline::{
    apply_overrides, init_threads, run_fit_cav_command, run_fit_curve_command, run_gen_command,
    run_multirun_command, run_plot_command, run_sweep_command, run_tcav_command,
    run_theory_command, TheoryOptions,
};
use cavstab_core::plot::PlotAxes;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "cavstab",
    version,
    about = "Concept activation vectors: estimators, TCAV scores, and stability experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the result bundle.
    #[arg(long)]
    out: PathBuf,
    /// Override the experiment seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenario embeddings (concepts, references, evaluation set).
    Gen {
        #[command(flatten)]
        common: CommonArgs,
        /// Number of reference samples to draw.
        #[arg(long, default_value_t = 1000)]
        refs: usize,
        /// Embedding file format.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Fit one or more CAVs on fresh reference draws.
    FitCav {
        #[command(flatten)]
        common: CommonArgs,
        /// References per fit.
        #[arg(long)]
        n: usize,
        /// Number of CAVs to fit (distinct seeds).
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Compute a (multi-run) TCAV score with its t-test.
    Tcav {
        #[command(flatten)]
        common: CommonArgs,
        /// Reference pool size R.
        #[arg(long)]
        pool: usize,
        /// Number of disjoint subsets s.
        #[arg(long, default_value_t = 1)]
        s: usize,
    },
    /// Run the variance-versus-N sweep from the config's [sweep] section.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the multi-run variance sweep from the config's [multirun] section.
    Multirun {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Surround check, sandwich covariance prediction, and DoM closed form.
    Theory {
        #[command(flatten)]
        common: CommonArgs,
        /// References drawn for the surround check.
        #[arg(long, default_value_t = 10_000)]
        surround_samples: usize,
        /// Cap threshold epsilon.
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Random directions tested (axes are always included).
        #[arg(long, default_value_t = 512)]
        directions: usize,
        /// Proxy fit size standing in for the large-N limit.
        #[arg(long, default_value_t = 50_000)]
        n_ref: usize,
        /// Fresh draws for the score-summand covariance.
        #[arg(long, default_value_t = 50_000)]
        rho_count: usize,
        /// Report the DoM closed form at this N.
        #[arg(long, default_value_t = 100)]
        dom_n: usize,
    },
    /// Fit y = a/N + b to a variance table.
    FitCurve {
        /// Input variance CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a variance table (and optional curve fit) as SVG.
    Plot {
        /// Input variance CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Optional curve CSV for the dashed overlay.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Log-scale the x axis.
        #[arg(long, default_value_t = false)]
        log_x: bool,
        /// Use a linear y axis (default is log).
        #[arg(long, default_value_t = false)]
        linear_y: bool,
        /// Clip rendered y values below this floor (0 disables).
        #[arg(long, default_value_t = 0.0)]
        clip_floor: f64,
    },
}

fn load_config(common: &CommonArgs) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&common.config).map_err(|e| {
        Error::Config(format!(
            "cannot read config {}: {e}",
            common.config.display()
        ))
    })?;
    let mut config = ExperimentConfig::parse(&text)?;
    apply_overrides(&mut config, common.seed, Some(&common.out));
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Gen {
            common,
            refs,
            format,
        } => {
            init_threads(common.threads)?;
            let config = load_config(&common)?;
            let format = EmbeddingFormat::parse(&format)?;
            run_gen_command(&config, &common.out, refs, format, common.seed.unwrap_or(0))?;
        }
        Command::FitCav { common, n, count } => {
            init_threads(common.threads)?;
            let config = load_config(&common)?;
            run_fit_cav_command(&config, &common.out, n, count, common.seed.unwrap_or(0))?;
        }
        Command::Tcav { common, pool, s } => {
            init_threads(common.threads)?;
            let config = load_config(&common)?;
            run_tcav_command(&config, &common.out, pool, s, common.seed.unwrap_or(0))?;
        }
        Command::Sweep { common } => {
            init_threads(common.threads)?;
            let config = load_config(&common)?;
            run_sweep_command(&config, &common.out)?;
        }
        Command::Multirun { common } => {
            init_threads(common.threads)?;
            let config = load_config(&common)?;
            run_multirun_command(&config, &common.out)?;
        }
        Command::Theory {
            common,
            surround_samples,
            epsilon,
            directions,
            n_ref,
            rho_count,
            dom_n,
        } => {
            init_threads(common.threads)?;
            let config = load_config(&common)?;
            let opts = TheoryOptions {
                surround_samples,
                epsilon,
                directions,
                n_ref,
                rho_count,
                dom_n,
                seed: common.seed.unwrap_or(0),
            };
            run_theory_command(&config, &common.out, &opts)?;
        }
        Command::FitCurve { input, out } => {
            run_fit_curve_command(&input, &out)?;
        }
        Command::Plot {
            input,
            curve,
            out,
            log_x,
            linear_y,
            clip_floor,
        } => {
            let axes = PlotAxes {
                log_x,
                log_y: !linear_y,
                clip_floor,
            };
            run_plot_command(&input, curve.as_deref(), &out, axes)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
