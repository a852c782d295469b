//! Monte-Carlo variance experiments.
//!
//! A sweep varies the number of random reference samples N (or the number of
//! subsets s for the multi-run score), fits a batch of CAVs at every grid
//! point, and reduces them to a variance statistic:
//!
//! * `cav_variance`: trace of the unbiased sample covariance of the CAV
//!   coefficient vectors,
//! * `sensitivity_variance`: per-evaluation-point variance of the sensitivity
//!   score across the CAV batch, aggregated over points,
//! * `tcav_variance`: variance of the TCAV scores across the batch,
//! * multi-run: variance of the subset-averaged score across repeated draws.
//!
//! Cells are embarrassingly parallel; every (grid value, run) cell derives its
//! own child seed, so results never depend on the execution schedule.

use crate::error::{Error, Result};
use crate::estimators::{Cav, EstimatorSpec};
use crate::latent::{sample_references, LatentPoint, Scenario};
use crate::linalg;
use crate::scoring::{multi_run_tcav, sensitivity_scores, tcav_score};
use crate::seeding::{child_seed, Prng};
use crate::stats;
use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;

const TAG_POOL: u64 = 0x700c;
const TAG_CELL: u64 = 0x7ce1;
const TAG_SET: u64 = 0x75e7;
const TAG_MULTI: u64 = 0x77a1;

/// What a sweep measures at each grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTarget {
    CavVariance,
    SensitivityVariance,
    TcavVariance,
    MultirunVariance,
}

impl SweepTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            SweepTarget::CavVariance => "cav_variance",
            SweepTarget::SensitivityVariance => "sensitivity_variance",
            SweepTarget::TcavVariance => "tcav_variance",
            SweepTarget::MultirunVariance => "multirun_variance",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cav_variance" => Ok(SweepTarget::CavVariance),
            "sensitivity_variance" => Ok(SweepTarget::SensitivityVariance),
            "tcav_variance" => Ok(SweepTarget::TcavVariance),
            "multirun_variance" => Ok(SweepTarget::MultirunVariance),
            other => Err(Error::Config(format!("unknown sweep target '{other}'"))),
        }
    }
}

/// How reference sets are drawn at each grid point.
#[derive(Debug, Clone, Copy)]
pub enum SamplingMode {
    /// Materialize one pool per run (seeded) and draw each reference set with
    /// replacement from it; mirrors the published experimental protocol.
    PoolWithReplacement { pool_size: usize },
    /// Draw every reference set fresh from F0; used by theory checks.
    Fresh,
}

/// How per-evaluation-point sensitivity variances are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceAggregator {
    Arithmetic,
    Geometric,
}

/// Configuration of a variance-versus-N sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub target: SweepTarget,
    /// Strictly increasing grid of reference-sample counts.
    pub n_grid: Vec<usize>,
    /// CAVs fitted per grid point per run; at least 2.
    pub m_sets: usize,
    /// Outer repetitions.
    pub r_runs: usize,
    pub estimator: EstimatorSpec,
    pub sampling: SamplingMode,
    /// Aggregator reported in the primary points for sensitivity sweeps; the
    /// other aggregation is always computed alongside.
    pub aggregator: VarianceAggregator,
    pub base_seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid must be non-empty".into()));
        }
        if !self.n_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.n_grid[0] == 0 {
            return Err(Error::Config("grid values must be positive".into()));
        }
        if self.m_sets < 2 {
            return Err(Error::Config(
                "m_sets must be at least 2 (variance needs >= 2 samples)".into(),
            ));
        }
        if self.r_runs == 0 {
            return Err(Error::Config("r_runs must be at least 1".into()));
        }
        if self.target == SweepTarget::MultirunVariance {
            return Err(Error::Config(
                "multirun_variance sweeps are run through run_multirun_sweep".into(),
            ));
        }
        if let SamplingMode::PoolWithReplacement { pool_size } = self.sampling {
            if pool_size == 0 {
                return Err(Error::Config("pool_size must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Configuration of a multi-run variance sweep (variance of the subset-
/// averaged TCAV score versus the number of subsets s).
#[derive(Debug, Clone)]
pub struct MultirunConfig {
    /// Total random samples per draw; each draw is split into s subsets of
    /// size R / s.
    pub r_total: usize,
    /// Strictly increasing grid of subset counts.
    pub s_grid: Vec<usize>,
    /// Inner repetitions: fresh draws of R samples whose scores form one
    /// variance estimate.
    pub r_inner: usize,
    /// Outer repetitions of the whole variance estimate.
    pub e_outer: usize,
    pub estimator: EstimatorSpec,
    pub sampling: SamplingMode,
    pub base_seed: u64,
}

impl MultirunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_grid.is_empty() {
            return Err(Error::Config("s_grid must be non-empty".into()));
        }
        if !self.s_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("s_grid must be strictly increasing".into()));
        }
        if self.s_grid[0] == 0 {
            return Err(Error::Config("subset counts must be positive".into()));
        }
        for &s in &self.s_grid {
            if s > self.r_total {
                return Err(Error::Config(format!(
                    "subset count {s} exceeds total samples R = {}",
                    self.r_total
                )));
            }
        }
        if self.r_inner < 2 {
            return Err(Error::Config("r_inner must be at least 2".into()));
        }
        if self.e_outer == 0 {
            return Err(Error::Config("e_outer must be at least 1".into()));
        }
        Ok(())
    }
}

/// One grid point of a variance sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct VariancePoint {
    /// Grid value: N for sample sweeps, s for multi-run sweeps.
    pub x: f64,
    /// Mean of `per_run`.
    pub mean_variance: f64,
    /// Standard deviation across the runs (zero for a single run).
    pub spread: f64,
    pub per_run: Vec<f64>,
}

/// Values this small are reported as exactly zero.
const VARIANCE_FLOOR: f64 = 1e-300;

fn floor_variance(v: f64) -> f64 {
    if v < VARIANCE_FLOOR {
        0.0
    } else {
        v
    }
}

impl VariancePoint {
    fn from_runs(x: f64, per_run: Vec<f64>) -> Self {
        let per_run: Vec<f64> = per_run.into_iter().map(floor_variance).collect();
        let mean_variance = stats::mean(&per_run);
        let spread = if per_run.len() >= 2 {
            stats::sample_std(&per_run)
        } else {
            0.0
        };
        VariancePoint {
            x,
            mean_variance,
            spread,
            per_run,
        }
    }
}

/// Output of a sweep: primary points, the alternate-aggregation points for
/// sensitivity sweeps, and the number of failed fit cells.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<VariancePoint>,
    /// For sensitivity sweeps: the same grid reduced with the other
    /// aggregator (geometric if the primary is arithmetic, and vice versa).
    pub alt_points: Option<Vec<VariancePoint>>,
    pub failed_cells: usize,
}

/// Trace of the unbiased sample covariance of the CAV coefficient vectors.
pub fn cav_variance_trace(cavs: &[Cav]) -> Result<f64> {
    let m = cavs.len();
    if m < 2 {
        return Err(Error::Domain(format!(
            "variance trace needs >= 2 CAVs, got {m}"
        )));
    }
    let d = cavs[0].dim();
    for c in cavs {
        if c.dim() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: c.dim(),
            });
        }
    }
    // trace of covariance = mean squared distance from the mean, summed over
    // coordinates, with the unbiased divisor.
    let mut mean = vec![0.0f64; d];
    for c in cavs {
        linalg::add_scaled(&mut mean, 1.0, &c.beta);
    }
    for v in &mut mean {
        *v /= m as f64;
    }
    let mut acc = 0.0;
    for c in cavs {
        for (b, mu) in c.beta.iter().zip(&mean) {
            let delta = b - mu;
            acc += delta * delta;
        }
    }
    Ok(acc / (m as f64 - 1.0))
}

fn draw_with_replacement(pool: &[LatentPoint], count: usize, seed: u64) -> Vec<LatentPoint> {
    let mut rng = Prng::seed_from_u64(seed);
    (0..count)
        .map(|_| pool[rng.random_range(0..pool.len())].clone())
        .collect()
}

/// Per-cell reduction: one value per sweep cell, or `None` on fit failure.
struct CellValue {
    primary: f64,
    alternate: Option<f64>,
}

fn reduce_cell(
    config: &SweepConfig,
    scenario: &Scenario,
    pool: Option<&[LatentPoint]>,
    n: usize,
    cell_seed: u64,
) -> Result<CellValue> {
    let mut cavs = Vec::with_capacity(config.m_sets);
    for j in 0..config.m_sets {
        let set_seed = child_seed(cell_seed, &[TAG_SET, j as u64]);
        let refs = match pool {
            Some(p) => draw_with_replacement(p, n, set_seed),
            None => sample_references(&scenario.references, n, set_seed)?,
        };
        cavs.push(config.estimator.fit(&scenario.concepts, &refs, set_seed)?);
    }
    match config.target {
        SweepTarget::CavVariance => Ok(CellValue {
            primary: cav_variance_trace(&cavs)?,
            alternate: None,
        }),
        SweepTarget::SensitivityVariance => {
            // Scores per CAV per evaluation point, then variance across the
            // CAV batch for each point.
            let n_eval = scenario.eval.len();
            let mut per_point: Vec<Vec<f64>> = vec![Vec::with_capacity(config.m_sets); n_eval];
            for cav in &cavs {
                let s = sensitivity_scores(&scenario.head, cav, &scenario.eval)?;
                for (point_idx, v) in s.values.into_iter().enumerate() {
                    per_point[point_idx].push(v);
                }
            }
            let variances: Vec<f64> = per_point
                .iter()
                .map(|vals| stats::sample_variance(vals))
                .collect();
            let arithmetic = stats::mean(&variances);
            let geometric = stats::geometric_mean(&variances);
            let (primary, alternate) = match config.aggregator {
                VarianceAggregator::Arithmetic => (arithmetic, geometric),
                VarianceAggregator::Geometric => (geometric, arithmetic),
            };
            Ok(CellValue {
                primary,
                alternate: Some(alternate),
            })
        }
        SweepTarget::TcavVariance => {
            let scores: Vec<f64> = cavs
                .iter()
                .map(|cav| {
                    let s = sensitivity_scores(&scenario.head, cav, &scenario.eval)?;
                    tcav_score(&s)
                })
                .collect::<Result<_>>()?;
            Ok(CellValue {
                primary: stats::sample_variance(&scores),
                alternate: None,
            })
        }
        SweepTarget::MultirunVariance => unreachable!("validated out"),
    }
}

/// Run a variance-versus-N sweep over the scenario.
///
/// Cells (one per grid value per run) execute in parallel; each derives its
/// own seed from `(base_seed, N, run)`, and the reduction sorts by grid key,
/// so output is independent of thread scheduling. A failed fit drops only its
/// cell; the failure count is reported on the outcome.
pub fn run_sweep(config: &SweepConfig, scenario: &Scenario) -> Result<SweepOutcome> {
    config.validate()?;
    if let Some(&max_n) = config.n_grid.last() {
        if let SamplingMode::PoolWithReplacement { pool_size } = config.sampling {
            if pool_size < max_n {
                return Err(Error::Config(format!(
                    "pool_size {pool_size} smaller than largest grid value {max_n}"
                )));
            }
        }
    }

    // One pool per run, shared by every grid value in that run.
    let pools: Option<Vec<Vec<LatentPoint>>> = match config.sampling {
        SamplingMode::PoolWithReplacement { pool_size } => Some(
            (0..config.r_runs)
                .map(|run| {
                    sample_references(
                        &scenario.references,
                        pool_size,
                        child_seed(config.base_seed, &[TAG_POOL, run as u64]),
                    )
                })
                .collect::<Result<_>>()?,
        ),
        SamplingMode::Fresh => None,
    };

    let cells: Vec<(usize, usize)> = config
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(n_idx, _)| (0..config.r_runs).map(move |run| (n_idx, run)))
        .collect();

    let results: Vec<((usize, usize), Result<CellValue>)> = cells
        .into_par_iter()
        .map(|(n_idx, run)| {
            let n = config.n_grid[n_idx];
            let cell_seed = child_seed(config.base_seed, &[TAG_CELL, n as u64, run as u64]);
            let pool = pools.as_ref().map(|p| p[run].as_slice());
            (
                (n_idx, run),
                reduce_cell(config, scenario, pool, n, cell_seed),
            )
        })
        .collect();

    let mut per_point_runs: Vec<Vec<f64>> = vec![Vec::new(); config.n_grid.len()];
    let mut per_point_alt: Vec<Vec<f64>> = vec![Vec::new(); config.n_grid.len()];
    let mut failed_cells = 0usize;
    let mut ordered = results;
    ordered.sort_by_key(|((n_idx, run), _)| (*n_idx, *run));
    for ((n_idx, _run), outcome) in ordered {
        match outcome {
            Ok(cell) => {
                per_point_runs[n_idx].push(cell.primary);
                if let Some(alt) = cell.alternate {
                    per_point_alt[n_idx].push(alt);
                }
            }
            Err(_) => failed_cells += 1,
        }
    }

    let mut points = Vec::new();
    let mut alt_points = Vec::new();
    for (n_idx, runs) in per_point_runs.into_iter().enumerate() {
        if runs.is_empty() {
            continue; // every run failed at this grid value
        }
        let x = config.n_grid[n_idx] as f64;
        points.push(VariancePoint::from_runs(x, runs));
        if config.target == SweepTarget::SensitivityVariance {
            alt_points.push(VariancePoint::from_runs(x, per_point_alt[n_idx].clone()));
        }
    }
    let alt = if config.target == SweepTarget::SensitivityVariance {
        Some(alt_points)
    } else {
        None
    };
    Ok(SweepOutcome {
        points,
        alt_points: alt,
        failed_cells,
    })
}

/// Run the multi-run variance sweep: for each subset count s, `r_inner`
/// fresh draws of R samples produce `r_inner` multi-run scores whose variance
/// is one sample; `e_outer` repetitions give the mean and spread.
pub fn run_multirun_sweep(config: &MultirunConfig, scenario: &Scenario) -> Result<SweepOutcome> {
    config.validate()?;
    let pool: Option<Vec<LatentPoint>> = match config.sampling {
        SamplingMode::PoolWithReplacement { pool_size } => {
            if pool_size < config.r_total {
                return Err(Error::Config(format!(
                    "pool_size {pool_size} smaller than R = {}",
                    config.r_total
                )));
            }
            Some(sample_references(
                &scenario.references,
                pool_size,
                child_seed(config.base_seed, &[TAG_POOL]),
            )?)
        }
        SamplingMode::Fresh => None,
    };

    let cells: Vec<(usize, usize)> = config
        .s_grid
        .iter()
        .enumerate()
        .flat_map(|(s_idx, _)| (0..config.e_outer).map(move |outer| (s_idx, outer)))
        .collect();

    let results: Vec<((usize, usize), Result<f64>)> = cells
        .into_par_iter()
        .map(|(s_idx, outer)| {
            let s = config.s_grid[s_idx];
            let key = (
                (s_idx, outer),
                multirun_cell(config, scenario, pool.as_deref(), s, outer),
            );
            key
        })
        .collect();

    let mut per_point_runs: Vec<Vec<f64>> = vec![Vec::new(); config.s_grid.len()];
    let mut failed_cells = 0usize;
    let mut ordered = results;
    ordered.sort_by_key(|((s_idx, outer), _)| (*s_idx, *outer));
    for ((s_idx, _), outcome) in ordered {
        match outcome {
            Ok(v) => per_point_runs[s_idx].push(v),
            Err(_) => failed_cells += 1,
        }
    }

    let mut points = Vec::new();
    for (s_idx, runs) in per_point_runs.into_iter().enumerate() {
        if runs.is_empty() {
            continue;
        }
        points.push(VariancePoint::from_runs(config.s_grid[s_idx] as f64, runs));
    }
    Ok(SweepOutcome {
        points,
        alt_points: None,
        failed_cells,
    })
}

fn multirun_cell(
    config: &MultirunConfig,
    scenario: &Scenario,
    pool: Option<&[LatentPoint]>,
    s: usize,
    outer: usize,
) -> Result<f64> {
    let mut scores = Vec::with_capacity(config.r_inner);
    for inner in 0..config.r_inner {
        let draw_seed = child_seed(
            config.base_seed,
            &[TAG_MULTI, s as u64, outer as u64, inner as u64],
        );
        let samples = match pool {
            Some(p) => draw_with_replacement(p, config.r_total, draw_seed),
            None => sample_references(&scenario.references, config.r_total, draw_seed)?,
        };
        let result = multi_run_tcav(
            &scenario.concepts,
            &samples,
            s,
            &scenario.head,
            &scenario.eval,
            &config.estimator,
            child_seed(draw_seed, &[0x517]),
        )?;
        scores.push(result.multi_run_mean);
    }
    Ok(stats::sample_variance(&scores))
}

/// Least-squares fit of `y = a / x + b` plus a log-log slope diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveFit {
    pub a: f64,
    pub b: f64,
    pub residual_rms: f64,
    /// Least-squares slope of `log y` against `log x`, over the points with
    /// positive y.
    pub loglog_slope: f64,
    /// Points that entered the log-log regression.
    pub points_used: usize,
}

/// Fit `y = a/x + b` by least squares on the design `(1/x, 1)` and compute
/// the log-log slope over the positive-y points (non-positive y are excluded
/// and reflected in `points_used`).
pub fn fit_inverse_curve(points: &[(f64, f64)]) -> Result<CurveFit> {
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    if xs.len() < 2 {
        return Err(Error::Domain(
            "curve fit needs at least 2 distinct x values".into(),
        ));
    }
    if points.iter().any(|&(x, y)| x.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !y.is_finite()) {
        return Err(Error::Domain(
            "curve fit needs positive x and finite y".into(),
        ));
    }

    // Normal equations for [a, b] over the design (1/x, 1).
    let n = points.len() as f64;
    let mut s_uu = 0.0;
    let mut s_u = 0.0;
    let mut s_uy = 0.0;
    let mut s_y = 0.0;
    for &(x, y) in points {
        let u = 1.0 / x;
        s_uu += u * u;
        s_u += u;
        s_uy += u * y;
        s_y += y;
    }
    let det = s_uu * n - s_u * s_u;
    if det.abs() < 1e-14 * (s_uu * n).abs().max(1.0) {
        return Err(Error::Domain(
            "degenerate design for inverse curve fit".into(),
        ));
    }
    let a = (s_uy * n - s_u * s_y) / det;
    let b = (s_uu * s_y - s_u * s_uy) / det;

    let mut rss = 0.0;
    for &(x, y) in points {
        let r = y - (a / x + b);
        rss += r * r;
    }
    let residual_rms = (rss / n).sqrt();

    let positive: Vec<(f64, f64)> = points.iter().copied().filter(|&(_, y)| y > 0.0).collect();
    if positive.len() < 2 {
        return Err(Error::Domain(
            "log-log slope undefined: fewer than 2 points with positive y".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = positive.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in &logs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::Domain(
            "log-log slope undefined: a single distinct positive x".into(),
        ));
    }
    Ok(CurveFit {
        a,
        b,
        residual_rms,
        loglog_slope: sxy / sxx,
        points_used: positive.len(),
    })
}
