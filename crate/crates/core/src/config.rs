//! Experiment configuration: a sectioned key-value text format.
//!
//! ```text
//! [scenario]
//! kind = gaussian
//! dim = 4
//! cov = diag:1,2,3,4
//! concept_count = 20
//! concept_offset = 2.0
//! concept_spread = 0.5
//! eval_count = 50
//! head = linear:1,1,1,1@0
//! seed = 7
//!
//! [estimator]
//! kind = dom
//!
//! [sweep]
//! target = cav_variance
//! n_grid = 25,50,100,200,400,800
//! m_sets = 10
//! r_runs = 20
//! sampling = pool:10000
//! seed = 42
//!
//! [output]
//! dir = out
//! plots = true
//! ```
//!
//! Parsing is strict: unknown sections or keys are errors, so a manifest's
//! config snapshot is trustworthy. Exactly one scenario source must be given
//! (a synthetic kind or embedding files, never both).

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, EstimatorSpec, FitOptions, LearningRateSchedule};
use crate::ingest::{load_embedding_matrix, EmbeddingFile, EmbeddingFormat};
use crate::latent::{
    make_borderline_scenario, sample_references, ConceptSet, EvaluationSet, ReferenceSpec,
    Scenario, ScoringHead,
};
use crate::linalg::Matrix;
use crate::seeding::{child_seed, NormalSource};
use crate::stability::{
    MultirunConfig, SamplingMode, SweepConfig, SweepTarget, VarianceAggregator,
};
use std::collections::BTreeMap;
use std::path::PathBuf;

/// Raw parsed sections, in canonical (sorted-key) order.
#[derive(Debug, Clone, Default)]
struct Sections {
    map: BTreeMap<String, BTreeMap<String, String>>,
}

impl Sections {
    fn parse(text: &str) -> Result<Self> {
        let mut map: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                let name = name.trim().to_string();
                if map.contains_key(&name) {
                    return Err(Error::Config(format!(
                        "line {}: duplicate section [{name}]",
                        idx + 1
                    )));
                }
                map.insert(name.clone(), BTreeMap::new());
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value'",
                    idx + 1
                )));
            };
            let section = current.as_ref().ok_or_else(|| {
                Error::Config(format!("line {}: key outside any [section]", idx + 1))
            })?;
            let entries = map.get_mut(section).unwrap();
            let key = key.trim().to_string();
            if entries.contains_key(&key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{key}' in [{section}]",
                    idx + 1
                )));
            }
            entries.insert(key, value.trim().to_string());
        }
        Ok(Sections { map })
    }
}

/// Typed view of one section with strict key consumption.
struct SectionReader<'a> {
    name: &'a str,
    entries: BTreeMap<String, String>,
}

impl<'a> SectionReader<'a> {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key).ok_or_else(|| {
            Error::Config(format!("[{}] is missing required key '{key}'", self.name))
        })
    }

    fn parse_with<T>(&self, key: &str, value: &str, what: &str) -> Result<T>
    where
        T: std::str::FromStr,
    {
        value.parse().map_err(|_| {
            Error::Config(format!(
                "[{}] key '{key}': cannot parse '{value}' as {what}",
                self.name
            ))
        })
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        match self.take(key) {
            Some(v) => Ok(Some(self.parse_with(key, &v, what)?)),
            None => Ok(None),
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(Error::Config(format!(
                "[{}] has unknown key '{key}'",
                self.name
            )));
        }
        Ok(())
    }
}

fn parse_f64_list(section: &str, key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] key '{key}': bad number '{v}'")))
        })
        .collect()
}

fn parse_usize_list(section: &str, key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] key '{key}': bad integer '{v}'")))
        })
        .collect()
}

/// The synthetic or file-backed substrate description.
#[derive(Debug, Clone)]
pub enum ScenarioConfig {
    Gaussian {
        dim: usize,
        mean: Vec<f64>,
        cov: CovSpec,
        concept_count: usize,
        concept_offset: f64,
        concept_spread: f64,
        eval_count: usize,
        head: HeadSpec,
        seed: u64,
    },
    Borderline {
        dim: usize,
        eval_count: usize,
        /// Cosine bound; `inf` selects the far-from-boundary variant.
        offset: f64,
        seed: u64,
    },
    Files {
        dim: usize,
        format: EmbeddingFormat,
        concept_file: PathBuf,
        reference_file: PathBuf,
        eval_file: Option<PathBuf>,
        head: HeadSpec,
    },
}

#[derive(Debug, Clone)]
pub enum CovSpec {
    Identity,
    Diagonal(Vec<f64>),
}

impl CovSpec {
    fn parse(section: &str, value: &str) -> Result<Self> {
        if value == "identity" {
            return Ok(CovSpec::Identity);
        }
        if let Some(rest) = value.strip_prefix("diag:") {
            return Ok(CovSpec::Diagonal(parse_f64_list(section, "cov", rest)?));
        }
        Err(Error::Config(format!(
            "[{section}] cov must be 'identity' or 'diag:v1,v2,...', got '{value}'"
        )))
    }

    fn to_text(&self) -> String {
        match self {
            CovSpec::Identity => "identity".into(),
            CovSpec::Diagonal(d) => {
                format!(
                    "diag:{}",
                    d.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                )
            }
        }
    }

    pub fn matrix(&self, dim: usize) -> Result<Matrix> {
        match self {
            CovSpec::Identity => Ok(Matrix::identity(dim)),
            CovSpec::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::Config(format!(
                        "cov diagonal has {} entries but dim = {dim}",
                        d.len()
                    )));
                }
                Ok(Matrix::from_diag(d))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum HeadSpec {
    /// `linear:w1,w2,...@bias`
    Linear { weights: Vec<f64>, bias: f64 },
    /// `mlp:hidden` — a seeded random tanh network.
    Mlp { hidden: usize },
}

impl HeadSpec {
    fn parse(section: &str, value: &str) -> Result<Self> {
        if let Some(rest) = value.strip_prefix("linear:") {
            let (w, b) = match rest.split_once('@') {
                Some((w, b)) => (w, b),
                None => (rest, "0"),
            };
            let weights = parse_f64_list(section, "head", w)?;
            let bias: f64 = b
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] head: bad bias '{b}'")))?;
            return Ok(HeadSpec::Linear { weights, bias });
        }
        if let Some(rest) = value.strip_prefix("mlp:") {
            let hidden: usize = rest.trim().parse().map_err(|_| {
                Error::Config(format!("[{section}] head: bad hidden size '{rest}'"))
            })?;
            return Ok(HeadSpec::Mlp { hidden });
        }
        Err(Error::Config(format!(
            "[{section}] head must be 'linear:w1,...@bias' or 'mlp:hidden', got '{value}'"
        )))
    }

    fn to_text(&self) -> String {
        match self {
            HeadSpec::Linear { weights, bias } => format!(
                "linear:{}@{bias}",
                weights
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            HeadSpec::Mlp { hidden } => format!("mlp:{hidden}"),
        }
    }

    fn build(&self, dim: usize, seed: u64) -> Result<ScoringHead> {
        match self {
            HeadSpec::Linear { weights, bias } => {
                if weights.len() != dim {
                    return Err(Error::Config(format!(
                        "head has {} weights but dim = {dim}",
                        weights.len()
                    )));
                }
                Ok(ScoringHead::linear(weights.clone(), *bias))
            }
            HeadSpec::Mlp { hidden } => Ok(ScoringHead::random_mlp(dim, *hidden, seed)),
        }
    }
}

/// Estimator section.
#[derive(Debug, Clone)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    pub lambda: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub centering: bool,
    pub epochs: usize,
    pub learning_rate: LearningRateSchedule,
}

impl EstimatorConfig {
    pub fn spec(&self) -> EstimatorSpec {
        let opts = FitOptions {
            lambda: self.lambda,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
            centering: self.centering,
        };
        match self.kind {
            EstimatorKind::Logistic => EstimatorSpec::Logistic(opts),
            EstimatorKind::Hinge => EstimatorSpec::Hinge {
                opts,
                epochs: self.epochs,
                schedule: self.learning_rate,
            },
            EstimatorKind::Dom => EstimatorSpec::DifferenceOfMeans,
        }
    }
}

/// Sweep section (variance versus N).
#[derive(Debug, Clone)]
pub struct SweepSection {
    pub target: SweepTarget,
    pub n_grid: Vec<usize>,
    pub m_sets: usize,
    pub r_runs: usize,
    pub sampling: SamplingMode,
    pub aggregator: VarianceAggregator,
    pub seed: u64,
}

/// Multi-run section (variance versus s).
#[derive(Debug, Clone)]
pub struct MultirunSection {
    pub r_total: usize,
    pub s_grid: Vec<usize>,
    pub r_inner: usize,
    pub e_outer: usize,
    pub sampling: SamplingMode,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub plots: bool,
}

/// A fully parsed experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub sweep: Option<SweepSection>,
    pub multirun: Option<MultirunSection>,
    pub output: OutputSection,
}

fn parse_sampling(section: &str, value: &str) -> Result<SamplingMode> {
    if value == "fresh" {
        return Ok(SamplingMode::Fresh);
    }
    if let Some(rest) = value.strip_prefix("pool:") {
        let size: usize = rest
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("[{section}] sampling: bad pool size '{rest}'")))?;
        return Ok(SamplingMode::PoolWithReplacement { pool_size: size });
    }
    Err(Error::Config(format!(
        "[{section}] sampling must be 'fresh' or 'pool:SIZE', got '{value}'"
    )))
}

fn sampling_to_text(mode: &SamplingMode) -> String {
    match mode {
        SamplingMode::Fresh => "fresh".into(),
        SamplingMode::PoolWithReplacement { pool_size } => format!("pool:{pool_size}"),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = Sections::parse(text)?;
        let known = ["scenario", "estimator", "sweep", "multirun", "output"];
        for name in sections.map.keys() {
            if !known.contains(&name.as_str()) {
                return Err(Error::Config(format!("unknown section [{name}]")));
            }
        }

        let scenario = {
            let entries = sections
                .map
                .remove("scenario")
                .ok_or_else(|| Error::Config("missing [scenario] section".into()))?;
            let mut r = SectionReader {
                name: "scenario",
                entries,
            };
            let kind = r.require("kind")?;
            let config = match kind.as_str() {
                "gaussian" => {
                    let dim: usize = r
                        .take_parsed("dim", "an integer")?
                        .ok_or_else(|| Error::Config("[scenario] needs 'dim'".into()))?;
                    let mean = match r.take("mean") {
                        Some(v) => parse_f64_list("scenario", "mean", &v)?,
                        None => vec![0.0; dim],
                    };
                    let cov = match r.take("cov") {
                        Some(v) => CovSpec::parse("scenario", &v)?,
                        None => CovSpec::Identity,
                    };
                    let concept_count = r.take_parsed("concept_count", "an integer")?.unwrap_or(20);
                    let concept_offset =
                        r.take_parsed("concept_offset", "a number")?.unwrap_or(2.0);
                    let concept_spread =
                        r.take_parsed("concept_spread", "a number")?.unwrap_or(0.5);
                    let eval_count = r.take_parsed("eval_count", "an integer")?.unwrap_or(50);
                    let head = match r.take("head") {
                        Some(v) => HeadSpec::parse("scenario", &v)?,
                        None => HeadSpec::Linear {
                            weights: vec![1.0; dim],
                            bias: 0.0,
                        },
                    };
                    let seed = r.take_parsed("seed", "an integer")?.unwrap_or(0);
                    ScenarioConfig::Gaussian {
                        dim,
                        mean,
                        cov,
                        concept_count,
                        concept_offset,
                        concept_spread,
                        eval_count,
                        head,
                        seed,
                    }
                }
                "borderline" => {
                    let dim: usize = r
                        .take_parsed("dim", "an integer")?
                        .ok_or_else(|| Error::Config("[scenario] needs 'dim'".into()))?;
                    let eval_count = r.take_parsed("eval_count", "an integer")?.unwrap_or(50);
                    let offset = match r.take("offset") {
                        Some(v) if v == "inf" => f64::INFINITY,
                        Some(v) => v.parse().map_err(|_| {
                            Error::Config(format!("[scenario] offset: bad number '{v}'"))
                        })?,
                        None => 0.01,
                    };
                    let seed = r.take_parsed("seed", "an integer")?.unwrap_or(0);
                    ScenarioConfig::Borderline {
                        dim,
                        eval_count,
                        offset,
                        seed,
                    }
                }
                "files" => {
                    let dim: usize = r
                        .take_parsed("dim", "an integer")?
                        .ok_or_else(|| Error::Config("[scenario] needs 'dim'".into()))?;
                    let format =
                        EmbeddingFormat::parse(&r.take("format").unwrap_or_else(|| "csv".into()))?;
                    let concept_file = PathBuf::from(r.require("concept_file")?);
                    let reference_file = PathBuf::from(r.require("reference_file")?);
                    let eval_file = r.take("eval_file").map(PathBuf::from);
                    let head = match r.take("head") {
                        Some(v) => HeadSpec::parse("scenario", &v)?,
                        None => HeadSpec::Linear {
                            weights: vec![1.0; dim],
                            bias: 0.0,
                        },
                    };
                    for (label, path) in [
                        ("concept_file", Some(&concept_file)),
                        ("reference_file", Some(&reference_file)),
                        ("eval_file", eval_file.as_ref()),
                    ] {
                        if let Some(p) = path {
                            if !p.exists() {
                                return Err(Error::Config(format!(
                                    "[scenario] {label} does not exist: {}",
                                    p.display()
                                )));
                            }
                        }
                    }
                    ScenarioConfig::Files {
                        dim,
                        format,
                        concept_file,
                        reference_file,
                        eval_file,
                        head,
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "[scenario] kind must be gaussian, borderline, or files; got '{other}'"
                    )))
                }
            };
            r.finish()?;
            config
        };

        let estimator = {
            let entries = sections
                .map
                .remove("estimator")
                .ok_or_else(|| Error::Config("missing [estimator] section".into()))?;
            let mut r = SectionReader {
                name: "estimator",
                entries,
            };
            let kind = EstimatorKind::parse(&r.require("kind")?)?;
            let lambda = r.take_parsed("lambda", "a number")?.unwrap_or(1.0);
            let tolerance = r.take_parsed("tolerance", "a number")?.unwrap_or(1e-8);
            let max_iterations = r
                .take_parsed("max_iterations", "an integer")?
                .unwrap_or(500);
            let centering = r.take_parsed("centering", "a boolean")?.unwrap_or(true);
            let epochs = r.take_parsed("epochs", "an integer")?.unwrap_or(50);
            let learning_rate = match r.take("learning_rate") {
                None => LearningRateSchedule::InverseLambdaT,
                Some(v) if v == "inverse" => LearningRateSchedule::InverseLambdaT,
                Some(v) => match v.strip_prefix("constant:") {
                    Some(c) => LearningRateSchedule::Constant(c.parse().map_err(|_| {
                        Error::Config(format!("[estimator] learning_rate: bad constant '{c}'"))
                    })?),
                    None => {
                        return Err(Error::Config(format!(
                            "[estimator] learning_rate must be 'inverse' or 'constant:C', got '{v}'"
                        )))
                    }
                },
            };
            r.finish()?;
            EstimatorConfig {
                kind,
                lambda,
                tolerance,
                max_iterations,
                centering,
                epochs,
                learning_rate,
            }
        };

        let sweep = match sections.map.remove("sweep") {
            None => None,
            Some(entries) => {
                let mut r = SectionReader {
                    name: "sweep",
                    entries,
                };
                let target = SweepTarget::parse(&r.require("target")?)?;
                let n_grid = parse_usize_list("sweep", "n_grid", &r.require("n_grid")?)?;
                let m_sets = r.take_parsed("m_sets", "an integer")?.unwrap_or(10);
                let r_runs = r.take_parsed("r_runs", "an integer")?.unwrap_or(10);
                let sampling = match r.take("sampling") {
                    Some(v) => parse_sampling("sweep", &v)?,
                    None => SamplingMode::PoolWithReplacement { pool_size: 10_000 },
                };
                let aggregator = match r.take("aggregator") {
                    None => VarianceAggregator::Arithmetic,
                    Some(v) if v == "arithmetic" => VarianceAggregator::Arithmetic,
                    Some(v) if v == "geometric" => VarianceAggregator::Geometric,
                    Some(v) => {
                        return Err(Error::Config(format!(
                            "[sweep] aggregator must be arithmetic or geometric, got '{v}'"
                        )))
                    }
                };
                let seed = r.take_parsed("seed", "an integer")?.unwrap_or(0);
                r.finish()?;
                Some(SweepSection {
                    target,
                    n_grid,
                    m_sets,
                    r_runs,
                    sampling,
                    aggregator,
                    seed,
                })
            }
        };

        let multirun = match sections.map.remove("multirun") {
            None => None,
            Some(entries) => {
                let mut r = SectionReader {
                    name: "multirun",
                    entries,
                };
                let r_total: usize = r
                    .take_parsed("r_total", "an integer")?
                    .ok_or_else(|| Error::Config("[multirun] needs 'r_total'".into()))?;
                let s_grid = parse_usize_list("multirun", "s_grid", &r.require("s_grid")?)?;
                let r_inner = r.take_parsed("r_inner", "an integer")?.unwrap_or(10);
                let e_outer = r.take_parsed("e_outer", "an integer")?.unwrap_or(10);
                let sampling = match r.take("sampling") {
                    Some(v) => parse_sampling("multirun", &v)?,
                    None => SamplingMode::Fresh,
                };
                let seed = r.take_parsed("seed", "an integer")?.unwrap_or(0);
                r.finish()?;
                Some(MultirunSection {
                    r_total,
                    s_grid,
                    r_inner,
                    e_outer,
                    sampling,
                    seed,
                })
            }
        };

        let output = match sections.map.remove("output") {
            None => OutputSection {
                dir: PathBuf::from("out"),
                plots: true,
            },
            Some(entries) => {
                let mut r = SectionReader {
                    name: "output",
                    entries,
                };
                let dir = PathBuf::from(r.take("dir").unwrap_or_else(|| "out".into()));
                let plots = r.take_parsed("plots", "a boolean")?.unwrap_or(true);
                r.finish()?;
                OutputSection { dir, plots }
            }
        };

        Ok(ExperimentConfig {
            scenario,
            estimator,
            sweep,
            multirun,
            output,
        })
    }

    /// Canonical text form; parses back to an equivalent configuration.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("[scenario]\n");
        match &self.scenario {
            ScenarioConfig::Gaussian {
                dim,
                mean,
                cov,
                concept_count,
                concept_offset,
                concept_spread,
                eval_count,
                head,
                seed,
            } => {
                out.push_str("kind = gaussian\n");
                out.push_str(&format!("dim = {dim}\n"));
                out.push_str(&format!(
                    "mean = {}\n",
                    mean.iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                ));
                out.push_str(&format!("cov = {}\n", cov.to_text()));
                out.push_str(&format!("concept_count = {concept_count}\n"));
                out.push_str(&format!("concept_offset = {concept_offset}\n"));
                out.push_str(&format!("concept_spread = {concept_spread}\n"));
                out.push_str(&format!("eval_count = {eval_count}\n"));
                out.push_str(&format!("head = {}\n", head.to_text()));
                out.push_str(&format!("seed = {seed}\n"));
            }
            ScenarioConfig::Borderline {
                dim,
                eval_count,
                offset,
                seed,
            } => {
                out.push_str("kind = borderline\n");
                out.push_str(&format!("dim = {dim}\n"));
                out.push_str(&format!("eval_count = {eval_count}\n"));
                if offset.is_infinite() {
                    out.push_str("offset = inf\n");
                } else {
                    out.push_str(&format!("offset = {offset}\n"));
                }
                out.push_str(&format!("seed = {seed}\n"));
            }
            ScenarioConfig::Files {
                dim,
                format,
                concept_file,
                reference_file,
                eval_file,
                head,
            } => {
                out.push_str("kind = files\n");
                out.push_str(&format!("dim = {dim}\n"));
                out.push_str(&format!("format = {}\n", format.as_str()));
                out.push_str(&format!("concept_file = {}\n", concept_file.display()));
                out.push_str(&format!("reference_file = {}\n", reference_file.display()));
                if let Some(e) = eval_file {
                    out.push_str(&format!("eval_file = {}\n", e.display()));
                }
                out.push_str(&format!("head = {}\n", head.to_text()));
            }
        }
        out.push_str("\n[estimator]\n");
        out.push_str(&format!("kind = {}\n", self.estimator.kind.as_str()));
        out.push_str(&format!("lambda = {}\n", self.estimator.lambda));
        out.push_str(&format!("tolerance = {}\n", self.estimator.tolerance));
        out.push_str(&format!(
            "max_iterations = {}\n",
            self.estimator.max_iterations
        ));
        out.push_str(&format!("centering = {}\n", self.estimator.centering));
        if self.estimator.kind == EstimatorKind::Hinge {
            out.push_str(&format!("epochs = {}\n", self.estimator.epochs));
            let lr = match self.estimator.learning_rate {
                LearningRateSchedule::InverseLambdaT => "inverse".to_string(),
                LearningRateSchedule::Constant(c) => format!("constant:{c}"),
            };
            out.push_str(&format!("learning_rate = {lr}\n"));
        }
        if let Some(sweep) = &self.sweep {
            out.push_str("\n[sweep]\n");
            out.push_str(&format!("target = {}\n", sweep.target.as_str()));
            out.push_str(&format!(
                "n_grid = {}\n",
                sweep
                    .n_grid
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
            out.push_str(&format!("m_sets = {}\n", sweep.m_sets));
            out.push_str(&format!("r_runs = {}\n", sweep.r_runs));
            out.push_str(&format!(
                "sampling = {}\n",
                sampling_to_text(&sweep.sampling)
            ));
            let agg = match sweep.aggregator {
                VarianceAggregator::Arithmetic => "arithmetic",
                VarianceAggregator::Geometric => "geometric",
            };
            out.push_str(&format!("aggregator = {agg}\n"));
            out.push_str(&format!("seed = {}\n", sweep.seed));
        }
        if let Some(m) = &self.multirun {
            out.push_str("\n[multirun]\n");
            out.push_str(&format!("r_total = {}\n", m.r_total));
            out.push_str(&format!(
                "s_grid = {}\n",
                m.s_grid
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
            out.push_str(&format!("r_inner = {}\n", m.r_inner));
            out.push_str(&format!("e_outer = {}\n", m.e_outer));
            out.push_str(&format!("sampling = {}\n", sampling_to_text(&m.sampling)));
            out.push_str(&format!("seed = {}\n", m.seed));
        }
        out.push_str("\n[output]\n");
        out.push_str(&format!("dir = {}\n", self.output.dir.display()));
        out.push_str(&format!("plots = {}\n", self.output.plots));
        out
    }
}

impl ScenarioConfig {
    pub fn dim(&self) -> usize {
        match self {
            ScenarioConfig::Gaussian { dim, .. }
            | ScenarioConfig::Borderline { dim, .. }
            | ScenarioConfig::Files { dim, .. } => *dim,
        }
    }

    /// Materialize the scenario (sampling synthetic parts, loading files).
    pub fn build(&self) -> Result<Scenario> {
        match self {
            ScenarioConfig::Gaussian {
                dim,
                mean,
                cov,
                concept_count,
                concept_offset,
                concept_spread,
                eval_count,
                head,
                seed,
            } => {
                if mean.len() != *dim {
                    return Err(Error::Config(format!(
                        "mean has {} entries but dim = {dim}",
                        mean.len()
                    )));
                }
                let cov_matrix = cov.matrix(*dim)?;
                let references = ReferenceSpec::gaussian(mean.clone(), cov_matrix)?;

                // Concepts: a cluster at mean + offset * e1 with the given
                // spread, sampled deterministically.
                let mut source = NormalSource::from_seed(child_seed(*seed, &[0xc09c]));
                let mut concept_points = Vec::with_capacity(*concept_count);
                for _ in 0..*concept_count {
                    let mut p = vec![0.0f64; *dim];
                    source.fill_normal(&mut p);
                    for (k, v) in p.iter_mut().enumerate() {
                        *v = mean[k] + *v * concept_spread;
                    }
                    p[0] += concept_offset;
                    concept_points.push(p);
                }
                let concepts = ConceptSet::new(concept_points)?;

                let eval_points =
                    sample_references(&references, *eval_count, child_seed(*seed, &[0xe7a1]))?;
                let eval = EvaluationSet::new(eval_points)?;
                let head = head.build(*dim, child_seed(*seed, &[0x6ead]))?;
                Ok(Scenario {
                    concepts,
                    references,
                    head,
                    eval,
                })
            }
            ScenarioConfig::Borderline {
                dim,
                eval_count,
                offset,
                seed,
            } => make_borderline_scenario(*dim, *eval_count, *offset, *seed),
            ScenarioConfig::Files {
                dim,
                format,
                concept_file,
                reference_file,
                eval_file,
                head,
            } => {
                let concepts = ConceptSet::new(load_embedding_matrix(&EmbeddingFile::new(
                    concept_file,
                    *format,
                    *dim,
                ))?)?;
                let pool =
                    load_embedding_matrix(&EmbeddingFile::new(reference_file, *format, *dim))?;
                let references = ReferenceSpec::empirical(pool)?;
                let eval = match eval_file {
                    Some(path) => EvaluationSet::new(load_embedding_matrix(&EmbeddingFile::new(
                        path, *format, *dim,
                    ))?)?,
                    // Without a dedicated evaluation file the reference pool
                    // doubles as the evaluation inputs.
                    None => EvaluationSet::new(match &references {
                        ReferenceSpec::Empirical(pool) => pool.clone(),
                        _ => unreachable!(),
                    })?,
                };
                let head = head.build(*dim, 0)?;
                Ok(Scenario {
                    concepts,
                    references,
                    head,
                    eval,
                })
            }
        }
    }
}

impl SweepSection {
    pub fn to_config(&self, estimator: EstimatorSpec) -> SweepConfig {
        SweepConfig {
            target: self.target,
            n_grid: self.n_grid.clone(),
            m_sets: self.m_sets,
            r_runs: self.r_runs,
            estimator,
            sampling: self.sampling,
            aggregator: self.aggregator,
            base_seed: self.seed,
        }
    }
}

impl MultirunSection {
    pub fn to_config(&self, estimator: EstimatorSpec) -> MultirunConfig {
        MultirunConfig {
            r_total: self.r_total,
            s_grid: self.s_grid.clone(),
            r_inner: self.r_inner,
            e_outer: self.e_outer,
            estimator,
            sampling: self.sampling,
            base_seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# comment
[scenario]
kind = gaussian
dim = 3
cov = diag:1,2,3
concept_count = 8
concept_offset = 1.5
concept_spread = 0.25
eval_count = 12
head = linear:1,0,0@0
seed = 5

[estimator]
kind = dom

[sweep]
target = cav_variance
n_grid = 10,20,40
m_sets = 4
r_runs = 3
sampling = pool:500
seed = 9

[output]
dir = results
plots = false
";

    #[test]
    fn sample_config_parses_and_builds() {
        let config = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(config.scenario.dim(), 3);
        assert_eq!(config.estimator.kind, EstimatorKind::Dom);
        let sweep = config.sweep.as_ref().unwrap();
        assert_eq!(sweep.n_grid, vec![10, 20, 40]);
        assert!(!config.output.plots);
        let scenario = config.scenario.build().unwrap();
        assert_eq!(scenario.dim(), 3);
        assert_eq!(scenario.concepts.len(), 8);
        assert_eq!(scenario.eval.len(), 12);
    }

    #[test]
    fn round_trip_through_text_is_stable() {
        let config = ExperimentConfig::parse(SAMPLE).unwrap();
        let text = config.to_text();
        let reparsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(text, reparsed.to_text());
    }

    #[test]
    fn unknown_keys_and_sections_are_rejected() {
        let bad = SAMPLE.replace("[output]", "[outputs]");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = SAMPLE.replace("plots = false", "plots = false\nsurprise = 1");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = SAMPLE.replace("kind = dom", "kind = dom\nkind = dom");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn missing_required_sections_are_rejected() {
        assert!(ExperimentConfig::parse("[estimator]\nkind = dom\n").is_err());
        assert!(ExperimentConfig::parse("[scenario]\nkind = borderline\ndim = 3\n").is_err());
    }

    #[test]
    fn files_scenario_requires_existing_files() {
        let text = "\
[scenario]
kind = files
dim = 2
concept_file = /nonexistent/c.csv
reference_file = /nonexistent/r.csv

[estimator]
kind = dom
";
        let err = ExperimentConfig::parse(text).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("concept_file"));
    }

    #[test]
    fn borderline_scenario_config_builds_far_variant() {
        let text = "\
[scenario]
kind = borderline
dim = 4
eval_count = 6
offset = inf
seed = 2

[estimator]
kind = dom
";
        let config = ExperimentConfig::parse(text).unwrap();
        let scenario = config.scenario.build().unwrap();
        assert_eq!(scenario.eval.len(), 6);
        let text2 = config.to_text();
        assert!(text2.contains("offset = inf"));
    }
}
