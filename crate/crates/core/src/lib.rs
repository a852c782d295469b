//! Concept activation vectors and their stability.
//!
//! This crate fits CAVs (penalized logistic regression, hinge-loss SGD, and
//! difference of means), computes sensitivity and TCAV scores, and runs the
//! seeded Monte-Carlo experiments that measure how those quantities vary with
//! the number of random reference samples: variance-versus-N sweeps, inverse
//! curve fits with log-log slope diagnostics, multi-run TCAV averaging, and
//! the asymptotic-covariance checks (surround condition, limit Hessian,
//! sandwich covariance, difference-of-means closed form).

pub mod config;
pub mod error;
pub mod estimators;
pub mod ingest;
pub mod latent;
pub mod linalg;
pub mod pipeline;
pub mod plot;
pub mod report;
pub mod scoring;
pub mod seeding;
pub mod stability;
pub mod stats;
pub mod theory;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use estimators::{Cav, EstimatorKind, EstimatorSpec, FitOptions, LearningRateSchedule};
pub use latent::{
    make_borderline_scenario, sample_references, ConceptSet, EvaluationSet, LatentPoint,
    ReferenceSpec, Scenario, ScoringHead,
};
pub use scoring::{multi_run_tcav, sensitivity_scores, tcav_score, SensitivityVector, TcavResult};
pub use stability::{
    cav_variance_trace, fit_inverse_curve, run_multirun_sweep, run_sweep, CurveFit, MultirunConfig,
    SamplingMode, SweepConfig, SweepTarget, VarianceAggregator, VariancePoint,
};
