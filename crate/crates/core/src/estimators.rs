//! Concept-activation-vector estimators.
//!
//! Three fitters produce a CAV (the coefficient vector of a linear boundary
//! between concept and reference embeddings, oriented toward the concept
//! class):
//!
//! * L2-penalized logistic regression, maximized by deterministic full-batch
//!   damped Newton ascent. No stochastic steps: the only randomness in any
//!   experiment downstream is the reference sample itself.
//! * A hinge-loss linear classifier trained with seeded SGD
//!   (Pegasos-style 1/(lambda t) schedule by default).
//! * Difference of means: `beta = concept mean - reference mean`, exactly.
//!
//! CAVs are kept as raw coefficients; no unit normalization is applied unless
//! explicitly requested, and none of the variance experiments use it.

use crate::error::{Error, Result};
use crate::latent::{ConceptSet, LatentPoint};
use crate::linalg::{self, Matrix};
use crate::seeding::{child_seed, shuffled_indices, Prng};
use rand::SeedableRng;

/// Which estimator produced a CAV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Logistic,
    Hinge,
    Dom,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Logistic => "logistic",
            EstimatorKind::Hinge => "hinge",
            EstimatorKind::Dom => "dom",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(EstimatorKind::Logistic),
            "hinge" => Ok(EstimatorKind::Hinge),
            "dom" => Ok(EstimatorKind::Dom),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// A fitted concept activation vector with estimator metadata.
///
/// `alpha` is the intercept in the centered parameterization actually fitted
/// (`sigma(alpha + beta . (u - center))`); when centering is disabled the
/// center is the zero vector and `alpha` coincides with the raw intercept.
/// Result files report the de-centered intercept via [`Cav::alpha_uncentered`].
#[derive(Debug, Clone, PartialEq)]
pub struct Cav {
    pub beta: Vec<f64>,
    pub alpha: f64,
    /// Centering vector used during the fit (all zeros when centering is off).
    pub center: Vec<f64>,
    pub estimator: EstimatorKind,
    pub lambda: f64,
    pub n_concept: usize,
    pub n_reference: usize,
    pub seed: u64,
    /// `N * exp(alpha)`; the intercept-scaling quantity tracked by the
    /// infinitely imbalanced analysis. Absent for difference of means.
    pub a_n: Option<f64>,
}

impl Cav {
    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    /// Intercept in the uncentered convention `sigma(alpha_u + beta . u)`.
    pub fn alpha_uncentered(&self) -> f64 {
        self.alpha - linalg::dot(&self.beta, &self.center)
    }

    /// Unit-norm copy, for interoperability. Never used by the variance
    /// experiments, which operate on raw coefficients.
    pub fn normalized(&self) -> Cav {
        let norm = linalg::norm2(&self.beta);
        let mut out = self.clone();
        if norm > 0.0 {
            for v in &mut out.beta {
                *v /= norm;
            }
        }
        out
    }
}

/// Options shared by the iterative fitters.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub lambda: f64,
    /// Stop when the gradient infinity-norm falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Subtract the concept mean from all inputs before fitting.
    pub centering: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 1.0,
            tolerance: 1e-8,
            max_iterations: 500,
            centering: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if !self.tolerance.is_finite() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Learning-rate schedule for the hinge SGD fitter.
#[derive(Debug, Clone, Copy)]
pub enum LearningRateSchedule {
    /// `eta_t = 1 / (lambda * t)`; requires `lambda > 0`.
    InverseLambdaT,
    Constant(f64),
}

/// An estimator with everything needed to fit it.
#[derive(Debug, Clone)]
pub enum EstimatorSpec {
    Logistic(FitOptions),
    Hinge {
        opts: FitOptions,
        epochs: usize,
        schedule: LearningRateSchedule,
    },
    DifferenceOfMeans,
}

impl EstimatorSpec {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            EstimatorSpec::Logistic(_) => EstimatorKind::Logistic,
            EstimatorSpec::Hinge { .. } => EstimatorKind::Hinge,
            EstimatorSpec::DifferenceOfMeans => EstimatorKind::Dom,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            EstimatorSpec::Logistic(o) => o.lambda,
            EstimatorSpec::Hinge { opts, .. } => opts.lambda,
            EstimatorSpec::DifferenceOfMeans => 0.0,
        }
    }

    /// Fit a CAV with this estimator; `seed` is recorded in the result and
    /// drives the hinge shuffling.
    pub fn fit(&self, concepts: &ConceptSet, references: &[LatentPoint], seed: u64) -> Result<Cav> {
        match self {
            EstimatorSpec::Logistic(opts) => {
                let mut cav = fit_logistic_penalized(concepts, references, opts)?;
                cav.seed = seed;
                Ok(cav)
            }
            EstimatorSpec::Hinge {
                opts,
                epochs,
                schedule,
            } => fit_hinge_sgd(concepts, references, opts, *epochs, *schedule, seed),
            EstimatorSpec::DifferenceOfMeans => {
                let mut cav = fit_difference_of_means(concepts, references)?;
                cav.seed = seed;
                Ok(cav)
            }
        }
    }
}

/// Numerically stable `sigma(u) = 1 / (1 + exp(-u))`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let eu = u.exp();
        eu / (1.0 + eu)
    }
}

/// `log(1 + exp(u))` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// `log sigma(u)`, evaluated in log space (never through `sigma` then `log`).
fn log_sigmoid(u: f64) -> f64 {
    -softplus(-u)
}

fn check_dims(concepts: &ConceptSet, references: &[LatentPoint], beta: &[f64]) -> Result<usize> {
    let d = concepts.dim();
    if beta.len() != d {
        return Err(Error::ShapeMismatch {
            expected: d,
            got: beta.len(),
        });
    }
    for r in references {
        if r.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: r.len(),
            });
        }
    }
    Ok(d)
}

/// Penalized log-likelihood in the given centering, computed stably.
fn logistic_objective_centered(
    alpha: f64,
    beta: &[f64],
    concepts: &ConceptSet,
    references: &[LatentPoint],
    lambda: f64,
    center: &[f64],
) -> f64 {
    let mut total = 0.0;
    for x in concepts.points() {
        let mut t = alpha;
        for k in 0..beta.len() {
            t += beta[k] * (x[k] - center[k]);
        }
        total += log_sigmoid(t);
    }
    for z in references {
        let mut s = alpha;
        for k in 0..beta.len() {
            s += beta[k] * (z[k] - center[k]);
        }
        // log(1 - sigma(s)) = log sigma(-s)
        total += log_sigmoid(-s);
    }
    total - 0.5 * lambda * linalg::dot(beta, beta)
}

/// The L2-penalized log-likelihood of the logistic CAV model, in the raw
/// (uncentered) parameterization.
pub fn logistic_objective(
    alpha: f64,
    beta: &[f64],
    concepts: &ConceptSet,
    references: &[LatentPoint],
    lambda: f64,
) -> Result<f64> {
    let d = check_dims(concepts, references, beta)?;
    let zeros = vec![0.0; d];
    Ok(logistic_objective_centered(
        alpha, beta, concepts, references, lambda, &zeros,
    ))
}

/// Gradient and Hessian of the penalized log-likelihood over `(alpha, beta)`,
/// with inputs shifted by `center` (pass the concept mean to work in the
/// centered parameterization, or zeros for the raw one).
///
/// Layout: index 0 is `alpha`, indices `1..=d` are `beta`. The Hessian is
/// symmetric by construction and equals
/// `-sum sigma_k (1-sigma_k) [1; u_k - center] [1; u_k - center]^T` minus
/// `lambda I` on the beta block.
pub fn logistic_score_and_hessian(
    alpha: f64,
    beta: &[f64],
    concepts: &ConceptSet,
    references: &[LatentPoint],
    lambda: f64,
    center: &[f64],
) -> Result<(Vec<f64>, Matrix)> {
    let d = check_dims(concepts, references, beta)?;
    if center.len() != d {
        return Err(Error::ShapeMismatch {
            expected: d,
            got: center.len(),
        });
    }
    let dim = d + 1;
    let mut grad = vec![0.0f64; dim];
    let mut hess = Matrix::zeros(dim, dim);
    let mut shifted = vec![0.0f64; dim];
    shifted[0] = 1.0;

    let mut accumulate = |point: &[f64], label_concept: bool| {
        for k in 0..d {
            shifted[k + 1] = point[k] - center[k];
        }
        let lin = alpha + linalg::dot(&shifted[1..], beta);
        let sig = sigmoid(lin);
        // d/d(theta) of log sigma(t) is (1-sigma) * u; of log(1-sigma(t)) is -sigma * u.
        let residual = if label_concept { 1.0 - sig } else { -sig };
        linalg::add_scaled(&mut grad, residual, &shifted);
        hess.add_outer(-(sig * (1.0 - sig)), &shifted);
    };

    for x in concepts.points() {
        accumulate(x, true);
    }
    for z in references {
        accumulate(z, false);
    }

    for k in 0..d {
        grad[k + 1] -= lambda * beta[k];
        hess[(k + 1, k + 1)] -= lambda;
    }
    Ok((grad, hess))
}

/// Coefficient norm beyond which an unpenalized fit on separable data is
/// declared divergent.
const SEPARABILITY_NORM: f64 = 1e6;

/// Divergence test for the unpenalized fit. The coefficient norm bound is the
/// declared detector; in double precision the log-loss of separated data
/// saturates to zero (every margin underflows the logistic tail) well before
/// the norm bound can be reached on unit-scale data, which is just as
/// definitive: no finite maximizer exists.
fn check_separability(lambda: f64, beta: &[f64], value: f64) -> Result<()> {
    if lambda > 0.0 {
        return Ok(());
    }
    let norm = linalg::norm2(beta);
    if norm > SEPARABILITY_NORM || value >= -1e-10 {
        return Err(Error::Separable { beta_norm: norm });
    }
    Ok(())
}

/// Maximize the penalized log-likelihood by damped full-batch Newton ascent.
///
/// Deterministic: fixed warm start `alpha = ln(n/N)`, Newton direction with
/// Levenberg damping if the negated Hessian loses definiteness, and Armijo
/// backtracking on the objective. Concept examples carry label 1, so `beta`
/// points toward the concept class.
pub fn fit_logistic_penalized(
    concepts: &ConceptSet,
    references: &[LatentPoint],
    opts: &FitOptions,
) -> Result<Cav> {
    opts.validate()?;
    if references.is_empty() {
        return Err(Error::Config(
            "logistic fit needs at least one reference".into(),
        ));
    }
    let d = concepts.dim();
    check_dims(concepts, references, &vec![0.0; d])?;
    let center: Vec<f64> = if opts.centering {
        concepts.mean().to_vec()
    } else {
        vec![0.0; d]
    };

    let n = concepts.len() as f64;
    let n_ref = references.len() as f64;
    let mut alpha = (n / n_ref).ln();
    let mut beta = vec![0.0f64; d];
    let mut value =
        logistic_objective_centered(alpha, &beta, concepts, references, opts.lambda, &center);

    let mut grad_norm = f64::INFINITY;
    let mut basin_grad = f64::INFINITY;
    for _iter in 0..opts.max_iterations {
        let (grad, hess) =
            logistic_score_and_hessian(alpha, &beta, concepts, references, opts.lambda, &center)?;
        grad_norm = linalg::norm_inf(&grad);
        if grad_norm <= opts.tolerance {
            check_separability(opts.lambda, &beta, value)?;
            let a_n = n_ref * alpha.exp();
            return Ok(Cav {
                beta,
                alpha,
                center,
                estimator: EstimatorKind::Logistic,
                lambda: opts.lambda,
                n_concept: concepts.len(),
                n_reference: references.len(),
                seed: 0,
                a_n: Some(a_n),
            });
        }

        // Newton direction on the concave objective: solve (-H) delta = grad.
        let mut neg_hess = hess.clone();
        neg_hess.scale(-1.0);
        let mut damping = 0.0;
        let direction = loop {
            let mut system = neg_hess.clone();
            if damping > 0.0 {
                for k in 0..system.rows {
                    system[(k, k)] += damping;
                }
            }
            match linalg::solve_spd(&system, &grad) {
                Ok(dir) => break dir,
                Err(_) => {
                    damping = if damping == 0.0 { 1e-8 } else { damping * 10.0 };
                    if damping > 1e12 {
                        return Err(Error::Singular(
                            "logistic Newton system not positive definite".into(),
                        ));
                    }
                }
            }
        };

        let slope = linalg::dot(&grad, &direction);
        // Once the predicted improvement sinks below what f64 can resolve in
        // the objective, line-search comparisons are pure noise; inside this
        // quadratic basin plain Newton steps converge on their own, watched
        // through the gradient norm instead.
        if 0.5 * slope <= 1e-12 * (1.0 + value.abs()) {
            if grad_norm >= basin_grad {
                break;
            }
            basin_grad = grad_norm;
            alpha += direction[0];
            for (b, d) in beta.iter_mut().zip(&direction[1..]) {
                *b += d;
            }
            value = logistic_objective_centered(
                alpha,
                &beta,
                concepts,
                references,
                opts.lambda,
                &center,
            );
        } else {
            // Armijo backtracking along the ascent direction.
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let cand_alpha = alpha + step * direction[0];
                let cand_beta: Vec<f64> = beta
                    .iter()
                    .zip(&direction[1..])
                    .map(|(b, d)| b + step * d)
                    .collect();
                let cand_value = logistic_objective_centered(
                    cand_alpha,
                    &cand_beta,
                    concepts,
                    references,
                    opts.lambda,
                    &center,
                );
                if cand_value >= value + 1e-4 * step * slope && cand_value.is_finite() {
                    accepted = Some((step, cand_value));
                    break;
                }
                step *= 0.5;
            }
            let Some((mut step, mut step_value)) = accepted else {
                break;
            };
            if step == 1.0 {
                // Expand while the objective strictly improves. On curved
                // objectives doubling past the Newton point loses value and
                // stops immediately; on separable unpenalized data it lets
                // the coefficients grow geometrically so divergence is
                // detected instead of timing out.
                for _ in 0..40 {
                    let trial = step * 2.0;
                    let cand_alpha = alpha + trial * direction[0];
                    let cand_beta: Vec<f64> = beta
                        .iter()
                        .zip(&direction[1..])
                        .map(|(b, d)| b + trial * d)
                        .collect();
                    let cand_value = logistic_objective_centered(
                        cand_alpha,
                        &cand_beta,
                        concepts,
                        references,
                        opts.lambda,
                        &center,
                    );
                    if cand_value > step_value && cand_value.is_finite() {
                        step = trial;
                        step_value = cand_value;
                    } else {
                        break;
                    }
                }
            }
            alpha += step * direction[0];
            for (b, d) in beta.iter_mut().zip(&direction[1..]) {
                *b += step * d;
            }
            value = step_value;
        }
        if linalg::norm2(&beta) > SEPARABILITY_NORM {
            return Err(Error::Separable {
                beta_norm: linalg::norm2(&beta),
            });
        }
    }

    check_separability(opts.lambda, &beta, value)?;
    if grad_norm <= opts.tolerance {
        let a_n = n_ref * alpha.exp();
        return Ok(Cav {
            beta,
            alpha,
            center,
            estimator: EstimatorKind::Logistic,
            lambda: opts.lambda,
            n_concept: concepts.len(),
            n_reference: references.len(),
            seed: 0,
            a_n: Some(a_n),
        });
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        grad_norm,
    })
}

/// Regularized average hinge loss `J` at `(alpha, beta)` in the given centering.
pub fn hinge_objective(
    alpha: f64,
    beta: &[f64],
    concepts: &ConceptSet,
    references: &[LatentPoint],
    lambda: f64,
    center: &[f64],
) -> f64 {
    let total = concepts.len() + references.len();
    let mut loss = 0.0;
    for x in concepts.points() {
        let mut f = alpha;
        for k in 0..beta.len() {
            f += beta[k] * (x[k] - center[k]);
        }
        loss += (1.0 - f).max(0.0);
    }
    for z in references {
        let mut f = alpha;
        for k in 0..beta.len() {
            f += beta[k] * (z[k] - center[k]);
        }
        loss += (1.0 + f).max(0.0);
    }
    loss / total as f64 + 0.5 * lambda * linalg::dot(beta, beta)
}

/// Minimize the regularized average hinge loss by seeded per-sample SGD.
///
/// Concepts carry label +1, references label -1. Shuffling is re-derived from
/// the seed every epoch, so repeated fits are bit-identical. The returned
/// parameters are the best full-objective iterate seen at epoch boundaries,
/// starting from the origin (whose objective is exactly 1).
pub fn fit_hinge_sgd(
    concepts: &ConceptSet,
    references: &[LatentPoint],
    opts: &FitOptions,
    epochs: usize,
    schedule: LearningRateSchedule,
    seed: u64,
) -> Result<Cav> {
    opts.validate()?;
    if references.is_empty() {
        return Err(Error::Config(
            "hinge fit needs at least one reference".into(),
        ));
    }
    if let LearningRateSchedule::InverseLambdaT = schedule {
        if opts.lambda <= 0.0 {
            return Err(Error::LearningRate(
                "the 1/(lambda t) schedule requires lambda > 0".into(),
            ));
        }
    }
    let d = concepts.dim();
    check_dims(concepts, references, &vec![0.0; d])?;
    let center: Vec<f64> = if opts.centering {
        concepts.mean().to_vec()
    } else {
        vec![0.0; d]
    };

    // Labeled, centered training set: concepts first, then references.
    let mut data: Vec<(Vec<f64>, f64)> = Vec::with_capacity(concepts.len() + references.len());
    for x in concepts.points() {
        data.push((linalg::sub(x, &center), 1.0));
    }
    for z in references {
        data.push((linalg::sub(z, &center), -1.0));
    }

    let mut alpha = 0.0f64;
    let mut beta = vec![0.0f64; d];
    let mut best_alpha = 0.0f64;
    let mut best_beta = beta.clone();
    let mut best_value = hinge_objective(alpha, &beta, concepts, references, opts.lambda, &center);

    let mut rng = Prng::seed_from_u64(child_seed(seed, &[0x4143]));
    let mut t: u64 = 0;
    for _ in 0..epochs {
        let order = shuffled_indices(data.len(), &mut rng);
        for idx in order {
            t += 1;
            let eta = match schedule {
                LearningRateSchedule::InverseLambdaT => 1.0 / (opts.lambda * t as f64),
                LearningRateSchedule::Constant(c) => c,
            };
            let (u, y) = &data[idx];
            let margin = *y * (linalg::dot(&beta, u) + alpha);
            // Penalty shrinkage applies every step; the hinge part only when
            // the margin constraint is active.
            for b in beta.iter_mut() {
                *b *= 1.0 - eta * opts.lambda;
            }
            if margin < 1.0 {
                linalg::add_scaled(&mut beta, eta * *y, u);
                alpha += eta * *y;
            }
        }
        if !alpha.is_finite() || beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::LearningRate(format!(
                "iterate became non-finite after {t} steps"
            )));
        }
        let value = hinge_objective(alpha, &beta, concepts, references, opts.lambda, &center);
        if value < best_value {
            best_value = value;
            best_alpha = alpha;
            best_beta = beta.clone();
        }
    }

    let a_n = references.len() as f64 * best_alpha.exp();
    Ok(Cav {
        beta: best_beta,
        alpha: best_alpha,
        center,
        estimator: EstimatorKind::Hinge,
        lambda: opts.lambda,
        n_concept: concepts.len(),
        n_reference: references.len(),
        seed,
        a_n: Some(a_n),
    })
}

/// `beta = concept mean - reference mean`, intercept fixed at zero.
pub fn fit_difference_of_means(concepts: &ConceptSet, references: &[LatentPoint]) -> Result<Cav> {
    if references.is_empty() {
        return Err(Error::Config(
            "difference of means needs at least one reference".into(),
        ));
    }
    let d = concepts.dim();
    check_dims(concepts, references, &vec![0.0; d])?;
    let ref_mean = linalg::mean_vector(references)?;
    let beta = linalg::sub(concepts.mean(), &ref_mean);
    Ok(Cav {
        beta,
        alpha: 0.0,
        center: vec![0.0; d],
        estimator: EstimatorKind::Dom,
        lambda: 0.0,
        n_concept: concepts.len(),
        n_reference: references.len(),
        seed: 0,
        a_n: None,
    })
}
