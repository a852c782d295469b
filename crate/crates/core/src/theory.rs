//! Computable counterparts of the asymptotic analysis.
//!
//! The infinitely imbalanced limit (concept set fixed, reference count N
//! growing) predicts the covariance of the logistic CAV through a handful of
//! concrete objects, all of which are estimated here:
//!
//! * the surround condition on the reference distribution around the concept
//!   mean (cap mass, half-space mass, and positive-part mean over directions),
//! * the score summand `rho(z) = -exp(alpha_N - beta0 . xbar) (z - xbar)
//!   exp(z . beta0)` and its sample covariance,
//! * the limit Hessian `H0` of the normalized objective,
//! * the sandwich covariance `Sigma = H0^-1 Var(rho) H0^-T` and the induced
//!   sensitivity variance `grad^T Sigma grad`,
//! * the hinge-loss sandwich `M^-1 Sigma_Z M^-1` with kernel estimates of the
//!   level-set density and conditional second moment,
//! * the difference-of-means closed form `tr(Sigma_z) / N`.
//!
//! The unobservable limit quantities (beta_0, A_0) are proxied by a reference
//! fit at a much larger N; every report records the proxy size used.

use crate::error::{Error, Result};
use crate::estimators::{fit_logistic_penalized, sigmoid, Cav, FitOptions};
use crate::latent::{sample_references, ConceptSet, LatentPoint, ReferenceSpec};
use crate::linalg::{self, Matrix};
use crate::seeding::{child_seed, NormalSource};

/// Outcome of the surround-condition check.
#[derive(Debug, Clone)]
pub struct SurroundReport {
    pub epsilon: f64,
    /// Random directions requested; signed coordinate axes are always tested
    /// in addition.
    pub num_directions: usize,
    /// Total directions actually tested (random + 2d axes).
    pub directions_tested: usize,
    /// Minimum over directions of the fraction of references beyond epsilon
    /// in that direction (the empirical delta).
    pub min_cap_mass: f64,
    /// Minimum half-space mass at epsilon = 0 (the empirical eta).
    pub min_halfspace_mass: f64,
    /// Minimum over directions of the mean positive part (the empirical gamma).
    pub min_positive_part_mean: f64,
    pub pass: bool,
}

/// Check whether the references surround the concept mean: for every tested
/// direction, some mass must sit strictly beyond `epsilon`.
///
/// Directions are drawn uniformly on the unit sphere from `seed`; the 2d
/// signed coordinate axes are always included so axis-aligned half-space
/// violations are caught deterministically.
pub fn check_surrounded_mean(
    concept_mean: &[f64],
    references: &[LatentPoint],
    epsilon: f64,
    num_directions: usize,
    seed: u64,
) -> Result<SurroundReport> {
    let d = concept_mean.len();
    if d == 0 {
        return Err(Error::Domain("dimension must be at least 1".into()));
    }
    if references.is_empty() {
        return Err(Error::Domain("surround check needs references".into()));
    }
    if num_directions == 0 {
        return Err(Error::Domain("need at least one direction".into()));
    }
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::Domain("epsilon must be positive".into()));
    }
    for r in references {
        if r.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: r.len(),
            });
        }
    }

    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(num_directions + 2 * d);
    for axis in 0..d {
        for sign in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[axis] = sign;
            directions.push(e);
        }
    }
    let mut source = NormalSource::from_seed(child_seed(seed, &[0xd14]));
    for _ in 0..num_directions {
        directions.push(source.unit_direction(d));
    }

    let n = references.len() as f64;
    let mut min_cap = f64::INFINITY;
    let mut min_half = f64::INFINITY;
    let mut min_pos = f64::INFINITY;
    let mut centered = vec![0.0f64; d];
    for omega in &directions {
        let mut beyond = 0usize;
        let mut nonneg = 0usize;
        let mut pos_sum = 0.0f64;
        for z in references {
            for (k, c) in centered.iter_mut().enumerate() {
                *c = z[k] - concept_mean[k];
            }
            let proj = linalg::dot(&centered, omega);
            if proj > epsilon {
                beyond += 1;
            }
            if proj >= 0.0 {
                nonneg += 1;
            }
            if proj > 0.0 {
                pos_sum += proj;
            }
        }
        min_cap = min_cap.min(beyond as f64 / n);
        min_half = min_half.min(nonneg as f64 / n);
        min_pos = min_pos.min(pos_sum / n);
    }

    Ok(SurroundReport {
        epsilon,
        num_directions,
        directions_tested: directions.len(),
        min_cap_mass: min_cap,
        min_halfspace_mass: min_half,
        min_positive_part_mean: min_pos,
        pass: min_cap > 0.0 && min_half > 0.0 && min_pos > 0.0,
    })
}

/// Project references, centered on the concept mean, onto their first two
/// principal components; scatter data for visualizing the surround condition.
pub fn surround_scatter(
    concept_mean: &[f64],
    references: &[LatentPoint],
) -> Result<Vec<(f64, f64)>> {
    let d = concept_mean.len();
    if d < 2 {
        return Err(Error::Domain(
            "scatter projection needs dimension >= 2".into(),
        ));
    }
    if references.len() < 2 {
        return Err(Error::Domain(
            "scatter projection needs at least 2 references".into(),
        ));
    }
    let centered: Vec<Vec<f64>> = references
        .iter()
        .map(|z| linalg::sub(z, concept_mean))
        .collect();
    let cov = linalg::sample_covariance(&centered)?;
    let eig = linalg::sym_eigen(&cov)?;
    let mut out = Vec::with_capacity(centered.len());
    for c in &centered {
        let mut p1 = 0.0;
        let mut p2 = 0.0;
        for (k, &v) in c.iter().enumerate() {
            p1 += v * eig.vectors[(k, 0)];
            p2 += v * eig.vectors[(k, 1)];
        }
        out.push((p1, p2));
    }
    Ok(out)
}

/// Exponent magnitude beyond which `rho_vector` refuses to exponentiate.
pub const RHO_EXPONENT_CLAMP: f64 = 700.0;

/// The score summand `rho(z; beta0) = -e^{alpha_N - beta0 . xbar} (z - xbar)
/// e^{z . beta0}`, whose variance enters the sandwich covariance.
///
/// The combined exponent is clamped at +/-700 with an explicit error; values
/// are never silently saturated.
pub fn rho_vector(z: &[f64], beta0: &[f64], alpha_n: f64, xbar: &[f64]) -> Result<Vec<f64>> {
    let d = beta0.len();
    if z.len() != d || xbar.len() != d {
        return Err(Error::ShapeMismatch {
            expected: d,
            got: z.len(),
        });
    }
    let exponent = alpha_n - linalg::dot(beta0, xbar) + linalg::dot(z, beta0);
    if !exponent.is_finite() || exponent.abs() > RHO_EXPONENT_CLAMP {
        return Err(Error::NonFinite(format!(
            "rho exponent {exponent:.3e} outside clamp +/-{RHO_EXPONENT_CLAMP}"
        )));
    }
    let scale = -exponent.exp();
    Ok(z.iter()
        .zip(xbar)
        .map(|(zi, xi)| scale * (zi - xi))
        .collect())
}

/// Estimate of the limit Hessian from a fitted CAV and its reference sample.
#[derive(Debug, Clone)]
pub struct HessianEstimate {
    pub matrix: Matrix,
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub condition_number: f64,
    /// References used; a count below the dimension makes the estimate
    /// rank-deficient before regularization.
    pub n_used: usize,
}

/// Estimate `H0 = -(1/N) * (beta-block Hessian)` at the fitted parameters.
///
/// Only the reference terms enter (the fixed concept contribution vanishes in
/// the limit): `(1/N) [ sum_j sigma_j (1 - sigma_j) (z_j - xbar)(z_j - xbar)^T
/// + lambda I ]` with `sigma_j` evaluated at the fitted `(alpha, beta)` in the
///   CAV's own centering.
pub fn estimate_limit_hessian(
    references: &[LatentPoint],
    cav: &Cav,
    lambda: f64,
) -> Result<HessianEstimate> {
    if references.is_empty() {
        return Err(Error::Domain("hessian estimate needs references".into()));
    }
    let d = cav.dim();
    let n = references.len();
    let mut h = Matrix::zeros(d, d);
    let mut centered = vec![0.0f64; d];
    for z in references {
        if z.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: z.len(),
            });
        }
        for k in 0..d {
            centered[k] = z[k] - cav.center[k];
        }
        let lin = cav.alpha + linalg::dot(&centered, &cav.beta);
        let s = sigmoid(lin);
        h.add_outer(s * (1.0 - s), &centered);
    }
    for k in 0..d {
        h[(k, k)] += lambda;
    }
    h.scale(1.0 / n as f64);
    if h.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(
            "hessian estimate has non-finite entries".into(),
        ));
    }
    let eig = linalg::sym_eigen(&h)?;
    let min_eigenvalue = *eig.values.last().unwrap();
    let condition_number = eig.condition_number();
    Ok(HessianEstimate {
        matrix: h,
        eigenvalues: eig.values,
        min_eigenvalue,
        condition_number,
        n_used: n,
    })
}

/// Condition-number bound above which `H0` is rejected as numerically singular.
pub const H0_CONDITION_LIMIT: f64 = 1e12;

/// Sandwich covariance of the logistic CAV and its trace.
#[derive(Debug, Clone)]
pub struct SandwichSigma {
    pub sigma: Matrix,
    pub trace: f64,
}

/// `Sigma = H0^-1 Var(rho) H0^-T`, symmetrized and eigenvalue-clamped to PSD.
///
/// Negative eigenvalues above -1e-10 (conjugation round-off) are zeroed;
/// anything more negative indicates a broken input and is an error.
pub fn logistic_sandwich_sigma(h0: &Matrix, rho_samples: &[Vec<f64>]) -> Result<SandwichSigma> {
    if !h0.is_square() {
        return Err(Error::ShapeMismatch {
            expected: h0.rows,
            got: h0.cols,
        });
    }
    let eig = linalg::sym_eigen(h0)?;
    let cond = eig.condition_number();
    if !cond.is_finite() || cond > H0_CONDITION_LIMIT {
        return Err(Error::Singular(format!(
            "H0 condition number {cond:.3e} exceeds {H0_CONDITION_LIMIT:.0e}"
        )));
    }
    let cov = linalg::sample_covariance(rho_samples)?;
    if cov.rows != h0.rows {
        return Err(Error::ShapeMismatch {
            expected: h0.rows,
            got: cov.rows,
        });
    }
    let h_inv = linalg::invert(h0)?;
    let mut sigma = h_inv.matmul(&cov).matmul(&h_inv.transpose());
    sigma.symmetrize();
    let sig_eig = linalg::sym_eigen(&sigma)?;
    if let Some(&min) = sig_eig.values.last() {
        if min < -1e-10 {
            return Err(Error::NonFinite(format!(
                "sandwich covariance has eigenvalue {min:.3e} below the clamp band"
            )));
        }
        if min < 0.0 {
            sigma = sig_eig.reassemble_with(|l| l.max(0.0));
        }
    }
    let trace = sigma.trace();
    Ok(SandwichSigma { sigma, trace })
}

/// Asymptotic sensitivity variance `grad^T Sigma grad`.
pub fn sensitivity_asymptotic_variance(head_gradient: &[f64], sigma: &Matrix) -> Result<f64> {
    if sigma.rows != head_gradient.len() || !sigma.is_square() {
        return Err(Error::ShapeMismatch {
            expected: sigma.rows,
            got: head_gradient.len(),
        });
    }
    let v = linalg::dot(head_gradient, &sigma.matvec(head_gradient));
    Ok(v.max(0.0))
}

/// Closed-form trace variance of the difference-of-means CAV: `tr(Sigma_z)/N`.
pub fn dom_variance_closed_form(sigma_z: &Matrix, n_reference: usize) -> Result<f64> {
    if !sigma_z.is_square() {
        return Err(Error::ShapeMismatch {
            expected: sigma_z.rows,
            got: sigma_z.cols,
        });
    }
    if sigma_z.asymmetry() > 1e-9 {
        return Err(Error::Domain("sigma_z must be symmetric".into()));
    }
    if n_reference == 0 {
        return Err(Error::Domain("N must be at least 1".into()));
    }
    Ok(sigma_z.trace() / n_reference as f64)
}

/// Minimum points required inside the kernel window of the hinge level set.
pub const HINGE_WINDOW_MINIMUM: usize = 30;

/// The hinge sandwich pieces: `M`, `Sigma_Z`, and `M^-1 Sigma_Z M^-1`.
#[derive(Debug, Clone)]
pub struct HingeSandwich {
    pub m_matrix: Matrix,
    pub sigma_z: Matrix,
    pub sandwich: Matrix,
    /// References inside the kernel window `|beta0 . z + 1| <= bandwidth`.
    pub window_count: usize,
    /// Kernel estimate of the projection density at -1.
    pub density_at_level: f64,
}

/// Estimate the hinge-loss sandwich covariance.
///
/// `Sigma_Z` is the sample covariance of `z * 1[beta0 . z > -1]`. The level-
/// set pieces of `M` use an Epanechnikov kernel of the given bandwidth on the
/// projections. If the window contains fewer than 30 points the estimate is
/// refused -- except in the saturated regime where every projection exceeds
/// -1 and the level set carries no data at all, in which case the density
/// term is exactly zero and `M = lambda I`.
pub fn hinge_sandwich_sigma(
    references: &[LatentPoint],
    beta0: &[f64],
    lambda: f64,
    bandwidth: f64,
) -> Result<HingeSandwich> {
    if references.is_empty() {
        return Err(Error::Domain("hinge sandwich needs references".into()));
    }
    if !bandwidth.is_finite() || bandwidth <= 0.0 {
        return Err(Error::Domain("bandwidth must be positive".into()));
    }
    let d = beta0.len();
    for z in references {
        if z.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: z.len(),
            });
        }
    }
    let n = references.len();
    let projections: Vec<f64> = references.iter().map(|z| linalg::dot(beta0, z)).collect();

    // Sigma_Z: covariance of the indicator-masked points.
    let masked: Vec<Vec<f64>> = references
        .iter()
        .zip(&projections)
        .map(|(z, &p)| if p > -1.0 { z.clone() } else { vec![0.0; d] })
        .collect();
    let sigma_z = linalg::sample_covariance(&masked)?;

    // Kernel window around the level set beta0 . z = -1.
    let in_window: Vec<usize> = projections
        .iter()
        .enumerate()
        .filter(|(_, &p)| (p + 1.0).abs() <= bandwidth)
        .map(|(i, _)| i)
        .collect();
    let window_count = in_window.len();

    let (m_matrix, density) = if window_count >= HINGE_WINDOW_MINIMUM {
        // Epanechnikov weights K(u) = 0.75 (1 - u^2) on |u| <= 1.
        let mut weight_sum = 0.0f64;
        let mut weighted_second = Matrix::zeros(d, d);
        for &i in &in_window {
            let u = (projections[i] + 1.0) / bandwidth;
            let w = 0.75 * (1.0 - u * u);
            weight_sum += w;
            weighted_second.add_outer(w, &references[i]);
        }
        let density = weight_sum / (n as f64 * bandwidth);
        let mut m = Matrix::from_diag(&vec![lambda; d]);
        if weight_sum > 0.0 {
            weighted_second.scale(density / weight_sum);
            m.add_assign(&weighted_second);
        }
        (m, density)
    } else if window_count == 0 && projections.iter().all(|&p| p > -1.0) {
        // Saturated indicator: the level set lies strictly below the data.
        (Matrix::from_diag(&vec![lambda; d]), 0.0)
    } else {
        return Err(Error::InsufficientWindow {
            count: window_count,
            required: HINGE_WINDOW_MINIMUM,
        });
    };

    let m_inv = linalg::invert(&m_matrix)
        .map_err(|_| Error::Singular("hinge M matrix is singular".into()))?;
    let mut sandwich = m_inv.matmul(&sigma_z).matmul(&m_inv);
    sandwich.symmetrize();
    Ok(HingeSandwich {
        m_matrix,
        sigma_z,
        sandwich,
        window_count,
        density_at_level: density,
    })
}

/// Asymptotic objects estimated from a large-N proxy fit.
#[derive(Debug, Clone)]
pub struct AsymptoticReport {
    /// Coefficients of the reference fit standing in for beta_0.
    pub beta0_ref: Vec<f64>,
    /// Intercept (centered parameterization) of the reference fit.
    pub alpha_ref: f64,
    /// `N e^{alpha_N}` at the proxy size, standing in for A_0.
    pub a0_estimate: f64,
    /// Proxy reference count used for the fit.
    pub n_ref: usize,
    pub h0: HessianEstimate,
    pub sigma: SandwichSigma,
    pub trace_sigma: f64,
}

/// Fit the large-N proxy and assemble the sandwich prediction.
///
/// The proxy fit uses `n_ref` references; `rho_count` fresh draws feed the
/// score-summand covariance. Callers choose `n_ref` well above the N values
/// the prediction will be compared against (50x the largest grid value is the
/// working default elsewhere).
pub fn estimate_asymptotics(
    concepts: &ConceptSet,
    references: &ReferenceSpec,
    n_ref: usize,
    rho_count: usize,
    opts: &FitOptions,
    seed: u64,
) -> Result<AsymptoticReport> {
    if rho_count < 2 {
        return Err(Error::Domain("rho_count must be at least 2".into()));
    }
    let fit_refs = sample_references(references, n_ref, child_seed(seed, &[0xa5, 1]))?;
    let cav = fit_logistic_penalized(concepts, &fit_refs, opts)?;
    let h0 = estimate_limit_hessian(&fit_refs, &cav, opts.lambda)?;

    let rho_draws = sample_references(references, rho_count, child_seed(seed, &[0xa5, 2]))?;
    let mut rho_samples = Vec::with_capacity(rho_count);
    for z in &rho_draws {
        rho_samples.push(rho_vector(z, &cav.beta, cav.alpha, &cav.center)?);
    }
    let sigma = logistic_sandwich_sigma(&h0.matrix, &rho_samples)?;
    let trace_sigma = sigma.trace;
    Ok(AsymptoticReport {
        beta0_ref: cav.beta.clone(),
        alpha_ref: cav.alpha,
        a0_estimate: cav.a_n.expect("logistic fit always carries a_n"),
        n_ref,
        h0,
        sigma,
        trace_sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::ReferenceSpec;
    use crate::seeding::NormalSource;
    use crate::stats;

    #[test]
    fn surround_two_point_symmetric_case() {
        // References at +/- 1 in d=1 around mean 0; every direction sees half
        // the mass beyond 0.5.
        let refs = vec![vec![1.0], vec![-1.0]];
        let report = check_surrounded_mean(&[0.0], &refs, 0.5, 8, 3).unwrap();
        assert_eq!(report.min_cap_mass, 0.5);
        assert_eq!(report.min_halfspace_mass, 0.5);
        assert_eq!(report.min_positive_part_mean, 0.5);
        assert!(report.pass);
    }

    #[test]
    fn half_space_violation_fails_via_axis_direction() {
        // All references strictly on the positive side of e1: the axis
        // direction -e1 has zero cap mass, deterministically.
        let mut source = NormalSource::from_seed(5);
        let refs: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let mut p = vec![0.0f64; 3];
                source.fill_normal(&mut p);
                p[0] = p[0].abs() + 0.1;
                p
            })
            .collect();
        let report = check_surrounded_mean(&[0.0, 0.0, 0.0], &refs, 0.05, 4, 11).unwrap();
        assert_eq!(report.min_cap_mass, 0.0);
        assert!(!report.pass);
    }

    #[test]
    fn gaussian_cap_mass_matches_normal_tail() {
        let d = 4;
        let spec = ReferenceSpec::standard_gaussian(d);
        let refs = sample_references(&spec, 10_000, 77).unwrap();
        let report = check_surrounded_mean(&vec![0.0; d], &refs, 0.1, 512, 13).unwrap();
        let phi = stats::normal_cdf(-0.1);
        assert!(
            (report.min_cap_mass - phi).abs() < 0.03,
            "min cap mass {} vs normal tail {phi}",
            report.min_cap_mass
        );
        assert!(report.pass);
    }

    #[test]
    fn cap_mass_is_monotone_in_epsilon() {
        let spec = ReferenceSpec::standard_gaussian(3);
        let refs = sample_references(&spec, 2_000, 9).unwrap();
        let mut last = f64::INFINITY;
        for &eps in &[0.05, 0.1, 0.2, 0.5, 1.0] {
            let report = check_surrounded_mean(&[0.0; 3], &refs, eps, 64, 21).unwrap();
            assert!(report.min_cap_mass <= last + 1e-15);
            last = report.min_cap_mass;
        }
    }

    #[test]
    fn scatter_projection_has_reference_count_rows() {
        let spec = ReferenceSpec::standard_gaussian(5);
        let refs = sample_references(&spec, 300, 31).unwrap();
        let scatter = surround_scatter(&[0.0; 5], &refs).unwrap();
        assert_eq!(scatter.len(), 300);
    }

    #[test]
    fn rho_zero_at_concept_mean_and_identity_at_origin() {
        let xbar = vec![0.7, -0.2];
        let rho = rho_vector(&xbar, &[0.5, 0.5], 0.3, &xbar).unwrap();
        assert!(rho.iter().all(|&v| v == 0.0));

        let z = vec![1.5, -2.0];
        let rho = rho_vector(&z, &[0.0, 0.0], 0.0, &[0.0, 0.0]).unwrap();
        assert_eq!(rho, vec![-1.5, 2.0]);
    }

    #[test]
    fn rho_matches_direct_transcription() {
        let mut source = NormalSource::from_seed(55);
        for _ in 0..20 {
            let d = 4;
            let mut z = vec![0.0f64; d];
            let mut beta = vec![0.0f64; d];
            let mut xbar = vec![0.0f64; d];
            source.fill_normal(&mut z);
            source.fill_normal(&mut beta);
            source.fill_normal(&mut xbar);
            let alpha = source.next_normal();
            let rho = rho_vector(&z, &beta, alpha, &xbar).unwrap();
            // Independent transcription of the formula, term by term.
            let front = -(alpha - linalg::dot(&beta, &xbar)).exp() * linalg::dot(&z, &beta).exp();
            for k in 0..d {
                let direct = front * (z[k] - xbar[k]);
                let denom = direct.abs().max(1e-300);
                assert!(((rho[k] - direct) / denom).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rho_exponent_clamp_is_an_error() {
        let err = rho_vector(&[800.0], &[1.0], 0.0, &[0.0]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
    }

    #[test]
    fn limit_hessian_matches_small_sigma_expansion() {
        // Huge lambda shrinks beta to ~0 and the fitted alpha is strongly
        // negative, so sigma(1-sigma) ~ e^{alpha}: the estimate must match
        // (e^alpha / N) sum (z - xbar)(z - xbar)^T + (lambda / N) I.
        let d = 3;
        let concepts = ConceptSet::new(vec![vec![0.0; d]]).unwrap();
        let spec = ReferenceSpec::standard_gaussian(d);
        let refs = sample_references(&spec, 100_000, 17).unwrap();
        let lambda = 1e6;
        let opts = FitOptions {
            lambda,
            ..FitOptions::default()
        };
        let cav = fit_logistic_penalized(&concepts, &refs, &opts).unwrap();
        let est = estimate_limit_hessian(&refs, &cav, lambda).unwrap();

        let n = refs.len() as f64;
        let scale = cav.alpha.exp() / n;
        let mut expected = Matrix::zeros(d, d);
        for z in &refs {
            let centered = linalg::sub(z, &cav.center);
            let boost = linalg::dot(&centered, &cav.beta).exp();
            expected.add_outer(scale * boost, &centered);
        }
        for k in 0..d {
            expected[(k, k)] += lambda / n;
        }
        assert!(
            est.matrix.max_abs_diff(&expected) < 1e-8,
            "max deviation {}",
            est.matrix.max_abs_diff(&expected)
        );
        assert_eq!(est.matrix.asymmetry(), 0.0);
        assert!(est.min_eigenvalue > 0.0);
    }

    #[test]
    fn limit_hessian_is_stable_under_doubling_n() {
        // The raw estimate -(1/N) Hessian shrinks like 1/N in the rare-event
        // regime (sigma ~ e^alpha ~ A/N); the object that stabilizes as N
        // grows is the N-scaled matrix, which the sandwich implicitly uses.
        let d = 4;
        let concepts = {
            let mut source = NormalSource::from_seed(23);
            let mut pts = Vec::new();
            for _ in 0..8 {
                let mut p = vec![0.0f64; d];
                source.fill_normal(&mut p);
                p[0] += 0.5;
                pts.push(p);
            }
            ConceptSet::new(pts).unwrap()
        };
        let spec = ReferenceSpec::standard_gaussian(d);
        let opts = FitOptions::default();
        let scaled_estimate = |n: usize, seed: u64| {
            let refs = sample_references(&spec, n, seed).unwrap();
            let cav = fit_logistic_penalized(&concepts, &refs, &opts).unwrap();
            let mut h = estimate_limit_hessian(&refs, &cav, opts.lambda)
                .unwrap()
                .matrix;
            h.scale(n as f64);
            h
        };
        let h1 = scaled_estimate(10_000, 1);
        let h2 = scaled_estimate(20_000, 2);
        let mut diff = h1.clone();
        for (a, b) in diff.data.iter_mut().zip(&h2.data) {
            *a -= b;
        }
        assert!(
            diff.frobenius_norm() < 0.05 * h1.frobenius_norm(),
            "relative change {}",
            diff.frobenius_norm() / h1.frobenius_norm()
        );
    }

    #[test]
    fn sandwich_conjugation_identities() {
        let mut source = NormalSource::from_seed(61);
        let d = 3;
        let mut rho_samples = Vec::new();
        for _ in 0..50 {
            let mut v = vec![0.0f64; d];
            source.fill_normal(&mut v);
            rho_samples.push(v);
        }
        let cov = linalg::sample_covariance(&rho_samples).unwrap();

        let identity = logistic_sandwich_sigma(&Matrix::identity(d), &rho_samples).unwrap();
        assert!(identity.sigma.max_abs_diff(&cov) < 1e-12);

        let mut two_i = Matrix::identity(d);
        two_i.scale(2.0);
        let quartered = logistic_sandwich_sigma(&two_i, &rho_samples).unwrap();
        let mut expected = cov.clone();
        expected.scale(0.25);
        assert!(quartered.sigma.max_abs_diff(&expected) < 1e-12);
        assert!((quartered.trace - expected.trace()).abs() < 1e-12);
    }

    #[test]
    fn sandwich_rejects_ill_conditioned_h0() {
        let h0 = Matrix::from_diag(&[1.0, 1e-15]);
        let samples = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, -1.0]];
        assert!(matches!(
            logistic_sandwich_sigma(&h0, &samples),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn sandwich_trace_equals_eigenvalue_sum() {
        let mut source = NormalSource::from_seed(91);
        let d = 4;
        let mut rho_samples = Vec::new();
        for _ in 0..40 {
            let mut v = vec![0.0f64; d];
            source.fill_normal(&mut v);
            rho_samples.push(v);
        }
        let mut h0 = Matrix::identity(d);
        h0[(0, 1)] = 0.2;
        h0[(1, 0)] = 0.2;
        h0[(2, 2)] = 3.0;
        let sw = logistic_sandwich_sigma(&h0, &rho_samples).unwrap();
        let eig = linalg::sym_eigen(&sw.sigma).unwrap();
        let sum: f64 = eig.values.iter().sum();
        assert!((sum - sw.trace).abs() < 1e-8);
        assert!(eig.values.iter().all(|&l| l >= -1e-12));
    }

    #[test]
    fn rho_sample_mean_matches_penalized_identity() {
        // At the proxy optimum, E[rho] = (lambda e^{alpha_N} / A_0) beta_0,
        // which with A_0 ~ N e^{alpha_N} is lambda beta_0 / N.
        let d = 3;
        let concepts = {
            let mut source = NormalSource::from_seed(3);
            let mut pts = Vec::new();
            for _ in 0..6 {
                let mut p = vec![0.0f64; d];
                source.fill_normal(&mut p);
                p[0] += 1.2;
                pts.push(p);
            }
            ConceptSet::new(pts).unwrap()
        };
        let spec = ReferenceSpec::standard_gaussian(d);
        let n_fit = 20_000;
        let refs = sample_references(&spec, n_fit, 200).unwrap();
        let opts = FitOptions::default();
        let cav = fit_logistic_penalized(&concepts, &refs, &opts).unwrap();

        let m = 200_000;
        let draws = sample_references(&spec, m, 300).unwrap();
        let mut rho_samples = Vec::with_capacity(m);
        for z in &draws {
            rho_samples.push(rho_vector(z, &cav.beta, cav.alpha, &cav.center).unwrap());
        }
        let mean = linalg::mean_vector(&rho_samples).unwrap();
        let expected: Vec<f64> = cav
            .beta
            .iter()
            .map(|b| opts.lambda * b / n_fit as f64)
            .collect();
        let cov_trace = linalg::sample_covariance(&rho_samples).unwrap().trace();
        let standard_error = (cov_trace / m as f64).sqrt();
        let deviation = linalg::norm2(&linalg::sub(&mean, &expected));
        assert!(
            deviation <= 5.0 * standard_error,
            "deviation {deviation} vs 5 x SE {standard_error}"
        );
    }

    #[test]
    fn sensitivity_variance_quadratic_form() {
        assert_eq!(
            sensitivity_asymptotic_variance(&[0.0, 0.0], &Matrix::identity(2)).unwrap(),
            0.0
        );
        assert_eq!(
            sensitivity_asymptotic_variance(&[3.0, 4.0], &Matrix::identity(2)).unwrap(),
            25.0
        );
        // Random PSD matrix against an explicit double sum.
        let mut source = NormalSource::from_seed(44);
        let d = 5;
        let mut samples = Vec::new();
        for _ in 0..30 {
            let mut v = vec![0.0f64; d];
            source.fill_normal(&mut v);
            samples.push(v);
        }
        let sigma = linalg::sample_covariance(&samples).unwrap();
        let mut g = vec![0.0f64; d];
        source.fill_normal(&mut g);
        let got = sensitivity_asymptotic_variance(&g, &sigma).unwrap();
        let mut oracle = 0.0;
        for i in 0..d {
            for j in 0..d {
                oracle += g[i] * sigma[(i, j)] * g[j];
            }
        }
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn dom_closed_form_identities() {
        let eye = Matrix::identity(6);
        assert_eq!(dom_variance_closed_form(&eye, 10).unwrap(), 0.6);
        // Halving under doubling N.
        let sigma = Matrix::from_diag(&[1.0, 2.0, 3.0]);
        let v_n = dom_variance_closed_form(&sigma, 100).unwrap();
        let v_2n = dom_variance_closed_form(&sigma, 200).unwrap();
        assert_eq!(v_2n, v_n / 2.0);
        // Homogeneity in sigma.
        let mut scaled = sigma.clone();
        scaled.scale(7.0);
        assert_eq!(
            dom_variance_closed_form(&scaled, 100).unwrap(),
            7.0 * dom_variance_closed_form(&sigma, 100).unwrap()
        );
    }

    #[test]
    fn dom_closed_form_matches_monte_carlo_refits() {
        let d = 3;
        let sigma = Matrix::from_diag(&[1.0, 2.0, 3.0]);
        let spec = ReferenceSpec::gaussian(vec![0.0; d], sigma.clone()).unwrap();
        let concepts = ConceptSet::new(vec![vec![1.0, 0.0, 0.0]]).unwrap();
        let n = 100;
        let m = 200;
        let mut betas = Vec::with_capacity(m);
        for j in 0..m {
            let refs = sample_references(&spec, n, 4000 + j as u64).unwrap();
            let cav = crate::estimators::fit_difference_of_means(&concepts, &refs).unwrap();
            betas.push(cav.beta);
        }
        let empirical = linalg::sample_covariance(&betas).unwrap().trace();
        let predicted = dom_variance_closed_form(&sigma, n).unwrap();
        assert!((predicted - 0.06).abs() < 1e-12);
        assert!(
            (empirical - predicted).abs() / predicted < 0.15,
            "empirical {empirical} vs predicted {predicted}"
        );
    }

    #[test]
    fn hinge_saturated_indicator_gives_plain_covariance() {
        // All projections well above -1: indicator identically 1.
        let mut source = NormalSource::from_seed(12);
        let refs: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                let mut p = vec![0.0f64; 2];
                source.fill_normal(&mut p);
                p[0] += 5.0;
                p
            })
            .collect();
        let beta0 = vec![1.0, 0.0];
        let hs = hinge_sandwich_sigma(&refs, &beta0, 0.5, 0.1).unwrap();
        let cov = linalg::sample_covariance(&refs).unwrap();
        assert!(hs.sigma_z.max_abs_diff(&cov) < 1e-12);
        assert_eq!(hs.window_count, 0);
        assert_eq!(hs.density_at_level, 0.0);
        // M = lambda I in the saturated regime.
        assert!(hs.m_matrix.max_abs_diff(&Matrix::from_diag(&[0.5, 0.5])) < 1e-15);
    }

    #[test]
    fn hinge_sandwich_vanishes_for_huge_lambda() {
        let spec = ReferenceSpec::standard_gaussian(2);
        let refs = sample_references(&spec, 5_000, 3).unwrap();
        let beta0 = vec![1.0, 0.0];
        let small = hinge_sandwich_sigma(&refs, &beta0, 1.0, 0.2).unwrap();
        let large = hinge_sandwich_sigma(&refs, &beta0, 1e9, 0.2).unwrap();
        assert!(large.sandwich.frobenius_norm() < 1e-12 * small.sandwich.frobenius_norm());
    }

    #[test]
    fn hinge_density_estimate_matches_gaussian_pdf() {
        let spec = ReferenceSpec::standard_gaussian(1);
        let refs = sample_references(&spec, 100_000, 8).unwrap();
        let hs = hinge_sandwich_sigma(&refs, &[1.0], 0.1, 0.05).unwrap();
        let phi = stats::normal_pdf(-1.0);
        assert!(
            ((hs.density_at_level - phi) / phi).abs() < 0.10,
            "density {} vs pdf {phi}",
            hs.density_at_level
        );
    }

    #[test]
    fn hinge_window_insufficiency_is_reported() {
        // Only a handful of points near the level set.
        let refs: Vec<Vec<f64>> = (0..25).map(|i| vec![-1.0 + (i as f64) * 1e-4]).collect();
        let err = hinge_sandwich_sigma(&refs, &[1.0], 0.5, 0.01);
        assert!(matches!(err, Err(Error::InsufficientWindow { .. })));
    }

    #[test]
    fn asymptotic_report_is_well_formed() {
        let d = 3;
        let concepts = {
            let mut source = NormalSource::from_seed(71);
            let mut pts = Vec::new();
            for _ in 0..6 {
                let mut p = vec![0.0f64; d];
                source.fill_normal(&mut p);
                p[0] += 1.5;
                pts.push(p);
            }
            ConceptSet::new(pts).unwrap()
        };
        let spec = ReferenceSpec::standard_gaussian(d);
        let report =
            estimate_asymptotics(&concepts, &spec, 20_000, 20_000, &FitOptions::default(), 42)
                .unwrap();
        assert_eq!(report.beta0_ref.len(), d);
        assert!(report.h0.min_eigenvalue > 0.0);
        assert!(report.trace_sigma > 0.0);
        assert!(report.a0_estimate > 0.0);
        assert_eq!(report.n_ref, 20_000);
    }
}
