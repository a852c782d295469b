//! Sensitivity scores, TCAV scores, the significance t-test, and the
//! multi-run averaged TCAV score.
//!
//! The sensitivity of an input is the dot product of its head gradient with
//! the CAV; the TCAV score is the fraction of evaluation inputs whose
//! sensitivity is strictly positive (an exact zero counts as non-positive,
//! which matters in borderline scenarios where zeros genuinely occur).

use crate::error::{Error, Result};
use crate::estimators::{Cav, EstimatorSpec};
use crate::latent::{head_value_and_gradient, ConceptSet, EvaluationSet, LatentPoint, ScoringHead};
use crate::linalg;
use crate::seeding::{child_seed, shuffled_indices, Prng};
use crate::stats;
use rand::SeedableRng;

/// Per-input sensitivity scores over an evaluation set, aligned by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityVector {
    pub values: Vec<f64>,
}

impl SensitivityVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Result of a one-sample two-tailed t-test against mean zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub p_value: f64,
    pub t_statistic: f64,
    /// Set when the sample variance is exactly zero and the p-value follows
    /// the declared convention rather than the t distribution.
    pub degenerate: bool,
}

/// Scores from a (possibly multi-run) TCAV evaluation.
#[derive(Debug, Clone)]
pub struct TcavResult {
    /// Headline score; equals `multi_run_mean`.
    pub score: f64,
    /// One TCAV score per reference subset.
    pub per_run_scores: Vec<f64>,
    /// Arithmetic mean of `per_run_scores`.
    pub multi_run_mean: f64,
    /// Two-tailed t-test p-value over the pooled sensitivity values of all
    /// runs; `None` when fewer than two values were pooled.
    pub p_value: Option<f64>,
    /// Number of subsets.
    pub s: usize,
    /// References per subset.
    pub n_per_subset: usize,
    /// Pool entries dropped because `s` did not divide the pool size.
    pub discarded_samples: usize,
}

/// Sensitivity of every evaluation point: gradient-of-head dot CAV.
pub fn sensitivity_scores(
    head: &ScoringHead,
    cav: &Cav,
    eval_set: &EvaluationSet,
) -> Result<SensitivityVector> {
    if head.input_dim() != cav.dim() {
        return Err(Error::ShapeMismatch {
            expected: head.input_dim(),
            got: cav.dim(),
        });
    }
    let mut values = Vec::with_capacity(eval_set.len());
    for point in eval_set.points() {
        let (_, grad) = head_value_and_gradient(head, point)?;
        values.push(linalg::dot(&grad, &cav.beta));
    }
    Ok(SensitivityVector { values })
}

/// Fraction of sensitivities strictly greater than zero.
pub fn tcav_score(s: &SensitivityVector) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Domain(
            "tcav score of empty sensitivity vector".into(),
        ));
    }
    let positive = s.values.iter().filter(|&&v| v > 0.0).count();
    Ok(positive as f64 / s.len() as f64)
}

/// Two-tailed one-sample t-test of the sensitivities against mean zero.
///
/// Zero sample variance short-circuits: p = 0 for a nonzero mean, p = 1 for a
/// zero mean, both flagged degenerate.
pub fn sensitivity_t_test(s: &SensitivityVector) -> Result<TTestResult> {
    let n = s.len();
    if n < 2 {
        return Err(Error::Domain(
            "t-test needs at least 2 sensitivity values".into(),
        ));
    }
    let mean = stats::mean(&s.values);
    let var = stats::sample_variance(&s.values);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTestResult {
                p_value: 1.0,
                t_statistic: 0.0,
                degenerate: true,
            }
        } else {
            TTestResult {
                p_value: 0.0,
                t_statistic: if mean > 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                },
                degenerate: true,
            }
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let p = stats::student_t_two_tailed(t, (n - 1) as f64);
    Ok(TTestResult {
        p_value: p,
        t_statistic: t,
        degenerate: false,
    })
}

/// Multi-run TCAV: shuffle the reference pool once (seeded), split it into
/// `s` disjoint subsets, fit one CAV per subset, score each, and average.
///
/// When `s` does not divide the pool size, the last `R mod s` shuffled
/// samples are discarded and the count is reported in the result.
pub fn multi_run_tcav(
    concepts: &ConceptSet,
    reference_pool: &[LatentPoint],
    s: usize,
    head: &ScoringHead,
    eval_set: &EvaluationSet,
    estimator: &EstimatorSpec,
    seed: u64,
) -> Result<TcavResult> {
    if s == 0 {
        return Err(Error::Domain("subset count s must be >= 1".into()));
    }
    if s > reference_pool.len() {
        return Err(Error::Domain(format!(
            "s = {s} exceeds pool size {}",
            reference_pool.len()
        )));
    }
    let n_per_subset = reference_pool.len() / s;
    let retained = n_per_subset * s;
    let discarded = reference_pool.len() - retained;

    let mut rng = Prng::seed_from_u64(child_seed(seed, &[0x3a17]));
    let order = shuffled_indices(reference_pool.len(), &mut rng);

    let mut per_run_scores = Vec::with_capacity(s);
    let mut pooled_sensitivities: Vec<f64> = Vec::with_capacity(s * eval_set.len());
    for j in 0..s {
        let subset: Vec<LatentPoint> = order[j * n_per_subset..(j + 1) * n_per_subset]
            .iter()
            .map(|&idx| reference_pool[idx].clone())
            .collect();
        let cav = estimator.fit(concepts, &subset, child_seed(seed, &[0xf17, j as u64]))?;
        let sens = sensitivity_scores(head, &cav, eval_set)?;
        per_run_scores.push(tcav_score(&sens)?);
        pooled_sensitivities.extend_from_slice(&sens.values);
    }
    let multi_run_mean = stats::mean(&per_run_scores);
    let p_value = if pooled_sensitivities.len() >= 2 {
        Some(
            sensitivity_t_test(&SensitivityVector {
                values: pooled_sensitivities,
            })?
            .p_value,
        )
    } else {
        None
    };
    Ok(TcavResult {
        score: multi_run_mean,
        per_run_scores,
        multi_run_mean,
        p_value,
        s,
        n_per_subset,
        discarded_samples: discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::FitOptions;
    use crate::latent::{make_borderline_scenario, sample_references};

    #[test]
    fn orthogonal_head_and_cav_give_zero_scores() {
        let head = ScoringHead::linear(vec![1.0, 0.0], 0.0);
        let cav = dummy_cav(vec![0.0, 1.0]);
        let eval = EvaluationSet::new(vec![vec![3.0, 4.0], vec![-1.0, 2.0]]).unwrap();
        let s = sensitivity_scores(&head, &cav, &eval).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aligned_head_and_cav_give_norm_squared() {
        let w = vec![2.0, -1.0, 0.5];
        let head = ScoringHead::linear(w.clone(), 3.0);
        let cav = dummy_cav(w.clone());
        let eval = EvaluationSet::new(vec![vec![9.0, 9.0, 9.0]]).unwrap();
        let s = sensitivity_scores(&head, &cav, &eval).unwrap();
        let expected = linalg::dot(&w, &w);
        assert_eq!(s.values[0], expected);
    }

    #[test]
    fn mlp_sensitivity_matches_directional_difference() {
        let d = 4;
        let head = ScoringHead::random_mlp(d, 6, 5);
        let beta = vec![0.3, -0.2, 0.9, 0.1];
        let cav = dummy_cav(beta.clone());
        let point = vec![0.4, -1.2, 0.7, 0.05];
        let eval = EvaluationSet::new(vec![point.clone()]).unwrap();
        let s = sensitivity_scores(&head, &cav, &eval).unwrap();

        let eps = 1e-5;
        let plus: Vec<f64> = point.iter().zip(&beta).map(|(p, b)| p + eps * b).collect();
        let minus: Vec<f64> = point.iter().zip(&beta).map(|(p, b)| p - eps * b).collect();
        let (fp, _) = head_value_and_gradient(&head, &plus).unwrap();
        let (fm, _) = head_value_and_gradient(&head, &minus).unwrap();
        let directional = (fp - fm) / (2.0 * eps);
        let rel = ((s.values[0] - directional) / directional.abs().max(1e-12)).abs();
        assert!(
            rel < 1e-5,
            "sensitivity {} vs directional {directional}",
            s.values[0]
        );
    }

    #[test]
    fn tcav_score_counts_strict_positives() {
        let v = SensitivityVector {
            values: vec![1.0, -1.0, 2.0, 3.0],
        };
        assert_eq!(tcav_score(&v).unwrap(), 0.75);
        let all_pos = SensitivityVector {
            values: vec![0.1, 5.0],
        };
        assert_eq!(tcav_score(&all_pos).unwrap(), 1.0);
        let zeros = SensitivityVector {
            values: vec![0.0, 0.0],
        };
        assert_eq!(tcav_score(&zeros).unwrap(), 0.0);
        let empty = SensitivityVector { values: vec![] };
        assert!(tcav_score(&empty).is_err());
    }

    #[test]
    fn tcav_score_is_invariant_to_positive_cav_scaling() {
        let head = ScoringHead::random_mlp(3, 5, 8);
        let eval = EvaluationSet::new(
            (0..40)
                .map(|i| {
                    vec![
                        (i as f64) * 0.1 - 2.0,
                        (i as f64) * 0.05,
                        1.0 - (i as f64) * 0.07,
                    ]
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let beta = vec![0.4, -0.8, 0.3];
        for c in [0.001, 1.0, 250.0] {
            let scaled: Vec<f64> = beta.iter().map(|v| c * v).collect();
            let s1 = sensitivity_scores(&head, &dummy_cav(beta.clone()), &eval).unwrap();
            let s2 = sensitivity_scores(&head, &dummy_cav(scaled), &eval).unwrap();
            assert_eq!(tcav_score(&s1).unwrap(), tcav_score(&s2).unwrap());
        }
    }

    #[test]
    fn sensitivity_is_linear_in_the_cav() {
        let head = ScoringHead::random_mlp(3, 4, 2);
        let eval = EvaluationSet::new(vec![vec![0.2, -0.4, 1.1], vec![2.0, 0.0, -0.3]]).unwrap();
        let b1 = vec![0.5, 0.1, -0.2];
        let b2 = vec![-0.3, 0.8, 0.4];
        let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
        let s1 = sensitivity_scores(&head, &dummy_cav(b1), &eval).unwrap();
        let s2 = sensitivity_scores(&head, &dummy_cav(b2), &eval).unwrap();
        let ss = sensitivity_scores(&head, &dummy_cav(sum), &eval).unwrap();
        for i in 0..2 {
            assert!((ss.values[i] - (s1.values[i] + s2.values[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn t_test_symmetric_pair_gives_p_one() {
        let r = sensitivity_t_test(&SensitivityVector {
            values: vec![-1.0, 1.0],
        })
        .unwrap();
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.t_statistic, 0.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn t_test_matches_quadrature_oracle() {
        // Independent oracle: integrate the t density by Simpson's rule on
        // [|t|, cutoff] and double the tail mass.
        let oracle = |t: f64, df: f64| -> f64 {
            let ln_norm = stats::ln_gamma((df + 1.0) / 2.0)
                - stats::ln_gamma(df / 2.0)
                - 0.5 * (df * std::f64::consts::PI).ln();
            let pdf = |x: f64| (ln_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
            let (a, b) = (t.abs(), t.abs() + 2000.0);
            let steps = 400_000;
            let h = (b - a) / steps as f64;
            let mut acc = pdf(a) + pdf(b);
            for i in 1..steps {
                let x = a + i as f64 * h;
                acc += if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(x);
            }
            2.0 * acc * h / 3.0
        };
        let values = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let r = sensitivity_t_test(&SensitivityVector { values }).unwrap();
        // mean 3, sd sqrt(2.5), n=5 -> t = 3 sqrt(2).
        assert!((r.t_statistic - 3.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        let expected = oracle(r.t_statistic, 4.0);
        assert!(
            (r.p_value - expected).abs() < 1e-6,
            "p {} vs oracle {expected}",
            r.p_value
        );
    }

    #[test]
    fn t_test_degenerate_conventions() {
        let constant = sensitivity_t_test(&SensitivityVector {
            values: vec![2.0; 5],
        })
        .unwrap();
        assert_eq!(constant.p_value, 0.0);
        assert!(constant.degenerate);
        let zeros = sensitivity_t_test(&SensitivityVector {
            values: vec![0.0; 5],
        })
        .unwrap();
        assert_eq!(zeros.p_value, 1.0);
        assert!(zeros.degenerate);
    }

    #[test]
    fn multi_run_with_one_subset_matches_single_run() {
        let scenario = make_borderline_scenario(3, 20, f64::INFINITY, 5).unwrap();
        let pool = sample_references(&scenario.references, 200, 31).unwrap();
        let est = EstimatorSpec::DifferenceOfMeans;
        let result = multi_run_tcav(
            &scenario.concepts,
            &pool,
            1,
            &scenario.head,
            &scenario.eval,
            &est,
            7,
        )
        .unwrap();
        assert_eq!(result.per_run_scores.len(), 1);
        assert_eq!(result.multi_run_mean, result.per_run_scores[0]);
        assert_eq!(result.discarded_samples, 0);
        assert_eq!(result.n_per_subset, 200);
    }

    #[test]
    fn multi_run_mean_is_arithmetic_mean_and_bounded_by_extremes() {
        let scenario = make_borderline_scenario(4, 25, 0.01, 6).unwrap();
        let pool = sample_references(&scenario.references, 400, 77).unwrap();
        let est = EstimatorSpec::DifferenceOfMeans;
        let result = multi_run_tcav(
            &scenario.concepts,
            &pool,
            8,
            &scenario.head,
            &scenario.eval,
            &est,
            13,
        )
        .unwrap();
        assert_eq!(result.per_run_scores.len(), 8);
        let mean = stats::mean(&result.per_run_scores);
        assert!((result.multi_run_mean - mean).abs() <= 1e-12);
        let min = result
            .per_run_scores
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let max = result
            .per_run_scores
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(result.multi_run_mean >= min && result.multi_run_mean <= max);
        for t in &result.per_run_scores {
            assert!((0.0..=1.0).contains(t));
        }
    }

    #[test]
    fn multi_run_discards_remainder_and_partitions_disjointly() {
        let scenario = make_borderline_scenario(3, 10, 0.01, 9).unwrap();
        let pool = sample_references(&scenario.references, 103, 55).unwrap();
        let est = EstimatorSpec::DifferenceOfMeans;
        let result = multi_run_tcav(
            &scenario.concepts,
            &pool,
            5,
            &scenario.head,
            &scenario.eval,
            &est,
            21,
        )
        .unwrap();
        assert_eq!(result.n_per_subset, 20);
        assert_eq!(result.discarded_samples, 3);

        // s greater than the pool is a domain error.
        let small = sample_references(&scenario.references, 4, 1).unwrap();
        assert!(multi_run_tcav(
            &scenario.concepts,
            &small,
            5,
            &scenario.head,
            &scenario.eval,
            &est,
            2,
        )
        .is_err());
    }

    #[test]
    fn multi_run_is_deterministic_for_fixed_seed() {
        let scenario = make_borderline_scenario(3, 15, 0.01, 2).unwrap();
        let pool = sample_references(&scenario.references, 240, 19).unwrap();
        let est = EstimatorSpec::Logistic(FitOptions::default());
        let run = || {
            multi_run_tcav(
                &scenario.concepts,
                &pool,
                4,
                &scenario.head,
                &scenario.eval,
                &est,
                1234,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.per_run_scores, b.per_run_scores);
        assert_eq!(a.multi_run_mean.to_bits(), b.multi_run_mean.to_bits());
    }

    fn dummy_cav(beta: Vec<f64>) -> Cav {
        let d = beta.len();
        Cav {
            beta,
            alpha: 0.0,
            center: vec![0.0; d],
            estimator: crate::estimators::EstimatorKind::Dom,
            lambda: 0.0,
            n_concept: 1,
            n_reference: 1,
            seed: 0,
            a_n: None,
        }
    }
}
