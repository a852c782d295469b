//! Synthetic latent-space scenarios: reference distributions, concept sets,
//! differentiable scoring heads, and evaluation sets.
//!
//! Real pipelines obtain latent activations from a trained network. Here the
//! substrate is synthetic (or ingested from files), so every downstream
//! experiment has a known ground truth: gaussian references with a chosen
//! covariance, concept clusters with an exact mean, and heads whose gradients
//! are available in closed form.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::seeding::{child_seed, NormalSource};

/// A point in the latent space; the crate-wide convention is plain `Vec<f64>`.
pub type LatentPoint = Vec<f64>;

/// The fixed concept examples and their cached mean.
#[derive(Debug, Clone)]
pub struct ConceptSet {
    points: Vec<LatentPoint>,
    mean: LatentPoint,
}

impl ConceptSet {
    /// Build a concept set, validating finiteness and a shared dimension.
    pub fn new(points: Vec<LatentPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("concept set must be non-empty".into()));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::Config(
                "concept points must have dimension >= 1".into(),
            ));
        }
        for (i, p) in points.iter().enumerate() {
            if p.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "concept point {i} has non-finite entries"
                )));
            }
        }
        let mean = linalg::mean_vector(&points)?;
        Ok(ConceptSet { points, mean })
    }

    pub fn points(&self) -> &[LatentPoint] {
        &self.points
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One gaussian component: a mean and a symmetric PSD covariance.
#[derive(Debug, Clone)]
pub struct GaussianComponent {
    mean: Vec<f64>,
    cov: Matrix,
    /// Factor L with L L^T = cov, used for sampling.
    factor: Matrix,
}

impl GaussianComponent {
    /// Validate and store a gaussian. Covariances whose smallest eigenvalue
    /// lies in [-1e-10, 0) are repaired by clamping (file round-trip noise);
    /// anything more negative is rejected.
    pub fn new(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        let d = mean.len();
        if !cov.is_square() || cov.rows != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                got: cov.rows,
            });
        }
        if cov.asymmetry() > 1e-9 {
            return Err(Error::Config("covariance must be symmetric".into()));
        }
        if mean.iter().any(|v| !v.is_finite()) || cov.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("gaussian parameters must be finite".into()));
        }
        let eig = linalg::sym_eigen(&cov)?;
        let min_eig = eig.values.last().copied().unwrap_or(0.0);
        if min_eig < -1e-10 {
            return Err(Error::Config(format!(
                "covariance not PSD: smallest eigenvalue {min_eig:.3e}"
            )));
        }
        let (cov, factor) = if min_eig < 0.0 {
            let repaired = eig.reassemble_with(|l| l.max(0.0));
            (repaired, eig.psd_factor())
        } else {
            (cov, eig.psd_factor())
        };
        Ok(GaussianComponent { mean, cov, factor })
    }

    pub fn standard(d: usize) -> Self {
        GaussianComponent {
            mean: vec![0.0; d],
            cov: Matrix::identity(d),
            factor: Matrix::identity(d),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_into(&self, source: &mut NormalSource, out: &mut Vec<f64>) {
        let d = self.dim();
        let mut xi = vec![0.0f64; d];
        source.fill_normal(&mut xi);
        out.clear();
        out.extend_from_slice(&self.mean);
        for (k, &x) in xi.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.factor[(i, k)] * x;
            }
        }
    }
}

/// The reference ("random example") distribution F0.
#[derive(Debug, Clone)]
pub enum ReferenceSpec {
    Gaussian(GaussianComponent),
    Mixture(Vec<(f64, GaussianComponent)>),
    Empirical(Vec<LatentPoint>),
}

impl ReferenceSpec {
    pub fn gaussian(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        Ok(ReferenceSpec::Gaussian(GaussianComponent::new(mean, cov)?))
    }

    pub fn standard_gaussian(d: usize) -> Self {
        ReferenceSpec::Gaussian(GaussianComponent::standard(d))
    }

    pub fn mixture(components: Vec<(f64, GaussianComponent)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        let d = components[0].1.dim();
        for (w, c) in &components {
            if *w < 0.0 {
                return Err(Error::Config("mixture weights must be nonnegative".into()));
            }
            if c.dim() != d {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: c.dim(),
                });
            }
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(ReferenceSpec::Mixture(components))
    }

    pub fn empirical(pool: Vec<LatentPoint>) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Config("empirical reference pool is empty".into()));
        }
        let d = pool[0].len();
        for (i, p) in pool.iter().enumerate() {
            if p.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Ingest {
                    row: i,
                    message: "non-finite reference point".into(),
                });
            }
        }
        Ok(ReferenceSpec::Empirical(pool))
    }

    pub fn dim(&self) -> usize {
        match self {
            ReferenceSpec::Gaussian(g) => g.dim(),
            ReferenceSpec::Mixture(cs) => cs[0].1.dim(),
            ReferenceSpec::Empirical(pool) => pool[0].len(),
        }
    }

    /// Population mean of F0 (pool mean for the empirical kind).
    pub fn population_mean(&self) -> Vec<f64> {
        match self {
            ReferenceSpec::Gaussian(g) => g.mean().to_vec(),
            ReferenceSpec::Mixture(cs) => {
                let d = self.dim();
                let mut m = vec![0.0; d];
                for (w, c) in cs {
                    linalg::add_scaled(&mut m, *w, c.mean());
                }
                m
            }
            ReferenceSpec::Empirical(pool) => linalg::mean_vector(pool).expect("non-empty pool"),
        }
    }
}

/// Draw `count` reference points. Deterministic in `(spec, count, seed)`;
/// the empirical kind samples with replacement from its pool.
pub fn sample_references(
    spec: &ReferenceSpec,
    count: usize,
    seed: u64,
) -> Result<Vec<LatentPoint>> {
    if count == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let mut source = NormalSource::from_seed(child_seed(seed, &[0x5a11]));
    let mut out = Vec::with_capacity(count);
    match spec {
        ReferenceSpec::Gaussian(g) => {
            let mut buf = Vec::new();
            for _ in 0..count {
                g.sample_into(&mut source, &mut buf);
                out.push(buf.clone());
            }
        }
        ReferenceSpec::Mixture(components) => {
            let mut buf = Vec::new();
            for _ in 0..count {
                let u: f64 = source.rng_mut().random();
                let mut cum = 0.0;
                let mut chosen = &components[components.len() - 1].1;
                for (w, c) in components {
                    cum += w;
                    if u < cum {
                        chosen = c;
                        break;
                    }
                }
                chosen.sample_into(&mut source, &mut buf);
                out.push(buf.clone());
            }
        }
        ReferenceSpec::Empirical(pool) => {
            for _ in 0..count {
                let idx = source.rng_mut().random_range(0..pool.len());
                out.push(pool[idx].clone());
            }
        }
    }
    Ok(out)
}

use rand::Rng;

/// A differentiable scoring head g mapping a latent point to a class logit.
#[derive(Debug, Clone)]
pub enum ScoringHead {
    /// g(v) = w . v + bias; the gradient is the constant w.
    Linear { weights: Vec<f64>, bias: f64 },
    /// One tanh hidden layer: g(v) = w2 . tanh(W1 v + b1) + b2.
    Mlp {
        w1: Matrix,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

impl ScoringHead {
    pub fn linear(weights: Vec<f64>, bias: f64) -> Self {
        ScoringHead::Linear { weights, bias }
    }

    /// Random tanh MLP with `hidden` units, weights scaled by 1/sqrt(fan-in).
    pub fn random_mlp(d: usize, hidden: usize, seed: u64) -> Self {
        let mut source = NormalSource::from_seed(child_seed(seed, &[0x331f]));
        let mut w1 = Matrix::zeros(hidden, d);
        let scale1 = 1.0 / (d as f64).sqrt();
        for v in &mut w1.data {
            *v = source.next_normal() * scale1;
        }
        let mut b1 = vec![0.0; hidden];
        source.fill_normal(&mut b1);
        for v in &mut b1 {
            *v *= 0.1;
        }
        let scale2 = 1.0 / (hidden as f64).sqrt();
        let mut w2 = vec![0.0; hidden];
        source.fill_normal(&mut w2);
        for v in &mut w2 {
            *v *= scale2;
        }
        let b2 = source.next_normal() * 0.1;
        ScoringHead::Mlp { w1, b1, w2, b2 }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            ScoringHead::Linear { weights, .. } => weights.len(),
            ScoringHead::Mlp { w1, .. } => w1.cols,
        }
    }
}

/// Evaluate the head and its gradient at a latent point.
pub fn head_value_and_gradient(head: &ScoringHead, v: &[f64]) -> Result<(f64, Vec<f64>)> {
    if v.len() != head.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: head.input_dim(),
            got: v.len(),
        });
    }
    match head {
        ScoringHead::Linear { weights, bias } => {
            Ok((linalg::dot(weights, v) + bias, weights.clone()))
        }
        ScoringHead::Mlp { w1, b1, w2, b2 } => {
            let hidden = w1.rows;
            let mut logit = *b2;
            let mut grad = vec![0.0f64; v.len()];
            for h in 0..hidden {
                let pre = linalg::dot(w1.row(h), v) + b1[h];
                let t = pre.tanh();
                logit += w2[h] * t;
                // d tanh(u)/du = 1 - tanh(u)^2
                let coeff = w2[h] * (1.0 - t * t);
                linalg::add_scaled(&mut grad, coeff, w1.row(h));
            }
            Ok((logit, grad))
        }
    }
}

/// The class-k inputs over which TCAV scores are aggregated.
#[derive(Debug, Clone)]
pub struct EvaluationSet {
    points: Vec<LatentPoint>,
}

impl EvaluationSet {
    pub fn new(points: Vec<LatentPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Config("evaluation set must be non-empty".into()));
        }
        Ok(EvaluationSet { points })
    }

    pub fn points(&self) -> &[LatentPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// A full synthetic experiment substrate.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub concepts: ConceptSet,
    pub references: ReferenceSpec,
    pub head: ScoringHead,
    pub eval: EvaluationSet,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.concepts.dim()
    }

    /// Population difference-of-means direction: concept mean minus F0 mean.
    pub fn population_direction(&self) -> Vec<f64> {
        linalg::sub(self.concepts.mean(), &self.references.population_mean())
    }
}

/// Number of concept points generated by [`make_borderline_scenario`].
pub const BORDERLINE_CONCEPT_COUNT: usize = 20;
/// Concept-cluster center along the first axis in the borderline scenario.
pub const BORDERLINE_CONCEPT_OFFSET: f64 = 4.0;

/// Construct the borderline (or, with `offset = inf`, far-from-boundary)
/// scenario used by the TCAV-variance experiments.
///
/// The concept cluster sits at `4 e1` with its mean pinned there exactly
/// (points come in +/- pairs), references are standard gaussian, so the
/// population difference-of-means direction is exactly `4 e1`. A finite
/// `offset` selects the borderline head, whose gradient has an exactly zero
/// first component at every point: the cosine between any evaluation-point
/// gradient and the population direction is 0, which satisfies any requested
/// bound `|cos| <= offset`. Evaluation-point sensitivities then never acquire
/// a drift term, so their signs keep flipping no matter how large N grows.
/// `offset = inf` selects the far head, whose gradient is a positive multiple
/// of `e1` everywhere, forcing a single stable sensitivity sign.
pub fn make_borderline_scenario(
    d: usize,
    n_eval: usize,
    offset: f64,
    seed: u64,
) -> Result<Scenario> {
    if d < 2 {
        return Err(Error::Config(
            "borderline scenario needs dimension >= 2".into(),
        ));
    }
    if n_eval == 0 {
        return Err(Error::Config(
            "borderline scenario needs at least one evaluation point".into(),
        ));
    }
    if !(offset.is_nan()) && offset < 0.0 {
        return Err(Error::Config("offset must be nonnegative".into()));
    }

    // Concept cluster: +/- paired perturbations keep the mean at exactly
    // offset * e1 in coordinate 1 terms and exactly 0 elsewhere.
    let mut source = NormalSource::from_seed(child_seed(seed, &[0xb0d3]));
    let mut concept_points = Vec::with_capacity(BORDERLINE_CONCEPT_COUNT);
    let mut center = vec![0.0f64; d];
    center[0] = BORDERLINE_CONCEPT_OFFSET;
    for _ in 0..BORDERLINE_CONCEPT_COUNT / 2 {
        let mut delta = vec![0.0f64; d];
        source.fill_normal(&mut delta);
        for v in &mut delta {
            *v *= 0.25;
        }
        let plus: Vec<f64> = (0..d).map(|k| center[k] + delta[k]).collect();
        let minus: Vec<f64> = (0..d).map(|k| center[k] - delta[k]).collect();
        concept_points.push(plus);
        concept_points.push(minus);
    }
    let concepts = ConceptSet::new(concept_points)?;

    let references = ReferenceSpec::standard_gaussian(d);

    // Head: identity first layer, tanh, output weights select which
    // coordinates the gradient lives in.
    let far = offset.is_infinite();
    let mut w2 = vec![0.0f64; d];
    if far {
        w2[0] = 1.0;
    } else {
        for v in w2.iter_mut().skip(1) {
            *v = 1.0;
        }
    }
    let head = ScoringHead::Mlp {
        w1: Matrix::identity(d),
        b1: vec![0.0; d],
        w2,
        b2: 0.0,
    };

    let mut eval_points = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let mut p = vec![0.0f64; d];
        source.fill_normal(&mut p);
        eval_points.push(p);
    }
    let eval = EvaluationSet::new(eval_points)?;

    Ok(Scenario {
        concepts,
        references,
        head,
        eval,
    })
}
