//! Derivative-free optimization by sampling: stochastic gradients of
//! E_p(z;theta)[R(z)] via the score function, and symmetric two-point
//! finite-difference estimates along random directions.
//!
//! Both estimators touch R only through function evaluations. The score
//! route G(z, theta) = R(z) grad log p(z; theta) is unbiased for the
//! gradient of the expected reward; the two-point route
//! g = (R(theta + sigma e) - R(theta - sigma e)) / (2 sigma) * e
//! is exact per direction on quadratics because the odd difference kills
//! every even term.

use ndarray::Array1;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::Result;

/// A sampleable density over decision variables with a differentiable
/// log-likelihood in its parameters.
pub trait ParametricDensity {
    /// Dimension of the parameter vector theta.
    fn param_dim(&self) -> usize;
    /// Dimension of a sample z.
    fn sample_dim(&self) -> usize;
    fn sample(&self, theta: &Array1<f64>, rng: &mut dyn rand::RngCore) -> Array1<f64>;
    /// grad_theta log p(z; theta).
    fn score(&self, z: &Array1<f64>, theta: &Array1<f64>) -> Array1<f64>;
}

/// Gaussian with mean theta and fixed isotropic covariance sigma^2 I.
#[derive(Debug, Clone)]
pub struct GaussianDensity {
    pub dim: usize,
    pub sigma: f64,
}

impl GaussianDensity {
    pub fn new(dim: usize, sigma: f64) -> Result<Self> {
        if dim == 0 || sigma <= 0.0 {
            return Err(CoreError::InvalidArgument(
                "Gaussian density needs dim >= 1 and sigma > 0".into(),
            ));
        }
        Ok(Self { dim, sigma })
    }
}

impl ParametricDensity for GaussianDensity {
    fn param_dim(&self) -> usize {
        self.dim
    }

    fn sample_dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, theta: &Array1<f64>, rng: &mut dyn rand::RngCore) -> Array1<f64> {
        Array1::from_shape_fn(self.dim, |i| {
            theta[i] + self.sigma * rand::Rng::sample::<f64, _>(&mut *rng, StandardNormal)
        })
    }

    fn score(&self, z: &Array1<f64>, theta: &Array1<f64>) -> Array1<f64> {
        (z - theta) / (self.sigma * self.sigma)
    }
}

/// Categorical distribution with softmax(theta) probabilities; samples are
/// one-hot vectors.
#[derive(Debug, Clone)]
pub struct SoftmaxDensity {
    pub categories: usize,
}

impl SoftmaxDensity {
    fn probabilities(&self, theta: &Array1<f64>) -> Array1<f64> {
        let max = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp = theta.mapv(|t| (t - max).exp());
        let total = exp.sum();
        exp / total
    }
}

impl ParametricDensity for SoftmaxDensity {
    fn param_dim(&self) -> usize {
        self.categories
    }

    fn sample_dim(&self) -> usize {
        self.categories
    }

    fn sample(&self, theta: &Array1<f64>, rng: &mut dyn rand::RngCore) -> Array1<f64> {
        let probs = self.probabilities(theta);
        let u: f64 = rand::Rng::gen(&mut *rng);
        let mut acc = 0.0;
        let mut chosen = self.categories - 1;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = i;
                break;
            }
        }
        let mut z = Array1::zeros(self.categories);
        z[chosen] = 1.0;
        z
    }

    fn score(&self, z: &Array1<f64>, theta: &Array1<f64>) -> Array1<f64> {
        z - &self.probabilities(theta)
    }
}

/// Monte Carlo check of the score identity E[grad log p] = 0 at a fixed
/// parameter: returns per-coordinate means and standard errors.
pub fn score_self_test<D: ParametricDensity>(
    density: &D,
    theta: &Array1<f64>,
    draws: usize,
    rng: &mut impl Rng,
) -> (Array1<f64>, Array1<f64>) {
    let d = density.param_dim();
    let mut sum: Array1<f64> = Array1::zeros(d);
    let mut sum_sq: Array1<f64> = Array1::zeros(d);
    for _ in 0..draws {
        let z = density.sample(theta, rng);
        let s = density.score(&z, theta);
        sum += &s;
        sum_sq += &s.mapv(|v| v * v);
    }
    let mean = sum / draws as f64;
    let var = sum_sq / draws as f64 - mean.mapv(|m| m * m);
    let se = var.mapv(|v| (v.max(0.0) / draws as f64).sqrt());
    (mean, se)
}

/// Batch-averaged score-function gradient estimate of E[R(z)].
pub fn reinforce_gradient<D: ParametricDensity>(
    density: &D,
    reward: &dyn Fn(&Array1<f64>) -> f64,
    theta: &Array1<f64>,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    if batch < 1 {
        return Err(CoreError::InvalidArgument("batch must be >= 1".into()));
    }
    let mut grad = Array1::zeros(density.param_dim());
    for i in 0..batch {
        let z = density.sample(theta, rng);
        let r = reward(&z);
        if !r.is_finite() {
            return Err(CoreError::InvalidArgument(format!(
                "reward returned a non-finite value for sample {i} of the batch"
            )));
        }
        grad += &(density.score(&z, theta) * r);
    }
    Ok(grad / batch as f64)
}

/// Step-size sequence for the ascent loops.
#[derive(Debug, Clone)]
pub enum StepSizes {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl StepSizes {
    fn at(&self, k: usize) -> f64 {
        match self {
            StepSizes::Constant(a) => *a,
            StepSizes::PerStep(steps) => steps[k.min(steps.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSizes::Constant(a) => *a >= 0.0,
            StepSizes::PerStep(steps) => !steps.is_empty() && steps.iter().all(|a| *a >= 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::InvalidArgument(
                "step sizes must be nonnegative".into(),
            ))
        }
    }
}

/// Record of an ascent run: one entry per step.
#[derive(Debug, Clone)]
pub struct SearchTrace {
    pub iterates: Vec<Array1<f64>>,
    pub rewards: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub seed: Option<u64>,
}

impl SearchTrace {
    fn with_capacity(steps: usize) -> Self {
        Self {
            iterates: Vec::with_capacity(steps + 1),
            rewards: Vec::with_capacity(steps),
            step_sizes: Vec::with_capacity(steps),
            seed: None,
        }
    }

    pub fn final_theta(&self) -> &Array1<f64> {
        self.iterates.last().expect("trace holds the initial point")
    }

    pub fn best_reward(&self) -> f64 {
        self.rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Guard shared by the ascent loops.
const GUARD: f64 = crate::learning::DIVERGENCE_GUARD;

/// Stochastic gradient ascent on E[R]: theta <- theta + alpha_k R(z_k)
/// grad log p(z_k; theta_k), with a configurable batch (1 by default in the
/// callers, matching the plain algorithm).
pub fn reinforce<D: ParametricDensity>(
    density: &D,
    reward: &dyn Fn(&Array1<f64>) -> f64,
    theta0: Array1<f64>,
    steps: usize,
    step_sizes: &StepSizes,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<SearchTrace> {
    step_sizes.validate()?;
    let mut trace = SearchTrace::with_capacity(steps);
    let mut theta = theta0;
    trace.iterates.push(theta.clone());
    for k in 0..steps {
        let grad = reinforce_gradient(density, reward, &theta, batch, rng)?;
        let alpha = step_sizes.at(k);
        theta = theta + grad * alpha;
        let norm = theta.dot(&theta).sqrt();
        if norm > GUARD {
            return Err(CoreError::Diverged { norm, guard: GUARD });
        }
        trace.rewards.push(reward(&theta));
        trace.step_sizes.push(alpha);
        trace.iterates.push(theta.clone());
    }
    Ok(trace)
}

/// Direction law for the two-point estimator. The Gaussian default has
/// E[ee'] = I, which makes the averaged estimator unbiased for the gradient
/// on linear functions without rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Directions {
    Gaussian,
    UnitSphere,
}

fn draw_direction(dim: usize, law: Directions, rng: &mut impl Rng) -> Array1<f64> {
    let mut e = Array1::from_shape_fn(dim, |_| rng.sample::<f64, _>(StandardNormal));
    if law == Directions::UnitSphere {
        let norm = e.dot(&e).sqrt();
        if norm > 0.0 {
            e /= norm;
        }
    }
    e
}

/// Single-direction symmetric difference (R(t + se) - R(t - se)) / (2s) e.
pub fn two_point_single(
    reward: &dyn Fn(&Array1<f64>) -> f64,
    theta: &Array1<f64>,
    sigma: f64,
    direction: &Array1<f64>,
) -> Result<Array1<f64>> {
    let plus = reward(&(theta + &(direction * sigma)));
    let minus = reward(&(theta - &(direction * sigma)));
    if !plus.is_finite() || !minus.is_finite() {
        return Err(CoreError::InvalidArgument(
            "reward returned a non-finite value in a two-point probe".into(),
        ));
    }
    Ok(direction * ((plus - minus) / (2.0 * sigma)))
}

/// Averages the symmetric difference over `m` random directions.
pub fn two_point_estimate(
    reward: &dyn Fn(&Array1<f64>) -> f64,
    theta: &Array1<f64>,
    sigma: f64,
    m: usize,
    law: Directions,
    rng: &mut impl Rng,
) -> Result<Array1<f64>> {
    if sigma <= 0.0 || m < 1 {
        return Err(CoreError::InvalidArgument(
            "need sigma > 0 and at least one direction".into(),
        ));
    }
    let mut grad = Array1::zeros(theta.len());
    for _ in 0..m {
        let e = draw_direction(theta.len(), law, rng);
        grad += &two_point_single(reward, theta, sigma, &e)?;
    }
    Ok(grad / m as f64)
}

/// Gradient-free ascent with the averaged two-point estimator:
/// theta <- theta + alpha g_sigma(theta).
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    reward: &dyn Fn(&Array1<f64>) -> f64,
    theta0: Array1<f64>,
    sigma: f64,
    m: usize,
    alpha: f64,
    steps: usize,
    law: Directions,
    rng: &mut impl Rng,
) -> Result<SearchTrace> {
    if alpha < 0.0 {
        return Err(CoreError::InvalidArgument("alpha must be >= 0".into()));
    }
    let mut trace = SearchTrace::with_capacity(steps);
    let mut theta = theta0;
    trace.iterates.push(theta.clone());
    for _ in 0..steps {
        let grad = two_point_estimate(reward, &theta, sigma, m, law, rng)?;
        theta = theta + grad * alpha;
        let norm = theta.dot(&theta).sqrt();
        if norm > GUARD {
            return Err(CoreError::Diverged { norm, guard: GUARD });
        }
        trace.rewards.push(reward(&theta));
        trace.step_sizes.push(alpha);
        trace.iterates.push(theta.clone());
    }
    Ok(trace)
}
