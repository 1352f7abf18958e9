//! Multi-armed and contextual bandits with exact regret accounting.
//!
//! Pseudo-regret is charged from the true gaps: playing arm `k` at any step
//! adds `Delta_k = mu_best - mu_k`, so a curve is zero exactly when only
//! best arms were chosen. The explore-then-commit and successive-elimination
//! schedules are implemented with their exact schedule constants so the regret
//! bounds can be reproduced rather than approximated.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::CoreError;
use crate::Result;

/// Reward distribution attached to each arm.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmDistribution {
    /// Bernoulli(mu), the bounded default.
    Bernoulli,
    /// Gaussian(mu, sigma^2) clamped to [0, 1].
    TruncatedGaussian { sigma: f64 },
}

/// A K-armed instance: means in [0, 1] with cached gaps.
#[derive(Debug, Clone)]
pub struct BanditInstance {
    means: Vec<f64>,
    distribution: ArmDistribution,
    gaps: Vec<f64>,
    best_arm: usize,
}

impl BanditInstance {
    pub fn new(means: Vec<f64>, distribution: ArmDistribution) -> Result<Self> {
        if means.is_empty() {
            return Err(CoreError::InvalidArgument("need at least one arm".into()));
        }
        if means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(CoreError::InvalidArgument(
                "arm means must lie in [0, 1]".into(),
            ));
        }
        let best = means
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let best_arm = means.iter().position(|&m| m == best).unwrap();
        let gaps = means.iter().map(|m| best - m).collect();
        Ok(Self {
            means,
            distribution,
            gaps,
            best_arm,
        })
    }

    pub fn bernoulli(means: Vec<f64>) -> Result<Self> {
        Self::new(means, ArmDistribution::Bernoulli)
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn gap(&self, arm: usize) -> f64 {
        self.gaps[arm]
    }

    pub fn best_arm(&self) -> usize {
        self.best_arm
    }

    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().cloned().fold(0.0, f64::max)
    }

    pub fn pull(&self, arm: usize, rng: &mut impl Rng) -> f64 {
        match self.distribution {
            ArmDistribution::Bernoulli => {
                if rng.gen::<f64>() < self.means[arm] {
                    1.0
                } else {
                    0.0
                }
            }
            ArmDistribution::TruncatedGaussian { sigma } => {
                let normal = rand_distr::Normal::new(self.means[arm], sigma)
                    .expect("finite mean and positive sigma");
                rng.sample::<f64, _>(normal).clamp(0.0, 1.0)
            }
        }
    }
}

/// Per-step record of arm choices and cumulative pseudo-regret.
#[derive(Debug, Clone, Default)]
pub struct RegretCurve {
    arm_choices: Vec<usize>,
    cumulative_pseudo_regret: Vec<f64>,
}

impl RegretCurve {
    pub fn with_capacity(t: usize) -> Self {
        Self {
            arm_choices: Vec::with_capacity(t),
            cumulative_pseudo_regret: Vec::with_capacity(t),
        }
    }

    pub fn record(&mut self, arm: usize, gap: f64) {
        let prev = self.cumulative_pseudo_regret.last().copied().unwrap_or(0.0);
        self.arm_choices.push(arm);
        self.cumulative_pseudo_regret.push(prev + gap);
    }

    pub fn len(&self) -> usize {
        self.arm_choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arm_choices.is_empty()
    }

    pub fn arm_choices(&self) -> &[usize] {
        &self.arm_choices
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative_pseudo_regret
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_pseudo_regret.last().copied().unwrap_or(0.0)
    }

    /// Instantaneous gap paid at step `t`.
    pub fn instantaneous(&self, t: usize) -> f64 {
        let prev = if t == 0 {
            0.0
        } else {
            self.cumulative_pseudo_regret[t - 1]
        };
        self.cumulative_pseudo_regret[t] - prev
    }
}

/// Exploration length for explore-then-commit when the gap is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MStar {
    pub m: usize,
    /// The formula gave m < 1; callers should play a random arm instead.
    pub fallback: bool,
}

/// m0 = ceil( (4 / gap^2) * ln(T gap^2 / 4) ), clamped below at zero.
pub fn m_star(gap: f64, horizon: usize) -> Result<MStar> {
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(CoreError::InvalidArgument(format!(
            "gap must lie in (0, 1], got {gap}"
        )));
    }
    if horizon < 1 {
        return Err(CoreError::InvalidArgument("horizon must be >= 1".into()));
    }
    let g2 = gap * gap;
    let raw = (4.0 / g2) * (horizon as f64 * g2 / 4.0).ln();
    let m0 = raw.ceil().max(0.0) as usize;
    Ok(MStar {
        m: m0,
        fallback: m0 < 1,
    })
}

/// Explore-then-commit: the first m*K pulls cycle the arms in index order,
/// then the empirical-mean argmax (lowest index on ties) is played for the
/// rest of the horizon.
pub fn run_etc(
    instance: &BanditInstance,
    m: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<RegretCurve> {
    let k = instance.num_arms();
    if m * k > horizon {
        return Err(CoreError::InvalidArgument(format!(
            "exploration m*K = {} exceeds horizon {horizon}",
            m * k
        )));
    }
    let mut curve = RegretCurve::with_capacity(horizon);
    let mut sums = vec![0.0; k];
    for t in 0..m * k {
        let arm = t % k;
        sums[arm] += instance.pull(arm, rng);
        curve.record(arm, instance.gap(arm));
    }
    let committed = if m == 0 {
        0
    } else {
        argmax_lowest(&sums.iter().map(|s| s / m as f64).collect::<Vec<_>>())
    };
    for _ in m * k..horizon {
        let _ = instance.pull(committed, rng);
        curve.record(committed, instance.gap(committed));
    }
    Ok(curve)
}

/// Plays one uniformly random arm for the whole horizon; the fallback rule
/// for explore-then-commit when the tuned m is below one.
pub fn run_random_arm(
    instance: &BanditInstance,
    horizon: usize,
    rng: &mut impl Rng,
) -> RegretCurve {
    let arm = rng.gen_range(0..instance.num_arms());
    let mut curve = RegretCurve::with_capacity(horizon);
    for _ in 0..horizon {
        let _ = instance.pull(arm, rng);
        curve.record(arm, instance.gap(arm));
    }
    curve
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, &v) in values.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// Whether successive elimination compares means from the current round
/// only (the literal rule) or cumulatively across rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EliminationMeans {
    PerRound,
    Cumulative,
}

/// Round schedule for successive elimination.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeSchedule {
    pub rounds: usize,
    pub pulls_per_round: Vec<usize>,
}

/// B = floor(log2(T / e) / 2) and m_l = ceil(2^(2l+1) * ln(T / 4^l)).
pub fn se_schedule(horizon: usize) -> SeSchedule {
    let t = horizon as f64;
    let rounds = ((t / std::f64::consts::E).log2() / 2.0).floor().max(0.0) as usize;
    let pulls_per_round = (1..=rounds)
        .map(|l| {
            let pow = 2f64.powi(2 * l as i32 + 1);
            (pow * (t / 4f64.powi(l as i32)).ln()).ceil() as usize
        })
        .collect();
    SeSchedule {
        rounds,
        pulls_per_round,
    }
}

/// Outcome of a successive-elimination run.
#[derive(Debug, Clone)]
pub struct SuccessiveElimination {
    pub curve: RegretCurve,
    /// Active set after each completed round.
    pub active_history: Vec<Vec<usize>>,
    pub schedule: SeSchedule,
    /// Set when the horizon was too short for even one round and the run
    /// fell back to uniform play.
    pub fallback_uniform: bool,
}

/// Repeated prune cycles: every active arm is pulled m_l times, then any
/// arm whose round mean plus 2^-l is below the best round mean is dropped.
/// Any leftover budget goes to the best surviving arm.
pub fn successive_elimination(
    instance: &BanditInstance,
    horizon: usize,
    mode: EliminationMeans,
    rng: &mut impl Rng,
) -> SuccessiveElimination {
    let k = instance.num_arms();
    let schedule = se_schedule(horizon);
    let mut curve = RegretCurve::with_capacity(horizon);
    if schedule.rounds < 1 {
        // horizon too short to run even one round
        for t in 0..horizon {
            let arm = t % k;
            let _ = instance.pull(arm, rng);
            curve.record(arm, instance.gap(arm));
        }
        return SuccessiveElimination {
            curve,
            active_history: vec![(0..k).collect()],
            schedule,
            fallback_uniform: true,
        };
    }

    let mut active: Vec<usize> = (0..k).collect();
    let mut active_history = Vec::with_capacity(schedule.rounds);
    let mut total_sum = vec![0.0; k];
    let mut total_count = vec![0usize; k];
    let mut budget = horizon;

    for (round, &m_l) in schedule.pulls_per_round.iter().enumerate() {
        let need = m_l * active.len();
        if budget < need {
            break;
        }
        let mut round_sum = vec![0.0; k];
        for &arm in &active {
            for _ in 0..m_l {
                let r = instance.pull(arm, rng);
                round_sum[arm] += r;
                total_sum[arm] += r;
                total_count[arm] += 1;
                curve.record(arm, instance.gap(arm));
            }
        }
        budget -= need;
        let mean_of = |arm: usize| match mode {
            EliminationMeans::PerRound => round_sum[arm] / m_l as f64,
            EliminationMeans::Cumulative => total_sum[arm] / total_count[arm] as f64,
        };
        let best_mean = active
            .iter()
            .map(|&a| mean_of(a))
            .fold(f64::NEG_INFINITY, f64::max);
        let threshold = 2f64.powi(-(round as i32 + 1));
        active.retain(|&a| mean_of(a) + threshold >= best_mean);
        active_history.push(active.clone());
    }

    // spend any remainder on the best surviving arm
    if budget > 0 {
        let means: Vec<f64> = active
            .iter()
            .map(|&a| {
                if total_count[a] > 0 {
                    total_sum[a] / total_count[a] as f64
                } else {
                    0.0
                }
            })
            .collect();
        let commit = active[argmax_lowest(&means)];
        for _ in 0..budget {
            let _ = instance.pull(commit, rng);
            curve.record(commit, instance.gap(commit));
        }
    }

    SuccessiveElimination {
        curve,
        active_history,
        schedule,
        fallback_uniform: false,
    }
}

/// Hoeffding-style upper confidence bound B = mean + sqrt(2 ln(1/delta) / pulls).
/// Unpulled arms return infinity, forcing one initial pull of each arm.
pub fn ucb_bound(mean: f64, pulls: usize, delta: f64) -> f64 {
    if pulls == 0 {
        return f64::INFINITY;
    }
    mean + (2.0 * (1.0 / delta).ln() / pulls as f64).sqrt()
}

/// Optimism in the face of uncertainty: play the arm with the largest upper
/// confidence bound (lowest index on ties).
pub fn run_ucb(
    instance: &BanditInstance,
    horizon: usize,
    delta: f64,
    rng: &mut impl Rng,
) -> Result<RegretCurve> {
    if !(0.0 < delta && delta < 1.0) {
        return Err(CoreError::InvalidArgument(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    let k = instance.num_arms();
    let mut sums = vec![0.0; k];
    let mut pulls = vec![0usize; k];
    let mut curve = RegretCurve::with_capacity(horizon);
    for _ in 0..horizon {
        let bounds: Vec<f64> = (0..k)
            .map(|i| {
                let mean = if pulls[i] > 0 {
                    sums[i] / pulls[i] as f64
                } else {
                    0.0
                };
                ucb_bound(mean, pulls[i], delta)
            })
            .collect();
        let arm = argmax_lowest(&bounds);
        sums[arm] += instance.pull(arm, rng);
        pulls[arm] += 1;
        curve.record(arm, instance.gap(arm));
    }
    Ok(curve)
}

/// A contextual environment the algorithms can probe: contexts arrive from
/// a sampler and the observed reward is the true reward plus centered noise.
pub trait ContextualBandit {
    fn dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn sample_context(&self, rng: &mut dyn rand::RngCore) -> DVector<f64>;
    fn true_reward(&self, context: &DVector<f64>, action: usize) -> f64;
    fn observe(&self, context: &DVector<f64>, action: usize, rng: &mut dyn rand::RngCore) -> f64;

    fn best_action(&self, context: &DVector<f64>) -> usize {
        let values: Vec<f64> = (0..self.num_actions())
            .map(|a| self.true_reward(context, a))
            .collect();
        argmax_lowest(&values)
    }

    fn regret_of(&self, context: &DVector<f64>, action: usize) -> f64 {
        let best = self.best_action(context);
        self.true_reward(context, best) - self.true_reward(context, action)
    }
}

/// Linear rewards R(x, u) = theta_u . x with standard Gaussian contexts and
/// Gaussian observation noise.
#[derive(Debug, Clone)]
pub struct LinearContextualEnv {
    thetas: Vec<DVector<f64>>,
    noise_sigma: f64,
}

impl LinearContextualEnv {
    pub fn new(thetas: Vec<DVector<f64>>, noise_sigma: f64) -> Result<Self> {
        if thetas.is_empty() {
            return Err(CoreError::InvalidArgument("need at least one action".into()));
        }
        let d = thetas[0].len();
        if d == 0 || thetas.iter().any(|t| t.len() != d) {
            return Err(CoreError::DimensionMismatch(
                "action parameters must share a nonzero dimension".into(),
            ));
        }
        if noise_sigma < 0.0 {
            return Err(CoreError::InvalidArgument("noise sigma must be >= 0".into()));
        }
        Ok(Self {
            thetas,
            noise_sigma,
        })
    }

    /// Empirical check that the noise sampler is centered: returns the mean
    /// and standard error over `n` draws.
    pub fn noise_self_test(&self, n: usize, rng: &mut impl Rng) -> (f64, f64) {
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let w = self.noise(rng);
            sum += w;
            sum_sq += w * w;
        }
        let mean = sum / n as f64;
        let var = (sum_sq / n as f64 - mean * mean).max(0.0);
        (mean, (var / n as f64).sqrt())
    }

    fn noise(&self, rng: &mut dyn rand::RngCore) -> f64 {
        if self.noise_sigma == 0.0 {
            return 0.0;
        }
        let normal = rand_distr::Normal::new(0.0, self.noise_sigma).expect("valid sigma");
        rand::Rng::sample(&mut *rng, normal)
    }
}

impl ContextualBandit for LinearContextualEnv {
    fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    fn num_actions(&self) -> usize {
        self.thetas.len()
    }

    fn sample_context(&self, rng: &mut dyn rand::RngCore) -> DVector<f64> {
        let normal = rand_distr::StandardNormal;
        DVector::from_fn(self.dim(), |_, _| rand::Rng::sample(&mut *rng, normal))
    }

    fn true_reward(&self, context: &DVector<f64>, action: usize) -> f64 {
        self.thetas[action].dot(context)
    }

    fn observe(&self, context: &DVector<f64>, action: usize, rng: &mut dyn rand::RngCore) -> f64 {
        self.true_reward(context, action) + self.noise(rng)
    }
}

/// Ridge parameter used when the least-squares normal equations are
/// singular.
pub const RIDGE_FALLBACK: f64 = 1e-8;

/// Per-action least-squares reward predictor with incremental normal
/// equations.
#[derive(Debug, Clone)]
pub struct RewardModel {
    dim: usize,
    xtx: Vec<DMatrix<f64>>,
    xty: Vec<DVector<f64>>,
    counts: Vec<usize>,
    params: Vec<DVector<f64>>,
    /// Number of fits that needed the ridge fallback.
    pub ridge_events: usize,
}

impl RewardModel {
    pub fn new(dim: usize, num_actions: usize) -> Self {
        Self {
            dim,
            xtx: vec![DMatrix::zeros(dim, dim); num_actions],
            xty: vec![DVector::zeros(dim); num_actions],
            counts: vec![0; num_actions],
            params: vec![DVector::zeros(dim); num_actions],
            ridge_events: 0,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.params.len()
    }

    pub fn observations(&self, action: usize) -> usize {
        self.counts[action]
    }

    pub fn record(&mut self, context: &DVector<f64>, action: usize, reward: f64) {
        self.xtx[action] += context * context.transpose();
        self.xty[action] += context * reward;
        self.counts[action] += 1;
    }

    /// Solves the normal equations for every action with observations,
    /// falling back to ridge regularization when they are singular.
    pub fn fit(&mut self) {
        for a in 0..self.params.len() {
            if self.counts[a] == 0 {
                continue;
            }
            match self.xtx[a].clone().cholesky() {
                Some(chol) => self.params[a] = chol.solve(&self.xty[a]),
                None => {
                    self.ridge_events += 1;
                    let ridged = &self.xtx[a]
                        + DMatrix::identity(self.dim, self.dim).scale(RIDGE_FALLBACK);
                    self.params[a] = ridged
                        .cholesky()
                        .expect("ridge-regularized matrix is positive definite")
                        .solve(&self.xty[a]);
                }
            }
        }
    }

    /// Predicted reward; actions without any data predict zero.
    pub fn predict(&self, context: &DVector<f64>, action: usize) -> f64 {
        self.params[action].dot(context)
    }

    pub fn greedy_action(&self, context: &DVector<f64>) -> usize {
        let values: Vec<f64> = (0..self.num_actions())
            .map(|a| self.predict(context, a))
            .collect();
        argmax_lowest(&values)
    }
}

/// Outcome of a contextual run: the regret curve, the fitted model, and the
/// per-step prediction-error series that upper bounds the regret.
#[derive(Debug)]
pub struct ContextualRun {
    pub curve: RegretCurve,
    pub model: RewardModel,
    /// 2 * max_u |Rhat_t(x_t, u) - R(x_t, u)| per step.
    pub prediction_error_bound: Vec<f64>,
    /// Exploration was shorter than the identifiability heuristic.
    pub underidentified: bool,
}

/// Explore-then-commit for contexts: m uniformly random actions, one
/// least-squares fit, greedy forever after.
pub fn contextual_etc<E: ContextualBandit>(
    env: &E,
    m: usize,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<ContextualRun> {
    if m > horizon {
        return Err(CoreError::InvalidArgument(format!(
            "exploration m = {m} exceeds horizon {horizon}"
        )));
    }
    let mut model = RewardModel::new(env.dim(), env.num_actions());
    let mut curve = RegretCurve::with_capacity(horizon);
    let mut prediction_error_bound = Vec::with_capacity(horizon);
    for _ in 0..m {
        let x = env.sample_context(rng);
        let action = rng.gen_range(0..env.num_actions());
        let r = env.observe(&x, action, rng);
        model.record(&x, action, r);
        curve.record(action, env.regret_of(&x, action));
        prediction_error_bound.push(prediction_gap(env, &model, &x));
    }
    model.fit();
    for _ in m..horizon {
        let x = env.sample_context(rng);
        let action = model.greedy_action(&x);
        let _ = env.observe(&x, action, rng);
        curve.record(action, env.regret_of(&x, action));
        prediction_error_bound.push(prediction_gap(env, &model, &x));
    }
    Ok(ContextualRun {
        curve,
        model,
        prediction_error_bound,
        underidentified: m < env.dim(),
    })
}

/// Greedy contextual bandit: refit on the full history every round, then
/// play the action the current fit prefers (cold start plays action 0).
pub fn contextual_greedy<E: ContextualBandit>(
    env: &E,
    horizon: usize,
    rng: &mut impl Rng,
) -> Result<ContextualRun> {
    let mut model = RewardModel::new(env.dim(), env.num_actions());
    let mut curve = RegretCurve::with_capacity(horizon);
    let mut prediction_error_bound = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        model.fit();
        let x = env.sample_context(rng);
        let action = model.greedy_action(&x);
        let r = env.observe(&x, action, rng);
        prediction_error_bound.push(prediction_gap(env, &model, &x));
        model.record(&x, action, r);
        curve.record(action, env.regret_of(&x, action));
    }
    Ok(ContextualRun {
        curve,
        model,
        prediction_error_bound,
        underidentified: false,
    })
}

fn prediction_gap<E: ContextualBandit>(env: &E, model: &RewardModel, x: &DVector<f64>) -> f64 {
    2.0 * (0..env.num_actions())
        .map(|a| (model.predict(x, a) - env.true_reward(x, a)).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn m_star_known_values() {
        let m = m_star(0.2, 10_000).unwrap();
        assert_eq!(m.m, 461);
        assert!(!m.fallback);

        let m = m_star(1.0, 4).unwrap();
        assert_eq!(m.m, 0);
        assert!(m.fallback);

        // T gap^2 = 4e makes the log term exactly one
        let gap: f64 = 0.5;
        let horizon = (4.0 * std::f64::consts::E / (gap * gap)).ceil() as usize;
        let m = m_star(gap, horizon).unwrap();
        let expect = (4.0 / (gap * gap) * (horizon as f64 * gap * gap / 4.0).ln()).ceil() as usize;
        assert_eq!(m.m, expect);
        assert!(m_star(0.0, 10).is_err());
    }

    #[test]
    fn etc_zero_gap_zero_regret() {
        let instance = BanditInstance::bernoulli(vec![0.4, 0.4, 0.4]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let curve = run_etc(&instance, 10, 1000, &mut rng).unwrap();
        assert_eq!(curve.final_regret(), 0.0);
        assert_eq!(curve.len(), 1000);
    }

    #[test]
    fn etc_rejects_overlong_exploration() {
        let instance = BanditInstance::bernoulli(vec![0.2, 0.8]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(run_etc(&instance, 600, 1000, &mut rng).is_err());
    }

    #[test]
    fn etc_commits_to_clearly_best_arm() {
        let instance = BanditInstance::bernoulli(vec![0.1, 0.9]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let curve = run_etc(&instance, 50, 500, &mut rng).unwrap();
        assert_eq!(*curve.arm_choices().last().unwrap(), 1);
        // exploration charges 50 pulls of the bad arm
        assert_abs_diff_eq!(curve.final_regret(), 50.0 * 0.8, epsilon = 1e-12);
    }

    #[test]
    fn regret_curve_is_nondecreasing_and_bounded() {
        let instance = BanditInstance::bernoulli(vec![0.3, 0.7, 0.5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let curve = run_ucb(&instance, 2000, 1e-3, &mut rng).unwrap();
        let mut prev = 0.0;
        for &c in curve.cumulative() {
            assert!(c >= prev);
            prev = c;
        }
        assert!(curve.final_regret() <= 2000.0 * instance.max_gap());
    }

    #[test]
    fn se_schedule_known_values() {
        let schedule = se_schedule(10_000);
        assert_eq!(schedule.rounds, 5);
        assert_eq!(schedule.pulls_per_round[0], 63);
    }

    #[test]
    fn se_single_arm_never_eliminates() {
        let instance = BanditInstance::bernoulli(vec![0.5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let run = successive_elimination(&instance, 10_000, EliminationMeans::PerRound, &mut rng);
        assert_eq!(run.curve.final_regret(), 0.0);
        assert!(run.active_history.iter().all(|a| a == &vec![0]));
    }

    #[test]
    fn se_eliminates_weak_arm_quickly() {
        let instance = BanditInstance::bernoulli(vec![0.3, 0.9]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut eliminated_by_round_two = 0;
        for _ in 0..50 {
            let run =
                successive_elimination(&instance, 10_000, EliminationMeans::PerRound, &mut rng);
            if run.active_history.len() >= 2 && run.active_history[1] == vec![1] {
                eliminated_by_round_two += 1;
            }
        }
        assert!(eliminated_by_round_two >= 48, "only {eliminated_by_round_two}/50");
    }

    #[test]
    fn se_short_horizon_falls_back_to_uniform() {
        let instance = BanditInstance::bernoulli(vec![0.3, 0.9]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let run = successive_elimination(&instance, 5, EliminationMeans::PerRound, &mut rng);
        assert!(run.fallback_uniform);
        assert_eq!(run.curve.len(), 5);
    }

    #[test]
    fn se_never_empties_active_set() {
        let instance = BanditInstance::bernoulli(vec![0.5, 0.5, 0.5]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..20 {
            let run =
                successive_elimination(&instance, 10_000, EliminationMeans::PerRound, &mut rng);
            assert!(run.active_history.iter().all(|a| !a.is_empty()));
        }
    }

    #[test]
    fn ucb_bound_known_value() {
        let b = ucb_bound(0.5, 100, 0.01);
        assert_abs_diff_eq!(b, 0.5 + (2.0 * 100f64.ln() / 100.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(b, 0.8035, epsilon = 5e-4);
        assert!(ucb_bound(0.5, 0, 0.01).is_infinite());
    }

    #[test]
    fn ucb_pulls_every_arm_once_first() {
        let instance = BanditInstance::bernoulli(vec![0.2, 0.4, 0.9]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let curve = run_ucb(&instance, 100, 0.01, &mut rng).unwrap();
        assert_eq!(&curve.arm_choices()[..3], &[0, 1, 2]);
    }

    #[test]
    fn contextual_etc_zero_noise_recovers_exactly() {
        let env = LinearContextualEnv::new(
            vec![
                DVector::from_column_slice(&[1.0, 0.0, 0.5]),
                DVector::from_column_slice(&[0.0, 1.0, -0.5]),
            ],
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let run = contextual_etc(&env, 30, 500, &mut rng).unwrap();
        // after the commit the fit is exact, so no more regret accrues
        let at_commit = run.curve.cumulative()[29];
        assert_eq!(run.curve.final_regret(), at_commit);
    }

    #[test]
    fn contextual_identical_actions_have_zero_regret() {
        let theta = DVector::from_column_slice(&[0.3, -0.2]);
        let env = LinearContextualEnv::new(vec![theta.clone(), theta], 0.1).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let run = contextual_etc(&env, 10, 200, &mut rng).unwrap();
        assert_eq!(run.curve.final_regret(), 0.0);
    }

    #[test]
    fn contextual_greedy_zero_noise_stops_regretting() {
        let env = LinearContextualEnv::new(
            vec![
                DVector::from_column_slice(&[1.0, 0.2]),
                DVector::from_column_slice(&[-0.3, 0.8]),
            ],
            0.0,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let run = contextual_greedy(&env, 400, &mut rng).unwrap();
        let half = run.curve.cumulative()[200];
        assert_eq!(run.curve.final_regret(), half);
    }

    #[test]
    fn contextual_reduction_inequality_holds_pathwise() {
        let env = LinearContextualEnv::new(
            vec![
                DVector::from_column_slice(&[0.5, 0.1, -0.4]),
                DVector::from_column_slice(&[-0.2, 0.6, 0.3]),
            ],
            0.2,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for run in [
            contextual_greedy(&env, 300, &mut rng).unwrap(),
            contextual_etc(&env, 40, 300, &mut rng).unwrap(),
        ] {
            let mut bound_sum = 0.0;
            for t in 0..run.curve.len() {
                bound_sum += run.prediction_error_bound[t];
                assert!(run.curve.instantaneous(t) <= run.prediction_error_bound[t] + 1e-9);
                assert!(run.curve.cumulative()[t] <= bound_sum + 1e-9);
            }
        }
    }

    #[test]
    fn truncated_gaussian_rewards_stay_bounded() {
        let instance = BanditInstance::new(
            vec![0.1, 0.9],
            ArmDistribution::TruncatedGaussian { sigma: 0.5 },
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..2000 {
            for arm in 0..2 {
                let r = instance.pull(arm, &mut rng);
                assert!((0.0..=1.0).contains(&r));
            }
        }
    }

    #[test]
    fn noise_sampler_self_test_is_centered() {
        let env = LinearContextualEnv::new(vec![DVector::from_column_slice(&[1.0])], 0.3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let (mean, se) = env.noise_self_test(100_000, &mut rng);
        assert!(mean.abs() <= 3.0 * se, "noise mean {mean} exceeds 3 x {se}");
    }
}
