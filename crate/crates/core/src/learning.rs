//! Learning when the transition model is unknown: empirical model
//! estimation, the model-error bound it inherits, and the stochastic
//! approximation updates (Q-learning, SARSA(lambda)).

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::mdp::{greedy_policy, policy_evaluation, value_iteration, QTable, TabularMdp};
use crate::Result;

/// An environment that can be probed one transition at a time.
pub trait TransitionSampler {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Draws `(next_state, reward)` from `(state, action)`.
    fn sample(&self, state: usize, action: usize, rng: &mut dyn rand::RngCore) -> (usize, f64);
}

/// Samples transitions from a known tabular model; the canonical simulated
/// environment for the learning algorithms.
#[derive(Debug, Clone)]
pub struct MdpSampler<'a> {
    mdp: &'a TabularMdp,
}

impl<'a> MdpSampler<'a> {
    pub fn new(mdp: &'a TabularMdp) -> Self {
        Self { mdp }
    }

    pub fn mdp(&self) -> &TabularMdp {
        self.mdp
    }
}

impl TransitionSampler for MdpSampler<'_> {
    fn num_states(&self) -> usize {
        self.mdp.num_states()
    }

    fn num_actions(&self) -> usize {
        self.mdp.num_actions()
    }

    fn sample(&self, state: usize, action: usize, rng: &mut dyn rand::RngCore) -> (usize, f64) {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut next = self.mdp.num_states() - 1;
        for s2 in 0..self.mdp.num_states() {
            acc += self.mdp.prob(state, action, s2);
            if u < acc {
                next = s2;
                break;
            }
        }
        (next, self.mdp.reward()[[state, action]])
    }
}

/// How `estimate_mdp` fills the reward table.
pub enum RewardMode<'a> {
    /// Per-pair sample means of the observed rewards.
    SampleMean,
    /// Copy a known table and ignore observed rewards.
    Known(&'a Array2<f64>),
}

/// Certainty-equivalent model estimation: visits every `(s, a)` exactly
/// `n_per_pair` times and uses empirical next-state frequencies.
pub fn estimate_mdp<S: TransitionSampler>(
    sampler: &S,
    n_per_pair: usize,
    gamma: f64,
    reward_mode: RewardMode<'_>,
    rng: &mut impl Rng,
) -> Result<TabularMdp> {
    if n_per_pair == 0 {
        return Err(CoreError::InvalidArgument(
            "n_per_pair must be at least 1".into(),
        ));
    }
    let (s_n, a_n) = (sampler.num_states(), sampler.num_actions());
    let mut transition = Array3::zeros((s_n, a_n, s_n));
    let mut reward_sum: Array2<f64> = Array2::zeros((s_n, a_n));
    for s in 0..s_n {
        for a in 0..a_n {
            for _ in 0..n_per_pair {
                let (next, r) = sampler.sample(s, a, rng);
                if next >= s_n {
                    return Err(CoreError::InvalidArgument(format!(
                        "sampler returned out-of-range state {next}"
                    )));
                }
                transition[[s, a, next]] += 1.0;
                reward_sum[[s, a]] += r;
            }
        }
    }
    transition.mapv_inplace(|c| c / n_per_pair as f64);
    let reward = match reward_mode {
        RewardMode::SampleMean => reward_sum.mapv(|r| r / n_per_pair as f64),
        RewardMode::Known(table) => table.clone(),
    };
    let lo = reward.iter().cloned().fold(0.0_f64, f64::min);
    let hi = reward.iter().cloned().fold(1.0_f64, f64::max);
    TabularMdp::with_reward_range(transition, reward, gamma, (lo, hi))
}

/// Both sides of the model-error inequality: the suboptimality of acting
/// greedily on the surrogate model, and the bound
/// `2 gamma / (1 - gamma)^2 * sup |E_hat[V*] - E[V*]|` that controls it.
/// Both sides are computed by exact dynamic programming; the inequality
/// presumes the two models share a reward table.
pub fn model_error_bound(true_mdp: &TabularMdp, hat_mdp: &TabularMdp) -> Result<(f64, f64)> {
    if true_mdp.num_states() != hat_mdp.num_states()
        || true_mdp.num_actions() != hat_mdp.num_actions()
    {
        return Err(CoreError::DimensionMismatch(
            "models must share state and action counts".into(),
        ));
    }
    if true_mdp.discount() != hat_mdp.discount() {
        return Err(CoreError::InvalidArgument(
            "models must share the discount factor".into(),
        ));
    }
    let gamma = true_mdp.discount();
    let tol = 1e-11;
    let max_iter = TabularMdp::default_max_iter(gamma, tol);
    let (q_star, _) = value_iteration(true_mdp, tol, max_iter)?;
    let v_star = q_star.value_vector();
    let (q_hat, _) = value_iteration(hat_mdp, tol, max_iter)?;
    let policy = greedy_policy(&q_hat);
    let q_pi = policy_evaluation(true_mdp, &policy, tol)?;

    let lhs = (0..true_mdp.num_states())
        .map(|s| v_star.get(s) - q_pi.get(s, policy.action(s)))
        .fold(0.0_f64, f64::max);

    let mut sup = 0.0_f64;
    for s in 0..true_mdp.num_states() {
        for a in 0..true_mdp.num_actions() {
            let mut diff = 0.0;
            for s2 in 0..true_mdp.num_states() {
                diff += (hat_mdp.prob(s, a, s2) - true_mdp.prob(s, a, s2)) * v_star.get(s2);
            }
            sup = sup.max(diff.abs());
        }
    }
    let rhs = 2.0 * gamma / ((1.0 - gamma) * (1.0 - gamma)) * sup;
    Ok((lhs, rhs))
}

/// Step-size schedules for the stochastic approximation updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// eta_k = 1 / k over the global step counter.
    InverseK,
    /// eta = 1 / visit_count(s, a), the tabular Robbins-Monro analogue.
    InverseVisit,
}

impl StepSchedule {
    pub fn name(&self) -> String {
        match self {
            StepSchedule::Constant { eta } => format!("constant({eta})"),
            StepSchedule::InverseK => "1/k".into(),
            StepSchedule::InverseVisit => "1/visits".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let StepSchedule::Constant { eta } = self {
            if !(*eta > 0.0 && *eta <= 1.0) {
                return Err(CoreError::InvalidArgument(format!(
                    "constant step size must lie in (0, 1], got {eta}"
                )));
            }
        }
        Ok(())
    }
}

/// Behavior policy for the trajectory-based learners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonGreedy {
    pub epsilon: f64,
}

impl EpsilonGreedy {
    fn pick(&self, q_row: &[f64], rng: &mut impl Rng) -> usize {
        if q_row.len() > 1 && rng.gen::<f64>() < self.epsilon {
            return rng.gen_range(0..q_row.len());
        }
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (a, &v) in q_row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = a;
            }
        }
        best
    }
}

/// Outcome of a Q-learning run: the learned table and how often each pair
/// was visited.
#[derive(Debug, Clone)]
pub struct QLearningRun {
    pub q: QTable,
    pub visits: Array2<u64>,
}

/// Value iteration by stochastic approximation along a single trajectory:
///
/// ```text
/// Q(s,a) <- (1 - eta) Q(s,a) + eta (r + gamma max_a' Q(s',a'))
/// ```
pub fn q_learning<S: TransitionSampler>(
    sampler: &S,
    gamma: f64,
    steps: usize,
    schedule: &StepSchedule,
    exploration: EpsilonGreedy,
    start_state: usize,
    rng: &mut impl Rng,
) -> Result<QLearningRun> {
    schedule.validate()?;
    let (s_n, a_n) = (sampler.num_states(), sampler.num_actions());
    if start_state >= s_n {
        return Err(CoreError::InvalidArgument(format!(
            "start state {start_state} out of range"
        )));
    }
    let mut q = Array2::zeros((s_n, a_n));
    let mut visits: Array2<u64> = Array2::zeros((s_n, a_n));
    let mut state = start_state;
    for k in 1..=steps {
        let row: Vec<f64> = q.row(state).to_vec();
        let action = exploration.pick(&row, rng);
        let (next, reward) = sampler.sample(state, action, rng);
        visits[[state, action]] += 1;
        let eta = match schedule {
            StepSchedule::Constant { eta } => *eta,
            StepSchedule::InverseK => 1.0 / k as f64,
            StepSchedule::InverseVisit => 1.0 / visits[[state, action]] as f64,
        };
        let max_next = q
            .row(next)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let target = reward + gamma * max_next;
        q[[state, action]] = (1.0 - eta) * q[[state, action]] + eta * target;
        state = next;
    }
    Ok(QLearningRun {
        q: QTable::new(q)?,
        visits,
    })
}

/// Maps a state-action pair to a feature vector.
pub trait Featurizer {
    fn dim(&self) -> usize;
    fn features(&self, state: usize, action: usize) -> Array1<f64>;
}

/// Indicator features: one coordinate per (state, action) pair, recovering
/// the tabular updates exactly.
#[derive(Debug, Clone)]
pub struct OneHotFeatures {
    pub num_states: usize,
    pub num_actions: usize,
}

impl Featurizer for OneHotFeatures {
    fn dim(&self) -> usize {
        self.num_states * self.num_actions
    }

    fn features(&self, state: usize, action: usize) -> Array1<f64> {
        let mut f = Array1::zeros(self.dim());
        f[state * self.num_actions + action] = 1.0;
        f
    }
}

/// Linear value approximation Q(s,a) = theta . phi(s,a).
#[derive(Debug, Clone)]
pub struct LinearQApprox<F: Featurizer> {
    pub weights: Array1<f64>,
    pub featurizer: F,
}

impl<F: Featurizer> LinearQApprox<F> {
    pub fn new(weights: Array1<f64>, featurizer: F) -> Result<Self> {
        if weights.len() != featurizer.dim() {
            return Err(CoreError::DimensionMismatch(format!(
                "{} weights for {}-dimensional features",
                weights.len(),
                featurizer.dim()
            )));
        }
        Ok(Self {
            weights,
            featurizer,
        })
    }

    pub fn zeros(featurizer: F) -> Self {
        Self {
            weights: Array1::zeros(featurizer.dim()),
            featurizer,
        }
    }

    pub fn q(&self, state: usize, action: usize) -> f64 {
        self.featurizer.features(state, action).dot(&self.weights)
    }
}

/// Guard on the weight norm; exceeding it stops the run with a divergence
/// error instead of overflowing silently.
pub const DIVERGENCE_GUARD: f64 = 1e8;

/// Outcome of a SARSA(lambda) run.
#[derive(Debug)]
pub struct SarsaRun<F: Featurizer> {
    pub approx: LinearQApprox<F>,
    /// Eligibility trace after the final step.
    pub final_trace: Array1<f64>,
}

/// On-policy temporal differences with eligibility traces:
///
/// ```text
/// delta = r + gamma Q(s',a') - Q(s,a)
/// e <- lambda e + grad Q(s,a)        (grad Q = phi(s,a) here)
/// theta <- theta + eta delta e
/// ```
///
/// With one-hot features and lambda = 0 this is tabular on-policy TD on Q.
#[allow(clippy::too_many_arguments)]
pub fn sarsa_lambda<S: TransitionSampler, F: Featurizer>(
    sampler: &S,
    mut approx: LinearQApprox<F>,
    gamma: f64,
    lambda: f64,
    eta: f64,
    steps: usize,
    exploration: EpsilonGreedy,
    start_state: usize,
    rng: &mut impl Rng,
) -> Result<SarsaRun<F>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::InvalidArgument(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let a_n = sampler.num_actions();
    let mut trace: Array1<f64> = Array1::zeros(approx.weights.len());
    let mut state = start_state;
    let mut action = {
        let row: Vec<f64> = (0..a_n).map(|a| approx.q(state, a)).collect();
        exploration.pick(&row, rng)
    };
    for _ in 0..steps {
        let (next_state, reward) = sampler.sample(state, action, rng);
        let next_action = {
            let row: Vec<f64> = (0..a_n).map(|a| approx.q(next_state, a)).collect();
            exploration.pick(&row, rng)
        };
        let delta = reward + gamma * approx.q(next_state, next_action) - approx.q(state, action);
        trace = trace * lambda + approx.featurizer.features(state, action);
        approx.weights = &approx.weights + &(trace.clone() * (eta * delta));
        let norm = approx.weights.dot(&approx.weights).sqrt();
        if norm > DIVERGENCE_GUARD {
            return Err(CoreError::Diverged {
                norm,
                guard: DIVERGENCE_GUARD,
            });
        }
        state = next_state;
        action = next_action;
    }
    Ok(SarsaRun {
        approx,
        final_trace: trace,
    })
}

/// Serialized form of a learning run, one JSON document per run.
#[derive(Debug, Serialize, Deserialize)]
pub struct LearningReport {
    pub seed: u64,
    pub steps: usize,
    pub schedule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visits: Option<Vec<Vec<u64>>>,
}

impl LearningReport {
    pub fn from_q_learning(
        seed: u64,
        steps: usize,
        schedule: &StepSchedule,
        run: &QLearningRun,
    ) -> Self {
        Self {
            seed,
            steps,
            schedule: schedule.name(),
            q: Some(
                run.q
                    .values()
                    .rows()
                    .into_iter()
                    .map(|r| r.to_vec())
                    .collect(),
            ),
            weights: None,
            visits: Some(run.visits.rows().into_iter().map(|r| r.to_vec()).collect()),
        }
    }

    pub fn from_sarsa<F: Featurizer>(seed: u64, steps: usize, eta: f64, run: &SarsaRun<F>) -> Self {
        Self {
            seed,
            steps,
            schedule: format!("constant({eta})"),
            q: None,
            weights: Some(run.approx.weights.to_vec()),
            visits: None,
        }
    }
}

/// Random dense MDP with Dirichlet(1) transition rows and uniform rewards;
/// used by the randomized verification suites.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    rng: &mut impl Rng,
) -> TabularMdp {
    let mut transition = Array3::zeros((num_states, num_actions, num_states));
    for s in 0..num_states {
        for a in 0..num_actions {
            // exponential spacings normalize to a Dirichlet(1) draw
            let mut row: Vec<f64> = (0..num_states)
                .map(|_| -rng.gen::<f64>().max(1e-300).ln())
                .collect();
            let total: f64 = row.iter().sum();
            for p in &mut row {
                *p /= total;
            }
            let sum: f64 = row.iter().sum();
            for (s2, p) in row.iter().enumerate() {
                transition[[s, a, s2]] = p / sum;
            }
        }
    }
    let reward = Array2::from_shape_fn((num_states, num_actions), |_| rng.gen::<f64>());
    TabularMdp::new(transition, reward, gamma).expect("random rows are valid distributions")
}

/// Mixes every transition row with an independent random distribution,
/// keeping total variation within `max_tv`. Rewards are shared with the
/// input model.
pub fn perturb_transitions(
    mdp: &TabularMdp,
    max_tv: f64,
    rng: &mut impl Rng,
) -> Result<TabularMdp> {
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let mut transition = Array3::zeros((s_n, a_n, s_n));
    for s in 0..s_n {
        for a in 0..a_n {
            let mut noise: Vec<f64> = (0..s_n)
                .map(|_| -rng.gen::<f64>().max(1e-300).ln())
                .collect();
            let total: f64 = noise.iter().sum();
            for p in &mut noise {
                *p /= total;
            }
            let alpha = max_tv * rng.gen::<f64>();
            let mut row: Vec<f64> = (0..s_n)
                .map(|s2| (1.0 - alpha) * mdp.prob(s, a, s2) + alpha * noise[s2])
                .collect();
            let sum: f64 = row.iter().sum();
            for p in &mut row {
                *p /= sum;
            }
            for (s2, &p) in row.iter().enumerate() {
                transition[[s, a, s2]] = p;
            }
        }
    }
    mdp.with_transition(transition)
}

/// Runs Q-learning on a simulated model and checks whether the greedy
/// policy of the learned table matches exact dynamic programming.
pub fn q_learning_policy_matches_dp(
    mdp: &TabularMdp,
    steps: usize,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<bool> {
    let sampler = MdpSampler::new(mdp);
    let run = q_learning(
        &sampler,
        mdp.discount(),
        steps,
        &StepSchedule::InverseVisit,
        EpsilonGreedy { epsilon },
        0,
        rng,
    )?;
    let learned = greedy_policy(&run.q);
    let (q_star, _) = value_iteration(mdp, 1e-10, 10_000)?;
    let exact = greedy_policy(&q_star);
    Ok(learned == exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::two_state_instance;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn one_state_mdp(r: f64, gamma: f64) -> TabularMdp {
        let mut transition = Array3::zeros((1, 1, 1));
        transition[[0, 0, 0]] = 1.0;
        TabularMdp::new(transition, Array2::from_elem((1, 1), r), gamma).unwrap()
    }

    #[test]
    fn estimate_recovers_deterministic_model_exactly() {
        let mdp = two_state_instance(0.5);
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let hat = estimate_mdp(&sampler, 1, 0.5, RewardMode::SampleMean, &mut rng).unwrap();
        assert_eq!(hat.transition(), mdp.transition());
        assert_eq!(hat.reward(), mdp.reward());
    }

    #[test]
    fn estimate_frequencies_concentrate() {
        // Bernoulli(0.5) two-outcome transitions; Hoeffding at delta = 1e-4
        // allows a 0.022 deviation for 10^4 draws.
        let mut transition = Array3::zeros((2, 1, 2));
        for s in 0..2 {
            transition[[s, 0, 0]] = 0.5;
            transition[[s, 0, 1]] = 0.5;
        }
        let mdp = TabularMdp::new(transition, Array2::zeros((2, 1)), 0.9).unwrap();
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let hat = estimate_mdp(&sampler, 10_000, 0.9, RewardMode::SampleMean, &mut rng).unwrap();
        for s in 0..2 {
            for s2 in 0..2 {
                assert_abs_diff_eq!(hat.prob(s, 0, s2), 0.5, epsilon = 0.02);
            }
        }
    }

    #[test]
    fn estimate_rejects_zero_samples() {
        let mdp = two_state_instance(0.5);
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(estimate_mdp(&sampler, 0, 0.5, RewardMode::SampleMean, &mut rng).is_err());
    }

    #[test]
    fn model_error_zero_for_identical_models() {
        let mdp = two_state_instance(0.5);
        let (lhs, rhs) = model_error_bound(&mdp, &mdp).unwrap();
        assert_abs_diff_eq!(lhs, 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rhs, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn model_error_single_state_has_zero_gap() {
        let truth = one_state_mdp(1.0, 0.9);
        let hat = one_state_mdp(1.0, 0.9);
        let (lhs, _) = model_error_bound(&truth, &hat).unwrap();
        assert_abs_diff_eq!(lhs, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn model_error_holds_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..25 {
            let truth = random_mdp(6, 3, 0.9, &mut rng);
            let hat = perturb_transitions(&truth, 0.1, &mut rng).unwrap();
            let (lhs, rhs) = model_error_bound(&truth, &hat).unwrap();
            assert!(lhs <= rhs + 1e-9, "lhs {lhs} > rhs {rhs}");
        }
    }

    #[test]
    fn q_learning_scalar_fixed_point() {
        let mdp = one_state_mdp(1.0, 0.5);
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let run = q_learning(
            &sampler,
            0.5,
            100_000,
            &StepSchedule::InverseK,
            EpsilonGreedy { epsilon: 0.0 },
            0,
            &mut rng,
        )
        .unwrap();
        assert_abs_diff_eq!(run.q.get(0, 0), 2.0, epsilon = 0.05);
        assert_eq!(run.visits[[0, 0]], 100_000);
    }

    #[test]
    fn q_learning_zero_rewards_stay_zero() {
        let mdp = two_state_instance(0.5);
        let zero = TabularMdp::new(mdp.transition().clone(), Array2::zeros((2, 2)), 0.5).unwrap();
        let sampler = MdpSampler::new(&zero);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let run = q_learning(
            &sampler,
            0.5,
            10_000,
            &StepSchedule::Constant { eta: 0.1 },
            EpsilonGreedy { epsilon: 0.5 },
            0,
            &mut rng,
        )
        .unwrap();
        assert!(run.q.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn q_learning_recovers_two_state_policy() {
        let mdp = two_state_instance(0.5);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        assert!(q_learning_policy_matches_dp(&mdp, 1_000_000, 0.2, &mut rng).unwrap());
    }

    #[test]
    fn q_learning_is_bit_reproducible() {
        let mdp = two_state_instance(0.5);
        let sampler = MdpSampler::new(&mdp);
        let run = |seed: u64| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            q_learning(
                &sampler,
                0.5,
                5000,
                &StepSchedule::InverseVisit,
                EpsilonGreedy { epsilon: 0.3 },
                0,
                &mut rng,
            )
            .unwrap()
        };
        let a = run(42);
        let b = run(42);
        assert_eq!(a.q.values(), b.q.values());
        assert_eq!(a.visits, b.visits);
    }

    #[test]
    fn sarsa_scalar_fixed_point() {
        let mdp = one_state_mdp(1.0, 0.5);
        let sampler = MdpSampler::new(&mdp);
        let approx = LinearQApprox::zeros(OneHotFeatures {
            num_states: 1,
            num_actions: 1,
        });
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let run = sarsa_lambda(
            &sampler,
            approx,
            0.5,
            0.0,
            0.01,
            5000,
            EpsilonGreedy { epsilon: 0.0 },
            0,
            &mut rng,
        )
        .unwrap();
        assert_abs_diff_eq!(run.approx.weights[0], 2.0, epsilon = 0.05);
    }

    #[test]
    fn sarsa_zero_features_leave_weights_unchanged() {
        struct ZeroFeatures;
        impl Featurizer for ZeroFeatures {
            fn dim(&self) -> usize {
                3
            }
            fn features(&self, _: usize, _: usize) -> Array1<f64> {
                Array1::zeros(3)
            }
        }
        let mdp = two_state_instance(0.5);
        let sampler = MdpSampler::new(&mdp);
        let approx = LinearQApprox::new(array![1.0, -2.0, 0.5], ZeroFeatures).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let run = sarsa_lambda(
            &sampler,
            approx,
            0.5,
            0.7,
            0.1,
            1000,
            EpsilonGreedy { epsilon: 0.5 },
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(run.approx.weights, array![1.0, -2.0, 0.5]);
    }

    #[test]
    fn sarsa_unit_lambda_accumulates_features() {
        // deterministic 4-state chain, one action; after 3 steps with
        // lambda = 1 the trace is the sum of the three visited features
        let mut transition = Array3::zeros((4, 1, 4));
        for s in 0..4 {
            transition[[s, 0, (s + 1).min(3)]] = 1.0;
        }
        let mdp = TabularMdp::new(transition, Array2::zeros((4, 1)), 0.5).unwrap();
        let sampler = MdpSampler::new(&mdp);
        let features = OneHotFeatures {
            num_states: 4,
            num_actions: 1,
        };
        let expected = features.features(0, 0) + features.features(1, 0) + features.features(2, 0);
        let approx = LinearQApprox::zeros(features);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let run = sarsa_lambda(
            &sampler,
            approx,
            0.5,
            1.0,
            0.1,
            3,
            EpsilonGreedy { epsilon: 0.0 },
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(run.final_trace, expected);
    }

    #[test]
    fn sarsa_divergence_guard_reports() {
        // large features make the effective step size unstable: the error
        // multiplies by |1 - eta * phi^2 * (1 - gamma)| = 4 every step
        #[derive(Debug)]
        struct BigFeatures;
        impl Featurizer for BigFeatures {
            fn dim(&self) -> usize {
                1
            }
            fn features(&self, _: usize, _: usize) -> Array1<f64> {
                array![100.0]
            }
        }
        let mdp = one_state_mdp(1.0, 0.5);
        let sampler = MdpSampler::new(&mdp);
        let approx = LinearQApprox::zeros(BigFeatures);
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let err = sarsa_lambda(
            &sampler,
            approx,
            0.0,
            0.0,
            0.0005,
            1_000_000,
            EpsilonGreedy { epsilon: 0.0 },
            0,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::Diverged { .. }));
    }

    #[test]
    fn learning_report_serializes() {
        let mdp = two_state_instance(0.5);
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let run = q_learning(
            &sampler,
            0.5,
            100,
            &StepSchedule::InverseK,
            EpsilonGreedy { epsilon: 0.1 },
            0,
            &mut rng,
        )
        .unwrap();
        let report = LearningReport::from_q_learning(1, 100, &StepSchedule::InverseK, &run);
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["seed"], 1);
        assert_eq!(json["schedule"], "1/k");
        assert!(json["q"].is_array());
    }
}
