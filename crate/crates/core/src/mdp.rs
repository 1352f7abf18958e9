//! Exact dynamic programming on finite Markov decision processes.
//!
//! The discounted Q-function is the fixed point of the Bellman operator
//!
//! ```text
//! (TQ)(s,a) = R(s,a) + gamma * sum_{s'} P(s'|s,a) * max_{a'} Q(s',a')
//! ```
//!
//! and value iteration converges to it geometrically at rate `gamma`.
//! Everything in this module is a pure function over immutable tables, so
//! values can be shared read-only across threads.

use ndarray::{Array1, Array2, Array3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::CoreError;
use crate::Result;

/// Tolerance used when validating that transition rows sum to one.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// A finite MDP: transition tensor indexed `(s, a, s')`, reward table
/// indexed `(s, a)`, and a discount factor in the open interval (0, 1).
///
/// Rewards are deterministic expected immediate rewards R(s, a); a
/// disturbance-dependent reward R(s, a, w) is supported only through its
/// expectation, which is all the discounted recursions consume.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Array3<f64>,
    reward: Array2<f64>,
    discount: f64,
    reward_range: (f64, f64),
}

impl TabularMdp {
    /// Builds an MDP with the default reward range `[0, 1]`.
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        discount: f64,
    ) -> Result<Self> {
        Self::with_reward_range(transition, reward, discount, (0.0, 1.0))
    }

    /// Builds an MDP whose rewards are declared to lie in `reward_range`.
    pub fn with_reward_range(
        transition: Array3<f64>,
        reward: Array2<f64>,
        discount: f64,
        reward_range: (f64, f64),
    ) -> Result<Self> {
        let (s, a, s2) = transition.dim();
        if s == 0 || a == 0 {
            return Err(CoreError::InvalidArgument(
                "MDP needs at least one state and one action".into(),
            ));
        }
        if s2 != s {
            return Err(CoreError::DimensionMismatch(format!(
                "transition tensor is {s}x{a}x{s2}, expected {s}x{a}x{s}"
            )));
        }
        if reward.dim() != (s, a) {
            return Err(CoreError::DimensionMismatch(format!(
                "reward table is {:?}, expected ({s}, {a})",
                reward.dim()
            )));
        }
        if !(0.0 < discount && discount < 1.0) {
            return Err(CoreError::InvalidArgument(format!(
                "discount must lie in (0, 1), got {discount}"
            )));
        }
        for state in 0..s {
            for action in 0..a {
                let row = transition.slice(ndarray::s![state, action, ..]);
                let mut sum = 0.0;
                for &p in row.iter() {
                    if p < 0.0 || p.is_nan() {
                        return Err(CoreError::InvalidDistribution(format!(
                            "negative probability at ({state}, {action})"
                        )));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(CoreError::InvalidDistribution(format!(
                        "transition row ({state}, {action}) sums to {sum}"
                    )));
                }
            }
        }
        let (lo, hi) = reward_range;
        for &r in reward.iter() {
            if !r.is_finite() || r < lo - 1e-12 || r > hi + 1e-12 {
                return Err(CoreError::InvalidArgument(format!(
                    "reward {r} outside declared range [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self {
            num_states: s,
            num_actions: a,
            transition,
            reward,
            discount,
            reward_range,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn reward_range(&self) -> (f64, f64) {
        self.reward_range
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }

    /// Probability of moving to `next` from `(state, action)`.
    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transition[[state, action, next]]
    }

    /// Returns a copy with a different transition tensor, keeping rewards
    /// and discount. Used to build perturbed models.
    pub fn with_transition(&self, transition: Array3<f64>) -> Result<Self> {
        Self::with_reward_range(
            transition,
            self.reward.clone(),
            self.discount,
            self.reward_range,
        )
    }

    /// Default iteration cap for the discount `gamma` and tolerance `tol`:
    /// the geometric rate guarantees convergence well within this budget.
    pub fn default_max_iter(gamma: f64, tol: f64) -> usize {
        ((1.0 / tol).ln() / (1.0 / gamma).ln()).ceil() as usize + 100
    }
}

#[derive(Serialize, Deserialize)]
struct MdpJson {
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "A")]
    a: usize,
    gamma: f64,
    #[serde(rename = "P")]
    p: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
}

impl Serialize for TabularMdp {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let p = (0..self.num_states)
            .map(|s| {
                (0..self.num_actions)
                    .map(|a| self.transition.slice(ndarray::s![s, a, ..]).to_vec())
                    .collect()
            })
            .collect();
        let r = (0..self.num_states)
            .map(|s| self.reward.row(s).to_vec())
            .collect();
        MdpJson {
            s: self.num_states,
            a: self.num_actions,
            gamma: self.discount,
            p,
            r,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TabularMdp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = MdpJson::deserialize(deserializer)?;
        let (s, a) = (raw.s, raw.a);
        let mut transition = Array3::zeros((s, a, s));
        let mut reward = Array2::zeros((s, a));
        if raw.p.len() != s || raw.r.len() != s {
            return Err(D::Error::custom("P and R must have S outer rows"));
        }
        for (si, rows) in raw.p.iter().enumerate() {
            if rows.len() != a {
                return Err(D::Error::custom(format!("P[{si}] must have A rows")));
            }
            for (ai, row) in rows.iter().enumerate() {
                if row.len() != s {
                    return Err(D::Error::custom(format!("P[{si}][{ai}] must have S entries")));
                }
                for (sj, &p) in row.iter().enumerate() {
                    transition[[si, ai, sj]] = p;
                }
            }
        }
        for (si, row) in raw.r.iter().enumerate() {
            if row.len() != a {
                return Err(D::Error::custom(format!("R[{si}] must have A entries")));
            }
            for (ai, &r) in row.iter().enumerate() {
                reward[[si, ai]] = r;
            }
        }
        // The wire format carries no declared range; accept whatever the
        // table contains, widened to the default [0, 1].
        let lo = reward.iter().cloned().fold(0.0_f64, f64::min);
        let hi = reward.iter().cloned().fold(1.0_f64, f64::max);
        TabularMdp::with_reward_range(transition, reward, raw.gamma, (lo, hi))
            .map_err(D::Error::custom)
    }
}

/// State-action value table tied to the dimensions of some MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Array2<f64>,
}

impl QTable {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidArgument(
                "Q-table entries must be finite".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self {
            values: Array2::zeros((num_states, num_actions)),
        }
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.values[[state, action]]
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    /// Row maximum per state: V(s) = max_a Q(s,a).
    pub fn value_vector(&self) -> ValueVector {
        let v = self
            .values
            .rows()
            .into_iter()
            .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        ValueVector { values: v }
    }

    pub fn matches(&self, mdp: &TabularMdp) -> bool {
        self.values.dim() == (mdp.num_states(), mdp.num_actions())
    }

    /// Largest absolute entrywise difference.
    pub fn linf_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// State value vector V(s).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueVector {
    values: Array1<f64>,
}

impl ValueVector {
    pub fn values(&self) -> &Array1<f64> {
        &self.values
    }

    pub fn get(&self, state: usize) -> f64 {
        self.values[state]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Deterministic decision rule: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TabularPolicy {
    action_of: Vec<usize>,
}

impl TabularPolicy {
    pub fn new(action_of: Vec<usize>, num_actions: usize) -> Result<Self> {
        if let Some(&bad) = action_of.iter().find(|&&a| a >= num_actions) {
            return Err(CoreError::InvalidArgument(format!(
                "action index {bad} out of range (A = {num_actions})"
            )));
        }
        Ok(Self { action_of })
    }

    pub fn action(&self, state: usize) -> usize {
        self.action_of[state]
    }

    pub fn actions(&self) -> &[usize] {
        &self.action_of
    }

    pub fn num_states(&self) -> usize {
        self.action_of.len()
    }

    pub fn matches(&self, mdp: &TabularMdp) -> bool {
        self.action_of.len() == mdp.num_states()
            && self.action_of.iter().all(|&a| a < mdp.num_actions())
    }
}

fn check_dims(q: &QTable, mdp: &TabularMdp) -> Result<()> {
    if !q.matches(mdp) {
        return Err(CoreError::DimensionMismatch(format!(
            "Q-table is {:?} but MDP is ({}, {})",
            q.dim(),
            mdp.num_states(),
            mdp.num_actions()
        )));
    }
    Ok(())
}

/// One application of the Bellman optimality operator T.
pub fn bellman_operator(q: &QTable, mdp: &TabularMdp) -> Result<QTable> {
    check_dims(q, mdp)?;
    let v = q.value_vector();
    let mut out = Array2::zeros(q.dim());
    for s in 0..mdp.num_states() {
        for a in 0..mdp.num_actions() {
            let mut acc = mdp.reward()[[s, a]];
            let mut cont = 0.0;
            for s2 in 0..mdp.num_states() {
                let p = mdp.prob(s, a, s2);
                if p > 0.0 {
                    cont += p * v.get(s2);
                }
            }
            acc += mdp.discount() * cont;
            out[[s, a]] = acc;
        }
    }
    QTable::new(out)
}

/// Iterates the Bellman operator from Q = 0 until the sup-norm step falls
/// below `tol`. Returns the table and the number of iterations used.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iter: usize) -> Result<(QTable, usize)> {
    if tol <= 0.0 {
        return Err(CoreError::InvalidArgument("tol must be positive".into()));
    }
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut residual = f64::INFINITY;
    for k in 0..max_iter {
        let next = bellman_operator(&q, mdp)?;
        residual = q.linf_distance(&next);
        q = next;
        if residual <= tol {
            return Ok((q, k + 1));
        }
    }
    Err(CoreError::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Solves Q(s,a) = R(s,a) + gamma * E[Q(s', pi(s'))] by fixed-point
/// iteration for a fixed policy.
pub fn policy_evaluation(mdp: &TabularMdp, policy: &TabularPolicy, tol: f64) -> Result<QTable> {
    if tol <= 0.0 {
        return Err(CoreError::InvalidArgument("tol must be positive".into()));
    }
    if !policy.matches(mdp) {
        return Err(CoreError::DimensionMismatch(
            "policy does not match MDP dimensions".into(),
        ));
    }
    let max_iter = TabularMdp::default_max_iter(mdp.discount(), tol);
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = Array2::zeros(q.dim());
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let mut cont = 0.0;
                for s2 in 0..mdp.num_states() {
                    let p = mdp.prob(s, a, s2);
                    if p > 0.0 {
                        cont += p * q.get(s2, policy.action(s2));
                    }
                }
                next[[s, a]] = mdp.reward()[[s, a]] + mdp.discount() * cont;
            }
        }
        let next = QTable::new(next)?;
        residual = q.linf_distance(&next);
        q = next;
        if residual <= tol {
            return Ok(q);
        }
    }
    Err(CoreError::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Greedy decision rule with lowest-index tie-breaking.
pub fn greedy_policy(q: &QTable) -> TabularPolicy {
    let actions = q
        .values()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (a, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            best
        })
        .collect();
    TabularPolicy {
        action_of: actions,
    }
}

/// Alternates policy evaluation and greedy improvement until the policy is
/// stable. Returns the final policy together with its evaluation.
pub fn policy_iteration(mdp: &TabularMdp, tol: f64) -> Result<(TabularPolicy, QTable)> {
    if tol <= 0.0 {
        return Err(CoreError::InvalidArgument("tol must be positive".into()));
    }
    let mut policy = TabularPolicy::new(vec![0; mdp.num_states()], mdp.num_actions())?;
    // A deterministic policy either improves or repeats; A^S is a hard cap
    // and this guard is far above any practical instance.
    let guard = 10_000;
    let mut q = policy_evaluation(mdp, &policy, tol)?;
    for _ in 0..guard {
        let improved = greedy_policy(&q);
        if improved == policy {
            return Ok((policy, q));
        }
        policy = improved;
        q = policy_evaluation(mdp, &policy, tol)?;
    }
    Ok((policy, q))
}

/// Allowed terminal state-action pairs for constrained finite-horizon DP.
#[derive(Debug, Clone)]
pub struct TerminalSet {
    allowed: Array2<bool>,
}

impl TerminalSet {
    /// Only the single pair `(state, action)` is allowed at the horizon.
    pub fn pair(state: usize, action: usize, num_states: usize, num_actions: usize) -> Self {
        let mut allowed = Array2::from_elem((num_states, num_actions), false);
        allowed[[state, action]] = true;
        Self { allowed }
    }

    pub fn from_mask(allowed: Array2<bool>) -> Self {
        Self { allowed }
    }

    pub fn is_allowed(&self, state: usize, action: usize) -> bool {
        self.allowed[[state, action]]
    }
}

/// Reward tables used by the finite-horizon recursion.
pub enum RewardSchedule<'a> {
    /// Use the MDP's own reward table at every step.
    Stationary,
    /// One table per time step, length `horizon + 1`.
    TimeVarying(&'a [Array2<f64>]),
}

/// Infeasible entries in constrained tables carry this sentinel. It
/// propagates absorbingly through the backward recursion; zero-probability
/// successors are skipped so it never mixes into feasible values.
pub const INFEASIBLE: f64 = f64::NEG_INFINITY;

/// Backward dynamic programming over `horizon + 1` steps. Entry `t` of the
/// result is the Q-table for the problem starting at time `t`; the last
/// entry is the terminal table. With a terminal set, disallowed pairs carry
/// [`INFEASIBLE`], as does any earlier pair that cannot guarantee a feasible
/// continuation.
pub fn finite_horizon_dp(
    mdp: &TabularMdp,
    horizon: usize,
    rewards: RewardSchedule<'_>,
    terminal: Option<&TerminalSet>,
) -> Result<Vec<Array2<f64>>> {
    if horizon < 1 {
        return Err(CoreError::InvalidArgument("horizon must be >= 1".into()));
    }
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let reward_at = |t: usize| -> Result<&Array2<f64>> {
        match &rewards {
            RewardSchedule::Stationary => Ok(mdp.reward()),
            RewardSchedule::TimeVarying(tables) => {
                if tables.len() != horizon + 1 {
                    return Err(CoreError::DimensionMismatch(format!(
                        "need {} reward tables, got {}",
                        horizon + 1,
                        tables.len()
                    )));
                }
                let table = &tables[t];
                if table.dim() != (s_n, a_n) {
                    return Err(CoreError::DimensionMismatch(format!(
                        "reward table {t} has shape {:?}",
                        table.dim()
                    )));
                }
                Ok(table)
            }
        }
    };

    let mut tables = vec![Array2::zeros((s_n, a_n)); horizon + 1];
    let terminal_reward = reward_at(horizon)?;
    for s in 0..s_n {
        for a in 0..a_n {
            let ok = terminal.is_none_or(|t| t.is_allowed(s, a));
            tables[horizon][[s, a]] = if ok { terminal_reward[[s, a]] } else { INFEASIBLE };
        }
    }
    for t in (0..horizon).rev() {
        let step_reward = reward_at(t)?;
        let value: Vec<f64> = (0..s_n)
            .map(|s| {
                (0..a_n)
                    .map(|a| tables[t + 1][[s, a]])
                    .fold(INFEASIBLE, f64::max)
            })
            .collect();
        for s in 0..s_n {
            for a in 0..a_n {
                let mut feasible = true;
                let mut cont = 0.0;
                for s2 in 0..s_n {
                    let p = mdp.prob(s, a, s2);
                    if p > 0.0 {
                        if value[s2] == INFEASIBLE {
                            feasible = false;
                            break;
                        }
                        cont += p * value[s2];
                    }
                }
                tables[t][[s, a]] = if feasible {
                    step_reward[[s, a]] + cont
                } else {
                    INFEASIBLE
                };
            }
        }
        if tables[t].iter().all(|&v| v == INFEASIBLE) {
            return Err(CoreError::RecursiveInfeasibility { time: t });
        }
    }
    Ok(tables)
}

/// How the machine's condition decays when it is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayProfile {
    /// P(i | j) proportional to q^(j - i) for i <= j.
    Geometric { q: f64 },
    /// P(i | j) = 1 / j for i <= j (one-based states).
    Uniform,
    /// Explicit rows; row `j` gives P(. | state j), must be lower triangular.
    Custom { rows: Vec<Vec<f64>> },
}

impl Default for DecayProfile {
    fn default() -> Self {
        DecayProfile::Geometric { q: 0.9 }
    }
}

/// Number of repair states in the machine-repair instance.
pub const REPAIR_STATES: usize = 10;
/// Action index: keep using the machine.
pub const ACTION_USE: usize = 0;
/// Action index: repair, resetting the machine to the best state.
pub const ACTION_REPAIR: usize = 1;

/// The ten-state machine-repair MDP. State `9` is excellent condition and
/// state `0` cannot function. Using the machine earns `state / 9` and lets
/// the condition decay (never improve); repairing earns `repair_reward` and
/// resets the state to `9` with probability one.
pub fn machine_repair_instance(
    profile: &DecayProfile,
    gamma: f64,
    repair_reward: f64,
) -> Result<TabularMdp> {
    let s_n = REPAIR_STATES;
    let mut transition = Array3::zeros((s_n, 2, s_n));
    for j in 0..s_n {
        let row: Vec<f64> = match profile {
            DecayProfile::Geometric { q } => {
                if !(0.0 < *q && *q < 1.0) {
                    return Err(CoreError::InvalidArgument(format!(
                        "geometric decay needs q in (0, 1), got {q}"
                    )));
                }
                let weights: Vec<f64> = (0..=j).map(|i| q.powi((j - i) as i32)).collect();
                let total: f64 = weights.iter().sum();
                weights.iter().map(|w| w / total).collect()
            }
            DecayProfile::Uniform => vec![1.0 / (j + 1) as f64; j + 1],
            DecayProfile::Custom { rows } => {
                if rows.len() != s_n {
                    return Err(CoreError::InvalidDistribution(format!(
                        "need {s_n} decay rows, got {}",
                        rows.len()
                    )));
                }
                let row = &rows[j];
                if row.len() != s_n {
                    return Err(CoreError::InvalidDistribution(format!(
                        "decay row {j} has {} entries, expected {s_n}",
                        row.len()
                    )));
                }
                if row.iter().skip(j + 1).any(|&p| p != 0.0) {
                    return Err(CoreError::InvalidDistribution(format!(
                        "decay row {j} assigns mass to better states"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(CoreError::InvalidDistribution(format!(
                        "decay row {j} is not a distribution (sum {sum})"
                    )));
                }
                row[..=j].to_vec()
            }
        };
        for (i, &p) in row.iter().enumerate() {
            transition[[j, ACTION_USE, i]] = p;
        }
        transition[[j, ACTION_REPAIR, s_n - 1]] = 1.0;
    }
    let mut reward = Array2::zeros((s_n, 2));
    for j in 0..s_n {
        reward[[j, ACTION_USE]] = j as f64 / (s_n - 1) as f64;
        reward[[j, ACTION_REPAIR]] = repair_reward;
    }
    let lo = repair_reward.min(0.0);
    TabularMdp::with_reward_range(transition, reward, gamma, (lo, 1.0))
}

/// Two-state instance used throughout the tests: actions `stay` / `switch`
/// with deterministic transitions and reward equal to the current state.
pub fn two_state_instance(gamma: f64) -> TabularMdp {
    let mut transition = Array3::zeros((2, 2, 2));
    // action 0 = stay, action 1 = switch
    transition[[0, 0, 0]] = 1.0;
    transition[[0, 1, 1]] = 1.0;
    transition[[1, 0, 1]] = 1.0;
    transition[[1, 1, 0]] = 1.0;
    let mut reward = Array2::zeros((2, 2));
    reward[[1, 0]] = 1.0;
    reward[[1, 1]] = 1.0;
    TabularMdp::new(transition, reward, gamma).expect("valid by construction")
}
