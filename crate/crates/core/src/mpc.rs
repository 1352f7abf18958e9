//! Receding-horizon control: plan a fixed horizon on the model, execute the
//! first action (or the first few), observe, replan.
//!
//! Planning is certainty-equivalent: expectations inside the plan come from
//! the model's transition probabilities, and a required terminal pair is
//! enforced through the infeasibility sentinel of the finite-horizon
//! recursion, so a plan exists only when the terminal pair can be reached
//! for every disturbance realization the model allows.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::learning::TransitionSampler;
use crate::linear::{riccati_recursion_from, LinearSystem, QuadraticCost};
use crate::mdp::{finite_horizon_dp, RewardSchedule, TabularMdp, TerminalSet, INFEASIBLE};
use crate::Result;

/// Planning model: a tabular MDP or a deterministic linear-quadratic pair.
pub enum MpcModel<'a> {
    Tabular(&'a TabularMdp),
    Linear {
        sys: &'a LinearSystem,
        cost: &'a QuadraticCost,
        /// Terminal weight M_H; defaults to the stage cost Phi.
        terminal_cost: Option<DMatrix<f64>>,
    },
}

/// Receding-horizon specification.
pub struct MpcSpec<'a> {
    pub model: MpcModel<'a>,
    pub horizon: usize,
    /// Required terminal (state, action) pair, tabular models only.
    pub terminal: Option<(usize, usize)>,
    /// How many planned actions to execute before replanning (default 1).
    pub replan_every: usize,
}

impl<'a> MpcSpec<'a> {
    pub fn tabular(model: &'a TabularMdp, horizon: usize, terminal: Option<(usize, usize)>) -> Self {
        Self {
            model: MpcModel::Tabular(model),
            horizon,
            terminal,
            replan_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(CoreError::InvalidArgument("horizon must be >= 1".into()));
        }
        if self.replan_every < 1 || self.replan_every > self.horizon + 1 {
            return Err(CoreError::InvalidArgument(format!(
                "replan_every must lie in 1..={}",
                self.horizon + 1
            )));
        }
        match (&self.model, self.terminal) {
            (MpcModel::Tabular(mdp), Some((s, a))) => {
                if s >= mdp.num_states() || a >= mdp.num_actions() {
                    return Err(CoreError::InvalidArgument(format!(
                        "terminal pair ({s}, {a}) out of range"
                    )));
                }
            }
            (MpcModel::Linear { .. }, Some(_)) => {
                return Err(CoreError::InvalidArgument(
                    "terminal pairs apply to tabular models only".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Whether `to` can be reached from `from` in exactly `steps` transitions of
/// the support graph (an edge exists when some action gives the move
/// positive probability). A cheap necessary condition for terminal
/// feasibility; the planner's sentinel check is the authoritative one.
pub fn support_reachable_in(mdp: &TabularMdp, from: usize, to: usize, steps: usize) -> bool {
    let mut frontier = vec![false; mdp.num_states()];
    frontier[from] = true;
    for _ in 0..steps {
        let mut next = vec![false; mdp.num_states()];
        for (s, &alive) in frontier.iter().enumerate() {
            if !alive {
                continue;
            }
            for a in 0..mdp.num_actions() {
                for (s2, flag) in next.iter_mut().enumerate() {
                    if !*flag && mdp.prob(s, a, s2) > 0.0 {
                        *flag = true;
                    }
                }
            }
        }
        frontier = next;
    }
    frontier[to]
}

/// The planner's Q tables over the horizon, reusable across replans because
/// the model is time invariant.
pub struct MpcPlan {
    tables: Vec<ndarray::Array2<f64>>,
}

impl MpcPlan {
    /// First-step value of the plan from `state` with `action`.
    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.tables[0][[state, action]]
    }

    /// Planned action at `offset` steps into the plan, or an infeasibility
    /// error naming the state.
    pub fn action_at(&self, offset: usize, state: usize, horizon: usize) -> Result<usize> {
        let row = self.tables[offset].row(state);
        let mut best = None;
        let mut best_v = INFEASIBLE;
        for (a, &v) in row.iter().enumerate() {
            if v != INFEASIBLE && v > best_v {
                best_v = v;
                best = Some(a);
            }
        }
        best.ok_or(CoreError::Infeasible {
            state,
            horizon,
        })
    }
}

/// Builds the horizon plan for a tabular spec.
pub fn plan_tabular(spec: &MpcSpec<'_>) -> Result<MpcPlan> {
    spec.validate()?;
    let MpcModel::Tabular(mdp) = &spec.model else {
        return Err(CoreError::InvalidArgument(
            "plan_tabular needs a tabular model".into(),
        ));
    };
    let terminal = spec.terminal.map(|(s, a)| {
        TerminalSet::pair(s, a, mdp.num_states(), mdp.num_actions())
    });
    let tables = finite_horizon_dp(
        mdp,
        spec.horizon,
        RewardSchedule::Stationary,
        terminal.as_ref(),
    )?;
    Ok(MpcPlan { tables })
}

/// First action of the horizon plan from `state`.
pub fn mpc_action(spec: &MpcSpec<'_>, state: usize) -> Result<usize> {
    let plan = plan_tabular(spec)?;
    plan.action_at(0, state, spec.horizon)
}

/// First action of a linear-quadratic plan: u = -K_0 x from the
/// finite-horizon recursion.
pub fn mpc_action_linear(spec: &MpcSpec<'_>, state: &DVector<f64>) -> Result<DVector<f64>> {
    spec.validate()?;
    let MpcModel::Linear {
        sys,
        cost,
        terminal_cost,
    } = &spec.model
    else {
        return Err(CoreError::InvalidArgument(
            "mpc_action_linear needs a linear model".into(),
        ));
    };
    let terminal = terminal_cost.clone().unwrap_or_else(|| cost.phi.clone());
    let rec = riccati_recursion_from(sys, cost, spec.horizon, &terminal)?;
    Ok(-(&rec.gains[0] * state))
}

/// One executed step of a closed-loop rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
}

/// Structured events surfaced by a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MpcEvent {
    /// Planning found no feasible action; the rollout fell back to action 0.
    InfeasibleAt { t: usize, state: usize },
}

/// A closed-loop rollout and anything unusual that happened during it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub events: Vec<MpcEvent>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn average_reward(&self) -> f64 {
        if self.steps.is_empty() {
            0.0
        } else {
            self.total_reward() / self.steps.len() as f64
        }
    }
}

/// Closed-loop rollout of length `rollout_len` against `env`, replanning
/// every `spec.replan_every` steps. Returns the trajectory and its average
/// reward.
pub fn run_mpc<E: TransitionSampler>(
    spec: &MpcSpec<'_>,
    env: &E,
    start_state: usize,
    rollout_len: usize,
    rng: &mut impl Rng,
) -> Result<(Trajectory, f64)> {
    if rollout_len < 1 {
        return Err(CoreError::InvalidArgument(
            "rollout length must be >= 1".into(),
        ));
    }
    let plan = plan_tabular(spec)?;
    let mut trajectory = Trajectory::default();
    let mut state = start_state;
    for t in 0..rollout_len {
        let offset = t % spec.replan_every;
        let action = match plan.action_at(offset, state, spec.horizon) {
            Ok(a) => a,
            Err(CoreError::Infeasible { .. }) => {
                trajectory.events.push(MpcEvent::InfeasibleAt { t, state });
                0
            }
            Err(other) => return Err(other),
        };
        let (next, reward) = env.sample(state, action, rng);
        trajectory.steps.push(TrajectoryStep {
            t,
            state,
            action,
            reward,
        });
        state = next;
    }
    let avg = trajectory.average_reward();
    Ok((trajectory, avg))
}

/// Both sides of the receding-horizon performance guarantee.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcBoundCheck {
    pub empirical_avg: f64,
    /// Normal-approximation half-width 1.96 s / sqrt(n) over replications.
    pub half_width: f64,
    pub lower_bound: f64,
    /// Burn-in term (Q_plan(x0, u0) - H R_max) / T.
    pub burn_in_term: f64,
    /// Residual term E[R(f(x*, u*, W), null_action)].
    pub residual_term: f64,
    pub per_replication: Vec<f64>,
}

/// Simulates the receding-horizon policy and evaluates the guarantee
///
/// ```text
/// (1/T) sum_{t=0..T} R_t >= (Q_plan(x0, u0) - H R_max) / T
///                           + E[R(f(x*, u*, W), u_null)]
/// ```
///
/// Note the sum runs over T + 1 executed steps while both sides divide by
/// T; the guarantee is exactly tight on absorbing deterministic instances,
/// so the convention matters. The residual expectation is taken under the
/// model's transition row at the terminal pair. Requires a declared reward
/// ceiling and a terminal pair.
#[allow(clippy::too_many_arguments)]
pub fn mpc_bound_check<E: TransitionSampler>(
    spec: &MpcSpec<'_>,
    env: &E,
    start_state: usize,
    t_horizon: usize,
    replications: usize,
    r_max: f64,
    null_action: usize,
    rng: &mut impl Rng,
) -> Result<MpcBoundCheck> {
    if !r_max.is_finite() {
        return Err(CoreError::InvalidArgument(
            "reward ceiling R_max must be declared finite".into(),
        ));
    }
    if t_horizon < 1 {
        return Err(CoreError::InvalidArgument("T must be >= 1".into()));
    }
    if replications < 1 {
        return Err(CoreError::InvalidArgument("need at least one replication".into()));
    }
    let Some((x_star, u_star)) = spec.terminal else {
        return Err(CoreError::InvalidArgument(
            "the bound needs a declared terminal pair".into(),
        ));
    };
    let MpcModel::Tabular(mdp) = &spec.model else {
        return Err(CoreError::InvalidArgument(
            "mpc_bound_check needs a tabular model".into(),
        ));
    };
    if !support_reachable_in(mdp, start_state, x_star, spec.horizon) {
        return Err(CoreError::Infeasible {
            state: start_state,
            horizon: spec.horizon,
        });
    }

    let plan = plan_tabular(spec)?;
    let u0 = plan.action_at(0, start_state, spec.horizon)?;
    let burn_in_term =
        (plan.value(start_state, u0) - spec.horizon as f64 * r_max) / t_horizon as f64;
    let residual_term: f64 = (0..mdp.num_states())
        .map(|s2| mdp.prob(x_star, u_star, s2) * mdp.reward()[[s2, null_action]])
        .sum();
    let lower_bound = burn_in_term + residual_term;

    let mut per_replication = Vec::with_capacity(replications);
    for _ in 0..replications {
        let (trajectory, _) = run_mpc(spec, env, start_state, t_horizon + 1, rng)?;
        per_replication.push(trajectory.total_reward() / t_horizon as f64);
    }
    let n = per_replication.len() as f64;
    let empirical_avg = per_replication.iter().sum::<f64>() / n;
    let half_width = if replications > 1 {
        let var = per_replication
            .iter()
            .map(|x| (x - empirical_avg) * (x - empirical_avg))
            .sum::<f64>()
            / (n - 1.0);
        1.96 * (var / n).sqrt()
    } else {
        0.0
    };
    Ok(MpcBoundCheck {
        empirical_avg,
        half_width,
        lower_bound,
        burn_in_term,
        residual_term,
        per_replication,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::MdpSampler;
    use crate::mdp::{machine_repair_instance, DecayProfile, ACTION_USE};
    use approx::assert_abs_diff_eq;
    use ndarray::{Array2, Array3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Deterministic 4-state ring: action 0 stays, action 1 advances.
    fn ring(rewards: [[f64; 2]; 4]) -> TabularMdp {
        let mut transition = Array3::zeros((4, 2, 4));
        for s in 0..4 {
            transition[[s, 0, s]] = 1.0;
            transition[[s, 1, (s + 1) % 4]] = 1.0;
        }
        let mut reward = Array2::zeros((4, 2));
        for s in 0..4 {
            for a in 0..2 {
                reward[[s, a]] = rewards[s][a];
            }
        }
        TabularMdp::new(transition, reward, 0.9).unwrap()
    }

    #[test]
    fn mpc_action_matches_plan_brute_force() {
        // terminal pair at the reward maximum (state 2, stay), horizon 2:
        // enumerate every feasible (u0, u1, u2) by hand
        let mdp = ring([[0.0, 0.1], [0.2, 0.3], [1.0, 0.0], [0.1, 0.2]]);
        let spec = MpcSpec::tabular(&mdp, 2, Some((2, 0)));
        let mut best_value = f64::NEG_INFINITY;
        let mut best_first = 0;
        for u0 in 0..2 {
            for u1 in 0..2 {
                let x0 = 0usize;
                let x1 = if u0 == 1 { (x0 + 1) % 4 } else { x0 };
                let x2 = if u1 == 1 { (x1 + 1) % 4 } else { x1 };
                if x2 != 2 {
                    continue;
                }
                let value = mdp.reward()[[x0, u0]] + mdp.reward()[[x1, u1]] + mdp.reward()[[2, 0]];
                if value > best_value {
                    best_value = value;
                    best_first = u0;
                }
            }
        }
        assert_eq!(mpc_action(&spec, 0).unwrap(), best_first);
        let plan = plan_tabular(&spec).unwrap();
        let u0 = plan.action_at(0, 0, 2).unwrap();
        assert_abs_diff_eq!(plan.value(0, u0), best_value, epsilon = 1e-12);
    }

    #[test]
    fn unreachable_terminal_is_an_error() {
        // state 2 is two hops away from state 0, horizon 1 cannot make it
        let mdp = ring([[0.0, 0.0]; 4]);
        let spec = MpcSpec::tabular(&mdp, 1, Some((2, 0)));
        let err = mpc_action(&spec, 0).unwrap_err();
        assert!(matches!(err, CoreError::Infeasible { state: 0, horizon: 1 }));
        assert!(!support_reachable_in(&mdp, 0, 2, 1));
        assert!(support_reachable_in(&mdp, 0, 2, 2));
    }

    #[test]
    fn mpc_degenerates_to_dp_on_deterministic_models() {
        let mdp = ring([[0.1, 0.0], [0.0, 0.9], [0.4, 0.2], [0.0, 0.8]]);
        let horizon = 5;
        let mut spec = MpcSpec::tabular(&mdp, horizon, None);
        spec.replan_every = horizon + 1;
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (trajectory, _) = run_mpc(&spec, &sampler, 0, horizon + 1, &mut rng).unwrap();

        // exact DP reference: follow argmax of Q_{t -> H} step by step
        let tables = finite_horizon_dp(&mdp, horizon, RewardSchedule::Stationary, None).unwrap();
        let mut state = 0usize;
        for (t, step) in trajectory.steps.iter().enumerate() {
            let row = tables[t].row(state);
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (a, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = a;
                }
            }
            assert_eq!(step.action, best, "step {t}");
            assert_eq!(step.state, state);
            state = if best == 1 { (state + 1) % 4 } else { state };
        }
    }

    #[test]
    fn noise_free_rollout_achieves_planned_reward() {
        let mdp = ring([[0.1, 0.0], [0.0, 0.9], [0.4, 0.2], [0.0, 0.8]]);
        let horizon = 3;
        let mut spec = MpcSpec::tabular(&mdp, horizon, None);
        spec.replan_every = horizon + 1;
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (trajectory, _) = run_mpc(&spec, &sampler, 1, horizon + 1, &mut rng).unwrap();
        let plan = plan_tabular(&spec).unwrap();
        let u0 = plan.action_at(0, 1, horizon).unwrap();
        assert_abs_diff_eq!(trajectory.total_reward(), plan.value(1, u0), epsilon = 1e-12);
    }

    #[test]
    fn zero_reward_model_scores_zero() {
        let mdp = ring([[0.0, 0.0]; 4]);
        let spec = MpcSpec::tabular(&mdp, 3, None);
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (_, avg) = run_mpc(&spec, &sampler, 0, 50, &mut rng).unwrap();
        assert_eq!(avg, 0.0);
    }

    #[test]
    fn same_seed_reproduces_trajectory_bytes() {
        let mdp = machine_repair_instance(&DecayProfile::Uniform, 0.9, 0.0).unwrap();
        let spec = MpcSpec::tabular(&mdp, 5, Some((9, ACTION_USE)));
        let sampler = MdpSampler::new(&mdp);
        let run = |seed| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let (traj, _) = run_mpc(&spec, &sampler, 9, 200, &mut rng).unwrap();
            serde_json::to_vec(&traj).unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn repair_bound_holds_on_uniform_decay() {
        let mdp = machine_repair_instance(&DecayProfile::Uniform, 0.9, 0.0).unwrap();
        let spec = MpcSpec::tabular(&mdp, 5, Some((9, ACTION_USE)));
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let check =
            mpc_bound_check(&spec, &sampler, 9, 500, 20, 1.0, ACTION_USE, &mut rng).unwrap();
        assert!(
            check.empirical_avg >= check.lower_bound - 2.0 * check.half_width,
            "avg {} bound {}",
            check.empirical_avg,
            check.lower_bound
        );
    }

    #[test]
    fn bound_needs_declared_terminal() {
        let mdp = ring([[0.0, 0.0]; 4]);
        let spec = MpcSpec::tabular(&mdp, 2, None);
        let sampler = MdpSampler::new(&mdp);
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        assert!(mpc_bound_check(&spec, &sampler, 0, 10, 2, 1.0, 0, &mut rng).is_err());
    }

    #[test]
    fn linear_mpc_action_is_linear_feedback() {
        let (sys, cost) = crate::linear::newton_instance();
        let spec = MpcSpec {
            model: MpcModel::Linear {
                sys: &sys,
                cost: &cost,
                terminal_cost: None,
            },
            horizon: 50,
            terminal: None,
            replan_every: 1,
        };
        let x = DVector::from_column_slice(&[1.0, -0.5]);
        let u = mpc_action_linear(&spec, &x).unwrap();
        // the horizon-50 gain has converged to the stationary [2, 3]
        assert_abs_diff_eq!(u[0], -(2.0 * 1.0 + 3.0 * (-0.5)), epsilon = 1e-6);
    }
}
