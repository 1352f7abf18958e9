//! Reproducible experiment execution.
//!
//! Every run is a pure function of (config, crate version): replication `i`
//! draws from an independent ChaCha12 stream derived as
//! `seed_from_u64(master_seed)` with the stream counter set to `i`, so
//! replications can run in any order or concurrently without changing a
//! byte of output. Aggregates are recomputed exactly from the serialized
//! per-replication rows (left fold in row order, normal-approximation
//! half-width 1.96 s / sqrt(n)).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandits::{
    contextual_etc, contextual_greedy, m_star, run_etc, run_random_arm, run_ucb, se_schedule,
    successive_elimination, BanditInstance, EliminationMeans, LinearContextualEnv, RegretCurve,
};
use crate::error::CoreError;
use crate::learning::{
    q_learning, EpsilonGreedy, LearningReport, MdpSampler, StepSchedule,
};
use crate::linear::{
    gain_from_solution, kalman_gain, lqg_closed_loop, riccati_recursion, solve_dare,
    spectral_radius, LinearSystem, QuadraticCost, DARE_MAX_ITER, DARE_TOL,
};
use crate::mdp::{
    greedy_policy, machine_repair_instance, policy_evaluation, policy_iteration, two_state_instance,
    value_iteration, DecayProfile, TabularMdp, TabularPolicy, ACTION_USE,
};
use crate::mpc::{mpc_bound_check, run_mpc, MpcSpec};
use crate::search::{random_search, reinforce, Directions, GaussianDensity, StepSizes};
use crate::Result;

/// RNG algorithm recorded in every report; reproduction across
/// implementations is statistical, bitwise reproduction holds within this
/// one.
pub const RNG_ALGORITHM: &str = "chacha12";
/// How per-replication streams are derived from the master seed.
pub const RNG_DERIVATION: &str = "seed_from_u64(master_seed), stream = replication index";

/// Independent stream for one replication.
pub fn replication_rng(master_seed: u64, replication: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(replication);
    rng
}

/// Optimality gap of a policy under exact dynamic programming, averaged
/// over a uniform initial state:
/// `mean_x [V*(x) - V^pi(x)]`. Always nonnegative.
pub fn pac_error(policy: &TabularPolicy, exact_mdp: &TabularMdp) -> Result<f64> {
    let tol = 1e-11;
    let max_iter = TabularMdp::default_max_iter(exact_mdp.discount(), tol);
    let (q_star, _) = value_iteration(exact_mdp, tol, max_iter)?;
    let v_star = q_star.value_vector();
    let q_pi = policy_evaluation(exact_mdp, policy, tol)?;
    let n = exact_mdp.num_states();
    let total: f64 = (0..n)
        .map(|s| v_star.get(s) - q_pi.get(s, policy.action(s)))
        .sum();
    Ok(total / n as f64)
}

/// Worst-state optimality gap, `max_x [V*(x) - V^pi(x)]`.
pub fn pac_error_sup(policy: &TabularPolicy, exact_mdp: &TabularMdp) -> Result<f64> {
    let tol = 1e-11;
    let max_iter = TabularMdp::default_max_iter(exact_mdp.discount(), tol);
    let (q_star, _) = value_iteration(exact_mdp, tol, max_iter)?;
    let v_star = q_star.value_vector();
    let q_pi = policy_evaluation(exact_mdp, policy, tol)?;
    Ok((0..exact_mdp.num_states())
        .map(|s| v_star.get(s) - q_pi.get(s, policy.action(s)))
        .fold(0.0_f64, f64::max))
}

/// Restocking model: stock in 0..=capacity, orders in 0..=max_order, and a
/// demand distribution over 0..demand.len(). Stock evolves as
/// `clamp(x + u - w, 0, capacity)` (never negative, never above capacity)
/// and the reward is the served fraction of the worst-case demand.
pub fn inventory_instance(
    capacity: usize,
    max_order: usize,
    demand: &[f64],
    gamma: f64,
) -> Result<TabularMdp> {
    if demand.is_empty() {
        return Err(CoreError::InvalidArgument(
            "demand distribution must be nonempty".into(),
        ));
    }
    let total: f64 = demand.iter().sum();
    if demand.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(CoreError::InvalidDistribution(
            "demand weights must form a distribution".into(),
        ));
    }
    let s_n = capacity + 1;
    let a_n = max_order + 1;
    let max_demand = demand.len() - 1;
    let mut transition = Array3::zeros((s_n, a_n, s_n));
    let mut reward: Array2<f64> = Array2::zeros((s_n, a_n));
    for x in 0..s_n {
        for u in 0..a_n {
            let on_hand = (x + u).min(capacity);
            for (w, &p) in demand.iter().enumerate() {
                let next = on_hand.saturating_sub(w);
                transition[[x, u, next]] += p;
                if max_demand > 0 {
                    reward[[x, u]] += p * (w.min(on_hand) as f64 / max_demand as f64);
                }
            }
        }
    }
    TabularMdp::new(transition, reward, gamma)
}

/// Discretized point mass: position and velocity with a force input,
/// A = [1, dt; 0, 1], B = [0; dt/m].
pub fn double_integrator_instance(dt: f64, mass: f64) -> Result<LinearSystem> {
    if dt <= 0.0 || mass <= 0.0 {
        return Err(CoreError::InvalidArgument(
            "time step and mass must be positive".into(),
        ));
    }
    let a = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, dt / mass]);
    LinearSystem::fully_observed(a, b, DMatrix::identity(2, 2))
}

fn default_replications() -> usize {
    1
}

fn default_curve_limit() -> usize {
    3
}

/// A replicable experiment: everything an invocation needs, in one JSON
/// document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Experiment name, e.g. "bandit-etc".
    pub experiment: String,
    /// Master seed; replication i uses stream i of this seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Experiment-specific parameters, validated by the experiment.
    #[serde(default)]
    pub params: serde_json::Value,
    /// How many replications emit full curve/trajectory rows.
    #[serde(default = "default_curve_limit")]
    pub curve_limit: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| CoreError::Config {
                path: "<root>".into(),
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment.is_empty() {
            return Err(CoreError::Config {
                path: "experiment".into(),
                message: "must be a nonempty experiment name".into(),
            });
        }
        if self.replications < 1 {
            return Err(CoreError::Config {
                path: "replications".into(),
                message: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    fn params<P: DeserializeOwned>(&self) -> Result<P> {
        serde_json::from_value(self.params.clone()).map_err(|e| CoreError::Config {
            path: "params".into(),
            message: e.to_string(),
        })
    }

    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&bytes);
        hex_string(&hasher.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One replication's scalar outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub replication: u64,
    pub metric: f64,
}

/// Mean and normal-approximation half-width over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    /// 1.96 * sample standard deviation / sqrt(n); zero for n = 1.
    pub half_width: f64,
}

/// Recomputes the aggregate from rows; the stored aggregate must match this
/// exactly.
pub fn aggregate_rows(rows: &[ReplicationRow]) -> Aggregate {
    let n = rows.len();
    let mean = rows.iter().map(|r| r.metric).sum::<f64>() / n as f64;
    let half_width = if n > 1 {
        let var = rows
            .iter()
            .map(|r| (r.metric - mean) * (r.metric - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    Aggregate {
        n,
        mean,
        half_width,
    }
}

/// Serialized experiment outcome: per-replication rows plus provenance
/// sufficient to reproduce the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub rng_algorithm: String,
    pub rng_derivation: String,
    pub master_seed: u64,
    pub metric: String,
    pub rows: Vec<ReplicationRow>,
    pub aggregate: Aggregate,
    /// Experiment-specific named scalars (bound terms, schedules, gains).
    pub summary: BTreeMap<String, f64>,
}

impl Report {
    fn new(config: &ExperimentConfig, metric: &str, rows: Vec<ReplicationRow>) -> Self {
        let aggregate = aggregate_rows(&rows);
        Self {
            experiment: config.experiment.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            rng_algorithm: RNG_ALGORITHM.into(),
            rng_derivation: RNG_DERIVATION.into(),
            master_seed: config.seed,
            metric: metric.to_string(),
            rows,
            aggregate,
            summary: BTreeMap::new(),
        }
    }
}

/// Row formats the harness can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[derive(Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    JsonLines,
}


/// Plot-ready rows: one record per time step, stable column order.
pub struct CurveWriter<'a> {
    file: std::io::BufWriter<std::fs::File>,
    format: OutputFormat,
    columns: &'a [&'a str],
    wrote_header: bool,
}

impl<'a> CurveWriter<'a> {
    pub fn create(path: &Path, format: OutputFormat, columns: &'a [&'a str]) -> Result<Self> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        Ok(Self {
            file,
            format,
            columns,
            wrote_header: false,
        })
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        match self.format {
            OutputFormat::Csv => {
                if !self.wrote_header {
                    writeln!(self.file, "{}", self.columns.join(","))?;
                    self.wrote_header = true;
                }
                let rendered: Vec<String> = values.iter().map(|v| format_number(*v)).collect();
                writeln!(self.file, "{}", rendered.join(","))?;
            }
            OutputFormat::JsonLines => {
                let mut object = serde_json::Map::new();
                for (name, value) in self.columns.iter().zip(values) {
                    let number = serde_json::Number::from_f64(*value)
                        .unwrap_or_else(|| serde_json::Number::from(0));
                    object.insert((*name).to_string(), serde_json::Value::Number(number));
                }
                writeln!(self.file, "{}", serde_json::Value::Object(object))?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.file.flush()?;
        Ok(())
    }
}

fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn curve_rows(
    writer: &mut CurveWriter<'_>,
    replication: u64,
    curve: &RegretCurve,
) -> Result<()> {
    for t in 0..curve.len() {
        writer.row(&[
            replication as f64,
            t as f64,
            curve.arm_choices()[t] as f64,
            curve.instantaneous(t),
            curve.cumulative()[t],
        ])?;
    }
    Ok(())
}

/// Columns of the bandit curve files.
pub const REGRET_COLUMNS: [&str; 5] = ["seed", "t", "arm", "instantaneous_gap", "cumulative_regret"];
/// Columns of the rollout trajectory files.
pub const TRAJECTORY_COLUMNS: [&str; 5] = ["seed", "t", "state", "action", "reward"];
/// Columns of the search trace files.
pub const TRACE_COLUMNS: [&str; 5] = ["seed", "step", "reward", "theta_norm", "step_size"];

// ---------------------------------------------------------------------------
// experiment parameter schemas
// ---------------------------------------------------------------------------

/// How explore-then-commit picks its exploration length.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationLength {
    /// Fixed per-arm count.
    Fixed(usize),
    /// Tuned from the smallest positive gap; falls back to a random arm
    /// when the tuned value is below one.
    GapStar,
    /// ceil(T^(2/3)) per arm, the gap-independent rule.
    TTwoThirds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EtcParams {
    means: Vec<f64>,
    horizon: usize,
    m: ExplorationLength,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct UcbParams {
    means: Vec<f64>,
    horizon: usize,
    #[serde(default)]
    delta: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeParams {
    means: Vec<f64>,
    horizon: usize,
    #[serde(default)]
    cumulative_means: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextualParams {
    thetas: Vec<Vec<f64>>,
    noise: f64,
    horizon: usize,
    algorithm: String,
    #[serde(default)]
    m: usize,
}

/// Tabular instances the config file can name.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InstanceSpec {
    MachineRepair {
        #[serde(default)]
        decay: DecayProfile,
        gamma: f64,
        #[serde(default)]
        repair_reward: f64,
    },
    TwoState {
        gamma: f64,
    },
    Inventory {
        capacity: usize,
        max_order: usize,
        demand: Vec<f64>,
        gamma: f64,
    },
    Inline {
        mdp: TabularMdp,
    },
}

impl InstanceSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match self {
            InstanceSpec::MachineRepair {
                decay,
                gamma,
                repair_reward,
            } => machine_repair_instance(decay, *gamma, *repair_reward),
            InstanceSpec::TwoState { gamma } => Ok(two_state_instance(*gamma)),
            InstanceSpec::Inventory {
                capacity,
                max_order,
                demand,
                gamma,
            } => inventory_instance(*capacity, *max_order, demand, *gamma),
            InstanceSpec::Inline { mdp } => Ok(mdp.clone()),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpSolveParams {
    instance: InstanceSpec,
    #[serde(default = "default_tol")]
    tol: f64,
}

fn default_tol() -> f64 {
    1e-8
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QLearningParams {
    instance: InstanceSpec,
    steps: usize,
    epsilon: f64,
    schedule: StepSchedule,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LqrParams {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Phi")]
    phi: Vec<Vec<f64>>,
    #[serde(rename = "Psi")]
    psi: Vec<Vec<f64>>,
    horizon: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LqgParams {
    system: LinearSystem,
    cost: QuadraticCost,
    /// Input-gain mismatch factors to probe, e.g. [1.0, 1.1].
    #[serde(default)]
    mismatch: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MpcRepairParams {
    #[serde(default)]
    decay: DecayProfile,
    gamma: f64,
    horizon: usize,
    rollout: usize,
    #[serde(default)]
    repair_reward: f64,
    #[serde(default = "default_r_max")]
    r_max: f64,
    #[serde(default = "default_start_state")]
    start_state: usize,
}

fn default_r_max() -> f64 {
    1.0
}

fn default_start_state() -> usize {
    9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RandomSearchParams {
    dim: usize,
    alpha: f64,
    sigma: f64,
    directions: usize,
    steps: usize,
    /// Optimum of the quadratic objective; defaults to the ones vector.
    #[serde(default)]
    target: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReinforceParams {
    dim: usize,
    sigma: f64,
    alpha: f64,
    steps: usize,
    #[serde(default = "default_batch")]
    batch: usize,
}

fn default_batch() -> usize {
    1
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

/// Runs the named experiment, writes its artifacts under `out_dir`
/// (`summary.json` plus experiment-specific row files), and returns the
/// report. Same config, same bytes.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Report> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let report = match config.experiment.as_str() {
        "bandit-etc" => bandit_etc(config, out_dir, format)?,
        "bandit-ucb" => bandit_ucb(config, out_dir, format)?,
        "bandit-se" => bandit_se(config, out_dir, format)?,
        "bandit-contextual" => bandit_contextual(config, out_dir, format)?,
        "mdp-solve" => mdp_solve(config, out_dir)?,
        "mdp-qlearning" => mdp_qlearning(config, out_dir)?,
        "lqr-design" => lqr_design(config, out_dir)?,
        "lqg-design" => lqg_design(config, out_dir)?,
        "mpc-repair" => mpc_repair(config, out_dir, format)?,
        "search-random" => search_random(config, out_dir, format)?,
        "search-reinforce" => search_reinforce(config, out_dir, format)?,
        other => return Err(CoreError::UnknownExperiment(other.to_string())),
    };
    let summary_path = out_dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn curve_file(out_dir: &Path, stem: &str, format: OutputFormat) -> std::path::PathBuf {
    match format {
        OutputFormat::Csv => out_dir.join(format!("{stem}.csv")),
        OutputFormat::JsonLines => out_dir.join(format!("{stem}.jsonl")),
    }
}

fn bandit_etc(config: &ExperimentConfig, out_dir: &Path, format: OutputFormat) -> Result<Report> {
    let params: EtcParams = config.params()?;
    let instance = BanditInstance::bernoulli(params.means.clone())?;
    let mut writer = CurveWriter::create(
        &curve_file(out_dir, "regret", format),
        format,
        &REGRET_COLUMNS,
    )?;
    let (m, fallback) = match &params.m {
        ExplorationLength::Fixed(m) => (*m, false),
        ExplorationLength::GapStar => {
            let gap = instance
                .means()
                .iter()
                .map(|&mu| instance.means()[instance.best_arm()] - mu)
                .filter(|&g| g > 0.0)
                .fold(f64::INFINITY, f64::min);
            if !gap.is_finite() {
                (0, true)
            } else {
                let tuned = m_star(gap, params.horizon)?;
                (tuned.m, tuned.fallback)
            }
        }
        ExplorationLength::TTwoThirds => ((params.horizon as f64).powf(2.0 / 3.0).ceil() as usize, false),
    };
    let mut rows = Vec::with_capacity(config.replications);
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        let curve = if fallback {
            run_random_arm(&instance, params.horizon, &mut rng)
        } else {
            run_etc(&instance, m, params.horizon, &mut rng)?
        };
        if r < config.curve_limit {
            curve_rows(&mut writer, r as u64, &curve)?;
        }
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: curve.final_regret(),
        });
    }
    writer.finish()?;
    let mut report = Report::new(config, "final_pseudo_regret", rows);
    report.summary.insert("m".into(), m as f64);
    report
        .summary
        .insert("fallback_random_arm".into(), if fallback { 1.0 } else { 0.0 });
    Ok(report)
}

fn bandit_ucb(config: &ExperimentConfig, out_dir: &Path, format: OutputFormat) -> Result<Report> {
    let params: UcbParams = config.params()?;
    let instance = BanditInstance::bernoulli(params.means.clone())?;
    let delta = params.delta.unwrap_or(1.0 / params.horizon as f64);
    let mut writer = CurveWriter::create(
        &curve_file(out_dir, "regret", format),
        format,
        &REGRET_COLUMNS,
    )?;
    let mut rows = Vec::with_capacity(config.replications);
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        let curve = run_ucb(&instance, params.horizon, delta, &mut rng)?;
        if r < config.curve_limit {
            curve_rows(&mut writer, r as u64, &curve)?;
        }
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: curve.final_regret(),
        });
    }
    writer.finish()?;
    let mut report = Report::new(config, "final_pseudo_regret", rows);
    report.summary.insert("delta".into(), delta);
    Ok(report)
}

fn bandit_se(config: &ExperimentConfig, out_dir: &Path, format: OutputFormat) -> Result<Report> {
    let params: SeParams = config.params()?;
    let instance = BanditInstance::bernoulli(params.means.clone())?;
    let mode = if params.cumulative_means {
        EliminationMeans::Cumulative
    } else {
        EliminationMeans::PerRound
    };
    let mut writer = CurveWriter::create(
        &curve_file(out_dir, "regret", format),
        format,
        &REGRET_COLUMNS,
    )?;
    let mut rows = Vec::with_capacity(config.replications);
    let mut survivals = 0usize;
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        let run = successive_elimination(&instance, params.horizon, mode, &mut rng);
        if run
            .active_history
            .last()
            .is_none_or(|active| active.contains(&instance.best_arm()))
        {
            survivals += 1;
        }
        if r < config.curve_limit {
            curve_rows(&mut writer, r as u64, &run.curve)?;
        }
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: run.curve.final_regret(),
        });
    }
    writer.finish()?;
    let schedule = se_schedule(params.horizon);
    let mut report = Report::new(config, "final_pseudo_regret", rows);
    report
        .summary
        .insert("rounds".into(), schedule.rounds as f64);
    if let Some(&m1) = schedule.pulls_per_round.first() {
        report.summary.insert("m1".into(), m1 as f64);
    }
    report.summary.insert(
        "best_arm_survival_rate".into(),
        survivals as f64 / config.replications as f64,
    );
    Ok(report)
}

fn bandit_contextual(
    config: &ExperimentConfig,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Report> {
    let params: ContextualParams = config.params()?;
    let thetas: Vec<DVector<f64>> = params
        .thetas
        .iter()
        .map(|t| DVector::from_column_slice(t))
        .collect();
    let env = LinearContextualEnv::new(thetas, params.noise)?;
    let mut writer = CurveWriter::create(
        &curve_file(out_dir, "regret", format),
        format,
        &REGRET_COLUMNS,
    )?;
    let mut rows = Vec::with_capacity(config.replications);
    let mut ridge_events = 0usize;
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        let run = match params.algorithm.as_str() {
            "etc" => contextual_etc(&env, params.m, params.horizon, &mut rng)?,
            "greedy" => contextual_greedy(&env, params.horizon, &mut rng)?,
            other => {
                return Err(CoreError::Config {
                    path: "params.algorithm".into(),
                    message: format!("unknown contextual algorithm '{other}'"),
                })
            }
        };
        ridge_events += run.model.ridge_events;
        if r < config.curve_limit {
            curve_rows(&mut writer, r as u64, &run.curve)?;
        }
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: run.curve.final_regret(),
        });
    }
    writer.finish()?;
    let mut report = Report::new(config, "final_pseudo_regret", rows);
    report
        .summary
        .insert("ridge_events".into(), ridge_events as f64);
    Ok(report)
}

fn mdp_solve(config: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    let params: MdpSolveParams = config.params()?;
    let mdp = params.instance.build()?;
    let max_iter = TabularMdp::default_max_iter(mdp.discount(), params.tol);
    let (q, iterations) = value_iteration(&mdp, params.tol, max_iter)?;
    let vi_policy = greedy_policy(&q);
    let (pi_policy, _) = policy_iteration(&mdp, params.tol)?;
    let solution = serde_json::json!({
        "iterations": iterations,
        "q": q.values().rows().into_iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
        "policy": vi_policy.actions(),
        "policy_iteration_agrees": pi_policy == vi_policy,
    });
    std::fs::write(
        out_dir.join("solution.json"),
        serde_json::to_string_pretty(&solution)?,
    )?;
    let rows = vec![ReplicationRow {
        replication: 0,
        metric: iterations as f64,
    }];
    let mut report = Report::new(config, "value_iteration_iterations", rows);
    let v = q.value_vector();
    report.summary.insert(
        "v_max".into(),
        (0..mdp.num_states()).map(|s| v.get(s)).fold(0.0, f64::max),
    );
    report.summary.insert(
        "pi_agrees_with_vi".into(),
        if pi_policy == vi_policy { 1.0 } else { 0.0 },
    );
    Ok(report)
}

fn mdp_qlearning(config: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    let params: QLearningParams = config.params()?;
    let mdp = params.instance.build()?;
    let sampler = MdpSampler::new(&mdp);
    let mut rows = Vec::with_capacity(config.replications);
    let mut reports = Vec::new();
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        let run = q_learning(
            &sampler,
            mdp.discount(),
            params.steps,
            &params.schedule,
            EpsilonGreedy {
                epsilon: params.epsilon,
            },
            0,
            &mut rng,
        )?;
        let policy = greedy_policy(&run.q);
        let gap = pac_error(&policy, &mdp)?;
        if r < config.curve_limit {
            reports.push(LearningReport::from_q_learning(
                r as u64,
                params.steps,
                &params.schedule,
                &run,
            ));
        }
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: gap,
        });
    }
    std::fs::write(
        out_dir.join("learning.json"),
        serde_json::to_string_pretty(&reports)?,
    )?;
    Ok(Report::new(config, "pac_error", rows))
}

fn matrix_from(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(CoreError::Config {
            path: format!("params.{what}"),
            message: "must be a nonempty rectangular matrix".into(),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn lqr_design(config: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    let params: LqrParams = config.params()?;
    let a = matrix_from(&params.a, "A")?;
    let b = matrix_from(&params.b, "B")?;
    let d = a.nrows();
    let sys = LinearSystem::fully_observed(a, b, DMatrix::identity(d, d))?;
    let cost = QuadraticCost::new(matrix_from(&params.phi, "Phi")?, matrix_from(&params.psi, "Psi")?)?;
    let recursion = riccati_recursion(&sys, &cost, params.horizon)?;
    let gain = &recursion.gains[0];
    let solution = solve_dare(&sys, &cost, DARE_TOL, DARE_MAX_ITER)?;
    let loop_matrix = &sys.a - &sys.b * gain;
    let rho = spectral_radius(&loop_matrix)?;
    let design = serde_json::json!({
        "K": (0..gain.nrows()).map(|i| (0..gain.ncols()).map(|j| gain[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "closed_loop_radius": rho,
        "dare_residual": solution.residual,
        "dare_converged": solution.converged,
        "dare_iterations": solution.iterations,
    });
    std::fs::write(out_dir.join("design.json"), serde_json::to_string_pretty(&design)?)?;
    let rows = vec![ReplicationRow {
        replication: 0,
        metric: rho,
    }];
    let mut report = Report::new(config, "closed_loop_radius", rows);
    report
        .summary
        .insert("dare_residual".into(), solution.residual);
    Ok(report)
}

fn lqg_design(config: &ExperimentConfig, out_dir: &Path) -> Result<Report> {
    let params: LqgParams = config.params()?;
    let sys = params.system;
    let cost = params.cost;
    let solution = solve_dare(&sys, &cost, DARE_TOL, DARE_MAX_ITER)?;
    let gain = gain_from_solution(&sys, &cost, &solution)?;
    let filter = kalman_gain(&sys)?;
    let mut radius_by_mismatch = BTreeMap::new();
    let mut probes = params.mismatch.clone();
    if probes.is_empty() {
        probes.push(1.0);
    }
    for &t in &probes {
        let b_star = &sys.b * t;
        let closed = lqg_closed_loop(&sys, &gain, &filter.l, Some(&b_star));
        radius_by_mismatch.insert(format!("radius_at_{t}"), spectral_radius(&closed)?);
    }
    let design = serde_json::json!({
        "K": (0..gain.k.nrows()).map(|i| (0..gain.k.ncols()).map(|j| gain.k[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "L": (0..filter.l.nrows()).map(|i| (0..filter.l.ncols()).map(|j| filter.l[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "sv_regularizer": filter.epsilon_used,
        "radii": radius_by_mismatch,
    });
    std::fs::write(out_dir.join("design.json"), serde_json::to_string_pretty(&design)?)?;
    let matched = lqg_closed_loop(&sys, &gain, &filter.l, None);
    let rho = spectral_radius(&matched)?;
    let rows = vec![ReplicationRow {
        replication: 0,
        metric: rho,
    }];
    let mut report = Report::new(config, "matched_closed_loop_radius", rows);
    for (k, v) in radius_by_mismatch {
        report.summary.insert(k, v);
    }
    Ok(report)
}

fn mpc_repair(config: &ExperimentConfig, out_dir: &Path, format: OutputFormat) -> Result<Report> {
    let params: MpcRepairParams = config.params()?;
    let mdp = machine_repair_instance(&params.decay, params.gamma, params.repair_reward)?;
    let spec = MpcSpec::tabular(&mdp, params.horizon, Some((9, ACTION_USE)));
    let sampler = MdpSampler::new(&mdp);

    let mut writer = CurveWriter::create(
        &curve_file(out_dir, "trajectory", format),
        format,
        &TRAJECTORY_COLUMNS,
    )?;
    let mut rows = Vec::with_capacity(config.replications);
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        // T + 1 executed steps averaged over T, the same convention the
        // performance bound is stated in
        let (trajectory, _) = run_mpc(
            &spec,
            &sampler,
            params.start_state,
            params.rollout + 1,
            &mut rng,
        )?;
        if r < config.curve_limit {
            for step in &trajectory.steps {
                writer.row(&[
                    r as f64,
                    step.t as f64,
                    step.state as f64,
                    step.action as f64,
                    step.reward,
                ])?;
            }
        }
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: trajectory.total_reward() / params.rollout as f64,
        });
    }
    writer.finish()?;

    // bound terms from a fresh stream so the metric rows stay untouched
    let mut rng = replication_rng(config.seed, config.replications as u64);
    let check = mpc_bound_check(
        &spec,
        &sampler,
        params.start_state,
        params.rollout,
        1,
        params.r_max,
        ACTION_USE,
        &mut rng,
    )?;
    let mut report = Report::new(config, "average_reward", rows);
    report.summary.insert("lower_bound".into(), check.lower_bound);
    report.summary.insert("burn_in_term".into(), check.burn_in_term);
    report.summary.insert("residual_term".into(), check.residual_term);
    Ok(report)
}

fn search_random(config: &ExperimentConfig, out_dir: &Path, format: OutputFormat) -> Result<Report> {
    let params: RandomSearchParams = config.params()?;
    let target = match &params.target {
        Some(t) if t.len() == params.dim => ndarray::Array1::from_vec(t.clone()),
        Some(_) => {
            return Err(CoreError::Config {
                path: "params.target".into(),
                message: "target length must equal dim".into(),
            })
        }
        None => ndarray::Array1::from_elem(params.dim, 1.0),
    };
    let reward_target = target.clone();
    let reward = move |z: &ndarray::Array1<f64>| {
        let d = z - &reward_target;
        -d.dot(&d)
    };
    let mut writer = CurveWriter::create(
        &curve_file(out_dir, "trace", format),
        format,
        &TRACE_COLUMNS,
    )?;
    let mut rows = Vec::with_capacity(config.replications);
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        let trace = random_search(
            &reward,
            ndarray::Array1::zeros(params.dim),
            params.sigma,
            params.directions,
            params.alpha,
            params.steps,
            Directions::Gaussian,
            &mut rng,
        )?;
        if r < config.curve_limit {
            for k in 0..trace.rewards.len() {
                let theta = &trace.iterates[k + 1];
                writer.row(&[
                    r as f64,
                    k as f64,
                    trace.rewards[k],
                    theta.dot(theta).sqrt(),
                    trace.step_sizes[k],
                ])?;
            }
        }
        let err = trace.final_theta() - &target;
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: err.dot(&err).sqrt(),
        });
    }
    writer.finish()?;
    Ok(Report::new(config, "distance_to_optimum", rows))
}

fn search_reinforce(
    config: &ExperimentConfig,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<Report> {
    let params: ReinforceParams = config.params()?;
    let density = GaussianDensity::new(params.dim, params.sigma)?;
    let reward = |z: &ndarray::Array1<f64>| -z.dot(z);
    let mut writer = CurveWriter::create(
        &curve_file(out_dir, "trace", format),
        format,
        &TRACE_COLUMNS,
    )?;
    let mut rows = Vec::with_capacity(config.replications);
    for r in 0..config.replications {
        let mut rng = replication_rng(config.seed, r as u64);
        let trace = reinforce(
            &density,
            &reward,
            ndarray::Array1::from_elem(params.dim, 1.0),
            params.steps,
            &StepSizes::Constant(params.alpha),
            params.batch,
            &mut rng,
        )?;
        if r < config.curve_limit {
            for k in 0..trace.rewards.len() {
                let theta = &trace.iterates[k + 1];
                writer.row(&[
                    r as f64,
                    k as f64,
                    trace.rewards[k],
                    theta.dot(theta).sqrt(),
                    trace.step_sizes[k],
                ])?;
            }
        }
        let theta = trace.final_theta();
        rows.push(ReplicationRow {
            replication: r as u64,
            metric: theta.dot(theta).sqrt(),
        });
    }
    writer.finish()?;
    Ok(Report::new(config, "final_theta_norm", rows))
}
