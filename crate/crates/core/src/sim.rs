//! Rollouts of the mining problem, Monte Carlo evaluation, heuristic
//! baselines and the stop-count optimizer.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::grid::SimplexGrid;
use crate::model::{dot, Action, PomdpModel};
use crate::policy::{DecisionContext, Policy};
use crate::rng::{sample_index, tagged, Purpose, StreamRng};
use crate::spsa::{train_params, SpsaConfig, TrainingTrace};
use crate::vi::{solve_value_iteration, ViConfig};

pub const DEFAULT_HORIZON: usize = 200;

/// One simulated episode. Observations and actions are indexed by decision
/// epoch; `states[t]` and `beliefs[t]` are what held at epoch `t`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutRecord {
    /// 0-based hidden states.
    pub states: Vec<usize>,
    /// 1-based observations; `observations[t]` was received entering epoch `t + 1`.
    pub observations: Vec<usize>,
    pub beliefs: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub stop_times: Vec<usize>,
    /// `rᵀπ_τ` at each stop, undiscounted.
    pub stop_rewards: Vec<f64>,
    /// `r(X_τ)` at each stop, for diagnostics.
    pub realized_rewards: Vec<f64>,
    pub discounted_reward: f64,
}

impl RolloutRecord {
    /// `Σ ρ^τ_i rᵀπ_τ_i` recomputed from the stored stops.
    pub fn recompute(&self, discount: f64) -> f64 {
        self.stop_times
            .iter()
            .zip(&self.stop_rewards)
            .map(|(&t, &r)| discount.powi(t as i32) * r)
            .sum()
    }
}

/// Environment and policy randomness for one rollout. Keeping them apart
/// means the hidden path does not depend on the policy's coin flips.
pub struct RolloutStreams {
    pub environment: StreamRng,
    pub policy: StreamRng,
}

impl RolloutStreams {
    pub fn new(seed: u64, index: u64) -> Self {
        Self {
            environment: tagged(seed, index, Purpose::Environment),
            policy: tagged(seed, index, Purpose::Policy),
        }
    }
}

fn check_compatible(model: &PomdpModel, policy: &dyn Policy, budget: usize) -> Result<()> {
    if let Some(n) = policy.num_states() {
        if n != model.num_states() {
            return Err(Error::DimensionMismatch(format!(
                "policy `{}` expects {n} states, model has {}",
                policy.name(),
                model.num_states()
            )));
        }
    }
    if let Some(l) = policy.num_levels() {
        if l < budget {
            return Err(Error::LevelOutOfRange {
                level: budget,
                max: l,
            });
        }
    }
    Ok(())
}

/// Simulates one episode with the model's own stop budget.
pub fn rollout(
    model: &PomdpModel,
    policy: &dyn Policy,
    horizon: usize,
    streams: &mut RolloutStreams,
) -> Result<RolloutRecord> {
    rollout_with_budget(model, policy, model.num_stops(), horizon, streams)
}

/// Simulates one episode with an explicit stop budget, which may be 0.
pub fn rollout_with_budget(
    model: &PomdpModel,
    policy: &dyn Policy,
    budget: usize,
    horizon: usize,
    streams: &mut RolloutStreams,
) -> Result<RolloutRecord> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    check_compatible(model, policy, budget)?;
    let mut record = RolloutRecord::default();
    record.discounted_reward = run(model, policy, budget, horizon, streams, Some(&mut record));
    Ok(record)
}

fn run(
    model: &PomdpModel,
    policy: &dyn Policy,
    budget: usize,
    horizon: usize,
    streams: &mut RolloutStreams,
    mut log: Option<&mut RolloutRecord>,
) -> f64 {
    let n = model.num_states();
    let rho = model.discount();
    let r = model.reward_mine();
    let window = policy.observation_window();

    let mut belief = model.initial_belief().probs().to_vec();
    let mut next = vec![0.0; n];
    let mut recent: Vec<usize> = Vec::with_capacity(window + 1);
    let mut state = sample_index(&belief, &mut streams.environment);
    let mut stops = 0;
    let mut total = 0.0;
    let mut weight = 1.0;

    for t in 0..horizon {
        if stops >= budget {
            break;
        }
        let ctx = DecisionContext {
            belief: &belief,
            level: stops + 1,
            time: t,
            recent_obs: &recent,
        };
        let action = policy.act(&ctx, &mut streams.policy);
        if let Some(rec) = log.as_deref_mut() {
            rec.states.push(state);
            rec.beliefs.push(belief.clone());
            rec.actions.push(action);
        }
        if action == Action::Mine {
            let gain = dot(r, &belief);
            total += weight * gain;
            stops += 1;
            if let Some(rec) = log.as_deref_mut() {
                rec.stop_times.push(t);
                rec.stop_rewards.push(gain);
                rec.realized_rewards.push(r[state]);
            }
            if stops == budget {
                break;
            }
        }
        if t + 1 == horizon {
            break;
        }
        state = sample_index(model.transition().row(state), &mut streams.environment);
        let y = sample_index(model.observation().row(state), &mut streams.environment);
        let sigma = model.filter_into(&belief, y, &mut next);
        debug_assert!(sigma > 0.0);
        std::mem::swap(&mut belief, &mut next);
        if window > 0 {
            recent.insert(0, y + 1);
            recent.truncate(window);
        }
        if let Some(rec) = log.as_deref_mut() {
            rec.observations.push(y + 1);
        }
        weight *= rho;
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub rollouts: usize,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default)]
    pub execution: Execution,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 100_000,
            horizon: DEFAULT_HORIZON,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub rollouts: usize,
}

/// Sample mean and standard error of the discounted reward. Rollout `i`
/// always uses streams derived from `(seed, i)`, so the result does not
/// depend on the execution mode.
pub fn estimate_j(model: &PomdpModel, policy: &dyn Policy, config: &EvalConfig) -> Result<Estimate> {
    estimate_j_with_budget(model, policy, model.num_stops(), config)
}

pub fn estimate_j_with_budget(
    model: &PomdpModel,
    policy: &dyn Policy,
    budget: usize,
    config: &EvalConfig,
) -> Result<Estimate> {
    if config.rollouts == 0 {
        return Err(Error::InvalidInput("need at least one rollout".into()));
    }
    if config.horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    check_compatible(model, policy, budget)?;
    let samples = config.execution.map_indexed(config.rollouts, |i| {
        let mut streams = RolloutStreams::new(config.seed, i as u64);
        run(model, policy, budget, config.horizon, &mut streams, None)
    });
    Ok(summarize(&samples))
}

fn summarize(samples: &[f64]) -> Estimate {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let std_err = if n > 1 {
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Estimate {
        mean,
        std_err,
        rollouts: n,
    }
}

/// Mines at every epoch until the budget is spent.
#[derive(Clone, Copy, Debug, Default)]
pub struct FirstL;

impl Policy for FirstL {
    fn name(&self) -> String {
        "first-l".into()
    }

    fn act(&self, _ctx: &DecisionContext<'_>, _rng: &mut StreamRng) -> Action {
        Action::Mine
    }
}

pub fn baseline_first_l() -> FirstL {
    FirstL
}

/// Mines with a fixed probability at every epoch.
#[derive(Clone, Copy, Debug)]
pub struct RandomCoin {
    p_mine: f64,
}

impl RandomCoin {
    pub fn new(p_mine: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_mine) {
            return Err(Error::InvalidInput(format!("mining probability {p_mine} outside [0, 1]")));
        }
        Ok(Self { p_mine })
    }

    pub fn p_mine(&self) -> f64 {
        self.p_mine
    }
}

impl Policy for RandomCoin {
    fn name(&self) -> String {
        "random".into()
    }

    fn act(&self, _ctx: &DecisionContext<'_>, rng: &mut StreamRng) -> Action {
        if rng.gen::<f64>() < self.p_mine {
            Action::Mine
        } else {
            Action::Continue
        }
    }
}

pub fn baseline_random(p_mine: f64) -> Result<RandomCoin> {
    RandomCoin::new(p_mine)
}

/// Stochastic policy on the last `window` observations:
/// `p(u | W, l) ∝ exp(θ_{l,u} · W)`. Missing observations early in an
/// episode count as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxWindowPolicy {
    window: usize,
    num_stops: usize,
    /// Layout `[level][action][k]`, action 0 = continue, 1 = mine.
    params: Vec<f64>,
}

impl SoftmaxWindowPolicy {
    pub fn new(window: usize, num_stops: usize, params: Vec<f64>) -> Result<Self> {
        if window == 0 || num_stops == 0 {
            return Err(Error::InvalidInput("window and stop count must be positive".into()));
        }
        if params.len() != Self::param_len(window, num_stops) {
            return Err(Error::DimensionMismatch(format!(
                "softmax needs {} parameters, got {}",
                Self::param_len(window, num_stops),
                params.len()
            )));
        }
        Ok(Self {
            window,
            num_stops,
            params,
        })
    }

    pub fn zeros(window: usize, num_stops: usize) -> Self {
        Self::new(window, num_stops, vec![0.0; Self::param_len(window, num_stops)])
            .expect("positive sizes")
    }

    pub fn param_len(window: usize, num_stops: usize) -> usize {
        num_stops * 2 * window
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// `[p(continue), p(mine)]`.
    pub fn probabilities(&self, recent_obs: &[usize], level: usize) -> [f64; 2] {
        let score = |u: usize| {
            let base = ((level - 1) * 2 + u) * self.window;
            (0..self.window)
                .map(|k| self.params[base + k] * recent_obs.get(k).copied().unwrap_or(0) as f64)
                .sum::<f64>()
        };
        let p_mine = 1.0 / (1.0 + (score(0) - score(1)).exp());
        [1.0 - p_mine, p_mine]
    }
}

impl Policy for SoftmaxWindowPolicy {
    fn name(&self) -> String {
        "softmax".into()
    }

    fn act(&self, ctx: &DecisionContext<'_>, rng: &mut StreamRng) -> Action {
        let [_, p_mine] = self.probabilities(ctx.recent_obs, ctx.level);
        if rng.gen::<f64>() < p_mine {
            Action::Mine
        } else {
            Action::Continue
        }
    }

    fn num_levels(&self) -> Option<usize> {
        Some(self.num_stops)
    }

    fn observation_window(&self) -> usize {
        self.window
    }
}

pub fn baseline_softmax(window: usize, num_stops: usize) -> SoftmaxWindowPolicy {
    SoftmaxWindowPolicy::zeros(window, num_stops)
}

/// Trains the softmax baseline from zero parameters with the SPSA loop.
pub fn train_softmax_baseline(
    model: &PomdpModel,
    window: usize,
    config: &SpsaConfig,
) -> Result<(SoftmaxWindowPolicy, TrainingTrace)> {
    config.validate()?;
    model.ensure_valid()?;
    let template = SoftmaxWindowPolicy::zeros(window, model.num_stops());
    let eval = |seed: u64| EvalConfig {
        rollouts: config.rollouts_per_eval,
        horizon: config.horizon,
        seed,
        execution: config.execution,
    };
    let (params, trace) = train_params(template.params.clone(), config, |theta, seed| {
        let policy = SoftmaxWindowPolicy {
            params: theta.to_vec(),
            ..template.clone()
        };
        estimate_j(model, &policy, &eval(seed)).map(|e| e.mean)
    })?;
    Ok((SoftmaxWindowPolicy { params, ..template }, trace))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopsRow {
    pub num_stops: usize,
    pub value: f64,
    pub cost: f64,
    pub net: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopsReport {
    pub best: usize,
    pub rows: Vec<StopsRow>,
    /// Whether `L ↦ J_L` has non-positive second differences (1e-12 slack).
    pub value_concave: bool,
}

impl StopsReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("num_stops\tvalue\tcost\tnet\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.12e}\t{:.12e}\t{:.12e}", r.num_stops, r.value, r.cost, r.net);
        }
        s
    }
}

/// `Ω(L) = c·L²`.
pub fn quadratic_cost(c: f64) -> impl Fn(usize) -> f64 {
    move |l| c * (l * l) as f64
}

/// Picks `L ∈ 1..=l_max` maximizing `J_L(π₀) − Ω(L)`, where `J_L` is the
/// grid value-iteration value of `family(L)`. Ties go to the smaller `L`.
pub fn optimize_num_stops(
    family: impl Fn(usize) -> PomdpModel,
    cost: impl Fn(usize) -> f64,
    l_max: usize,
    resolution: usize,
    vi: &ViConfig,
) -> Result<StopsReport> {
    if l_max == 0 {
        return Err(Error::InvalidInput("l_max must be at least 1".into()));
    }
    let omega: Vec<f64> = (1..=l_max).map(&cost).collect();
    if omega.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidCost("cost must be finite".into()));
    }
    if omega.windows(2).any(|w| w[1] < w[0] - 1e-12) {
        return Err(Error::InvalidCost("cost must be non-decreasing in L".into()));
    }
    if omega.windows(3).any(|w| w[2] - 2.0 * w[1] + w[0] < -1e-12) {
        return Err(Error::InvalidCost("cost must be convex in L".into()));
    }
    let mut rows = Vec::with_capacity(l_max);
    let mut grid: Option<SimplexGrid> = None;
    for l in 1..=l_max {
        let model = family(l);
        if model.num_stops() != l {
            return Err(Error::InvalidInput(format!(
                "model family returned {} stops for L = {l}",
                model.num_stops()
            )));
        }
        let g = match grid.take() {
            Some(g) if g.dim() == model.num_states() => g,
            _ => SimplexGrid::new(model.num_states(), resolution)?,
        };
        let table = solve_value_iteration(&model, &g, vi)?;
        let value = table.value_at(model.initial_belief(), 1);
        rows.push(StopsRow {
            num_stops: l,
            value,
            cost: omega[l - 1],
            net: value - omega[l - 1],
        });
        grid = Some(g);
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.net > rows[best].net {
            best = i;
        }
    }
    let value_concave = rows
        .windows(3)
        .all(|w| w[2].value - 2.0 * w[1].value + w[0].value <= 1e-12);
    Ok(StopsReport {
        best: best + 1,
        rows,
        value_concave,
    })
}

/// One row of a policy comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonRow {
    pub policy: String,
    pub estimate: Estimate,
    pub seed: u64,
}

pub fn comparison_tsv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("policy\tmean_j\tstd_err\trollouts\tseed\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            r.policy, r.estimate.mean, r.estimate.std_err, r.estimate.rollouts, r.seed
        );
    }
    s
}

/// Samples a hidden path and its observations from the model without any
/// control. Returns 0-based states `X_0..X_{steps−1}` and the 0-based
/// observation drawn from each state.
pub fn sample_path(model: &PomdpModel, steps: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = tagged(seed, 0, Purpose::Environment);
    let mut states = Vec::with_capacity(steps);
    let mut obs = Vec::with_capacity(steps);
    if steps == 0 {
        return (states, obs);
    }
    let mut x = sample_index(model.initial_belief().probs(), &mut rng);
    for t in 0..steps {
        if t > 0 {
            x = sample_index(model.transition().row(x), &mut rng);
        }
        states.push(x);
        obs.push(sample_index(model.observation().row(x), &mut rng));
    }
    (states, obs)
}
