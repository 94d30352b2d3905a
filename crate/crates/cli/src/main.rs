use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use minestop::data::{estimate_model, ingest, EstimationConfig};
use minestop::sim::{
    baseline_first_l, baseline_random, comparison_tsv, estimate_j, optimize_num_stops,
    quadratic_cost, rollout, train_softmax_baseline, ComparisonRow, EvalConfig, RolloutStreams,
    DEFAULT_HORIZON,
};
use minestop::spsa::{default_phi_init, train, SpsaConfig};
use minestop::vi::{describe_sets, solve_value_iteration, verify_structure, ValueTable, ViConfig};
use minestop::{fixtures, validate_model, Error, Execution, LinearThresholdPolicy, Policy, PomdpModel, SimplexGrid};

mod output;

use output::OutDir;

/// Exit status plus message. Code 1 is a failed check, code 2 is an I/O or
/// usage problem.
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn check(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidModel(_) | Error::InvalidCost(_) | Error::NonFinite { .. } | Error::ImpossibleObservation { .. } => 1,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Parser)]
#[command(name = "minestop", version, about = "Energy-aware mining as a multiple-stopping POMDP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file against the structural assumptions
    Validate(ValidateArgs),
    /// Grid value iteration, value table and structure report
    Solve(SolveArgs),
    /// Train the linear threshold policy with SPSA
    Train(TrainArgs),
    /// Monte Carlo comparison of policies
    Compare(CompareArgs),
    /// Estimate a model from a hash-rate / difficulty CSV
    Estimate(EstimateArgs),
    /// Pick the number of stops under a quadratic cost
    OptimizeStops(OptimizeArgs),
    /// Simulate rollouts of one policy and dump trajectories
    Simulate(SimulateArgs),
}

#[derive(Args, Serialize)]
struct Output {
    /// Output directory
    #[arg(long, short)]
    out: PathBuf,
    /// Overwrite existing outputs
    #[arg(long)]
    force: bool,
}

#[derive(Args, Serialize)]
struct ValidateArgs {
    model: PathBuf,
}

#[derive(Args, Serialize)]
struct GridArgs {
    /// Subdivisions per simplex axis
    #[arg(long = "grid", default_value_t = 30)]
    resolution: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
}

impl GridArgs {
    fn vi(&self, execution: Execution) -> ViConfig {
        ViConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            execution,
        }
    }
}

#[derive(Args, Serialize)]
struct SolveArgs {
    model: PathBuf,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    out: Output,
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum GainPreset {
    Synthetic,
    Bitcoin,
}

#[derive(Args, Serialize)]
struct SpsaArgs {
    /// Gain constants to start from
    #[arg(long, value_enum, default_value_t = GainPreset::Synthetic)]
    gains: GainPreset,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    varsigma: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    psi: Option<f64>,
    #[arg(long, default_value_t = 300)]
    iterations: usize,
    /// Rollouts per objective evaluation
    #[arg(long, default_value_t = 500)]
    eval_rollouts: usize,
    /// Draw independent rollouts for the two sides of a perturbation
    #[arg(long)]
    no_crn: bool,
}

impl SpsaArgs {
    fn config(&self, seed: u64, horizon: usize, execution: Execution) -> SpsaConfig {
        let base = match self.gains {
            GainPreset::Synthetic => fixtures::synthetic_gains(),
            GainPreset::Bitcoin => fixtures::bitcoin_gains(),
        };
        SpsaConfig {
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            varsigma: self.varsigma.unwrap_or(base.varsigma),
            kappa: self.kappa.unwrap_or(base.kappa),
            nu: self.nu.unwrap_or(base.nu),
            psi: self.psi.unwrap_or(base.psi),
            num_iterations: self.iterations,
            rollouts_per_eval: self.eval_rollouts,
            horizon,
            seed,
            common_random_numbers: !self.no_crn,
            execution,
        }
    }
}

#[derive(Args, Serialize)]
struct TrainArgs {
    model: PathBuf,
    #[command(flatten)]
    spsa: SpsaArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[command(flatten)]
    out: Output,
}

#[derive(Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum PolicyKind {
    Vi,
    Linear,
    Rl,
    Random,
    FirstL,
}

impl PolicyKind {
    fn label(self) -> &'static str {
        match self {
            PolicyKind::Vi => "vi",
            PolicyKind::Linear => "linear",
            PolicyKind::Rl => "rl",
            PolicyKind::Random => "random",
            PolicyKind::FirstL => "first-l",
        }
    }
}

#[derive(Args, Serialize)]
struct CompareArgs {
    model: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PolicyKind::Vi, PolicyKind::Linear, PolicyKind::Rl, PolicyKind::Random, PolicyKind::FirstL])]
    policies: Vec<PolicyKind>,
    #[arg(long, default_value_t = 100_000)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    /// Use this trained policy instead of training one
    #[arg(long)]
    linear_policy: Option<PathBuf>,
    /// Mining probability of the random baseline
    #[arg(long, default_value_t = 0.5)]
    p_mine: f64,
    /// Observation window of the softmax baseline
    #[arg(long, default_value_t = 2)]
    window: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    spsa: SpsaArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    csv: PathBuf,
    #[arg(long, default_value_t = 3)]
    states: usize,
    #[arg(long, default_value_t = 5)]
    obs: usize,
    #[arg(long, default_value_t = 0.9)]
    discount: f64,
    #[arg(long, default_value_t = 3)]
    stops: usize,
    #[command(flatten)]
    out: Output,
}

#[derive(Args, Serialize)]
struct OptimizeArgs {
    model: PathBuf,
    /// `c` in the stop cost `c·L²`
    #[arg(long, default_value_t = 0.005)]
    cost: f64,
    #[arg(long, default_value_t = 6)]
    lmax: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    out: Output,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = PolicyKind::FirstL)]
    policy: PolicyKind,
    /// Policy file, required for `linear`
    #[arg(long)]
    policy_file: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    rollouts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_HORIZON)]
    horizon: usize,
    #[arg(long, default_value_t = 0.5)]
    p_mine: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    out: Output,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Train(a) => cmd_train(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::OptimizeStops(a) => cmd_optimize_stops(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}

fn load_model(path: &Path) -> Result<PomdpModel, Failure> {
    Ok(PomdpModel::load(path)?)
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let report = validate_model(&model);
    print!("{report}");
    if report.all_passed() {
        Ok(())
    } else {
        Err(Failure::check(format!("{} failed validation", args.model.display())))
    }
}

fn solve(model: &PomdpModel, grid: &GridArgs, execution: Execution) -> Result<ValueTable, Failure> {
    let g = SimplexGrid::new(model.num_states(), grid.resolution)?;
    Ok(solve_value_iteration(model, &g, &grid.vi(execution))?)
}

fn execution(sequential: bool) -> Execution {
    if sequential {
        Execution::Sequential
    } else {
        Execution::default()
    }
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let out = OutDir::create(&args.out.out, args.out.force)?;
    let table = solve(&model, &args.grid, execution(args.sequential))?;
    let structure = verify_structure(&table);
    let mut summary = format!(
        "converged: {}\niterations: {}\nresidual: {:.3e}\nvalue at initial belief: {:.6}\n{}",
        table.converged,
        table.iterations,
        table.residual,
        table.value_at(model.initial_belief(), 1),
        describe_sets(&table),
    );
    summary.push_str(&structure.to_string());
    out.write("value_table.tsv", &table.to_tsv())?;
    out.write("structure.txt", &summary)?;
    out.write_metadata("solve", None, args)?;
    print!("{summary}");
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let out = OutDir::create(&args.out.out, args.out.force)?;
    let cfg = args.spsa.config(args.seed, args.horizon, Execution::default());
    let (policy, trace, phi) = match train(&model, &cfg, &default_phi_init(&model, args.seed)) {
        Ok(v) => v,
        Err(Error::NonFinite { iteration, what, trace }) => {
            out.write("trace.tsv", &trace.to_tsv())?;
            return Err(Failure::check(format!("training diverged at iteration {iteration}: {what}")));
        }
        Err(e) => return Err(e.into()),
    };
    out.write("policy.toml", &policy.to_toml_string())?;
    out.write("trace.tsv", &trace.to_tsv())?;
    out.write("phi.toml", &toml::to_string(&phi).map_err(|e| Failure::io(e.to_string()))?)?;
    out.write_metadata("train", Some(args.seed), args)?;
    println!(
        "trained {} iterations; final objective {:.6}",
        trace.len(),
        trace.records.last().map(|r| r.j).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    model.ensure_valid()?;
    let out = OutDir::create(&args.out.out, args.out.force)?;
    let eval = EvalConfig {
        rollouts: args.rollouts,
        horizon: args.horizon,
        seed: args.seed,
        execution: Execution::default(),
    };
    let spsa = args.spsa.config(args.seed, args.horizon, Execution::default());
    let mut rows = Vec::new();
    for &kind in &args.policies {
        let policy: Box<dyn Policy> = match kind {
            PolicyKind::Vi => Box::new(solve(&model, &args.grid, Execution::default())?),
            PolicyKind::Linear => match &args.linear_policy {
                Some(p) => Box::new(LinearThresholdPolicy::load(p)?),
                None => Box::new(train(&model, &spsa, &default_phi_init(&model, args.seed))?.0),
            },
            PolicyKind::Rl => Box::new(train_softmax_baseline(&model, args.window, &spsa)?.0),
            PolicyKind::Random => Box::new(baseline_random(args.p_mine)?),
            PolicyKind::FirstL => Box::new(baseline_first_l()),
        };
        rows.push(ComparisonRow {
            policy: kind.label().to_string(),
            estimate: estimate_j(&model, policy.as_ref(), &eval)?,
            seed: args.seed,
        });
    }
    let report = comparison_tsv(&rows);
    out.write("compare.tsv", &report)?;
    out.write_metadata("compare", Some(args.seed), args)?;
    print!("{report}");
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let ingested = ingest(&args.csv)?;
    let out = OutDir::create(&args.out.out, args.out.force)?;
    let cfg = EstimationConfig {
        num_states: args.states,
        num_obs: args.obs,
        discount: args.discount,
        num_stops: args.stops,
    };
    let (model, report) = estimate_model(&ingested, &cfg)?;
    out.write("model.toml", &model.to_toml_string())?;
    out.write("estimation_report.txt", &report.to_string())?;
    out.write_metadata("estimate", None, args)?;
    print!("{report}");
    if report.observation_is_tp2 {
        Ok(())
    } else {
        Err(Failure::check("observation matrix could not be fitted into the tp2 class"))
    }
}

fn cmd_optimize_stops(args: &OptimizeArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    let out = OutDir::create(&args.out.out, args.out.force)?;
    let report = optimize_num_stops(
        |l| model.with_num_stops(l),
        quadratic_cost(args.cost),
        args.lmax,
        args.grid.resolution,
        &args.grid.vi(Execution::default()),
    )?;
    let text = format!(
        "{}best_num_stops\t{}\nvalue_concave\t{}\n",
        report.to_tsv(),
        report.best,
        report.value_concave
    );
    out.write("stops.tsv", &report.to_tsv())?;
    out.write("stops_summary.txt", &text)?;
    out.write_metadata("optimize-stops", None, args)?;
    print!("{text}");
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let model = load_model(&args.model)?;
    model.ensure_valid()?;
    let out = OutDir::create(&args.out.out, args.out.force)?;
    let policy: Box<dyn Policy> = match args.policy {
        PolicyKind::Vi => Box::new(solve(&model, &args.grid, Execution::default())?),
        PolicyKind::Linear => {
            let path = args
                .policy_file
                .as_ref()
                .ok_or_else(|| Failure::io("--policy-file is required for the linear policy"))?;
            Box::new(LinearThresholdPolicy::load(path)?)
        }
        PolicyKind::Random => Box::new(baseline_random(args.p_mine)?),
        PolicyKind::FirstL => Box::new(baseline_first_l()),
        PolicyKind::Rl => return Err(Failure::io("simulate does not train the softmax baseline; use compare")),
    };
    let mut tsv = String::from("rollout\tt\tstate\tobservation\taction\tbelief\n");
    let mut summary = String::from("rollout\tdiscounted_reward\tstop_times\n");
    for i in 0..args.rollouts {
        let rec = rollout(&model, policy.as_ref(), args.horizon, &mut RolloutStreams::new(args.seed, i as u64))?;
        for t in 0..rec.actions.len() {
            let obs = if t == 0 { String::from("-") } else { rec.observations[t - 1].to_string() };
            let belief: Vec<String> = rec.beliefs[t].iter().map(|p| format!("{p:.6}")).collect();
            tsv.push_str(&format!(
                "{i}\t{t}\t{}\t{obs}\t{}\t{}\n",
                rec.states[t] + 1,
                rec.actions[t],
                belief.join(",")
            ));
        }
        let stops: Vec<String> = rec.stop_times.iter().map(|t| t.to_string()).collect();
        summary.push_str(&format!("{i}\t{:.9}\t{}\n", rec.discounted_reward, stops.join(",")));
    }
    out.write("trajectories.tsv", &tsv)?;
    out.write("rollouts.tsv", &summary)?;
    out.write_metadata("simulate", Some(args.seed), args)?;
    print!("{summary}");
    Ok(())
}
