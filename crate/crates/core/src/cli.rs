//! Command-line front end. A run is described by a [`RunConfig`] loaded
//! from TOML and overridden by flags; every subcommand writes plain CSV and
//! JSON under the output directory.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::attacks::{build_optimal_adaptive, build_optimal_det, AttackStrategy};
use crate::coeffs::{GridFunction, TimeGrid};
use crate::detect::{chi2_sf, detectability_residual};
use crate::error::{Error, Result};
use crate::evaluate::{mean_se, Evaluator, ObjectiveReport};
use crate::io::{config_hash, write_json, Table};
use crate::model::{preset, SystemModel, PRESET_NAMES};
use crate::multiround::{run_rounds, DEFAULT_ROUNDS, DEFAULT_ROUND_LAMBDA};
use crate::sim::{mean_path, simulate_batch, SimPlan};
use crate::synthesis::{solve_det_attack, Context, GainSet};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    OptimalDet,
    OptimalAdaptive,
    Zero,
    Gaussian,
    Sinusoid,
    Imported,
}

impl StrategyKind {
    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::OptimalDet => "optimal-det",
            StrategyKind::OptimalAdaptive => "optimal-adaptive",
            StrategyKind::Zero => "zero",
            StrategyKind::Gaussian => "gaussian",
            StrategyKind::Sinusoid => "sinusoid",
            StrategyKind::Imported => "imported",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    /// Defaults to the preset's path count.
    pub n_paths: Option<usize>,
    pub base_seed: Option<u64>,
    /// 0 uses every available core. Never affects results.
    pub workers: usize,
    /// Sample paths written individually by `simulate`.
    pub save_paths: usize,
    /// Paths averaged into the mean-path file by `simulate`.
    pub mean_paths: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_paths: None,
            base_seed: None,
            workers: 0,
            save_paths: 3,
            mean_paths: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSettings {
    pub chi2_window: usize,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self { chi2_window: 50 }
    }
}

/// Parameters of the heuristic comparison attacks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeuristicSettings {
    pub gaussian_std_rho: f64,
    pub gaussian_std_tau: f64,
    pub sinusoid_amplitude: f64,
    pub sinusoid_omega: f64,
}

impl Default for HeuristicSettings {
    fn default() -> Self {
        Self {
            gaussian_std_rho: 1.0,
            gaussian_std_tau: 1.0,
            sinusoid_amplitude: 1.0,
            sinusoid_omega: 8.0 * std::f64::consts::PI,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiroundSettings {
    pub rounds: usize,
    pub lambda: f64,
}

impl Default for MultiroundSettings {
    fn default() -> Self {
        Self {
            rounds: DEFAULT_ROUNDS,
            lambda: DEFAULT_ROUND_LAMBDA,
        }
    }
}

/// Everything a run depends on. Exactly one of `preset` and `model` names
/// the system; `model` is written inline in the same format presets
/// serialize to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub model: Option<SystemModel>,
    /// Empty means the model's own lambda.
    pub lambdas: Vec<f64>,
    pub strategies: Vec<StrategyKind>,
    pub attack_csv: Option<PathBuf>,
    pub mc: McSettings,
    pub detector: DetectorSettings,
    pub heuristics: HeuristicSettings,
    pub multiround: MultiroundSettings,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            model: None,
            lambdas: Vec::new(),
            strategies: vec![StrategyKind::OptimalDet],
            attack_csv: None,
            mc: McSettings::default(),
            detector: DetectorSettings::default(),
            heuristics: HeuristicSettings::default(),
            multiround: MultiroundSettings::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Parser)]
#[command(name = "stealthlqg", version, about = "Optimal stealthy attacks on partially observed LQG systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve filter, agent and attack gains and check the existence bound.
    Solve,
    /// Simulate sample paths for each strategy.
    Simulate,
    /// Degradation, stealthiness and detector statistics for each strategy.
    Evaluate,
    /// Repeated attacker/defender rounds.
    Multiround,
    /// Built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioAction {
    List,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub chi2_window: Option<usize>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub strategy: Option<Vec<StrategyKind>>,
    /// Attack path file for the `imported` strategy.
    #[arg(long, global = true)]
    pub attack_csv: Option<PathBuf>,
    #[arg(long, global = true)]
    pub rounds: Option<usize>,
    #[arg(long, global = true)]
    pub save_paths: Option<usize>,
}

impl Flags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(p) = &self.preset {
            cfg.preset = Some(p.clone());
            cfg.model = None;
        }
        if let Some(l) = &self.lambda {
            cfg.lambdas = l.clone();
        }
        if let Some(n) = self.paths {
            cfg.mc.n_paths = Some(n);
        }
        if let Some(s) = self.seed {
            cfg.mc.base_seed = Some(s);
        }
        if let Some(w) = self.workers {
            cfg.mc.workers = w;
        }
        if let Some(w) = self.chi2_window {
            cfg.detector.chi2_window = w;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = &self.strategy {
            cfg.strategies = s.clone();
        }
        if let Some(p) = &self.attack_csv {
            cfg.attack_csv = Some(p.clone());
        }
        if let Some(r) = self.rounds {
            cfg.multiround.rounds = r;
        }
        if let Some(n) = self.save_paths {
            cfg.mc.save_paths = n;
        }
    }
}

/// A configuration with the model, path count and seed pinned down.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub config: RunConfig,
    pub model: SystemModel,
    pub n_paths: usize,
    pub base_seed: u64,
    pub hash: String,
}

/// The part of a run that determines its outputs; worker count and the
/// output location are deliberately absent.
#[derive(Serialize)]
struct HashedInputs<'a> {
    model: &'a SystemModel,
    lambdas: &'a [f64],
    strategies: &'a [StrategyKind],
    attack_csv_sha256: Option<String>,
    n_paths: usize,
    base_seed: u64,
    save_paths: usize,
    mean_paths: usize,
    detector: &'a DetectorSettings,
    heuristics: &'a HeuristicSettings,
    multiround: &'a MultiroundSettings,
}

pub fn resolve(mut config: RunConfig) -> Result<ResolvedRun> {
    let (model, defaults) = match (&config.preset, &config.model) {
        (Some(_), Some(_)) => return Err(Error::Config("give either `preset` or `model`, not both".into())),
        (None, None) => return Err(Error::Config("no model: set `preset` or `model`".into())),
        (Some(name), None) => {
            let p = preset(name)?;
            (p.model, Some((p.mc_paths, p.base_seed)))
        }
        (None, Some(m)) => (m.clone(), None),
    };
    let violations = model.validate();
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    if config.lambdas.is_empty() {
        config.lambdas = vec![model.lambda];
    }
    if let Some(bad) = config.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("lambda must be finite and nonnegative, got {bad}")));
    }
    if config.strategies.is_empty() {
        return Err(Error::Config("no strategies selected".into()));
    }
    if config.strategies.contains(&StrategyKind::Imported) && config.attack_csv.is_none() {
        return Err(Error::Config("the imported strategy needs `attack_csv`".into()));
    }
    if config.detector.chi2_window == 0 || config.detector.chi2_window > model.n_steps {
        return Err(Error::Window {
            window: config.detector.chi2_window,
            n_steps: model.n_steps,
        });
    }
    let n_paths = config
        .mc
        .n_paths
        .or(defaults.map(|d| d.0))
        .unwrap_or(crate::model::preset("1d-mean-revert")?.mc_paths);
    let base_seed = config
        .mc
        .base_seed
        .or(defaults.map(|d| d.1))
        .unwrap_or(crate::model::preset("1d-mean-revert")?.base_seed);
    let attack_csv_sha256 = match &config.attack_csv {
        Some(p) if config.strategies.contains(&StrategyKind::Imported) => Some(config_hash(
            &fs::read(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
        )),
        _ => None,
    };
    let hash = config_hash(
        serde_json::to_string(&HashedInputs {
            model: &model,
            lambdas: &config.lambdas,
            strategies: &config.strategies,
            attack_csv_sha256,
            n_paths,
            base_seed,
            save_paths: config.mc.save_paths,
            mean_paths: config.mc.mean_paths,
            detector: &config.detector,
            heuristics: &config.heuristics,
            multiround: &config.multiround,
        })?
        .as_bytes(),
    );
    Ok(ResolvedRun {
        config,
        model,
        n_paths,
        base_seed,
        hash,
    })
}

/// Exit status for an error: 2 for configuration and validation problems,
/// 1 for numerical failures and everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidModel(_)
        | Error::UnknownPreset(_)
        | Error::Format(_)
        | Error::Window { .. } => 2,
        _ => 1,
    }
}

#[derive(Serialize)]
struct ErrorReport<'a> {
    exit_code: i32,
    kind: &'a str,
    message: String,
    violations: Vec<String>,
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain { .. } => "domain",
        Error::Shape(_) => "shape",
        Error::Singular(_) => "singular",
        Error::NonFinite { .. } => "non-finite",
        Error::Divergence { .. } => "divergence",
        Error::InvalidModel(_) => "invalid-model",
        Error::UnknownPreset(_) => "unknown-preset",
        Error::Config(_) => "config",
        Error::Contract(_) => "contract",
        Error::Unsupported(_) => "unsupported",
        Error::Window { .. } => "window",
        Error::Path { source, .. } => error_kind(source),
        Error::Format(_) => "format",
        Error::Io(_) => "io",
    }
}

fn report_error(e: &Error, out: Option<&Path>) -> i32 {
    let code = exit_code(e);
    let report = ErrorReport {
        exit_code: code,
        kind: error_kind(e),
        message: e.to_string(),
        violations: match e {
            Error::InvalidModel(v) => v.clone(),
            _ => Vec::new(),
        },
    };
    if let Ok(text) = crate::io::to_json(&report) {
        eprint!("{text}");
    }
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = write_json(&dir.join("error.json"), &report);
        }
    }
    code
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Command::Scenario {
        action: ScenarioAction::List,
    } = cli.command
    {
        for name in PRESET_NAMES {
            let p = preset(name).expect("listed presets exist");
            println!("{name}\t{}", p.description);
        }
        return 0;
    }
    let mut config = match &cli.flags.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => return report_error(&e, cli.flags.out.as_deref()),
        },
        None => RunConfig::default(),
    };
    cli.flags.apply(&mut config);
    if let (Command::Multiround, Some(l)) = (&cli.command, &cli.flags.lambda) {
        // for rounds the flag names the single trade-off weight
        config.multiround.lambda = l[0];
    }
    let out = config.out.clone();
    let result = resolve(config).and_then(|run| {
        fs::create_dir_all(&run.config.out)?;
        match cli.command {
            Command::Solve => cmd_solve(&run),
            Command::Simulate => cmd_simulate(&run),
            Command::Evaluate => cmd_evaluate(&run),
            Command::Multiround => cmd_multiround(&run),
            Command::Scenario { .. } => unreachable!("handled above"),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => report_error(&e, Some(&out)),
    }
}

fn lambda_dir(run: &ResolvedRun, lambda: f64) -> Result<PathBuf> {
    let dir = run.config.out.join(format!("lambda-{lambda}"));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Model, context and gains at one lambda.
struct Solved {
    ctx: Context,
    gains: GainSet,
}

impl Solved {
    fn new(run: &ResolvedRun, lambda: f64) -> Result<Self> {
        let ctx = Context::new(run.model.with_lambda(lambda))?;
        let gains = GainSet::solve(&ctx)?;
        Ok(Self { ctx, gains })
    }

    fn grid(&self) -> TimeGrid {
        self.ctx.grid
    }

    fn dims(&self) -> (usize, usize) {
        (self.ctx.dim(), self.ctx.model.obs_dim())
    }
}

/// A strategy ready to run, with the model's own prediction of its full
/// objective when one exists.
struct Built {
    strategy: AttackStrategy,
    predicted_objective: Option<f64>,
}

fn build(run: &ResolvedRun, s: &Solved, kind: StrategyKind) -> Result<Built> {
    let (ctx, g) = (&s.ctx, &s.gains);
    let h = &run.config.heuristics;
    let (strategy, predicted_objective) = match kind {
        StrategyKind::OptimalDet => {
            let det = solve_det_attack(ctx, &g.filter, &g.agent).map_err(|e| e.with_bound(g.bound))?;
            (build_optimal_det(ctx, &g.filter, &g.agent, &det)?.0, None)
        }
        StrategyKind::OptimalAdaptive => {
            let a = build_optimal_adaptive(ctx, &g.filter, &g.agent)?;
            let predicted = a.full_objective(ctx, &g.filter);
            (a.strategy, Some(predicted))
        }
        StrategyKind::Zero => (AttackStrategy::Zero, None),
        StrategyKind::Gaussian => (
            AttackStrategy::GaussianWhite {
                std_rho: h.gaussian_std_rho,
                std_tau: h.gaussian_std_tau,
                seed_offset: 1,
            },
            None,
        ),
        StrategyKind::Sinusoid => (
            AttackStrategy::Sinusoid {
                amplitude: h.sinusoid_amplitude,
                omega: h.sinusoid_omega,
            },
            None,
        ),
        StrategyKind::Imported => {
            let path = run.config.attack_csv.as_ref().expect("checked in resolve");
            (AttackStrategy::read_csv(path, s.grid(), s.dims())?, None)
        }
    };
    Ok(Built {
        strategy,
        predicted_objective,
    })
}

#[derive(Serialize)]
struct BoundReport {
    lambda: f64,
    horizon: f64,
    existence_bound: f64,
    beyond_bound: bool,
}

pub fn cmd_solve(run: &ResolvedRun) -> Result<()> {
    for &lambda in &run.config.lambdas {
        let s = Solved::new(run, lambda)?;
        let dir = lambda_dir(run, lambda)?;
        let grid = s.grid();
        let (f, g) = (&s.gains.filter, &s.gains.agent);
        let bound = BoundReport {
            lambda,
            horizon: s.ctx.model.horizon,
            existence_bound: s.gains.bound,
            beyond_bound: s.gains.beyond_bound(&s.ctx),
        };
        write_json(&dir.join("bound.json"), &bound)?;
        if bound.beyond_bound {
            eprintln!(
                "warning: horizon {} reaches the sufficient existence bound {:.4} at lambda {lambda}",
                bound.horizon, bound.existence_bound
            );
        }
        Table::from_grid(&grid, &[("R", &f.cov)])?.write_csv(&dir.join("R.csv"), &run.hash)?;
        Table::from_grid(&grid, &[("F", &g.feedback), ("f", &g.offset)])?
            .write_csv(&dir.join("agent.csv"), &run.hash)?;
        let det = solve_det_attack(&s.ctx, f, g).map_err(|e| e.with_bound(s.gains.bound))?;
        Table::from_grid(
            &grid,
            &[
                ("rho_aware", &det.rho_aware),
                ("rho_agent", &det.rho_agent),
                ("tau_aware", &det.tau_aware),
                ("tau_agent", &det.tau_agent),
                ("rho_offset", &det.rho_offset),
                ("tau_offset", &det.tau_offset),
            ],
        )?
        .write_csv(&dir.join("det_gains.csv"), &run.hash)?;
        if run.config.strategies.contains(&StrategyKind::OptimalAdaptive) {
            let a = build_optimal_adaptive(&s.ctx, f, g)?;
            let law = a.law();
            Table::from_grid(
                &grid,
                &[
                    ("quadratic", &law.gains.quadratic),
                    ("linear", &law.gains.linear),
                    ("constant", &law.gains.constant),
                    ("tau", &law.gains.tau),
                ],
            )?
            .write_csv(&dir.join("adaptive_gains.csv"), &run.hash)?;
            write_json(
                &dir.join("adaptive_value.json"),
                &AdaptiveValue {
                    value: a.value,
                    full_objective: a.full_objective(&s.ctx, f),
                },
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct AdaptiveValue {
    value: f64,
    full_objective: f64,
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    strategy: &'a str,
    lambda: f64,
    n_paths: usize,
    base_seed: u64,
    saved_paths: usize,
    mean_paths: usize,
    /// Mean of the state at the horizon over all simulated paths.
    terminal_state_mean: Vec<f64>,
}

pub fn cmd_simulate(run: &ResolvedRun) -> Result<()> {
    for &lambda in &run.config.lambdas {
        let s = Solved::new(run, lambda)?;
        let plan = SimPlan::new(&s.ctx, &s.gains.filter, &s.gains.agent)?;
        for &kind in &run.config.strategies {
            let b = build(run, &s, kind)?;
            let dir = lambda_dir(run, lambda)?.join(kind.label());
            fs::create_dir_all(&dir)?;
            let saved = run.config.mc.save_paths.min(run.n_paths);
            let averaged = run.config.mc.mean_paths.min(run.n_paths);
            let keep = saved.max(averaged);
            let workers = run.config.mc.workers;
            let bundles = simulate_batch(&plan, &b.strategy, keep, run.base_seed, workers, |_, b| Ok(b.clone()))?;
            for (i, bundle) in bundles.iter().take(saved).enumerate() {
                bundle
                    .to_table(&s.ctx.grid)?
                    .write_csv(&dir.join(format!("path-{i:04}.csv")), &run.hash)?;
            }
            if averaged > 0 {
                let subset = &bundles[..averaged];
                let to_grid = |v: Vec<crate::coeffs::Vector>| {
                    GridFunction::new(
                        s.ctx.grid,
                        v.into_iter()
                            .map(|x| crate::coeffs::Mat::from_column_slice(x.len(), 1, x.as_slice()))
                            .collect(),
                    )
                };
                let x = to_grid(mean_path(subset, |b| &b.state))?;
                let xa = to_grid(mean_path(subset, |b| &b.agent_filter))?;
                let xc = to_grid(mean_path(subset, |b| &b.aware_filter))?;
                Table::from_grid(&s.ctx.grid, &[("x", &x), ("xa", &xa), ("xc", &xc)])?
                    .write_csv(&dir.join("mean.csv"), &run.hash)?;
            }
            drop(bundles);
            let n = s.ctx.grid.n_steps;
            let terminal: Vec<Vec<f64>> = if run.n_paths == 0 {
                Vec::new()
            } else {
                simulate_batch(&plan, &b.strategy, run.n_paths, run.base_seed, workers, |_, b| {
                    Ok(b.state[n].as_slice().to_vec())
                })?
            };
            let terminal_state_mean = if terminal.is_empty() {
                Vec::new()
            } else {
                (0..s.ctx.dim())
                    .map(|i| mean_se(&terminal.iter().map(|x| x[i]).collect::<Vec<_>>()).0)
                    .collect()
            };
            write_json(
                &dir.join("summary.json"),
                &SimulationSummary {
                    strategy: kind.label(),
                    lambda,
                    n_paths: run.n_paths,
                    base_seed: run.base_seed,
                    saved_paths: saved,
                    mean_paths: averaged,
                    terminal_state_mean,
                },
            )?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluationReport<'a> {
    strategy: &'a str,
    lambda: f64,
    exact: Option<ObjectiveReport>,
    monte_carlo: Option<ObjectiveReport>,
    /// Full objective predicted by the value function (adaptive only).
    predicted_objective: Option<f64>,
}

#[derive(Serialize)]
struct Chi2Summary {
    window: usize,
    dof: usize,
    windows_per_path: usize,
    mean_statistic: f64,
    mean_statistic_se: f64,
    /// Fraction of windows with p-value below 0.05.
    rejection_rate: f64,
}

#[derive(Serialize)]
struct DetectionSummary<'a> {
    strategy: &'a str,
    lambda: f64,
    /// Mean of the log-likelihood statistic over paths.
    mean_log_likelihood: Option<f64>,
    mean_log_likelihood_se: Option<f64>,
    chi2: Option<Chi2Summary>,
    /// Sup norm of the detectability residual (fixed-path attacks only).
    residual_sup: Option<f64>,
}

fn sweep_header() -> Vec<String> {
    [
        "lambda",
        "monte_carlo",
        "degradation",
        "degradation_se",
        "stealthiness",
        "stealthiness_se",
        "rho_energy",
        "rho_energy_se",
        "objective",
        "objective_se",
    ]
    .map(String::from)
    .to_vec()
}

fn sweep_row(r: &ObjectiveReport) -> Vec<f64> {
    let se = |x: Option<f64>| x.unwrap_or(0.0);
    vec![
        r.lambda,
        if r.n_paths.is_some() { 1.0 } else { 0.0 },
        r.degradation,
        se(r.degradation_se),
        r.stealthiness,
        se(r.stealthiness_se),
        r.rho_energy,
        se(r.rho_energy_se),
        r.objective,
        se(r.objective_se),
    ]
}

pub fn cmd_evaluate(run: &ResolvedRun) -> Result<()> {
    let mut sweeps: Vec<(StrategyKind, Table)> =
        run.config.strategies.iter().map(|k| (*k, Table::new(sweep_header()))).collect();
    let window = run.config.detector.chi2_window;
    for &lambda in &run.config.lambdas {
        let s = Solved::new(run, lambda)?;
        let ev = Evaluator::new(&s.ctx, &s.gains.filter, &s.gains.agent)?;
        for (kind, sweep) in sweeps.iter_mut() {
            let b = build(run, &s, *kind)?;
            let dir = lambda_dir(run, lambda)?.join(kind.label());
            fs::create_dir_all(&dir)?;
            let fixed = match &b.strategy {
                AttackStrategy::Zero | AttackStrategy::DeterministicPath { .. } | AttackStrategy::Sinusoid { .. } => {
                    Some(b.strategy.paths(s.grid(), s.dims())?)
                }
                _ => None,
            };
            let exact = fixed.as_ref().map(|(rho, tau)| ev.exact_objective(rho, tau)).transpose()?;
            let residual_sup = match &fixed {
                Some((rho, tau)) => match detectability_residual(&s.ctx, rho, tau) {
                    Ok(r) => Some(r.sup_norm()),
                    Err(Error::Unsupported(_)) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            let (monte_carlo, chi2, ll) = if run.n_paths > 0 {
                let paths = ev.mc_paths(&b.strategy, run.n_paths, run.base_seed, run.config.mc.workers, Some(window))?;
                let report = ev.report(&paths, run.base_seed);
                let stats: Vec<f64> = paths.iter().flat_map(|p| p.chi2.iter().copied()).collect();
                let dof = window * s.ctx.model.obs_dim();
                let (mean, se) = mean_se(&stats);
                let rejected = stats.iter().filter(|x| chi2_sf(**x, dof) < 0.05).count();
                let chi2 = Chi2Summary {
                    window,
                    dof,
                    windows_per_path: paths[0].chi2.len(),
                    mean_statistic: mean,
                    mean_statistic_se: se,
                    rejection_rate: rejected as f64 / stats.len() as f64,
                };
                let ll = (report.stealthiness, report.stealthiness_se);
                (Some(report), Some(chi2), Some(ll))
            } else {
                (None, None, None)
            };
            if let Some(r) = &exact {
                sweep.push(sweep_row(r));
            }
            if let Some(r) = &monte_carlo {
                sweep.push(sweep_row(r));
            }
            write_json(
                &dir.join("report.json"),
                &EvaluationReport {
                    strategy: kind.label(),
                    lambda,
                    exact,
                    monte_carlo,
                    predicted_objective: b.predicted_objective,
                },
            )?;
            write_json(
                &dir.join("detection.json"),
                &DetectionSummary {
                    strategy: kind.label(),
                    lambda,
                    mean_log_likelihood: ll.map(|x| x.0),
                    mean_log_likelihood_se: ll.and_then(|x| x.1),
                    chi2,
                    residual_sup,
                },
            )?;
        }
    }
    for (kind, sweep) in &sweeps {
        sweep.write_csv(&run.config.out.join(format!("sweep-{}.csv", kind.label())), &run.hash)?;
    }
    Ok(())
}

pub fn cmd_multiround(run: &ResolvedRun) -> Result<()> {
    let settings = &run.config.multiround;
    let history = run_rounds(&run.model, settings.lambda, settings.rounds);
    history
        .to_table()
        .write_csv(&run.config.out.join("multiround.csv"), &run.hash)?;
    match history.failure {
        Some(f) => {
            eprintln!("round {} failed; {} rounds written", f.round, history.records.len());
            Err(f.error)
        }
        None => Ok(()),
    }
}
