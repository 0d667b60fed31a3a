//! Repeated play: after each round the defender absorbs the observed
//! attack into its model and the attacker re-optimizes against it.

use serde::Serialize;

use crate::attacks::{build_optimal_det, AttackStrategy};
use crate::coeffs::{GridFunction, TimeVaryingMatrix};
use crate::error::{Error, Result};
use crate::evaluate::Evaluator;
use crate::io::Table;
use crate::model::SystemModel;
use crate::synthesis::{solve_det_attack, Context, GainSet};

pub const DEFAULT_ROUNDS: usize = 5;
pub const DEFAULT_ROUND_LAMBDA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub rho_sup: f64,
    pub tau_sup: f64,
    pub degradation: f64,
    pub stealthiness: f64,
    pub objective: f64,
    /// Largest change of the filter covariance against round 0.
    pub filter_change: f64,
}

#[derive(Debug)]
pub struct RoundFailure {
    pub round: usize,
    pub error: Error,
}

#[derive(Debug)]
pub struct RoundHistory {
    pub records: Vec<RoundRecord>,
    /// `models[k]` is the defender's model in force during round `k`
    /// (round 0 and round 1 share the original model).
    pub models: Vec<SystemModel>,
    pub failure: Option<RoundFailure>,
}

impl RoundHistory {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(
            ["round", "rho_sup", "tau_sup", "degradation", "stealthiness", "objective"]
                .map(String::from)
                .to_vec(),
        );
        for r in &self.records {
            t.push(vec![
                r.round as f64,
                r.rho_sup,
                r.tau_sup,
                r.degradation,
                r.stealthiness,
                r.objective,
            ]);
        }
        t
    }
}

/// Add node values of an attack path to a coefficient, sampled on the
/// attack's grid.
fn fold(coeff: &TimeVaryingMatrix, path: &GridFunction) -> Result<TimeVaryingMatrix> {
    let grid = *path.grid();
    let values = grid.nodes().zip(path.values()).map(|(t, p)| coeff.at(t) + p).collect();
    TimeVaryingMatrix::sampled(grid, values)
}

/// The defender's model after absorbing `(rho, tau)` into the drift and
/// observation offsets.
pub fn fold_attack(model: &SystemModel, rho: &GridFunction, tau: &GridFunction) -> Result<SystemModel> {
    Ok(SystemModel {
        drift_offset: fold(&model.drift_offset, rho)?,
        observation_offset: fold(&model.observation_offset, tau)?,
        ..model.clone()
    })
}

struct RoundOutcome {
    record: RoundRecord,
    rho: GridFunction,
    tau: GridFunction,
}

fn play(model: &SystemModel, round: usize, baseline_cov: Option<&GridFunction>) -> Result<(RoundOutcome, GridFunction)> {
    let ctx = Context::new(model.clone())?;
    let gains = GainSet::solve(&ctx)?;
    let ev = Evaluator::new(&ctx, &gains.filter, &gains.agent)?;
    let filter_change = baseline_cov.map_or(0.0, |c| c.max_abs_diff(&gains.filter.cov));
    let (rho, tau) = if round == 0 {
        AttackStrategy::Zero.paths(ctx.grid, ev.plan.dims())?
    } else {
        let det = solve_det_attack(&ctx, &gains.filter, &gains.agent)?;
        match build_optimal_det(&ctx, &gains.filter, &gains.agent, &det)?.0 {
            AttackStrategy::DeterministicPath { rho, tau } => (rho, tau),
            other => return Err(Error::Contract(format!("expected a fixed path, got {}", other.name()))),
        }
    };
    let report = ev.exact_objective(&rho, &tau)?;
    let record = RoundRecord {
        round,
        rho_sup: rho.sup_norm(),
        tau_sup: tau.sup_norm(),
        degradation: report.degradation,
        stealthiness: report.stealthiness,
        objective: report.objective,
        filter_change,
    };
    Ok((RoundOutcome { record, rho, tau }, gains.filter.cov))
}

/// Round 0 is the attack-free baseline; rounds `1..=n_rounds` each solve
/// the optimal deterministic attack against the current model and then
/// fold it in. A failing round stops the loop and is reported alongside
/// the rounds that completed.
pub fn run_rounds(model: &SystemModel, lambda: f64, n_rounds: usize) -> RoundHistory {
    let mut current = model.with_lambda(lambda);
    let mut history = RoundHistory {
        records: Vec::with_capacity(n_rounds + 1),
        models: vec![current.clone()],
        failure: None,
    };
    let mut baseline_cov = None;
    for round in 0..=n_rounds {
        let step = play(&current, round, baseline_cov.as_ref()).and_then(|(outcome, cov)| {
            let next = if round == 0 {
                current.clone()
            } else {
                fold_attack(&current, &outcome.rho, &outcome.tau)?
            };
            Ok((outcome.record, cov, next))
        });
        match step {
            Ok((record, cov, next)) => {
                history.records.push(record);
                baseline_cov.get_or_insert(cov);
                if round < n_rounds {
                    history.models.push(next.clone());
                }
                current = next;
            }
            Err(error) => {
                history.failure = Some(RoundFailure { round, error });
                break;
            }
        }
    }
    history
}
