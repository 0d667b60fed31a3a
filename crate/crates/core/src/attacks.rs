//! Attack strategies and the constructors for the optimal ones.

use std::path::Path;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::coeffs::{GridFunction, Mat, TimeGrid, Vector};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::ode::{integrate, Direction, OdeProblem};
use crate::synthesis::{
    adaptive_value, solve_adaptive_rho, solve_adaptive_tau, solve_f_phi_c_phi, AdaptiveTauGains, AgentGains,
    CompletedRhoGains, Context, DetAttackGains, FilterGains,
};

/// Filtered quantities a feedback strategy reacts to.
#[derive(Clone, Copy, Debug)]
pub struct FilterState<'a> {
    pub aware: &'a Vector,
    pub agent: &'a Vector,
    pub discrepancy: &'a Vector,
}

/// Linear feedback on `phi = (x_c, x_a, dx)` through the value function
/// `phi^T Fq phi / 2 + phi^T fl + c`, plus a deterministic observation attack.
#[derive(Clone, Debug)]
pub struct FeedbackLaw {
    pub gains: CompletedRhoGains,
    /// `P^-1` at the nodes.
    pub p_inv: GridFunction,
}

#[derive(Clone, Debug)]
pub enum AttackStrategy {
    Zero,
    DeterministicPath {
        rho: GridFunction,
        tau: GridFunction,
    },
    /// Independent unit normals per component and per step, held constant
    /// over the step and multiplied by the given standard deviations.
    GaussianWhite {
        std_rho: f64,
        std_tau: f64,
        seed_offset: u64,
    },
    /// `rho = amplitude sin(omega t) 1`, `tau = -amplitude sin(omega t) 1`.
    Sinusoid {
        amplitude: f64,
        omega: f64,
    },
    AdaptiveFeedback(Box<FeedbackLaw>),
}

impl AttackStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AttackStrategy::Zero => "zero",
            AttackStrategy::DeterministicPath { .. } => "deterministic-path",
            AttackStrategy::GaussianWhite { .. } => "gaussian",
            AttackStrategy::Sinusoid { .. } => "sinusoid",
            AttackStrategy::AdaptiveFeedback(_) => "adaptive-feedback",
        }
    }

    /// True when the attack does not depend on the realized path.
    pub fn is_deterministic(&self) -> bool {
        matches!(
            self,
            AttackStrategy::Zero | AttackStrategy::DeterministicPath { .. } | AttackStrategy::Sinusoid { .. }
        )
    }

    pub fn needs_draws(&self) -> bool {
        matches!(self, AttackStrategy::GaussianWhite { .. })
    }

    /// Attack at node `k` (time `t`). `dims` is `(state, observation)`.
    /// Feedback strategies require `state`; the Gaussian strategy draws
    /// from `rng`.
    pub fn eval(
        &self,
        dims: (usize, usize),
        k: usize,
        t: f64,
        state: Option<FilterState<'_>>,
        rng: &mut dyn RngCore,
    ) -> Result<(Vector, Vector)> {
        let (d, m) = dims;
        Ok(match self {
            AttackStrategy::Zero => (Vector::zeros(d), Vector::zeros(m)),
            AttackStrategy::DeterministicPath { rho, tau } => (rho.vector(k), tau.vector(k)),
            AttackStrategy::GaussianWhite { std_rho, std_tau, .. } => {
                let mut draw = |n: usize, s: f64| {
                    Vector::from_iterator(n, (0..n).map(|_| {
                        let z: f64 = StandardNormal.sample(&mut *rng);
                        s * z
                    }))
                };
                let rho = draw(d, *std_rho);
                (rho, draw(m, *std_tau))
            }
            AttackStrategy::Sinusoid { amplitude, omega } => {
                let v = amplitude * (omega * t).sin();
                (Vector::from_element(d, v), Vector::from_element(m, -v))
            }
            AttackStrategy::AdaptiveFeedback(law) => {
                let s = state.ok_or_else(|| {
                    Error::Contract("adaptive feedback evaluated without filter state".into())
                })?;
                (law.rho(k, s), law.gains.tau.vector(k))
            }
        })
    }

    /// Attack paths for deterministic strategies, sampled on `grid`.
    pub fn paths(&self, grid: TimeGrid, dims: (usize, usize)) -> Result<(GridFunction, GridFunction)> {
        let (d, m) = dims;
        match self {
            AttackStrategy::Zero => Ok((GridFunction::zeros(grid, d, 1), GridFunction::zeros(grid, m, 1))),
            AttackStrategy::DeterministicPath { rho, tau } => {
                if rho.grid() != &grid || tau.grid() != &grid {
                    return Err(Error::Shape("attack path lives on a different grid".into()));
                }
                Ok((rho.clone(), tau.clone()))
            }
            AttackStrategy::Sinusoid { amplitude, omega } => {
                let s = |t: f64| amplitude * (omega * t).sin();
                Ok((
                    GridFunction::from_fn(grid, |t| Mat::from_element(d, 1, s(t))),
                    GridFunction::from_fn(grid, |t| Mat::from_element(m, 1, -s(t))),
                ))
            }
            other => Err(Error::Contract(format!("{} attacks have no fixed path", other.name()))),
        }
    }

    /// Writes `t, rho_1.., tau_1..`.
    pub fn write_csv(&self, path: &Path, grid: TimeGrid, dims: (usize, usize), hash: &str) -> Result<()> {
        let (rho, tau) = self.paths(grid, dims)?;
        Table::from_grid(&grid, &[("rho", &rho), ("tau", &tau)])?.write_csv(path, hash)
    }

    /// Reads a deterministic attack from a CSV with a `t` column and
    /// `rho_i`, `tau_j` columns whose rows match the nodes of `grid`.
    pub fn read_csv(path: &Path, grid: TimeGrid, dims: (usize, usize)) -> Result<Self> {
        Self::from_table(&Table::read_csv(path)?, grid, dims)
    }

    pub fn from_table(table: &Table, grid: TimeGrid, dims: (usize, usize)) -> Result<Self> {
        let times = table.column("t").ok_or_else(|| Error::Format("attack CSV lacks a `t` column".into()))?;
        if times.len() != grid.len() {
            return Err(Error::Format(format!(
                "attack CSV has {} rows, the grid has {} nodes",
                times.len(),
                grid.len()
            )));
        }
        let tol = 1e-9 * grid.horizon.max(1.0);
        if let Some((k, t)) = times.iter().enumerate().find(|(k, t)| (grid.node(*k) - **t).abs() > tol) {
            return Err(Error::Format(format!("row {k}: t = {t} is not grid node {}", grid.node(k))));
        }
        let read = |prefix: &str, n: usize| -> Result<GridFunction> {
            let cols = (1..=n)
                .map(|i| {
                    table
                        .column(&format!("{prefix}_{i}"))
                        .ok_or_else(|| Error::Format(format!("attack CSV lacks `{prefix}_{i}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            GridFunction::new(
                grid,
                (0..grid.len())
                    .map(|k| Mat::from_iterator(n, 1, cols.iter().map(|c| c[k])))
                    .collect(),
            )
        };
        Ok(AttackStrategy::DeterministicPath {
            rho: read("rho", dims.0)?,
            tau: read("tau", dims.1)?,
        })
    }
}

impl FeedbackLaw {
    /// `-P^-1 (e_c + e_dx)^T (Fq phi + fl)` at node `k`.
    pub fn rho(&self, k: usize, s: FilterState<'_>) -> Vector {
        let d = s.aware.len();
        let mut phi = Vector::zeros(3 * d);
        phi.rows_mut(0, d).copy_from(s.aware);
        phi.rows_mut(d, d).copy_from(s.agent);
        phi.rows_mut(2 * d, d).copy_from(s.discrepancy);
        let grad = self.gains.quadratic.node(k) * phi + self.gains.linear.vector(k);
        let pushed = grad.rows(0, d) + grad.rows(2 * d, d);
        -(self.p_inv.node(k) * pushed)
    }
}

/// Closed-loop means of the true state `m_c` and of the agent's filter
/// `m_a` under the optimal deterministic attack.
#[derive(Clone, Debug)]
pub struct DetMeanPath {
    pub aware: GridFunction,
    pub agent: GridFunction,
}

impl DetMeanPath {
    /// `m_c - m_a`, which equals the filter discrepancy for deterministic
    /// attacks.
    pub fn discrepancy(&self) -> GridFunction {
        self.aware.map(|k, mc| mc - self.agent.node(k))
    }
}

/// The optimal deterministic attack as feedback on the means.
fn det_feedback(det: &DetAttackGains, pw_p_inv: &Mat, h: &Mat, r: &Mat, t: f64, mc: &Mat, ma: &Mat) -> (Mat, Mat) {
    let rho = -(pw_p_inv * (det.rho_aware.eval(t) * mc + det.rho_agent.eval(t) * ma + det.rho_offset.eval(t)));
    let g = det.tau_aware.eval(t) * mc + det.tau_agent.eval(t) * ma + det.tau_offset.eval(t);
    let tau = -(h * r * g) - h * (mc - ma);
    (rho, tau)
}

/// Integrates the closed-loop means forward from the prior mean and reads
/// the optimal deterministic attack off at the nodes.
pub fn build_optimal_det(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    det: &DetAttackGains,
) -> Result<(AttackStrategy, DetMeanPath)> {
    let d = ctx.dim();
    let x0 = &ctx.model.prior_mean;
    let split = |x: &Vector| {
        (
            Mat::from_column_slice(d, 1, &x.as_slice()[..d]),
            Mat::from_column_slice(d, 1, &x.as_slice()[d..]),
        )
    };
    let rhs = |t: f64, x: &Vector| -> Vector {
        let Ok(pw) = ctx.model.at(t) else {
            return Vector::from_element(x.len(), f64::NAN);
        };
        let (mc, ma) = split(x);
        let r = filter.cov.eval(t);
        let kalman = filter.kalman_gain.eval(t);
        let kf = &pw.k * agent.feedback.eval(t);
        let alpha = &pw.drift_offset - &pw.k * agent.offset.eval(t) * 0.5;
        let (rho, tau) = det_feedback(det, &pw.p_inv, &pw.h, &r, t, &mc, &ma);
        let innov = &pw.h * (&mc - &ma) + tau;
        let dmc = &pw.a * &mc - &kf * &ma + &alpha + rho;
        let dma = (&pw.a - &kf) * &ma + &alpha + kalman * innov;
        let mut out = Vector::zeros(2 * d);
        out.rows_mut(0, d).copy_from_slice(dmc.as_slice());
        out.rows_mut(d, d).copy_from_slice(dma.as_slice());
        out
    };
    let mut start = Vector::zeros(2 * d);
    start.rows_mut(0, d).copy_from_slice(x0.as_slice());
    start.rows_mut(d, d).copy_from_slice(x0.as_slice());
    let states = integrate(
        &OdeProblem {
            name: "deterministic attack means",
            grid: ctx.grid,
            direction: Direction::Forward,
            boundary: start,
            rhs: &rhs,
            layout: None,
        },
        &ctx.tableau,
    )?;
    let (mut aware, mut agent_mean, mut rho, mut tau) = (vec![], vec![], vec![], vec![]);
    for (k, t) in ctx.grid.nodes().enumerate() {
        let pw = ctx.model.at(t)?;
        let (mc, ma) = split(&states[k]);
        let (r, s) = det_feedback(det, &pw.p_inv, &pw.h, filter.cov.node(k), t, &mc, &ma);
        rho.push(r);
        tau.push(s);
        aware.push(mc);
        agent_mean.push(ma);
    }
    Ok((
        AttackStrategy::DeterministicPath {
            rho: GridFunction::new(ctx.grid, rho)?,
            tau: GridFunction::new(ctx.grid, tau)?,
        },
        DetMeanPath {
            aware: GridFunction::new(ctx.grid, aware)?,
            agent: GridFunction::new(ctx.grid, agent_mean)?,
        },
    ))
}

/// The optimal adaptive attack with the quantities needed to audit it.
#[derive(Clone, Debug)]
pub struct OptimalAdaptive {
    pub strategy: AttackStrategy,
    pub tau_gains: AdaptiveTauGains,
    /// Expected attacker cost from the initial state without the
    /// attack-independent `-lambda int Tr(Q R)` term.
    pub value: f64,
}

impl OptimalAdaptive {
    pub fn law(&self) -> &FeedbackLaw {
        match &self.strategy {
            AttackStrategy::AdaptiveFeedback(law) => law,
            _ => unreachable!("constructed as adaptive feedback"),
        }
    }

    /// `S - lambda D + energy` predicted by the value function.
    pub fn full_objective(&self, ctx: &Context, filter: &FilterGains) -> f64 {
        self.value - ctx.lambda() * filter.cost_trace
    }
}

/// Runs the hierarchical pipeline: quadratic value gains, then the optimal
/// observation attack, then the linear and constant value gains under it.
pub fn build_optimal_adaptive(ctx: &Context, filter: &FilterGains, agent: &AgentGains) -> Result<OptimalAdaptive> {
    let rho = solve_adaptive_rho(ctx, filter, agent)?;
    let tau_gains = solve_adaptive_tau(ctx, filter, agent, &rho)?;
    let gains = solve_f_phi_c_phi(ctx, filter, agent, &rho, &tau_gains.tau)?;
    let value = adaptive_value(&gains, &tau_gains.phi0);
    let mut p_inv = Vec::with_capacity(ctx.grid.len());
    for t in ctx.grid.nodes() {
        p_inv.push(ctx.model.at(t)?.p_inv);
    }
    let law = FeedbackLaw {
        gains,
        p_inv: GridFunction::new(ctx.grid, p_inv)?,
    };
    Ok(OptimalAdaptive {
        strategy: AttackStrategy::AdaptiveFeedback(Box::new(law)),
        tau_gains,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::preset;
    use crate::synthesis::{solve_det_attack, GainSet};
    use rand::SeedableRng;

    fn rng() -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(1)
    }

    fn det(model: crate::model::SystemModel) -> (Context, AttackStrategy, DetMeanPath) {
        let ctx = Context::new(model).unwrap();
        let g = GainSet::solve(&ctx).unwrap();
        let det = solve_det_attack(&ctx, &g.filter, &g.agent).unwrap();
        let (s, m) = build_optimal_det(&ctx, &g.filter, &g.agent, &det).unwrap();
        (ctx, s, m)
    }

    #[test]
    fn zero_strategy_is_zero() {
        let (r, t) = AttackStrategy::Zero.eval((2, 3), 0, 0.3, None, &mut rng()).unwrap();
        assert_eq!((r.norm(), t.norm(), t.len()), (0.0, 0.0, 3));
    }

    #[test]
    fn sinusoid_peak() {
        let s = AttackStrategy::Sinusoid {
            amplitude: 1.0,
            omega: 8.0 * std::f64::consts::PI,
        };
        let (r, t) = s.eval((1, 1), 0, 1.0 / 16.0, None, &mut rng()).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-15 && (t[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn feedback_without_state_is_a_contract_error() {
        let ctx = Context::new(preset("1d-mean-revert").unwrap().model).unwrap();
        let g = GainSet::solve(&ctx).unwrap();
        let a = build_optimal_adaptive(&ctx, &g.filter, &g.agent).unwrap();
        assert!(matches!(
            a.strategy.eval((1, 1), 0, 0.0, None, &mut rng()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_feedback_gains_give_zero_rho() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let law = FeedbackLaw {
            gains: CompletedRhoGains {
                quadratic: GridFunction::zeros(grid, 3, 3),
                linear: GridFunction::zeros(grid, 3, 1),
                constant: GridFunction::zeros(grid, 1, 1),
                tau: GridFunction::zeros(grid, 1, 1),
            },
            p_inv: GridFunction::from_fn(grid, |_| Mat::identity(1, 1)),
        };
        let x = Vector::from_element(1, 0.7);
        let s = FilterState {
            aware: &x,
            agent: &x,
            discrepancy: &x,
        };
        assert_eq!(law.rho(2, s).norm(), 0.0);
    }

    #[test]
    fn zero_lambda_det_attack_vanishes() {
        let (_, s, m) = det(preset("1d-mean-revert").unwrap().model.with_lambda(0.0));
        let AttackStrategy::DeterministicPath { rho, tau } = s else { panic!() };
        assert!(rho.sup_norm() <= 1e-8 && tau.sup_norm() <= 1e-8);
        assert!(m.discrepancy().sup_norm() <= 1e-12);
    }

    #[test]
    fn homogeneous_closed_loop_gives_zero_attack() {
        let mut model = preset("1d-mean-revert").unwrap().model;
        model.prior_mean = Mat::zeros(1, 1);
        let (_, s, m) = det(model);
        let AttackStrategy::DeterministicPath { rho, tau } = s else { panic!() };
        assert_eq!(rho.sup_norm() + tau.sup_norm(), 0.0);
        assert_eq!(m.aware.sup_norm(), 0.0);
    }

    #[test]
    fn means_start_at_prior_and_attack_is_nonzero() {
        let (ctx, s, m) = det(preset("1d-mean-revert").unwrap().model);
        assert_eq!(m.aware.node(0), &ctx.model.prior_mean);
        assert_eq!(m.agent.node(0), &ctx.model.prior_mean);
        let AttackStrategy::DeterministicPath { rho, tau } = s else { panic!() };
        assert!(rho.sup_norm() > 1e-3 && tau.sup_norm() > 1e-3);
    }

    #[test]
    fn csv_round_trip_preserves_paths() {
        let (ctx, s, _) = det(preset("2d-tracking").unwrap().model);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attack.csv");
        s.write_csv(&path, ctx.grid, (2, 2), "h").unwrap();
        let back = AttackStrategy::read_csv(&path, ctx.grid, (2, 2)).unwrap();
        let (AttackStrategy::DeterministicPath { rho: a, tau: b }, AttackStrategy::DeterministicPath { rho: c, tau: e }) =
            (&s, &back)
        else {
            panic!()
        };
        assert_eq!(a.max_abs_diff(c), 0.0);
        assert_eq!(b.max_abs_diff(e), 0.0);
    }

    #[test]
    fn csv_on_wrong_grid_is_rejected() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let text = "t,rho_1,tau_1\n0,0,0\n0.5,0,0\n1,0,0\n";
        let table = Table::parse(text).unwrap();
        assert!(AttackStrategy::from_table(&table, grid, (1, 1)).is_err());
        let grid = TimeGrid::new(1.0, 2).unwrap();
        assert!(AttackStrategy::from_table(&table, grid, (1, 1)).is_ok());
        assert!(AttackStrategy::from_table(&table, grid, (2, 1)).is_err());
    }
}
