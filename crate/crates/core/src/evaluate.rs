//! Objective evaluation. Deterministic attacks are evaluated exactly
//! through the Gaussian moments of (true state, agent filter); any
//! strategy can be evaluated by Monte Carlo.

use serde::Serialize;

use crate::attacks::AttackStrategy;
use crate::coeffs::{symmetrize, GridFunction, Mat, Vector};
use crate::detect::{chi2_detector, discrepancy_ode, LikelihoodScorer};
use crate::error::{Error, Result};
use crate::ode::{integrate, trapezoid, Direction, OdeProblem, StateLayout};
use crate::sim::{simulate_batch, SimPlan, TrajectoryBundle};
use crate::synthesis::{AgentGains, Context, FilterGains};

/// Mean and covariance of `(x_c, x_a)`.
#[derive(Clone, Debug)]
pub struct MomentState {
    /// 2d x 1
    pub mean: GridFunction,
    /// 2d x 2d; does not depend on the attack.
    pub cov: GridFunction,
}

impl MomentState {
    pub fn aware_mean(&self, k: usize) -> Mat {
        let d = self.mean.shape().0 / 2;
        self.mean.node(k).rows(0, d).into_owned()
    }

    pub fn agent_mean(&self, k: usize) -> Mat {
        let d = self.mean.shape().0 / 2;
        self.mean.node(k).rows(d, d).into_owned()
    }

    /// `m_c - m_a`, the filter discrepancy of a deterministic attack.
    pub fn discrepancy(&self) -> GridFunction {
        let d = self.mean.shape().0 / 2;
        self.mean.map(|_, m| m.rows(0, d) - m.rows(d, d))
    }
}

/// The four parts of the expected agent cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct DegradationTerms {
    pub state_trace: f64,
    pub state_mean: f64,
    pub control_trace: f64,
    pub control_mean: f64,
}

impl DegradationTerms {
    pub fn total(&self) -> f64 {
        self.state_trace + self.state_mean + self.control_trace + self.control_mean
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactQuadrature,
    MonteCarlo,
}

/// `objective = stealthiness - lambda degradation + rho_energy`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectiveReport {
    pub method: Method,
    pub lambda: f64,
    pub degradation: f64,
    pub degradation_se: Option<f64>,
    pub stealthiness: f64,
    pub stealthiness_se: Option<f64>,
    pub rho_energy: f64,
    pub rho_energy_se: Option<f64>,
    pub objective: f64,
    pub objective_se: Option<f64>,
    pub n_paths: Option<usize>,
    pub base_seed: Option<u64>,
}

/// What one Monte Carlo path contributes.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSummary {
    /// Left Riemann sum of the agent's running cost.
    pub degradation: f64,
    /// Log-likelihood under the attack that generated the path.
    pub log_likelihood: f64,
    /// Left Riemann sum of the stealthiness integrand.
    pub stealth_quadratic: f64,
    /// `1/2 sum rho^T P rho h`
    pub rho_energy: f64,
    pub chi2: Vec<f64>,
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug)]
struct CostNode {
    q: Mat,
    r: Mat,
    s: Mat,
    p: Mat,
}

/// Evaluates attacks against one solved model. The attack-independent
/// covariance is computed once at construction.
#[derive(Clone, Debug)]
pub struct Evaluator<'a> {
    pub ctx: &'a Context,
    pub filter: &'a FilterGains,
    pub agent: &'a AgentGains,
    pub cov: GridFunction,
    pub plan: SimPlan,
    pub scorer: LikelihoodScorer,
    costs: Vec<CostNode>,
}

impl<'a> Evaluator<'a> {
    pub fn new(ctx: &'a Context, filter: &'a FilterGains, agent: &'a AgentGains) -> Result<Self> {
        let mut costs = Vec::with_capacity(ctx.grid.len());
        for t in ctx.grid.nodes() {
            let pw = ctx.model.at(t)?;
            costs.push(CostNode {
                s: ctx.model.control_cost.at(t),
                p: ctx.model.attack_penalty.at(t),
                q: pw.q,
                r: pw.r,
            });
        }
        Ok(Self {
            cov: joint_covariance(ctx, filter, agent)?,
            plan: SimPlan::new(ctx, filter, agent)?,
            scorer: LikelihoodScorer::new(ctx),
            ctx,
            filter,
            agent,
            costs,
        })
    }

    pub fn moments(&self, rho: &GridFunction, tau: &GridFunction) -> Result<MomentState> {
        Ok(MomentState {
            mean: joint_mean(self.ctx, self.filter, self.agent, rho, tau)?,
            cov: self.cov.clone(),
        })
    }

    pub fn degradation_terms(&self, moments: &MomentState) -> DegradationTerms {
        let d = self.ctx.dim();
        let n = self.ctx.grid.len();
        let mut parts = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for k in 0..n {
            let c = &self.costs[k];
            let f = self.agent.feedback.node(k);
            let kw = self.agent.control_weight.node(k);
            let cov = moments.cov.node(k);
            let cc = cov.view((0, 0), (d, d));
            let aa = cov.view((d, d), (d, d));
            let ec = moments.aware_mean(k) - &c.r;
            let push = f * moments.agent_mean(k) + self.agent.offset.node(k) * 0.5;
            parts[0][k] = (&c.q * cc).trace();
            parts[1][k] = (ec.transpose() * &c.q * &ec)[(0, 0)];
            parts[2][k] = (f * kw * f * aa).trace();
            parts[3][k] = (push.transpose() * kw * &push)[(0, 0)];
        }
        let h = self.ctx.grid.step();
        DegradationTerms {
            state_trace: trapezoid(h, &parts[0]),
            state_mean: trapezoid(h, &parts[1]),
            control_trace: trapezoid(h, &parts[2]),
            control_mean: trapezoid(h, &parts[3]),
        }
    }

    /// Expected agent cost under a deterministic attack.
    pub fn exact_d(&self, rho: &GridFunction, tau: &GridFunction) -> Result<f64> {
        Ok(self.degradation_terms(&self.moments(rho, tau)?).total())
    }

    pub fn rho_energy(&self, rho: &GridFunction) -> f64 {
        let vals: Vec<f64> = (0..self.ctx.grid.len())
            .map(|k| 0.5 * (rho.node(k).transpose() * &self.costs[k].p * rho.node(k))[(0, 0)])
            .collect();
        trapezoid(self.ctx.grid.step(), &vals)
    }

    pub fn exact_objective(&self, rho: &GridFunction, tau: &GridFunction) -> Result<ObjectiveReport> {
        let moments = self.moments(rho, tau)?;
        let degradation = self.degradation_terms(&moments).total();
        let stealthiness = self.scorer.stealthiness_closed_form(&moments.discrepancy(), tau);
        let rho_energy = self.rho_energy(rho);
        let lambda = self.ctx.lambda();
        Ok(ObjectiveReport {
            method: Method::ExactQuadrature,
            lambda,
            degradation,
            degradation_se: None,
            stealthiness,
            stealthiness_se: None,
            rho_energy,
            rho_energy_se: None,
            objective: stealthiness - lambda * degradation + rho_energy,
            objective_se: None,
            n_paths: None,
            base_seed: None,
        })
    }

    /// Exact evaluation of a strategy with fixed paths.
    pub fn exact_strategy(&self, strategy: &AttackStrategy) -> Result<ObjectiveReport> {
        let (rho, tau) = strategy.paths(self.ctx.grid, self.plan.dims())?;
        self.exact_objective(&rho, &tau)
    }

    /// Discrepancy of a deterministic attack from its own equation.
    pub fn discrepancy(&self, rho: &GridFunction, tau: &GridFunction) -> Result<GridFunction> {
        discrepancy_ode(self.ctx, self.filter, rho, tau)
    }

    pub fn summarize(&self, b: &TrajectoryBundle, chi2_window: Option<usize>) -> Result<PathSummary> {
        let h = self.ctx.grid.step();
        let n = self.ctx.grid.n_steps;
        let mut degradation = 0.0;
        let mut energy = 0.0;
        for k in 0..n {
            let c = &self.costs[k];
            let e = Mat::from_column_slice(c.r.nrows(), 1, (&b.state[k] - Vector::from_column_slice(c.r.as_slice())).as_slice());
            let u = &b.control[k];
            degradation += (e.transpose() * &c.q * &e)[(0, 0)] + u.dot(&(&c.s * u));
            energy += 0.5 * b.rho[k].dot(&(&c.p * &b.rho[k]));
        }
        let chi2 = match chi2_window {
            Some(w) => chi2_detector(&b.innovation_increments, w, h)?
                .into_iter()
                .map(|w| w.statistic)
                .collect(),
            None => Vec::new(),
        };
        Ok(PathSummary {
            degradation: degradation * h,
            log_likelihood: self.scorer.self_score(b)?,
            stealth_quadratic: self.scorer.stealth_quadratic(b),
            rho_energy: energy * h,
            chi2,
        })
    }

    /// Per-path summaries in path order.
    pub fn mc_paths(
        &self,
        strategy: &AttackStrategy,
        n_paths: usize,
        base_seed: u64,
        workers: usize,
        chi2_window: Option<usize>,
    ) -> Result<Vec<PathSummary>> {
        if n_paths == 0 {
            return Err(Error::Config("Monte Carlo needs at least one path".into()));
        }
        if let Some(w) = chi2_window {
            if w == 0 || w > self.ctx.grid.n_steps {
                return Err(Error::Window {
                    window: w,
                    n_steps: self.ctx.grid.n_steps,
                });
            }
        }
        simulate_batch(&self.plan, strategy, n_paths, base_seed, workers, |_, b| {
            self.summarize(b, chi2_window)
        })
    }

    pub fn mc_objective(
        &self,
        strategy: &AttackStrategy,
        n_paths: usize,
        base_seed: u64,
        workers: usize,
    ) -> Result<ObjectiveReport> {
        let paths = self.mc_paths(strategy, n_paths, base_seed, workers, None)?;
        Ok(self.report(&paths, base_seed))
    }

    /// Means and standard errors over path summaries.
    pub fn report(&self, paths: &[PathSummary], base_seed: u64) -> ObjectiveReport {
        let lambda = self.ctx.lambda();
        let col = |f: &dyn Fn(&PathSummary) -> f64| mean_se(&paths.iter().map(f).collect::<Vec<_>>());
        let (degradation, dse) = col(&|p| p.degradation);
        let (stealthiness, sse) = col(&|p| p.log_likelihood);
        let (rho_energy, ese) = col(&|p| p.rho_energy);
        let (objective, ose) = col(&|p| p.log_likelihood - lambda * p.degradation + p.rho_energy);
        ObjectiveReport {
            method: Method::MonteCarlo,
            lambda,
            degradation,
            degradation_se: Some(dse),
            stealthiness,
            stealthiness_se: Some(sse),
            rho_energy,
            rho_energy_se: Some(ese),
            objective,
            objective_se: Some(ose),
            n_paths: Some(paths.len()),
            base_seed: Some(base_seed),
        }
    }
}

/// Drift of `(x_c, x_a)` and the filter gain at time `t`.
fn joint_drift(ctx: &Context, filter: &FilterGains, agent: &AgentGains, t: f64) -> Result<(Mat, Mat, Mat)> {
    let d = ctx.dim();
    let pw = ctx.model.at(t)?;
    let kalman = filter.kalman_gain.eval(t);
    let theta = &kalman * &pw.h;
    let kf = &pw.k * agent.feedback.eval(t);
    let mut a = Mat::zeros(2 * d, 2 * d);
    a.view_mut((0, 0), (d, d)).copy_from(&pw.a);
    a.view_mut((0, d), (d, d)).copy_from(&(-&kf));
    a.view_mut((d, 0), (d, d)).copy_from(&theta);
    a.view_mut((d, d), (d, d)).copy_from(&(&pw.a - &kf - &theta));
    let alpha = &pw.drift_offset - &pw.k * agent.offset.eval(t) * 0.5;
    Ok((a, kalman, alpha))
}

/// Covariance of `(x_c, x_a)`, forward from `blockdiag(R0, 0)`.
pub fn joint_covariance(ctx: &Context, filter: &FilterGains, agent: &AgentGains) -> Result<GridFunction> {
    let d = ctx.dim();
    let layout = StateLayout::new().symmetric(2 * d);
    let rhs = |t: f64, x: &Vector| {
        let Ok((a, kalman, _)) = joint_drift(ctx, filter, agent, t) else {
            return Vector::from_element(x.len(), f64::NAN);
        };
        let s = Mat::from_column_slice(2 * d, 2 * d, x.as_slice());
        let mut noise = Mat::zeros(2 * d, 2 * d);
        noise.view_mut((0, 0), (d, d)).copy_from(&ctx.noise.state);
        noise
            .view_mut((d, d), (d, d))
            .copy_from(&symmetrize(&(&kalman * &ctx.noise.obs * kalman.transpose())));
        let ds = &a * &s + &s * a.transpose() + noise;
        Vector::from_column_slice(ds.as_slice())
    };
    let mut start = Mat::zeros(2 * d, 2 * d);
    start.view_mut((0, 0), (d, d)).copy_from(&symmetrize(&ctx.model.prior_cov));
    let states = integrate(
        &OdeProblem {
            name: "state and filter covariance",
            grid: ctx.grid,
            direction: Direction::Forward,
            boundary: layout.pack(&[&start]),
            rhs: &rhs,
            layout: Some(&layout),
        },
        &ctx.tableau,
    )?;
    Ok(layout.split(ctx.grid, &states).remove(0))
}

/// Mean of `(x_c, x_a)` under deterministic attack paths, forward from
/// `(x0, x0)`; paths are interpolated between nodes.
pub fn joint_mean(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    rho: &GridFunction,
    tau: &GridFunction,
) -> Result<GridFunction> {
    let d = ctx.dim();
    if rho.grid() != &ctx.grid || tau.grid() != &ctx.grid {
        return Err(Error::Shape("attack paths must live on the model grid".into()));
    }
    let rhs = |t: f64, x: &Vector| {
        let Ok((a, kalman, alpha)) = joint_drift(ctx, filter, agent, t) else {
            return Vector::from_element(x.len(), f64::NAN);
        };
        let m = Mat::from_column_slice(2 * d, 1, x.as_slice());
        let mut dm = &a * m;
        let top = rho.eval(t) + &alpha;
        let bottom = kalman * tau.eval(t) + &alpha;
        let mut rows = dm.rows_mut(0, d);
        rows += top;
        let mut rows = dm.rows_mut(d, d);
        rows += bottom;
        Vector::from_column_slice(dm.as_slice())
    };
    let x0 = &ctx.model.prior_mean;
    let mut start = Vector::zeros(2 * d);
    start.rows_mut(0, d).copy_from_slice(x0.as_slice());
    start.rows_mut(d, d).copy_from_slice(x0.as_slice());
    let states = integrate(
        &OdeProblem {
            name: "state and filter mean",
            grid: ctx.grid,
            direction: Direction::Forward,
            boundary: start,
            rhs: &rhs,
            layout: None,
        },
        &ctx.tableau,
    )?;
    GridFunction::new(ctx.grid, states.iter().map(|v| Mat::from_column_slice(2 * d, 1, v.as_slice())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::build_optimal_det;
    use crate::coeffs::{assert_psd, TimeVaryingMatrix};
    use crate::model::preset;
    use crate::synthesis::{solve_det_attack, GainSet};
    use approx::assert_relative_eq;

    fn setup(model: crate::model::SystemModel) -> (Context, GainSet) {
        let ctx = Context::new(model).unwrap();
        let g = GainSet::solve(&ctx).unwrap();
        (ctx, g)
    }

    fn optimal(ctx: &Context, g: &GainSet) -> (GridFunction, GridFunction) {
        let det = solve_det_attack(ctx, &g.filter, &g.agent).unwrap();
        match build_optimal_det(ctx, &g.filter, &g.agent, &det).unwrap().0 {
            AttackStrategy::DeterministicPath { rho, tau } => (rho, tau),
            _ => unreachable!(),
        }
    }

    #[test]
    fn no_cost_weights_no_degradation() {
        let mut m = preset("1d-mean-revert").unwrap().model;
        m.state_cost = TimeVaryingMatrix::scalar(0.0);
        let (ctx, g) = setup(m);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let z = GridFunction::zeros(ctx.grid, 1, 1);
        assert_eq!(ev.exact_d(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn covariance_starts_at_prior_and_stays_psd() {
        let (ctx, g) = setup(preset("2d-tracking").unwrap().model);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let c0 = ev.cov.node(0);
        assert_eq!(c0.view((0, 0), (2, 2)).into_owned(), ctx.model.prior_cov);
        assert_eq!(c0.view((2, 2), (2, 2)).norm(), 0.0);
        assert!(ev.cov.values().iter().all(|s| assert_psd(s, 1e-12)));
    }

    #[test]
    fn covariance_does_not_see_the_attack() {
        let (ctx, g) = setup(preset("1d-mean-revert").unwrap().model);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let (rho, tau) = optimal(&ctx, &g);
        let z = GridFunction::zeros(ctx.grid, 1, 1);
        let a = ev.moments(&rho, &tau).unwrap();
        let b = ev.moments(&z, &z).unwrap();
        assert!(a.cov.max_abs_diff(&b.cov) <= 1e-12);
        assert!(a.mean.max_abs_diff(&b.mean) > 1e-3);
    }

    #[test]
    fn decomposition_sums_to_total() {
        let (ctx, g) = setup(preset("2d-tracking").unwrap().model);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let (rho, tau) = optimal(&ctx, &g);
        let m = ev.moments(&rho, &tau).unwrap();
        let t = ev.degradation_terms(&m);
        let parts = t.state_trace + t.state_mean + t.control_trace + t.control_mean;
        assert!((parts - ev.exact_d(&rho, &tau).unwrap()).abs() <= 1e-12);
        assert!(t.state_trace > 0.0 && t.state_mean > 0.0);
    }

    #[test]
    fn zero_attack_objective_is_minus_lambda_d() {
        let (ctx, g) = setup(preset("1d-mean-revert").unwrap().model);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let r = ev.exact_strategy(&AttackStrategy::Zero).unwrap();
        assert_eq!(r.stealthiness, 0.0);
        assert_eq!(r.rho_energy, 0.0);
        assert_eq!(r.objective, -ctx.lambda() * r.degradation);
    }

    #[test]
    fn zero_lambda_optimal_objective_vanishes() {
        let (ctx, g) = setup(preset("1d-mean-revert").unwrap().model.with_lambda(0.0));
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let (rho, tau) = optimal(&ctx, &g);
        assert!(ev.exact_objective(&rho, &tau).unwrap().objective.abs() <= 1e-8);
    }

    #[test]
    fn optimal_attack_beats_zero_and_raises_cost() {
        let (ctx, g) = setup(preset("1d-mean-revert").unwrap().model);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let (rho, tau) = optimal(&ctx, &g);
        let best = ev.exact_objective(&rho, &tau).unwrap();
        let zero = ev.exact_strategy(&AttackStrategy::Zero).unwrap();
        assert!(best.objective < zero.objective);
        assert!(best.degradation > zero.degradation);
        let consistent = best.stealthiness - ctx.lambda() * best.degradation + best.rho_energy;
        assert!((consistent - best.objective).abs() <= 1e-12);
    }

    #[test]
    fn moment_discrepancy_matches_its_own_equation() {
        let (ctx, g) = setup(preset("2d-tracking").unwrap().model);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let (rho, tau) = optimal(&ctx, &g);
        let from_means = ev.moments(&rho, &tau).unwrap().discrepancy();
        let direct = ev.discrepancy(&rho, &tau).unwrap();
        assert!(from_means.max_abs_diff(&direct) < 1e-10);
    }

    #[test]
    fn standard_error_of_constant_sample() {
        assert_eq!(mean_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        let (m, se) = mean_se(&[1.0, 3.0]);
        assert_relative_eq!(m, 2.0);
        assert_relative_eq!(se, 1.0);
    }

    #[test]
    fn zero_strategy_has_exactly_zero_mc_stealthiness() {
        let (ctx, g) = setup(preset("1d-mean-revert").unwrap().model);
        let ev = Evaluator::new(&ctx, &g.filter, &g.agent).unwrap();
        let r = ev.mc_objective(&AttackStrategy::Zero, 50, 3, 2).unwrap();
        assert_eq!((r.stealthiness, r.stealthiness_se), (0.0, Some(0.0)));
        assert!(r.degradation > 0.0);
    }
}
