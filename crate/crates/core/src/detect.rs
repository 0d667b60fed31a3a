//! Detection: the pathwise log-likelihood of the innovation under a
//! candidate attack, its expectation, a windowed chi-square test on the
//! innovation increments, and the residual whose vanishing makes the
//! innovation Brownian.

use serde::Serialize;
use statrs::function::gamma::gamma_ur;

use crate::coeffs::{GridFunction, Mat, Vector};
use crate::error::{Error, Result};
use crate::ode::{integrate, trapezoid, Direction, OdeProblem};
use crate::sim::TrajectoryBundle;
use crate::synthesis::{Context, FilterGains};

/// Filter discrepancy under deterministic attack paths, advanced with the
/// same left-endpoint Euler steps the simulator uses.
pub fn discrepancy_euler(
    ctx: &Context,
    filter: &FilterGains,
    rho: &GridFunction,
    tau: &GridFunction,
) -> Result<GridFunction> {
    let grid = ctx.grid;
    check_paths(ctx, rho, tau)?;
    let h = grid.step();
    let mut dx = Mat::zeros(ctx.dim(), 1);
    let mut out = Vec::with_capacity(grid.len());
    out.push(dx.clone());
    for k in 0..grid.n_steps {
        let a = ctx.model.drift.at(grid.node(k));
        let drift = (a - filter.kalman_obs.node(k)) * &dx + rho.node(k) - filter.kalman_gain.node(k) * tau.node(k);
        dx += drift * h;
        out.push(dx.clone());
    }
    GridFunction::new(grid, out)
}

/// Filter discrepancy under deterministic attack paths from the
/// high-order integrator; attack paths are interpolated between nodes.
pub fn discrepancy_ode(
    ctx: &Context,
    filter: &FilterGains,
    rho: &GridFunction,
    tau: &GridFunction,
) -> Result<GridFunction> {
    check_paths(ctx, rho, tau)?;
    let d = ctx.dim();
    let rhs = |t: f64, x: &Vector| {
        let a = ctx.model.drift.at(t);
        let dx = Mat::from_column_slice(d, 1, x.as_slice());
        let v = (a - filter.kalman_obs.eval(t)) * dx + rho.eval(t) - filter.kalman_gain.eval(t) * tau.eval(t);
        Vector::from_column_slice(v.as_slice())
    };
    let states = integrate(
        &OdeProblem {
            name: "filter discrepancy",
            grid: ctx.grid,
            direction: Direction::Forward,
            boundary: Vector::zeros(d),
            rhs: &rhs,
            layout: None,
        },
        &ctx.tableau,
    )?;
    GridFunction::new(ctx.grid, states.iter().map(|v| Mat::from_column_slice(d, 1, v.as_slice())).collect())
}

fn check_paths(ctx: &Context, rho: &GridFunction, tau: &GridFunction) -> Result<()> {
    if rho.grid() != &ctx.grid || tau.grid() != &ctx.grid {
        return Err(Error::Shape("attack paths must live on the model grid".into()));
    }
    if rho.shape() != (ctx.dim(), 1) || tau.shape() != (ctx.model.obs_dim(), 1) {
        return Err(Error::Shape(format!(
            "attack paths must be {} x 1 and {} x 1",
            ctx.dim(),
            ctx.model.obs_dim()
        )));
    }
    Ok(())
}

/// Scores innovation paths against candidate attacks.
#[derive(Clone, Debug)]
pub struct LikelihoodScorer {
    step: f64,
    obs: Vec<Mat>,
    inv_sqrt: Mat,
    inv: Mat,
}

impl LikelihoodScorer {
    pub fn new(ctx: &Context) -> Self {
        Self {
            step: ctx.grid.step(),
            obs: ctx.grid.nodes().map(|t| ctx.model.observation.at(t)).collect(),
            inv_sqrt: ctx.noise.obs_roots.inv_sqrt.clone(),
            inv: ctx.noise.obs_roots.inv.clone(),
        }
    }

    /// `H dx + tau` at node `k`: the drift the attack adds to the
    /// unwhitened innovation.
    fn distortion(&self, k: usize, dx: &[f64], tau: &[f64]) -> Vector {
        let h = &self.obs[k];
        h * Vector::from_column_slice(dx) + Vector::from_column_slice(tau)
    }

    /// Left-endpoint discretization of the log-likelihood for the given
    /// discrepancy and observation-attack sequences (one entry per node).
    pub fn log_likelihood(&self, increments: &[Vector], dx: &[&[f64]], tau: &[&[f64]]) -> Result<f64> {
        let n = increments.len();
        if dx.len() < n || tau.len() < n || self.obs.len() < n + 1 {
            return Err(Error::Shape(format!(
                "{n} innovation increments against {} discrepancy and {} attack nodes",
                dx.len(),
                tau.len()
            )));
        }
        let mut stochastic = 0.0;
        let mut quadratic = 0.0;
        for k in 0..n {
            let g = self.distortion(k, dx[k], tau[k]);
            stochastic += (&self.inv_sqrt * &g).dot(&increments[k]);
            quadratic += g.dot(&(&self.inv * &g));
        }
        Ok(stochastic - 0.5 * quadratic * self.step)
    }

    /// Scores a path against the attack that generated it.
    pub fn self_score(&self, b: &TrajectoryBundle) -> Result<f64> {
        let dx: Vec<&[f64]> = b.discrepancy.iter().map(|v| v.as_slice()).collect();
        let tau: Vec<&[f64]> = b.tau.iter().map(|v| v.as_slice()).collect();
        self.log_likelihood(&b.innovation_increments, &dx, &tau)
    }

    /// Scores a path against a candidate deterministic attack with
    /// discrepancy `dx`.
    pub fn score_candidate(&self, b: &TrajectoryBundle, dx: &GridFunction, tau: &GridFunction) -> Result<f64> {
        let dxs: Vec<&[f64]> = dx.values().iter().map(|m| m.as_slice()).collect();
        let taus: Vec<&[f64]> = tau.values().iter().map(|m| m.as_slice()).collect();
        self.log_likelihood(&b.innovation_increments, &dxs, &taus)
    }

    /// `1/2 (H dx + tau)^T (sigma_W sigma_W^T)^-1 (H dx + tau)` at each node.
    fn stealth_integrand(&self, dx: &GridFunction, tau: &GridFunction) -> Vec<f64> {
        (0..dx.grid().len())
            .map(|k| {
                let g = self.distortion(k, dx.node(k).as_slice(), tau.node(k).as_slice());
                0.5 * g.dot(&(&self.inv * &g))
            })
            .collect()
    }

    /// Expected log-likelihood for a deterministic attack with discrepancy
    /// `dx`, by trapezoidal quadrature.
    pub fn stealthiness_closed_form(&self, dx: &GridFunction, tau: &GridFunction) -> f64 {
        trapezoid(self.step, &self.stealth_integrand(dx, tau))
    }

    /// Left Riemann sum of the same quadratic along one simulated path;
    /// averaging it over paths estimates the stealthiness of any attack.
    pub fn stealth_quadratic(&self, b: &TrajectoryBundle) -> f64 {
        let n = b.innovation_increments.len();
        (0..n)
            .map(|k| {
                let g = self.distortion(k, b.discrepancy[k].as_slice(), b.tau[k].as_slice());
                0.5 * g.dot(&(&self.inv * &g))
            })
            .sum::<f64>()
            * self.step
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Chi2Window {
    pub start: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Upper tail of the chi-square distribution.
pub fn chi2_sf(x: f64, dof: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, x / 2.0)
}

/// Non-overlapping windows of `window` increments starting at step 0.
/// Trailing steps that do not fill a window are ignored.
pub fn chi2_detector(increments: &[Vector], window: usize, step: f64) -> Result<Vec<Chi2Window>> {
    if window == 0 || window > increments.len() {
        return Err(Error::Window {
            window,
            n_steps: increments.len(),
        });
    }
    let m = increments[0].len();
    Ok(increments
        .chunks_exact(window)
        .enumerate()
        .map(|(i, chunk)| {
            let statistic = chunk.iter().map(|v| v.norm_squared()).sum::<f64>() / step;
            Chi2Window {
                start: i * window,
                statistic,
                dof: window * m,
                p_value: chi2_sf(statistic, window * m),
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Contract("KS test needs two non-empty samples without NaN".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `H z + tau` with `z' = A z + rho`, `z(0) = 0`. It vanishes identically
/// exactly when the deterministic attack leaves the agent's innovation
/// Brownian. Requires drift matrices that commute across time.
pub fn detectability_residual(ctx: &Context, rho: &GridFunction, tau: &GridFunction) -> Result<GridFunction> {
    check_paths(ctx, rho, tau)?;
    let samples: Vec<Mat> = (0..=16)
        .map(|i| ctx.model.drift.at(ctx.model.horizon * i as f64 / 16.0))
        .collect();
    for a in &samples {
        for b in &samples {
            if (a * b - b * a).amax() > 1e-10 {
                return Err(Error::Unsupported(
                    "detectability residual needs drift matrices that commute over time".into(),
                ));
            }
        }
    }
    let d = ctx.dim();
    let rhs = |t: f64, z: &Vector| {
        let a = ctx.model.drift.at(t);
        let v = a * Mat::from_column_slice(d, 1, z.as_slice()) + rho.eval(t);
        Vector::from_column_slice(v.as_slice())
    };
    let states = integrate(
        &OdeProblem {
            name: "detectability residual",
            grid: ctx.grid,
            direction: Direction::Forward,
            boundary: Vector::zeros(d),
            rhs: &rhs,
            layout: None,
        },
        &ctx.tableau,
    )?;
    GridFunction::new(
        ctx.grid,
        ctx.grid
            .nodes()
            .enumerate()
            .map(|(k, t)| ctx.model.observation.at(t) * Mat::from_column_slice(d, 1, states[k].as_slice()) + tau.node(k))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{TimeGrid, TimeVaryingMatrix};
    use crate::model::preset;
    use crate::synthesis::GainSet;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn setup(name: &str) -> (Context, GainSet) {
        let ctx = Context::new(preset(name).unwrap().model).unwrap();
        let g = GainSet::solve(&ctx).unwrap();
        (ctx, g)
    }

    #[test]
    fn chi2_degenerate_and_single_increment() {
        let zeros = vec![Vector::zeros(1); 4];
        let w = chi2_detector(&zeros, 4, 0.01).unwrap();
        assert_eq!((w[0].statistic, w[0].p_value), (0.0, 1.0));
        let h: f64 = 0.01;
        let one = vec![Vector::from_element(1, h.sqrt())];
        let w = chi2_detector(&one, 1, h).unwrap();
        assert_relative_eq!(w[0].statistic, 1.0, epsilon = 1e-14);
        // P(chi2_1 >= 1) = erfc(1 / sqrt 2)
        assert_relative_eq!(w[0].p_value, 0.31731050786291415, epsilon = 1e-12);
    }

    #[test]
    fn chi2_window_too_long() {
        let v = vec![Vector::zeros(2); 10];
        assert!(matches!(chi2_detector(&v, 11, 0.1), Err(Error::Window { .. })));
        assert!(matches!(chi2_detector(&v, 0, 0.1), Err(Error::Window { .. })));
        assert_eq!(chi2_detector(&v, 3, 0.1).unwrap().len(), 3);
        assert_eq!(chi2_detector(&v, 3, 0.1).unwrap()[0].dof, 6);
    }

    #[test]
    fn chi2_tail_matches_closed_forms() {
        // two degrees of freedom: exp(-x/2)
        for x in [0.1, 1.0, 7.5] {
            assert_relative_eq!(chi2_sf(x, 2), (-x / 2.0f64).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn ks_identical_and_separated_samples() {
        let a: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 1000.0).collect();
        let r = ks_two_sample(&a, &b).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 1e-12);
    }

    #[test]
    fn kolmogorov_tail_reference_value() {
        // P(K > 1.36) is the classical 5% point
        assert!((kolmogorov_sf(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn zero_candidate_scores_zero() {
        let (ctx, _) = setup("1d-mean-revert");
        let scorer = LikelihoodScorer::new(&ctx);
        let incs = vec![Vector::from_element(1, 0.3); ctx.grid.n_steps];
        let z = GridFunction::zeros(ctx.grid, 1, 1);
        let zeros: Vec<&[f64]> = z.values().iter().map(|m| m.as_slice()).collect();
        assert_eq!(scorer.log_likelihood(&incs, &zeros, &zeros).unwrap(), 0.0);
        assert_eq!(scorer.stealthiness_closed_form(&z, &z), 0.0);
    }

    #[test]
    fn constant_observation_attack_without_observation_matrix() {
        // H = 0: l = c^T (sigma sigma^T)^-1/2 I_T - T c^T (sigma sigma^T)^-1 c / 2
        let mut model = preset("1d-mean-revert").unwrap().model;
        model.observation = TimeVaryingMatrix::scalar(0.0);
        let ctx = Context::new(model).unwrap();
        let scorer = LikelihoodScorer::new(&ctx);
        let c = 0.7;
        let sigma2: f64 = 0.16;
        let incs: Vec<Vector> = (0..ctx.grid.n_steps).map(|k| Vector::from_element(1, (k as f64 * 0.37).sin() * 0.02)).collect();
        let total: f64 = incs.iter().map(|v| v[0]).sum();
        let dx = vec![[0.0f64]; ctx.grid.len()];
        let tau = vec![[c]; ctx.grid.len()];
        let dxs: Vec<&[f64]> = dx.iter().map(|v| &v[..]).collect();
        let taus: Vec<&[f64]> = tau.iter().map(|v| &v[..]).collect();
        let l = scorer.log_likelihood(&incs, &dxs, &taus).unwrap();
        let expected = c / sigma2.sqrt() * total - 0.5 * ctx.model.horizon * c * c / sigma2;
        assert_relative_eq!(l, expected, epsilon = 1e-12);
    }

    #[test]
    fn pure_observation_attack_is_detectable() {
        let (ctx, _) = setup("1d-mean-revert");
        let rho = GridFunction::zeros(ctx.grid, 1, 1);
        let tau = GridFunction::from_fn(ctx.grid, |_| Mat::from_element(1, 1, 0.1));
        let r = detectability_residual(&ctx, &rho, &tau).unwrap();
        assert_relative_eq!(r.sup_norm(), 0.1, epsilon = 1e-15);
        let zero = detectability_residual(&ctx, &rho, &rho).unwrap();
        assert_eq!(zero.sup_norm(), 0.0);
    }

    #[test]
    fn cancelling_observation_attack_is_stealthy() {
        // A = -1, H = 1, rho = 1: z = 1 - exp(-t), tau = -z
        let (ctx, g) = setup("1d-mean-revert");
        let rho = GridFunction::from_fn(ctx.grid, |_| Mat::from_element(1, 1, 1.0));
        let tau = GridFunction::from_fn(ctx.grid, |t| Mat::from_element(1, 1, (-t).exp() - 1.0));
        assert!(detectability_residual(&ctx, &rho, &tau).unwrap().sup_norm() < 1e-8);
        let dx = discrepancy_ode(&ctx, &g.filter, &rho, &tau).unwrap();
        let s = LikelihoodScorer::new(&ctx).stealthiness_closed_form(&dx, &tau);
        assert!(s < 1e-10, "{s}");
    }

    #[test]
    fn time_varying_drift_that_does_not_commute_is_unsupported() {
        let mut model = preset("2d-tracking").unwrap().model;
        model.drift = TimeVaryingMatrix::Affine {
            m0: Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            m1: Mat::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
        };
        let ctx = Context::new(model).unwrap();
        let z = GridFunction::zeros(ctx.grid, 2, 1);
        assert!(matches!(detectability_residual(&ctx, &z, &z), Err(Error::Unsupported(_))));
    }

    #[test]
    fn euler_and_ode_discrepancies_agree_to_first_order() {
        let (ctx, g) = setup("2d-tracking");
        let rho = GridFunction::from_fn(ctx.grid, |t| Mat::from_column_slice(2, 1, &[t.cos(), 1.0]));
        let tau = GridFunction::from_fn(ctx.grid, |t| Mat::from_column_slice(2, 1, &[0.1, -t]));
        let a = discrepancy_euler(&ctx, &g.filter, &rho, &tau).unwrap();
        let b = discrepancy_ode(&ctx, &g.filter, &rho, &tau).unwrap();
        let scale = b.sup_norm();
        assert!(a.max_abs_diff(&b) < 0.02 * scale, "{} vs {}", a.max_abs_diff(&b), scale);
        assert!(a.max_abs_diff(&b) > 0.0);
    }

    proptest! {
        #[test]
        fn chi2_p_values_are_probabilities(xs in proptest::collection::vec(-3.0f64..3.0, 1..40), w in 1usize..8) {
            let incs: Vec<Vector> = xs.iter().map(|x| Vector::from_element(1, *x)).collect();
            if let Ok(ws) = chi2_detector(&incs, w, 0.01) {
                for win in ws {
                    prop_assert!((0.0..=1.0).contains(&win.p_value));
                    prop_assert!(win.statistic >= 0.0);
                }
            }
        }

        #[test]
        fn closed_form_stealthiness_is_nonnegative(c in -2.0f64..2.0, s in -2.0f64..2.0) {
            let grid = TimeGrid::new(0.5, 50).unwrap();
            let mut model = preset("1d-mean-revert").unwrap().model;
            model.n_steps = grid.n_steps;
            let ctx = Context::new(model).unwrap();
            let dx = GridFunction::from_fn(grid, |t| Mat::from_element(1, 1, c * t));
            let tau = GridFunction::from_fn(grid, |t| Mat::from_element(1, 1, s * (3.0 * t).sin()));
            prop_assert!(LikelihoodScorer::new(&ctx).stealthiness_closed_form(&dx, &tau) >= 0.0);
        }
    }
}
