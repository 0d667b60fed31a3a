//! A posteriori checks of solved gain trajectories: central differences of
//! the stored node values are substituted back into each ODE.

use crate::coeffs::{symmetrize, GridFunction, TimeGrid, Vector};
use crate::ode::StateLayout;

use super::adaptive::{rho_rhs, tau_rhs, value_rhs};
use super::agent::{agent_layout, agent_rhs};
use super::det::det_rhs;
use super::filter::filter_rhs;
use super::{
    AdaptiveRhoGains, AdaptiveTauGains, AgentGains, CompletedRhoGains, Context, DetAttackGains, FilterGains,
};

#[derive(Clone, Debug)]
pub struct Residual {
    pub system: &'static str,
    /// Largest interior residual divided by `1 + max |x'|`, where `x'` is
    /// the right-hand side along the stored solution. For the linear and
    /// Riccati systems here the right-hand side norm is of order
    /// `|solution| * |coefficients|`.
    pub max_scaled: f64,
    /// The boundary node holds the prescribed value exactly.
    pub boundary_exact: bool,
    /// Largest asymmetry over symmetric blocks.
    pub asymmetry: f64,
}

/// Scaled residual at interior nodes: the central difference over two steps
/// against the Simpson average of the right-hand side over the same span.
/// The comparison is fourth-order in the step, so thin boundary layers in
/// an otherwise accurate solution do not swamp it.
pub fn central_residual(grid: &TimeGrid, states: &[Vector], rhs: &dyn Fn(f64, &Vector) -> Vector) -> f64 {
    let h = grid.step();
    let derivs: Vec<Vector> = states
        .iter()
        .enumerate()
        .map(|(k, x)| rhs(grid.node(k), x))
        .collect();
    let scale = 1.0 + derivs.iter().map(|d| d.amax()).fold(0.0, f64::max);
    (1..grid.n_steps)
        .map(|k| {
            let fd = (&states[k + 1] - &states[k - 1]) / (2.0 * h);
            let avg = (&derivs[k - 1] + &derivs[k] * 4.0 + &derivs[k + 1]) / 6.0;
            (fd - avg).amax()
        })
        .fold(0.0, f64::max)
        / scale
}

fn asymmetry(g: &GridFunction) -> f64 {
    g.values()
        .iter()
        .map(|m| (m - m.transpose()).amax())
        .fold(0.0, f64::max)
}

fn pack_nodes(layout: &StateLayout, parts: &[&GridFunction]) -> Vec<Vector> {
    (0..parts[0].grid().len())
        .map(|k| layout.pack(&parts.iter().map(|g| g.node(k)).collect::<Vec<_>>()))
        .collect()
}

pub fn filter_residual(ctx: &Context, filter: &FilterGains) -> Residual {
    let d = ctx.dim();
    let f = filter_rhs(ctx);
    let rhs = |t: f64, x: &Vector| {
        let r = crate::coeffs::Mat::from_column_slice(d, d, x.as_slice());
        Vector::from_column_slice(f(t, &r).as_slice())
    };
    let states = pack_nodes(&StateLayout::new().symmetric(d), &[&filter.cov]);
    Residual {
        system: "filter covariance",
        max_scaled: central_residual(&ctx.grid, &states, &rhs),
        boundary_exact: filter.cov.node(0) == &symmetrize(&ctx.model.prior_cov),
        asymmetry: asymmetry(&filter.cov),
    }
}

pub fn agent_residual(ctx: &Context, agent: &AgentGains) -> Residual {
    let states = pack_nodes(&agent_layout(ctx.dim()), &[&agent.feedback, &agent.offset]);
    let n = ctx.grid.n_steps;
    Residual {
        system: "agent feedback",
        max_scaled: central_residual(&ctx.grid, &states, &agent_rhs(ctx)),
        boundary_exact: states[n].iter().all(|v| *v == 0.0),
        asymmetry: asymmetry(&agent.feedback),
    }
}

pub fn det_residual(ctx: &Context, filter: &FilterGains, agent: &AgentGains, det: &DetAttackGains) -> Residual {
    let states: Vec<Vector> = (0..ctx.grid.len()).map(|k| det.stacked(k)).collect();
    let n = ctx.grid.n_steps;
    Residual {
        system: "deterministic attack gains",
        max_scaled: central_residual(&ctx.grid, &states, &det_rhs(ctx, filter, agent)),
        boundary_exact: states[n].iter().all(|v| *v == 0.0),
        asymmetry: 0.0,
    }
}

pub fn rho_residual(ctx: &Context, filter: &FilterGains, agent: &AgentGains, rho: &AdaptiveRhoGains) -> Residual {
    let layout = StateLayout::new().symmetric(3 * ctx.dim());
    let states = pack_nodes(&layout, &[&rho.quadratic]);
    Residual {
        system: "adaptive state-attack Riccati",
        max_scaled: central_residual(&ctx.grid, &states, &rho_rhs(ctx, filter, agent)),
        boundary_exact: states[ctx.grid.n_steps].iter().all(|v| *v == 0.0),
        asymmetry: asymmetry(&rho.quadratic),
    }
}

pub fn tau_residual(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    rho: &AdaptiveRhoGains,
    tau: &AdaptiveTauGains,
) -> Residual {
    let n = 3 * ctx.dim();
    let layout = StateLayout::new().symmetric(n).vector(n);
    let states = pack_nodes(&layout, &[&tau.riccati, &tau.offset]);
    let phi0 = crate::coeffs::Mat::from_column_slice(n, 1, tau.phi0.as_slice());
    let max_scaled = central_residual(tau.riccati.grid(), &states, &tau_rhs(ctx, filter, agent, rho, &phi0));
    Residual {
        system: "adaptive observation-attack Riccati",
        max_scaled,
        boundary_exact: states[0].iter().all(|v| *v == 0.0),
        asymmetry: asymmetry(&tau.riccati),
    }
}

pub fn value_residual(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    done: &CompletedRhoGains,
) -> Residual {
    let n = 3 * ctx.dim();
    let layout = StateLayout::new().vector(n).vector(1);
    let states = pack_nodes(&layout, &[&done.linear, &done.constant]);
    Residual {
        system: "adaptive value offsets",
        max_scaled: central_residual(
            &ctx.grid,
            &states,
            &value_rhs(ctx, filter, agent, &done.quadratic, &done.tau),
        ),
        boundary_exact: states[ctx.grid.n_steps].iter().all(|v| *v == 0.0),
        asymmetry: 0.0,
    }
}
