use crate::coeffs::{GridFunction, Mat, Vector};
use crate::error::Result;
use crate::ode::{integrate, Direction, OdeProblem, StateLayout};

use super::Context;

/// The agent's certainty-equivalent feedback
/// `u = -S^-1 B^T (F x + f / 2)`.
#[derive(Clone, Debug)]
pub struct AgentGains {
    /// `F`, symmetric d x d.
    pub feedback: GridFunction,
    /// `f`, d x 1.
    pub offset: GridFunction,
    /// `K = B S^-1 B^T`.
    pub control_weight: GridFunction,
}

pub(crate) fn agent_layout(d: usize) -> StateLayout {
    StateLayout::new().symmetric(d).vector(d)
}

pub(crate) fn agent_rhs<'a>(ctx: &'a Context) -> impl Fn(f64, &Vector) -> Vector + 'a {
    let layout = agent_layout(ctx.dim());
    move |t, x| {
        let parts = layout.unpack(x);
        let (f, fv) = (&parts[0], &parts[1]);
        let Ok(pw) = ctx.model.at(t) else {
            return super::nan_state(x.len());
        };
        let at = pw.a.transpose();
        let fk = f * &pw.k;
        let df = -(&at * f + f * &pw.a + &pw.q - &fk * f);
        let dfv = -(&at * fv + f * &pw.drift_offset * 2.0 - &pw.q * &pw.r * 2.0 - &fk * fv);
        layout.pack(&[&df, &dfv])
    }
}

/// Integrate the feedback Riccati equation and its offset backward from
/// zero terminal data.
pub fn solve_agent(ctx: &Context) -> Result<AgentGains> {
    let d = ctx.dim();
    let layout = agent_layout(d);
    let rhs = agent_rhs(ctx);
    let states = integrate(
        &OdeProblem {
            name: "agent feedback",
            grid: ctx.grid,
            direction: Direction::Backward,
            boundary: Vector::zeros(layout.len()),
            rhs: &rhs,
            layout: Some(&layout),
        },
        &ctx.tableau,
    )?;
    let mut parts = layout.split(ctx.grid, &states);
    let offset = parts.remove(1);
    let feedback = parts.remove(0);
    let mut weights = Vec::with_capacity(ctx.grid.len());
    for t in ctx.grid.nodes() {
        weights.push(ctx.model.at(t)?.k);
    }
    Ok(AgentGains {
        feedback,
        offset,
        control_weight: GridFunction::new(ctx.grid, weights)?,
    })
}

impl AgentGains {
    /// Control at node `k` for filtered state `x`.
    pub fn control(&self, ctx: &Context, k: usize, x: &Mat) -> Result<Mat> {
        let pw = ctx.model.at(ctx.grid.node(k))?;
        Ok(-(&pw.s_inv * pw.b.transpose()) * (self.feedback.node(k) * x + self.offset.node(k) * 0.5))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::TimeVaryingMatrix;
    use crate::model::preset;

    #[test]
    fn no_tracking_cost_gives_zero_gains() {
        let mut m = preset("1d-mean-revert").unwrap().model;
        m.state_cost = TimeVaryingMatrix::scalar(0.0);
        let ag = solve_agent(&Context::new(m).unwrap()).unwrap();
        assert!(ag.feedback.sup_norm() == 0.0 && ag.offset.sup_norm() == 0.0);
    }

    #[test]
    fn scalar_feedback_positive_before_horizon() {
        let c = Context::new(preset("1d-mean-revert").unwrap().model).unwrap();
        let ag = solve_agent(&c).unwrap();
        let n = c.grid.n_steps;
        assert_eq!(ag.feedback.node(n)[(0, 0)], 0.0);
        assert!((0..n).all(|k| ag.feedback.node(k)[(0, 0)] > 0.0));
        assert!(ag.offset.sup_norm() == 0.0, "homogeneous offset equation");
    }

    #[test]
    fn tracking_reference_drives_offset() {
        let c = Context::new(preset("2d-tracking").unwrap().model).unwrap();
        let ag = solve_agent(&c).unwrap();
        assert!(ag.offset.node(0).norm() > 0.0);
        assert_eq!(ag.offset.node(c.grid.n_steps).norm(), 0.0);
        for f in ag.feedback.values() {
            assert!((f - f.transpose()).amax() <= 1e-12);
        }
    }
}
