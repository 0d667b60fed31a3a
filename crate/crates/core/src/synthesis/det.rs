use crate::coeffs::{GridFunction, Vector};
use crate::error::Result;
use crate::ode::{integrate, Direction, OdeProblem, StateLayout};

use super::{AgentGains, Context, FilterGains, Frame};

/// Gains of the optimal deterministic attack. With `m_c`, `m_a` the
/// closed-loop means of the attack-aware and agent filters,
/// `rho = -P^-1 (rho_aware m_c + rho_agent m_a + rho_offset)` and the
/// observation attack is built from the `tau_*` gains.
#[derive(Clone, Debug)]
pub struct DetAttackGains {
    pub rho_aware: GridFunction,
    pub rho_agent: GridFunction,
    pub tau_aware: GridFunction,
    pub tau_agent: GridFunction,
    pub rho_offset: GridFunction,
    pub tau_offset: GridFunction,
}

pub(crate) fn det_layout(d: usize) -> StateLayout {
    StateLayout::new()
        .matrix(d, d)
        .matrix(d, d)
        .matrix(d, d)
        .matrix(d, d)
        .vector(d)
        .vector(d)
}

pub(crate) fn det_rhs<'a>(
    ctx: &'a Context,
    filter: &'a FilterGains,
    agent: &'a AgentGains,
) -> impl Fn(f64, &Vector) -> Vector + 'a {
    let layout = det_layout(ctx.dim());
    let lambda = ctx.lambda();
    move |t, x| {
        let Ok(fr) = ctx.frame(filter, agent, t) else {
            return super::nan_state(x.len());
        };
        let p = layout.unpack(x);
        let d = det_derivative(&fr, lambda, [&p[0], &p[1], &p[2], &p[3], &p[4], &p[5]]);
        layout.pack(&d.iter().collect::<Vec<_>>())
    }
}

fn det_derivative(fr: &Frame, lambda: f64, x: [&crate::coeffs::Mat; 6]) -> [crate::coeffs::Mat; 6] {
    let [fc, fa, gc, ga, frho, gtau] = x;
    let a = &fr.pw.a;
    let at = a.transpose();
    let a_cl = a - &fr.kf;
    let fk = fr.kf.transpose();
    let at_cl = &at - &fk;
    let fkf = &fr.f * &fr.kf;
    let pinv = &fr.pw.p_inv;
    let lam = &fr.lam;
    let q = &fr.pw.q;
    let alpha = &fr.alpha;
    let k_off = &fr.pw.k * &fr.fv;

    let dfc = -(fc * a + &at * fc - fc * pinv * fc - fa * lam * gc - q * (2.0 * lambda));
    let dfa = -(fa * &a_cl + &at * fa - fc * &fr.kf - fc * pinv * fa - fa * lam * ga);
    let dgc = -(gc * a + &at_cl * gc - &fk * fc - ga * lam * gc - gc * pinv * fc);
    let dga = -(ga * &a_cl + &at_cl * ga - &fk * fa - gc * &fr.kf - gc * pinv * fa - ga * lam * ga
        - &fkf * (2.0 * lambda));
    let dfrho = -((&at - fc * pinv) * frho + fc * alpha - fa * lam * gtau + fa * alpha
        + q * &fr.pw.r * (2.0 * lambda));
    let dgtau = -(&at_cl * gtau - gc * pinv * frho - ga * lam * gtau - &fk * frho + gc * alpha + ga * alpha
        - &fr.f * &k_off * lambda);
    [dfc, dfa, dgc, dga, dfrho, dgtau]
}

/// Integrate the six coupled deterministic-attack equations backward from
/// zero terminal data as one stacked state. A divergence error carries the
/// sufficient-horizon bound.
pub fn solve_det_attack(ctx: &Context, filter: &FilterGains, agent: &AgentGains) -> Result<DetAttackGains> {
    let layout = det_layout(ctx.dim());
    let rhs = det_rhs(ctx, filter, agent);
    let states = integrate(
        &OdeProblem {
            name: "deterministic attack gains",
            grid: ctx.grid,
            direction: Direction::Backward,
            boundary: Vector::zeros(layout.len()),
            rhs: &rhs,
            layout: None,
        },
        &ctx.tableau,
    )
    .map_err(|e| match e {
        crate::Error::Divergence { .. } => match super::existence_bound(ctx, filter, agent) {
            Ok(b) => e.with_bound(b),
            Err(_) => e,
        },
        other => other,
    })?;
    let mut it = layout.split(ctx.grid, &states).into_iter();
    let mut next = || it.next().expect("six blocks");
    Ok(DetAttackGains {
        rho_aware: next(),
        rho_agent: next(),
        tau_aware: next(),
        tau_agent: next(),
        rho_offset: next(),
        tau_offset: next(),
    })
}

impl DetAttackGains {
    pub(crate) fn stacked(&self, k: usize) -> Vector {
        let d = self.rho_aware.shape().0;
        det_layout(d).pack(&[
            self.rho_aware.node(k),
            self.rho_agent.node(k),
            self.tau_aware.node(k),
            self.tau_agent.node(k),
            self.rho_offset.node(k),
            self.tau_offset.node(k),
        ])
    }

    pub fn sup_norm(&self) -> f64 {
        [
            &self.rho_aware,
            &self.rho_agent,
            &self.tau_aware,
            &self.tau_agent,
            &self.rho_offset,
            &self.tau_offset,
        ]
        .iter()
        .map(|g| g.sup_norm())
        .fold(0.0, f64::max)
    }
}
