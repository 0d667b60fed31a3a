//! Adaptive attack. The state attack is a linear feedback on the stacked
//! state `phi = (x_c, x_a, dx)` of attack-aware filter, agent filter and
//! their difference, with value function
//! `V(t, phi) = phi^T Fq phi / 2 + phi^T fl + c`.
//! The observation attack is a deterministic path optimized at the outer
//! level through a forward Riccati system.

use crate::coeffs::{symmetrize, GridFunction, Mat, Vector};
use crate::error::Result;
use crate::ode::{integrate, Direction, OdeProblem, StateLayout};

use super::{AgentGains, Context, FilterGains};

/// Coefficients of the stacked linear-quadratic problem at one time.
#[derive(Clone, Debug)]
pub struct AdaptiveCoeffs {
    /// Drift matrix of `phi` (3d x 3d).
    pub drift: Mat,
    /// Drift offset of `phi` (3d x 1).
    pub drift_offset: Mat,
    /// `(e_c + e_dx) P^-1 (e_c + e_dx)^T`
    pub control: Mat,
    /// Quadratic running cost of `phi`.
    pub running: Mat,
    /// Linear running cost of `phi`.
    pub running_linear: Mat,
    /// How the observation attack enters `phi` (3d x m).
    pub tau_input: Mat,
    /// `e_dx H^T (sigma_W sigma_W^T)^-1`; the linear cost in `phi` per unit
    /// of observation attack.
    pub stealth_obs: Mat,
    /// Diffusion covariance of `phi`.
    pub diffusion: Mat,
    /// Constant running cost.
    pub running_const: f64,
    /// `e_c + e_dx`, how the state attack enters `phi` (3d x d).
    pub attack_input: Mat,
    pub p_inv: Mat,
}

impl AdaptiveCoeffs {
    pub fn at(ctx: &Context, filter: &FilterGains, agent: &AgentGains, t: f64) -> Result<Self> {
        let fr = ctx.frame(filter, agent, t)?;
        let d = ctx.dim();
        let m = ctx.model.obs_dim();
        let lambda = ctx.lambda();
        let obs_inv = &ctx.noise.obs_roots.inv;

        let mut drift = Mat::zeros(3 * d, 3 * d);
        drift.view_mut((0, 0), (d, d)).copy_from(&fr.pw.a);
        drift.view_mut((0, d), (d, d)).copy_from(&(-&fr.kf));
        drift.view_mut((d, 0), (d, d)).copy_from(&fr.theta);
        drift.view_mut((d, d), (d, d)).copy_from(&(&fr.pw.a - &fr.kf - &fr.theta));
        drift.view_mut((2 * d, 2 * d), (d, d)).copy_from(&(&fr.pw.a - &fr.theta));

        let mut drift_offset = Mat::zeros(3 * d, 1);
        drift_offset.view_mut((0, 0), (d, 1)).copy_from(&fr.alpha);
        drift_offset.view_mut((d, 0), (d, 1)).copy_from(&fr.alpha);

        let mut attack_input = Mat::zeros(3 * d, d);
        attack_input.view_mut((0, 0), (d, d)).fill_with_identity();
        attack_input.view_mut((2 * d, 0), (d, d)).fill_with_identity();
        let control = symmetrize(&(&attack_input * &fr.pw.p_inv * attack_input.transpose()));

        let fkf = &fr.f * &fr.kf;
        let mut running = Mat::zeros(3 * d, 3 * d);
        running
            .view_mut((0, 0), (d, d))
            .copy_from(&(&fr.pw.q * -lambda));
        running.view_mut((d, d), (d, d)).copy_from(&(&fkf * -lambda));
        running
            .view_mut((2 * d, 2 * d), (d, d))
            .copy_from(&(fr.pw.h.transpose() * obs_inv * &fr.pw.h * 0.5));
        let running = symmetrize(&running);

        let k_off = &fr.pw.k * &fr.fv;
        let mut running_linear = Mat::zeros(3 * d, 1);
        running_linear
            .view_mut((0, 0), (d, 1))
            .copy_from(&(&fr.pw.q * &fr.pw.r * (2.0 * lambda)));
        running_linear
            .view_mut((d, 0), (d, 1))
            .copy_from(&(&fr.f * &k_off * -lambda));

        let mut tau_input = Mat::zeros(3 * d, m);
        tau_input.view_mut((d, 0), (d, m)).copy_from(&fr.kalman);
        tau_input.view_mut((2 * d, 0), (d, m)).copy_from(&(-&fr.kalman));

        let mut stealth_obs = Mat::zeros(3 * d, m);
        stealth_obs
            .view_mut((2 * d, 0), (d, m))
            .copy_from(&(fr.pw.h.transpose() * obs_inv));

        let mut diffusion = Mat::zeros(3 * d, 3 * d);
        for (i, j) in [(0, 0), (0, d), (d, 0), (d, d)] {
            diffusion.view_mut((i, j), (d, d)).copy_from(&fr.lam);
        }

        let running_const =
            -lambda * ((fr.pw.r.transpose() * &fr.pw.q * &fr.pw.r)[(0, 0)] + 0.25 * (fr.fv.transpose() * &k_off)[(0, 0)]);

        Ok(Self {
            drift,
            drift_offset,
            control,
            running,
            running_linear,
            tau_input,
            stealth_obs,
            diffusion,
            running_const,
            attack_input,
            p_inv: fr.pw.p_inv,
        })
    }
}

/// Quadratic part of the value function for the adaptive state attack.
#[derive(Clone, Debug)]
pub struct AdaptiveRhoGains {
    /// Symmetric 3d x 3d.
    pub quadratic: GridFunction,
}

/// Value function for a fixed observation attack `tau`.
#[derive(Clone, Debug)]
pub struct CompletedRhoGains {
    pub quadratic: GridFunction,
    /// 3d x 1.
    pub linear: GridFunction,
    /// Scalar.
    pub constant: GridFunction,
    pub tau: GridFunction,
}

/// Optimal observation attack and its forward gains.
#[derive(Clone, Debug)]
pub struct AdaptiveTauGains {
    /// Symmetric 3d x 3d, zero at t = 0. Lives on the model grid refined
    /// by `Context::tau_refine`, as does `offset`.
    pub riccati: GridFunction,
    /// 3d x 1, zero at t = 0.
    pub offset: GridFunction,
    /// Initial stacked state `(x0, x0, 0)`.
    pub phi0: Vector,
    pub tau_input: GridFunction,
    /// `Fq G (sigma_W sigma_W^T) + e_dx H^T`, 3d x m.
    pub obs_weight: GridFunction,
    /// The optimal observation attack, m x 1.
    pub tau: GridFunction,
    /// Linear value coefficient obtained together with `tau` from the
    /// closed-loop system.
    pub closed_loop_linear: GridFunction,
}

fn coeffs_or_nan(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    t: f64,
) -> Option<AdaptiveCoeffs> {
    AdaptiveCoeffs::at(ctx, filter, agent, t).ok()
}

pub(crate) fn rho_rhs<'a>(
    ctx: &'a Context,
    filter: &'a FilterGains,
    agent: &'a AgentGains,
) -> impl Fn(f64, &Vector) -> Vector + 'a {
    let n = 3 * ctx.dim();
    move |t, x| {
        let Some(c) = coeffs_or_nan(ctx, filter, agent, t) else {
            return super::nan_state(x.len());
        };
        let fq = Mat::from_column_slice(n, n, x.as_slice());
        let fd = &fq * &c.drift;
        let d = &fq * &c.control * &fq - &fd - fd.transpose() - &c.running * 2.0;
        Vector::from_column_slice(d.as_slice())
    }
}

/// Integrate the quadratic value coefficient backward from zero.
pub fn solve_adaptive_rho(ctx: &Context, filter: &FilterGains, agent: &AgentGains) -> Result<AdaptiveRhoGains> {
    let n = 3 * ctx.dim();
    let layout = StateLayout::new().symmetric(n);
    let rhs = rho_rhs(ctx, filter, agent);
    let states = integrate(
        &OdeProblem {
            name: "adaptive state-attack Riccati",
            grid: ctx.grid,
            direction: Direction::Backward,
            boundary: Vector::zeros(n * n),
            rhs: &rhs,
            layout: Some(&layout),
        },
        &ctx.tableau,
    )?;
    Ok(AdaptiveRhoGains {
        quadratic: layout.split(ctx.grid, &states).remove(0),
    })
}

/// Quantities of the outer observation-attack problem at one time.
struct TauFrame {
    c: AdaptiveCoeffs,
    fq: Mat,
    obs_weight: Mat,
    /// `obs_weight (sigma_W sigma_W^T)^-1 obs_weight^T`
    w: Mat,
    /// `drift^T - Fq O - obs_weight G^T`
    m: Mat,
    /// `O + G (sigma_W sigma_W^T) G^T`
    z: Mat,
}

fn tau_frame(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    rho: &AdaptiveRhoGains,
    t: f64,
) -> Option<TauFrame> {
    let c = coeffs_or_nan(ctx, filter, agent, t)?;
    let fq = rho.quadratic.eval(t);
    let obs = &ctx.noise.obs;
    let obs_weight = &fq * &c.tau_input * obs + &c.stealth_obs * obs;
    let w = symmetrize(&(&obs_weight * &ctx.noise.obs_roots.inv * obs_weight.transpose()));
    let m = c.drift.transpose() - &fq * &c.control - &obs_weight * c.tau_input.transpose();
    let z = symmetrize(&(&c.control + &c.tau_input * obs * c.tau_input.transpose()));
    Some(TauFrame {
        c,
        fq,
        obs_weight,
        w,
        m,
        z,
    })
}

pub(crate) fn tau_rhs<'a>(
    ctx: &'a Context,
    filter: &'a FilterGains,
    agent: &'a AgentGains,
    rho: &'a AdaptiveRhoGains,
    phi0: &'a Mat,
) -> impl Fn(f64, &Vector) -> Vector + 'a {
    let n = 3 * ctx.dim();
    let layout = StateLayout::new().symmetric(n).vector(n);
    move |t, x| {
        let Some(tf) = tau_frame(ctx, filter, agent, rho, t) else {
            return super::nan_state(x.len());
        };
        let p = layout.unpack(x);
        let (ft, fo) = (&p[0], &p[1]);
        let shifted = fo + phi0;
        let dft = ft * &tf.m + tf.m.transpose() * ft - ft * &tf.w * ft - &tf.z;
        let src = &tf.fq * &tf.c.drift_offset + &tf.c.running_linear - &tf.w * &shifted;
        let dfo = ft * src + tf.m.transpose() * &shifted + &tf.c.drift_offset;
        layout.pack(&[&dft, &dfo])
    }
}

/// Solve the forward observation-attack system, then the closed-loop linear
/// value coefficient, and read off the optimal observation attack.
pub fn solve_adaptive_tau(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    rho: &AdaptiveRhoGains,
) -> Result<AdaptiveTauGains> {
    let d = ctx.dim();
    let n = 3 * d;
    let x0 = &ctx.model.prior_mean;
    let mut phi0 = Mat::zeros(n, 1);
    phi0.view_mut((0, 0), (d, 1)).copy_from(x0);
    phi0.view_mut((d, 0), (d, 1)).copy_from(x0);

    // The forward Riccati solution develops a layer a few simulation steps
    // wide near the horizon, and the backward pass below samples it between
    // nodes. Both passes therefore run on a refined grid.
    let fine = ctx.grid.refined(ctx.tau_refine);
    let factor = fine.n_steps / ctx.grid.n_steps;
    let layout = StateLayout::new().symmetric(n).vector(n);
    let rhs = tau_rhs(ctx, filter, agent, rho, &phi0);
    let states = integrate(
        &OdeProblem {
            name: "adaptive observation-attack Riccati",
            grid: fine,
            direction: Direction::Forward,
            boundary: Vector::zeros(layout.len()),
            rhs: &rhs,
            layout: Some(&layout),
        },
        &ctx.tableau,
    )?;
    let mut parts = layout.split(fine, &states);
    let offset = parts.remove(1);
    let riccati = parts.remove(0);

    // The linear value coefficient runs backward in time with the optimal
    // observation attack substituted in feedback form.
    let closed = |t: f64, fl: &Vector| -> Vector {
        let Some(tf) = tau_frame(ctx, filter, agent, rho, t) else {
            return super::nan_state(fl.len());
        };
        let fl = Mat::from_column_slice(n, 1, fl.as_slice());
        let ft = riccati.eval(t);
        let fo = offset.eval(t);
        let y = &ft * &fl + fo + &phi0;
        let d = -(&tf.m * &fl + &tf.fq * &tf.c.drift_offset + &tf.c.running_linear - &tf.w * y);
        Vector::from_column_slice(d.as_slice())
    };
    let lin = integrate(
        &OdeProblem {
            name: "adaptive closed-loop value offset",
            grid: fine,
            direction: Direction::Backward,
            boundary: Vector::zeros(n),
            rhs: &closed,
            layout: None,
        },
        &ctx.tableau,
    )?;
    let closed_loop_linear = GridFunction::new(fine, lin.iter().map(|v| Mat::from_column_slice(n, 1, v.as_slice())).collect())?
        .restrict(ctx.grid)?;

    let mut tau = Vec::with_capacity(ctx.grid.len());
    let mut tau_input = Vec::with_capacity(ctx.grid.len());
    let mut obs_weight = Vec::with_capacity(ctx.grid.len());
    for (k, t) in ctx.grid.nodes().enumerate() {
        let tf = tau_frame(ctx, filter, agent, rho, t).ok_or_else(|| crate::Error::NonFinite {
            t,
            what: "adaptive coefficients".into(),
        })?;
        let fl = closed_loop_linear.node(k);
        let kf = k * factor;
        tau.push(optimal_tau(ctx, &tf.obs_weight, &tf.c.tau_input, riccati.node(kf), offset.node(kf), fl, &phi0));
        tau_input.push(tf.c.tau_input);
        obs_weight.push(tf.obs_weight);
    }
    Ok(AdaptiveTauGains {
        riccati,
        offset,
        phi0: phi0.column(0).into_owned(),
        tau_input: GridFunction::new(ctx.grid, tau_input)?,
        obs_weight: GridFunction::new(ctx.grid, obs_weight)?,
        tau: GridFunction::new(ctx.grid, tau)?,
        closed_loop_linear,
    })
}

fn optimal_tau(ctx: &Context, obs_weight: &Mat, g: &Mat, ft: &Mat, fo: &Mat, fl: &Mat, phi0: &Mat) -> Mat {
    -(obs_weight.transpose() * (ft * fl + fo + phi0)) - &ctx.noise.obs * g.transpose() * fl
}

impl AdaptiveTauGains {
    /// Largest gap between the stored optimal attack and the same formula
    /// evaluated with an independently integrated linear value coefficient.
    pub fn consistency_gap(&self, ctx: &Context, completed: &CompletedRhoGains) -> f64 {
        let phi0 = Mat::from_column_slice(self.phi0.len(), 1, self.phi0.as_slice());
        let factor = self.riccati.grid().n_steps / ctx.grid.n_steps;
        (0..ctx.grid.len())
            .map(|k| {
                let again = optimal_tau(
                    ctx,
                    self.obs_weight.node(k),
                    self.tau_input.node(k),
                    self.riccati.node(k * factor),
                    self.offset.node(k * factor),
                    completed.linear.node(k),
                    &phi0,
                );
                (again - self.tau.node(k)).amax()
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn value_rhs<'a>(
    ctx: &'a Context,
    filter: &'a FilterGains,
    agent: &'a AgentGains,
    quadratic: &'a GridFunction,
    tau: &'a GridFunction,
) -> impl Fn(f64, &Vector) -> Vector + 'a {
    let n = 3 * ctx.dim();
    move |t, x| {
        let Some(c) = coeffs_or_nan(ctx, filter, agent, t) else {
            return super::nan_state(x.len());
        };
        let fq = quadratic.eval(t);
        let tau_t = tau.eval(t);
        let fl = Mat::from_column_slice(n, 1, &x.as_slice()[..n]);
        let drift_offset = &c.drift_offset + &c.tau_input * &tau_t;
        let lin = &c.running_linear + &c.stealth_obs * &tau_t;
        let dfl = &fq * &c.control * &fl - &fq * &drift_offset - c.drift.transpose() * &fl - lin;
        let tau_cost = 0.5 * (tau_t.transpose() * &ctx.noise.obs_roots.inv * &tau_t)[(0, 0)];
        let dc = -(0.5 * (&c.diffusion * &fq).trace() - 0.5 * (fl.transpose() * &c.control * &fl)[(0, 0)]
            + (fl.transpose() * &drift_offset)[(0, 0)]
            + c.running_const
            + tau_cost);
        let mut out = Vector::zeros(n + 1);
        out.rows_mut(0, n).copy_from_slice(dfl.as_slice());
        out[n] = dc;
        out
    }
}

/// Linear and constant value coefficients for a given observation attack,
/// integrated jointly backward from zero.
pub fn solve_f_phi_c_phi(
    ctx: &Context,
    filter: &FilterGains,
    agent: &AgentGains,
    rho: &AdaptiveRhoGains,
    tau: &GridFunction,
) -> Result<CompletedRhoGains> {
    let n = 3 * ctx.dim();
    if tau.shape() != (ctx.model.obs_dim(), 1) || tau.grid() != &ctx.grid {
        return Err(crate::Error::Shape(format!(
            "observation attack must be {} x 1 on the model grid",
            ctx.model.obs_dim()
        )));
    }
    let layout = StateLayout::new().vector(n).vector(1);
    let rhs = value_rhs(ctx, filter, agent, &rho.quadratic, tau);
    let states = integrate(
        &OdeProblem {
            name: "adaptive value offsets",
            grid: ctx.grid,
            direction: Direction::Backward,
            boundary: Vector::zeros(n + 1),
            rhs: &rhs,
            layout: None,
        },
        &ctx.tableau,
    )?;
    let mut parts = layout.split(ctx.grid, &states);
    let constant = parts.remove(1);
    let linear = parts.remove(0);
    Ok(CompletedRhoGains {
        quadratic: rho.quadratic.clone(),
        linear,
        constant,
        tau: tau.clone(),
    })
}

/// Expected attacker cost from the initial state, excluding the
/// attack-independent estimation-error term.
pub fn adaptive_value(gains: &CompletedRhoGains, phi0: &Vector) -> f64 {
    let fq = gains.quadratic.node(0);
    let fl = gains.linear.vector(0);
    0.5 * phi0.dot(&(fq * phi0)) + phi0.dot(&fl) + gains.constant.node(0)[(0, 0)]
}
