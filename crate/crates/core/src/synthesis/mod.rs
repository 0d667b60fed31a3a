//! Gain ODE systems: the filter covariance, the agent's feedback, the
//! deterministic attack's coupled system and the adaptive attack's value
//! function and observation-attack systems.

mod adaptive;
mod agent;
mod det;
mod filter;
pub mod residual;

pub use adaptive::{
    adaptive_value, solve_adaptive_rho, solve_adaptive_tau, solve_f_phi_c_phi, AdaptiveCoeffs,
    AdaptiveRhoGains, AdaptiveTauGains, CompletedRhoGains,
};
pub use agent::{solve_agent, AgentGains};
pub use det::{solve_det_attack, DetAttackGains};
pub use filter::{solve_filter, FilterGains};

use crate::coeffs::{spectral_norm, Mat, TimeGrid};
use crate::error::Result;
use crate::model::{NoiseCov, Pointwise, SystemModel};
use crate::ode::RkTableau;

/// A validated model together with everything the solvers share.
#[derive(Clone, Debug)]
pub struct Context {
    pub model: SystemModel,
    pub grid: TimeGrid,
    pub noise: NoiseCov,
    pub tableau: RkTableau,
    /// Substeps per model step used by the observation-attack systems.
    pub tau_refine: usize,
}

/// Default substeps per model step for the observation-attack systems.
pub const DEFAULT_TAU_REFINE: usize = 4;

impl Context {
    /// Validates the model; violations become an `InvalidModel` error.
    pub fn new(model: SystemModel) -> Result<Self> {
        let violations = model.validate();
        if !violations.is_empty() {
            return Err(crate::Error::InvalidModel(violations));
        }
        Ok(Self {
            grid: model.grid()?,
            noise: model.noise()?,
            model,
            tableau: RkTableau::rk8(),
            tau_refine: DEFAULT_TAU_REFINE,
        })
    }

    pub fn with_tableau(mut self, tableau: RkTableau) -> Self {
        self.tableau = tableau;
        self
    }

    pub fn with_tau_refine(mut self, factor: usize) -> Self {
        self.tau_refine = factor.max(1);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.model.lambda
    }

    pub fn dim(&self) -> usize {
        self.model.state_dim()
    }

    /// Filter and agent quantities at `t`, interpolated between nodes.
    pub(crate) fn frame(&self, filter: &FilterGains, agent: &AgentGains, t: f64) -> Result<Frame> {
        let pw = self.model.at(t)?;
        let r = filter.cov.eval(t);
        let kalman = &r * pw.h.transpose() * &self.noise.obs_roots.inv;
        let theta = &kalman * &pw.h;
        let lam = crate::coeffs::symmetrize(&(&kalman * &self.noise.obs * kalman.transpose()));
        let f = agent.feedback.eval(t);
        let fv = agent.offset.eval(t);
        let kf = &pw.k * &f;
        let alpha = &pw.drift_offset - &pw.k * &fv * 0.5;
        Ok(Frame {
            pw,
            kalman,
            theta,
            lam,
            f,
            fv,
            kf,
            alpha,
        })
    }
}

/// Everything the attack systems need at one time.
#[derive(Clone, Debug)]
pub(crate) struct Frame {
    pub pw: Pointwise,
    /// `R H^T (sigma_W sigma_W^T)^-1`
    pub kalman: Mat,
    /// Kalman gain times `H`.
    pub theta: Mat,
    /// `R H^T (sigma_W sigma_W^T)^-1 H R`
    pub lam: Mat,
    pub f: Mat,
    pub fv: Mat,
    /// `K F`
    pub kf: Mat,
    /// `a - K f / 2`
    pub alpha: Mat,
}

/// A derivative the integrator will reject as non-finite; used when
/// coefficients cannot be evaluated at a stage time.
pub(crate) fn nan_state(n: usize) -> crate::coeffs::Vector {
    crate::coeffs::Vector::from_element(n, f64::NAN)
}

/// Sufficient horizon for the deterministic attack system to be solvable.
/// Returns `f64::INFINITY` when the denominator vanishes.
pub fn existence_bound(ctx: &Context, filter: &FilterGains, agent: &AgentGains) -> Result<f64> {
    let mut sup = [0.0f64; 7];
    for (k, t) in ctx.grid.nodes().enumerate() {
        let pw = ctx.model.at(t)?;
        let f = agent.feedback.node(k);
        let kf = &pw.k * f;
        let fkf = f * &kf;
        let vals = [
            spectral_norm(&pw.q),
            spectral_norm(&fkf),
            spectral_norm(&pw.a),
            spectral_norm(&(&pw.a - &kf)),
            spectral_norm(&kf),
            spectral_norm(&pw.p_inv),
            spectral_norm(filter.correction_cov.node(k)),
        ];
        for (s, v) in sup.iter_mut().zip(vals) {
            *s = s.max(v);
        }
    }
    let [q, fkf, a, a_kf, kf, p_inv, lam] = sup;
    let b = a.max(a_kf) + kf;
    let denom = (2.0 * ctx.lambda() * q.max(fkf) + b) * (p_inv.max(lam) + b);
    Ok(if denom > 0.0 {
        std::f64::consts::FRAC_PI_2 / denom.sqrt()
    } else {
        f64::INFINITY
    })
}

/// Filter, agent and deterministic-attack gains for one model.
#[derive(Clone, Debug)]
pub struct GainSet {
    pub filter: FilterGains,
    pub agent: AgentGains,
    pub bound: f64,
}

impl GainSet {
    pub fn solve(ctx: &Context) -> Result<Self> {
        let filter = solve_filter(ctx)?;
        let agent = solve_agent(ctx)?;
        let bound = existence_bound(ctx, &filter, &agent)?;
        Ok(Self {
            filter,
            agent,
            bound,
        })
    }

    /// True when the horizon reaches the sufficient-existence bound.
    pub fn beyond_bound(&self, ctx: &Context) -> bool {
        ctx.model.horizon >= self.bound
    }
}
