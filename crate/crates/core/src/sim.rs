//! Euler–Maruyama simulation of the attacked closed loop.
//!
//! Each path owns a ChaCha stream selected by `(base_seed, path_index)`, so
//! a path's increments do not depend on which worker runs it or in what
//! order. Gaussian attack draws come from a second stream keyed by the
//! strategy's seed offset, which keeps the state and observation noise
//! identical across strategies for the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::attacks::{AttackStrategy, FilterState};
use crate::coeffs::{psd_sqrt, GridFunction, Mat, TimeGrid, Vector};
use crate::error::{Error, Result};
use crate::io::Table;
use crate::synthesis::{AgentGains, Context, FilterGains};

/// Per-path random source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    pub base_seed: u64,
    pub path_index: u64,
}

impl NoiseStream {
    pub fn new(base_seed: u64, path_index: u64) -> Self {
        Self { base_seed, path_index }
    }

    /// Prior draw and state/observation increments.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.base_seed);
        r.set_stream(self.path_index);
        r
    }

    /// Draws consumed by randomized attack strategies.
    pub fn attack_rng(&self, seed_offset: u64) -> ChaCha8Rng {
        // splitmix64 finalizer so nearby offsets give unrelated keys
        let mut z = self.base_seed ^ seed_offset.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        let mut r = ChaCha8Rng::seed_from_u64(z);
        r.set_stream(self.path_index);
        r
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_iterator(
        n,
        (0..n).map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        }),
    )
}

/// Coefficients the simulator reads at node `k`.
#[derive(Clone, Debug)]
struct Node {
    a: Mat,
    b: Mat,
    drift_offset: Vector,
    h: Mat,
    obs_offset: Vector,
    /// `-S^-1 B^T F`
    feedback: Mat,
    /// `-S^-1 B^T f / 2`
    feedforward: Vector,
    kalman: Mat,
}

/// Everything shared by the paths of one simulation.
#[derive(Clone, Debug)]
pub struct SimPlan {
    pub grid: TimeGrid,
    dims: (usize, usize),
    nodes: Vec<Node>,
    prior_mean: Vector,
    prior_sqrt: Mat,
    state_noise: Mat,
    obs_noise: Mat,
    obs_inv_sqrt: Mat,
}

impl SimPlan {
    pub fn new(ctx: &Context, filter: &FilterGains, agent: &AgentGains) -> Result<Self> {
        let mut nodes = Vec::with_capacity(ctx.grid.len());
        for (k, t) in ctx.grid.nodes().enumerate() {
            let pw = ctx.model.at(t)?;
            let gain = -(&pw.s_inv * pw.b.transpose());
            nodes.push(Node {
                feedback: &gain * agent.feedback.node(k),
                feedforward: (&gain * agent.offset.node(k) * 0.5).column(0).into_owned(),
                kalman: filter.kalman_gain.node(k).clone(),
                drift_offset: pw.drift_offset.column(0).into_owned(),
                obs_offset: pw.obs_offset.column(0).into_owned(),
                a: pw.a,
                b: pw.b,
                h: pw.h,
            });
        }
        Ok(Self {
            grid: ctx.grid,
            dims: (ctx.dim(), ctx.model.obs_dim()),
            nodes,
            prior_mean: ctx.model.prior_mean.column(0).into_owned(),
            prior_sqrt: psd_sqrt(&ctx.model.prior_cov)?,
            state_noise: ctx.model.state_noise.clone(),
            obs_noise: ctx.model.observation_noise.clone(),
            obs_inv_sqrt: ctx.noise.obs_roots.inv_sqrt.clone(),
        })
    }

    /// `(state, observation)` dimensions.
    pub fn dims(&self) -> (usize, usize) {
        self.dims
    }
}

/// One simulated path. Every field holds one vector per grid node except
/// `innovation_increments`, which holds one per step.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBundle {
    pub state: Vec<Vector>,
    pub observation: Vec<Vector>,
    pub agent_filter: Vec<Vector>,
    pub aware_filter: Vec<Vector>,
    pub discrepancy: Vec<Vector>,
    pub innovation: Vec<Vector>,
    pub innovation_increments: Vec<Vector>,
    pub control: Vec<Vector>,
    pub rho: Vec<Vector>,
    pub tau: Vec<Vector>,
}

impl TrajectoryBundle {
    /// Columns `t, x, y, xa, xc, dx, innov, u, rho, tau`.
    pub fn to_table(&self, grid: &TimeGrid) -> Result<Table> {
        let series: [(&str, &Vec<Vector>); 9] = [
            ("x", &self.state),
            ("y", &self.observation),
            ("xa", &self.agent_filter),
            ("xc", &self.aware_filter),
            ("dx", &self.discrepancy),
            ("innov", &self.innovation),
            ("u", &self.control),
            ("rho", &self.rho),
            ("tau", &self.tau),
        ];
        let funcs = series
            .iter()
            .map(|(name, v)| {
                let g = GridFunction::new(*grid, v.iter().map(|x| Mat::from_column_slice(x.len(), 1, x.as_slice())).collect())?;
                Ok((*name, g))
            })
            .collect::<Result<Vec<_>>>()?;
        let cols: Vec<(&str, &GridFunction)> = funcs.iter().map(|(n, g)| (*n, g)).collect();
        Table::from_grid(grid, &cols)
    }
}

fn check(v: &Vector, t: f64, k: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            t,
            what: format!("{what} at step {k}"),
        })
    }
}

/// The agent filter step. It sees only the observation increment and the
/// model coefficients.
fn agent_filter_step(node: &Node, h: f64, x: &Vector, u: &Vector, dy: &Vector) -> (Vector, Vector) {
    let innov = dy - (&node.h * x + &node.obs_offset) * h;
    let next = x + (&node.a * x + &node.b * u + &node.drift_offset) * h + &node.kalman * &innov;
    (next, innov)
}

pub fn simulate_path(plan: &SimPlan, strategy: &AttackStrategy, noise: NoiseStream) -> Result<TrajectoryBundle> {
    let grid = plan.grid;
    let n = grid.n_steps;
    let h = grid.step();
    let sqrt_h = h.sqrt();
    let (d, m) = plan.dims;
    let p = plan.state_noise.ncols();
    let q = plan.obs_noise.ncols();
    let mut rng = noise.rng();
    let mut attack_rng = match strategy {
        AttackStrategy::GaussianWhite { seed_offset, .. } => noise.attack_rng(*seed_offset),
        _ => noise.attack_rng(0),
    };

    let with_cap = || Vec::with_capacity(n + 1);
    let mut b = TrajectoryBundle {
        state: with_cap(),
        observation: with_cap(),
        agent_filter: with_cap(),
        aware_filter: with_cap(),
        discrepancy: with_cap(),
        innovation: with_cap(),
        innovation_increments: Vec::with_capacity(n),
        control: with_cap(),
        rho: with_cap(),
        tau: with_cap(),
    };

    let mut x = &plan.prior_mean + &plan.prior_sqrt * normals(&mut rng, d, 1.0);
    let mut y = Vector::zeros(m);
    let mut xa = plan.prior_mean.clone();
    let mut xc = plan.prior_mean.clone();
    let mut dx = Vector::zeros(d);
    let mut innov = Vector::zeros(m);

    for k in 0..=n {
        let t = grid.node(k);
        let node = &plan.nodes[k];
        let u = &node.feedback * &xa + &node.feedforward;
        let state = FilterState {
            aware: &xc,
            agent: &xa,
            discrepancy: &dx,
        };
        let (rho, tau) = strategy.eval(plan.dims, k, t, Some(state), &mut attack_rng)?;
        check(&rho, t, k, "state attack")?;
        check(&tau, t, k, "observation attack")?;
        b.state.push(x.clone());
        b.observation.push(y.clone());
        b.agent_filter.push(xa.clone());
        b.aware_filter.push(xc.clone());
        b.discrepancy.push(dx.clone());
        b.innovation.push(innov.clone());
        if k == n {
            b.control.push(u);
            b.rho.push(rho);
            b.tau.push(tau);
            break;
        }

        let dv = normals(&mut rng, p, sqrt_h);
        let dw = normals(&mut rng, q, sqrt_h);
        let next_x = &x + (&node.a * &x + &node.b * &u + &node.drift_offset + &rho) * h + &plan.state_noise * dv;
        let dy = (&node.h * &x + &node.obs_offset + &tau) * h + &plan.obs_noise * dw;
        let (next_xa, raw_innov) = agent_filter_step(node, h, &xa, &u, &dy);
        let aware_innov = &dy - (&node.h * &xc + &node.obs_offset + &tau) * h;
        let next_xc = &xc + (&node.a * &xc + &node.b * &u + &node.drift_offset + &rho) * h + &node.kalman * aware_innov;
        let d_innov = &plan.obs_inv_sqrt * raw_innov;

        x = next_x;
        y += &dy;
        xa = next_xa;
        xc = next_xc;
        dx = &xc - &xa;
        innov += &d_innov;
        check(&x, grid.node(k + 1), k + 1, "state")?;
        check(&xc, grid.node(k + 1), k + 1, "attack-aware filter")?;
        b.innovation_increments.push(d_innov);
        b.control.push(u);
        b.rho.push(rho);
        b.tau.push(tau);
    }
    Ok(b)
}

/// Runs `n_paths` independent paths and maps each through `reduce`. The
/// results come back in path order and do not depend on `workers`
/// (0 means the rayon default).
pub fn simulate_batch<S, F>(
    plan: &SimPlan,
    strategy: &AttackStrategy,
    n_paths: usize,
    base_seed: u64,
    workers: usize,
    reduce: F,
) -> Result<Vec<S>>
where
    S: Send,
    F: Fn(usize, &TrajectoryBundle) -> Result<S> + Sync,
{
    let run = || {
        (0..n_paths)
            .into_par_iter()
            .map(|i| {
                simulate_path(plan, strategy, NoiseStream::new(base_seed, i as u64))
                    .and_then(|b| reduce(i, &b))
                    .map_err(|e| Error::Path {
                        path: i,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<S>>>()
    };
    if workers == 0 {
        return run();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?
        .install(run)
}

/// Node-wise mean of one field over a set of bundles.
pub fn mean_path(bundles: &[TrajectoryBundle], field: impl Fn(&TrajectoryBundle) -> &Vec<Vector>) -> Vec<Vector> {
    let first = field(&bundles[0]);
    let mut acc: Vec<Vector> = first.iter().map(|v| Vector::zeros(v.len())).collect();
    for b in bundles {
        for (a, v) in acc.iter_mut().zip(field(b)) {
            *a += v;
        }
    }
    let n = bundles.len() as f64;
    acc.into_iter().map(|a| a / n).collect()
}
