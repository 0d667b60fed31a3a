//! The attacked LQG problem: coefficients, validation, presets and the
//! config-file representation.

use serde::{Deserialize, Serialize};

use crate::coeffs::{
    assert_psd, inverse, mat_serde, min_eigenvalue, min_singular_value, spectral_norm, sym_sqrt_inv,
    Mat, SymRoots, TimeGrid, TimeVaryingMatrix,
};
use crate::error::{Error, Result};

/// Coefficients of the partially observed linear system, the agent's cost
/// and the attacker's penalty. Field names follow the role of each symbol;
/// the conventional letter is given in the field docs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemModel {
    /// `A`, d x d.
    #[serde(with = "tvm_serde")]
    pub drift: TimeVaryingMatrix,
    /// `B`, d x c.
    #[serde(with = "tvm_serde")]
    pub input: TimeVaryingMatrix,
    /// `H`, m x d.
    #[serde(with = "tvm_serde")]
    pub observation: TimeVaryingMatrix,
    /// `a`, d x 1.
    #[serde(with = "tvm_serde")]
    pub drift_offset: TimeVaryingMatrix,
    /// `h`, m x 1.
    #[serde(with = "tvm_serde")]
    pub observation_offset: TimeVaryingMatrix,
    /// `sigma_V`, d x p.
    #[serde(with = "mat_serde")]
    pub state_noise: Mat,
    /// `sigma_W`, m x q.
    #[serde(with = "mat_serde")]
    pub observation_noise: Mat,
    /// `x0`, d x 1.
    #[serde(with = "mat_serde")]
    pub prior_mean: Mat,
    /// `R0`, d x d.
    #[serde(with = "mat_serde")]
    pub prior_cov: Mat,
    /// `Q`, d x d.
    #[serde(with = "tvm_serde")]
    pub state_cost: TimeVaryingMatrix,
    /// `S`, c x c.
    #[serde(with = "tvm_serde")]
    pub control_cost: TimeVaryingMatrix,
    /// `r`, d x 1.
    #[serde(with = "tvm_serde")]
    pub reference: TimeVaryingMatrix,
    /// `P`, d x d.
    #[serde(with = "tvm_serde")]
    pub attack_penalty: TimeVaryingMatrix,
    /// Weight of degradation against stealthiness.
    pub lambda: f64,
    pub horizon: f64,
    pub n_steps: usize,
}

/// Model coefficients evaluated at one time, with the control weight
/// `K = B S^-1 B^T` precomputed.
#[derive(Clone, Debug)]
pub struct Pointwise {
    pub a: Mat,
    pub b: Mat,
    pub h: Mat,
    pub drift_offset: Mat,
    pub obs_offset: Mat,
    pub q: Mat,
    pub s_inv: Mat,
    pub r: Mat,
    pub p_inv: Mat,
    pub k: Mat,
}

/// Constant noise covariances and the roots of the observation covariance.
#[derive(Clone, Debug)]
pub struct NoiseCov {
    /// `sigma_V sigma_V^T`
    pub state: Mat,
    /// `sigma_W sigma_W^T`
    pub obs: Mat,
    pub obs_roots: SymRoots,
}

impl SystemModel {
    pub fn state_dim(&self) -> usize {
        self.prior_mean.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.input.shape().1
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.shape().0
    }

    pub fn state_noise_dim(&self) -> usize {
        self.state_noise.ncols()
    }

    pub fn obs_noise_dim(&self) -> usize {
        self.observation_noise.ncols()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.n_steps)
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    pub fn noise(&self) -> Result<NoiseCov> {
        let obs = &self.observation_noise * self.observation_noise.transpose();
        Ok(NoiseCov {
            state: &self.state_noise * self.state_noise.transpose(),
            obs_roots: sym_sqrt_inv(&obs)?,
            obs,
        })
    }

    /// Coefficients at `t` (no domain check; solver stage times may sit a
    /// rounding error outside the horizon).
    pub fn at(&self, t: f64) -> Result<Pointwise> {
        let b = self.input.at(t);
        let s_inv = spd_inverse(&self.control_cost.at(t), "control cost")?;
        let k = &b * &s_inv * b.transpose();
        Ok(Pointwise {
            a: self.drift.at(t),
            h: self.observation.at(t),
            drift_offset: self.drift_offset.at(t),
            obs_offset: self.observation_offset.at(t),
            q: self.state_cost.at(t),
            r: self.reference.at(t),
            p_inv: spd_inverse(&self.attack_penalty.at(t), "attack penalty")?,
            s_inv,
            k: crate::coeffs::symmetrize(&k),
            b,
        })
    }

    pub fn validate(&self) -> Vec<String> {
        validate(self)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    if m.nrows() == 1 {
        if m[(0, 0)] > 0.0 {
            return Ok(Mat::from_element(1, 1, 1.0 / m[(0, 0)]));
        }
        return Err(Error::Singular(format!("{what} is not positive definite")));
    }
    match m.clone().cholesky() {
        Some(ch) => Ok(crate::coeffs::symmetrize(&ch.inverse())),
        None => inverse(m, what),
    }
}

/// Every violated invariant, each naming the field and the failed check.
pub fn validate(model: &SystemModel) -> Vec<String> {
    let mut v = Vec::new();
    let d = model.prior_mean.nrows();
    let c = model.input.shape().1;
    let m = model.observation.shape().0;
    let (p, q) = (model.state_noise.ncols(), model.observation_noise.ncols());

    if model.prior_mean.ncols() != 1 {
        v.push("prior_mean must be a column vector".to_string());
    }
    if !(model.horizon > 0.0 && model.horizon.is_finite()) {
        v.push(format!("horizon must be positive (got {})", model.horizon));
    }
    if model.n_steps == 0 {
        v.push("n_steps must be at least 1".to_string());
    }
    if !(model.lambda >= 0.0 && model.lambda.is_finite()) {
        v.push(format!("lambda must be non-negative (got {})", model.lambda));
    }

    let shapes: [(&str, (usize, usize), (usize, usize)); 12] = [
        ("drift", model.drift.shape(), (d, d)),
        ("input", model.input.shape(), (d, c)),
        ("observation", model.observation.shape(), (m, d)),
        ("drift_offset", model.drift_offset.shape(), (d, 1)),
        ("observation_offset", model.observation_offset.shape(), (m, 1)),
        ("state_noise", model.state_noise.shape(), (d, p)),
        ("observation_noise", model.observation_noise.shape(), (m, q)),
        ("prior_cov", model.prior_cov.shape(), (d, d)),
        ("state_cost", model.state_cost.shape(), (d, d)),
        ("control_cost", model.control_cost.shape(), (c, c)),
        ("reference", model.reference.shape(), (d, 1)),
        ("attack_penalty", model.attack_penalty.shape(), (d, d)),
    ];
    let mut shapes_ok = true;
    for (name, got, want) in shapes {
        if got != want {
            shapes_ok = false;
            v.push(format!("{name} has shape {got:?}, expected {want:?}"));
        }
    }
    let tvms = [
        ("drift", &model.drift),
        ("input", &model.input),
        ("observation", &model.observation),
        ("drift_offset", &model.drift_offset),
        ("observation_offset", &model.observation_offset),
        ("state_cost", &model.state_cost),
        ("control_cost", &model.control_cost),
        ("reference", &model.reference),
        ("attack_penalty", &model.attack_penalty),
    ];
    for (name, tvm) in tvms {
        if let Err(e) = tvm.check_shape() {
            shapes_ok = false;
            v.push(format!("{name}: {e}"));
        }
        if let TimeVaryingMatrix::Sampled { grid, .. } = tvm {
            if grid.horizon + 1e-12 < model.horizon {
                v.push(format!(
                    "{name} is sampled only up to t = {}, short of the horizon",
                    grid.horizon
                ));
            }
        }
    }
    if !shapes_ok {
        return v;
    }

    if d > p {
        v.push(format!("state_noise has {p} columns, fewer than the state dimension {d}"));
    }
    if m > q {
        v.push(format!(
            "observation_noise has {q} columns, fewer than the observation dimension {m}"
        ));
    }
    if min_singular_value(&model.state_noise) <= 1e-10 {
        v.push("state_noise (sigma_V) rank-deficient".to_string());
    }
    if min_singular_value(&model.observation_noise) <= 1e-10 {
        v.push("observation_noise (sigma_W) rank-deficient".to_string());
    }
    let asym = (&model.prior_cov - model.prior_cov.transpose()).amax();
    if asym > 1e-10 * model.prior_cov.amax().max(1.0) || !assert_psd(&model.prior_cov, 1e-12) {
        v.push("prior_cov (R0) not symmetric positive semidefinite".to_string());
    }

    let grid = match TimeGrid::new(model.horizon, model.n_steps.max(1)) {
        Ok(g) => g,
        Err(_) => return v,
    };
    let mut flags = [false; 4];
    for t in grid.nodes() {
        let qt = model.state_cost.at(t);
        if !flags[0] && !is_psd(&qt) {
            flags[0] = true;
            v.push(format!("state_cost (Q) not positive semidefinite (t = {t})"));
        }
        if !flags[1] && !is_pd(&model.control_cost.at(t)) {
            flags[1] = true;
            v.push(format!("control_cost (S) not positive definite (t = {t})"));
        }
        if !flags[2] && !is_pd(&model.attack_penalty.at(t)) {
            flags[2] = true;
            v.push(format!("attack_penalty (P) not positive definite (t = {t})"));
        }
        if !flags[3] && tvms.iter().any(|(_, m)| m.at(t).iter().any(|x| !x.is_finite())) {
            flags[3] = true;
            v.push(format!("non-finite coefficient value at t = {t}"));
        }
    }
    v
}

fn symmetric_enough(m: &Mat) -> bool {
    (m - m.transpose()).amax() <= 1e-10 * m.amax().max(1.0)
}

fn is_psd(m: &Mat) -> bool {
    symmetric_enough(m) && assert_psd(m, 1e-12 * spectral_norm(m).max(1.0))
}

fn is_pd(m: &Mat) -> bool {
    symmetric_enough(m) && m.iter().all(|x| x.is_finite()) && {
        let norm = spectral_norm(m);
        norm > 0.0 && min_eigenvalue(m) > 1e-12 * norm
    }
}

/// A named experiment configuration.
#[derive(Clone, Debug)]
pub struct ScenarioPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub model: SystemModel,
    pub mc_paths: usize,
    pub base_seed: u64,
}

pub const PRESET_NAMES: [&str; 3] = ["1d-mean-revert", "1d-comparison", "2d-tracking"];

const DEFAULT_SEED: u64 = 20_240_601;
const DEFAULT_PATHS: usize = 25_000;

fn scalar(x: f64) -> Mat {
    Mat::from_element(1, 1, x)
}

fn mean_revert_1d() -> SystemModel {
    let c = TimeVaryingMatrix::scalar;
    SystemModel {
        drift: c(-1.0),
        input: c(1.0),
        observation: c(1.0),
        drift_offset: c(0.0),
        observation_offset: c(0.0),
        state_noise: scalar(0.6),
        observation_noise: scalar(0.4),
        prior_mean: scalar(0.5),
        prior_cov: scalar(0.0),
        state_cost: c(10.0),
        control_cost: c(1.0),
        reference: c(0.0),
        attack_penalty: c(1.0),
        lambda: 0.3,
        horizon: 0.5,
        n_steps: 1000,
    }
}

fn tracking_2d() -> SystemModel {
    let i2 = Mat::identity(2, 2);
    let cst = TimeVaryingMatrix::constant;
    SystemModel {
        drift: TimeVaryingMatrix::zeros(2, 2),
        input: cst(i2.clone()),
        observation: cst(Mat::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0])),
        drift_offset: TimeVaryingMatrix::zeros(2, 1),
        observation_offset: TimeVaryingMatrix::zeros(2, 1),
        state_noise: Mat::from_row_slice(2, 2, &[0.1, 0.05, 0.05, 0.1]),
        observation_noise: &i2 * 0.1,
        prior_mean: Mat::from_column_slice(2, 1, &[0.2, 0.0]),
        prior_cov: &i2 * 0.001,
        state_cost: TimeVaryingMatrix::Affine {
            m0: &i2 * 5.0,
            m1: &i2 * 5.0,
        },
        control_cost: cst(&i2 * 0.5),
        reference: TimeVaryingMatrix::Affine {
            m0: Mat::zeros(2, 1),
            m1: Mat::from_column_slice(2, 1, &[2.0, 2.0]),
        },
        attack_penalty: cst(i2),
        lambda: 0.3,
        horizon: 0.5,
        n_steps: 1000,
    }
}

pub fn preset(name: &str) -> Result<ScenarioPreset> {
    let (description, model) = match name {
        "1d-mean-revert" => ("scalar mean-reverting state", mean_revert_1d()),
        "1d-comparison" => ("scalar state with unit noise levels and R0 = 2", {
            let mut m = mean_revert_1d();
            m.state_noise = scalar(1.0);
            m.observation_noise = scalar(1.0);
            m.prior_cov = scalar(2.0);
            m
        }),
        "2d-tracking" => ("planar position tracking a moving reference", tracking_2d()),
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    let name = PRESET_NAMES.iter().find(|n| **n == name).copied().unwrap_or("");
    Ok(ScenarioPreset {
        name,
        description,
        model,
        mc_paths: DEFAULT_PATHS,
        base_seed: DEFAULT_SEED,
    })
}

/// Time-varying fields accept a bare matrix as shorthand for a constant.
mod tvm_serde {
    use super::{Mat, TimeVaryingMatrix};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Tagged(TimeVaryingMatrix),
        Bare(#[serde(with = "crate::coeffs::mat_serde")] Mat),
    }

    pub fn serialize<S: Serializer>(m: &TimeVaryingMatrix, s: S) -> Result<S::Ok, S::Error> {
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<TimeVaryingMatrix, D::Error> {
        Ok(match Repr::deserialize(d)? {
            Repr::Tagged(m) => m,
            Repr::Bare(value) => TimeVaryingMatrix::Constant { value },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert_eq!(p.name, name);
            assert!(p.model.validate().is_empty(), "{name}: {:?}", p.model.validate());
        }
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn preset_values() {
        let m = preset("1d-mean-revert").unwrap().model;
        assert_eq!(m.prior_mean[(0, 0)], 0.5);
        assert_eq!(m.state_cost.at(0.2)[(0, 0)], 10.0);
        assert_eq!(m.n_steps, 1000);
        assert_eq!(preset("1d-mean-revert").unwrap().mc_paths, 25_000);

        let m = preset("2d-tracking").unwrap().model;
        let r = m.reference.eval(0.25, m.horizon).unwrap();
        assert_eq!((r[(0, 0)], r[(1, 0)]), (0.5, 0.5));
        assert_eq!(m.state_cost.at(0.5), Mat::identity(2, 2) * 7.5);

        let m = preset("1d-comparison").unwrap().model;
        assert_eq!(m.state_noise[(0, 0)], 1.0);
        assert_eq!(m.observation_noise[(0, 0)], 1.0);
        assert_eq!(m.prior_cov[(0, 0)], 2.0);
    }

    #[test]
    fn violations_are_named() {
        let mut m = preset("1d-mean-revert").unwrap().model;
        m.observation_noise = scalar(0.0);
        assert_eq!(m.validate(), vec!["observation_noise (sigma_W) rank-deficient"]);

        let mut m = preset("1d-mean-revert").unwrap().model;
        m.control_cost = TimeVaryingMatrix::scalar(0.0);
        let v = m.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].starts_with("control_cost (S) not positive definite"));

        let mut m = preset("2d-tracking").unwrap().model;
        m.observation = TimeVaryingMatrix::zeros(2, 3);
        assert!(m.validate()[0].contains("observation has shape"));
    }

    #[test]
    fn toml_round_trip_is_exact() {
        for name in PRESET_NAMES {
            let m = preset(name).unwrap().model;
            let back = SystemModel::from_toml(&m.to_toml().unwrap()).unwrap();
            assert_eq!(back, m);
            let grid = m.grid().unwrap();
            for t in grid.nodes() {
                assert_eq!(back.state_cost.at(t), m.state_cost.at(t));
                assert_eq!(back.reference.at(t), m.reference.at(t));
                assert_eq!(back.drift.at(t), m.drift.at(t));
            }
        }
    }

    #[test]
    fn shorthand_config() {
        let text = r#"
            drift = -1.0
            input = 1.0
            observation = 1.0
            drift_offset = { kind = "sinusoid", amplitude = 0.1, omega = 3.0, phase = 0.0 }
            observation_offset = 0.0
            state_noise = 0.6
            observation_noise = 0.4
            prior_mean = [0.5]
            prior_cov = 0.0
            state_cost = { kind = "affine", m0 = 10.0, m1 = 1.0 }
            control_cost = 1.0
            reference = 0.0
            attack_penalty = 1.0
            lambda = 0.3
            horizon = 0.5
            n_steps = 100
        "#;
        let m = SystemModel::from_toml(text).unwrap();
        assert!(m.validate().is_empty());
        assert_eq!(m.state_cost.at(0.5)[(0, 0)], 10.5);
        assert!((m.drift_offset.at(0.5)[(0, 0)] - 0.1 * 1.5f64.sin()).abs() < 1e-15);
        assert!(SystemModel::from_toml("drift = 1.0").is_err());
    }

    #[test]
    fn pointwise_control_weight() {
        let m = preset("2d-tracking").unwrap().model;
        let pw = m.at(0.1).unwrap();
        approx::assert_relative_eq!(pw.k, Mat::identity(2, 2) * 2.0, epsilon = 1e-14);
        approx::assert_relative_eq!(pw.p_inv, Mat::identity(2, 2), epsilon = 1e-14);
    }
}
