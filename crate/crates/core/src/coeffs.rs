//! Time grids, time-varying coefficients and the small dense-matrix toolbox
//! shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Slack allowed when RK stage times land a hair outside `[0, T]`.
const DOMAIN_SLACK: f64 = 1e-12;

/// Uniform grid `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::Config("grid needs at least one step".into()));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// The grid with every step split into `factor` equal substeps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            n_steps: self.n_steps * factor.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node `k`; exact at both ends.
    pub fn node(&self, k: usize) -> f64 {
        debug_assert!(k <= self.n_steps);
        self.horizon * k as f64 / self.n_steps as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(move |k| self.node(k))
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= -DOMAIN_SLACK * self.horizon.max(1.0) && t <= self.horizon * (1.0 + DOMAIN_SLACK)
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) && t.is_finite() {
            Ok(())
        } else {
            Err(Error::Domain {
                t,
                horizon: self.horizon,
            })
        }
    }

    /// Cell index `k` with `t_k <= t <= t_{k+1}` and the fractional offset in it.
    /// Times within rounding of a node snap onto it.
    fn locate(&self, t: f64) -> (usize, f64) {
        let mut x = (t * self.n_steps as f64 / self.horizon).clamp(0.0, self.n_steps as f64);
        if (x - x.round()).abs() <= 1e-9 {
            x = x.round();
        }
        let k = (x.floor() as usize).min(self.n_steps - 1);
        (k, x - k as f64)
    }
}

/// A continuous matrix-valued coefficient on `[0, T]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeVaryingMatrix {
    Constant {
        #[serde(with = "mat_serde")]
        value: Mat,
    },
    /// `m0 + t * m1`
    Affine {
        #[serde(with = "mat_serde")]
        m0: Mat,
        #[serde(with = "mat_serde")]
        m1: Mat,
    },
    /// `amplitude * sin(omega * t + phase)`
    Sinusoid {
        #[serde(with = "mat_serde")]
        amplitude: Mat,
        omega: f64,
        phase: f64,
    },
    /// Node values on a grid, linearly interpolated in between.
    Sampled {
        grid: TimeGrid,
        #[serde(with = "mats_serde")]
        values: Vec<Mat>,
    },
}

impl TimeVaryingMatrix {
    pub fn constant(value: Mat) -> Self {
        Self::Constant { value }
    }

    pub fn scalar(v: f64) -> Self {
        Self::Constant {
            value: Mat::from_element(1, 1, v),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::Constant {
            value: Mat::zeros(rows, cols),
        }
    }

    pub fn sampled(grid: TimeGrid, values: Vec<Mat>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "sampled coefficient has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let (r, c) = values[0].shape();
        if values.iter().any(|v| v.shape() != (r, c)) {
            return Err(Error::Shape("sampled coefficient values differ in shape".into()));
        }
        Ok(Self::Sampled { grid, values })
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Constant { value } => value.shape(),
            Self::Affine { m0, .. } => m0.shape(),
            Self::Sinusoid { amplitude, .. } => amplitude.shape(),
            Self::Sampled { values, .. } => values[0].shape(),
        }
    }

    /// Internal consistency of the variant (matching shapes, finite data).
    pub fn check_shape(&self) -> Result<()> {
        match self {
            Self::Affine { m0, m1 } if m0.shape() != m1.shape() => {
                Err(Error::Shape("affine coefficient parts differ in shape".into()))
            }
            Self::Sampled { grid, values } if values.len() != grid.len() => Err(Error::Shape(
                format!("sampled coefficient has {} values for {} nodes", values.len(), grid.len()),
            )),
            Self::Sampled { values, .. } if values.iter().any(|v| v.shape() != values[0].shape()) => {
                Err(Error::Shape("sampled coefficient values differ in shape".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }

    /// Evaluate without a domain check. Sampled data is clamped to its grid.
    pub fn at(&self, t: f64) -> Mat {
        match self {
            Self::Constant { value } => value.clone(),
            Self::Affine { m0, m1 } => m0 + m1 * t,
            Self::Sinusoid {
                amplitude,
                omega,
                phase,
            } => amplitude * (omega * t + phase).sin(),
            Self::Sampled { grid, values } => {
                let (k, frac) = grid.locate(t);
                if frac == 0.0 {
                    values[k].clone()
                } else if frac == 1.0 {
                    values[k + 1].clone()
                } else {
                    &values[k] * (1.0 - frac) + &values[k + 1] * frac
                }
            }
        }
    }

    /// Evaluate at `t`, rejecting times outside `[0, horizon]`.
    pub fn eval(&self, t: f64, horizon: f64) -> Result<Mat> {
        let slack = DOMAIN_SLACK * horizon.max(1.0);
        if !(t.is_finite() && t >= -slack && t <= horizon + slack) {
            return Err(Error::Domain { t, horizon });
        }
        if let Self::Sampled { grid, .. } = self {
            grid.check(t)?;
        }
        Ok(self.at(t))
    }
}

/// Node values of a solved trajectory on a [`TimeGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: TimeGrid,
    values: Vec<Mat>,
}

impl GridFunction {
    pub fn new(grid: TimeGrid, values: Vec<Mat>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "grid function has {} values for {} nodes",
                values.len(),
                grid.len()
            )));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::Shape("grid function values differ in shape".into()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> Mat) -> Self {
        let values = grid.nodes().map(&mut f).collect();
        Self { grid, values }
    }

    pub fn zeros(grid: TimeGrid, rows: usize, cols: usize) -> Self {
        Self {
            grid,
            values: vec![Mat::zeros(rows, cols); grid.len()],
        }
    }

    pub fn from_scalars(grid: TimeGrid, xs: &[f64]) -> Result<Self> {
        Self::new(grid, xs.iter().map(|&x| Mat::from_element(1, 1, x)).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values[0].shape()
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Mat> {
        self.values
    }

    pub fn node(&self, k: usize) -> &Mat {
        &self.values[k]
    }

    /// Column vector at node `k` (for `n x 1` functions).
    pub fn vector(&self, k: usize) -> Vector {
        self.values[k].column(0).into_owned()
    }

    pub fn scalars(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[(0, 0)]).collect()
    }

    /// Piecewise-linear interpolation.
    pub fn eval_linear(&self, t: f64) -> Mat {
        let (k, frac) = self.grid.locate(t);
        if frac == 0.0 {
            return self.values[k].clone();
        }
        &self.values[k] * (1.0 - frac) + &self.values[k + 1] * frac
    }

    /// Four-point cubic Lagrange interpolation (linear on grids with fewer
    /// than three steps). Exact at nodes and for cubic-in-t data.
    pub fn eval(&self, t: f64) -> Mat {
        let n = self.grid.n_steps;
        if n < 3 {
            return self.eval_linear(t);
        }
        let (k, frac) = self.grid.locate(t);
        if frac == 0.0 {
            return self.values[k].clone();
        }
        let start = k.saturating_sub(1).min(n - 3);
        let x = (k - start) as f64 + frac;
        let w = [
            -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0,
            x * (x - 2.0) * (x - 3.0) / 2.0,
            -x * (x - 1.0) * (x - 3.0) / 2.0,
            x * (x - 1.0) * (x - 2.0) / 6.0,
        ];
        let mut out = &self.values[start] * w[0];
        for (j, wj) in w.iter().enumerate().skip(1) {
            out += &self.values[start + j] * *wj;
        }
        out
    }

    /// Restriction to a grid whose steps are whole multiples of this one's.
    pub fn restrict(&self, coarse: TimeGrid) -> Result<Self> {
        let factor = self.grid.n_steps / coarse.n_steps.max(1);
        if factor == 0 || coarse.n_steps * factor != self.grid.n_steps || coarse.horizon != self.grid.horizon {
            return Err(Error::Shape(format!(
                "cannot restrict a {}-step grid to {} steps",
                self.grid.n_steps, coarse.n_steps
            )));
        }
        Self::new(coarse, (0..coarse.len()).map(|k| self.values[k * factor].clone()).collect())
    }

    pub fn map(&self, mut f: impl FnMut(usize, &Mat) -> Mat) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().enumerate().map(|(k, v)| f(k, v)).collect(),
        }
    }

    /// Largest node value of the Frobenius norm (equals the Euclidean norm
    /// for vectors).
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest entrywise difference to another function on the same grid.
    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }

    /// Header names `{prefix}_{i}{j}` (1-based) in column-major order.
    pub fn column_names(&self, prefix: &str) -> Vec<String> {
        let (r, c) = self.shape();
        let mut names = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                if c == 1 {
                    names.push(format!("{prefix}_{}", i + 1));
                } else {
                    names.push(format!("{prefix}_{}{}", i + 1, j + 1));
                }
            }
        }
        names
    }
}

/// Principal square root, inverse square root and inverse of an SPD matrix.
#[derive(Clone, Debug)]
pub struct SymRoots {
    pub sqrt: Mat,
    pub inv_sqrt: Mat,
    pub inv: Mat,
}

pub fn sym_sqrt_inv(m: &Mat) -> Result<SymRoots> {
    let eig = checked_eigen(m)?;
    let scale = spectral_norm(m);
    let floor = 1e-12 * scale;
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l <= floor) {
        return Err(Error::Singular(format!(
            "eigenvalue {bad:e} is not positive (scale {scale:e})"
        )));
    }
    let v = &eig.eigenvectors;
    let build = |f: &dyn Fn(f64) -> f64| {
        let d = Mat::from_diagonal(&eig.eigenvalues.map(f));
        symmetrize(&(v * d * v.transpose()))
    };
    Ok(SymRoots {
        sqrt: build(&|l| l.sqrt()),
        inv_sqrt: build(&|l| 1.0 / l.sqrt()),
        inv: build(&|l| 1.0 / l),
    })
}

/// Square root of a PSD matrix; eigenvalues down to `-1e-12 * ||M||` are
/// clamped to zero.
pub fn psd_sqrt(m: &Mat) -> Result<Mat> {
    let eig = checked_eigen(m)?;
    let floor = -1e-12 * spectral_norm(m);
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::Singular(format!("matrix is not PSD (eigenvalue {bad:e})")));
    }
    let d = Mat::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * d * v.transpose())))
}

/// `true` iff the symmetric part of `m` has minimum eigenvalue `>= -tol`.
pub fn assert_psd(m: &Mat, tol: f64) -> bool {
    if !m.is_square() || m.iter().any(|x| !x.is_finite()) {
        return false;
    }
    min_eigenvalue(m) >= -tol
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

fn checked_eigen(m: &Mat) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    if !m.is_square() {
        return Err(Error::Shape(format!("expected a square matrix, got {:?}", m.shape())));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * m.amax().max(1.0) {
        return Err(Error::Shape(format!("matrix is not symmetric (asymmetry {asym:e})")));
    }
    Ok(SymmetricEigen::new(symmetrize(m)))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Matrix 2-norm (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

pub fn min_singular_value(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.min()
}

/// Inverse of a square matrix, with a readable error when it is singular.
pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("{what} is not invertible")))
}

/// Row-major nested arrays for matrices in config files. Column vectors may
/// also be written as flat arrays and 1x1 matrices as bare numbers.
pub mod mat_serde {
    use super::Mat;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Scalar(f64),
        Column(Vec<f64>),
        Rows(Vec<Vec<f64>>),
    }

    pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Mat, String> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err("matrix must not be empty".into());
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err("matrix rows have different lengths".into());
        }
        Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Scalar(x) => Ok(Mat::from_element(1, 1, x)),
            Repr::Column(xs) if !xs.is_empty() => Ok(Mat::from_column_slice(xs.len(), 1, &xs)),
            Repr::Column(_) => Err(serde::de::Error::custom("matrix must not be empty")),
            Repr::Rows(rows) => from_rows(&rows).map_err(serde::de::Error::custom),
        }
    }
}

pub mod mats_serde {
    use super::{mat_serde, Mat};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(mat_serde::to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let raw = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        raw.iter()
            .map(|rows| mat_serde::from_rows(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid(t: f64, n: usize) -> TimeGrid {
        TimeGrid::new(t, n).unwrap()
    }

    #[test]
    fn grid_nodes_are_exact_at_ends() {
        let g = grid(0.5, 1000);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(1000), 0.5);
        assert_eq!(g.len(), 1001);
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn eval_variants() {
        let c = TimeVaryingMatrix::scalar(-1.0);
        assert_eq!(c.eval(0.3, 0.5).unwrap()[(0, 0)], -1.0);

        let q = TimeVaryingMatrix::Affine {
            m0: Mat::identity(2, 2) * 5.0,
            m1: Mat::identity(2, 2) * 5.0,
        };
        assert_eq!(q.eval(0.5, 0.5).unwrap(), Mat::identity(2, 2) * 7.5);

        let s = TimeVaryingMatrix::sampled(
            grid(1.0, 1),
            vec![Mat::from_element(1, 1, 0.0), Mat::from_element(1, 1, 2.0)],
        )
        .unwrap();
        assert_eq!(s.eval(0.25, 1.0).unwrap()[(0, 0)], 0.5);

        assert!(matches!(c.eval(0.6, 0.5), Err(Error::Domain { .. })));
        assert!(matches!(c.eval(-0.1, 0.5), Err(Error::Domain { .. })));
    }

    #[test]
    fn sampled_is_exact_at_nodes() {
        let g = grid(1.0, 7);
        let vals: Vec<Mat> = g.nodes().map(|t| Mat::from_element(1, 1, (3.0 * t).sin())).collect();
        let s = TimeVaryingMatrix::sampled(g, vals.clone()).unwrap();
        for (k, t) in g.nodes().enumerate() {
            assert_eq!(s.at(t), vals[k]);
        }
    }

    #[test]
    fn sym_sqrt_inv_examples() {
        let r = sym_sqrt_inv(&Mat::from_element(1, 1, 0.16)).unwrap();
        assert_relative_eq!(r.sqrt[(0, 0)], 0.4, epsilon = 1e-15);
        assert_relative_eq!(r.inv_sqrt[(0, 0)], 2.5, epsilon = 1e-14);
        assert_relative_eq!(r.inv[(0, 0)], 6.25, epsilon = 1e-13);

        let id = Mat::identity(3, 3);
        let r = sym_sqrt_inv(&id).unwrap();
        assert_relative_eq!(r.sqrt, id, epsilon = 1e-15);
        assert_relative_eq!(r.inv, id, epsilon = 1e-15);

        let r = sym_sqrt_inv(&Mat::from_diagonal(&Vector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert_relative_eq!(r.sqrt, Mat::from_diagonal(&Vector::from_vec(vec![2.0, 3.0])), epsilon = 1e-14);
        assert_relative_eq!(
            r.inv_sqrt,
            Mat::from_diagonal(&Vector::from_vec(vec![0.5, 1.0 / 3.0])),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            r.inv,
            Mat::from_diagonal(&Vector::from_vec(vec![0.25, 1.0 / 9.0])),
            epsilon = 1e-14
        );
    }

    #[test]
    fn sym_sqrt_inv_errors() {
        let sing = Mat::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(sym_sqrt_inv(&sing), Err(Error::Singular(_))));
        let asym = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(sym_sqrt_inv(&asym), Err(Error::Shape(_))));
    }

    #[test]
    fn psd_predicate() {
        assert!(assert_psd(&Mat::zeros(2, 2), 1e-10));
        assert!(!assert_psd(&Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1.0])), 1e-10));
    }

    #[test]
    fn psd_sqrt_clamps_roundoff() {
        let m = Mat::from_diagonal(&Vector::from_vec(vec![4.0, -1e-14]));
        let s = psd_sqrt(&m).unwrap();
        assert_relative_eq!(s[(0, 0)], 2.0, epsilon = 1e-14);
        assert_eq!(s[(1, 1)], 0.0);
        assert!(psd_sqrt(&Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1e-3]))).is_err());
    }

    #[test]
    fn grid_function_interpolation() {
        let g = grid(1.0, 10);
        let affine = GridFunction::from_fn(g, |t| Mat::from_element(1, 1, 3.0 * t - 1.0));
        let cubic = GridFunction::from_fn(g, |t| Mat::from_element(1, 1, t * t * t - t));
        for &t in &[0.0, 0.013, 0.25, 0.5, 0.777, 0.96, 1.0] {
            assert_relative_eq!(affine.eval_linear(t)[(0, 0)], 3.0 * t - 1.0, epsilon = 1e-14);
            assert_relative_eq!(affine.eval(t)[(0, 0)], 3.0 * t - 1.0, epsilon = 1e-14);
            assert_relative_eq!(cubic.eval(t)[(0, 0)], t * t * t - t, epsilon = 1e-14);
        }
        assert_eq!(affine.column_names("x"), vec!["x_1"]);
        let m = GridFunction::zeros(g, 2, 2);
        assert_eq!(m.column_names("F"), vec!["F_11", "F_21", "F_12", "F_22"]);
    }

    #[test]
    fn config_matrix_forms() {
        #[derive(Deserialize, Serialize)]
        struct W {
            #[serde(with = "mat_serde")]
            m: Mat,
        }
        let w: W = toml::from_str("m = 2.5").unwrap();
        assert_eq!(w.m.shape(), (1, 1));
        let w: W = toml::from_str("m = [0.2, 0.0]").unwrap();
        assert_eq!(w.m.shape(), (2, 1));
        let w: W = toml::from_str("m = [[2.0, 1.0], [0.0, 3.0]]").unwrap();
        assert_eq!(w.m[(0, 1)], 1.0);
        assert_eq!(w.m[(1, 0)], 0.0);
        assert!(toml::from_str::<W>("m = [[1.0], [1.0, 2.0]]").is_err());
    }

    fn spd(n: usize, seed: &[f64]) -> Mat {
        let a = Mat::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
        &a * a.transpose() + Mat::identity(n, n) * 0.1
    }

    proptest! {
        #[test]
        fn sqrt_round_trip(n in 1usize..=6, seed in prop::collection::vec(-2.0f64..2.0, 36)) {
            let m = spd(n, &seed);
            let r = sym_sqrt_inv(&m).unwrap();
            let err = (&r.sqrt * &r.sqrt - &m).norm();
            prop_assert!(err <= 1e-10 * m.norm());
            let id = &r.inv * &m;
            prop_assert!((id - Mat::identity(n, n)).amax() < 1e-8);
        }
    }
}
