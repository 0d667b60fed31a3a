//! Fixed-step explicit Runge–Kutta integration on a [`TimeGrid`], forward or
//! backward in time.

use crate::coeffs::{GridFunction, Mat, TimeGrid, Vector};
use crate::error::{Error, Result};

/// Any state norm above this aborts the integration as a blow-up.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Explicit Butcher tableau.
#[derive(Clone, Debug)]
pub struct RkTableau {
    pub name: &'static str,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl RkTableau {
    pub fn stages(&self) -> usize {
        self.b.len()
    }

    pub fn rk4() -> Self {
        Self {
            name: "rk4",
            a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
        }
    }

    /// Cooper & Verner's 11-stage method of order 8.
    pub fn rk8() -> Self {
        let s = 21f64.sqrt();
        let a = vec![
            vec![],
            vec![0.5],
            vec![0.25, 0.25],
            vec![1.0 / 7.0, (-7.0 - 3.0 * s) / 98.0, (21.0 + 5.0 * s) / 49.0],
            vec![(11.0 + s) / 84.0, 0.0, (18.0 + 4.0 * s) / 63.0, (21.0 - s) / 252.0],
            vec![
                (5.0 + s) / 48.0,
                0.0,
                (9.0 + s) / 36.0,
                (-231.0 + 14.0 * s) / 360.0,
                (63.0 - 7.0 * s) / 80.0,
            ],
            vec![
                (10.0 - s) / 42.0,
                0.0,
                (-432.0 + 92.0 * s) / 315.0,
                (633.0 - 145.0 * s) / 90.0,
                (-504.0 + 115.0 * s) / 70.0,
                (63.0 - 13.0 * s) / 35.0,
            ],
            vec![
                1.0 / 14.0,
                0.0,
                0.0,
                0.0,
                (14.0 - 3.0 * s) / 126.0,
                (13.0 - 3.0 * s) / 63.0,
                1.0 / 9.0,
            ],
            vec![
                1.0 / 32.0,
                0.0,
                0.0,
                0.0,
                (91.0 - 21.0 * s) / 576.0,
                11.0 / 72.0,
                (-385.0 - 75.0 * s) / 1152.0,
                (63.0 + 13.0 * s) / 128.0,
            ],
            vec![
                1.0 / 14.0,
                0.0,
                0.0,
                0.0,
                1.0 / 9.0,
                (-733.0 - 147.0 * s) / 2205.0,
                (515.0 + 111.0 * s) / 504.0,
                (-51.0 - 11.0 * s) / 56.0,
                (132.0 + 28.0 * s) / 245.0,
            ],
            vec![
                0.0,
                0.0,
                0.0,
                0.0,
                (-42.0 + 7.0 * s) / 18.0,
                (-18.0 + 28.0 * s) / 45.0,
                (-273.0 - 53.0 * s) / 72.0,
                (301.0 + 53.0 * s) / 72.0,
                (28.0 - 28.0 * s) / 45.0,
                (49.0 - 7.0 * s) / 18.0,
            ],
        ];
        let b = vec![
            0.05,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            0.0,
            49.0 / 180.0,
            16.0 / 45.0,
            49.0 / 180.0,
            0.05,
        ];
        let c = vec![
            0.0,
            0.5,
            0.5,
            (7.0 + s) / 14.0,
            (7.0 + s) / 14.0,
            0.5,
            (7.0 - s) / 14.0,
            (7.0 - s) / 14.0,
            0.5,
            (7.0 + s) / 14.0,
            1.0,
        ];
        Self { name: "rk8", a, b, c }
    }
}

impl Default for RkTableau {
    fn default() -> Self {
        Self::rk8()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Initial value at node 0.
    Forward,
    /// Terminal value at node `n_steps`.
    Backward,
}

/// One block of a stacked state vector, stored column-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
}

/// How matrices and vectors are stacked into one ODE state.
#[derive(Clone, Debug, Default)]
pub struct StateLayout {
    blocks: Vec<Block>,
}

impl StateLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn symmetric(mut self, n: usize) -> Self {
        self.blocks.push(Block {
            rows: n,
            cols: n,
            symmetric: true,
        });
        self
    }

    pub fn matrix(mut self, rows: usize, cols: usize) -> Self {
        self.blocks.push(Block {
            rows,
            cols,
            symmetric: false,
        });
        self
    }

    pub fn vector(self, n: usize) -> Self {
        self.matrix(n, 1)
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.rows * b.cols).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, parts: &[&Mat]) -> Vector {
        assert_eq!(parts.len(), self.blocks.len(), "block count mismatch");
        let mut out = Vector::zeros(self.len());
        let mut off = 0;
        for (blk, m) in self.blocks.iter().zip(parts) {
            assert_eq!(m.shape(), (blk.rows, blk.cols), "block shape mismatch");
            let n = blk.rows * blk.cols;
            out.rows_mut(off, n).copy_from_slice(m.as_slice());
            off += n;
        }
        out
    }

    pub fn unpack(&self, x: &Vector) -> Vec<Mat> {
        let mut off = 0;
        self.blocks
            .iter()
            .map(|blk| {
                let n = blk.rows * blk.cols;
                let m = Mat::from_column_slice(blk.rows, blk.cols, &x.as_slice()[off..off + n]);
                off += n;
                m
            })
            .collect()
    }

    /// Replace every symmetric block by its symmetric part.
    pub fn symmetrize(&self, x: &mut Vector) {
        let mut off = 0;
        for blk in &self.blocks {
            if blk.symmetric {
                let n = blk.rows;
                for j in 0..n {
                    for i in (j + 1)..n {
                        let (p, q) = (off + i + j * n, off + j + i * n);
                        let avg = 0.5 * (x[p] + x[q]);
                        x[p] = avg;
                        x[q] = avg;
                    }
                }
            }
            off += blk.rows * blk.cols;
        }
    }

    /// Split node states into one grid function per block.
    pub fn split(&self, grid: TimeGrid, states: &[Vector]) -> Vec<GridFunction> {
        let mut per_block: Vec<Vec<Mat>> = vec![Vec::with_capacity(states.len()); self.blocks.len()];
        for x in states {
            for (dst, m) in per_block.iter_mut().zip(self.unpack(x)) {
                dst.push(m);
            }
        }
        per_block
            .into_iter()
            .map(|values| GridFunction::new(grid, values).expect("layout-consistent values"))
            .collect()
    }
}

pub struct OdeProblem<'a> {
    /// Used in error messages.
    pub name: &'a str,
    pub grid: TimeGrid,
    pub direction: Direction,
    /// Value at node 0 (forward) or node `n_steps` (backward).
    pub boundary: Vector,
    pub rhs: &'a dyn Fn(f64, &Vector) -> Vector,
    /// Symmetric blocks are symmetrized after every step when a layout is given.
    pub layout: Option<&'a StateLayout>,
}

/// Integrate over the whole grid. The result is indexed by forward node
/// number; the boundary node holds `boundary` unchanged.
pub fn integrate(problem: &OdeProblem<'_>, tableau: &RkTableau) -> Result<Vec<Vector>> {
    let grid = problem.grid;
    let n = grid.n_steps;
    let h = grid.step();
    let (sign, start) = match problem.direction {
        Direction::Forward => (1.0, 0),
        Direction::Backward => (-1.0, n),
    };
    let mut out = vec![Vector::zeros(0); n + 1];
    out[start] = problem.boundary.clone();
    let mut x = problem.boundary.clone();
    let mut k_stages: Vec<Vector> = Vec::with_capacity(tableau.stages());

    for step in 0..n {
        let (node, next) = match problem.direction {
            Direction::Forward => (step, step + 1),
            Direction::Backward => (n - step, n - step - 1),
        };
        let t_node = grid.node(node);
        k_stages.clear();
        for (i, ci) in tableau.c.iter().enumerate() {
            let mut xi = x.clone();
            for (kj, aij) in k_stages.iter().zip(&tableau.a[i]) {
                if *aij != 0.0 {
                    xi.axpy(sign * h * aij, kj, 1.0);
                }
            }
            let t = t_node + sign * ci * h;
            let k = (problem.rhs)(t, &xi);
            if k.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    t,
                    what: format!("{} right-hand side", problem.name),
                });
            }
            k_stages.push(k);
        }
        for (kj, bj) in k_stages.iter().zip(&tableau.b) {
            if *bj != 0.0 {
                x.axpy(sign * h * bj, kj, 1.0);
            }
        }
        if let Some(layout) = problem.layout {
            layout.symmetrize(&mut x);
        }
        let norm = x.norm();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            return Err(Error::Divergence {
                system: problem.name.to_string(),
                t: grid.node(next),
                norm,
                bound: None,
            });
        }
        out[next] = x.clone();
    }
    Ok(out)
}

/// Composite trapezoidal rule for node samples with uniform spacing `h`.
pub fn trapezoid(h: f64, values: &[f64]) -> f64 {
    match values {
        [] | [_] => 0.0,
        [first, inner @ .., last] => h * (0.5 * (first + last) + inner.iter().sum::<f64>()),
    }
}

/// Trapezoidal integral of a scalar grid function.
pub fn quadrature(f: &GridFunction) -> f64 {
    trapezoid(f.grid().step(), &f.scalars())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_problem<'a>(
        grid: TimeGrid,
        direction: Direction,
        x: f64,
        rhs: &'a dyn Fn(f64, &Vector) -> Vector,
    ) -> OdeProblem<'a> {
        OdeProblem {
            name: "test",
            grid,
            direction,
            boundary: Vector::from_element(1, x),
            rhs,
            layout: None,
        }
    }

    #[test]
    fn tableaux_are_consistent() {
        for tab in [RkTableau::rk4(), RkTableau::rk8()] {
            assert_relative_eq!(tab.b.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for (i, row) in tab.a.iter().enumerate() {
                assert_eq!(row.len(), i, "explicit tableau");
                assert_relative_eq!(row.iter().sum::<f64>(), tab.c[i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn exponential_decay() {
        let g = TimeGrid::new(0.5, 1000).unwrap();
        let rhs = |_t: f64, x: &Vector| -x;
        let sol = integrate(&scalar_problem(g, Direction::Forward, 1.0, &rhs), &RkTableau::rk8()).unwrap();
        assert!((sol[1000][0] - (-0.5f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn constant_backward() {
        let g = TimeGrid::new(0.5, 10).unwrap();
        let rhs = |_t: f64, x: &Vector| Vector::zeros(x.len());
        let sol = integrate(&scalar_problem(g, Direction::Backward, 3.25, &rhs), &RkTableau::rk8()).unwrap();
        assert!(sol.iter().all(|x| x[0] == 3.25));
    }

    fn growth_error(tab: &RkTableau, n: usize) -> f64 {
        let g = TimeGrid::new(1.0, n).unwrap();
        let rhs = |_t: f64, x: &Vector| x.clone();
        let sol = integrate(&scalar_problem(g, Direction::Forward, 1.0, &rhs), tab).unwrap();
        (sol[n][0] - 1f64.exp()).abs()
    }

    #[test]
    fn rk8_convergence_order() {
        let tab = RkTableau::rk8();
        let (e1, e2) = (growth_error(&tab, 2), growth_error(&tab, 4));
        assert!(e1 / e2 >= 2f64.powi(7), "ratio {}", e1 / e2);
        let (e1, e2) = (growth_error(&tab, 3), growth_error(&tab, 6));
        assert!(e1 / e2 >= 2f64.powi(7), "ratio {}", e1 / e2);
    }

    #[test]
    fn rk4_convergence_order() {
        let tab = RkTableau::rk4();
        let ratio = growth_error(&tab, 20) / growth_error(&tab, 40);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn backward_forward_duality() {
        let g = TimeGrid::new(1.0, 200).unwrap();
        let a = Mat::from_row_slice(2, 2, &[-1.0, 2.0, -0.5, 0.3]);
        let rhs = move |t: f64, x: &Vector| &a * x + Vector::from_vec(vec![t.sin(), 1.0]);
        let xt = Vector::from_vec(vec![0.7, -1.2]);
        let back = integrate(
            &OdeProblem {
                name: "dual",
                grid: g,
                direction: Direction::Backward,
                boundary: xt.clone(),
                rhs: &rhs,
                layout: None,
            },
            &RkTableau::rk8(),
        )
        .unwrap();
        let fwd = integrate(
            &OdeProblem {
                name: "dual",
                grid: g,
                direction: Direction::Forward,
                boundary: back[0].clone(),
                rhs: &rhs,
                layout: None,
            },
            &RkTableau::rk8(),
        )
        .unwrap();
        assert!((&fwd[200] - xt).amax() < 1e-9);
    }

    #[test]
    fn closed_form_scalar_riccati() {
        // dR/dt = 2aR + s - bR^2 with the 1d-mean-revert constants
        let (a, s, b, r0): (f64, f64, f64, f64) = (-1.0, 0.36, 6.25, 0.0);
        let k = (a * a + b * s).sqrt();
        let phi = ((b * r0 - a) / k).atanh();
        let exact = |t: f64| (a + k * (k * t + phi).tanh()) / b;
        let g = TimeGrid::new(0.5, 1000).unwrap();
        let rhs = move |_t: f64, r: &Vector| Vector::from_element(1, 2.0 * a * r[0] + s - b * r[0] * r[0]);
        let sol = integrate(&scalar_problem(g, Direction::Forward, r0, &rhs), &RkTableau::rk8()).unwrap();
        for (k, x) in sol.iter().enumerate() {
            assert!((x[0] - exact(g.node(k))).abs() < 1e-8);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let g = TimeGrid::new(2.0, 200).unwrap();
        let rhs = |_t: f64, x: &Vector| x.map(|v| v * v);
        let err = integrate(&scalar_problem(g, Direction::Forward, 1.0, &rhs), &RkTableau::rk8()).unwrap_err();
        match err {
            Error::Divergence { t, .. } => assert!(t > 0.9 && t < 1.1, "t = {t}"),
            Error::NonFinite { t, .. } => assert!(t > 0.9 && t < 1.1),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn layout_round_trip_and_symmetrize() {
        let layout = StateLayout::new().symmetric(2).vector(2);
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        let v = Mat::from_column_slice(2, 1, &[5.0, 6.0]);
        let mut x = layout.pack(&[&m, &v]);
        assert_eq!(layout.unpack(&x), vec![m, v.clone()]);
        layout.symmetrize(&mut x);
        let parts = layout.unpack(&x);
        assert_eq!(parts[0], Mat::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 3.0]));
        assert_eq!(parts[1], v);
    }

    #[test]
    fn quadrature_examples() {
        let g = TimeGrid::new(0.5, 10).unwrap();
        assert_relative_eq!(quadrature(&GridFunction::from_fn(g, |_| Mat::from_element(1, 1, 1.0))), 0.5, epsilon = 1e-15);
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let lin = GridFunction::from_fn(g, |t| Mat::from_element(1, 1, t));
        assert_relative_eq!(quadrature(&lin), 0.5, epsilon = 1e-14);
        let sq = GridFunction::from_fn(g, |t| Mat::from_element(1, 1, t * t));
        assert!((quadrature(&sq) - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn deterministic_output() {
        let g = TimeGrid::new(1.0, 50).unwrap();
        let rhs = |t: f64, x: &Vector| x.map(|v| (v * t).cos());
        let p = scalar_problem(g, Direction::Forward, 0.1, &rhs);
        let a = integrate(&p, &RkTableau::rk8()).unwrap();
        let b = integrate(&p, &RkTableau::rk8()).unwrap();
        assert_eq!(a, b);
    }
}
