//! Finite-difference discretization of the elliptic operator
//! `A(u) = -div(a grad u) + a_0 u (+ max(u, 0))` on uniform grids, and the
//! unconstrained solve.
//!
//! The stencil is the standard second-order 3-point (1D) / 5-point (2D) one
//! with edge coefficients averaged from the node samples. Dirichlet rows are
//! eliminated; Neumann boundaries use the conservative finite-volume closure
//! (no mirrored ghost doubling), which keeps the matrix symmetric under the
//! uniform lumped pairing. The result is an M-matrix: off-diagonals are
//! nonpositive and the discrete comparison and maximum principles hold, which
//! is what the monotone fixed-point machinery relies on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, Boundary, DualVector, GridFunction, GridSpec};

/// Optional diagonal nonlinearity of the operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    /// Pure linear operator.
    None,
    /// Adds the pointwise term `u -> max(u, 0)`; still order-one homogeneous,
    /// Lipschitz, strongly monotone and T-monotone.
    PlusMax,
}

/// A coefficient field sampled at the active nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Constant(f64),
    PerNode(Vec<f64>),
}

impl Coefficient {
    pub fn sample(&self, grid: &GridSpec) -> Result<Vec<f64>> {
        match self {
            Coefficient::Constant(c) => {
                if !c.is_finite() {
                    return Err(Error::InvalidInput("coefficient must be finite".into()));
                }
                Ok(vec![*c; grid.len()])
            }
            Coefficient::PerNode(v) => {
                if v.len() != grid.len() {
                    return Err(Error::InvalidInput(format!(
                        "per-node coefficient has {} entries, grid has {} active nodes",
                        v.len(),
                        grid.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::InvalidInput("coefficient has a non-finite entry".into()));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Coefficients and structure of the discrete elliptic operator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    /// Isotropic diffusion coefficient, sampled at nodes.
    pub a_diff: Coefficient,
    /// Reaction coefficient `a_0`, sampled at nodes.
    pub a_react: Coefficient,
    pub nonlinearity: Nonlinearity,
    /// Required lower bound on the diffusion samples, `> 0`.
    pub ellipticity_floor: f64,
    /// Required lower bound on the reaction samples; must be `> 0` except on
    /// Dirichlet grids, where `a_0 >= 0` is admitted.
    pub reaction_floor: f64,
}

impl OperatorSpec {
    pub fn laplacian_with_reaction(a: f64, a0: f64) -> Self {
        OperatorSpec {
            a_diff: Coefficient::Constant(a),
            a_react: Coefficient::Constant(a0),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: a,
            reaction_floor: a0,
        }
    }
}

/// Sparse banded matrix in CSR layout.
#[derive(Clone, Debug)]
pub(crate) struct Csr {
    pub(crate) n: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) col_idx: Vec<usize>,
    pub(crate) vals: Vec<f64>,
    pub(crate) diag: Vec<f64>,
}

impl Csr {
    pub(crate) fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            out[i] = acc;
        }
    }

    /// Off-diagonal part of row `i` applied to `x`, i.e. `sum_{j != i} a_ij x_j`.
    #[inline]
    pub(crate) fn offdiag_dot(&self, i: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            let j = self.col_idx[k];
            if j != i {
                acc += self.vals[k] * x[j];
            }
        }
        acc
    }
}

/// Exact solve of the scalar diagonal problem `a t + nl(t) = r` with `a > 0`.
/// The nonlinearity is piecewise linear, so the pointwise Newton step lands
/// on the solution in one step; the closed form is used directly.
#[inline]
pub(crate) fn diagonal_scalar_solve(a: f64, r: f64, nl: Nonlinearity) -> f64 {
    match nl {
        Nonlinearity::None => r / a,
        Nonlinearity::PlusMax => {
            if r >= 0.0 {
                r / (a + 1.0)
            } else {
                r / a
            }
        }
    }
}

/// Assembled discrete operator. Immutable after construction; solves and
/// applications are pure.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    grid: GridSpec,
    csr: Csr,
    nonlinearity: Nonlinearity,
    monotonicity_constant: f64,
    lipschitz_sup: f64,
}

/// Assembles the sparse operator for `spec` on `grid`.
pub fn assemble(spec: &OperatorSpec, grid: &GridSpec) -> Result<DiscreteOperator> {
    let a_diff = spec.a_diff.sample(grid)?;
    let a_react = spec.a_react.sample(grid)?;

    if !(spec.ellipticity_floor > 0.0) {
        return Err(Error::EllipticityViolated(format!(
            "ellipticity floor must be positive, got {}",
            spec.ellipticity_floor
        )));
    }
    if let Some(i) = a_diff.iter().position(|&a| a < spec.ellipticity_floor) {
        return Err(Error::EllipticityViolated(format!(
            "diffusion sample {} at node {i} breaches the floor {}",
            a_diff[i], spec.ellipticity_floor
        )));
    }
    if spec.reaction_floor < 0.0 {
        return Err(Error::EllipticityViolated("reaction floor must be nonnegative".into()));
    }
    if grid.boundary() == Boundary::Neumann && !(spec.reaction_floor > 0.0) {
        return Err(Error::EllipticityViolated(
            "Neumann grids require a positive reaction floor for strong monotonicity".into(),
        ));
    }
    if let Some(i) = a_react.iter().position(|&a| a < spec.reaction_floor) {
        return Err(Error::EllipticityViolated(format!(
            "reaction sample {} at node {i} breaches the floor {}",
            a_react[i], spec.reaction_floor
        )));
    }

    let n = grid.len();
    let m = grid.active_per_axis();
    let dim = grid.dim();
    let dirichlet = grid.boundary() == Boundary::DirichletZero;

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut vals = Vec::new();
    let mut diag = vec![0.0; n];
    row_ptr.push(0);

    for i in 0..n {
        let mi = grid.multi_index(i);
        let mut d = a_react[i];
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(2 * dim + 1);
        for axis in 0..dim {
            let h2 = grid.spacing(axis) * grid.spacing(axis);
            let stride = if axis == 0 { 1 } else { m };
            for side in [-1isize, 1] {
                let a = mi[axis] as isize + side;
                if a >= 0 && (a as usize) < m {
                    let j = (i as isize + side * stride as isize) as usize;
                    let a_e = 0.5 * (a_diff[i] + a_diff[j]);
                    entries.push((j, -a_e / h2));
                    d += a_e / h2;
                } else if dirichlet {
                    // edge into the eliminated zero boundary node
                    d += a_diff[i] / h2;
                }
                // Neumann: zero-flux closure, no contribution
            }
        }
        entries.push((i, 0.0)); // placeholder replaced below
        entries.sort_by_key(|e| e.0);
        for (j, v) in entries {
            col_idx.push(j);
            vals.push(if j == i { d } else { v });
        }
        diag[i] = d;
        row_ptr.push(col_idx.len());
    }

    let csr = Csr { n, row_ptr, col_idx, vals, diag };

    // Strong-monotonicity constant in the discrete H^1 norm. Two routes:
    // min(c, eps) when the reaction floor is positive, and the Poincare route
    // c / (1 + L^2/4) on Dirichlet grids (valid even with a_0 = 0).
    let c1 = if spec.reaction_floor > 0.0 {
        spec.ellipticity_floor.min(spec.reaction_floor)
    } else {
        0.0
    };
    let c2 = if dirichlet {
        let l_max = grid.extent().iter().cloned().fold(0.0f64, f64::max);
        spec.ellipticity_floor / (1.0 + l_max * l_max / 4.0)
    } else {
        0.0
    };
    let monotonicity_constant = c1.max(c2);

    let mut lipschitz_sup = 0.0f64;
    for i in 0..n {
        let row_abs: f64 = (csr.row_ptr[i]..csr.row_ptr[i + 1])
            .map(|k| csr.vals[k].abs())
            .sum();
        lipschitz_sup = lipschitz_sup.max(row_abs);
    }
    if spec.nonlinearity == Nonlinearity::PlusMax {
        lipschitz_sup += 1.0;
    }

    Ok(DiscreteOperator {
        grid: grid.clone(),
        csr,
        nonlinearity: spec.nonlinearity,
        monotonicity_constant,
        lipschitz_sup,
    })
}

impl DiscreteOperator {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn nonlinearity(&self) -> Nonlinearity {
        self.nonlinearity
    }

    /// Declared strong-monotonicity constant `c` with
    /// `<A(u) - A(v), u - v> >= c ||u - v||_{H^1,h}^2`.
    pub fn monotonicity_constant(&self) -> f64 {
        self.monotonicity_constant
    }

    /// Sup-norm Lipschitz constant estimated from the stencil.
    pub fn lipschitz_sup(&self) -> f64 {
        self.lipschitz_sup
    }

    pub fn len(&self) -> usize {
        self.csr.n
    }

    pub fn is_empty(&self) -> bool {
        self.csr.n == 0
    }

    pub(crate) fn csr(&self) -> &Csr {
        &self.csr
    }

    pub(crate) fn apply_slice(&self, y: &[f64], out: &mut [f64]) {
        self.csr.matvec(y, out);
        if self.nonlinearity == Nonlinearity::PlusMax {
            for (o, v) in out.iter_mut().zip(y) {
                *o += v.max(0.0);
            }
        }
    }

    /// Evaluates `A(y)` (including the diagonal nonlinearity, if any).
    pub fn apply(&self, y: &GridFunction) -> Result<DualVector> {
        ensure_same_grid(&self.grid, y.grid(), "apply")?;
        let mut out = vec![0.0; self.csr.n];
        self.apply_slice(y.values(), &mut out);
        DualVector::new(self.grid.clone(), out)
    }

    /// Dense copy of the linear part (oracle and test use).
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.csr.n;
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for k in self.csr.row_ptr[i]..self.csr.row_ptr[i + 1] {
                m[(i, self.csr.col_idx[k])] = self.csr.vals[k];
            }
        }
        m
    }

    /// Solves the linear system `A_h z = rhs` (linear part only). 1D systems
    /// are tridiagonal and solved directly; 2D systems use Gauss-Seidel
    /// sweeps down to `tol * (1 + ||rhs||_inf)` on the residual.
    pub(crate) fn solve_linear(&self, rhs: &[f64], tol: f64) -> Result<Vec<f64>> {
        if self.nonlinearity != Nonlinearity::None {
            return Err(Error::InvalidInput(
                "solve_linear is only defined for linear operators".into(),
            ));
        }
        if self.grid.dim() == 1 {
            return self.solve_tridiagonal(rhs);
        }
        let n = self.csr.n;
        let mut y = vec![0.0; n];
        let sup_rhs = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let target = tol * (1.0 + sup_rhs);
        let max_sweeps = 2_000_000usize;
        let mut res_buf = vec![0.0; n];
        for _ in 0..max_sweeps {
            let mut max_update = 0.0f64;
            for i in 0..n {
                let r = rhs[i] - self.csr.offdiag_dot(i, &y);
                let next = r / self.csr.diag[i];
                max_update = max_update.max((next - y[i]).abs());
                y[i] = next;
            }
            self.csr.matvec(&y, &mut res_buf);
            let res = res_buf
                .iter()
                .zip(rhs)
                .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
            if !res.is_finite() {
                return Err(Error::SolverDiverged("linear Gauss-Seidel produced non-finite residual".into()));
            }
            if res <= target + self.residual_floor(&y) {
                return Ok(y);
            }
            if self.stalled(max_update, &y) {
                if res <= 1e3 * (target + self.residual_floor(&y)) {
                    return Ok(y);
                }
                return Err(Error::SolverDiverged(format!(
                    "linear Gauss-Seidel stalled at residual {res:.3e}"
                )));
            }
        }
        Err(Error::SolverDiverged("linear Gauss-Seidel hit the sweep cap".into()))
    }

    fn solve_tridiagonal(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.csr.n;
        let mut sub = vec![0.0; n];
        let mut dia = vec![0.0; n];
        let mut sup = vec![0.0; n];
        for i in 0..n {
            for k in self.csr.row_ptr[i]..self.csr.row_ptr[i + 1] {
                let j = self.csr.col_idx[k];
                if j + 1 == i {
                    sub[i] = self.csr.vals[k];
                } else if j == i {
                    dia[i] = self.csr.vals[k];
                } else if j == i + 1 {
                    sup[i] = self.csr.vals[k];
                }
            }
        }
        // Thomas elimination (diagonally dominant M-matrix, no pivoting needed)
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = sup[0] / dia[0];
        d[0] = rhs[0] / dia[0];
        for i in 1..n {
            let m = dia[i] - sub[i] * c[i - 1];
            c[i] = sup[i] / m;
            d[i] = (rhs[i] - sub[i] * d[i - 1]) / m;
        }
        let mut y = vec![0.0; n];
        y[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            y[i] = d[i] - c[i] * y[i + 1];
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::SolverDiverged("tridiagonal solve produced non-finite values".into()));
        }
        Ok(y)
    }

    /// Tolerance floor of residual checks: `||A y|| amplifies rounding by the
    /// stencil magnitude, so residuals below this scale are unattainable.
    pub(crate) fn residual_floor(&self, y: &[f64]) -> f64 {
        let y_sup = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        32.0 * f64::EPSILON * self.lipschitz_sup * (1.0 + y_sup)
    }

    /// A sweep whose largest update is below ulp scale has reached the fixed
    /// point of the floating-point iteration map; further sweeps are no-ops.
    fn stalled(&self, max_update: f64, y: &[f64]) -> bool {
        let y_sup = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        max_update <= 2.0 * f64::EPSILON * (1.0 + y_sup)
    }

    /// Solves the unconstrained problem `A(y) = f` by (nonlinear) Gauss-Seidel
    /// sweeps with exact pointwise diagonal solves, down to
    /// `||A(y) - f||_inf <= tol * (1 + ||f||_inf)` (plus the fp floor of the
    /// residual evaluation).
    pub fn solve_unconstrained(&self, f: &DualVector, tol: f64) -> Result<GridFunction> {
        ensure_same_grid(&self.grid, f.grid(), "solve_unconstrained")?;
        if !(tol > 0.0) {
            return Err(Error::InvalidInput("solve_unconstrained requires tol > 0".into()));
        }
        let n = self.csr.n;
        let rhs = f.values();
        let target = tol * (1.0 + f.norm_sup());
        let mut y = vec![0.0; n];
        let mut res_buf = vec![0.0; n];
        let max_sweeps = 2_000_000usize;
        for _ in 0..max_sweeps {
            let mut max_update = 0.0f64;
            for i in 0..n {
                let r = rhs[i] - self.csr.offdiag_dot(i, &y);
                let next = diagonal_scalar_solve(self.csr.diag[i], r, self.nonlinearity);
                max_update = max_update.max((next - y[i]).abs());
                y[i] = next;
            }
            self.apply_slice(&y, &mut res_buf);
            let res = res_buf
                .iter()
                .zip(rhs)
                .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
            if !res.is_finite() {
                return Err(Error::SolverDiverged("Gauss-Seidel produced non-finite residual".into()));
            }
            if res <= target + self.residual_floor(&y) {
                return GridFunction::new(self.grid.clone(), y);
            }
            if self.stalled(max_update, &y) {
                if res <= 1e3 * (target + self.residual_floor(&y)) {
                    return GridFunction::new(self.grid.clone(), y);
                }
                return Err(Error::SolverDiverged(format!(
                    "Gauss-Seidel stalled at residual {res:.3e}"
                )));
            }
        }
        Err(Error::SolverDiverged(format!(
            "unconstrained Gauss-Seidel did not reach tol {tol:.3e} within the sweep cap"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_gf(grid: &GridSpec, rng: &mut StdRng, lo: f64, hi: f64) -> GridFunction {
        GridFunction::new(
            grid.clone(),
            (0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn dirichlet_laplacian_stencil() {
        // 4 interior nodes on (0,1): tridiag(-1, 2, -1)/h^2
        let grid = GridSpec::interval(6, 1.0, Boundary::DirichletZero).unwrap();
        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(1.0),
            a_react: Coefficient::Constant(0.0),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 1.0,
            reaction_floor: 0.0,
        };
        let op = assemble(&spec, &grid).unwrap();
        let h2 = grid.spacing(0) * grid.spacing(0);
        let dense = op.to_dense();
        for i in 0..4 {
            assert!((dense[(i, i)] - 2.0 / h2).abs() < 1e-10);
            if i > 0 {
                assert!((dense[(i, i - 1)] + 1.0 / h2).abs() < 1e-10);
            }
            if i < 3 {
                assert!((dense[(i, i + 1)] + 1.0 / h2).abs() < 1e-10);
            }
        }
        assert_eq!(dense.transpose(), dense);
    }

    #[test]
    fn ellipticity_floor_is_enforced() {
        let grid = GridSpec::interval(5, 1.0, Boundary::DirichletZero).unwrap();
        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(0.0),
            a_react: Coefficient::Constant(1.0),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 0.5,
            reaction_floor: 0.0,
        };
        assert!(matches!(assemble(&spec, &grid), Err(Error::EllipticityViolated(_))));

        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(1.0),
            a_react: Coefficient::Constant(0.0),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 1.0,
            reaction_floor: 0.0,
        };
        let g_neu = GridSpec::interval(5, 1.0, Boundary::Neumann).unwrap();
        assert!(matches!(assemble(&spec, &g_neu), Err(Error::EllipticityViolated(_))));
    }

    #[test]
    fn smallest_eigenvalue_stays_above_floor() {
        let mut rng = StdRng::seed_from_u64(17);
        for boundary in [Boundary::DirichletZero, Boundary::Neumann] {
            let grid = GridSpec::interval(20, 1.0, boundary).unwrap();
            let n = grid.len();
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
            let a0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
            let spec = OperatorSpec {
                a_diff: Coefficient::PerNode(a),
                a_react: Coefficient::PerNode(a0),
                nonlinearity: Nonlinearity::None,
                ellipticity_floor: 0.5,
                reaction_floor: 0.5,
            };
            let op = assemble(&spec, &grid).unwrap();
            let dense = op.to_dense();
            let eig = nalgebra::SymmetricEigen::new(dense);
            let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(lambda_min >= 0.5 - 1e-12, "lambda_min = {lambda_min}");
        }
    }

    #[test]
    fn apply_is_homogeneous_and_zero_at_zero() {
        let grid = GridSpec::interval(12, 1.0, Boundary::Neumann).unwrap();
        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(1.0),
            a_react: Coefficient::Constant(1.0),
            nonlinearity: Nonlinearity::PlusMax,
            ellipticity_floor: 1.0,
            reaction_floor: 1.0,
        };
        let op = assemble(&spec, &grid).unwrap();
        let zero = GridFunction::zeros(grid.clone());
        assert_eq!(op.apply(&zero).unwrap().norm_sup(), 0.0);

        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let y = rand_gf(&grid, &mut rng, -2.0, 2.0);
            let t = rng.gen_range(0.1..5.0);
            let lhs = op.apply(&y.scaled(t)).unwrap();
            let rhs = op.apply(&y).unwrap().scaled(t);
            let scale = 1.0 + rhs.norm_sup();
            let diff = lhs
                .values()
                .iter()
                .zip(rhs.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(diff <= 1e-12 * scale);
        }
    }

    #[test]
    fn t_monotone_pairing_nonnegative() {
        let grid = GridSpec::interval(16, 1.0, Boundary::DirichletZero).unwrap();
        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(1.0),
            a_react: Coefficient::Constant(0.2),
            nonlinearity: Nonlinearity::PlusMax,
            ellipticity_floor: 1.0,
            reaction_floor: 0.2,
        };
        let op = assemble(&spec, &grid).unwrap();
        let mut rng = StdRng::seed_from_u64(9);
        for _ in 0..200 {
            let u = rand_gf(&grid, &mut rng, -3.0, 3.0);
            let v = rand_gf(&grid, &mut rng, -3.0, 3.0);
            let du = op.apply(&u).unwrap();
            let dv = op.apply(&v).unwrap();
            let delta = DualVector::new(
                grid.clone(),
                du.values().iter().zip(dv.values()).map(|(a, b)| a - b).collect(),
            )
            .unwrap();
            let plus = crate::order::pos_part(&u.sub(&v).unwrap());
            let pairing = delta.pairing(&plus).unwrap();
            assert!(pairing >= -1e-12 * (1.0 + delta.norm_sup()));
        }
        // equality case: u <= v everywhere makes the positive part vanish
        let u = GridFunction::constant(grid.clone(), -1.0).unwrap();
        let v = GridFunction::zeros(grid.clone());
        let plus = crate::order::pos_part(&u.sub(&v).unwrap());
        assert_eq!(plus.norm_sup(), 0.0);
        // strict case: u above v at one node gives a strictly positive pairing
        let mut vals = vec![0.0; grid.len()];
        vals[3] = 1.0;
        let u = GridFunction::new(grid.clone(), vals).unwrap();
        let du = op.apply(&u).unwrap();
        let dv = op.apply(&v).unwrap();
        let delta = DualVector::new(
            grid.clone(),
            du.values().iter().zip(dv.values()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let plus = crate::order::pos_part(&u.sub(&v).unwrap());
        assert!(delta.pairing(&plus).unwrap() > 0.0);
    }

    #[test]
    fn strong_monotonicity_with_declared_constant() {
        let grid = GridSpec::interval(24, 1.0, Boundary::Neumann).unwrap();
        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(1.3),
            a_react: Coefficient::Constant(0.7),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 1.3,
            reaction_floor: 0.7,
        };
        let op = assemble(&spec, &grid).unwrap();
        let c = op.monotonicity_constant();
        assert!((c - 0.7).abs() < 1e-15);
        let mut rng = StdRng::seed_from_u64(13);
        for _ in 0..200 {
            let u = rand_gf(&grid, &mut rng, -2.0, 2.0);
            let v = rand_gf(&grid, &mut rng, -2.0, 2.0);
            let diff = u.sub(&v).unwrap();
            let du = op.apply(&u).unwrap();
            let dv = op.apply(&v).unwrap();
            let delta = DualVector::new(
                grid.clone(),
                du.values().iter().zip(dv.values()).map(|(a, b)| a - b).collect(),
            )
            .unwrap();
            let pairing = delta.pairing(&diff).unwrap();
            let bound = c * diff.norm_h1() * diff.norm_h1();
            assert!(pairing >= bound - 1e-10 * (1.0 + pairing.abs()));
        }
    }

    #[test]
    fn lipschitz_bound_from_stencil() {
        let grid = GridSpec::interval(20, 1.0, Boundary::DirichletZero).unwrap();
        let spec = OperatorSpec::laplacian_with_reaction(1.0, 0.5);
        let op = assemble(&spec, &grid).unwrap();
        let c = op.lipschitz_sup();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..100 {
            let u = rand_gf(&grid, &mut rng, -1.0, 1.0);
            let v = rand_gf(&grid, &mut rng, -1.0, 1.0);
            let du = op.apply(&u).unwrap();
            let dv = op.apply(&v).unwrap();
            let num = du
                .values()
                .iter()
                .zip(dv.values())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(num <= c * u.dist_sup(&v).unwrap() + 1e-12);
        }
    }

    #[test]
    fn unconstrained_solve_matches_dense_lu() {
        let grid = GridSpec::interval(34, 1.0, Boundary::DirichletZero).unwrap();
        let spec = OperatorSpec::laplacian_with_reaction(1.0, 1.0);
        let op = assemble(&spec, &grid).unwrap();
        let f = DualVector::constant(grid.clone(), 1.0).unwrap();
        let y = op.solve_unconstrained(&f, 1e-12).unwrap();
        let dense = op.to_dense();
        let exact = dense
            .lu()
            .solve(&nalgebra::DVector::from_vec(f.values().to_vec()))
            .unwrap();
        for i in 0..grid.len() {
            assert!((y.values()[i] - exact[i]).abs() < 1e-9);
        }
        // f = 0 -> y = 0 by homogeneity
        let zero = op
            .solve_unconstrained(&DualVector::zeros(grid.clone()), 1e-12)
            .unwrap();
        assert_eq!(zero.norm_sup(), 0.0);
    }

    #[test]
    fn solve_is_order_preserving_and_nonnegative() {
        let grid = GridSpec::interval(24, 1.0, Boundary::Neumann).unwrap();
        let spec = OperatorSpec::laplacian_with_reaction(1.0, 1.0);
        let op = assemble(&spec, &grid).unwrap();
        let mut rng = StdRng::seed_from_u64(31);
        for _ in 0..25 {
            let f: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(0.0..2.0)).collect();
            let g: Vec<f64> = f.iter().map(|v| v + rng.gen_range(0.0..1.0)).collect();
            let yf = op
                .solve_unconstrained(&DualVector::new(grid.clone(), f).unwrap(), 1e-12)
                .unwrap();
            let yg = op
                .solve_unconstrained(&DualVector::new(grid.clone(), g).unwrap(), 1e-12)
                .unwrap();
            // maximum principle: nonnegative forcing gives nonnegative state
            assert!(yf.values().iter().all(|&v| v >= 0.0));
            assert!(crate::order::leq_with_slack(&yf, &yg, 1e-11).unwrap());
        }
    }

    #[test]
    fn tridiagonal_direct_solve_agrees_with_dense() {
        let grid = GridSpec::interval(30, 2.0, Boundary::Neumann).unwrap();
        let spec = OperatorSpec::laplacian_with_reaction(1.0, 1.0);
        let op = assemble(&spec, &grid).unwrap();
        let mut rng = StdRng::seed_from_u64(41);
        let rhs: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let direct = op.solve_linear(&rhs, 1e-14).unwrap();
        let dense = op.to_dense();
        let exact = dense
            .lu()
            .solve(&nalgebra::DVector::from_vec(rhs.clone()))
            .unwrap();
        for i in 0..grid.len() {
            assert!((direct[i] - exact[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn two_dimensional_assembly_and_solve() {
        let grid = GridSpec::square(8, 1.0, Boundary::DirichletZero).unwrap();
        let spec = OperatorSpec::laplacian_with_reaction(1.0, 0.0);
        let op = assemble(&spec, &grid).unwrap();
        let dense = op.to_dense();
        assert_eq!(dense.transpose(), dense);
        let h2 = grid.spacing(0) * grid.spacing(0);
        // interior node of the active block: classic 5-point row
        let m = grid.active_per_axis();
        let center = m + 1; // active (1,1)
        assert!((dense[(center, center)] - 4.0 / h2).abs() < 1e-10);

        let f = DualVector::constant(grid.clone(), 1.0).unwrap();
        let y = op.solve_unconstrained(&f, 1e-11).unwrap();
        let exact = dense
            .lu()
            .solve(&nalgebra::DVector::from_vec(f.values().to_vec()))
            .unwrap();
        for i in 0..grid.len() {
            assert!((y.values()[i] - exact[i]).abs() < 1e-8);
        }
    }
}
