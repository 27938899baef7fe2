//! Projected Gauss-Seidel solver for the upper-obstacle variational
//! inequality `find y <= psi: <A(y) - f, v - y> >= 0 for all v <= psi`,
//! together with a brute-force active-set oracle and comparison utilities.
//!
//! Sign convention, fixed once and used everywhere: the obstacle bounds the
//! state from *above*, so the discrete KKT system is
//!
//! ```text
//! A(y) - f <= 0,    y <= psi,    min(f - A(y), psi - y) = 0  componentwise.
//! ```
//!
//! The constraint set is a downward set, hence always feasible; `psi` may be
//! negative somewhere and unconstrained nodes carry the reserved `+inf`
//! sentinel, never a large float.

use crate::elliptic::{diagonal_scalar_solve, DiscreteOperator};
use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, DualVector, GridFunction, Obstacle};

/// Solver selection for [`solve_vi`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViMethod {
    ProjectedGaussSeidel,
    /// Exhaustive active-set enumeration; exact but exponential, for small
    /// linear instances only.
    ActiveSetOracle,
}

/// Parameters of a VI solve.
#[derive(Clone, Copy, Debug)]
pub struct ViParams {
    pub method: ViMethod,
    /// Bound on the complementarity residual `||min(f - A y, psi - y)||_inf`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Relaxation factor in `(0, 2)`. The monotone outer iteration relies on
    /// plain sweeps (`1.0`); over-relaxation is for standalone solves.
    pub relaxation: f64,
}

impl Default for ViParams {
    fn default() -> Self {
        ViParams {
            method: ViMethod::ProjectedGaussSeidel,
            tol: 1e-10,
            max_sweeps: 200_000,
            relaxation: 1.0,
        }
    }
}

impl ViParams {
    pub fn with_tol(tol: f64) -> Self {
        ViParams { tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput("vi tol must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::InvalidInput("vi max_sweeps must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::InvalidInput("vi relaxation must lie in (0, 2)".into()));
        }
        Ok(())
    }
}

/// Outcome of a VI solve.
#[derive(Clone, Debug)]
pub struct ViReport {
    pub solution: GridFunction,
    pub sweeps: usize,
    pub complementarity_residual: f64,
    /// Nodes where the constraint is active (`psi - y <= tol`).
    pub active_set: Vec<bool>,
}

/// One projected Gauss-Seidel sweep in place. Exposed within the crate so
/// tests can audit per-sweep invariants (energy decay, monotone climb).
pub(crate) fn pgs_sweep(
    op: &DiscreteOperator,
    f: &[f64],
    psi: &[f64],
    y: &mut [f64],
    relaxation: f64,
) {
    let csr = op.csr();
    let nl = op.nonlinearity();
    for i in 0..y.len() {
        let r = f[i] - csr.offdiag_dot(i, y);
        let t = diagonal_scalar_solve(csr.diag[i], r, nl);
        let t = if relaxation == 1.0 { t } else { y[i] + relaxation * (t - y[i]) };
        y[i] = t.min(psi[i]);
    }
}

fn complementarity_residual(op: &DiscreteOperator, f: &[f64], psi: &[f64], y: &[f64]) -> f64 {
    let mut ay = vec![0.0; y.len()];
    op.apply_slice(y, &mut ay);
    let mut worst = 0.0f64;
    for i in 0..y.len() {
        let slack_f = f[i] - ay[i];
        let m = if psi[i] == f64::INFINITY {
            slack_f
        } else {
            slack_f.min(psi[i] - y[i])
        };
        worst = worst.max(m.abs());
    }
    worst
}

/// Solves the upper-obstacle VI for `S(f, psi)`.
pub fn solve_vi(
    op: &DiscreteOperator,
    f: &DualVector,
    psi: &Obstacle,
    params: &ViParams,
) -> Result<ViReport> {
    // Default start: the projection of zero onto the constraint set.
    let start: Vec<f64> = psi.values().iter().map(|p| 0.0f64.min(*p)).collect();
    let start = GridFunction::new(op.grid().clone(), start)?;
    solve_vi_warm(op, f, psi, &start, params)
}

/// Solves the upper-obstacle VI starting the sweeps from `start` (projected
/// onto the constraint set first). Warm starts let monotone outer iterations
/// reuse the previous iterate, which keeps the sweep sequence monotone.
pub fn solve_vi_warm(
    op: &DiscreteOperator,
    f: &DualVector,
    psi: &Obstacle,
    start: &GridFunction,
    params: &ViParams,
) -> Result<ViReport> {
    params.validate()?;
    ensure_same_grid(op.grid(), f.grid(), "solve_vi")?;
    ensure_same_grid(op.grid(), psi.grid(), "solve_vi")?;
    ensure_same_grid(op.grid(), start.grid(), "solve_vi")?;

    if params.method == ViMethod::ActiveSetOracle {
        let solution = active_set_oracle(op, f, psi)?;
        let residual = complementarity_residual(op, f.values(), psi.values(), solution.values());
        let active = active_mask(psi.values(), solution.values(), params.tol);
        return Ok(ViReport {
            solution,
            sweeps: 0,
            complementarity_residual: residual,
            active_set: active,
        });
    }

    let fv = f.values();
    let pv = psi.values();
    let mut y: Vec<f64> = start.values().iter().zip(pv).map(|(s, p)| s.min(*p)).collect();

    let mut residual = f64::INFINITY;
    for sweep in 1..=params.max_sweeps {
        pgs_sweep(op, fv, pv, &mut y, params.relaxation);
        residual = complementarity_residual(op, fv, pv, &y);
        if !residual.is_finite() {
            return Err(Error::NonConvergence(
                "projected Gauss-Seidel produced a non-finite residual".into(),
            ));
        }
        if residual <= params.tol {
            debug_assert!(y.iter().zip(pv).all(|(a, b)| a <= b));
            let solution = GridFunction::new(op.grid().clone(), y)?;
            let active = active_mask(pv, solution.values(), params.tol);
            return Ok(ViReport {
                solution,
                sweeps: sweep,
                complementarity_residual: residual,
                active_set: active,
            });
        }
    }
    Err(Error::MaxSweepsExceeded { max_sweeps: params.max_sweeps, residual })
}

fn active_mask(psi: &[f64], y: &[f64], tol: f64) -> Vec<bool> {
    psi.iter()
        .zip(y)
        .map(|(p, v)| p.is_finite() && p - v <= tol)
        .collect()
}

/// Exact solution of a small *linear* VI by enumerating candidate active
/// sets. For each candidate set `E`: fix `y = psi` on `E`, solve the linear
/// system on the complement, and accept iff `y <= psi` everywhere and
/// `A y - f <= 0` on `E`. Exactly one consistent configuration must survive.
pub fn active_set_oracle(
    op: &DiscreteOperator,
    f: &DualVector,
    psi: &Obstacle,
) -> Result<GridFunction> {
    let (solution, accepted) = active_set_oracle_detailed(op, f, psi)?;
    let _ = accepted;
    Ok(solution)
}

pub(crate) fn active_set_oracle_detailed(
    op: &DiscreteOperator,
    f: &DualVector,
    psi: &Obstacle,
) -> Result<(GridFunction, usize)> {
    ensure_same_grid(op.grid(), f.grid(), "active_set_oracle")?;
    ensure_same_grid(op.grid(), psi.grid(), "active_set_oracle")?;
    if op.nonlinearity() != crate::elliptic::Nonlinearity::None {
        return Err(Error::InvalidInput("active_set_oracle requires a linear operator".into()));
    }
    let n = op.len();
    if n > 14 {
        return Err(Error::InvalidInput(format!(
            "active_set_oracle enumerates 2^n active sets; n = {n} exceeds 14"
        )));
    }

    let dense = op.to_dense();
    let fv = f.values();
    let pv = psi.values();
    // Only nodes with a finite obstacle can be active.
    let finite_nodes: Vec<usize> = (0..n).filter(|&i| pv[i].is_finite()).collect();

    const FEAS_TOL: f64 = 1e-12;
    let mut accepted: Vec<Vec<f64>> = Vec::new();

    for mask in 0u64..(1u64 << finite_nodes.len()) {
        let mut is_active = vec![false; n];
        for (bit, &node) in finite_nodes.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                is_active[node] = true;
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| !is_active[i]).collect();

        let mut y = vec![0.0; n];
        for i in 0..n {
            if is_active[i] {
                y[i] = pv[i];
            }
        }
        if !free.is_empty() {
            let k = free.len();
            let mut a_sub = nalgebra::DMatrix::<f64>::zeros(k, k);
            let mut rhs = nalgebra::DVector::<f64>::zeros(k);
            for (r, &i) in free.iter().enumerate() {
                rhs[r] = fv[i];
                for (c, &j) in free.iter().enumerate() {
                    a_sub[(r, c)] = dense[(i, j)];
                }
                for j in 0..n {
                    if is_active[j] {
                        rhs[r] -= dense[(i, j)] * y[j];
                    }
                }
            }
            let sol = match a_sub.lu().solve(&rhs) {
                Some(s) => s,
                None => continue,
            };
            for (r, &i) in free.iter().enumerate() {
                y[i] = sol[r];
            }
        }

        // feasibility off the active set and dual sign on it
        let feasible = (0..n).all(|i| y[i] <= pv[i] + FEAS_TOL);
        if !feasible {
            continue;
        }
        let mut ay = vec![0.0; n];
        op.apply_slice(&y, &mut ay);
        let dual_ok = (0..n).all(|i| !is_active[i] || ay[i] - fv[i] <= FEAS_TOL);
        if !dual_ok {
            continue;
        }
        accepted.push(y);
    }

    if accepted.is_empty() {
        return Err(Error::NoValidActiveSet(
            "no candidate active set satisfied feasibility and dual sign; M-matrix structure broken".into(),
        ));
    }
    // Degenerate contact can let several sets describe the same solution;
    // they must all agree.
    let first = &accepted[0];
    for other in &accepted[1..] {
        let gap = first
            .iter()
            .zip(other)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if gap > 1e-10 {
            return Err(Error::NoValidActiveSet(format!(
                "ambiguous acceptance: two active sets differ by {gap:.3e}"
            )));
        }
    }
    let solution = GridFunction::new(op.grid().clone(), accepted[0].clone())?;
    Ok((solution, accepted.len()))
}

/// Result of a comparison-principle check.
#[derive(Clone, Debug)]
pub struct ComparisonReport {
    /// `max_i (y_1 - y_2)_i^+`; a correct solver pair keeps this at noise level.
    pub max_violation: f64,
    pub y1: GridFunction,
    pub y2: GridFunction,
}

/// Solves the two VIs of an ordered data pair (`f1 <= f2`, `psi1 <= psi2`)
/// and reports the worst breach of `S(f1, psi1) <= S(f2, psi2)`.
pub fn check_comparison(
    op: &DiscreteOperator,
    f1: &DualVector,
    f2: &DualVector,
    psi1: &Obstacle,
    psi2: &Obstacle,
    params: &ViParams,
) -> Result<ComparisonReport> {
    if !f1.leq(f2)? {
        return Err(Error::InvalidInput("check_comparison requires f1 <= f2".into()));
    }
    if !psi1.leq(psi2)? {
        return Err(Error::InvalidInput("check_comparison requires psi1 <= psi2".into()));
    }
    let r1 = solve_vi(op, f1, psi1, params)?;
    let r2 = solve_vi(op, f2, psi2, params)?;
    let max_violation = r1
        .solution
        .values()
        .iter()
        .zip(r2.solution.values())
        .fold(0.0f64, |m, (a, b)| m.max(a - b));
    Ok(ComparisonReport {
        max_violation: max_violation.max(0.0),
        y1: r1.solution,
        y2: r2.solution,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{assemble, Coefficient, Nonlinearity, OperatorSpec};
    use crate::grid::{Boundary, GridSpec};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn laplacian(grid: &GridSpec, a0: f64) -> DiscreteOperator {
        assemble(&OperatorSpec::laplacian_with_reaction(1.0, a0), grid).unwrap()
    }

    fn random_operator(grid: &GridSpec, rng: &mut StdRng) -> DiscreteOperator {
        let n = grid.len();
        let spec = OperatorSpec {
            a_diff: Coefficient::PerNode((0..n).map(|_| rng.gen_range(0.5..2.0)).collect()),
            a_react: Coefficient::PerNode((0..n).map(|_| rng.gen_range(0.5..1.5)).collect()),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 0.5,
            reaction_floor: 0.5,
        };
        assemble(&spec, grid).unwrap()
    }

    #[test]
    fn unbounded_obstacle_reduces_to_unconstrained() {
        let grid = GridSpec::interval(20, 1.0, Boundary::DirichletZero).unwrap();
        let op = laplacian(&grid, 1.0);
        let f = DualVector::constant(grid.clone(), 1.0).unwrap();
        let psi = Obstacle::unbounded(grid.clone());
        let r = solve_vi(&op, &f, &psi, &ViParams::with_tol(1e-11)).unwrap();
        let free = op.solve_unconstrained(&f, 1e-13).unwrap();
        assert!(r.solution.dist_sup(&free).unwrap() < 1e-9);
        assert!(r.active_set.iter().all(|a| !a));
    }

    #[test]
    fn zero_obstacle_with_nonnegative_forcing_pins_to_zero() {
        let grid = GridSpec::interval(16, 1.0, Boundary::Neumann).unwrap();
        let op = laplacian(&grid, 1.0);
        let f = DualVector::constant(grid.clone(), 2.0).unwrap();
        let psi = Obstacle::from_grid_function(&GridFunction::zeros(grid.clone()));
        let r = solve_vi(&op, &f, &psi, &ViParams::with_tol(1e-12)).unwrap();
        assert_eq!(r.solution.norm_sup(), 0.0);
        assert!(r.active_set.iter().all(|a| *a));
    }

    #[test]
    fn scalar_and_diagonal_oracle_cases() {
        // one active node: y = min(f/a, psi)
        let grid = GridSpec::interval(3, 1.0, Boundary::DirichletZero).unwrap();
        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(1.0),
            a_react: Coefficient::Constant(1.0),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 1.0,
            reaction_floor: 1.0,
        };
        let op = assemble(&spec, &grid).unwrap();
        let a = op.to_dense()[(0, 0)];
        for (f0, p0) in [(1.0, 10.0), (5.0, 0.3), (-2.0, 0.0)] {
            let f = DualVector::constant(grid.clone(), f0).unwrap();
            let psi = Obstacle::new(grid.clone(), vec![p0]).unwrap();
            let y = active_set_oracle(&op, &f, &psi).unwrap();
            assert!((y.values()[0] - (f0 / a).min(p0)).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_accepts_exactly_one_set_on_random_instances() {
        let grid = GridSpec::interval(12, 1.0, Boundary::DirichletZero).unwrap();
        let mut rng = StdRng::seed_from_u64(101);
        for _ in 0..10 {
            let op = random_operator(&grid, &mut rng);
            let n = grid.len();
            let f = DualVector::new(grid.clone(), (0..n).map(|_| rng.gen_range(-2.0..4.0)).collect()).unwrap();
            let psi = Obstacle::new(grid.clone(), (0..n).map(|_| rng.gen_range(-0.2..0.5)).collect()).unwrap();
            let (_, accepted) = active_set_oracle_detailed(&op, &f, &psi).unwrap();
            assert_eq!(accepted, 1);
        }
    }

    #[test]
    fn pgs_matches_oracle_on_random_instances() {
        let mut rng = StdRng::seed_from_u64(7);
        for trial in 0..30 {
            let nodes = rng.gen_range(5..=14);
            let boundary = if trial % 2 == 0 { Boundary::DirichletZero } else { Boundary::Neumann };
            let grid = GridSpec::interval(nodes, 1.0, boundary).unwrap();
            if grid.len() > 12 {
                continue;
            }
            let op = random_operator(&grid, &mut rng);
            let n = grid.len();
            let f = DualVector::new(grid.clone(), (0..n).map(|_| rng.gen_range(-3.0..5.0)).collect()).unwrap();
            let psi = Obstacle::new(grid.clone(), (0..n).map(|_| rng.gen_range(-0.5..1.0)).collect()).unwrap();
            let pgs = solve_vi(&op, &f, &psi, &ViParams::with_tol(1e-12)).unwrap();
            let oracle = active_set_oracle(&op, &f, &psi).unwrap();
            assert!(pgs.solution.dist_sup(&oracle).unwrap() <= 1e-10);
            assert!(pgs.complementarity_residual <= 1e-10);
            // feasibility is exact after the final projection sweep
            assert!(pgs
                .solution
                .values()
                .iter()
                .zip(psi.values())
                .all(|(y, p)| y <= p));
        }
    }

    #[test]
    fn negative_obstacle_is_feasible_without_zero_in_k() {
        let grid = GridSpec::interval(10, 1.0, Boundary::Neumann).unwrap();
        let op = laplacian(&grid, 1.0);
        let f = DualVector::constant(grid.clone(), 1.0).unwrap();
        let psi = Obstacle::new(grid.clone(), vec![-0.5; grid.len()]).unwrap();
        let r = solve_vi(&op, &f, &psi, &ViParams::with_tol(1e-12)).unwrap();
        assert!(r.solution.values().iter().all(|&y| y <= -0.5));
    }

    #[test]
    fn comparison_principle_on_ordered_data() {
        let grid = GridSpec::interval(34, 1.0, Boundary::DirichletZero).unwrap();
        let op = laplacian(&grid, 0.5);
        let n = grid.len();
        let mut rng = StdRng::seed_from_u64(55);
        for _ in 0..20 {
            let f1v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..2.0)).collect();
            let f2v: Vec<f64> = f1v.iter().map(|v| v + rng.gen_range(0.0..1.0)).collect();
            let p1v: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.2..0.6)).collect();
            let p2v: Vec<f64> = p1v.iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
            let rep = check_comparison(
                &op,
                &DualVector::new(grid.clone(), f1v).unwrap(),
                &DualVector::new(grid.clone(), f2v).unwrap(),
                &Obstacle::new(grid.clone(), p1v).unwrap(),
                &Obstacle::new(grid.clone(), p2v).unwrap(),
                &ViParams::with_tol(1e-11),
            )
            .unwrap();
            assert!(rep.max_violation <= 1e-10);
        }
        // identical data gives an exact zero gap
        let f = DualVector::constant(grid.clone(), 1.0).unwrap();
        let psi = Obstacle::new(grid.clone(), vec![0.1; n]).unwrap();
        let rep = check_comparison(&op, &f, &f, &psi, &psi, &ViParams::default()).unwrap();
        assert_eq!(rep.max_violation, 0.0);
    }

    #[test]
    fn pgs_does_not_increase_energy_for_symmetric_operators() {
        let grid = GridSpec::interval(18, 1.0, Boundary::DirichletZero).unwrap();
        let op = laplacian(&grid, 0.3);
        let n = grid.len();
        let mut rng = StdRng::seed_from_u64(77);
        let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.4)).collect();
        let energy = |y: &[f64]| {
            let mut ay = vec![0.0; n];
            op.apply_slice(y, &mut ay);
            let quad: f64 = ay.iter().zip(y).map(|(a, b)| a * b).sum();
            let lin: f64 = f.iter().zip(y).map(|(a, b)| a * b).sum();
            0.5 * quad - lin
        };
        let mut y: Vec<f64> = psi.iter().map(|p| 0.0f64.min(*p)).collect();
        let mut prev = energy(&y);
        for _ in 0..100 {
            pgs_sweep(&op, &f, &psi, &mut y, 1.0);
            let e = energy(&y);
            assert!(e <= prev + 1e-12);
            prev = e;
        }
    }

    #[test]
    fn a_priori_bound_in_discrete_norms() {
        // with 0 in K (psi >= 0): c ||y||_H1^2 <= <A y, y> <= <f, y>
        let grid = GridSpec::interval(26, 1.0, Boundary::Neumann).unwrap();
        let op = laplacian(&grid, 1.0);
        let c = op.monotonicity_constant();
        let n = grid.len();
        let mut rng = StdRng::seed_from_u64(91);
        for _ in 0..20 {
            let f = DualVector::new(grid.clone(), (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
            let psi = Obstacle::new(grid.clone(), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
            let y = solve_vi(&op, &f, &psi, &ViParams::with_tol(1e-12)).unwrap().solution;
            assert!(y.norm_h1() <= f.norm_h() / c + 1e-8);
        }
    }

    #[test]
    fn oracle_method_is_selectable_through_the_params() {
        let grid = GridSpec::interval(8, 1.0, Boundary::DirichletZero).unwrap();
        let op = laplacian(&grid, 0.5);
        let f = DualVector::constant(grid.clone(), 2.0).unwrap();
        let psi = Obstacle::new(grid.clone(), vec![0.1; grid.len()]).unwrap();
        let params = ViParams { method: ViMethod::ActiveSetOracle, ..ViParams::with_tol(1e-12) };
        let rep = solve_vi(&op, &f, &psi, &params).unwrap();
        assert_eq!(rep.sweeps, 0);
        assert!(rep.complementarity_residual <= 1e-10);
        let pgs = solve_vi(&op, &f, &psi, &ViParams::with_tol(1e-12)).unwrap();
        assert!(rep.solution.dist_sup(&pgs.solution).unwrap() <= 1e-10);
    }

    #[test]
    fn comparison_preconditions_are_enforced() {
        let grid = GridSpec::interval(8, 1.0, Boundary::Neumann).unwrap();
        let op = laplacian(&grid, 1.0);
        let lo = DualVector::constant(grid.clone(), 0.0).unwrap();
        let hi = DualVector::constant(grid.clone(), 1.0).unwrap();
        let psi = Obstacle::unbounded(grid.clone());
        // unordered forcing pair
        let err = check_comparison(&op, &hi, &lo, &psi, &psi, &ViParams::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
        // obstacle order respects the +inf sentinel
        let finite = Obstacle::new(grid.clone(), vec![1.0; grid.len()]).unwrap();
        assert!(finite.leq(&psi).unwrap());
        assert!(!psi.leq(&finite).unwrap());
        let err = check_comparison(&op, &lo, &hi, &psi, &finite, &ViParams::default());
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pgs_handles_the_diagonal_nonlinearity() {
        let grid = GridSpec::interval(14, 1.0, Boundary::Neumann).unwrap();
        let spec = OperatorSpec {
            a_diff: Coefficient::Constant(1.0),
            a_react: Coefficient::Constant(1.0),
            nonlinearity: Nonlinearity::PlusMax,
            ellipticity_floor: 1.0,
            reaction_floor: 1.0,
        };
        let op = assemble(&spec, &grid).unwrap();
        let f = DualVector::constant(grid.clone(), 3.0).unwrap();
        let psi = Obstacle::new(grid.clone(), vec![0.9; grid.len()]).unwrap();
        let r = solve_vi(&op, &f, &psi, &ViParams::with_tol(1e-12)).unwrap();
        assert!(r.complementarity_residual <= 1e-12);
        assert!(r.solution.values().iter().all(|&y| y <= 0.9));
    }
}
