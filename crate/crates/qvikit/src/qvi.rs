//! Composition layer: the QVI map `y -> S(f, Phi(y))` as an increasing map,
//! its extremal fixed points, and solution-set diagnostics.
//!
//! For `0 <= f <= F` the interval `[0, S(F, +inf)]` brackets the solution
//! set: `0` is a sub-solution because `0 = S(0, Phi(0)) <= S(f, Phi(0))`,
//! and the unconstrained solve at the cap is a super-solution. Running the
//! monotone engine from both ends yields the minimal and maximal solutions.
//! Inner VI solves are warm-started from the previous outer iterate, which
//! keeps the outer sequences monotone down to floating-point noise.

use std::sync::{Arc, OnceLock};

use log::debug;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::elliptic::DiscreteOperator;
use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, DualVector, GridFunction, GridSpec, Obstacle};
use crate::obstacles::{CoupledObstacle, ImpulseObstacle, ObstacleMap};
use crate::order::{
    extremal_fixed_point, inf2, leq_with_slack, Direction, ExtremalReport, IncreasingMap,
    OrderInterval,
};
use crate::vi::{solve_vi_warm, ViParams};

/// Tolerances and iteration limits of an extremal solve.
#[derive(Clone, Copy, Debug)]
pub struct QviParams {
    /// Outer fixed-point tolerance (sup-norm step and residual).
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Sweep cap of each inner VI solve.
    pub max_sweeps: usize,
    pub record_trace: bool,
}

impl Default for QviParams {
    fn default() -> Self {
        // plain sweeps on stiff diffusion-dominated instances contract by as
        // little as 1e-5 per sweep; the cap is headroom, not accuracy
        QviParams { outer_tol: 1e-10, max_outer: 5000, max_sweeps: 1_000_000, record_trace: true }
    }
}

impl QviParams {
    pub fn with_tol(outer_tol: f64) -> Self {
        QviParams { outer_tol, ..Default::default() }
    }

    /// Inner VI tolerance: one order below the outer tolerance so that inner
    /// noise stays under the outer step sizes.
    pub fn inner_tol(&self) -> f64 {
        self.outer_tol / 10.0
    }

    fn vi_params(&self) -> ViParams {
        ViParams { tol: self.inner_tol(), max_sweeps: self.max_sweeps, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.outer_tol > 0.0) {
            return Err(Error::InvalidInput("outer_tol must be positive".into()));
        }
        if self.max_outer == 0 || self.max_sweeps == 0 {
            return Err(Error::InvalidInput("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}

/// The obstacle map of an instance.
#[derive(Clone, Debug)]
pub enum ObstacleKind {
    Impulse(ImpulseObstacle),
    Coupled(CoupledObstacle),
}

impl ObstacleMap for ObstacleKind {
    fn grid(&self) -> &GridSpec {
        match self {
            ObstacleKind::Impulse(o) => o.grid(),
            ObstacleKind::Coupled(o) => o.grid(),
        }
    }
    fn evaluate(&self, v: &GridFunction) -> Result<GridFunction> {
        match self {
            ObstacleKind::Impulse(o) => o.evaluate(v),
            ObstacleKind::Coupled(o) => o.evaluate(v),
        }
    }
}

/// A QVI instance: operator, obstacle map, forcing `f` and cap `F` with
/// `0 <= f <= F` componentwise.
#[derive(Clone, Debug)]
pub struct QviInstance {
    operator: DiscreteOperator,
    obstacle: ObstacleKind,
    forcing: DualVector,
    forcing_cap: DualVector,
    params: QviParams,
    /// Cached super-solution end `S(F, +inf)`; shared across forcing swaps
    /// with the same cap, reset when the cap changes.
    ybar: Arc<OnceLock<GridFunction>>,
}

impl QviInstance {
    pub fn new(
        operator: DiscreteOperator,
        obstacle: ObstacleKind,
        forcing: DualVector,
        forcing_cap: DualVector,
        params: QviParams,
    ) -> Result<Self> {
        params.validate()?;
        ensure_same_grid(operator.grid(), obstacle.grid(), "qvi instance")?;
        ensure_same_grid(operator.grid(), forcing.grid(), "qvi instance")?;
        ensure_same_grid(operator.grid(), forcing_cap.grid(), "qvi instance")?;
        if let Some(i) = forcing.values().iter().position(|&f| f < 0.0) {
            return Err(Error::InvalidInput(format!("forcing must be nonnegative, node {i}")));
        }
        if !forcing.leq(&forcing_cap)? {
            return Err(Error::InvalidInput("forcing must be dominated by the cap".into()));
        }
        Ok(Self { operator, obstacle, forcing, forcing_cap, params, ybar: Arc::new(OnceLock::new()) })
    }

    pub fn operator(&self) -> &DiscreteOperator {
        &self.operator
    }

    pub fn obstacle(&self) -> &ObstacleKind {
        &self.obstacle
    }

    pub fn forcing(&self) -> &DualVector {
        &self.forcing
    }

    pub fn forcing_cap(&self) -> &DualVector {
        &self.forcing_cap
    }

    pub fn params(&self) -> &QviParams {
        &self.params
    }

    pub fn grid(&self) -> &GridSpec {
        self.operator.grid()
    }

    /// Same operator, obstacle and parameters with a different forcing term.
    /// The cached interval end is shared (the cap is unchanged).
    pub fn with_forcing(&self, forcing: DualVector) -> Result<QviInstance> {
        let mut inst = QviInstance::new(
            self.operator.clone(),
            self.obstacle.clone(),
            forcing,
            self.forcing_cap.clone(),
            self.params,
        )?;
        inst.ybar = Arc::clone(&self.ybar);
        Ok(inst)
    }

    /// Replaces forcing and cap together (perturbation experiments own both).
    pub fn with_forcing_and_cap(&self, forcing: DualVector, cap: DualVector) -> Result<QviInstance> {
        QviInstance::new(self.operator.clone(), self.obstacle.clone(), forcing, cap, self.params)
    }

    /// The super-solution end `S(F, +inf)` of the bracketing interval. The
    /// solve runs to the floating-point stall of the sweeps: the entry check
    /// `T(ybar) <= ybar` tolerates only ulp-scale overshoot even when the
    /// forcing sits exactly at the cap.
    pub fn upper_bound(&self) -> Result<GridFunction> {
        if let Some(y) = self.ybar.get() {
            return Ok(y.clone());
        }
        let y = self.operator.solve_unconstrained(&self.forcing_cap, 1e-13)?;
        let _ = self.ybar.set(y.clone());
        Ok(y)
    }
}

/// The QVI map `T(y) = S(f, Phi(y))` as an [`IncreasingMap`]. Each
/// evaluation computes the obstacle at `y` and solves one VI, warm-started
/// from `min(y, Phi(y))`.
pub struct QviMap<'a> {
    inst: &'a QviInstance,
    vi: ViParams,
}

/// Builds the evaluation handle for `y -> S(f, Phi(y))`.
pub fn qvi_map(inst: &QviInstance) -> QviMap<'_> {
    QviMap { inst, vi: inst.params.vi_params() }
}

impl IncreasingMap for QviMap<'_> {
    fn grid(&self) -> &GridSpec {
        self.inst.grid()
    }

    fn eval(&self, v: &GridFunction) -> Result<GridFunction> {
        let phi = self.inst.obstacle.evaluate(v)?;
        let warm = inf2(v, &phi)?;
        let psi = Obstacle::from_grid_function(&phi);
        let report = solve_vi_warm(&self.inst.operator, &self.inst.forcing, &psi, &warm, &self.vi)?;
        Ok(report.solution)
    }
}

/// Minimal and maximal QVI solutions with their iteration diagnostics.
#[derive(Clone, Debug)]
pub struct ExtremalResult {
    pub y_min: GridFunction,
    pub y_max: GridFunction,
    /// The bracketing interval `[0, S(F, +inf)]`.
    pub interval: OrderInterval,
    /// Fixed-point residuals of `(y_min, y_max)`.
    pub residuals: (f64, f64),
    pub outer_iters: (usize, usize),
    /// Worst against-direction drift observed by the monotonicity audit in
    /// each direction (floating-point noise scale when the solvers behave).
    pub monotone_drifts: (f64, f64),
    /// Per-iteration sup-norm step sizes, when recorded.
    pub traces: Option<(Vec<f64>, Vec<f64>)>,
}

const RESULT_SLACK: f64 = 1e-10;

/// Runs the monotone iteration from both ends of `[0, S(F, +inf)]`.
pub fn solve_extremal(inst: &QviInstance) -> Result<ExtremalResult> {
    let upper = inst.upper_bound()?;
    let lower = GridFunction::zeros(inst.grid().clone());
    let interval = OrderInterval::new(lower, upper)?;
    let map = qvi_map(inst);

    let below = extremal_fixed_point(&map, &interval, Direction::FromBelow, inst.params.outer_tol, inst.params.max_outer)?;
    debug!("from-below converged in {} iterations, residual {:.3e}", below.iterations, below.residual);
    let above = extremal_fixed_point(&map, &interval, Direction::FromAbove, inst.params.outer_tol, inst.params.max_outer)?;
    debug!("from-above converged in {} iterations, residual {:.3e}", above.iterations, above.residual);

    finalize_extremal(inst, interval, below, above)
}

fn finalize_extremal(
    inst: &QviInstance,
    interval: OrderInterval,
    below: ExtremalReport,
    above: ExtremalReport,
) -> Result<ExtremalResult> {
    let y_min = below.fixed_point;
    let y_max = above.fixed_point;
    if !leq_with_slack(&y_min, &y_max, RESULT_SLACK)? {
        return Err(Error::InvalidInput(
            "extremal bracketing failed: minimal solution exceeds maximal solution".into(),
        ));
    }
    if !leq_with_slack(interval.lower(), &y_min, RESULT_SLACK)?
        || !leq_with_slack(&y_max, interval.upper(), RESULT_SLACK)?
    {
        return Err(Error::InvalidInput("extremal solutions left the bracketing interval".into()));
    }
    let traces = if inst.params.record_trace {
        Some((below.step_trace, above.step_trace))
    } else {
        None
    };
    Ok(ExtremalResult {
        y_min,
        y_max,
        interval,
        residuals: (below.residual, above.residual),
        outer_iters: (below.iterations, above.iterations),
        monotone_drifts: (below.worst_drift, above.worst_drift),
        traces,
    })
}

/// Feasibility and residual diagnostics of a candidate solution. Report-only.
#[derive(Clone, Debug)]
pub struct QviResidualReport {
    /// `||(y - Phi(y))^+||_inf`.
    pub feasibility_gap: f64,
    /// `||min(f - A(y), Phi(y) - y)||_inf`.
    pub complementarity_residual: f64,
    /// `||y - S(f, Phi(y))||_inf`.
    pub fixed_point_residual: f64,
}

pub fn verify_solution(inst: &QviInstance, y: &GridFunction, tol: f64) -> Result<QviResidualReport> {
    ensure_same_grid(inst.grid(), y.grid(), "verify_solution")?;
    let phi = inst.obstacle.evaluate(y)?;
    let feasibility_gap = y
        .values()
        .iter()
        .zip(phi.values())
        .fold(0.0f64, |m, (a, b)| m.max(a - b));
    let ay = inst.operator.apply(y)?;
    let complementarity_residual = inst
        .forcing
        .values()
        .iter()
        .zip(ay.values())
        .zip(phi.values().iter().zip(y.values()))
        .fold(0.0f64, |m, ((f, a), (p, v))| m.max((f - a).min(p - v).abs()));
    let psi = Obstacle::from_grid_function(&phi);
    let vi = ViParams { tol: tol / 10.0, ..Default::default() };
    let s = solve_vi_warm(&inst.operator, &inst.forcing, &psi, &inf2(y, &phi)?, &vi)?;
    let fixed_point_residual = y.dist_sup(&s.solution)?;
    Ok(QviResidualReport {
        feasibility_gap: feasibility_gap.max(0.0),
        complementarity_residual,
        fixed_point_residual,
    })
}

/// Fixed points reached by plain iteration from random starting points.
#[derive(Clone, Debug)]
pub struct MultistartReport {
    /// Deduplicated converged fixed points, in order of first discovery.
    pub points: Vec<GridFunction>,
    pub starts: usize,
    /// Starts that failed to converge within the iteration cap; a nonzero
    /// count flags instances where plain iteration stalls.
    pub non_converged: usize,
}

/// Probes the solution set empirically: iterates the QVI map from `starts`
/// random points in `[0, S(F, +inf)]` and deduplicates the limits
/// (sup-distance `1e-7`). The starts run in parallel; results are collected
/// in start order, so the outcome is deterministic in the seed.
pub fn multistart_fixed_points(inst: &QviInstance, starts: usize, seed: u64) -> Result<MultistartReport> {
    const DEDUP_TOL: f64 = 1e-7;
    const MAX_PLAIN_ITERS: usize = 2000;
    let upper = inst.upper_bound()?;
    let tol = inst.params.outer_tol;
    let mut rng = StdRng::seed_from_u64(seed);
    let draws: Vec<Vec<f64>> = (0..starts)
        .map(|_| upper.values().iter().map(|u| rng.gen_range(0.0..=1.0) * u).collect())
        .collect();

    let limits: Vec<Result<Option<GridFunction>>> = draws
        .into_par_iter()
        .map(|draw| {
            let map = qvi_map(inst);
            let mut y = GridFunction::new(inst.grid().clone(), draw)?;
            let mut converged = false;
            for _ in 0..MAX_PLAIN_ITERS {
                let next = map.eval(&y)?;
                let step = y.dist_sup(&next)?;
                y = next;
                if step <= tol {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Ok(None);
            }
            let residual = y.dist_sup(&map.eval(&y)?)?;
            if residual > 10.0 * tol {
                return Ok(None);
            }
            Ok(Some(y))
        })
        .collect();

    let mut points: Vec<GridFunction> = Vec::new();
    let mut non_converged = 0usize;
    for limit in limits {
        match limit? {
            None => non_converged += 1,
            Some(y) => {
                if points.iter().all(|p| p.dist_sup(&y).map(|d| d > DEDUP_TOL).unwrap_or(true)) {
                    points.push(y);
                }
            }
        }
    }
    Ok(MultistartReport { points, starts, non_converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{assemble, OperatorSpec};
    use crate::grid::Boundary;
    use crate::obstacles::{CostFunction, ImpulseObstacleSpec};
    use crate::order::leq;

    fn impulse_instance(n: usize, k: f64, f: f64, tol: f64) -> QviInstance {
        let grid = GridSpec::interval(n, 1.0, Boundary::Neumann).unwrap();
        let op = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid).unwrap();
        let obstacle = ObstacleKind::Impulse(
            ImpulseObstacle::new(ImpulseObstacleSpec { k, cost: CostFunction::default() }, grid.clone())
                .unwrap(),
        );
        let forcing = DualVector::constant(grid.clone(), f).unwrap();
        let cap = DualVector::constant(grid, (10.0 * f).max(1.0)).unwrap();
        QviInstance::new(op, obstacle, forcing, cap, QviParams::with_tol(tol)).unwrap()
    }

    #[test]
    fn map_at_zero_is_nonnegative_and_zero_forcing_fixes_origin() {
        let inst = impulse_instance(24, 1.0, 1.0, 1e-10);
        let map = qvi_map(&inst);
        let t0 = map.eval(&GridFunction::zeros(inst.grid().clone())).unwrap();
        assert!(t0.values().iter().all(|&v| v >= 0.0));

        let zero_inst = inst
            .with_forcing(DualVector::zeros(inst.grid().clone()))
            .unwrap();
        let map = qvi_map(&zero_inst);
        let t0 = map.eval(&GridFunction::zeros(zero_inst.grid().clone())).unwrap();
        assert_eq!(t0.norm_sup(), 0.0);
    }

    #[test]
    fn zero_forcing_gives_zero_extremal_pair() {
        let grid = GridSpec::interval(20, 1.0, Boundary::Neumann).unwrap();
        let op = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid).unwrap();
        let obstacle = ObstacleKind::Impulse(
            ImpulseObstacle::new(
                ImpulseObstacleSpec { k: 1.0, cost: CostFunction::default() },
                grid.clone(),
            )
            .unwrap(),
        );
        let inst = QviInstance::new(
            op,
            obstacle,
            DualVector::zeros(grid.clone()),
            DualVector::constant(grid, 1.0).unwrap(),
            QviParams::with_tol(1e-11),
        )
        .unwrap();
        let r = solve_extremal(&inst).unwrap();
        assert_eq!(r.y_min.norm_sup(), 0.0);
        assert!(r.y_max.norm_sup() <= 1e-10);
    }

    #[test]
    fn qvi_map_is_order_preserving() {
        let inst = impulse_instance(20, 1.0, 1.0, 1e-10);
        let map = qvi_map(&inst);
        let upper = inst.upper_bound().unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let v = GridFunction::new(
                inst.grid().clone(),
                upper.values().iter().map(|u| rng.gen_range(0.0..1.0) * u).collect(),
            )
            .unwrap();
            let w = GridFunction::new(
                inst.grid().clone(),
                v.values()
                    .iter()
                    .zip(upper.values())
                    .map(|(v, u)| v + rng.gen_range(0.0..1.0) * (u - v))
                    .collect(),
            )
            .unwrap();
            let tv = map.eval(&v).unwrap();
            let tw = map.eval(&w).unwrap();
            assert!(leq_with_slack(&tv, &tw, 1e-10).unwrap());
        }
    }

    #[test]
    fn singleton_regime_collapses_the_bracket() {
        let inst = impulse_instance(64, 1.0, 1.0, 1e-10);
        let r = solve_extremal(&inst).unwrap();
        assert!(leq(&r.y_min, &r.y_max).unwrap());
        assert!(r.y_min.dist_sup(&r.y_max).unwrap() <= 1e-8);
        assert!(r.residuals.0 <= 1e-10 && r.residuals.1 <= 1e-10);

        let ms = multistart_fixed_points(&inst, 10, 11).unwrap();
        assert_eq!(ms.non_converged, 0);
        assert_eq!(ms.points.len(), 1);
    }

    #[test]
    fn verify_solution_residuals() {
        let inst = impulse_instance(32, 1.0, 1.0, 1e-10);
        let r = solve_extremal(&inst).unwrap();
        let rep = verify_solution(&inst, &r.y_min, 1e-10).unwrap();
        assert!(rep.feasibility_gap <= 1e-12);
        assert!(rep.complementarity_residual <= 1e-9);
        assert!(rep.fixed_point_residual <= 1e-9);

        // negative control: with weak diffusion and a stepped cap, the
        // unconstrained cap solution drops steeply and cheap shifts into the
        // low region undercut it, so the cap solution sits strictly above its
        // own obstacle and a positive feasibility gap is reported
        let grid = inst.grid().clone();
        let weak_diffusion = assemble(
            &OperatorSpec {
                a_diff: crate::elliptic::Coefficient::Constant(1e-3),
                a_react: crate::elliptic::Coefficient::Constant(1.0),
                nonlinearity: crate::elliptic::Nonlinearity::None,
                ellipticity_floor: 1e-3,
                reaction_floor: 1.0,
            },
            &grid,
        )
        .unwrap();
        let steep_cap = DualVector::from_fn(grid.clone(), |_, [x, _]| {
            if x < 0.5 {
                10.0
            } else {
                0.1
            }
        })
        .unwrap();
        let steep = QviInstance::new(
            weak_diffusion,
            inst.obstacle().clone(),
            DualVector::constant(grid, 0.1).unwrap(),
            steep_cap,
            *inst.params(),
        )
        .unwrap();
        let ybar = steep.upper_bound().unwrap();
        let rep = verify_solution(&steep, &ybar, 1e-10).unwrap();
        assert!(rep.feasibility_gap > 1.0);

        // all-zero data: every residual is exactly zero
        let zero_inst = inst.with_forcing(DualVector::zeros(inst.grid().clone())).unwrap();
        let rep = verify_solution(&zero_inst, &GridFunction::zeros(zero_inst.grid().clone()), 1e-10).unwrap();
        assert_eq!(rep.feasibility_gap, 0.0);
        assert_eq!(rep.fixed_point_residual, 0.0);
    }

    #[test]
    fn minimal_solution_is_monotone_in_forcing() {
        let inst = impulse_instance(24, 1.0, 0.5, 1e-10);
        let mut rng = StdRng::seed_from_u64(29);
        for _ in 0..5 {
            let f1: Vec<f64> = (0..24).map(|_| rng.gen_range(0.0..1.0)).collect();
            let f2: Vec<f64> = f1.iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
            let i1 = inst
                .with_forcing(DualVector::new(inst.grid().clone(), f1).unwrap())
                .unwrap();
            let i2 = inst
                .with_forcing(DualVector::new(inst.grid().clone(), f2).unwrap())
                .unwrap();
            let r1 = solve_extremal(&i1).unwrap();
            let r2 = solve_extremal(&i2).unwrap();
            assert!(leq_with_slack(&r1.y_min, &r2.y_min, 1e-9).unwrap());
            assert!(leq_with_slack(&r1.y_max, &r2.y_max, 1e-9).unwrap());
        }
    }

    #[test]
    fn zero_cost_impulse_scales_with_forcing_and_k() {
        // with c0 = 0 the obstacle is positively homogeneous jointly in
        // (y, k), so scaling (f, k) by t scales the solution by t
        let grid = GridSpec::interval(24, 1.0, Boundary::Neumann).unwrap();
        let op = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid).unwrap();
        let make = |k: f64, f: f64| {
            let obstacle = ObstacleKind::Impulse(
                ImpulseObstacle::new(
                    ImpulseObstacleSpec { k, cost: CostFunction { alpha: 0.0, gamma: 0.5 } },
                    grid.clone(),
                )
                .unwrap(),
            );
            QviInstance::new(
                op.clone(),
                obstacle,
                DualVector::constant(grid.clone(), f).unwrap(),
                DualVector::constant(grid.clone(), 10.0 * f).unwrap(),
                QviParams::with_tol(1e-11),
            )
            .unwrap()
        };
        let r1 = solve_extremal(&make(0.5, 1.0)).unwrap();
        let r2 = solve_extremal(&make(1.0, 2.0)).unwrap();
        assert!(r2.y_min.dist_sup(&r1.y_min.scaled(2.0)).unwrap() <= 1e-8);
    }
}
