//! The reduced optimal control problem over box-constrained piecewise-
//! constant controls: minimize `J1(m(f), M(f)) + J2(f)` where `m` and `M`
//! are the extremal QVI solutions and `f = sum_m theta_m chi_{Omega_m}`.
//!
//! The admissible set is a compact box in R^M, so existence is witnessed
//! constructively: an exhaustive tensor grid search (with a deterministic
//! lexicographic tie-break) followed by derivative-free coordinate descent.
//! No sensitivities of the nonsmooth map `f -> (m(f), M(f))` are needed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DualVector, GridFunction, GridSpec};
use crate::qvi::{solve_extremal, ExtremalResult, QviInstance};

/// Assignment of each grid node to one of `M` control patches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    patch_of: Vec<usize>,
    n_patches: usize,
}

impl Partition {
    pub fn new(patch_of: Vec<usize>, n_patches: usize, grid: &GridSpec) -> Result<Self> {
        if n_patches == 0 {
            return Err(Error::InvalidInput("partition needs at least one patch".into()));
        }
        if patch_of.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "partition covers {} nodes but the grid has {}",
                patch_of.len(),
                grid.len()
            )));
        }
        if let Some(i) = patch_of.iter().position(|&p| p >= n_patches) {
            return Err(Error::InvalidInput(format!(
                "node {i} is assigned to patch {} out of {n_patches}",
                patch_of[i]
            )));
        }
        Ok(Self { patch_of, n_patches })
    }

    /// Contiguous blocks of (nearly) equal size along the node ordering.
    pub fn uniform_blocks(grid: &GridSpec, n_patches: usize) -> Result<Self> {
        let n = grid.len();
        if n_patches == 0 || n_patches > n {
            return Err(Error::InvalidInput(format!(
                "cannot split {n} nodes into {n_patches} patches"
            )));
        }
        let patch_of = (0..n).map(|i| (i * n_patches) / n).collect();
        Self::new(patch_of, n_patches, grid)
    }

    pub fn n_patches(&self) -> usize {
        self.n_patches
    }

    pub fn patch_of(&self) -> &[usize] {
        &self.patch_of
    }

    pub fn assemble_forcing(&self, grid: &GridSpec, coefficients: &[f64]) -> Result<DualVector> {
        if coefficients.len() != self.n_patches {
            return Err(Error::InvalidInput("coefficient count does not match the partition".into()));
        }
        DualVector::new(grid.clone(), self.patch_of.iter().map(|&p| coefficients[p]).collect())
    }
}

/// A candidate control: one coefficient per patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlParam {
    pub coefficients: Vec<f64>,
    pub partition: Partition,
}

/// Objective selection.
#[derive(Clone, Debug)]
pub enum ObjectiveKind {
    /// `1/2 ||M(f) - m(f)||_H^2 + 1/2 ||y_d - m(f)||_H^2`: push the solution
    /// set towards a singleton while tracking a desired state.
    SingletonGapTracking { y_d: GridFunction },
    /// `||s - m(f)||_H^2` with a constant target: track a desired value
    /// function level (the minimal solution plays the value function role).
    ValueTracking { s: f64 },
}

/// The control problem: a QVI template (forcing replaced per evaluation),
/// patch bounds `0 < nu_m <= theta_m <= F_m`, objective weights.
#[derive(Clone, Debug)]
pub struct ControlProblemSpec {
    template: QviInstance,
    partition: Partition,
    lower: Vec<f64>,
    upper: Vec<f64>,
    objective: ObjectiveKind,
    lambda: f64,
}

impl ControlProblemSpec {
    pub fn new(
        template: QviInstance,
        partition: Partition,
        lower: Vec<f64>,
        upper: Vec<f64>,
        objective: ObjectiveKind,
        lambda: f64,
    ) -> Result<Self> {
        let m = partition.n_patches();
        if lower.len() != m || upper.len() != m {
            return Err(Error::InvalidInput("bounds must have one entry per patch".into()));
        }
        for i in 0..m {
            if !(lower[i] > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "control bounds require 0 < nu on every patch (patch {i})"
                )));
            }
            if lower[i] > upper[i] {
                return Err(Error::InvalidInput(format!("empty control box on patch {i}")));
            }
        }
        // lambda = 0 is admitted at the library level (it exercises exact
        // tie-breaking); the config front end keeps the strict lambda > 0 rule.
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidInput("control cost weight lambda must be nonnegative".into()));
        }
        if let ObjectiveKind::SingletonGapTracking { y_d } = &objective {
            if y_d.grid() != template.grid() {
                return Err(Error::GridMismatch("tracking target lives on a different grid".into()));
            }
        }
        // the cap of the template must dominate every admissible control
        let cap_forcing = partition.assemble_forcing(template.grid(), &upper)?;
        if !cap_forcing.leq(template.forcing_cap())? {
            return Err(Error::InvalidInput(
                "the template forcing cap must dominate the upper control bounds".into(),
            ));
        }
        Ok(Self { template, partition, lower, upper, objective, lambda })
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.lower, &self.upper)
    }

    pub fn template(&self) -> &QviInstance {
        &self.template
    }

    pub fn n_patches(&self) -> usize {
        self.partition.n_patches()
    }

    fn check_admissible(&self, theta: &ControlParam) -> Result<()> {
        if theta.partition != self.partition {
            return Err(Error::InadmissibleControl("partition does not match the problem".into()));
        }
        for (i, &c) in theta.coefficients.iter().enumerate() {
            if !(c >= self.lower[i] && c <= self.upper[i]) || !c.is_finite() {
                return Err(Error::InadmissibleControl(format!(
                    "coefficient {c} on patch {i} leaves the box [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        Ok(())
    }
}

/// Term-by-term objective value at one control.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// `1/2 ||M(f) - m(f)||_H^2`.
    pub gap_term: f64,
    pub tracking_term: f64,
    /// `lambda/2 ||theta||_{R^M}^2`.
    pub control_cost: f64,
    pub total: f64,
}

/// Assembles the forcing from `theta`, solves the extremal pair and
/// evaluates the objective. Deterministic: repeated evaluations of the same
/// control agree exactly.
pub fn evaluate_objective(spec: &ControlProblemSpec, theta: &ControlParam) -> Result<ObjectiveBreakdown> {
    let (breakdown, _) = evaluate_objective_with_solution(spec, theta)?;
    Ok(breakdown)
}

pub fn evaluate_objective_with_solution(
    spec: &ControlProblemSpec,
    theta: &ControlParam,
) -> Result<(ObjectiveBreakdown, ExtremalResult)> {
    spec.check_admissible(theta)?;
    let f = spec.partition.assemble_forcing(spec.template.grid(), &theta.coefficients)?;
    let inst = spec.template.with_forcing(f)?;
    let extremal = solve_extremal(&inst)?;

    let gap = extremal.y_max.sub(&extremal.y_min)?.norm_h();
    let gap_term;
    let tracking_term;
    match &spec.objective {
        ObjectiveKind::SingletonGapTracking { y_d } => {
            gap_term = 0.5 * gap * gap;
            let t = y_d.sub(&extremal.y_min)?.norm_h();
            tracking_term = 0.5 * t * t;
        }
        ObjectiveKind::ValueTracking { s } => {
            gap_term = 0.5 * gap * gap;
            let t = extremal.y_min.shifted(-s).norm_h();
            tracking_term = t * t;
        }
    }
    let control_cost =
        0.5 * spec.lambda * theta.coefficients.iter().map(|c| c * c).sum::<f64>();
    let total = gap_term + tracking_term + control_cost;
    Ok((ObjectiveBreakdown { gap_term, tracking_term, control_cost, total }, extremal))
}

/// One evaluated point of the search table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalRow {
    pub coefficients: Vec<f64>,
    pub value: ObjectiveBreakdown,
}

/// Outcome of a search pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub argmin: ControlParam,
    pub value: ObjectiveBreakdown,
    /// All evaluated points (grid search) or the accepted line-search points
    /// (coordinate descent), in evaluation order.
    pub table: Vec<EvalRow>,
    /// Objective values after each accepted update (descent only).
    pub trace: Vec<f64>,
    pub evaluations: usize,
    /// The argmin value is at most every tabulated value.
    pub certificate_ok: bool,
}

const GRID_SEARCH_BUDGET: usize = 100_000;

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 || hi == lo {
        return vec![lo; points];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Exhaustive tensor-grid search over the admissible box with `points`
/// values per patch. Ties are broken towards the lexicographically smallest
/// coefficient vector (the enumeration order), making reruns byte-identical.
pub fn grid_search(spec: &ControlProblemSpec, points: usize) -> Result<OptimizationReport> {
    let m = spec.n_patches();
    if m > 3 {
        return Err(Error::InvalidInput(
            "full grid search is limited to M <= 3 patches; use coordinate descent for larger M".into(),
        ));
    }
    if points == 0 {
        return Err(Error::InvalidInput("grid search needs at least one point per axis".into()));
    }
    let total = points.checked_pow(m as u32).filter(|&t| t <= GRID_SEARCH_BUDGET);
    let total = match total {
        Some(t) => t,
        None => {
            return Err(Error::BudgetExceeded(format!(
                "{points}^{m} grid evaluations exceed the budget of {GRID_SEARCH_BUDGET}"
            )))
        }
    };

    let axes: Vec<Vec<f64>> = (0..m)
        .map(|i| linspace(spec.lower[i], spec.upper[i], points))
        .collect();

    // lexicographic enumeration via an odometer over the axes
    let thetas: Vec<Vec<f64>> = (0..total)
        .map(|flat| {
            let mut rest = flat;
            let mut coeffs = vec![0.0; m];
            for i in (0..m).rev() {
                coeffs[i] = axes[i][rest % points];
                rest /= points;
            }
            coeffs
        })
        .collect();

    let rows: Vec<Result<EvalRow>> = thetas
        .into_par_iter()
        .map(|coefficients| {
            let theta = ControlParam { coefficients: coefficients.clone(), partition: spec.partition.clone() };
            let value = evaluate_objective(spec, &theta)?;
            Ok(EvalRow { coefficients, value })
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    for r in rows {
        table.push(r?);
    }

    let mut best = 0usize;
    for (i, row) in table.iter().enumerate() {
        if row.value.total < table[best].value.total {
            best = i;
        }
    }
    let certificate_ok = table.iter().all(|r| table[best].value.total <= r.value.total);
    let evaluations = table.len();
    Ok(OptimizationReport {
        argmin: ControlParam {
            coefficients: table[best].coefficients.clone(),
            partition: spec.partition.clone(),
        },
        value: table[best].value.clone(),
        table,
        trace: Vec::new(),
        evaluations,
        certificate_ok,
    })
}

/// Options of the descent refinement.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DescentOptions {
    /// Stop when a full round improves the objective by less than this.
    pub tol_j: f64,
    pub max_rounds: usize,
    /// Golden-section iterations per coordinate line search.
    pub line_search_iters: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions { tol_j: 1e-10, max_rounds: 20, line_search_iters: 30 }
    }
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Cyclic per-coordinate golden-section refinement inside the box. A
/// coordinate update is accepted only if it does not increase the objective,
/// so the trace is nonincreasing by construction.
pub fn coordinate_descent(
    spec: &ControlProblemSpec,
    init: &ControlParam,
    opts: &DescentOptions,
) -> Result<OptimizationReport> {
    spec.check_admissible(init)?;
    if !(opts.tol_j >= 0.0) || opts.max_rounds == 0 || opts.line_search_iters == 0 {
        return Err(Error::InvalidInput("invalid descent options".into()));
    }
    let m = spec.n_patches();
    let mut current = init.clone();
    let mut current_value = evaluate_objective(spec, &current)?;
    let mut evaluations = 1usize;
    let mut trace = vec![current_value.total];
    let mut table = vec![EvalRow { coefficients: current.coefficients.clone(), value: current_value.clone() }];

    for _round in 0..opts.max_rounds {
        let round_start = current_value.total;
        for coord in 0..m {
            let (mut lo, mut hi) = (spec.lower[coord], spec.upper[coord]);
            if hi == lo {
                continue;
            }
            let eval_at = |t: f64, evals: &mut usize| -> Result<f64> {
                let mut coeffs = current.coefficients.clone();
                coeffs[coord] = t;
                let theta = ControlParam { coefficients: coeffs, partition: spec.partition.clone() };
                *evals += 1;
                Ok(evaluate_objective(spec, &theta)?.total)
            };

            let mut x1 = hi - GOLDEN * (hi - lo);
            let mut x2 = lo + GOLDEN * (hi - lo);
            let mut f1 = eval_at(x1, &mut evaluations)?;
            let mut f2 = eval_at(x2, &mut evaluations)?;
            let mut best_t = if f1 <= f2 { x1 } else { x2 };
            let mut best_f = f1.min(f2);
            for _ in 0..opts.line_search_iters {
                if f1 <= f2 {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - GOLDEN * (hi - lo);
                    f1 = eval_at(x1, &mut evaluations)?;
                } else {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + GOLDEN * (hi - lo);
                    f2 = eval_at(x2, &mut evaluations)?;
                }
                if f1 < best_f {
                    best_f = f1;
                    best_t = x1;
                }
                if f2 < best_f {
                    best_f = f2;
                    best_t = x2;
                }
            }
            // accept only non-increasing updates
            if best_f <= current_value.total {
                current.coefficients[coord] = best_t;
                current_value = {
                    let v = evaluate_objective(spec, &current)?;
                    evaluations += 1;
                    v
                };
                table.push(EvalRow { coefficients: current.coefficients.clone(), value: current_value.clone() });
            }
            debug_assert!(current_value.total <= trace.last().copied().unwrap_or(f64::INFINITY) + 1e-12);
            trace.push(current_value.total);
        }
        if round_start - current_value.total < opts.tol_j {
            break;
        }
    }

    Ok(OptimizationReport {
        argmin: current,
        value: current_value,
        table,
        trace,
        evaluations,
        certificate_ok: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{assemble, OperatorSpec};
    use crate::grid::Boundary;
    use crate::obstacles::{CostFunction, ImpulseObstacle, ImpulseObstacleSpec};
    use crate::qvi::{ObstacleKind, QviParams};

    fn control_spec(n: usize, m: usize, lambda: f64, objective: Option<ObjectiveKind>) -> ControlProblemSpec {
        let grid = GridSpec::interval(n, 1.0, Boundary::Neumann).unwrap();
        let op = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid).unwrap();
        let obstacle = ObstacleKind::Impulse(
            ImpulseObstacle::new(
                ImpulseObstacleSpec { k: 1.0, cost: CostFunction::default() },
                grid.clone(),
            )
            .unwrap(),
        );
        let lower = vec![0.2; m];
        let upper = vec![2.0; m];
        let partition = Partition::uniform_blocks(&grid, m).unwrap();
        let cap = DualVector::constant(grid.clone(), 2.0).unwrap();
        let template = QviInstance::new(
            op,
            obstacle,
            DualVector::constant(grid.clone(), 0.2).unwrap(),
            cap,
            QviParams::with_tol(1e-9),
        )
        .unwrap();
        let objective = objective.unwrap_or(ObjectiveKind::SingletonGapTracking {
            y_d: GridFunction::constant(grid, 0.5).unwrap(),
        });
        ControlProblemSpec::new(template, partition, lower, upper, objective, lambda).unwrap()
    }

    #[test]
    fn partition_covers_all_nodes() {
        let grid = GridSpec::interval(10, 1.0, Boundary::Neumann).unwrap();
        let p = Partition::uniform_blocks(&grid, 3).unwrap();
        assert_eq!(p.patch_of().len(), 10);
        assert!(p.patch_of().iter().all(|&x| x < 3));
        // every patch nonempty for this size
        for patch in 0..3 {
            assert!(p.patch_of().iter().any(|&x| x == patch));
        }
        let f = p.assemble_forcing(&grid, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(f.values()[0], 1.0);
        assert_eq!(f.values()[9], 3.0);
    }

    #[test]
    fn objective_is_deterministic_and_admissibility_enforced() {
        let spec = control_spec(16, 1, 1.0, None);
        let theta = ControlParam { coefficients: vec![1.0], partition: spec.partition().clone() };
        let a = evaluate_objective(&spec, &theta).unwrap();
        let b = evaluate_objective(&spec, &theta).unwrap();
        assert_eq!(a, b);

        let bad = ControlParam { coefficients: vec![5.0], partition: spec.partition().clone() };
        assert!(matches!(evaluate_objective(&spec, &bad), Err(Error::InadmissibleControl(_))));
    }

    #[test]
    fn large_lambda_prefers_the_smaller_control() {
        let spec = control_spec(12, 1, 1e6, None);
        let small = ControlParam { coefficients: vec![0.2], partition: spec.partition().clone() };
        let large = ControlParam { coefficients: vec![2.0], partition: spec.partition().clone() };
        let js = evaluate_objective(&spec, &small).unwrap();
        let jl = evaluate_objective(&spec, &large).unwrap();
        assert!(js.total < jl.total);
        assert!(js.control_cost > 0.99 * js.total);
    }

    #[test]
    fn grid_search_brackets_its_argmin() {
        let spec = control_spec(16, 1, 0.05, None);
        let rep = grid_search(&spec, 21).unwrap();
        assert!(rep.certificate_ok);
        assert_eq!(rep.evaluations, 21);
        // the tabulated neighbors of the argmin are no better
        let idx = rep
            .table
            .iter()
            .position(|r| r.coefficients == rep.argmin.coefficients)
            .unwrap();
        if idx > 0 {
            assert!(rep.table[idx - 1].value.total >= rep.value.total);
        }
        if idx + 1 < rep.table.len() {
            assert!(rep.table[idx + 1].value.total >= rep.value.total);
        }
        // nested refinement cannot increase the minimum
        let fine = grid_search(&spec, 41).unwrap();
        assert!(fine.value.total <= rep.value.total + 1e-15);
    }

    #[test]
    fn constant_objective_ties_break_lexicographically() {
        // With a coupled obstacle and forcing bounds far above the obstacle
        // level, every admissible control pins the state to the obstacle
        // along the identical iterate path, so the gap and tracking terms tie
        // bit-exactly; with lambda = 0 the whole objective ties and the
        // lexicographically smallest grid point must win.
        use crate::obstacles::{CoupledObstacle, CoupledObstacleSpec, GVariant, InnerSolver};
        let grid = GridSpec::interval(12, 1.0, Boundary::Neumann).unwrap();
        let op = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid).unwrap();
        let coupled_spec = CoupledObstacleSpec {
            b_spec: OperatorSpec::laplacian_with_reaction(1.0, 1.0),
            g_variant: GVariant::PosPartGap,
            k_field: crate::elliptic::Coefficient::Constant(0.4),
            nu_offset: crate::elliptic::Coefficient::Constant(0.1),
            nu_floor: 0.1,
            g_rhs: crate::elliptic::Coefficient::Constant(1.0),
            inner_tol: 1e-13,
            inner_max_iter: 500,
            solver: InnerSolver::default(),
        };
        let obstacle = ObstacleKind::Coupled(CoupledObstacle::new(&coupled_spec, grid.clone()).unwrap());
        let partition = Partition::uniform_blocks(&grid, 2).unwrap();
        let template = QviInstance::new(
            op,
            obstacle,
            DualVector::constant(grid.clone(), 5.0).unwrap(),
            DualVector::constant(grid.clone(), 8.0).unwrap(),
            QviParams::with_tol(1e-9),
        )
        .unwrap();
        let spec = ControlProblemSpec::new(
            template,
            partition,
            vec![5.0, 5.0],
            vec![8.0, 8.0],
            ObjectiveKind::ValueTracking { s: 0.0 },
            0.0,
        )
        .unwrap();
        let rep = grid_search(&spec, 3).unwrap();
        assert_eq!(rep.argmin.coefficients, vec![5.0, 5.0]);
        let t0 = &rep.table[0].value;
        for row in &rep.table {
            assert_eq!(row.value.total, t0.total);
        }
    }

    #[test]
    fn descent_from_grid_argmin_only_improves() {
        let spec = control_spec(16, 2, 0.05, None);
        let grid_rep = grid_search(&spec, 7).unwrap();
        let refined = coordinate_descent(
            &spec,
            &grid_rep.argmin,
            &DescentOptions { tol_j: 1e-12, max_rounds: 4, line_search_iters: 20 },
        )
        .unwrap();
        assert!(refined.value.total <= grid_rep.value.total + 1e-15);
        for w in refined.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn pure_control_cost_descends_to_the_lower_corner() {
        let spec = control_spec(12, 2, 1e8, None);
        let init = ControlParam { coefficients: vec![1.7, 0.9], partition: spec.partition().clone() };
        let rep = coordinate_descent(
            &spec,
            &init,
            &DescentOptions { tol_j: 1e-9, max_rounds: 30, line_search_iters: 45 },
        )
        .unwrap();
        for (c, lo) in rep.argmin.coefficients.iter().zip(spec.bounds().0) {
            assert!((c - lo).abs() < 1e-4, "coefficient {c} did not reach the bound {lo}");
        }
    }

    #[test]
    fn two_random_inits_descend_monotonically() {
        let spec = control_spec(12, 2, 0.1, None);
        for init in [vec![0.5, 1.5], vec![1.9, 0.3]] {
            let rep = coordinate_descent(
                &spec,
                &ControlParam { coefficients: init, partition: spec.partition().clone() },
                &DescentOptions { tol_j: 1e-10, max_rounds: 3, line_search_iters: 15 },
            )
            .unwrap();
            for w in rep.trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn budget_and_patch_limits() {
        let spec = control_spec(12, 2, 0.1, None);
        assert!(matches!(grid_search(&spec, 1000), Err(Error::BudgetExceeded(_))));
        let spec4 = control_spec(12, 4, 0.1, None);
        assert!(matches!(grid_search(&spec4, 3), Err(Error::InvalidInput(_))));
    }
}
