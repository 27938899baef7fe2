//! Solve one impulse-control QVI instance for its minimal and maximal
//! solutions, probe the solution set with random restarts, and verify the
//! result against the residual diagnostics.
//!
//! Run with `cargo run --example extremal_solve`.

use qvikit::elliptic::{assemble, OperatorSpec};
use qvikit::obstacles::{CostFunction, ImpulseObstacle, ImpulseObstacleSpec};
use qvikit::qvi::{
    multistart_fixed_points, solve_extremal, verify_solution, ObstacleKind, QviInstance, QviParams,
};
use qvikit::{Boundary, DualVector, GridSpec};

fn main() -> qvikit::Result<()> {
    // 1D grid on (0, 1), all nodes active (H^1-type boundary)
    let grid = GridSpec::interval(64, 1.0, Boundary::Neumann)?;
    let operator = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid)?;

    // impulse obstacle: fixed cost k plus the cheapest nonnegative shift
    let obstacle = ObstacleKind::Impulse(ImpulseObstacle::new(
        ImpulseObstacleSpec { k: 1.0, cost: CostFunction { alpha: 1.0, gamma: 0.5 } },
        grid.clone(),
    )?);

    let forcing = DualVector::constant(grid.clone(), 1.0)?;
    let cap = forcing.scaled(10.0);
    let inst = QviInstance::new(operator, obstacle, forcing, cap, QviParams::with_tol(1e-10))?;

    let result = solve_extremal(&inst)?;
    println!("interval end S(F, +inf): sup = {:.6}", result.interval.upper().norm_sup());
    println!(
        "minimal solution: sup = {:.8}, {} outer iterations, residual {:.2e}",
        result.y_min.norm_sup(),
        result.outer_iters.0,
        result.residuals.0
    );
    println!(
        "maximal solution: sup = {:.8}, {} outer iterations, residual {:.2e}",
        result.y_max.norm_sup(),
        result.outer_iters.1,
        result.residuals.1
    );
    println!(
        "bracket width ||y_max - y_min||_inf = {:.2e}  (the bounded impulse problem is a singleton)",
        result.y_min.dist_sup(&result.y_max)?
    );

    let report = verify_solution(&inst, &result.y_min, 1e-10)?;
    println!(
        "verification: feasibility gap {:.2e}, complementarity {:.2e}, fixed-point residual {:.2e}",
        report.feasibility_gap, report.complementarity_residual, report.fixed_point_residual
    );

    let ms = multistart_fixed_points(&inst, 20, 12345)?;
    println!(
        "multistart: {} starts -> {} distinct fixed point(s), {} non-converged",
        ms.starts,
        ms.points.len(),
        ms.non_converged
    );
    Ok(())
}
