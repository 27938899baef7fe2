//! Monotone forcing perturbations: drive `f_n -> f*` from above and from
//! below and watch both extremal solutions converge monotonically to their
//! limits, with the error contracting along the harmonic decay of the
//! perturbation.
//!
//! Run with `cargo run --example monotone_stability`.

use qvikit::elliptic::{assemble, OperatorSpec};
use qvikit::obstacles::{CostFunction, ImpulseObstacle, ImpulseObstacleSpec};
use qvikit::qvi::{ObstacleKind, QviInstance, QviParams};
use qvikit::stability::{run_monotone_perturbation, PerturbationPlan, SequenceRule, StabilityReport};
use qvikit::{Boundary, DualVector, GridSpec};

fn print_table(label: &str, report: &StabilityReport) {
    println!("{label}:");
    println!("{:>4} {:>10} {:>12} {:>12} {:>12} {:>12}", "n", "delta", "err_min_H", "err_min_sup", "err_max_H", "err_max_sup");
    for row in &report.rows {
        println!(
            "{:>4} {:>10.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            row.n, row.delta, row.err_min_h, row.err_min_sup, row.err_max_h, row.err_max_sup
        );
    }
    println!(
        "  error contraction over the horizon (factor >= 5 required): {}",
        if report.decay_ok() { "yes" } else { "NO" }
    );
    println!();
}

fn main() -> qvikit::Result<()> {
    let grid = GridSpec::interval(48, 1.0, Boundary::Neumann)?;
    let operator = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid)?;
    let obstacle = ObstacleKind::Impulse(ImpulseObstacle::new(
        ImpulseObstacleSpec { k: 1.0, cost: CostFunction::default() },
        grid.clone(),
    )?);
    let f_star = DualVector::constant(grid.clone(), 1.0)?;
    let cap = f_star.scaled(10.0);
    let template = QviInstance::new(operator, obstacle, f_star, cap, QviParams::with_tol(1e-10))?;

    // f_n = f* (1 + 1/n): nonincreasing towards the limit
    let plan = PerturbationPlan::new(
        template.forcing().clone(),
        0.1,
        template.forcing_cap().clone(),
        SequenceRule::Decreasing,
        1.0,
        0,
        12,
    )?;
    let report = run_monotone_perturbation(&template, &plan, 7)?;
    print_table("nonincreasing forcing (both extremal solutions descend)", &report);

    // f_n = f* (1 - 1/(n+1)): nondecreasing towards the limit
    let plan = PerturbationPlan::new(
        template.forcing().clone(),
        0.1,
        template.forcing_cap().clone(),
        SequenceRule::Increasing,
        1.0,
        1,
        12,
    )?;
    let report = run_monotone_perturbation(&template, &plan, 7)?;
    print_table("nondecreasing forcing (both extremal solutions climb)", &report);

    println!("every run also re-checks the obstacle scaling hypothesis before trusting directions");
    Ok(())
}
