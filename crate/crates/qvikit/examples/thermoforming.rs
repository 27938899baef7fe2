//! A compliant-obstacle model of thermoforming: a clamped membrane `y` is
//! pressed towards a mold whose height is an affine function of its
//! temperature `z`; the temperature diffuses with an insulated boundary and
//! reacts to the membrane-mold gap through a piecewise-linear exchange term.
//! The mold is therefore an implicit obstacle `Phi(y) = l z(y) + Phi_0`, and
//! the stationary state is a QVI.
//!
//! Run with `cargo run --example thermoforming`.

use qvikit::elliptic::{assemble, Coefficient, Nonlinearity, OperatorSpec};
use qvikit::obstacles::{CoupledObstacle, CoupledObstacleSpec, GVariant, InnerSolver, ObstacleMap};
use qvikit::qvi::{solve_extremal, ObstacleKind, QviInstance, QviParams};
use qvikit::{Boundary, DualVector, GridSpec};

fn main() -> qvikit::Result<()> {
    // membrane: clamped on the boundary
    let grid = GridSpec::interval(65, 1.0, Boundary::DirichletZero)?;
    let membrane_op = assemble(
        &OperatorSpec {
            a_diff: Coefficient::Constant(1.0),
            a_react: Coefficient::Constant(0.0),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 1.0,
            reaction_floor: 0.0,
        },
        &grid,
    )?;

    // baseline mold profile Phi_0 on the full (insulated) temperature grid
    let state_grid = grid.companion_neumann();
    let phi0: Vec<f64> = (0..state_grid.len())
        .map(|i| {
            let x = state_grid.coords(i)[0];
            0.3 + 0.25 * (std::f64::consts::PI * x).sin()
        })
        .collect();

    let spec = CoupledObstacleSpec {
        // temperature diffusion with a reaction keeping it near ambient
        b_spec: OperatorSpec {
            a_diff: Coefficient::Constant(0.2),
            a_react: Coefficient::Constant(1.0),
            nonlinearity: Nonlinearity::None,
            ellipticity_floor: 0.2,
            reaction_floor: 1.0,
        },
        g_variant: GVariant::ThermoformingG,
        // mold growth per unit temperature, and the cold-mold shape
        k_field: Coefficient::Constant(0.15),
        nu_offset: Coefficient::PerNode(phi0),
        nu_floor: 0.3,
        g_rhs: Coefficient::Constant(1.0),
        inner_tol: 1e-13,
        inner_max_iter: 2000,
        solver: InnerSolver::default(),
    };
    let mold = CoupledObstacle::new(&spec, grid.clone())?;

    // uniform pressure on the membrane
    let forcing = DualVector::constant(grid.clone(), 12.0)?;
    let cap = forcing.scaled(2.0);
    let inst = QviInstance::new(
        membrane_op,
        ObstacleKind::Coupled(mold.clone()),
        forcing,
        cap,
        QviParams::with_tol(1e-10),
    )?;

    let result = solve_extremal(&inst)?;
    let y = &result.y_min;
    let phi = mold.evaluate(y)?;
    let contact: usize = y
        .values()
        .iter()
        .zip(phi.values())
        .filter(|(y, p)| **p - **y <= 1e-8)
        .count();

    println!("membrane nodes: {}", y.len());
    println!(
        "extremal pair: residuals ({:.2e}, {:.2e}), bracket width {:.2e}",
        result.residuals.0,
        result.residuals.1,
        result.y_min.dist_sup(&result.y_max)?
    );
    println!(
        "membrane peak {:.4}, mold range [{:.4}, {:.4}]",
        y.norm_sup(),
        phi.values().iter().cloned().fold(f64::INFINITY, f64::min),
        phi.norm_sup()
    );
    println!(
        "contact region: {contact} of {} nodes touch the mold (gap <= 1e-8)",
        y.len()
    );

    // mid-profile sample
    println!();
    println!("{:>6} {:>10} {:>10}", "x", "membrane", "mold");
    for i in (0..y.len()).step_by(8) {
        let x = grid.coords(i)[0];
        println!("{:>6.3} {:>10.5} {:>10.5}", x, y.values()[i], phi.values()[i]);
    }
    Ok(())
}
