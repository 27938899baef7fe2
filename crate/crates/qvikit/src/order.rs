//! Componentwise vector-lattice operations and the extremal fixed-point
//! engine for increasing maps with sub- and super-solutions.
//!
//! The engine runs the monotone iteration `y_{k+1} = T(y_k)` from the lower
//! (resp. upper) end of an order interval. For an increasing `T` that is
//! continuous along monotone sequences, the iteration from a sub-solution
//! converges to the *minimal* fixed point in the interval, and from a
//! super-solution to the *maximal* one. Every step is audited: an iterate
//! that moves against the monotone direction signals a non-increasing map or
//! a buggy inner solve and aborts the run.

use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, GridFunction, GridSpec};

/// Componentwise positive part `max(v_i, 0)`.
pub fn pos_part(v: &GridFunction) -> GridFunction {
    GridFunction::new(
        v.grid().clone(),
        v.values().iter().map(|x| x.max(0.0)).collect(),
    )
    .expect("positive part preserves validity")
}

/// Componentwise maximum, `sup(x, y) = x + (y - x)^+`.
pub fn sup2(x: &GridFunction, y: &GridFunction) -> Result<GridFunction> {
    ensure_same_grid(x.grid(), y.grid(), "sup2")?;
    GridFunction::new(
        x.grid().clone(),
        x.values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| a.max(*b))
            .collect(),
    )
}

/// Componentwise minimum, `inf(x, y) = x - (x - y)^+`.
pub fn inf2(x: &GridFunction, y: &GridFunction) -> Result<GridFunction> {
    ensure_same_grid(x.grid(), y.grid(), "inf2")?;
    GridFunction::new(
        x.grid().clone(),
        x.values()
            .iter()
            .zip(y.values())
            .map(|(a, b)| a.min(*b))
            .collect(),
    )
}

/// Exact componentwise comparison `x <= y`. No tolerance: callers that need
/// slack compare against a shifted argument or use [`leq_with_slack`].
pub fn leq(x: &GridFunction, y: &GridFunction) -> Result<bool> {
    ensure_same_grid(x.grid(), y.grid(), "leq")?;
    Ok(x.values().iter().zip(y.values()).all(|(a, b)| a <= b))
}

/// `x <= y + slack` componentwise; the slack belongs to the caller, not to
/// the order itself.
pub fn leq_with_slack(x: &GridFunction, y: &GridFunction, slack: f64) -> Result<bool> {
    ensure_same_grid(x.grid(), y.grid(), "leq_with_slack")?;
    Ok(x.values().iter().zip(y.values()).all(|(a, b)| *a <= b + slack))
}

/// Largest componentwise breach of `x <= y`, i.e. `max_i (x_i - y_i)^+`,
/// together with the node attaining it.
pub(crate) fn worst_excess(x: &[f64], y: &[f64]) -> (f64, usize) {
    let mut worst = 0.0;
    let mut node = 0;
    for (i, (a, b)) in x.iter().zip(y).enumerate() {
        let e = a - b;
        if e > worst {
            worst = e;
            node = i;
        }
    }
    (worst, node)
}

/// A closed order interval `[lower, upper]`.
#[derive(Clone, Debug)]
pub struct OrderInterval {
    lower: GridFunction,
    upper: GridFunction,
}

impl OrderInterval {
    /// Requires `lower <= upper` exactly.
    pub fn new(lower: GridFunction, upper: GridFunction) -> Result<Self> {
        if !leq(&lower, &upper)? {
            let (worst, node) = worst_excess(lower.values(), upper.values());
            return Err(Error::InvalidInput(format!(
                "order interval requires lower <= upper; breached by {worst:.3e} at node {node}"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &GridFunction {
        &self.lower
    }

    pub fn upper(&self) -> &GridFunction {
        &self.upper
    }

    pub fn contains(&self, z: &GridFunction) -> Result<bool> {
        Ok(leq(&self.lower, z)? && leq(z, &self.upper)?)
    }
}

/// Evaluation contract for an increasing map `v -> T(v)` on a fixed grid.
/// Monotonicity (`v <= w` implies `T(v) <= T(w)`) is a promise of the
/// implementor, checked by randomized property tests rather than per call.
pub trait IncreasingMap {
    fn grid(&self) -> &GridSpec;
    fn eval(&self, v: &GridFunction) -> Result<GridFunction>;
}

/// Iteration direction of the extremal engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Start at the sub-solution; the iteration is nondecreasing and its limit
    /// is the minimal fixed point in the interval.
    FromBelow,
    /// Start at the super-solution; nonincreasing, limit is the maximal fixed
    /// point.
    FromAbove,
}

impl Direction {
    fn name(self) -> &'static str {
        match self {
            Direction::FromBelow => "from-below",
            Direction::FromAbove => "from-above",
        }
    }
}

/// Tolerated drift against the monotone direction. Inner solves are inexact;
/// anything below this is floating-point noise, anything above is a hard
/// failure.
pub const MONOTONE_SLACK: f64 = 1e-13;

/// Outcome of one extremal iteration run.
#[derive(Clone, Debug)]
pub struct ExtremalReport {
    pub fixed_point: GridFunction,
    pub direction: Direction,
    /// Number of map evaluations consumed by the main iteration (the final
    /// residual audit is not counted).
    pub iterations: usize,
    /// Fixed-point residual `||y - T(y)||_inf` of the returned point.
    pub residual: f64,
    /// Sup-norm step sizes `||y_{k+1} - y_k||_inf` per iteration.
    pub step_trace: Vec<f64>,
    /// Worst observed movement against the monotone direction across all
    /// steps; anything above [`MONOTONE_SLACK`] would have aborted the run.
    pub worst_drift: f64,
}

/// Monotone (Kleene) iteration towards the minimal or maximal fixed point of
/// an increasing map on an order interval.
///
/// Entry requires `lower <= T(lower)` and `T(upper) <= upper` (both checked).
/// The iteration stops once the successive step is at most `tol` *and* the
/// fixed-point residual of the candidate is at most `tol`; the residual audit
/// guards against premature stops on slow contractions.
pub fn extremal_fixed_point(
    map: &dyn IncreasingMap,
    interval: &OrderInterval,
    direction: Direction,
    tol: f64,
    max_iter: usize,
) -> Result<ExtremalReport> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidInput("extremal_fixed_point requires tol > 0 and max_iter >= 1".into()));
    }
    ensure_same_grid(map.grid(), interval.lower().grid(), "extremal_fixed_point")?;

    // Entry checks: sub- and super-solution property of the interval ends.
    let t_lower = map.eval(interval.lower())?;
    let (excess, node) = worst_excess(interval.lower().values(), t_lower.values());
    if excess > MONOTONE_SLACK {
        return Err(Error::NotSubSolution { worst: excess, node });
    }
    let t_upper = map.eval(interval.upper())?;
    let (excess, node) = worst_excess(t_upper.values(), interval.upper().values());
    if excess > MONOTONE_SLACK {
        return Err(Error::NotSuperSolution { worst: excess, node });
    }

    let mut y = match direction {
        Direction::FromBelow => interval.lower().clone(),
        Direction::FromAbove => interval.upper().clone(),
    };
    let mut next = match direction {
        Direction::FromBelow => t_lower,
        Direction::FromAbove => t_upper,
    };

    let mut trace = Vec::new();
    let mut iterations = 0usize;
    let mut worst_drift = 0.0f64;
    loop {
        iterations += 1;
        // Audit: the iterate may only move along the monotone direction.
        let (violation, node) = match direction {
            Direction::FromBelow => worst_excess(y.values(), next.values()),
            Direction::FromAbove => worst_excess(next.values(), y.values()),
        };
        if violation > MONOTONE_SLACK {
            return Err(Error::MonotonicityViolated {
                direction: direction.name(),
                iteration: iterations,
                worst: violation,
                node,
            });
        }
        worst_drift = worst_drift.max(violation);

        let step = y.dist_sup(&next)?;
        trace.push(step);
        y = next;

        if step <= tol {
            // Residual audit with a fresh evaluation.
            let t_y = map.eval(&y)?;
            let residual = y.dist_sup(&t_y)?;
            if residual <= tol {
                return Ok(ExtremalReport {
                    fixed_point: y,
                    direction,
                    iterations,
                    residual,
                    step_trace: trace,
                    worst_drift,
                });
            }
            next = t_y;
        } else {
            next = map.eval(&y)?;
        }

        if iterations >= max_iter {
            return Err(Error::MaxIterExceeded {
                max_iter,
                last_delta: *trace.last().unwrap_or(&f64::NAN),
            });
        }
    }
}
