//! Stability experiments: the scalar sharpness counterexample, monotone
//! forcing-term perturbations, and the envelope construction for general
//! (oscillating) perturbations.
//!
//! The monotone runs realize the four one-sided limits: for a nonincreasing
//! forcing sequence both extremal solutions decrease to their limits, for a
//! nondecreasing sequence both increase. The envelope run sandwiches a
//! non-monotone sequence between its running infimum and supremum and checks
//! that the extremal solutions inherit the sandwich at every index. The
//! asymptotic statements are tested through a finite-horizon surrogate:
//! exact monotone direction plus an error-contraction factor of at least 5
//! between the first and last index.

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DualVector, GridFunction, GridSpec};
use crate::obstacles::{check_scaling, PropertyReport};
use crate::order::{
    extremal_fixed_point, worst_excess, Direction, IncreasingMap, OrderInterval,
};
use crate::qvi::{solve_extremal, ExtremalResult, QviInstance};

/// Slack for componentwise direction and sandwich checks.
const ORDER_SLACK: f64 = 1e-10;
/// Required error contraction between the first and last horizon index.
const DECAY_FACTOR: f64 = 5.0;
/// Initial errors below this are treated as already converged.
const DECAY_FLOOR: f64 = 1e-14;

// ---------------------------------------------------------------------------
// Scalar counterexample
// ---------------------------------------------------------------------------

/// Which member of the scalar family to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyVariant {
    /// The base map: `a` below the plateau, identity on `[a, b)`, `b` above.
    Base,
    /// Approximation from below: the base map evaluated at `v - 1/n`.
    LowerApprox { n: u32 },
    /// Approximation from above: the base map evaluated at `v + 1/n`.
    UpperApprox { n: u32 },
}

/// Scalar toy map on the one-node lattice `[0, 1]`. Every point of `[a, b]`
/// is a fixed point of the base map, so the minimal and maximal fixed points
/// are `a` and `b`; the shifted approximants collapse the plateau to a single
/// endpoint, which is what makes two of the four approximation directions
/// fail.
#[derive(Clone, Debug)]
pub struct ScalarToyMap {
    a: f64,
    b: f64,
    variant: ToyVariant,
    grid: GridSpec,
}

impl ScalarToyMap {
    pub fn new(a: f64, b: f64, variant: ToyVariant) -> Result<Self> {
        if !(0.0 < a && a < b && b < 1.0) {
            return Err(Error::InvalidInput(format!(
                "scalar toy map requires 0 < a < b < 1, got a = {a}, b = {b}"
            )));
        }
        match variant {
            ToyVariant::LowerApprox { n } | ToyVariant::UpperApprox { n } => {
                let shift = 1.0 / n as f64;
                if !(shift <= a && b <= 1.0 - shift) {
                    return Err(Error::InvalidInput(format!(
                        "shifted variants require 1/n <= a and b <= 1 - 1/n; n = {n} is too small"
                    )));
                }
            }
            ToyVariant::Base => {}
        }
        let grid = GridSpec::interval(3, 1.0, crate::grid::Boundary::DirichletZero)?;
        Ok(Self { a, b, variant, grid })
    }

    fn base(&self, v: f64) -> f64 {
        if v < self.a {
            self.a
        } else if v < self.b {
            v
        } else {
            self.b
        }
    }

    pub fn eval_scalar(&self, v: f64) -> f64 {
        match self.variant {
            ToyVariant::Base => self.base(v),
            ToyVariant::LowerApprox { n } => {
                let s = 1.0 / n as f64;
                if v < s {
                    self.a
                } else {
                    self.base(v - s)
                }
            }
            ToyVariant::UpperApprox { n } => {
                let s = 1.0 / n as f64;
                if v < 1.0 - s {
                    self.base(v + s)
                } else {
                    self.b
                }
            }
        }
    }
}

impl IncreasingMap for ScalarToyMap {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn eval(&self, v: &GridFunction) -> Result<GridFunction> {
        GridFunction::new(self.grid.clone(), vec![self.eval_scalar(v.values()[0])])
    }
}

/// Extremal fixed points of one shifted approximant pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleRow {
    pub n: u32,
    pub min_lower: f64,
    pub max_lower: f64,
    pub min_upper: f64,
    pub max_upper: f64,
}

/// Extremal fixed points of the scalar family, computed by the generic
/// engine on the one-node lattice.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub a: f64,
    pub b: f64,
    pub min_base: f64,
    pub max_base: f64,
    pub rows: Vec<CounterexampleRow>,
}

impl CounterexampleReport {
    /// The expected identities: the lower approximants collapse both extremal
    /// points to `a`, the upper ones to `b`, while the base map keeps the
    /// full plateau `[a, b]`.
    pub fn verified(&self) -> bool {
        self.min_base == self.a
            && self.max_base == self.b
            && self.rows.iter().all(|r| {
                r.min_lower == self.a
                    && r.max_lower == self.a
                    && r.min_upper == self.b
                    && r.max_upper == self.b
            })
    }
}

fn toy_extremal(map: &ScalarToyMap, max_iter: usize) -> Result<(f64, f64)> {
    let interval = OrderInterval::new(
        GridFunction::zeros(map.grid().clone()),
        GridFunction::constant(map.grid().clone(), 1.0)?,
    )?;
    let lo = extremal_fixed_point(map, &interval, Direction::FromBelow, 1e-14, max_iter)?;
    let hi = extremal_fixed_point(map, &interval, Direction::FromAbove, 1e-14, max_iter)?;
    Ok((lo.fixed_point.values()[0], hi.fixed_point.values()[0]))
}

/// Computes the extremal fixed points of the base map and of both shifted
/// approximants for each `n`. The shifted iterations walk the plateau in
/// steps of `1/n`, so the iteration budget grows linearly with `n`.
pub fn run_scalar_counterexample(a: f64, b: f64, n_list: &[u32]) -> Result<CounterexampleReport> {
    let base = ScalarToyMap::new(a, b, ToyVariant::Base)?;
    let (min_base, max_base) = toy_extremal(&base, 100)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let budget = 10 * n as usize + 100;
        let lower = ScalarToyMap::new(a, b, ToyVariant::LowerApprox { n })?;
        let upper = ScalarToyMap::new(a, b, ToyVariant::UpperApprox { n })?;
        let (min_lower, max_lower) = toy_extremal(&lower, budget)?;
        let (min_upper, max_upper) = toy_extremal(&upper, budget)?;
        rows.push(CounterexampleRow { n, min_lower, max_lower, min_upper, max_upper });
    }
    Ok(CounterexampleReport { a, b, min_base, max_base, rows })
}

// ---------------------------------------------------------------------------
// Forcing-term perturbation plans
// ---------------------------------------------------------------------------

/// Direction of the forcing sequence relative to its limit `f*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceRule {
    /// `f_n = f* (1 + delta_n)`, nonincreasing towards `f*`.
    Decreasing,
    /// `f_n = f* (1 - delta_n)`, nondecreasing towards `f*`.
    Increasing,
    /// `f_n = f* (1 + (-1)^n delta_n)`, converging without monotonicity.
    Oscillating,
}

/// A finite-horizon forcing perturbation `f_n -> f*` with harmonic decay
/// `delta_n = scale / (n + offset)`. Construction validates the band
/// `nu <= f_n <= cap` over the whole horizon.
#[derive(Clone, Debug)]
pub struct PerturbationPlan {
    f_star: DualVector,
    nu: f64,
    cap: DualVector,
    rule: SequenceRule,
    delta_scale: f64,
    delta_offset: u32,
    horizon: usize,
}

impl PerturbationPlan {
    pub fn new(
        f_star: DualVector,
        nu: f64,
        cap: DualVector,
        rule: SequenceRule,
        delta_scale: f64,
        delta_offset: u32,
        horizon: usize,
    ) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::InvalidInput("perturbation plans require nu > 0".into()));
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("perturbation horizon must be at least 1".into()));
        }
        if !(delta_scale >= 0.0) || !delta_scale.is_finite() {
            return Err(Error::InvalidInput("delta_scale must be a finite nonnegative real".into()));
        }
        if let Some(i) = f_star.values().iter().position(|&v| v < nu) {
            return Err(Error::InvalidInput(format!(
                "f* must stay above nu = {nu} everywhere (node {i})"
            )));
        }
        let plan = Self { f_star, nu, cap, rule, delta_scale, delta_offset, horizon };
        for n in 1..=horizon {
            let f_n = plan.forcing_at(n)?;
            if let Some(i) = f_n.values().iter().position(|&v| v < plan.nu) {
                return Err(Error::InvalidInput(format!(
                    "plan violates f_n >= nu at n = {n}, node {i}: the band 0 < nu <= f_n is mandatory"
                )));
            }
            if !f_n.leq(&plan.cap)? {
                return Err(Error::InvalidInput(format!("plan breaches the cap F at n = {n}")));
            }
        }
        Ok(plan)
    }

    pub fn delta(&self, n: usize) -> f64 {
        self.delta_scale / (n as f64 + self.delta_offset as f64)
    }

    pub fn rule(&self) -> SequenceRule {
        self.rule
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn f_star(&self) -> &DualVector {
        &self.f_star
    }

    pub fn cap(&self) -> &DualVector {
        &self.cap
    }

    pub fn forcing_at(&self, n: usize) -> Result<DualVector> {
        let d = self.delta(n);
        let factor = match self.rule {
            SequenceRule::Decreasing => 1.0 + d,
            SequenceRule::Increasing => 1.0 - d,
            SequenceRule::Oscillating => {
                if n % 2 == 1 {
                    1.0 - d
                } else {
                    1.0 + d
                }
            }
        };
        Ok(self.f_star.scaled(factor))
    }
}

/// One row of the error-versus-index table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityRow {
    pub n: usize,
    pub delta: f64,
    /// `||m(f_n) - m(f*)||` in the discrete H norm.
    pub err_min_h: f64,
    pub err_min_sup: f64,
    pub err_max_h: f64,
    pub err_max_sup: f64,
}

/// Decay verdict for one error column.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayCheck {
    pub initial: f64,
    pub final_: f64,
    pub ok: bool,
}

fn decay_check(initial: f64, final_: f64) -> DecayCheck {
    let ok = initial <= DECAY_FLOOR || final_ <= initial / DECAY_FACTOR;
    DecayCheck { initial, final_, ok }
}

/// Report of a monotone perturbation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rule: SequenceRule,
    pub rows: Vec<StabilityRow>,
    /// Scaling-hypothesis probe of the obstacle map (`lambda Phi(y) >= Phi(lambda y)`).
    pub scaling_check: PropertyReport,
    pub decay_min_h: DecayCheck,
    pub decay_min_sup: DecayCheck,
    pub decay_max_h: DecayCheck,
    pub decay_max_sup: DecayCheck,
}

impl StabilityReport {
    pub fn decay_ok(&self) -> bool {
        self.decay_min_h.ok && self.decay_min_sup.ok && self.decay_max_h.ok && self.decay_max_sup.ok
    }
}

fn solve_sequence(
    template: &QviInstance,
    plan: &PerturbationPlan,
) -> Result<(ExtremalResult, Vec<ExtremalResult>)> {
    debug!("perturbation sequence: {:?} rule over {} indices", plan.rule(), plan.horizon());
    let reference = solve_extremal(&template.with_forcing_and_cap(plan.f_star().clone(), plan.cap().clone())?)?;
    let runs: Vec<Result<ExtremalResult>> = (1..=plan.horizon())
        .into_par_iter()
        .map(|n| {
            let f_n = plan.forcing_at(n)?;
            solve_extremal(&template.with_forcing_and_cap(f_n, plan.cap().clone())?)
        })
        .collect();
    let mut results = Vec::with_capacity(runs.len());
    for r in runs {
        results.push(r?);
    }
    Ok((reference, results))
}

fn error_rows(
    plan: &PerturbationPlan,
    reference: &ExtremalResult,
    results: &[ExtremalResult],
) -> Result<Vec<StabilityRow>> {
    results
        .iter()
        .enumerate()
        .map(|(idx, r)| {
            let n = idx + 1;
            Ok(StabilityRow {
                n,
                delta: plan.delta(n),
                err_min_h: r.y_min.sub(&reference.y_min)?.norm_h(),
                err_min_sup: r.y_min.dist_sup(&reference.y_min)?,
                err_max_h: r.y_max.sub(&reference.y_max)?.norm_h(),
                err_max_sup: r.y_max.dist_sup(&reference.y_max)?,
            })
        })
        .collect()
}

fn direction_violation(prev: &GridFunction, next: &GridFunction, rule: SequenceRule) -> (f64, usize) {
    match rule {
        // decreasing forcing: solutions must not increase from n to n+1
        SequenceRule::Decreasing => worst_excess(next.values(), prev.values()),
        SequenceRule::Increasing => worst_excess(prev.values(), next.values()),
        SequenceRule::Oscillating => (0.0, 0),
    }
}

/// Runs a monotone perturbation plan: solves the extremal pair along the
/// forcing sequence and checks the lemma-predicted componentwise direction
/// of both solution sequences (including against the reference limit).
/// Decay of the errors is recorded in the report, not raised.
pub fn run_monotone_perturbation(
    template: &QviInstance,
    plan: &PerturbationPlan,
    seed: u64,
) -> Result<StabilityReport> {
    if plan.rule() == SequenceRule::Oscillating {
        return Err(Error::InvalidInput(
            "run_monotone_perturbation requires a monotone plan; use run_envelope_perturbation".into(),
        ));
    }
    // The one-sided lemmas for the outer approximations lean on the scaling
    // hypothesis of the obstacle map; probe it before trusting directions.
    let scaling_check = check_scaling(template.obstacle(), &[1.5, 2.0, 4.0], 50, seed)?;
    if !scaling_check.passed() {
        return Err(Error::InvalidInput(format!(
            "obstacle map fails the scaling hypothesis (worst breach {:.3e})",
            scaling_check.worst
        )));
    }

    let (reference, results) = solve_sequence(template, plan)?;

    // Componentwise monotone direction along the sequence and against the limit.
    for idx in 0..results.len() {
        let n = idx + 1;
        let (seq_breach, node) = if idx + 1 < results.len() {
            let min_breach = direction_violation(&results[idx].y_min, &results[idx + 1].y_min, plan.rule());
            let max_breach = direction_violation(&results[idx].y_max, &results[idx + 1].y_max, plan.rule());
            if min_breach.0 >= max_breach.0 {
                min_breach
            } else {
                max_breach
            }
        } else {
            (0.0, 0)
        };
        if seq_breach > ORDER_SLACK {
            return Err(Error::DirectionViolated { n, worst: seq_breach, node });
        }
        // the sequence brackets the limit from the correct side
        let (lim_breach, node) = match plan.rule() {
            SequenceRule::Decreasing => {
                let a = worst_excess(reference.y_min.values(), results[idx].y_min.values());
                let b = worst_excess(reference.y_max.values(), results[idx].y_max.values());
                if a.0 >= b.0 {
                    a
                } else {
                    b
                }
            }
            SequenceRule::Increasing => {
                let a = worst_excess(results[idx].y_min.values(), reference.y_min.values());
                let b = worst_excess(results[idx].y_max.values(), reference.y_max.values());
                if a.0 >= b.0 {
                    a
                } else {
                    b
                }
            }
            SequenceRule::Oscillating => unreachable!(),
        };
        if lim_breach > ORDER_SLACK {
            return Err(Error::DirectionViolated { n, worst: lim_breach, node });
        }
    }

    let rows = error_rows(plan, &reference, &results)?;
    let first = rows.first().expect("horizon >= 1");
    let last = rows.last().expect("horizon >= 1");
    Ok(StabilityReport {
        rule: plan.rule(),
        decay_min_h: decay_check(first.err_min_h, last.err_min_h),
        decay_min_sup: decay_check(first.err_min_sup, last.err_min_sup),
        decay_max_h: decay_check(first.err_max_h, last.err_max_h),
        decay_max_sup: decay_check(first.err_max_sup, last.err_max_sup),
        rows,
        scaling_check,
    })
}

/// One row of the envelope run: errors of the raw sequence plus the worst
/// sandwich breaches at this index (nonpositive is clean).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub n: usize,
    pub delta: f64,
    pub err_min_h: f64,
    pub err_min_sup: f64,
    pub err_max_h: f64,
    pub err_max_sup: f64,
    pub sandwich_breach_min: f64,
    pub sandwich_breach_max: f64,
}

/// Report of an envelope (oscillating) perturbation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub rows: Vec<EnvelopeRow>,
    pub decay_min_h: DecayCheck,
    pub decay_min_sup: DecayCheck,
    pub decay_max_h: DecayCheck,
    pub decay_max_sup: DecayCheck,
}

impl EnvelopeReport {
    pub fn decay_ok(&self) -> bool {
        self.decay_min_h.ok && self.decay_min_sup.ok && self.decay_max_h.ok && self.decay_max_sup.ok
    }
}

/// Runs an oscillating plan through its envelope sequences: the running
/// infimum and supremum of the forcing tail are monotone, so their extremal
/// solutions sandwich the raw sequence; the sandwich is verified
/// componentwise at every index together with the interval ends `0` and
/// `S(F, +inf)`.
pub fn run_envelope_perturbation(
    template: &QviInstance,
    plan: &PerturbationPlan,
) -> Result<EnvelopeReport> {
    if plan.rule() != SequenceRule::Oscillating {
        return Err(Error::InvalidInput("run_envelope_perturbation requires an oscillating plan".into()));
    }
    let horizon = plan.horizon();
    let forcings: Vec<DualVector> = (1..=horizon)
        .map(|n| plan.forcing_at(n))
        .collect::<Result<_>>()?;

    // componentwise running envelopes over the tail m >= n
    let n_nodes = forcings[0].len();
    let mut lower_env: Vec<Vec<f64>> = vec![vec![0.0; n_nodes]; horizon];
    let mut upper_env: Vec<Vec<f64>> = vec![vec![0.0; n_nodes]; horizon];
    for idx in (0..horizon).rev() {
        for j in 0..n_nodes {
            let v = forcings[idx].values()[j];
            if idx + 1 == horizon {
                lower_env[idx][j] = v;
                upper_env[idx][j] = v;
            } else {
                lower_env[idx][j] = v.min(lower_env[idx + 1][j]);
                upper_env[idx][j] = v.max(upper_env[idx + 1][j]);
            }
        }
    }
    // exhaustive envelope correctness over the horizon
    for idx in 0..horizon {
        for m in idx..horizon {
            for j in 0..n_nodes {
                let v = forcings[m].values()[j];
                debug_assert!(lower_env[idx][j] <= v && v <= upper_env[idx][j]);
            }
        }
        if idx + 1 < horizon {
            for j in 0..n_nodes {
                debug_assert!(lower_env[idx][j] <= lower_env[idx + 1][j]);
                debug_assert!(upper_env[idx][j] >= upper_env[idx + 1][j]);
            }
        }
    }

    let grid = template.grid().clone();
    let reference = solve_extremal(&template.with_forcing_and_cap(plan.f_star().clone(), plan.cap().clone())?)?;

    #[allow(clippy::type_complexity)]
    let runs: Vec<Result<(ExtremalResult, ExtremalResult, ExtremalResult)>> = (0..horizon)
        .into_par_iter()
        .map(|idx| {
            let raw = solve_extremal(&template.with_forcing_and_cap(forcings[idx].clone(), plan.cap().clone())?)?;
            let low = solve_extremal(&template.with_forcing_and_cap(
                DualVector::new(grid.clone(), lower_env[idx].clone())?,
                plan.cap().clone(),
            )?)?;
            let high = solve_extremal(&template.with_forcing_and_cap(
                DualVector::new(grid.clone(), upper_env[idx].clone())?,
                plan.cap().clone(),
            )?)?;
            Ok((raw, low, high))
        })
        .collect();

    let mut rows = Vec::with_capacity(horizon);
    let mut prev_low_min: Option<GridFunction> = None;
    let mut prev_high_max: Option<GridFunction> = None;
    for (idx, run) in runs.into_iter().enumerate() {
        let n = idx + 1;
        let (raw, low, high) = run?;

        // monotone response of the envelope solutions: the lower envelope
        // grows, so its minimal solutions climb; the upper envelope shrinks,
        // so its maximal solutions descend
        if let Some(prev) = &prev_low_min {
            let (w, node) = worst_excess(prev.values(), low.y_min.values());
            if w > ORDER_SLACK {
                return Err(Error::DirectionViolated { n, worst: w, node });
            }
        }
        if let Some(prev) = &prev_high_max {
            let (w, node) = worst_excess(high.y_max.values(), prev.values());
            if w > ORDER_SLACK {
                return Err(Error::DirectionViolated { n, worst: w, node });
            }
        }
        prev_low_min = Some(low.y_min.clone());
        prev_high_max = Some(high.y_max.clone());

        // 0 <= m(f-hat) <= m(f_n) <= m(f-check) <= upper end, same for M
        let zero = GridFunction::zeros(grid.clone());
        let checks_min: [(&GridFunction, &GridFunction); 4] = [
            (&zero, &low.y_min),
            (&low.y_min, &raw.y_min),
            (&raw.y_min, &high.y_min),
            (&high.y_min, raw.interval.upper()),
        ];
        let mut breach_min = f64::NEG_INFINITY;
        for (a, b) in checks_min {
            let (w, _) = worst_excess(a.values(), b.values());
            breach_min = breach_min.max(w);
        }
        if breach_min > ORDER_SLACK {
            return Err(Error::SandwichViolated { n, which: "minimal solutions", worst: breach_min });
        }
        let checks_max: [(&GridFunction, &GridFunction); 4] = [
            (&zero, &low.y_max),
            (&low.y_max, &raw.y_max),
            (&raw.y_max, &high.y_max),
            (&high.y_max, raw.interval.upper()),
        ];
        let mut breach_max = f64::NEG_INFINITY;
        for (a, b) in checks_max {
            let (w, _) = worst_excess(a.values(), b.values());
            breach_max = breach_max.max(w);
        }
        if breach_max > ORDER_SLACK {
            return Err(Error::SandwichViolated { n, which: "maximal solutions", worst: breach_max });
        }

        rows.push(EnvelopeRow {
            n,
            delta: plan.delta(n),
            err_min_h: raw.y_min.sub(&reference.y_min)?.norm_h(),
            err_min_sup: raw.y_min.dist_sup(&reference.y_min)?,
            err_max_h: raw.y_max.sub(&reference.y_max)?.norm_h(),
            err_max_sup: raw.y_max.dist_sup(&reference.y_max)?,
            sandwich_breach_min: breach_min,
            sandwich_breach_max: breach_max,
        });
    }

    let first = rows.first().expect("horizon >= 1");
    let last = rows.last().expect("horizon >= 1");
    Ok(EnvelopeReport {
        decay_min_h: decay_check(first.err_min_h, last.err_min_h),
        decay_min_sup: decay_check(first.err_min_sup, last.err_min_sup),
        decay_max_h: decay_check(first.err_max_h, last.err_max_h),
        decay_max_sup: decay_check(first.err_max_sup, last.err_max_sup),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{assemble, OperatorSpec};
    use crate::grid::Boundary;
    use crate::obstacles::{CostFunction, ImpulseObstacle, ImpulseObstacleSpec};
    use crate::qvi::{ObstacleKind, QviParams};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn base_map_plateau_endpoints_are_exact() {
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..20 {
            let a = rng.gen_range(0.05..0.45);
            let b = rng.gen_range(a + 0.05..0.95);
            let map = ScalarToyMap::new(a, b, ToyVariant::Base).unwrap();
            let (lo, hi) = toy_extremal(&map, 100).unwrap();
            assert_eq!(lo, a);
            assert_eq!(hi, b);
        }
    }

    #[test]
    fn counterexample_reproduces_the_collapse() {
        let rep = run_scalar_counterexample(0.25, 0.75, &[10, 100, 1000]).unwrap();
        assert!(rep.verified());
        for row in &rep.rows {
            // sharpness: the lower approximants lose the upper endpoint and
            // the upper approximants lose the lower one
            assert_eq!(row.max_lower, 0.25);
            assert_ne!(row.max_lower, rep.max_base);
            assert_eq!(row.min_upper, 0.75);
            assert_ne!(row.min_upper, rep.min_base);
        }
    }

    #[test]
    fn degenerate_plateau_is_rejected() {
        assert!(ScalarToyMap::new(0.5, 0.5, ToyVariant::Base).is_err());
        assert!(ScalarToyMap::new(0.25, 0.75, ToyVariant::LowerApprox { n: 2 }).is_err());
    }

    fn impulse_template(n: usize, tol: f64) -> QviInstance {
        let grid = GridSpec::interval(n, 1.0, Boundary::Neumann).unwrap();
        let op = assemble(&OperatorSpec::laplacian_with_reaction(1.0, 1.0), &grid).unwrap();
        let obstacle = ObstacleKind::Impulse(
            ImpulseObstacle::new(
                ImpulseObstacleSpec { k: 1.0, cost: CostFunction::default() },
                grid.clone(),
            )
            .unwrap(),
        );
        let f_star = DualVector::constant(grid.clone(), 1.0).unwrap();
        let cap = f_star.scaled(10.0);
        QviInstance::new(op, obstacle, f_star, cap, QviParams::with_tol(tol)).unwrap()
    }

    fn plan(template: &QviInstance, rule: SequenceRule, offset: u32, horizon: usize) -> PerturbationPlan {
        PerturbationPlan::new(
            template.forcing().clone(),
            0.1,
            template.forcing_cap().clone(),
            rule,
            1.0,
            offset,
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn adversarial_plan_is_rejected_at_construction() {
        let template = impulse_template(12, 1e-9);
        // f_1 = f* (1 - 1/1) = 0 < nu
        let err = PerturbationPlan::new(
            template.forcing().clone(),
            0.1,
            template.forcing_cap().clone(),
            SequenceRule::Increasing,
            1.0,
            0,
            5,
        );
        assert!(err.is_err());
    }

    #[test]
    fn zero_delta_plan_gives_exact_zero_errors() {
        let template = impulse_template(16, 1e-10);
        let plan = PerturbationPlan::new(
            template.forcing().clone(),
            0.1,
            template.forcing_cap().clone(),
            SequenceRule::Decreasing,
            0.0,
            0,
            3,
        )
        .unwrap();
        let rep = run_monotone_perturbation(&template, &plan, 7).unwrap();
        for row in &rep.rows {
            assert_eq!(row.err_min_sup, 0.0);
            assert_eq!(row.err_max_sup, 0.0);
        }
        assert!(rep.decay_ok());
    }

    #[test]
    fn decreasing_and_increasing_plans_converge_monotonically() {
        let template = impulse_template(24, 1e-10);
        let rep = run_monotone_perturbation(&template, &plan(&template, SequenceRule::Decreasing, 0, 12), 7)
            .unwrap();
        assert!(rep.decay_ok(), "decreasing decay: {:?}", rep.rows.last());
        assert!(rep.scaling_check.passed());

        let rep = run_monotone_perturbation(&template, &plan(&template, SequenceRule::Increasing, 1, 12), 7)
            .unwrap();
        assert!(rep.decay_ok(), "increasing decay: {:?}", rep.rows.last());
    }

    #[test]
    fn envelope_sandwich_holds_on_oscillating_plans() {
        let template = impulse_template(24, 1e-10);
        let rep = run_envelope_perturbation(&template, &plan(&template, SequenceRule::Oscillating, 1, 10))
            .unwrap();
        assert!(rep.decay_ok());
        for row in &rep.rows {
            assert!(row.sandwich_breach_min <= ORDER_SLACK);
            assert!(row.sandwich_breach_max <= ORDER_SLACK);
        }
        // constant sequence: envelopes coincide with the sequence
        let const_plan = PerturbationPlan::new(
            template.forcing().clone(),
            0.1,
            template.forcing_cap().clone(),
            SequenceRule::Oscillating,
            0.0,
            0,
            4,
        )
        .unwrap();
        let rep = run_envelope_perturbation(&template, &const_plan).unwrap();
        for row in &rep.rows {
            assert_eq!(row.err_min_sup, 0.0);
        }
    }

    #[test]
    fn monotone_runner_rejects_oscillating_plans() {
        let template = impulse_template(12, 1e-9);
        let p = plan(&template, SequenceRule::Oscillating, 1, 4);
        assert!(run_monotone_perturbation(&template, &p, 1).is_err());
        let p = plan(&template, SequenceRule::Decreasing, 0, 4);
        assert!(run_envelope_perturbation(&template, &p).is_err());
    }
}
