//! Obstacle maps `Phi` for the quasi-variational constraint `y <= Phi(y)`.
//!
//! Two families are implemented: the impulse-control infimum form
//! `Phi(y)(x) = k + min over nonnegative offsets xi of (c0(xi) + y(x + xi))`,
//! and the coupled form `Phi(v) = L z(v)` where the auxiliary state `z(v)`
//! solves the nonlinear system `B z + G(L z, v) = g` on the companion
//! all-nodes grid. Both map nonnegative inputs to values above a positive
//! floor and are increasing, which is what the fixed-point machinery needs;
//! the property checks at the bottom probe exactly those assumptions.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::elliptic::{assemble, Coefficient, DiscreteOperator, Nonlinearity, OperatorSpec};
use crate::error::{Error, Result};
use crate::grid::{ensure_same_grid, Boundary, GridFunction, GridSpec};
use crate::order::pos_part;

/// Evaluation contract for an obstacle map on a fixed grid.
pub trait ObstacleMap {
    fn grid(&self) -> &GridSpec;
    fn evaluate(&self, v: &GridFunction) -> Result<GridFunction>;
}

/// Sublinear proportional cost `c0(xi) = alpha * |xi|^gamma` with
/// `c0(0) = 0`, nondecreasing in the offset length.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostFunction {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for CostFunction {
    fn default() -> Self {
        CostFunction { alpha: 1.0, gamma: 0.5 }
    }
}

impl CostFunction {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidInput("cost alpha must be a finite nonnegative real".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidInput("cost gamma must lie in (0, 1]".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, offset_len: f64) -> f64 {
        if offset_len == 0.0 {
            0.0
        } else {
            self.alpha * offset_len.powf(self.gamma)
        }
    }
}

/// Impulse-control obstacle: fixed transaction cost `k` plus the cheapest
/// nonnegative shift.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseObstacleSpec {
    pub k: f64,
    pub cost: CostFunction,
}

impl ImpulseObstacleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) || !self.k.is_finite() {
            return Err(Error::InvalidInput("impulse obstacle requires k > 0".into()));
        }
        self.cost.validate()
    }
}

/// Evaluates the impulse obstacle by direct minimization over all grid nodes
/// reachable by a componentwise-nonnegative offset (O(n^2)).
pub fn phi_impulse(y: &GridFunction, spec: &ImpulseObstacleSpec) -> Result<GridFunction> {
    spec.validate()?;
    let grid = y.grid();
    let n = y.len();
    let yv = y.values();
    let mut out = vec![0.0; n];
    match grid.dim() {
        1 => {
            // suffix scan: nodes with larger index lie at nonnegative offsets
            let h = grid.spacing(0);
            for i in 0..n {
                let mut best = f64::INFINITY;
                for j in i..n {
                    let c = spec.cost.eval((j - i) as f64 * h) + yv[j];
                    if c < best {
                        best = c;
                    }
                }
                out[i] = spec.k + best;
            }
        }
        _ => {
            let m = grid.active_per_axis();
            let hx = grid.spacing(0);
            let hy = grid.spacing(1);
            for i in 0..n {
                let (ix, iy) = (i % m, i / m);
                let mut best = f64::INFINITY;
                for jy in iy..m {
                    let dy = (jy - iy) as f64 * hy;
                    for jx in ix..m {
                        let dx = (jx - ix) as f64 * hx;
                        let c = spec.cost.eval((dx * dx + dy * dy).sqrt()) + yv[jy * m + jx];
                        if c < best {
                            best = c;
                        }
                    }
                }
                out[i] = spec.k + best;
            }
        }
    }
    GridFunction::new(grid.clone(), out)
}

/// An impulse obstacle bound to a grid.
#[derive(Clone, Debug)]
pub struct ImpulseObstacle {
    spec: ImpulseObstacleSpec,
    grid: GridSpec,
}

impl ImpulseObstacle {
    pub fn new(spec: ImpulseObstacleSpec, grid: GridSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, grid })
    }

    pub fn spec(&self) -> &ImpulseObstacleSpec {
        &self.spec
    }
}

impl ObstacleMap for ImpulseObstacle {
    fn grid(&self) -> &GridSpec {
        &self.grid
    }
    fn evaluate(&self, v: &GridFunction) -> Result<GridFunction> {
        ensure_same_grid(&self.grid, v.grid(), "impulse obstacle")?;
        phi_impulse(v, &self.spec)
    }
}

/// Gap nonlinearity of the coupled obstacle, evaluated pointwise at
/// `gap = (L z)_i - v_i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GVariant {
    /// `G(phi, v) = (phi - v)^+`.
    PosPartGap,
    /// Piecewise-linear thermoforming heat exchange:
    /// `g(x) = -1` for `x <= 0`, `x - 1` for `0 < x <= 1`, `0` for `x > 1`.
    ThermoformingG,
    /// `G(phi, v) = -(phi - v)^+`: reverses the coupling sign and breaks the
    /// monotonicity assumptions. Diagnostic negative control only.
    NegatedPosPartGap,
}

impl GVariant {
    #[inline]
    pub fn eval(self, gap: f64) -> f64 {
        match self {
            GVariant::PosPartGap => gap.max(0.0),
            GVariant::ThermoformingG => {
                if gap <= 0.0 {
                    -1.0
                } else if gap <= 1.0 {
                    gap - 1.0
                } else {
                    0.0
                }
            }
            GVariant::NegatedPosPartGap => -gap.max(0.0),
        }
    }

    /// Derivative with respect to the gap (piecewise constant).
    #[inline]
    fn slope(self, gap: f64) -> f64 {
        match self {
            GVariant::PosPartGap => {
                if gap > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            GVariant::ThermoformingG => {
                if gap > 0.0 && gap <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            GVariant::NegatedPosPartGap => {
                if gap > 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Inner nonlinear solver of the coupled obstacle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolver {
    /// `z_{m+1} = (1 - d) z_m + d B^{-1}(g - G(L z_m, v))`; the default.
    DampedFixedPoint { damping: f64 },
    /// Semismooth Newton with dense linear algebra; small-scale cross-check.
    Newton,
}

impl Default for InnerSolver {
    fn default() -> Self {
        InnerSolver::DampedFixedPoint { damping: 0.5 }
    }
}

/// Declarative description of the coupled VI-PDE obstacle.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupledObstacleSpec {
    /// Operator of the auxiliary PDE, assembled on the companion Neumann grid.
    pub b_spec: OperatorSpec,
    pub g_variant: GVariant,
    /// Slope field of the affine map `L z = k_field * z + nu_offset`, `>= 0`.
    pub k_field: Coefficient,
    /// Offset field of `L`, `>= nu_floor` everywhere.
    pub nu_offset: Coefficient,
    /// Positive floor `nu` with `L(0) >= nu > 0`.
    pub nu_floor: f64,
    /// Nonnegative right-hand side of the auxiliary PDE.
    pub g_rhs: Coefficient,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    #[serde(default)]
    pub solver: InnerSolver,
}

/// A coupled obstacle bound to the VI grid. The auxiliary state lives on the
/// companion Neumann grid (all nodes); inputs on a Dirichlet VI grid are
/// extended by zero before entering the coupling term and the resulting
/// `L z` is restricted back to the active nodes.
#[derive(Clone, Debug)]
pub struct CoupledObstacle {
    vi_grid: GridSpec,
    state_grid: GridSpec,
    b_op: DiscreteOperator,
    g_variant: GVariant,
    k_field: Vec<f64>,
    nu_offset: Vec<f64>,
    nu_floor: f64,
    g_rhs: Vec<f64>,
    inner_tol: f64,
    inner_max_iter: usize,
    solver: InnerSolver,
}

/// `Phi(v)` together with the auxiliary state that produced it.
#[derive(Clone, Debug)]
pub struct CoupledObstacleResult {
    /// `Phi(v) = (L z)|_{VI grid}`.
    pub phi: GridFunction,
    /// Auxiliary state on the companion Neumann grid.
    pub z: GridFunction,
    pub inner_iterations: usize,
    pub inner_residual: f64,
}

impl CoupledObstacle {
    pub fn new(spec: &CoupledObstacleSpec, vi_grid: GridSpec) -> Result<Self> {
        let state_grid = vi_grid.companion_neumann();
        if state_grid.boundary() != Boundary::Neumann {
            return Err(Error::InvalidInput("coupled obstacle state grid must be Neumann".into()));
        }
        if spec.b_spec.nonlinearity != Nonlinearity::None {
            return Err(Error::InvalidInput("the auxiliary operator B must be linear".into()));
        }
        let b_op = assemble(&spec.b_spec, &state_grid)?;
        let k_field = spec.k_field.sample(&state_grid)?;
        if let Some(i) = k_field.iter().position(|&k| k < 0.0) {
            return Err(Error::InvalidInput(format!("L slope field must be nonnegative, node {i}")));
        }
        if !(spec.nu_floor > 0.0) {
            return Err(Error::InvalidInput("coupled obstacle requires nu_floor > 0".into()));
        }
        let nu_offset = spec.nu_offset.sample(&state_grid)?;
        if let Some(i) = nu_offset.iter().position(|&v| v < spec.nu_floor) {
            return Err(Error::InvalidInput(format!(
                "L offset must dominate nu_floor = {}, breached at node {i}",
                spec.nu_floor
            )));
        }
        let g_rhs = spec.g_rhs.sample(&state_grid)?;
        if let Some(i) = g_rhs.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidInput(format!("g_rhs must be nonnegative, node {i}")));
        }
        if !(spec.inner_tol > 0.0) || spec.inner_max_iter == 0 {
            return Err(Error::InvalidInput("inner_tol must be > 0 and inner_max_iter >= 1".into()));
        }
        if let InnerSolver::DampedFixedPoint { damping } = spec.solver {
            if !(damping > 0.0 && damping <= 1.0) {
                return Err(Error::InvalidInput("damping must lie in (0, 1]".into()));
            }
        }
        Ok(Self {
            vi_grid,
            state_grid,
            b_op,
            g_variant: spec.g_variant,
            k_field,
            nu_offset,
            nu_floor: spec.nu_floor,
            g_rhs,
            inner_tol: spec.inner_tol,
            inner_max_iter: spec.inner_max_iter,
            solver: spec.solver,
        })
    }

    pub fn state_grid(&self) -> &GridSpec {
        &self.state_grid
    }

    pub fn nu_floor(&self) -> f64 {
        self.nu_floor
    }

    fn l_apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.k_field)
            .zip(&self.nu_offset)
            .map(|((z, k), nu)| k * z + nu)
            .collect()
    }

    /// Extends a VI-grid function to the state grid (zero on the eliminated
    /// Dirichlet ring).
    fn inject(&self, v: &GridFunction) -> Vec<f64> {
        let mut full = vec![0.0; self.state_grid.len()];
        for (i, val) in v.values().iter().enumerate() {
            full[self.vi_grid.index_in_companion(i)] = *val;
        }
        full
    }

    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        (0..self.vi_grid.len())
            .map(|i| full[self.vi_grid.index_in_companion(i)])
            .collect()
    }

    fn coupling(&self, z: &[f64], w: &[f64]) -> Vec<f64> {
        let lz = self.l_apply(z);
        lz.iter()
            .zip(w)
            .map(|(phi, v)| self.g_variant.eval(phi - v))
            .collect()
    }

    fn residual(&self, z: &[f64], w: &[f64]) -> f64 {
        let mut bz = vec![0.0; z.len()];
        self.b_op.apply_slice(z, &mut bz);
        let g = self.coupling(z, w);
        bz.iter()
            .zip(&g)
            .zip(&self.g_rhs)
            .fold(0.0f64, |m, ((b, g), rhs)| m.max((b + g - rhs).abs()))
    }

    fn solve_state(&self, w: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
        // Inner linear solves run essentially to machine precision (direct in
        // 1D); the obstacle must be reproducible well below the monotonicity
        // audit slack of the outer iteration. The residual audit carries an
        // fp floor: ||B z|| amplifies rounding by the stencil magnitude, so
        // residuals below that scale are noise.
        const LIN_TOL: f64 = 1e-13;
        let n = self.state_grid.len();
        let g_sup = self.g_rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let res_floor = |z: &[f64]| {
            let z_sup = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            32.0 * f64::EPSILON * self.b_op.lipschitz_sup() * (1.0 + z_sup)
        };
        let target = self.inner_tol * (1.0 + g_sup);
        match self.solver {
            InnerSolver::DampedFixedPoint { damping } => {
                let mut z = self.b_op.solve_linear(&self.g_rhs, LIN_TOL)?;
                for m in 1..=self.inner_max_iter {
                    let g = self.coupling(&z, w);
                    let rhs: Vec<f64> = self.g_rhs.iter().zip(&g).map(|(r, g)| r - g).collect();
                    let z_raw = self.b_op.solve_linear(&rhs, LIN_TOL)?;
                    let mut delta = 0.0f64;
                    for i in 0..n {
                        let next = (1.0 - damping) * z[i] + damping * z_raw[i];
                        delta = delta.max((next - z[i]).abs());
                        z[i] = next;
                    }
                    if !delta.is_finite() {
                        return Err(Error::InnerSolveDiverged("fixed-point step became non-finite".into()));
                    }
                    if delta <= self.inner_tol * (1.0 + z.iter().fold(0.0f64, |a, v| a.max(v.abs()))) {
                        let res = self.residual(&z, w);
                        if res <= target + res_floor(&z) {
                            return Ok((z, m, res));
                        }
                    }
                }
                Err(Error::InnerSolveDiverged(format!(
                    "damped fixed point did not converge in {} iterations",
                    self.inner_max_iter
                )))
            }
            InnerSolver::Newton => {
                if n > 1500 {
                    return Err(Error::InvalidInput(
                        "the Newton cross-check solver uses dense linear algebra; use the fixed-point solver above n = 1500".into(),
                    ));
                }
                let b_dense = self.b_op.to_dense();
                let mut z = self.b_op.solve_linear(&self.g_rhs, LIN_TOL)?;
                let mut res = self.residual(&z, w);
                for m in 1..=self.inner_max_iter {
                    if res <= target + res_floor(&z) {
                        return Ok((z, m, res));
                    }
                    let lz = self.l_apply(&z);
                    let mut jac = b_dense.clone();
                    for i in 0..n {
                        jac[(i, i)] += self.k_field[i] * self.g_variant.slope(lz[i] - w[i]);
                    }
                    let mut rvec = vec![0.0; n];
                    let mut bz = vec![0.0; n];
                    self.b_op.apply_slice(&z, &mut bz);
                    let g = self.coupling(&z, w);
                    for i in 0..n {
                        rvec[i] = bz[i] + g[i] - self.g_rhs[i];
                    }
                    let step = jac
                        .lu()
                        .solve(&nalgebra::DVector::from_vec(rvec))
                        .ok_or_else(|| Error::InnerSolveDiverged("singular Newton system".into()))?;
                    // step halving on residual growth
                    let mut t = 1.0;
                    loop {
                        let cand: Vec<f64> = z.iter().zip(step.iter()).map(|(z, s)| z - t * s).collect();
                        let cand_res = self.residual(&cand, w);
                        if cand_res <= res || t < 1e-6 {
                            z = cand;
                            res = cand_res;
                            break;
                        }
                        t *= 0.5;
                    }
                    if !res.is_finite() {
                        return Err(Error::InnerSolveDiverged("Newton residual became non-finite".into()));
                    }
                }
                if res <= target + res_floor(&z) {
                    return Ok((z, self.inner_max_iter, res));
                }
                Err(Error::InnerSolveDiverged(format!(
                    "Newton did not reach the inner tolerance in {} iterations",
                    self.inner_max_iter
                )))
            }
        }
    }
}

/// Evaluates the coupled obstacle: solves `B z + G(L z, v^+) = g` and returns
/// `Phi(v) = L z` restricted to the VI grid. The sign assumptions are
/// asserted on the way out: `z >= 0` and `Phi(v) >= nu_floor`.
pub fn phi_coupled(v: &GridFunction, spec: &CoupledObstacle) -> Result<CoupledObstacleResult> {
    ensure_same_grid(&spec.vi_grid, v.grid(), "coupled obstacle")?;
    let w = spec.inject(&pos_part(v));
    let (z, iters, residual) = spec.solve_state(&w)?;
    if let Some(i) = z.iter().position(|&zi| zi < -1e-12) {
        return Err(Error::NegativityDetected { value: z[i], node: i });
    }
    let phi_full = spec.l_apply(&z);
    let phi_vals = spec.restrict(&phi_full);
    if let Some(i) = phi_vals.iter().position(|&p| p < spec.nu_floor - 1e-10) {
        return Err(Error::ObstacleFloorViolated {
            value: phi_vals[i],
            node: i,
            floor: spec.nu_floor,
        });
    }
    Ok(CoupledObstacleResult {
        phi: GridFunction::new(spec.vi_grid.clone(), phi_vals)?,
        z: GridFunction::new(spec.state_grid.clone(), z)?,
        inner_iterations: iters,
        inner_residual: residual,
    })
}

impl ObstacleMap for CoupledObstacle {
    fn grid(&self) -> &GridSpec {
        &self.vi_grid
    }
    fn evaluate(&self, v: &GridFunction) -> Result<GridFunction> {
        Ok(phi_coupled(v, self)?.phi)
    }
}

/// Outcome of a randomized obstacle-property probe. Report-only: violations
/// are counted, never raised.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PropertyReport {
    pub samples: usize,
    pub violations: usize,
    /// Worst breach observed (nonpositive when the property holds).
    pub worst: f64,
    pub slack: f64,
}

impl PropertyReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

const PROPERTY_SLACK: f64 = 1e-10;

/// Draws ordered pairs `0 <= v <= w` and probes `Phi(v) <= Phi(w)`.
pub fn check_increasing(phi: &dyn ObstacleMap, samples: usize, seed: u64) -> Result<PropertyReport> {
    let grid = phi.grid().clone();
    let n = grid.len();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..samples {
        let v = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(0.0..2.0)).collect())?;
        let w = v.add(&GridFunction::new(
            grid.clone(),
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )?)?;
        let pv = phi.evaluate(&v)?;
        let pw = phi.evaluate(&w)?;
        let breach = pv
            .values()
            .iter()
            .zip(pw.values())
            .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - b));
        worst = worst.max(breach);
        if breach > PROPERTY_SLACK {
            violations += 1;
        }
    }
    Ok(PropertyReport { samples, violations, worst, slack: PROPERTY_SLACK })
}

/// Probes `lambda * Phi(y) >= Phi(lambda * y)` for `lambda >= 1` on random
/// nonnegative inputs.
pub fn check_scaling(
    phi: &dyn ObstacleMap,
    lambdas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<PropertyReport> {
    if lambdas.iter().any(|&l| !(l >= 1.0) || !l.is_finite()) {
        return Err(Error::InvalidInput("scaling check requires lambdas >= 1".into()));
    }
    let grid = phi.grid().clone();
    let n = grid.len();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for _ in 0..samples {
        let y = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(0.0..2.0)).collect())?;
        let py = phi.evaluate(&y)?;
        for &lambda in lambdas {
            let p_scaled = phi.evaluate(&y.scaled(lambda))?;
            let breach = p_scaled
                .values()
                .iter()
                .zip(py.values())
                .fold(f64::NEG_INFINITY, |m, (a, b)| m.max(a - lambda * b));
            worst = worst.max(breach);
            if breach > PROPERTY_SLACK {
                violations += 1;
            }
            count += 1;
        }
    }
    Ok(PropertyReport { samples: count, violations, worst, slack: PROPERTY_SLACK })
}

/// Observational continuity probe: difference-quotient ratios
/// `||Phi(v + h e) - Phi(v)||_H / (h ||e||_H)` along shrinking perturbations.
/// Reported, not asserted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuityProbe {
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
}

pub fn check_continuity(phi: &dyn ObstacleMap, samples: usize, seed: u64) -> Result<ContinuityProbe> {
    let grid = phi.grid().clone();
    let n = grid.len();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut ratios = Vec::new();
    for _ in 0..samples {
        let v = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(0.0..2.0)).collect())?;
        let e = GridFunction::new(grid.clone(), (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())?;
        let pv = phi.evaluate(&v)?;
        let e_norm = e.norm_h().max(1e-30);
        for m in 1..=6 {
            let h = 0.5f64.powi(m);
            let p = phi.evaluate(&v.add(&e.scaled(h))?)?;
            ratios.push(p.sub(&pv)?.norm_h() / (h * e_norm));
        }
    }
    let max_ratio = ratios.iter().cloned().fold(0.0, f64::max);
    Ok(ContinuityProbe { ratios, max_ratio })
}
