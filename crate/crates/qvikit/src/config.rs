//! Experiment configuration: a single JSON document with a top-level
//! experiment tag, parsed strictly (unknown keys are rejected) and
//! re-validated invariant by invariant on load. The same document is echoed
//! verbatim into every result bundle.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{ControlParam, ControlProblemSpec, ObjectiveKind, Partition};
use crate::elliptic::{assemble, OperatorSpec};
use crate::error::{Error, Result};
use crate::grid::{Boundary, DualVector, GridFunction, GridSpec};
use crate::obstacles::{CoupledObstacle, CoupledObstacleSpec, ImpulseObstacle, ImpulseObstacleSpec};
use crate::qvi::{ObstacleKind, QviInstance, QviParams};
use crate::report::import_grid_function;
use crate::stability::{PerturbationPlan, SequenceRule};

pub const SUPPORTED_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub extent: Vec<f64>,
    pub nodes_per_axis: usize,
    pub boundary: Boundary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstacleConfig {
    Impulse(ImpulseObstacleSpec),
    Coupled(CoupledObstacleSpec),
}

/// Forcing term: constant, one value per uniform patch block, or a grid
/// function CSV (paths are resolved against the config file directory).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingConfig {
    Constant(f64),
    PerPatch(Vec<f64>),
    Csv(String),
}

/// Cap `F` of the admissible forcing band `0 <= f <= F`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CapConfig {
    Constant(f64),
    ScaleOfForcing(f64),
    Csv(String),
}

impl Default for CapConfig {
    fn default() -> Self {
        CapConfig::ScaleOfForcing(10.0)
    }
}

fn default_outer_tol() -> f64 {
    1e-10
}
fn default_max_outer() -> usize {
    5000
}
fn default_max_sweeps() -> usize {
    200_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceConfig {
    #[serde(default = "default_outer_tol")]
    pub outer_tol: f64,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            outer_tol: default_outer_tol(),
            max_outer: default_max_outer(),
            max_sweeps: default_max_sweeps(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultistartConfig {
    pub starts: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multistart: Option<MultistartConfig>,
}

fn default_delta_scale() -> f64 {
    1.0
}
fn default_nu() -> f64 {
    0.1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub rule: SequenceRule,
    #[serde(default = "default_delta_scale")]
    pub delta_scale: f64,
    #[serde(default)]
    pub delta_offset: u32,
    pub horizon: usize,
    /// Lower band bound: the plans keep `nu <= f_n` everywhere.
    #[serde(default = "default_nu")]
    pub nu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeConfig {
    #[serde(default = "default_delta_scale")]
    pub delta_scale: f64,
    #[serde(default)]
    pub delta_offset: u32,
    pub horizon: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub a: f64,
    pub b: f64,
    pub n_list: Vec<u32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetConfig {
    Constant(f64),
    Csv(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    SingletonGapTracking { y_d: TargetConfig },
    ValueTracking { s: f64 },
}

fn default_tol_j() -> f64 {
    1e-10
}
fn default_max_rounds() -> usize {
    20
}
fn default_line_search_iters() -> usize {
    30
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    #[serde(default = "default_tol_j")]
    pub tol_j: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_line_search_iters")]
    pub line_search_iters: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    pub grid_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    pub objective: ObjectiveConfig,
    pub lambda: f64,
    pub patches: usize,
    /// Per-patch lower bounds, strictly positive.
    pub nu: Vec<f64>,
    /// Per-patch upper bounds.
    pub f_max: Vec<f64>,
    pub search: SearchConfig,
}

/// The experiment to run, externally tagged (`{"solve": {...}}`).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExperimentKind {
    Solve(SolveConfig),
    Stability(StabilityConfig),
    Envelope(EnvelopeConfig),
    Counterexample(CounterexampleConfig),
    Control(ControlConfig),
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Solve(_) => "solve",
            ExperimentKind::Stability(_) => "stability",
            ExperimentKind::Envelope(_) => "envelope",
            ExperimentKind::Counterexample(_) => "counterexample",
            ExperimentKind::Control(_) => "control",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<ForcingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_cap: Option<CapConfig>,
    #[serde(default)]
    pub tolerances: ToleranceConfig,
    pub experiment: ExperimentKind,
}

/// Loads and validates a config file. Parse failures carry the line and
/// column; validation failures list every violated invariant at once.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    let base = path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    validate(&config, &base)?;
    Ok(config)
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Returns a copy with every input file reference made absolute against
/// `base`. Bundles echo the resolved config so they stay self-describing
/// wherever they are inspected from.
pub fn resolve_paths(config: &ExperimentConfig, base: &Path) -> ExperimentConfig {
    let mut out = config.clone();
    let abs = |p: &str| resolve(base, p).to_string_lossy().into_owned();
    if let Some(ForcingConfig::Csv(p)) = &mut out.forcing {
        *p = abs(p);
    }
    if let Some(CapConfig::Csv(p)) = &mut out.f_cap {
        *p = abs(p);
    }
    if let ExperimentKind::Control(c) = &mut out.experiment {
        if let ObjectiveConfig::SingletonGapTracking { y_d: TargetConfig::Csv(p) } = &mut c.objective {
            *p = abs(p);
        }
    }
    out
}

/// Re-validates every invariant of the nested specs; collects all
/// violations instead of stopping at the first.
pub fn validate(config: &ExperimentConfig, base: &Path) -> Result<()> {
    let mut v: Vec<String> = Vec::new();

    if config.schema_version != SUPPORTED_SCHEMA_VERSION {
        v.push(format!(
            "schema_version {} unsupported; this build reads version {SUPPORTED_SCHEMA_VERSION}",
            config.schema_version
        ));
    }
    if !(config.tolerances.outer_tol > 0.0) {
        v.push("tolerances.outer_tol must be positive".into());
    }
    if config.tolerances.max_outer == 0 || config.tolerances.max_sweeps == 0 {
        v.push("tolerances.max_outer and max_sweeps must be at least 1".into());
    }

    let grid = match &config.grid {
        Some(g) => match GridSpec::new(g.dim, g.extent.clone(), g.nodes_per_axis, g.boundary) {
            Ok(spec) => Some(spec),
            Err(e) => {
                v.push(format!("grid: {e}"));
                None
            }
        },
        None => None,
    };

    let needs_pde = !matches!(config.experiment, ExperimentKind::Counterexample(_));
    if needs_pde {
        if config.grid.is_none() {
            v.push(format!("experiment '{}' requires a grid section", config.experiment.name()));
        }
        if config.operator.is_none() {
            v.push(format!("experiment '{}' requires an operator section", config.experiment.name()));
        }
        if config.obstacle.is_none() {
            v.push(format!("experiment '{}' requires an obstacle section", config.experiment.name()));
        }
    }

    if let (Some(op), Some(g)) = (&config.operator, &grid) {
        if let Err(e) = assemble(op, g) {
            v.push(format!("operator: {e}"));
        }
    }
    if let (Some(obstacle), Some(g)) = (&config.obstacle, &grid) {
        if let Err(e) = build_obstacle(obstacle, g) {
            v.push(format!("obstacle: {e}"));
        }
    }

    match &config.experiment {
        ExperimentKind::Counterexample(c) => {
            for (section, present) in [
                ("grid", config.grid.is_some()),
                ("operator", config.operator.is_some()),
                ("obstacle", config.obstacle.is_some()),
                ("forcing", config.forcing.is_some()),
                ("f_cap", config.f_cap.is_some()),
            ] {
                if present {
                    v.push(format!(
                        "counterexample runs on the scalar lattice; remove the unused '{section}' section"
                    ));
                }
            }
            if !(0.0 < c.a && c.a < c.b && c.b < 1.0) {
                v.push(format!(
                    "counterexample requires 0 < a < b < 1 (a strict plateau), got a = {}, b = {}",
                    c.a, c.b
                ));
            }
            if c.n_list.is_empty() {
                v.push("counterexample needs a nonempty n_list".into());
            }
            for &n in &c.n_list {
                if n == 0 {
                    v.push("counterexample n_list entries must be positive".into());
                } else if 0.0 < c.a && c.a < c.b && c.b < 1.0 {
                    let s = 1.0 / n as f64;
                    if !(s <= c.a && c.b <= 1.0 - s) {
                        v.push(format!(
                            "counterexample shift 1/{n} must satisfy 1/n <= a and b <= 1 - 1/n"
                        ));
                    }
                }
            }
        }
        ExperimentKind::Control(c) => {
            if config.forcing.is_some() {
                v.push("control assembles its forcing from the control coefficients; remove the 'forcing' section".into());
            }
            if config.f_cap.is_some() {
                v.push("control derives the cap from f_max; remove the 'f_cap' section".into());
            }
            if c.patches == 0 {
                v.push("control needs at least one patch".into());
            }
            if c.nu.len() != c.patches || c.f_max.len() != c.patches {
                v.push("control bounds nu and f_max need one entry per patch".into());
            }
            for (i, &nu) in c.nu.iter().enumerate() {
                if !(nu > 0.0) {
                    v.push(format!("control bounds require 0 < nu on every patch (patch {i})"));
                }
            }
            for (i, (&nu, &fm)) in c.nu.iter().zip(&c.f_max).enumerate() {
                if nu > fm {
                    v.push(format!("control box empty on patch {i}: nu = {nu} > f_max = {fm}"));
                }
            }
            if !(c.lambda > 0.0) {
                v.push("control cost weight lambda must be positive".into());
            }
            if c.search.grid_points == 0 {
                v.push("control search needs grid_points >= 1".into());
            }
            if c.patches > 3 {
                v.push("full grid search is limited to 3 patches".into());
            }
            if let ObjectiveConfig::SingletonGapTracking { y_d: TargetConfig::Csv(p) } = &c.objective {
                if !resolve(base, p).exists() {
                    v.push(format!("tracking target csv '{p}' does not exist"));
                }
            }
        }
        ExperimentKind::Stability(s) => {
            if s.rule == SequenceRule::Oscillating {
                v.push("the stability experiment takes a monotone rule; use the envelope experiment for oscillating plans".into());
            }
            validate_plan_fields(s.horizon, s.nu, s.delta_scale, &mut v);
            require_forcing(config, &mut v);
        }
        ExperimentKind::Envelope(e) => {
            validate_plan_fields(e.horizon, e.nu, e.delta_scale, &mut v);
            require_forcing(config, &mut v);
        }
        ExperimentKind::Solve(s) => {
            if let Some(ms) = &s.multistart {
                if ms.starts == 0 {
                    v.push("multistart needs at least one start".into());
                }
            }
            require_forcing(config, &mut v);
        }
    }

    if let Some(ForcingConfig::Csv(p)) = &config.forcing {
        if !resolve(base, p).exists() {
            v.push(format!("forcing csv '{p}' does not exist"));
        }
    }
    if let Some(CapConfig::Csv(p)) = &config.f_cap {
        if !resolve(base, p).exists() {
            v.push(format!("f_cap csv '{p}' does not exist"));
        }
    }
    if let Some(CapConfig::ScaleOfForcing(s)) = &config.f_cap {
        if !(*s >= 1.0) {
            v.push("f_cap.scale_of_forcing must be at least 1 so the cap dominates the forcing".into());
        }
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation { violations: v })
    }
}

fn require_forcing(config: &ExperimentConfig, v: &mut Vec<String>) {
    if config.forcing.is_none() {
        v.push(format!("experiment '{}' requires a forcing section", config.experiment.name()));
    }
}

fn validate_plan_fields(horizon: usize, nu: f64, delta_scale: f64, v: &mut Vec<String>) {
    if horizon == 0 {
        v.push("perturbation horizon must be at least 1".into());
    }
    if !(nu > 0.0) {
        v.push("perturbation band requires 0 < nu".into());
    }
    if !(delta_scale >= 0.0) {
        v.push("delta_scale must be nonnegative".into());
    }
}

// ---------------------------------------------------------------------------
// Builders: config sections -> domain objects
// ---------------------------------------------------------------------------

pub fn build_grid(config: &ExperimentConfig) -> Result<GridSpec> {
    let g = config
        .grid
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("config has no grid section".into()))?;
    GridSpec::new(g.dim, g.extent.clone(), g.nodes_per_axis, g.boundary)
}

pub fn build_obstacle(config: &ObstacleConfig, grid: &GridSpec) -> Result<ObstacleKind> {
    match config {
        ObstacleConfig::Impulse(spec) => {
            Ok(ObstacleKind::Impulse(ImpulseObstacle::new(spec.clone(), grid.clone())?))
        }
        ObstacleConfig::Coupled(spec) => {
            Ok(ObstacleKind::Coupled(CoupledObstacle::new(spec, grid.clone())?))
        }
    }
}

pub fn build_forcing(
    config: &ForcingConfig,
    grid: &GridSpec,
    base: &Path,
) -> Result<DualVector> {
    match config {
        ForcingConfig::Constant(c) => DualVector::constant(grid.clone(), *c),
        ForcingConfig::PerPatch(values) => {
            let partition = Partition::uniform_blocks(grid, values.len())?;
            partition.assemble_forcing(grid, values)
        }
        ForcingConfig::Csv(p) => {
            let gf = import_grid_function(&resolve(base, p), grid)?;
            DualVector::new(grid.clone(), gf.into_values())
        }
    }
}

pub fn build_cap(
    config: &CapConfig,
    forcing: &DualVector,
    grid: &GridSpec,
    base: &Path,
) -> Result<DualVector> {
    match config {
        CapConfig::Constant(c) => DualVector::constant(grid.clone(), *c),
        CapConfig::ScaleOfForcing(s) => Ok(forcing.scaled(*s)),
        CapConfig::Csv(p) => {
            let gf = import_grid_function(&resolve(base, p), grid)?;
            DualVector::new(grid.clone(), gf.into_values())
        }
    }
}

pub fn qvi_params(config: &ExperimentConfig) -> QviParams {
    QviParams {
        outer_tol: config.tolerances.outer_tol,
        max_outer: config.tolerances.max_outer,
        max_sweeps: config.tolerances.max_sweeps,
        record_trace: true,
    }
}

/// Builds the QVI instance shared by the solve/stability/envelope
/// experiments.
pub fn build_instance(config: &ExperimentConfig, base: &Path) -> Result<QviInstance> {
    let grid = build_grid(config)?;
    let operator = assemble(
        config
            .operator
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("config has no operator section".into()))?,
        &grid,
    )?;
    let obstacle = build_obstacle(
        config
            .obstacle
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("config has no obstacle section".into()))?,
        &grid,
    )?;
    let forcing = build_forcing(
        config
            .forcing
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("config has no forcing section".into()))?,
        &grid,
        base,
    )?;
    let cap_cfg = config.f_cap.clone().unwrap_or_default();
    let cap = build_cap(&cap_cfg, &forcing, &grid, base)?;
    QviInstance::new(operator, obstacle, forcing, cap, qvi_params(config))
}

/// Builds the perturbation plan of a stability experiment around the
/// configured forcing as `f*`.
pub fn build_plan(
    instance: &QviInstance,
    rule: SequenceRule,
    delta_scale: f64,
    delta_offset: u32,
    horizon: usize,
    nu: f64,
) -> Result<PerturbationPlan> {
    PerturbationPlan::new(
        instance.forcing().clone(),
        nu,
        instance.forcing_cap().clone(),
        rule,
        delta_scale,
        delta_offset,
        horizon,
    )
}

/// Builds the control problem of a control experiment.
pub fn build_control_problem(
    config: &ExperimentConfig,
    base: &Path,
) -> Result<(ControlProblemSpec, SearchConfig)> {
    let c = match &config.experiment {
        ExperimentKind::Control(c) => c,
        _ => return Err(Error::InvalidInput("not a control experiment".into())),
    };
    let grid = build_grid(config)?;
    let operator = assemble(
        config
            .operator
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("config has no operator section".into()))?,
        &grid,
    )?;
    let obstacle = build_obstacle(
        config
            .obstacle
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("config has no obstacle section".into()))?,
        &grid,
    )?;
    let partition = Partition::uniform_blocks(&grid, c.patches)?;
    let cap = partition.assemble_forcing(&grid, &c.f_max)?;
    let template_forcing = partition.assemble_forcing(&grid, &c.nu)?;
    let template = QviInstance::new(operator, obstacle, template_forcing, cap, qvi_params(config))?;
    let objective = match &c.objective {
        ObjectiveConfig::ValueTracking { s } => ObjectiveKind::ValueTracking { s: *s },
        ObjectiveConfig::SingletonGapTracking { y_d } => {
            let target = match y_d {
                TargetConfig::Constant(c) => GridFunction::constant(grid.clone(), *c)?,
                TargetConfig::Csv(p) => import_grid_function(&resolve(base, p), &grid)?,
            };
            ObjectiveKind::SingletonGapTracking { y_d: target }
        }
    };
    let spec = ControlProblemSpec::new(
        template,
        partition,
        c.nu.clone(),
        c.f_max.clone(),
        objective,
        c.lambda,
    )?;
    Ok((spec, c.search.clone()))
}

/// Initial control for the descent refinement when no grid search ran.
pub fn lower_corner_control(spec: &ControlProblemSpec) -> ControlParam {
    ControlParam {
        coefficients: spec.bounds().0.to_vec(),
        partition: spec.partition().clone(),
    }
}
