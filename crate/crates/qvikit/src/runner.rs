//! Config-driven experiment runner. One invocation runs one experiment and
//! writes one result bundle:
//!
//! ```text
//! <out>/
//!   config.json       # echo of the resolved configuration
//!   report.json       # typed experiment report (deterministic payload)
//!   provenance.json   # code version, wall time, effective seed
//!   *.csv             # grid functions and tables referenced by the report
//! ```
//!
//! Bundles are written into a temporary sibling directory and renamed into
//! place, so interrupted or failed runs leave nothing behind.

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::Serialize;

use crate::config::{self, ExperimentConfig, ExperimentKind};
use crate::control::{coordinate_descent, grid_search, DescentOptions};
use crate::error::{Error, Result};
use crate::obstacles::{check_increasing, check_scaling};
use crate::order::worst_excess;
use crate::qvi::{multistart_fixed_points, solve_extremal, verify_solution};
use crate::report::{
    export_grid_function, import_grid_function, objective_table_rows, write_table,
    ControlBundleReport, CounterexampleBundleReport, EnvelopeBundleReport, ExtremalSummary,
    MultistartSummary, Provenance, ReportPayload, SearchSummary, SolveFiles, SolveReport,
    StabilityBundleReport,
};
use crate::stability::{
    run_envelope_perturbation, run_monotone_perturbation, run_scalar_counterexample, SequenceRule,
};

/// Options of one runner invocation.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub bundle_dir: PathBuf,
    pub experiment: &'static str,
    pub seed: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Runs the configured experiment and writes the bundle atomically.
pub fn run(config: &ExperimentConfig, base_dir: &Path, options: &RunOptions) -> Result<RunSummary> {
    config::validate(config, base_dir)?;
    let seed = options.seed_override.unwrap_or(config.seed);
    let out = &options.out_dir;
    if out.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("output directory {} already exists", out.display()),
        )));
    }
    let parent = out.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&parent)?;
    let name = out
        .file_name()
        .ok_or_else(|| Error::InvalidInput("output path has no directory name".into()))?
        .to_string_lossy()
        .to_string();
    let staging = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging)?;
    }
    std::fs::create_dir_all(&staging)?;

    let started = Instant::now();
    let outcome = run_in_pool(config, base_dir, seed, options.threads, &staging).and_then(|payload| {
        write_json(&staging.join("report.json"), &payload)?;
        write_json(&staging.join("config.json"), &config::resolve_paths(config, base_dir))?;
        write_json(
            &staging.join("provenance.json"),
            &Provenance {
                code_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_time_s: started.elapsed().as_secs_f64(),
                seed,
            },
        )?;
        std::fs::rename(&staging, out)?;
        Ok(())
    });
    match outcome {
        Ok(()) => {
            info!("bundle written to {}", out.display());
            Ok(RunSummary { bundle_dir: out.clone(), experiment: config.experiment.name(), seed })
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn run_in_pool(
    config: &ExperimentConfig,
    base_dir: &Path,
    seed: u64,
    threads: Option<usize>,
    staging: &Path,
) -> Result<ReportPayload> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(config, base_dir, seed, staging))
        }
        None => dispatch(config, base_dir, seed, staging),
    }
}

fn dispatch(
    config: &ExperimentConfig,
    base_dir: &Path,
    seed: u64,
    staging: &Path,
) -> Result<ReportPayload> {
    match &config.experiment {
        ExperimentKind::Solve(solve) => run_solve(config, base_dir, seed, staging, solve),
        ExperimentKind::Stability(s) => run_stability(config, base_dir, seed, staging, s),
        ExperimentKind::Envelope(e) => run_envelope(config, base_dir, staging, e),
        ExperimentKind::Counterexample(c) => run_counterexample(staging, c),
        ExperimentKind::Control(_) => run_control(config, base_dir, seed, staging),
    }
}

const RUNNER_ORDER_SLACK: f64 = 1e-8;

fn extremal_summary(r: &crate::qvi::ExtremalResult) -> Result<ExtremalSummary> {
    Ok(ExtremalSummary {
        residual_min: r.residuals.0,
        residual_max: r.residuals.1,
        outer_iters_min: r.outer_iters.0,
        outer_iters_max: r.outer_iters.1,
        bracket_width_sup: r.y_min.dist_sup(&r.y_max)?,
        monotone_drift_min: r.monotone_drifts.0,
        monotone_drift_max: r.monotone_drifts.1,
        step_trace_min: r.traces.as_ref().map(|t| t.0.clone()).unwrap_or_default(),
        step_trace_max: r.traces.as_ref().map(|t| t.1.clone()).unwrap_or_default(),
    })
}

fn run_solve(
    config: &ExperimentConfig,
    base_dir: &Path,
    seed: u64,
    staging: &Path,
    solve: &config::SolveConfig,
) -> Result<ReportPayload> {
    let inst = config::build_instance(config, base_dir)?;
    info!("solve: extremal pair on {} nodes", inst.grid().len());
    let extremal = solve_extremal(&inst)?;
    let residuals = verify_solution(&inst, &extremal.y_min, inst.params().outer_tol)?;

    export_grid_function(&extremal.y_min, &staging.join("y_min.csv"))?;
    export_grid_function(&extremal.y_max, &staging.join("y_max.csv"))?;
    export_grid_function(extremal.interval.upper(), &staging.join("y_bar.csv"))?;

    let multistart = match &solve.multistart {
        None => None,
        Some(ms) => {
            let rep = multistart_fixed_points(&inst, ms.starts, seed)?;
            let mut breach = 0.0f64;
            let mut files = Vec::new();
            for (i, point) in rep.points.iter().enumerate() {
                let (below, _) = worst_excess(extremal.y_min.values(), point.values());
                let (above, _) = worst_excess(point.values(), extremal.y_max.values());
                breach = breach.max(below).max(above);
                let file = format!("multistart_{i:02}.csv");
                export_grid_function(point, &staging.join(&file))?;
                files.push(file);
            }
            if breach > RUNNER_ORDER_SLACK {
                return Err(Error::InvalidInput(format!(
                    "multistart fixed point escaped the extremal bracket by {breach:.3e}"
                )));
            }
            Some(MultistartSummary {
                starts: rep.starts,
                distinct_points: rep.points.len(),
                non_converged: rep.non_converged,
                bracket_breach: breach,
                point_files: files,
            })
        }
    };

    Ok(ReportPayload::Solve(SolveReport {
        extremal: extremal_summary(&extremal)?,
        feasibility_gap: residuals.feasibility_gap,
        complementarity_residual: residuals.complementarity_residual,
        fixed_point_residual: residuals.fixed_point_residual,
        files: SolveFiles {
            y_min: "y_min.csv".into(),
            y_max: "y_max.csv".into(),
            y_bar: "y_bar.csv".into(),
        },
        multistart,
    }))
}

fn stability_rows_csv(rows: &[crate::stability::StabilityRow]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| vec![r.n as f64, r.delta, r.err_min_h, r.err_min_sup, r.err_max_h, r.err_max_sup])
        .collect()
}

fn run_stability(
    config: &ExperimentConfig,
    base_dir: &Path,
    seed: u64,
    staging: &Path,
    s: &config::StabilityConfig,
) -> Result<ReportPayload> {
    if s.rule == SequenceRule::Oscillating {
        return Err(Error::InvalidInput(
            "the stability experiment takes a monotone rule; use the envelope experiment for oscillating plans".into(),
        ));
    }
    let template = config::build_instance(config, base_dir)?;
    let plan = config::build_plan(&template, s.rule, s.delta_scale, s.delta_offset, s.horizon, s.nu)?;
    let report = run_monotone_perturbation(&template, &plan, seed)?;
    if !report.decay_ok() {
        return Err(Error::InvalidInput(
            "perturbation errors failed the required factor-5 decay over the horizon".into(),
        ));
    }
    let reference = solve_extremal(
        &template.with_forcing_and_cap(plan.f_star().clone(), plan.cap().clone())?,
    )?;
    export_grid_function(&reference.y_min, &staging.join("reference_y_min.csv"))?;
    export_grid_function(&reference.y_max, &staging.join("reference_y_max.csv"))?;
    write_table(
        &staging.join("errors.csv"),
        "n,delta,err_min_h,err_min_sup,err_max_h,err_max_sup",
        &stability_rows_csv(&report.rows),
    )?;
    Ok(ReportPayload::Stability(StabilityBundleReport {
        report,
        error_table: "errors.csv".into(),
        reference_min: "reference_y_min.csv".into(),
        reference_max: "reference_y_max.csv".into(),
    }))
}

fn run_envelope(
    config: &ExperimentConfig,
    base_dir: &Path,
    staging: &Path,
    e: &config::EnvelopeConfig,
) -> Result<ReportPayload> {
    let template = config::build_instance(config, base_dir)?;
    let plan = config::build_plan(
        &template,
        SequenceRule::Oscillating,
        e.delta_scale,
        e.delta_offset,
        e.horizon,
        e.nu,
    )?;
    let report = run_envelope_perturbation(&template, &plan)?;
    if !report.decay_ok() {
        return Err(Error::InvalidInput(
            "envelope errors failed the required factor-5 decay over the horizon".into(),
        ));
    }
    let reference = solve_extremal(
        &template.with_forcing_and_cap(plan.f_star().clone(), plan.cap().clone())?,
    )?;
    export_grid_function(&reference.y_min, &staging.join("reference_y_min.csv"))?;
    export_grid_function(&reference.y_max, &staging.join("reference_y_max.csv"))?;
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.n as f64,
                r.delta,
                r.err_min_h,
                r.err_min_sup,
                r.err_max_h,
                r.err_max_sup,
                r.sandwich_breach_min,
                r.sandwich_breach_max,
            ]
        })
        .collect();
    write_table(
        &staging.join("errors.csv"),
        "n,delta,err_min_h,err_min_sup,err_max_h,err_max_sup,sandwich_breach_min,sandwich_breach_max",
        &rows,
    )?;
    Ok(ReportPayload::Envelope(EnvelopeBundleReport {
        report,
        error_table: "errors.csv".into(),
        reference_min: "reference_y_min.csv".into(),
        reference_max: "reference_y_max.csv".into(),
    }))
}

fn run_counterexample(staging: &Path, c: &config::CounterexampleConfig) -> Result<ReportPayload> {
    let report = run_scalar_counterexample(c.a, c.b, &c.n_list)?;
    let verified = report.verified();
    if !verified {
        return Err(Error::InvalidInput(
            "scalar counterexample did not reproduce the expected extremal values".into(),
        ));
    }
    let rows: Vec<Vec<f64>> = report
        .rows
        .iter()
        .map(|r| vec![r.n as f64, r.min_lower, r.max_lower, r.min_upper, r.max_upper])
        .collect();
    write_table(
        &staging.join("table.csv"),
        "n,min_lower,max_lower,min_upper,max_upper",
        &rows,
    )?;
    Ok(ReportPayload::Counterexample(CounterexampleBundleReport {
        report,
        verified,
        table: "table.csv".into(),
    }))
}

fn run_control(
    config: &ExperimentConfig,
    base_dir: &Path,
    seed: u64,
    staging: &Path,
) -> Result<ReportPayload> {
    let (spec, search) = config::build_control_problem(config, base_dir)?;
    info!("control: grid search with {} points per patch", search.grid_points);
    let grid_rep = grid_search(&spec, search.grid_points)?;
    if !grid_rep.certificate_ok {
        return Err(Error::InvalidInput("grid search certificate failed".into()));
    }
    let refinement = match &search.refine {
        None => None,
        Some(r) => {
            let opts = DescentOptions {
                tol_j: r.tol_j,
                max_rounds: r.max_rounds,
                line_search_iters: r.line_search_iters,
            };
            let refined = coordinate_descent(&spec, &grid_rep.argmin, &opts)?;
            if refined.value.total > grid_rep.value.total + 1e-12 {
                return Err(Error::InvalidInput("descent refinement increased the minimum".into()));
            }
            Some(refined)
        }
    };

    let best = refinement.as_ref().unwrap_or(&grid_rep);
    let (_, extremal) = crate::control::evaluate_objective_with_solution(&spec, &best.argmin)?;
    export_grid_function(&extremal.y_min, &staging.join("argmin_y_min.csv"))?;
    export_grid_function(&extremal.y_max, &staging.join("argmin_y_max.csv"))?;
    write_table(
        &staging.join("objective_table.csv"),
        &objective_table_header(spec.n_patches()),
        &objective_table_rows(&grid_rep.table),
    )?;

    let increasing_check = check_increasing(spec.template().obstacle(), 50, seed)?;
    let scaling_check = check_scaling(spec.template().obstacle(), &[1.5, 2.0, 4.0], 50, seed)?;

    Ok(ReportPayload::Control(ControlBundleReport {
        grid_search: SearchSummary::from_report(&grid_rep),
        refinement: refinement.as_ref().map(SearchSummary::from_report),
        objective_table: "objective_table.csv".into(),
        argmin_y_min: "argmin_y_min.csv".into(),
        argmin_y_max: "argmin_y_max.csv".into(),
        increasing_check,
        scaling_check,
    }))
}

fn objective_table_header(patches: usize) -> String {
    let mut cols: Vec<String> = (0..patches).map(|i| format!("theta_{i}")).collect();
    cols.extend(["gap_term", "tracking_term", "control_cost", "total"].map(String::from));
    cols.join(",")
}

// ---------------------------------------------------------------------------
// Bundle verification
// ---------------------------------------------------------------------------

/// Outcome of a bundle verification pass: one line per checked invariant.
#[derive(Clone, Debug)]
pub struct VerifySummary {
    pub checks: Vec<String>,
}

fn table_rows(path: &Path) -> Result<usize> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().skip(1).filter(|l| !l.trim().is_empty()).count())
}

fn check(checks: &mut Vec<String>, ok: bool, what: &str) -> Result<()> {
    if ok {
        checks.push(format!("ok: {what}"));
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("bundle check failed: {what}")))
    }
}

/// Re-checks a bundle's invariants from its files: config validity, file
/// existence, row counts against the grid, finiteness, and the order
/// relations the experiment asserted when it ran.
pub fn verify_bundle(bundle: &Path) -> Result<VerifySummary> {
    let mut checks = Vec::new();
    let config: ExperimentConfig = read_json(&bundle.join("config.json"))?;
    config::validate(&config, bundle)?;
    checks.push("ok: config.json parses and validates".into());
    let _: Provenance = read_json(&bundle.join("provenance.json"))?;
    checks.push("ok: provenance.json parses".into());
    let payload: ReportPayload = read_json(&bundle.join("report.json"))?;

    match &payload {
        ReportPayload::Solve(rep) => {
            let grid = config::build_grid(&config)?;
            let y_min = import_grid_function(&bundle.join(&rep.files.y_min), &grid)?;
            let y_max = import_grid_function(&bundle.join(&rep.files.y_max), &grid)?;
            let y_bar = import_grid_function(&bundle.join(&rep.files.y_bar), &grid)?;
            checks.push(format!("ok: grid function files have {} rows each", grid.len()));
            let (w1, _) = worst_excess(y_min.values(), y_max.values());
            check(&mut checks, w1 <= RUNNER_ORDER_SLACK, "y_min <= y_max")?;
            let (w2, _) = worst_excess(y_max.values(), y_bar.values());
            check(&mut checks, w2 <= RUNNER_ORDER_SLACK, "y_max <= unconstrained cap solution")?;
            let tol = config.tolerances.outer_tol;
            check(&mut checks, rep.extremal.residual_min <= tol && rep.extremal.residual_max <= tol,
                "fixed-point residuals within tolerance")?;
            if let Some(ms) = &rep.multistart {
                for file in &ms.point_files {
                    let point = import_grid_function(&bundle.join(file), &grid)?;
                    let (a, _) = worst_excess(y_min.values(), point.values());
                    let (b, _) = worst_excess(point.values(), y_max.values());
                    check(&mut checks, a.max(b) <= RUNNER_ORDER_SLACK,
                        &format!("{file} lies in [y_min, y_max]"))?;
                }
            }
        }
        ReportPayload::Stability(rep) => {
            let grid = config::build_grid(&config)?;
            import_grid_function(&bundle.join(&rep.reference_min), &grid)?;
            import_grid_function(&bundle.join(&rep.reference_max), &grid)?;
            checks.push("ok: reference grid functions load".into());
            let horizon = match &config.experiment {
                ExperimentKind::Stability(s) => s.horizon,
                _ => return Err(Error::InvalidInput("stability report with non-stability config".into())),
            };
            check(
                &mut checks,
                table_rows(&bundle.join(&rep.error_table))? == horizon,
                "error table has one row per horizon index",
            )?;
            check(&mut checks, rep.report.rows.len() == horizon, "report covers the horizon")?;
            check(&mut checks, rep.report.decay_ok(), "error decay flags hold")?;
            check(&mut checks, rep.report.scaling_check.passed(), "scaling hypothesis probe passed")?;
        }
        ReportPayload::Envelope(rep) => {
            let grid = config::build_grid(&config)?;
            import_grid_function(&bundle.join(&rep.reference_min), &grid)?;
            import_grid_function(&bundle.join(&rep.reference_max), &grid)?;
            checks.push("ok: reference grid functions load".into());
            let horizon = match &config.experiment {
                ExperimentKind::Envelope(e) => e.horizon,
                _ => return Err(Error::InvalidInput("envelope report with non-envelope config".into())),
            };
            check(
                &mut checks,
                table_rows(&bundle.join(&rep.error_table))? == horizon,
                "error table has one row per horizon index",
            )?;
            let sandwich_ok = rep
                .report
                .rows
                .iter()
                .all(|r| r.sandwich_breach_min <= 1e-10 && r.sandwich_breach_max <= 1e-10);
            check(&mut checks, sandwich_ok, "envelope sandwich holds at every index")?;
            check(&mut checks, rep.report.decay_ok(), "error decay flags hold")?;
        }
        ReportPayload::Counterexample(rep) => {
            let expected = match &config.experiment {
                ExperimentKind::Counterexample(c) => c.n_list.len(),
                _ => return Err(Error::InvalidInput("counterexample report with mismatched config".into())),
            };
            check(
                &mut checks,
                table_rows(&bundle.join(&rep.table))? == expected,
                "table has one row per shift index",
            )?;
            check(&mut checks, rep.verified && rep.report.verified(), "extremal identities hold")?;
        }
        ReportPayload::Control(rep) => {
            let grid = config::build_grid(&config)?;
            import_grid_function(&bundle.join(&rep.argmin_y_min), &grid)?;
            import_grid_function(&bundle.join(&rep.argmin_y_max), &grid)?;
            checks.push("ok: argmin grid functions load".into());
            check(&mut checks, bundle.join(&rep.objective_table).exists(), "objective table exists")?;
            check(&mut checks, rep.grid_search.certificate_ok, "grid-search certificate holds")?;
            if let Some(refined) = &rep.refinement {
                check(
                    &mut checks,
                    refined.total <= rep.grid_search.total + 1e-12,
                    "refinement did not increase the minimum",
                )?;
                let monotone = refined.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12);
                check(&mut checks, monotone, "descent trace is nonincreasing")?;
            }
        }
    }
    Ok(VerifySummary { checks })
}
