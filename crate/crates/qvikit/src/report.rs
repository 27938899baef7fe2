//! Result serialization: grid functions as CSV (full double precision,
//! node-index row order), experiment reports as JSON, and the typed bundle
//! summaries the runner writes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{EvalRow, OptimizationReport};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, GridSpec};
use crate::obstacles::PropertyReport;
use crate::stability::{CounterexampleReport, EnvelopeReport, StabilityReport};

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub(crate) fn full_precision(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a grid function as CSV with header `index,x[,y],value` in node
/// index order.
pub fn export_grid_function(gf: &GridFunction, path: &Path) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    let dim = gf.grid().dim();
    if dim == 1 {
        writeln!(out, "index,x,value")?;
    } else {
        writeln!(out, "index,x,y,value")?;
    }
    for (i, v) in gf.values().iter().enumerate() {
        let [x, y] = gf.grid().coords(i);
        if dim == 1 {
            writeln!(out, "{i},{},{}", full_precision(x), full_precision(*v))?;
        } else {
            writeln!(out, "{i},{},{},{}", full_precision(x), full_precision(y), full_precision(*v))?;
        }
    }
    Ok(())
}

/// Reads a grid function written by [`export_grid_function`]. The row count
/// and index order must match the grid exactly.
pub fn import_grid_function(path: &Path, grid: &GridSpec) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty csv", path.display())))?;
    let expected_header = if grid.dim() == 1 { "index,x,value" } else { "index,x,y,value" };
    if header.trim() != expected_header {
        return Err(Error::InvalidInput(format!(
            "{}: expected header '{expected_header}', got '{header}'",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(grid.len());
    for (row, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expected_fields = if grid.dim() == 1 { 3 } else { 4 };
        if fields.len() != expected_fields {
            return Err(Error::InvalidInput(format!(
                "{}: row {row} has {} fields, expected {expected_fields}",
                path.display(),
                fields.len()
            )));
        }
        let index: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{}: bad index in row {row}", path.display())))?;
        if index != row {
            return Err(Error::InvalidInput(format!(
                "{}: rows must be in node index order (row {row} has index {index})",
                path.display()
            )));
        }
        let value: f64 = fields[expected_fields - 1].trim().parse().map_err(|_| {
            Error::InvalidInput(format!("{}: bad value in row {row}", path.display()))
        })?;
        values.push(value);
    }
    if values.len() != grid.len() {
        return Err(Error::InvalidInput(format!(
            "{}: {} data rows but the grid has {} active nodes",
            path.display(),
            values.len(),
            grid.len()
        )));
    }
    GridFunction::new(grid.clone(), values)
}

/// Writes a numeric table as CSV.
pub fn write_table(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| full_precision(*v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Bundle report payloads (JSON)
// ---------------------------------------------------------------------------

/// Run provenance. Kept in its own file so the report payload stays
/// byte-identical across reruns.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub code_version: String,
    pub wall_time_s: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExtremalSummary {
    pub residual_min: f64,
    pub residual_max: f64,
    pub outer_iters_min: usize,
    pub outer_iters_max: usize,
    /// Sup-norm distance between the maximal and minimal solutions.
    pub bracket_width_sup: f64,
    /// Worst against-direction drift seen by the monotonicity audit.
    pub monotone_drift_min: f64,
    pub monotone_drift_max: f64,
    pub step_trace_min: Vec<f64>,
    pub step_trace_max: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultistartSummary {
    pub starts: usize,
    pub distinct_points: usize,
    pub non_converged: usize,
    /// Worst breach of `y_min <= z <= y_max` over all converged points.
    pub bracket_breach: f64,
    pub point_files: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub extremal: ExtremalSummary,
    pub feasibility_gap: f64,
    pub complementarity_residual: f64,
    pub fixed_point_residual: f64,
    pub files: SolveFiles,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multistart: Option<MultistartSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveFiles {
    pub y_min: String,
    pub y_max: String,
    pub y_bar: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityBundleReport {
    pub report: StabilityReport,
    pub error_table: String,
    pub reference_min: String,
    pub reference_max: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeBundleReport {
    pub report: EnvelopeReport,
    pub error_table: String,
    pub reference_min: String,
    pub reference_max: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CounterexampleBundleReport {
    pub report: CounterexampleReport,
    pub verified: bool,
    pub table: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ControlBundleReport {
    pub grid_search: SearchSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<SearchSummary>,
    pub objective_table: String,
    pub argmin_y_min: String,
    pub argmin_y_max: String,
    /// Obstacle property probes at the argmin instance.
    pub increasing_check: PropertyReport,
    pub scaling_check: PropertyReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchSummary {
    pub argmin: Vec<f64>,
    pub gap_term: f64,
    pub tracking_term: f64,
    pub control_cost: f64,
    pub total: f64,
    pub evaluations: usize,
    pub certificate_ok: bool,
    pub trace: Vec<f64>,
}

impl SearchSummary {
    pub fn from_report(r: &OptimizationReport) -> Self {
        SearchSummary {
            argmin: r.argmin.coefficients.clone(),
            gap_term: r.value.gap_term,
            tracking_term: r.value.tracking_term,
            control_cost: r.value.control_cost,
            total: r.value.total,
            evaluations: r.evaluations,
            certificate_ok: r.certificate_ok,
            trace: r.trace.clone(),
        }
    }
}

/// Rows of the control objective table flattened for CSV output.
pub fn objective_table_rows(table: &[EvalRow]) -> Vec<Vec<f64>> {
    table
        .iter()
        .map(|row| {
            let mut out = row.coefficients.clone();
            out.push(row.value.gap_term);
            out.push(row.value.tracking_term);
            out.push(row.value.control_cost);
            out.push(row.value.total);
            out
        })
        .collect()
}

/// The typed payload of `report.json`, tagged by experiment kind.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportPayload {
    Solve(SolveReport),
    Stability(StabilityBundleReport),
    Envelope(EnvelopeBundleReport),
    Counterexample(CounterexampleBundleReport),
    Control(ControlBundleReport),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Boundary;

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::interval(9, 1.0, Boundary::Neumann).unwrap();
        let gf = GridFunction::from_fn(grid.clone(), |i, [x, _]| {
            (i as f64 + 1.0).sqrt() * x.sin() + 1.0 / 3.0
        })
        .unwrap();
        let path = dir.path().join("gf.csv");
        export_grid_function(&gf, &path).unwrap();
        let back = import_grid_function(&path, &grid).unwrap();
        assert_eq!(gf, back);

        // 3-node 1D function: 3 data rows + header
        let small = GridSpec::interval(5, 1.0, Boundary::DirichletZero).unwrap();
        let gf = GridFunction::constant(small.clone(), 2.0).unwrap();
        let p2 = dir.path().join("small.csv");
        export_grid_function(&gf, &p2).unwrap();
        let text = std::fs::read_to_string(&p2).unwrap();
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn two_dimensional_csv_has_both_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::square(4, 1.0, Boundary::Neumann).unwrap();
        let gf = GridFunction::from_fn(grid.clone(), |_, [x, y]| x + 10.0 * y).unwrap();
        let path = dir.path().join("gf2d.csv");
        export_grid_function(&gf, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("index,x,y,value"));
        assert_eq!(text.lines().count(), 17);
        let back = import_grid_function(&path, &grid).unwrap();
        assert_eq!(gf, back);
    }

    #[test]
    fn import_rejects_wrong_row_counts() {
        let dir = tempfile::tempdir().unwrap();
        let grid = GridSpec::interval(6, 1.0, Boundary::Neumann).unwrap();
        let gf = GridFunction::constant(grid.clone(), 1.0).unwrap();
        let path = dir.path().join("gf.csv");
        export_grid_function(&gf, &path).unwrap();
        let other = GridSpec::interval(7, 1.0, Boundary::Neumann).unwrap();
        assert!(import_grid_function(&path, &other).is_err());
    }
}
