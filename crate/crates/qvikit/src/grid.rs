//! Uniform 1D/2D grids and the node-indexed function types living on them.
//!
//! A [`GridSpec`] describes a tensor grid on a box. The *active* nodes are the
//! degrees of freedom: all nodes for a Neumann grid, interior nodes for a
//! homogeneous-Dirichlet grid (boundary values are eliminated as zeros).
//! [`GridFunction`] and [`DualVector`] are plain real vectors over the active
//! nodes, carrying the componentwise partial order. [`Obstacle`] is the one
//! type allowed to hold `+inf` entries (unconstrained nodes).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary handling of the grid's function space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Homogeneous Dirichlet: boundary nodes eliminated, values pinned to zero.
    DirichletZero,
    /// Zero-flux Neumann: all nodes are active.
    Neumann,
}

/// A uniform tensor grid on a 1D interval or 2D box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    dim: usize,
    extent: Vec<f64>,
    nodes_per_axis: usize,
    boundary: Boundary,
}

impl GridSpec {
    pub fn new(dim: usize, extent: Vec<f64>, nodes_per_axis: usize, boundary: Boundary) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidInput(format!("grid dim must be 1 or 2, got {dim}")));
        }
        if extent.len() != dim {
            return Err(Error::InvalidInput(format!(
                "extent must have {dim} entries, got {}",
                extent.len()
            )));
        }
        if extent.iter().any(|&e| !e.is_finite() || e <= 0.0) {
            return Err(Error::InvalidInput("extent entries must be finite and positive".into()));
        }
        if nodes_per_axis < 3 {
            return Err(Error::InvalidInput(format!(
                "nodes_per_axis must be at least 3, got {nodes_per_axis}"
            )));
        }
        Ok(Self { dim, extent, nodes_per_axis, boundary })
    }

    /// 1D grid on `(0, length)`.
    pub fn interval(nodes_per_axis: usize, length: f64, boundary: Boundary) -> Result<Self> {
        Self::new(1, vec![length], nodes_per_axis, boundary)
    }

    /// 2D grid on `(0, length)^2`.
    pub fn square(nodes_per_axis: usize, length: f64, boundary: Boundary) -> Result<Self> {
        Self::new(2, vec![length, length], nodes_per_axis, boundary)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn extent(&self) -> &[f64] {
        &self.extent
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes_per_axis
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Grid spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> f64 {
        self.extent[axis] / (self.nodes_per_axis - 1) as f64
    }

    /// Active nodes per axis (boundary nodes eliminated for Dirichlet grids).
    pub fn active_per_axis(&self) -> usize {
        match self.boundary {
            Boundary::DirichletZero => self.nodes_per_axis - 2,
            Boundary::Neumann => self.nodes_per_axis,
        }
    }

    /// Total number of active nodes.
    pub fn len(&self) -> usize {
        self.active_per_axis().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of active node `i` (row-major; the second entry is 0 in 1D).
    pub fn multi_index(&self, i: usize) -> [usize; 2] {
        let m = self.active_per_axis();
        if self.dim == 1 {
            [i, 0]
        } else {
            [i % m, i / m]
        }
    }

    /// Coordinates of active node `i` (the second entry is 0 in 1D).
    pub fn coords(&self, i: usize) -> [f64; 2] {
        let off = match self.boundary {
            Boundary::DirichletZero => 1.0,
            Boundary::Neumann => 0.0,
        };
        let [ix, iy] = self.multi_index(i);
        let x = (ix as f64 + off) * self.spacing(0);
        let y = if self.dim == 2 { (iy as f64 + off) * self.spacing(1) } else { 0.0 };
        [x, y]
    }

    /// Volume weight of the lumped duality pairing (`h` in 1D, `hx*hy` in 2D).
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|d| self.spacing(d)).product()
    }

    /// Companion grid with the same extent and resolution but Neumann boundary
    /// (all nodes active). Used by the coupled obstacle whose auxiliary state
    /// lives on the full node set.
    pub fn companion_neumann(&self) -> GridSpec {
        GridSpec {
            dim: self.dim,
            extent: self.extent.clone(),
            nodes_per_axis: self.nodes_per_axis,
            boundary: Boundary::Neumann,
        }
    }

    /// Index of this grid's active node `i` in the companion Neumann grid.
    pub(crate) fn index_in_companion(&self, i: usize) -> usize {
        match self.boundary {
            Boundary::Neumann => i,
            Boundary::DirichletZero => {
                let [ix, iy] = self.multi_index(i);
                let m = self.nodes_per_axis;
                if self.dim == 1 {
                    ix + 1
                } else {
                    (iy + 1) * m + (ix + 1)
                }
            }
        }
    }
}

fn check_values(values: &[f64], grid: &GridSpec, what: &str) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::InvalidInput(format!(
            "{what} has {} entries but the grid has {} active nodes",
            values.len(),
            grid.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has a non-finite entry at node {i}")));
    }
    Ok(())
}

pub(crate) fn ensure_same_grid(a: &GridSpec, b: &GridSpec, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch(format!("{what}: operands live on different grids")));
    }
    Ok(())
}

/// Real values on the active nodes of a grid; the finite-dimensional stand-in
/// for a state variable, ordered componentwise. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    grid: GridSpec,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_values(&values, &grid, "grid function")?;
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![c; n])
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    /// Builds a grid function by sampling `f(node_index, coords)`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(usize, [f64; 2]) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(i, grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, t: f64) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| t * v).collect(),
        }
    }

    pub fn shifted(&self, c: f64) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v + c).collect(),
        }
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        ensure_same_grid(&self.grid, &other.grid, "add")?;
        Ok(GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        ensure_same_grid(&self.grid, &other.grid, "sub")?;
        Ok(GridFunction {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// Sup-norm `max_i |v_i|`.
    pub fn norm_sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Sup-distance to `other`.
    pub fn dist_sup(&self, other: &GridFunction) -> Result<f64> {
        ensure_same_grid(&self.grid, &other.grid, "dist_sup")?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs())))
    }

    /// Discrete H (lumped L^2) norm: `sqrt(h^dim * sum v_i^2)`.
    pub fn norm_h(&self) -> f64 {
        let vol = self.grid.cell_volume();
        (vol * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Discrete H^1 norm: the H norm plus difference-quotient energy over grid
    /// edges. On Dirichlet grids the edges into the eliminated boundary ring
    /// contribute with boundary values zero.
    pub fn norm_h1(&self) -> f64 {
        let vol = self.grid.cell_volume();
        let m = self.grid.active_per_axis();
        let dim = self.grid.dim();
        let dirichlet = self.grid.boundary() == Boundary::DirichletZero;
        let mut acc: f64 = self.values.iter().map(|v| v * v).sum();
        for axis in 0..dim {
            let h = self.grid.spacing(axis);
            let inv_h2 = 1.0 / (h * h);
            for i in 0..self.values.len() {
                let mi = self.grid.multi_index(i);
                let a = mi[axis];
                // forward edge within the active set
                if a + 1 < m {
                    let j = if axis == 0 { i + 1 } else { i + m };
                    let d = self.values[j] - self.values[i];
                    acc += d * d * inv_h2;
                }
                // edges into the eliminated boundary (value zero)
                if dirichlet {
                    if a == 0 {
                        acc += self.values[i] * self.values[i] * inv_h2;
                    }
                    if a + 1 == m {
                        acc += self.values[i] * self.values[i] * inv_h2;
                    }
                }
            }
        }
        (vol * acc).sqrt()
    }
}

/// A forcing term, i.e. an element of the discrete dual space. Shares the
/// active-node index space with [`GridFunction`]; the pairing is the lumped
/// `<f, v> = h^dim * sum f_i v_i`, so the dual order is componentwise as well.
#[derive(Clone, Debug, PartialEq)]
pub struct DualVector {
    grid: GridSpec,
    values: Vec<f64>,
}

impl DualVector {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_values(&values, &grid, "dual vector")?;
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, c: f64) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![c; n])
    }

    pub fn zeros(grid: GridSpec) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(usize, [f64; 2]) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(i, grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, t: f64) -> DualVector {
        DualVector {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| t * v).collect(),
        }
    }

    /// Componentwise order inherited from the state space.
    pub fn leq(&self, other: &DualVector) -> Result<bool> {
        ensure_same_grid(&self.grid, &other.grid, "dual leq")?;
        Ok(self.values.iter().zip(&other.values).all(|(a, b)| a <= b))
    }

    pub fn norm_sup(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm_h(&self) -> f64 {
        let vol = self.grid.cell_volume();
        (vol * self.values.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    /// Lumped duality pairing `<f, v> = h^dim * sum f_i v_i`.
    pub fn pairing(&self, v: &GridFunction) -> Result<f64> {
        ensure_same_grid(&self.grid, v.grid(), "pairing")?;
        let vol = self.grid.cell_volume();
        Ok(vol
            * self
                .values
                .iter()
                .zip(v.values())
                .map(|(f, v)| f * v)
                .sum::<f64>())
    }
}

/// An upper obstacle. Entries are finite reals or `+inf` (the reserved
/// "unconstrained" sentinel); `NaN` and `-inf` are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct Obstacle {
    grid: GridSpec,
    values: Vec<f64>,
}

impl Obstacle {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "obstacle has {} entries but the grid has {} active nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(Error::InvalidInput(format!(
                "obstacle entry at node {i} must be finite or +inf"
            )));
        }
        Ok(Self { grid, values })
    }

    /// The obstacle that constrains nothing (`psi = +inf` everywhere).
    pub fn unbounded(grid: GridSpec) -> Self {
        let n = grid.len();
        Self { grid, values: vec![f64::INFINITY; n] }
    }

    pub fn from_grid_function(gf: &GridFunction) -> Self {
        Self { grid: gf.grid().clone(), values: gf.values().to_vec() }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_unbounded_at(&self, i: usize) -> bool {
        self.values[i] == f64::INFINITY
    }

    /// Componentwise order with the usual `+inf` conventions.
    pub fn leq(&self, other: &Obstacle) -> Result<bool> {
        ensure_same_grid(&self.grid, &other.grid, "obstacle leq")?;
        Ok(self.values.iter().zip(&other.values).all(|(a, b)| a <= b))
    }
}
