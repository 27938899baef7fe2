//! qvikit computes minimal and maximal solutions of obstacle-type
//! quasi-variational inequalities by monotone fixed-point iteration, probes
//! their stability under forcing-term perturbations, and solves the reduced
//! set-valued optimal control problem over piecewise-constant controls.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`]: uniform grids and the node-indexed function types;
//! * [`order`]: componentwise lattice operations and the extremal
//!   fixed-point engine for increasing maps;
//! * [`elliptic`]: the discrete elliptic operator and unconstrained solves;
//! * [`vi`]: projected Gauss-Seidel for the upper-obstacle VI plus an
//!   exhaustive active-set oracle;
//! * [`obstacles`]: the impulse-control and coupled VI-PDE obstacle maps
//!   with randomized property probes;
//! * [`qvi`]: the fixed-point map `y -> S(f, Phi(y))` and its extremal
//!   solutions;
//! * [`stability`]: perturbation experiments (scalar counterexample,
//!   monotone plans, envelope sandwich);
//! * [`control`]: derivative-free search over the control box;
//! * [`config`], [`report`], [`runner`]: the config-driven experiment
//!   front end used by the `qvikit` binary.
//!
//! The `examples/` directory contains one runnable walk-through per major
//! capability; start with `cargo run --example extremal_solve`.

// `!(x > 0.0)`-style guards deliberately treat NaN as invalid input.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod control;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod obstacles;
pub mod order;
pub mod qvi;
pub mod report;
pub mod runner;
pub mod stability;
pub mod vi;

pub use error::{Error, Result};
pub use grid::{Boundary, DualVector, GridFunction, GridSpec, Obstacle};
pub use order::{
    extremal_fixed_point, inf2, leq, leq_with_slack, pos_part, sup2, Direction, ExtremalReport,
    IncreasingMap, OrderInterval,
};
