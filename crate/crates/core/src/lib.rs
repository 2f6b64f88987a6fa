//! Scheduling of multiport power converters under an electrical-cardinality
//! limit.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] builds the network model and its no-load linearization
//!   (affine voltage magnitudes and a quadratic loss surrogate).
//! * [`program`] assembles one timestep's mixed-integer conic program as a
//!   solver-independent [`ConicProgramIR`].
//! * [`solver`] is a dense primal-dual interior-point method for the
//!   continuous second-order cone relaxation.
//! * [`mip`] runs branch-and-bound over the leg indicator binaries.
//! * [`mission`] schedules a horizon and computes cardinality metrics.
//! * [`oracle`] holds brute-force verification engines.
//! * [`study`] turns a JSON run configuration into horizon inputs.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fixtures;
pub mod grid;
pub mod mip;
pub mod mission;
pub mod oracle;
pub mod program;
pub mod solver;
pub mod study;

pub use error::{Error, Result};
pub use grid::{BusNetwork, LinearizedGrid};
pub use program::{CardinalityLimit, ConicProgramIR, ConverterSpec, TimestepInput};
pub use solver::{ConicSolution, SolveStatus, SolverSettings};
pub use mip::{BnBConfig, MipSolution, MipStatus};
pub use mission::{electrical_cardinality, mec, HorizonInput, MissionProfile};
pub use study::{RunConfig, Study};
