//! Energy forms, vector fields and monotone solvers on finitely ramified
//! fractals at level-`m` graph resolution.

pub mod config;
pub mod energy;
pub mod error;
pub mod fields;
pub mod linalg;
pub mod quasilinear;
pub mod spde;
pub mod topology;

pub use config::Tolerances;
pub use energy::{CellMeasure, DiscreteFunction, EnergyForm, SpectrumResult};
pub use error::{Error, Result};
pub use fields::{CellGram, FiberMetric, VectorField};
pub use topology::{build_level, CellAddress, FractalSpec, LevelGraph, RefineMode};
pub use quasilinear::{MonotoneCoefficient, SolveReport};
