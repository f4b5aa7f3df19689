//! Graph Dirichlet forms, energy measures and weighted Laplacians.

mod coords;
mod form;
mod measure;
mod spectrum;

pub use coords::{coordinate_boundary_data, harmonic_coordinates};
pub use form::{
    boundary_data, harmonic_extension, solve_dirichlet, DiscreteFunction, EnergyForm,
    HarmonicExtender,
};
pub use measure::{
    energy_measure, general_energy_dominant_measure, kusuoka_measure, self_similar_measure,
    uniform_measure, CellMeasure, DominantMeasure, EdgeMeasure,
};
pub use spectrum::{
    laplacian, max_resistance_from, poincare_constant, rayleigh_quotient,
    resistance_poincare_bound, PoincareOptions, PoincareReport, SpectrumResult, WeightedLaplacian,
};
