//! Vector fields, fiber metrics and `L_p` norms.

mod direct;
mod field;
mod kusuoka;
mod norms;

pub use direct::{direct_integral_check, DirectIntegralReport, FiberFrame, FiberSection};
pub use field::{
    divergence, divergence_matrix, energy_measure_functional, field_inner, field_norm_sq,
    generator_times, gradient, gradient_matrix, weighted_energy_measure,
    weighted_energy_measure_pair, FieldTerm, Functional, VectorField,
};
pub use kusuoka::{kusuoka_matrices, martingale_defect, CellGram, EigenStats, FiberMetric};
pub use norms::{
    conjugate_exponent, lp_field_norm, lp_function_norm_pow, p_energy, p_energy_pair,
    singular_cells,
};
