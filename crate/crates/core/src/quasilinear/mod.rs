//! Monotone quasilinear problems in divergence and non-divergence form.

mod coefficient;
mod conditions;
mod nondiv;
mod solver;

pub use coefficient::{Identity, MonotoneCoefficient, PLaplace, ShiftedPLaplace};
pub use conditions::{verify_conditions, ConditionCheck, ConditionReport, FieldContext};
pub use nondiv::{
    solve_nondivergence, FieldFunctional, NondivergenceReport, PicardOptions, ScaledNorm,
    SourcedNorm,
};
pub use solver::{
    solve_divergence_form, solve_p_laplace, weak_residual_max, Constraint, IterationRecord,
    MonotoneProblem, SolveReport, SolverOptions, StepKind,
};
