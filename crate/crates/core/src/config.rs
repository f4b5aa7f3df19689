use serde::{Deserialize, Serialize};

/// Numerical tolerances shared by the kernels. Every field can be
/// overridden from a run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Largest problem handled by the dense eigensolver.
    pub dense_eigen_limit: usize,
    pub eigen_residual: f64,
    pub eigen_max_iter: usize,
    pub eigen_seed: u64,
    /// Pool members with smaller energy are rejected.
    pub zero_energy: f64,
    /// Dual-norm residual target of the monotone solvers.
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Regularization `ε` in `(d + ε²)^{(p-2)/2}`.
    pub regularization: f64,
    pub representability: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            dense_eigen_limit: 2000,
            eigen_residual: 1e-10,
            eigen_max_iter: 2000,
            eigen_seed: 0,
            zero_energy: 1e-14,
            solver_tol: 1e-9,
            solver_max_iter: 200,
            regularization: 1e-10,
            representability: 1e-9,
        }
    }
}
