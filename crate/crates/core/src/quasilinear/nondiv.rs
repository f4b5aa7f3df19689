use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::solver::{IterationRecord, SolveReport, StepKind};
use crate::energy::{energy_measure, CellMeasure, DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::linalg::{self, SpdSolver, SymAssembler};

/// A function-valued map `b` on fields, evaluated cell by cell from the
/// gradient density `d_w = Γ(u)(w) / m(w)`.
pub trait FieldFunctional: Send + Sync {
    fn value(&self, cell: usize, density: f64) -> f64;
    /// `c_4` in `‖b(v)‖_{L_2} <= c_4 (1 + ‖v‖_H)`.
    fn growth_constant(&self) -> f64;
}

/// `b(v) = ε ‖v‖`, cell by cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledNorm {
    pub epsilon: f64,
}

impl FieldFunctional for ScaledNorm {
    fn value(&self, _cell: usize, density: f64) -> f64 {
        self.epsilon * density.sqrt()
    }
    fn growth_constant(&self) -> f64 {
        self.epsilon.abs()
    }
}

/// `b(v) = β_w + ε ‖v‖` with a fixed per-cell source `β`.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcedNorm {
    pub source: Vec<f64>,
    pub epsilon: f64,
    /// `‖β‖_{L_2(μ)}`.
    pub source_norm: f64,
}

impl FieldFunctional for SourcedNorm {
    fn value(&self, cell: usize, density: f64) -> f64 {
        self.source[cell] + self.epsilon * density.sqrt()
    }
    fn growth_constant(&self) -> f64 {
        self.source_norm.max(self.epsilon.abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial relaxation `θ` in `u ← (1-θ) u + θ Φ(u)`.
    pub damping: f64,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            damping: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NondivergenceReport {
    pub solve: SolveReport,
    /// Iteration at which the relaxation was first reduced.
    pub damping_activated: Option<usize>,
    /// `E_1(u)`.
    pub e1: f64,
    /// `2c_4²/κ + c_4²/κ²` with `κ = ρ - c_4²/2`, when `κ > 0`.
    pub a_priori_bound: Option<f64>,
}

/// Weak solution of `-Lu + b(∂u) + ρu = 0` by relaxed Picard iteration of
/// `Φ: u ↦ w`, `E(w, v) + ρ⟨w, v⟩ = -⟨b(∂u), v⟩`.
pub fn solve_nondivergence(
    form: &EnergyForm,
    b: &dyn FieldFunctional,
    rho: f64,
    measure: &CellMeasure,
    opts: &PicardOptions,
) -> Result<(DiscreteFunction, NondivergenceReport)> {
    let start = Instant::now();
    if !(rho > 0.0) {
        return Err(Error::Incompatible(format!("rho must be positive, got {rho}")));
    }
    let graph = form.graph();
    measure.check(graph)?;
    if let Some(w) = measure.masses.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::InvalidMeasure(format!("cell {w} has nonpositive mass")));
    }
    let weights = measure.vertex_weights(graph)?;
    let mut asm = SymAssembler::new(graph.n_vertices());
    for (i, j, &v) in form.stiffness().triplet_iter() {
        asm.add(i, j, v);
    }
    for (i, &w) in weights.iter().enumerate() {
        asm.add(i, i, rho * w);
    }
    let op = asm.to_csc();
    let solver = SpdSolver::new(&op)?;
    let k = graph.spec.n_corners as f64;

    let phi = |u: &DiscreteFunction| -> Result<Vec<f64>> {
        let (_, gamma) = energy_measure(form, u, u)?;
        let mut load = vec![0.0; graph.n_vertices()];
        for (w, cell) in graph.cells.iter().enumerate() {
            let beta = b.value(w, gamma.masses[w] / measure.masses[w]);
            for &v in &cell.corners {
                load[v] -= measure.masses[w] * beta / k;
            }
        }
        Ok(solver.solve(&load))
    };
    // Norm of `E(x) + ρ‖x‖²`, the energy of the linear map `Φ`.
    let e1_norm = |x: &[f64]| {
        let kx = linalg::matvec(&op, x);
        linalg::dot(x, &kx).max(0.0).sqrt()
    };

    let mut u = DiscreteFunction::zeros(graph);
    let mut theta = opts.damping;
    let mut damping_activated = None;
    let mut log = Vec::new();
    let mut iterations = 0;
    let mut fu = phi(&u)?;
    let mut residual = e1_norm(&diff(&u.values, &fu));
    while residual >= opts.tol && iterations < opts.max_iter {
        iterations += 1;
        loop {
            let next: Vec<f64> = u
                .values
                .iter()
                .zip(&fu)
                .map(|(a, b)| (1.0 - theta) * a + theta * b)
                .collect();
            let cand = DiscreteFunction::new(graph.level, next);
            let fc = phi(&cand)?;
            let r = e1_norm(&diff(&cand.values, &fc));
            if r < residual || theta < 1e-6 {
                u = cand;
                fu = fc;
                residual = r;
                break;
            }
            theta *= 0.5;
            damping_activated.get_or_insert(iterations);
        }
        log.push(IterationRecord {
            iteration: iterations,
            kind: StepKind::Gradient,
            step: theta,
            objective: e1_norm(&u.values).powi(2),
            residual,
        });
    }
    let e1 = form.energy_of(&u)? + linalg::weighted_dot(&u.values, &u.values, &weights);
    let c4 = b.growth_constant();
    let kappa = rho - 0.5 * c4 * c4;
    let a_priori_bound = (kappa > 0.0).then(|| 2.0 * c4 * c4 / kappa + c4 * c4 / (kappa * kappa));
    let converged = residual < opts.tol;
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            residual,
        });
    }
    Ok((
        u,
        NondivergenceReport {
            solve: SolveReport {
                iterations,
                residual,
                energy: e1,
                wall_time_s: start.elapsed().as_secs_f64(),
                converged,
                log,
            },
            damping_activated,
            e1,
            a_priori_bound,
        },
    ))
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
