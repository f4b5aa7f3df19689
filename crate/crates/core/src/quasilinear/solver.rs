//! Convex minimization behind the divergence-form solvers and the implicit
//! time steps:
//!
//! `Ψ(u) = s Σ_w m(w) G(d_w(u)) + σ/2 uᵀWu - ℓᵀu`, `d_w = Γ(u)(w) / m(w)`,
//!
//! whose critical points solve `s ⟨a(∂u), ∂v⟩_H + σ⟨u, v⟩ = ℓ(v)`.

use std::time::Instant;

use nalgebra_sparse::CscMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coefficient::MonotoneCoefficient;
use crate::energy::{CellMeasure, DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::linalg::{self, SpdSolver, SymAssembler};
use crate::topology::LevelGraph;

/// How the constant functions are removed from the solution space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Measure-mean zero; the load must have measure-mean zero as well.
    ZeroMean,
    /// Prescribed values on the listed vertices.
    Dirichlet(Vec<(usize, f64)>),
    /// No constraint; only valid with a positive mass shift.
    None,
}

impl Constraint {
    /// Homogeneous Dirichlet data on the boundary `V_0`.
    pub fn boundary_zero(graph: &LevelGraph) -> Self {
        Constraint::Dirichlet(graph.boundary.iter().map(|&v| (v, 0.0)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Target for the dual-norm residual.
    pub tol: f64,
    pub max_iter: usize,
    /// `ε` in the regularized density `d + ε²`.
    pub regularization: f64,
    /// Initial step of the preconditioned gradient phase.
    pub damping: f64,
    /// Gradient steps before Newton steps are attempted.
    pub gradient_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            regularization: 1e-10,
            damping: 1.0,
            gradient_steps: 5,
        }
    }
}

impl SolverOptions {
    pub fn from_tolerances(t: &crate::Tolerances) -> Self {
        Self {
            tol: t.solver_tol,
            max_iter: t.solver_max_iter,
            regularization: t.regularization,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Gradient,
    Newton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub kind: StepKind,
    pub step: f64,
    pub objective: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Dual norm of the unregularized Galerkin residual.
    pub residual: f64,
    /// Value of the minimized functional.
    pub energy: f64,
    pub wall_time_s: f64,
    pub converged: bool,
    pub log: Vec<IterationRecord>,
}

/// A fully specified minimization problem.
pub struct MonotoneProblem<'a> {
    graph: &'a LevelGraph,
    stiffness: &'a CscMatrix<f64>,
    coeff: &'a dyn MonotoneCoefficient,
    masses: Vec<f64>,
    weights: Vec<f64>,
    scale: f64,
    shift: f64,
    load: Vec<f64>,
    /// Fixed value per vertex, if any.
    fixed: Vec<Option<f64>>,
    free: Vec<usize>,
    project_mean: bool,
}

struct CellState {
    alpha: f64,
    alpha_prime: f64,
    mass: f64,
    /// `K_w u` on the cell corners.
    kwu: Vec<f64>,
}

impl<'a> MonotoneProblem<'a> {
    /// `s ⟨a(∂u), ∂v⟩_H + σ ⟨u, v⟩_W = ⟨load, v⟩` for all admissible `v`.
    pub fn new(
        form: &'a EnergyForm,
        coeff: &'a dyn MonotoneCoefficient,
        measure: &CellMeasure,
        scale: f64,
        shift: f64,
        load: Vec<f64>,
        constraint: &Constraint,
    ) -> Result<Self> {
        let graph = form.graph();
        measure.check(graph)?;
        if let Some(w) = measure.masses.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::InvalidMeasure(format!(
                "cell {w} has nonpositive mass; gradient densities are undefined"
            )));
        }
        if load.len() != graph.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: graph.n_vertices(),
                found: load.len(),
            });
        }
        if !(scale > 0.0) || shift < 0.0 {
            return Err(Error::Incompatible("scale must be positive, shift nonnegative".into()));
        }
        let weights = measure.vertex_weights(graph)?;
        let n = graph.n_vertices();
        let mut fixed = vec![None; n];
        let mut project_mean = false;
        match constraint {
            Constraint::ZeroMean => {
                let total: f64 = load.iter().sum();
                let size: f64 = load.iter().map(|x| x.abs()).sum::<f64>().max(1.0);
                if total.abs() > 1e-10 * size {
                    return Err(Error::Incompatible(format!(
                        "zero-mean constraint needs a mean-zero load, got {total:e}"
                    )));
                }
                if shift == 0.0 {
                    fixed[0] = Some(0.0);
                }
                project_mean = true;
            }
            Constraint::Dirichlet(data) => {
                if data.is_empty() {
                    return Err(Error::EmptyBoundary);
                }
                for &(v, x) in data {
                    if v >= n {
                        return Err(Error::Incompatible(format!("vertex {v} out of range")));
                    }
                    fixed[v] = Some(x);
                }
            }
            Constraint::None => {
                if shift == 0.0 {
                    return Err(Error::Incompatible(
                        "unconstrained problem is singular; choose zero-mean or Dirichlet".into(),
                    ));
                }
            }
        }
        let free = (0..n).filter(|&i| fixed[i].is_none()).collect();
        Ok(Self {
            graph,
            stiffness: form.stiffness(),
            coeff,
            masses: measure.masses.clone(),
            weights,
            scale,
            shift,
            load,
            fixed,
            free,
            project_mean,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn cell_states(&self, u: &[f64], eps2: f64) -> Vec<CellState> {
        let g = self.graph;
        let c = g.conductance;
        (0..g.n_cells())
            .into_par_iter()
            .map(|w| {
                let corners = &g.cells[w].corners;
                let mut kwu = vec![0.0; corners.len()];
                let mut gamma = 0.0;
                for e in &g.edges[g.cell_edge_range(w)] {
                    let diff = u[e.u] - u[e.v];
                    gamma += c * diff * diff;
                    let iu = corners.iter().position(|&x| x == e.u).expect("edge in cell");
                    let iv = corners.iter().position(|&x| x == e.v).expect("edge in cell");
                    kwu[iu] += c * diff;
                    kwu[iv] -= c * diff;
                }
                let mass = self.masses[w];
                let d = gamma / mass + eps2;
                CellState {
                    alpha: self.coeff.alpha(d),
                    alpha_prime: self.coeff.alpha_prime(d),
                    mass,
                    kwu,
                }
            })
            .collect()
    }

    /// `Ψ(u)`.
    pub fn objective(&self, u: &[f64], eps: f64) -> f64 {
        let g = self.graph;
        let c = g.conductance;
        let eps2 = eps * eps;
        let g0 = self.coeff.potential(eps2);
        let cells: f64 = (0..g.n_cells())
            .into_par_iter()
            .map(|w| {
                let gamma: f64 = g.edges[g.cell_edge_range(w)]
                    .iter()
                    .map(|e| c * (u[e.u] - u[e.v]).powi(2))
                    .sum();
                let m = self.masses[w];
                m * (self.coeff.potential(gamma / m + eps2) - g0)
            })
            .collect::<Vec<f64>>()
            .iter()
            .sum();
        self.scale * cells + 0.5 * self.shift * linalg::weighted_dot(u, u, &self.weights)
            - linalg::dot(&self.load, u)
    }

    /// Full-length gradient of `Ψ`.
    pub fn gradient(&self, u: &[f64], eps: f64) -> Vec<f64> {
        let states = self.cell_states(u, eps * eps);
        let mut grad: Vec<f64> = self
            .weights
            .iter()
            .zip(u)
            .zip(&self.load)
            .map(|((w, x), l)| self.shift * w * x - l)
            .collect();
        for (cell, st) in self.graph.cells.iter().zip(&states) {
            for (&v, k) in cell.corners.iter().zip(&st.kwu) {
                grad[v] += self.scale * st.alpha * k;
            }
        }
        grad
    }

    /// Sum of absolute values of the terms entering each gradient entry.
    fn gradient_magnitude(&self, u: &[f64]) -> Vec<f64> {
        let g = self.graph;
        let c = g.conductance;
        let states = self.cell_states(u, 0.0);
        let mut mag: Vec<f64> = self
            .weights
            .iter()
            .zip(u)
            .zip(&self.load)
            .map(|((w, x), l)| (self.shift * w * x).abs() + l.abs())
            .collect();
        for (w, st) in states.iter().enumerate() {
            for e in &g.edges[g.cell_edge_range(w)] {
                let t = (self.scale * st.alpha * c * (u[e.u] - u[e.v])).abs();
                mag[e.u] += t;
                mag[e.v] += t;
            }
        }
        mag
    }

    fn hessian(&self, u: &[f64], eps: f64) -> CscMatrix<f64> {
        let g = self.graph;
        let c = g.conductance;
        let states = self.cell_states(u, eps * eps);
        let mut asm = SymAssembler::new(g.n_vertices());
        for (w, st) in states.iter().enumerate() {
            for e in &g.edges[g.cell_edge_range(w)] {
                asm.add_edge(e.u, e.v, self.scale * st.alpha * c);
            }
            if st.alpha_prime != 0.0 {
                let f = self.scale * 2.0 * st.alpha_prime / st.mass;
                let corners = &g.cells[w].corners;
                for (i, &a) in corners.iter().enumerate() {
                    for (j, &b) in corners.iter().enumerate() {
                        asm.add(a, b, f * st.kwu[i] * st.kwu[j]);
                    }
                }
            }
        }
        for (i, &w) in self.weights.iter().enumerate() {
            if self.shift > 0.0 {
                asm.add(i, i, self.shift * w);
            }
        }
        linalg::restrict(&asm.to_csc(), &self.free)
    }

    fn preconditioner(&self) -> Result<SpdSolver> {
        let mut asm = SymAssembler::new(self.graph.n_vertices());
        for (i, j, &v) in self.stiffness.triplet_iter() {
            asm.add(i, j, self.scale * v);
        }
        if self.shift > 0.0 {
            for (i, &w) in self.weights.iter().enumerate() {
                asm.add(i, i, self.shift * w);
            }
        }
        SpdSolver::new(&linalg::restrict(&asm.to_csc(), &self.free))
    }

    fn free_part(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| x[i]).collect()
    }

    fn initial(&self, guess: Option<&[f64]>) -> Vec<f64> {
        let n = self.graph.n_vertices();
        let mut u = guess.map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for (i, f) in self.fixed.iter().enumerate() {
            if let Some(x) = f {
                u[i] = *x;
            }
        }
        u
    }

    /// Dual residual `sqrt(gᵀ P⁻¹ g)` of the unregularized problem.
    pub fn residual(&self, u: &[f64]) -> Result<f64> {
        let p = self.preconditioner()?;
        let g = self.free_part(&self.gradient(u, 0.0));
        Ok(linalg::dot(&g, &p.solve(&g)).max(0.0).sqrt())
    }

    pub fn solve(&self, guess: Option<&[f64]>, opts: &SolverOptions) -> Result<(Vec<f64>, SolveReport)> {
        let start = Instant::now();
        let eps = opts.regularization;
        let precond = self.preconditioner()?;
        let dual = |g: &[f64]| linalg::dot(g, &precond.solve(g)).max(0.0).sqrt();
        let mut u = self.initial(guess);
        if let Some(g) = guess {
            if g.len() != u.len() {
                return Err(Error::LengthMismatch {
                    expected: u.len(),
                    found: g.len(),
                });
            }
        }
        let mut psi = self.objective(&u, eps);
        let mut log = Vec::new();
        let mut grad_step = opts.damping;
        let mut iterations = 0;
        let mut residual = dual(&self.free_part(&self.gradient(&u, 0.0)));
        let energy_slack = |x: f64| 1e-12 * x.abs().max(1.0);

        // Residuals below the cancellation error of the gradient are not
        // observable; the target is clamped to that floor.
        let floor = |u: &[f64]| 64.0 * f64::EPSILON * dual(&self.free_part(&self.gradient_magnitude(u)));
        let mut target = opts.tol.max(floor(&u));

        while residual >= target && iterations < opts.max_iter {
            iterations += 1;
            let g = self.free_part(&self.gradient(&u, eps));
            let mut newton = None;
            if iterations > opts.gradient_steps {
                if let Ok(chol) = SpdSolver::new(&self.hessian(&u, eps)) {
                    let d: Vec<f64> = chol.solve(&g).iter().map(|x| -x).collect();
                    if d.iter().all(|x| x.is_finite()) && linalg::dot(&g, &d) < 0.0 {
                        newton = Some(d);
                    }
                }
            }
            let (kind, dir, mut t) = match newton {
                Some(d) => (StepKind::Newton, d, 1.0),
                None => (
                    StepKind::Gradient,
                    precond.solve(&g).iter().map(|x| -x).collect(),
                    grad_step,
                ),
            };
            let slope = linalg::dot(&g, &dir);
            let mut trial = u.clone();
            let mut accepted = false;
            let mut new_psi = psi;
            if kind == StepKind::Newton {
                // Near the minimizer Ψ differences fall below rounding, so the
                // full step is judged by the residual first.
                for (k, &i) in self.free.iter().enumerate() {
                    trial[i] = u[i] + dir[k];
                }
                let v = self.objective(&trial, eps);
                if v <= psi + 1e-4 * slope
                    || (v <= psi + energy_slack(psi)
                        && dual(&self.free_part(&self.gradient(&trial, 0.0))) < 0.5 * residual)
                {
                    new_psi = v;
                    accepted = true;
                }
            }
            if !accepted {
                for _ in 0..60 {
                    for (k, &i) in self.free.iter().enumerate() {
                        trial[i] = u[i] + t * dir[k];
                    }
                    new_psi = self.objective(&trial, eps);
                    if new_psi <= psi + 1e-4 * t * slope {
                        accepted = true;
                        break;
                    }
                    t *= 0.5;
                }
            }
            if !accepted {
                break;
            }
            if kind == StepKind::Gradient {
                grad_step = (2.0 * t).min(1e6);
            }
            u = trial;
            psi = new_psi;
            residual = dual(&self.free_part(&self.gradient(&u, 0.0)));
            target = opts.tol.max(floor(&u));
            log.push(IterationRecord {
                iteration: iterations,
                kind,
                step: t,
                objective: psi,
                residual,
            });
        }

        if self.project_mean {
            let total: f64 = self.weights.iter().sum();
            let mean = linalg::dot(&u, &self.weights) / total;
            u.iter_mut().for_each(|x| *x -= mean);
            psi = self.objective(&u, eps);
        }
        let converged = residual < target;
        let report = SolveReport {
            iterations,
            residual,
            energy: psi,
            wall_time_s: start.elapsed().as_secs_f64(),
            converged,
            log,
        };
        if !converged {
            return Err(Error::NotConverged {
                iterations,
                residual,
            });
        }
        Ok((u, report))
    }
}

/// Weak solution of `∂*a(∂u) = f`: `⟨a(∂u), ∂v⟩_H = -⟨f, v⟩_{L_2(μ)}`.
pub fn solve_divergence_form(
    form: &EnergyForm,
    coeff: &dyn MonotoneCoefficient,
    f: &DiscreteFunction,
    measure: &CellMeasure,
    constraint: &Constraint,
    opts: &SolverOptions,
    guess: Option<&DiscreteFunction>,
) -> Result<(DiscreteFunction, SolveReport)> {
    let graph = form.graph();
    f.check(graph)?;
    let w = measure.vertex_weights(graph)?;
    let load: Vec<f64> = f.values.iter().zip(&w).map(|(x, m)| -x * m).collect();
    let problem = MonotoneProblem::new(form, coeff, measure, 1.0, 0.0, load, constraint)?;
    let (u, report) = problem.solve(guess.map(|g| g.values.as_slice()), opts)?;
    Ok((DiscreteFunction::new(graph.level, u), report))
}

/// Weak solution of `Δ_p u = f`.
pub fn solve_p_laplace(
    form: &EnergyForm,
    f: &DiscreteFunction,
    p: f64,
    measure: &CellMeasure,
    constraint: &Constraint,
    opts: &SolverOptions,
) -> Result<(DiscreteFunction, SolveReport)> {
    let coeff = super::coefficient::PLaplace::new(p)?;
    solve_divergence_form(form, &coeff, f, measure, constraint, opts, None)
}

/// Largest `|⟨a(∂u), ∂v⟩ + ⟨f, v⟩|` over the hat functions `v` of the free
/// vertices.
pub fn weak_residual_max(
    form: &EnergyForm,
    coeff: &dyn MonotoneCoefficient,
    u: &DiscreteFunction,
    f: &DiscreteFunction,
    measure: &CellMeasure,
    constraint: &Constraint,
) -> Result<f64> {
    let graph = form.graph();
    let w = measure.vertex_weights(graph)?;
    let load: Vec<f64> = f.values.iter().zip(&w).map(|(x, m)| -x * m).collect();
    let problem = MonotoneProblem::new(form, coeff, measure, 1.0, 0.0, load, constraint)?;
    let g = problem.gradient(&u.values, 0.0);
    Ok(problem.free.iter().map(|&i| g[i].abs()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{harmonic_coordinates, kusuoka_measure, solve_dirichlet, uniform_measure};
    use crate::fields::p_energy;
    use crate::quasilinear::coefficient::{Identity, PLaplace};
    use crate::topology::FractalSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sg(m: usize) -> (EnergyForm, CellMeasure) {
        let form = EnergyForm::build(&FractalSpec::sierpinski_gasket(), m).unwrap();
        let mu = kusuoka_measure(&form, &harmonic_coordinates(&form).unwrap()).unwrap();
        (form, mu)
    }

    fn centered_load(form: &EnergyForm, mu: &CellMeasure, seed: u64) -> DiscreteFunction {
        let g = form.graph();
        let w = mu.vertex_weights(g).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f: Vec<f64> = (0..g.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = linalg::dot(&f, &w) / w.iter().sum::<f64>();
        f.iter_mut().for_each(|x| *x -= mean);
        DiscreteFunction::new(g.level, f)
    }

    #[test]
    fn identity_matches_linear_solve() {
        let (form, mu) = sg(3);
        let g = form.graph();
        let f = centered_load(&form, &mu, 1);
        let (u, rep) = solve_divergence_form(
            &form,
            &Identity,
            &f,
            &mu,
            &Constraint::ZeroMean,
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        assert!(rep.converged);
        // K u = -W f on the mean-zero complement.
        let w = mu.vertex_weights(g).unwrap();
        let ku = form.laplacian_rows(&u).unwrap();
        for i in 0..g.n_vertices() {
            assert!((ku[i] + w[i] * f.values[i]).abs() < 1e-10);
        }
        assert!(linalg::dot(&u.values, &w).abs() < 1e-12);
    }

    #[test]
    fn zero_load_gives_zero() {
        let (form, mu) = sg(2);
        let f = DiscreteFunction::zeros(form.graph());
        let (u, _) = solve_p_laplace(&form, &f, 4.0, &mu, &Constraint::ZeroMean, &SolverOptions::default())
            .unwrap();
        assert!(u.max_abs() == 0.0);
    }

    #[test]
    fn p4_converges_with_descent() {
        let (form, mu) = sg(3);
        let f = centered_load(&form, &mu, 2);
        let (u, rep) =
            solve_p_laplace(&form, &f, 4.0, &mu, &Constraint::ZeroMean, &SolverOptions::default())
                .unwrap();
        assert!(rep.residual < 1e-9);
        let mut prev = 0.0f64;
        for r in &rep.log {
            assert!(r.objective <= prev + 1e-12 * prev.abs().max(1.0));
            prev = r.objective;
        }
        let res = weak_residual_max(&form, &PLaplace::new(4.0).unwrap(), &u, &f, &mu, &Constraint::ZeroMean)
            .unwrap();
        assert!(res < 1e-8, "{res}");
        assert!(p_energy(&form, &u, &mu, 4.0).unwrap() > 0.0);
    }

    #[test]
    fn incompatible_load_rejected() {
        let (form, mu) = sg(2);
        let f = DiscreteFunction::constant(form.graph(), 1.0);
        let r = solve_p_laplace(&form, &f, 3.0, &mu, &Constraint::ZeroMean, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Incompatible(_))));
        let r = solve_p_laplace(&form, &f, 3.0, &mu, &Constraint::None, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Incompatible(_))));
    }

    #[test]
    fn dirichlet_harmonic() {
        let form = EnergyForm::build(&FractalSpec::sierpinski_gasket(), 3).unwrap();
        let g = form.graph();
        let mu = uniform_measure(g);
        let data = vec![(g.boundary[0], 1.0), (g.boundary[1], 0.0), (g.boundary[2], -0.5)];
        let f = DiscreteFunction::zeros(g);
        let (u, _) = solve_divergence_form(
            &form,
            &Identity,
            &f,
            &mu,
            &Constraint::Dirichlet(data.clone()),
            &SolverOptions::default(),
            None,
        )
        .unwrap();
        let h = solve_dirichlet(g, &data).unwrap();
        for (a, b) in u.values.iter().zip(&h.values) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn not_converged_is_reported() {
        let (form, mu) = sg(3);
        let f = centered_load(&form, &mu, 3);
        let opts = SolverOptions {
            max_iter: 2,
            ..SolverOptions::default()
        };
        let r = solve_p_laplace(&form, &f, 4.0, &mu, &Constraint::ZeroMean, &opts);
        assert!(matches!(r, Err(Error::NotConverged { iterations: 2, .. })));
    }
}
