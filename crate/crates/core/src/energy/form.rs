use std::sync::Arc;

use nalgebra_sparse::CscMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdSolver, SymAssembler};
use crate::topology::{build_level, FractalSpec, LevelGraph};

/// A real value per vertex of `V_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFunction {
    pub level: usize,
    pub values: Vec<f64>,
}

impl DiscreteFunction {
    pub fn new(level: usize, values: Vec<f64>) -> Self {
        Self { level, values }
    }

    pub fn on(graph: &LevelGraph, values: Vec<f64>) -> Result<Self> {
        if values.len() != graph.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: graph.n_vertices(),
                found: values.len(),
            });
        }
        Ok(Self::new(graph.level, values))
    }

    pub fn constant(graph: &LevelGraph, c: f64) -> Self {
        Self::new(graph.level, vec![c; graph.n_vertices()])
    }

    pub fn zeros(graph: &LevelGraph) -> Self {
        Self::constant(graph, 0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.level, self.values.iter().map(|&x| f(x)).collect())
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self::new(
            self.level,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn scaled(&self, s: f64) -> Self {
        self.map(|x| s * x)
    }

    pub fn product(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub(crate) fn check(&self, graph: &LevelGraph) -> Result<()> {
        if self.level != graph.level {
            return Err(Error::LevelMismatch {
                expected: graph.level,
                found: self.level,
            });
        }
        if self.values.len() != graph.n_vertices() {
            return Err(Error::LengthMismatch {
                expected: graph.n_vertices(),
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Renormalized graph energy `E_m(f, g) = r^{-m} Σ_edges (f(u)-f(v))(g(u)-g(v))`.
#[derive(Clone, Debug)]
pub struct EnergyForm {
    graph: Arc<LevelGraph>,
    stiffness: CscMatrix<f64>,
}

impl EnergyForm {
    pub fn new(graph: Arc<LevelGraph>) -> Self {
        let mut asm = SymAssembler::new(graph.n_vertices());
        let c = graph.conductance;
        for e in &graph.edges {
            asm.add_edge(e.u, e.v, c);
        }
        Self {
            stiffness: asm.to_csc(),
            graph,
        }
    }

    pub fn build(spec: &FractalSpec, level: usize) -> Result<Self> {
        Ok(Self::new(Arc::new(build_level(spec, level)?)))
    }

    pub fn graph(&self) -> &LevelGraph {
        &self.graph
    }

    pub fn graph_arc(&self) -> Arc<LevelGraph> {
        Arc::clone(&self.graph)
    }

    pub fn level(&self) -> usize {
        self.graph.level
    }

    pub fn conductance(&self) -> f64 {
        self.graph.conductance
    }

    /// Assembled sparse matrix `K` with `E(f, g) = f^T K g`.
    pub fn stiffness(&self) -> &CscMatrix<f64> {
        &self.stiffness
    }

    pub fn energy(&self, f: &DiscreteFunction, g: &DiscreteFunction) -> Result<f64> {
        f.check(&self.graph)?;
        g.check(&self.graph)?;
        let (fv, gv) = (&f.values, &g.values);
        let sum: f64 = self
            .graph
            .edges
            .iter()
            .map(|e| (fv[e.u] - fv[e.v]) * (gv[e.u] - gv[e.v]))
            .sum();
        Ok(self.graph.conductance * sum)
    }

    pub fn energy_of(&self, f: &DiscreteFunction) -> Result<f64> {
        self.energy(f, f)
    }

    /// Row residuals `(K f)_v`; zero at interior vertices of a harmonic `f`.
    pub fn laplacian_rows(&self, f: &DiscreteFunction) -> Result<Vec<f64>> {
        f.check(&self.graph)?;
        Ok(linalg::matvec(&self.stiffness, &f.values))
    }
}

/// Local harmonic extension rule of a spec, obtained by minimizing the
/// level-1 energy with the `V_0` values fixed.
#[derive(Clone, Debug)]
pub struct HarmonicExtender {
    level1: LevelGraph,
    /// `weights[v][b]`: value at level-1 vertex `v` of the harmonic function
    /// equal to the indicator of `q_b` on `V_0`.
    weights: Vec<Vec<f64>>,
}

impl HarmonicExtender {
    pub fn new(spec: &FractalSpec) -> Result<Self> {
        let level1 = build_level(spec, 1)?;
        let k = spec.n_corners;
        let mut weights = vec![vec![0.0; k]; level1.n_vertices()];
        for b in 0..k {
            let data: Vec<(usize, f64)> = level1
                .boundary
                .iter()
                .enumerate()
                .map(|(a, &v)| (v, if a == b { 1.0 } else { 0.0 }))
                .collect();
            let h = solve_dirichlet(&level1, &data)?;
            for (v, row) in weights.iter_mut().enumerate() {
                row[b] = h.values[v];
            }
        }
        Ok(Self { level1, weights })
    }

    /// Extends `f` from `coarse` (level `m`) to `fine` (level `m + 1`).
    pub fn extend(
        &self,
        coarse: &LevelGraph,
        f: &DiscreteFunction,
        fine: &LevelGraph,
    ) -> Result<DiscreteFunction> {
        f.check(coarse)?;
        if fine.level != coarse.level + 1 || fine.spec != coarse.spec {
            return Err(Error::LevelMismatch {
                expected: coarse.level + 1,
                found: fine.level,
            });
        }
        let n = coarse.spec.n_maps;
        let mut out = vec![0.0; fine.n_vertices()];
        for (c, cell) in coarse.cells.iter().enumerate() {
            let corner_values: Vec<f64> = cell.corners.iter().map(|&v| f.values[v]).collect();
            for i in 0..n {
                let child = &fine.cells[c * n + i];
                let local = &self.level1.cells[i];
                for (a, &v) in child.corners.iter().enumerate() {
                    let row = &self.weights[local.corners[a]];
                    out[v] = row.iter().zip(&corner_values).map(|(w, x)| w * x).sum();
                }
            }
        }
        Ok(DiscreteFunction::new(fine.level, out))
    }

    /// Repeated extension up to the level of `target`.
    pub fn extend_to(
        &self,
        coarse: &LevelGraph,
        f: &DiscreteFunction,
        target: &LevelGraph,
    ) -> Result<DiscreteFunction> {
        let mut g = coarse.clone();
        let mut h = f.clone();
        while g.level < target.level {
            let next = if g.level + 1 == target.level {
                target.clone()
            } else {
                build_level(&g.spec, g.level + 1)?
            };
            h = self.extend(&g, &h, &next)?;
            g = next;
        }
        if g.level != target.level {
            return Err(Error::LevelMismatch {
                expected: target.level,
                found: coarse.level,
            });
        }
        Ok(h)
    }
}

/// Harmonic extension of `f` from level `m` to `m + 1`.
pub fn harmonic_extension(
    coarse: &LevelGraph,
    f: &DiscreteFunction,
    fine: &LevelGraph,
) -> Result<DiscreteFunction> {
    HarmonicExtender::new(&coarse.spec)?.extend(coarse, f, fine)
}

/// Energy minimizer with prescribed values on `boundary`.
pub fn solve_dirichlet(graph: &LevelGraph, boundary: &[(usize, f64)]) -> Result<DiscreteFunction> {
    if boundary.is_empty() {
        return Err(Error::EmptyBoundary);
    }
    let n = graph.n_vertices();
    let mut fixed = vec![None; n];
    for &(v, x) in boundary {
        if v >= n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: v,
            });
        }
        fixed[v] = Some(x);
    }
    let free: Vec<usize> = (0..n).filter(|&v| fixed[v].is_none()).collect();
    let mut values: Vec<f64> = fixed.iter().map(|x| x.unwrap_or(0.0)).collect();
    if free.is_empty() {
        return Ok(DiscreteFunction::new(graph.level, values));
    }
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in free.iter().enumerate() {
        pos[v] = i;
    }
    // unit conductances; the Dirichlet solution does not depend on scaling
    let mut asm = SymAssembler::new(free.len());
    let mut rhs = vec![0.0; free.len()];
    for e in &graph.edges {
        match (pos[e.u], pos[e.v]) {
            (usize::MAX, usize::MAX) => {}
            (usize::MAX, j) => {
                asm.add(j, j, 1.0);
                rhs[j] += values[e.u];
            }
            (i, usize::MAX) => {
                asm.add(i, i, 1.0);
                rhs[i] += values[e.v];
            }
            (i, j) => asm.add_edge(i, j, 1.0),
        }
    }
    let x = SpdSolver::new(&asm.to_csc())?.solve(&rhs);
    for (i, &v) in free.iter().enumerate() {
        values[v] = x[i];
    }
    Ok(DiscreteFunction::new(graph.level, values))
}

/// Dirichlet data placing `values[a]` on the boundary corner `q_a`.
pub fn boundary_data(graph: &LevelGraph, values: &[f64]) -> Vec<(usize, f64)> {
    graph.boundary.iter().copied().zip(values.iter().copied()).collect()
}
