//! Fiberwise representation of cell-wise fields in harmonic coordinates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::field::{field_inner, VectorField};
use super::kusuoka::CellGram;
use crate::energy::{harmonic_coordinates, DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::topology::LevelGraph;

/// A section of the fiber bundle: one coordinate vector per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberSection {
    pub level: usize,
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
}

impl FiberSection {
    /// The constant section `e_i`.
    pub fn coordinate(level: usize, n_cells: usize, dim: usize, i: usize) -> Self {
        let mut e = vec![0.0; dim];
        e[i] = 1.0;
        Self {
            level,
            dim,
            vectors: vec![e; n_cells],
        }
    }
}

/// Harmonic-coordinate data needed to map fields into fibers.
pub struct FiberFrame {
    pub coords: Vec<DiscreteFunction>,
    pub gram: CellGram,
    /// Per cell, the LU factors of `[φ_i(c_j) - φ_i(c_0)]_{j,i}`.
    solvers: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl FiberFrame {
    pub fn new(form: &EnergyForm) -> Result<Self> {
        let graph = form.graph();
        let coords = harmonic_coordinates(form)?;
        let gram = CellGram::from_coordinates(graph, &coords)?;
        let d = coords.len();
        if graph.spec.n_corners != d + 1 {
            return Err(Error::Unsupported(graph.spec.name.clone()));
        }
        let mut solvers = Vec::with_capacity(graph.n_cells());
        for (w, cell) in graph.cells.iter().enumerate() {
            let c0 = cell.corners[0];
            let a = DMatrix::from_fn(d, d, |j, i| {
                coords[i].values[cell.corners[j + 1]] - coords[i].values[c0]
            });
            let lu = a.lu();
            if !lu.is_invertible() {
                return Err(Error::LinearAlgebra(format!(
                    "harmonic coordinates degenerate on cell {w}"
                )));
            }
            solvers.push(lu);
        }
        Ok(Self {
            coords,
            gram,
            solvers,
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Fiber coordinates of `∂f` on cell `w`.
    fn local(&self, graph: &LevelGraph, w: usize, f: &DiscreteFunction) -> Vec<f64> {
        let cell = &graph.cells[w];
        let f0 = f.values[cell.corners[0]];
        let rhs = DVector::from_iterator(
            self.dim(),
            cell.corners[1..].iter().map(|&c| f.values[c] - f0),
        );
        self.solvers[w]
            .solve(&rhs)
            .expect("factor checked invertible")
            .iter()
            .copied()
            .collect()
    }

    /// Fiber section of a cell-wise field.
    pub fn section(&self, graph: &LevelGraph, v: &VectorField) -> Result<FiberSection> {
        if v.level != graph.level {
            return Err(Error::LevelMismatch {
                expected: graph.level,
                found: v.level,
            });
        }
        if !v.is_cellwise(graph) {
            return Err(Error::NotCellwise(
                "weights vary across the edges of a cell".into(),
            ));
        }
        let d = self.dim();
        let per = graph.edges_per_cell();
        let mut vectors = vec![vec![0.0; d]; graph.n_cells()];
        for t in &v.terms {
            t.base.check(graph)?;
            for (w, out) in vectors.iter_mut().enumerate() {
                let g = t.weight[w * per];
                if g == 0.0 {
                    continue;
                }
                for (o, a) in out.iter_mut().zip(self.local(graph, w, &t.base)) {
                    *o += g * a;
                }
            }
        }
        Ok(FiberSection {
            level: graph.level,
            dim: d,
            vectors,
        })
    }

    /// `Σ_w a_wᵀ M_w b_w`.
    pub fn pairing(&self, a: &FiberSection, b: &FiberSection) -> Result<f64> {
        if a.vectors.len() != self.gram.n_cells() || b.vectors.len() != self.gram.n_cells() {
            return Err(Error::LengthMismatch {
                expected: self.gram.n_cells(),
                found: a.vectors.len().min(b.vectors.len()),
            });
        }
        let d = self.dim();
        let mut total = 0.0;
        for ((m, x), y) in self.gram.matrices.iter().zip(&a.vectors).zip(&b.vectors) {
            for i in 0..d {
                for j in 0..d {
                    total += x[i] * m[i * d + j] * y[j];
                }
            }
        }
        Ok(total)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectIntegralReport {
    pub global: f64,
    pub fiberwise: f64,
    pub discrepancy: f64,
}

/// Compares `⟨v, w⟩_H` from the tensor expansion with the per-cell
/// contraction of the fiber sections.
pub fn direct_integral_check(
    frame: &FiberFrame,
    graph: &LevelGraph,
    v: &VectorField,
    w: &VectorField,
) -> Result<DirectIntegralReport> {
    let global = field_inner(graph, v, w)?;
    let fiberwise = frame.pairing(&frame.section(graph, v)?, &frame.section(graph, w)?)?;
    Ok(DirectIntegralReport {
        global,
        fiberwise,
        discrepancy: (global - fiberwise).abs(),
    })
}
