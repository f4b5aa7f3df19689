use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{harmonic_coordinates, CellMeasure, DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::topology::LevelGraph;

/// Per-cell Gram matrices `M_w(i, j) = Γ(φ_i, φ_j)(w)`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGram {
    pub level: usize,
    pub dim: usize,
    pub matrices: Vec<Vec<f64>>,
}

impl CellGram {
    pub fn from_coordinates(graph: &LevelGraph, coords: &[DiscreteFunction]) -> Result<Self> {
        for phi in coords {
            phi.check(graph)?;
        }
        let d = coords.len();
        let c = graph.conductance;
        let matrices = (0..graph.n_cells())
            .into_par_iter()
            .map(|w| {
                let mut m = vec![0.0; d * d];
                for e in &graph.edges[graph.cell_edge_range(w)] {
                    let diffs: Vec<f64> = coords
                        .iter()
                        .map(|phi| phi.values[e.u] - phi.values[e.v])
                        .collect();
                    for i in 0..d {
                        for j in 0..d {
                            m[i * d + j] += c * diffs[i] * diffs[j];
                        }
                    }
                }
                m
            })
            .collect();
        Ok(Self {
            level: graph.level,
            dim: d,
            matrices,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, w: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.matrices[w])
    }

    pub fn trace(&self, w: usize) -> f64 {
        (0..self.dim).map(|i| self.matrices[w][i * self.dim + i]).sum()
    }

    pub fn total_trace(&self) -> f64 {
        (0..self.n_cells()).map(|w| self.trace(w)).sum()
    }

    /// Smallest eigenvalue over all cells.
    pub fn min_eigenvalue(&self) -> f64 {
        (0..self.n_cells())
            .map(|w| sorted_eigenvalues(&self.matrix(w))[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Trace measure `w ↦ tr M_w`, the Kusuoka measure.
    pub fn trace_measure(&self) -> Result<CellMeasure> {
        CellMeasure::new(
            self.level,
            (0..self.n_cells()).map(|w| self.trace(w)).collect(),
            true,
        )
    }
}

/// `Z_n(w) = M_w / m(w)` with its eigenvalues, ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberMetric {
    pub level: usize,
    pub dim: usize,
    pub masses: Vec<f64>,
    pub matrices: Vec<Vec<f64>>,
    pub eigenvalues: Vec<Vec<f64>>,
}

impl FiberMetric {
    pub fn new(gram: &CellGram, measure: &CellMeasure) -> Result<Self> {
        if measure.level != gram.level {
            return Err(Error::LevelMismatch {
                expected: gram.level,
                found: measure.level,
            });
        }
        if measure.n_cells() != gram.n_cells() {
            return Err(Error::LengthMismatch {
                expected: gram.n_cells(),
                found: measure.n_cells(),
            });
        }
        if let Some(w) = measure.masses.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::InvalidMeasure(format!("cell {w} has zero mass")));
        }
        let d = gram.dim;
        let matrices: Vec<Vec<f64>> = gram
            .matrices
            .iter()
            .zip(&measure.masses)
            .map(|(m, &mass)| m.iter().map(|x| x / mass).collect())
            .collect();
        let eigenvalues = matrices
            .par_iter()
            .map(|z| sorted_eigenvalues(&DMatrix::from_row_slice(d, d, z)))
            .collect();
        Ok(Self {
            level: gram.level,
            dim: d,
            masses: measure.masses.clone(),
            matrices,
            eigenvalues,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.matrices.len()
    }

    pub fn trace(&self, w: usize) -> f64 {
        (0..self.dim).map(|i| self.matrices[w][i * self.dim + i]).sum()
    }

    /// Smallest eigenvalue of each `Z_n(w)`.
    pub fn smallest_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|e| e[0]).collect()
    }

    pub fn eigen_stats(&self) -> EigenStats {
        EigenStats::of(self.level, &self.smallest_eigenvalues())
    }
}

/// Summary of the smaller eigenvalue of `Z_n` over the cells of one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenStats {
    pub level: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl EigenStats {
    fn of(level: usize, values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        Self {
            level,
            min: v[0],
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            max: v[n - 1],
        }
    }
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e
}

/// Cell Grams of the harmonic coordinates and the fiber metric relative to
/// the Kusuoka measure.
pub fn kusuoka_matrices(form: &EnergyForm) -> Result<(CellGram, FiberMetric)> {
    let coords = harmonic_coordinates(form)?;
    let gram = CellGram::from_coordinates(form.graph(), &coords)?;
    let mu = gram.trace_measure()?;
    let metric = FiberMetric::new(&gram, &mu)?;
    Ok((gram, metric))
}

/// Largest entrywise gap `|Σ_c m(c) Z_{n+1}(c) - m(w) Z_n(w)|` over the
/// cells `w` of `coarse`.
pub fn martingale_defect(coarse: &FiberMetric, fine: &FiberMetric, n_maps: usize) -> Result<f64> {
    if fine.level != coarse.level + 1 {
        return Err(Error::LevelMismatch {
            expected: coarse.level + 1,
            found: fine.level,
        });
    }
    if fine.n_cells() != coarse.n_cells() * n_maps || fine.dim != coarse.dim {
        return Err(Error::Incompatible("fiber metrics do not nest".into()));
    }
    let d2 = coarse.dim * coarse.dim;
    let mut worst = 0.0f64;
    for w in 0..coarse.n_cells() {
        for k in 0..d2 {
            let children: f64 = (0..n_maps)
                .map(|i| {
                    let c = w * n_maps + i;
                    fine.masses[c] * fine.matrices[c][k]
                })
                .sum();
            worst = worst.max((children - coarse.masses[w] * coarse.matrices[w][k]).abs());
        }
    }
    Ok(worst)
}
