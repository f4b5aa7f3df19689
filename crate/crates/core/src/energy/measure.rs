use serde::{Deserialize, Serialize};

use super::form::{DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::topology::{CellAddress, LevelGraph};

/// One mass per level-`m` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMeasure {
    pub level: usize,
    pub masses: Vec<f64>,
    /// Set for measures that are nonnegative by construction.
    pub nonnegative: bool,
}

impl CellMeasure {
    pub fn new(level: usize, masses: Vec<f64>, nonnegative: bool) -> Result<Self> {
        if nonnegative {
            if let Some(bad) = masses.iter().find(|&&m| !(m >= 0.0)) {
                return Err(Error::InvalidMeasure(format!(
                    "negative mass {bad} in a nonnegative measure"
                )));
            }
        }
        Ok(Self {
            level,
            masses,
            nonnegative,
        })
    }

    /// Sum of the cell masses in cell order.
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn n_cells(&self) -> usize {
        self.masses.len()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            level: self.level,
            masses: self.masses.iter().map(|m| s * m).collect(),
            nonnegative: self.nonnegative && s >= 0.0,
        }
    }

    pub(crate) fn check(&self, graph: &LevelGraph) -> Result<()> {
        if self.level != graph.level {
            return Err(Error::LevelMismatch {
                expected: graph.level,
                found: self.level,
            });
        }
        if self.masses.len() != graph.n_cells() {
            return Err(Error::LengthMismatch {
                expected: graph.n_cells(),
                found: self.masses.len(),
            });
        }
        Ok(())
    }

    /// Vertex weights obtained by splitting each cell mass equally among its
    /// corners. These define the `L_2` inner product of the measure.
    pub fn vertex_weights(&self, graph: &LevelGraph) -> Result<Vec<f64>> {
        self.check(graph)?;
        let k = graph.spec.n_corners as f64;
        let mut w = vec![0.0; graph.n_vertices()];
        for (cell, &m) in graph.cells.iter().zip(&self.masses) {
            for &v in &cell.corners {
                w[v] += m / k;
            }
        }
        Ok(w)
    }

    /// Aggregates children masses into the parent level (`level - 1`).
    pub fn coarsen(&self, n_maps: usize) -> Result<Self> {
        if self.level == 0 {
            return Err(Error::LevelMismatch {
                expected: 1,
                found: 0,
            });
        }
        let masses = self
            .masses
            .chunks(n_maps)
            .map(|c| c.iter().sum())
            .collect();
        Self::new(self.level - 1, masses, self.nonnegative)
    }

    /// `∫ f dμ` with the corner-split quadrature.
    pub fn integrate(&self, graph: &LevelGraph, f: &DiscreteFunction) -> Result<f64> {
        f.check(graph)?;
        let w = self.vertex_weights(graph)?;
        Ok(w.iter().zip(&f.values).map(|(a, b)| a * b).sum())
    }

    pub fn addresses(&self, graph: &LevelGraph) -> Vec<CellAddress> {
        graph.cells.iter().map(|c| c.address.clone()).collect()
    }
}

/// A signed mass per edge, the primitive form of an energy measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeMeasure {
    pub level: usize,
    pub masses: Vec<f64>,
}

impl EdgeMeasure {
    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// `∫ f dΓ` where `f` is evaluated at edge midpoints by endpoint averages.
    pub fn integrate(&self, graph: &LevelGraph, f: &DiscreteFunction) -> Result<f64> {
        f.check(graph)?;
        Ok(graph
            .edges
            .iter()
            .zip(&self.masses)
            .map(|(e, m)| 0.5 * (f.values[e.u] + f.values[e.v]) * m)
            .sum())
    }

    pub fn to_cells(&self, graph: &LevelGraph, nonnegative: bool) -> Result<CellMeasure> {
        let per = graph.edges_per_cell();
        let masses = self.masses.chunks(per).map(|c| c.iter().sum()).collect();
        CellMeasure::new(self.level, masses, nonnegative)
    }
}

/// Energy measure `Γ(f, g)` at edge and cell resolution. Its total mass is
/// `E(f, g)`.
pub fn energy_measure(
    form: &EnergyForm,
    f: &DiscreteFunction,
    g: &DiscreteFunction,
) -> Result<(EdgeMeasure, CellMeasure)> {
    let graph = form.graph();
    f.check(graph)?;
    g.check(graph)?;
    let c = graph.conductance;
    let masses: Vec<f64> = graph
        .edges
        .iter()
        .map(|e| c * (f.values[e.u] - f.values[e.v]) * (g.values[e.u] - g.values[e.v]))
        .collect();
    let edges = EdgeMeasure {
        level: graph.level,
        masses,
    };
    let same = f == g;
    let cells = edges.to_cells(graph, same)?;
    Ok((edges, cells))
}

/// Self-similar measure with cell `F_w K` carrying `Π_i weights[w_i]`.
pub fn self_similar_measure(graph: &LevelGraph, weights: &[f64]) -> Result<CellMeasure> {
    let n = graph.spec.n_maps;
    if weights.len() != n {
        return Err(Error::InvalidWeights(format!(
            "expected {n} weights, got {}",
            weights.len()
        )));
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidWeights("weights must be positive".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    let masses = graph
        .cells
        .iter()
        .map(|c| c.address.0.iter().map(|&i| weights[i as usize]).product())
        .collect();
    CellMeasure::new(graph.level, masses, true)
}

/// Equal-weight self-similar measure (normalized Hausdorff measure).
pub fn uniform_measure(graph: &LevelGraph) -> CellMeasure {
    let n = graph.spec.n_maps;
    self_similar_measure(graph, &vec![1.0 / n as f64; n]).expect("uniform weights are valid")
}

/// Kusuoka measure `Σ_j Γ(φ_j)` of an energy-orthonormal family.
pub fn kusuoka_measure(form: &EnergyForm, coords: &[DiscreteFunction]) -> Result<CellMeasure> {
    let graph = form.graph();
    let mut masses = vec![0.0; graph.n_cells()];
    for phi in coords {
        let (_, cells) = energy_measure(form, phi, phi)?;
        for (m, x) in masses.iter_mut().zip(&cells.masses) {
            *m += x;
        }
    }
    CellMeasure::new(graph.level, masses, true)
}

/// Outcome of [`general_energy_dominant_measure`].
#[derive(Clone, Debug, PartialEq)]
pub struct DominantMeasure {
    pub measure: CellMeasure,
    /// Pool positions (zero-based) rejected for having (near) zero energy.
    pub skipped: Vec<usize>,
    /// Pool member `n` (zero-based) enters with weight `2^{-(n+1)}`.
    pub weights: Vec<f64>,
}

/// `m̃ = Σ_n 2^{-n} Γ(ψ_n / E(ψ_n)^{1/2})` over a finite pool.
pub fn general_energy_dominant_measure(
    form: &EnergyForm,
    pool: &[DiscreteFunction],
    zero_energy: f64,
) -> Result<DominantMeasure> {
    let graph = form.graph();
    let mut masses = vec![0.0; graph.n_cells()];
    let mut skipped = Vec::new();
    let mut weights = Vec::new();
    for (n, psi) in pool.iter().enumerate() {
        let e = form.energy_of(psi)?;
        if e < zero_energy {
            skipped.push(n);
            weights.push(0.0);
            continue;
        }
        let w = 0.5f64.powi(n as i32 + 1);
        weights.push(w);
        let (_, cells) = energy_measure(form, psi, psi)?;
        for (m, x) in masses.iter_mut().zip(&cells.masses) {
            *m += w * x / e;
        }
    }
    Ok(DominantMeasure {
        measure: CellMeasure::new(graph.level, masses, true)?,
        skipped,
        weights,
    })
}
