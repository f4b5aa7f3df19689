//! Vector fields `Σ_k g_k ⊗ ∂f_k` at level-`m` resolution.
//!
//! Term weights are stored per edge. A bounded Borel weight is constant on
//! each cell; a function acting on a field contributes its edge-endpoint
//! averages, which is the same convention `EdgeMeasure::integrate` uses.

use nalgebra_sparse::{CooMatrix, CscMatrix};
use serde::{Deserialize, Serialize};

use crate::energy::{CellMeasure, DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::linalg;
use crate::topology::LevelGraph;

/// One summand `g ⊗ ∂f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    /// Weight per edge of the level graph.
    pub weight: Vec<f64>,
    pub base: DiscreteFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    pub level: usize,
    pub terms: Vec<FieldTerm>,
    /// Per-edge coefficients `Σ_k g_k(e) (f_k(u) - f_k(v))`, when compacted.
    #[serde(skip)]
    compacted: Option<Vec<f64>>,
}

impl VectorField {
    pub fn zero(level: usize) -> Self {
        Self {
            level,
            terms: Vec::new(),
            compacted: None,
        }
    }

    /// `g ⊗ ∂f` with `g` constant on each cell.
    pub fn cellwise(graph: &LevelGraph, cell_weights: &[f64], f: &DiscreteFunction) -> Result<Self> {
        f.check(graph)?;
        if cell_weights.len() != graph.n_cells() {
            return Err(Error::LengthMismatch {
                expected: graph.n_cells(),
                found: cell_weights.len(),
            });
        }
        let weight = graph.edges.iter().map(|e| cell_weights[e.cell]).collect();
        Ok(Self {
            level: graph.level,
            terms: vec![FieldTerm {
                weight,
                base: f.clone(),
            }],
            compacted: None,
        })
    }

    /// `g ⊗ ∂f` with `g` a vertex function acting through edge averages.
    pub fn weighted_gradient(
        graph: &LevelGraph,
        g: &DiscreteFunction,
        f: &DiscreteFunction,
    ) -> Result<Self> {
        g.check(graph)?;
        gradient(graph, f)?.times_function(graph, g)
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub(crate) fn check(&self, graph: &LevelGraph) -> Result<()> {
        if self.level != graph.level {
            return Err(Error::LevelMismatch {
                expected: graph.level,
                found: self.level,
            });
        }
        for t in &self.terms {
            t.base.check(graph)?;
            if t.weight.len() != graph.n_edges() {
                return Err(Error::LengthMismatch {
                    expected: graph.n_edges(),
                    found: t.weight.len(),
                });
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Self {
            level: self.level,
            terms,
            compacted: None,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            level: self.level,
            terms: self
                .terms
                .iter()
                .map(|t| FieldTerm {
                    weight: t.weight.iter().map(|w| s * w).collect(),
                    base: t.base.clone(),
                })
                .collect(),
            compacted: None,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// Module action `g · v`.
    pub fn times_function(&self, graph: &LevelGraph, g: &DiscreteFunction) -> Result<Self> {
        self.check(graph)?;
        g.check(graph)?;
        let avg: Vec<f64> = graph
            .edges
            .iter()
            .map(|e| 0.5 * (g.values[e.u] + g.values[e.v]))
            .collect();
        Ok(self.reweighted(&avg))
    }

    /// Multiplication by a cell-wise bounded weight.
    pub fn times_cellwise(&self, graph: &LevelGraph, cell_weights: &[f64]) -> Result<Self> {
        self.check(graph)?;
        let w: Vec<f64> = graph.edges.iter().map(|e| cell_weights[e.cell]).collect();
        Ok(self.reweighted(&w))
    }

    fn reweighted(&self, edge_factor: &[f64]) -> Self {
        Self {
            level: self.level,
            terms: self
                .terms
                .iter()
                .map(|t| FieldTerm {
                    weight: t.weight.iter().zip(edge_factor).map(|(a, b)| a * b).collect(),
                    base: t.base.clone(),
                })
                .collect(),
            compacted: None,
        }
    }

    /// True when every term weight is constant on each cell.
    pub fn is_cellwise(&self, graph: &LevelGraph) -> bool {
        let per = graph.edges_per_cell();
        self.terms.iter().all(|t| {
            t.weight
                .chunks(per)
                .all(|c| c.iter().all(|&x| x == c[0]))
        })
    }

    /// Per-edge coefficients of the field, i.e. the fiber vectors in edge
    /// coordinates.
    pub fn edge_coefficients(&self, graph: &LevelGraph) -> Result<Vec<f64>> {
        if let Some(c) = &self.compacted {
            return Ok(c.clone());
        }
        self.check(graph)?;
        let mut a = vec![0.0; graph.n_edges()];
        for t in &self.terms {
            let f = &t.base.values;
            for (i, e) in graph.edges.iter().enumerate() {
                a[i] += t.weight[i] * (f[e.u] - f[e.v]);
            }
        }
        Ok(a)
    }

    /// Caches the edge coefficients.
    pub fn compact(&mut self, graph: &LevelGraph) -> Result<()> {
        self.compacted = None;
        self.compacted = Some(self.edge_coefficients(graph)?);
        Ok(())
    }

    pub fn is_compacted(&self) -> bool {
        self.compacted.is_some()
    }

    /// `‖v‖²_H` from the compacted cache, if present.
    pub fn cached_norm_sq(&self, graph: &LevelGraph) -> Option<f64> {
        self.compacted
            .as_ref()
            .map(|a| graph.conductance * a.iter().map(|x| x * x).sum::<f64>())
    }
}

/// `∂f = 1 ⊗ ∂f`.
pub fn gradient(graph: &LevelGraph, f: &DiscreteFunction) -> Result<VectorField> {
    f.check(graph)?;
    Ok(VectorField {
        level: graph.level,
        terms: vec![FieldTerm {
            weight: vec![1.0; graph.n_edges()],
            base: f.clone(),
        }],
        compacted: None,
    })
}

/// `⟨v, w⟩_H` by expanding over all pairs of terms.
pub fn field_inner(graph: &LevelGraph, v: &VectorField, w: &VectorField) -> Result<f64> {
    v.check(graph)?;
    w.check(graph)?;
    let c = graph.conductance;
    let mut total = 0.0;
    for s in &v.terms {
        for t in &w.terms {
            let (f, u) = (&s.base.values, &t.base.values);
            let pair: f64 = graph
                .edges
                .iter()
                .enumerate()
                .map(|(i, e)| s.weight[i] * t.weight[i] * (f[e.u] - f[e.v]) * (u[e.u] - u[e.v]))
                .sum();
            total += c * pair;
        }
    }
    Ok(total)
}

pub fn field_norm_sq(graph: &LevelGraph, v: &VectorField) -> Result<f64> {
    field_inner(graph, v, v)
}

/// `Γ_H(v, w)` per cell; its total mass is `⟨v, w⟩_H`.
pub fn weighted_energy_measure_pair(
    graph: &LevelGraph,
    v: &VectorField,
    w: &VectorField,
) -> Result<CellMeasure> {
    let a = v.edge_coefficients(graph)?;
    let b = w.edge_coefficients(graph)?;
    let c = graph.conductance;
    let per = graph.edges_per_cell();
    let masses = a
        .chunks(per)
        .zip(b.chunks(per))
        .map(|(x, y)| c * x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    CellMeasure::new(graph.level, masses, false)
}

/// `Γ_H(v)` per cell, nonnegative.
pub fn weighted_energy_measure(graph: &LevelGraph, v: &VectorField) -> Result<CellMeasure> {
    let a = v.edge_coefficients(graph)?;
    let c = graph.conductance;
    let masses = a
        .chunks(graph.edges_per_cell())
        .map(|x| c * x.iter().map(|p| p * p).sum::<f64>())
        .collect();
    CellMeasure::new(graph.level, masses, true)
}

/// A linear functional on vertex functions, stored by its coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Functional {
    pub level: usize,
    pub coefficients: Vec<f64>,
}

impl Functional {
    pub fn apply(&self, u: &DiscreteFunction) -> f64 {
        linalg::dot(&self.coefficients, &u.values)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            level: self.level,
            coefficients: self
                .coefficients
                .iter()
                .zip(&other.coefficients)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Representing density `ρ` with `⟨ρ, u⟩_{L_2(μ)} = self(u)` for the
    /// lumped weights of `measure`.
    pub fn density(
        &self,
        graph: &LevelGraph,
        measure: &CellMeasure,
        tolerance: f64,
    ) -> Result<DiscreteFunction> {
        let w = measure.vertex_weights(graph)?;
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidMeasure("vertex weight is not positive".into()));
        }
        let rho: Vec<f64> = self.coefficients.iter().zip(&w).map(|(a, b)| a / b).collect();
        let scale = self.coefficients.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let residual = rho
            .iter()
            .zip(&w)
            .zip(&self.coefficients)
            .map(|((r, b), a)| (r * b - a).abs())
            .fold(0.0, f64::max);
        if residual > tolerance * scale {
            return Err(Error::LinearAlgebra(format!(
                "density residual {residual:e} exceeds tolerance"
            )));
        }
        Ok(DiscreteFunction::new(graph.level, rho))
    }
}

/// Divergence `∂*v`, defined by `∂*v(u) = -⟨v, ∂u⟩_H`.
pub fn divergence(graph: &LevelGraph, v: &VectorField) -> Result<Functional> {
    let a = v.edge_coefficients(graph)?;
    let c = graph.conductance;
    let mut coeff = vec![0.0; graph.n_vertices()];
    for (e, x) in graph.edges.iter().zip(&a) {
        coeff[e.u] -= c * x;
        coeff[e.v] += c * x;
    }
    Ok(Functional {
        level: graph.level,
        coefficients: coeff,
    })
}

/// Edge-vertex incidence matrix `D` with `(D f)_e = f(u) - f(v)`: the
/// assembled gradient in edge coordinates.
pub fn gradient_matrix(graph: &LevelGraph) -> CscMatrix<f64> {
    let mut coo = CooMatrix::new(graph.n_edges(), graph.n_vertices());
    for (i, e) in graph.edges.iter().enumerate() {
        coo.push(i, e.u, 1.0);
        coo.push(i, e.v, -1.0);
    }
    CscMatrix::from(&coo)
}

/// Assembled divergence `-D^T C` acting on edge coefficients.
pub fn divergence_matrix(graph: &LevelGraph) -> CscMatrix<f64> {
    let c = graph.conductance;
    let mut coo = CooMatrix::new(graph.n_vertices(), graph.n_edges());
    for (i, e) in graph.edges.iter().enumerate() {
        coo.push(e.u, i, -c);
        coo.push(e.v, i, c);
    }
    CscMatrix::from(&coo)
}

/// `(g L f)(u) = -E(g u, f)` as a functional.
pub fn generator_times(
    form: &EnergyForm,
    g: &DiscreteFunction,
    f: &DiscreteFunction,
) -> Result<Functional> {
    let kf = form.laplacian_rows(f)?;
    g.check(form.graph())?;
    Ok(Functional {
        level: form.level(),
        coefficients: g.values.iter().zip(&kf).map(|(a, b)| -a * b).collect(),
    })
}

/// `Γ(f, g)` seen as the functional `u ↦ ∫ u dΓ(f, g)`.
pub fn energy_measure_functional(
    form: &EnergyForm,
    f: &DiscreteFunction,
    g: &DiscreteFunction,
) -> Result<Functional> {
    let graph = form.graph();
    let (edges, _) = crate::energy::energy_measure(form, f, g)?;
    let mut coeff = vec![0.0; graph.n_vertices()];
    for (e, m) in graph.edges.iter().zip(&edges.masses) {
        coeff[e.u] += 0.5 * m;
        coeff[e.v] += 0.5 * m;
    }
    Ok(Functional {
        level: graph.level,
        coefficients: coeff,
    })
}
