use super::form::{boundary_data, solve_dirichlet, DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::topology::{build_level, LevelGraph};

/// Boundary data of an energy-orthonormal basis (modulo constants) of the
/// harmonic functions, computed by Gram-Schmidt on `e_a - 1/k` under `E_0`.
///
/// For the gasket this yields multiples of `(2,-1,-1)` and `(0,1,-1)`.
pub fn coordinate_boundary_data(graph0: &LevelGraph) -> Result<Vec<Vec<f64>>> {
    let k = graph0.spec.n_corners;
    let e0 = |x: &[f64], y: &[f64]| -> f64 {
        let c = graph0.conductance;
        graph0
            .edges
            .iter()
            .map(|e| {
                let (a, b) = (corner_of(graph0, e.u), corner_of(graph0, e.v));
                c * (x[a] - x[b]) * (y[a] - y[b])
            })
            .sum()
    };
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for a in 0..k {
        let mut v: Vec<f64> = (0..k)
            .map(|b| if a == b { 1.0 } else { 0.0 } - 1.0 / k as f64)
            .collect();
        for u in &basis {
            let proj = e0(&v, u);
            for (x, y) in v.iter_mut().zip(u) {
                *x -= proj * y;
            }
        }
        let norm = e0(&v, &v);
        if norm > 1e-12 {
            let s = norm.sqrt();
            basis.push(v.iter().map(|x| x / s).collect());
        }
    }
    if basis.len() + 1 != k {
        return Err(Error::Unsupported(format!(
            "{}: boundary harmonics do not span k - 1 dimensions",
            graph0.spec.name
        )));
    }
    Ok(basis)
}

fn corner_of(graph0: &LevelGraph, v: usize) -> usize {
    graph0
        .boundary
        .iter()
        .position(|&b| b == v)
        .expect("level-0 vertices are boundary vertices")
}

/// Harmonic coordinates `φ_1, ..., φ_{k-1}` at the level of `form`: harmonic,
/// energy-orthonormal, zero mean over `V_0`.
pub fn harmonic_coordinates(form: &EnergyForm) -> Result<Vec<DiscreteFunction>> {
    let graph = form.graph();
    let g0 = build_level(&graph.spec, 0)?;
    coordinate_boundary_data(&g0)?
        .iter()
        .map(|data| solve_dirichlet(graph, &boundary_data(graph, data)))
        .collect()
}
