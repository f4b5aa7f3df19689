//! Reference solution of the Dirichlet p-Laplace problem on the unit
//! interval by shooting on the flux of the first edge.

use fractal_forms::{DiscreteFunction, LevelGraph};

use crate::error::{CliError, CliResult};

/// Solves `q_i - q_{i-1} = w_i f_i` at interior vertices with
/// `q = |u'|^{p-2} u'` per edge and `u = 0` at both ends.
pub fn interval_p_laplace(
    graph: &LevelGraph,
    weights: &[f64],
    f: &DiscreteFunction,
    p: f64,
) -> CliResult<DiscreteFunction> {
    if !graph.spec.is_unit_interval() {
        return Err(CliError::Config("the 1-D reference needs the interval".into()));
    }
    let mut order: Vec<usize> = (0..graph.n_vertices()).collect();
    order.sort_by(|&a, &b| graph.vertices[a].coords[0].total_cmp(&graph.vertices[b].coords[0]));
    let xs: Vec<f64> = order.iter().map(|&v| graph.vertices[v].coords[0]).collect();
    let jumps: Vec<f64> = order.iter().map(|&v| weights[v] * f.values[v]).collect();
    let n = xs.len();
    let slope = |q: f64| q.signum() * q.abs().powf(1.0 / (p - 1.0));
    let end = |q0: f64| -> f64 {
        let mut q = q0;
        let mut u = 0.0;
        for i in 0..n - 1 {
            if i > 0 {
                q += jumps[i];
            }
            u += slope(q) * (xs[i + 1] - xs[i]);
        }
        u
    };
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    while end(lo) > 0.0 {
        lo *= 2.0;
    }
    while end(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if end(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut q = 0.5 * (lo + hi);
    let mut values = vec![0.0; n];
    let mut u = 0.0;
    for i in 0..n - 1 {
        if i > 0 {
            q += jumps[i];
        }
        u += slope(q) * (xs[i + 1] - xs[i]);
        values[order[i + 1]] = u;
    }
    values[order[n - 1]] = 0.0;
    Ok(DiscreteFunction::new(graph.level, values))
}
