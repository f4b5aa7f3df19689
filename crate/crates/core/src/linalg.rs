//! Thin wrappers over `nalgebra-sparse` for the symmetric systems that show
//! up everywhere: graph Laplacians, shifted Laplacians and Newton Hessians.

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

/// Accumulates a symmetric matrix from (row, col, value) contributions.
#[derive(Clone, Debug)]
pub struct SymAssembler {
    n: usize,
    coo: CooMatrix<f64>,
}

impl SymAssembler {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            coo: CooMatrix::new(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.coo.push(i, j, v);
    }

    /// Adds `w (e_i - e_j)(e_i - e_j)^T`.
    pub fn add_edge(&mut self, i: usize, j: usize, w: f64) {
        self.coo.push(i, i, w);
        self.coo.push(j, j, w);
        self.coo.push(i, j, -w);
        self.coo.push(j, i, -w);
    }

    pub fn to_csc(&self) -> CscMatrix<f64> {
        CscMatrix::from(&self.coo)
    }
}

/// Restricts a square sparse matrix to the index set `keep` (in that order).
pub fn restrict(a: &CscMatrix<f64>, keep: &[usize]) -> CscMatrix<f64> {
    let mut pos = vec![usize::MAX; a.nrows()];
    for (new, &old) in keep.iter().enumerate() {
        pos[old] = new;
    }
    let mut coo = CooMatrix::new(keep.len(), keep.len());
    for (i, j, &v) in a.triplet_iter() {
        let (pi, pj) = (pos[i], pos[j]);
        if pi != usize::MAX && pj != usize::MAX {
            coo.push(pi, pj, v);
        }
    }
    CscMatrix::from(&coo)
}

pub fn matvec(a: &CscMatrix<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    for (i, j, &v) in a.triplet_iter() {
        y[i] += v * x[j];
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn weighted_dot(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), z)| x * y * z).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Cholesky factorization of a sparse SPD matrix, computed in reverse
/// Cuthill-McKee order to keep fill-in down.
pub struct SpdSolver {
    perm: Vec<usize>,
    chol: CscCholesky<f64>,
}

impl SpdSolver {
    pub fn new(a: &CscMatrix<f64>) -> Result<Self> {
        let perm = reverse_cuthill_mckee(a);
        let permuted = restrict(a, &perm);
        let chol = CscCholesky::factor(&permuted)
            .map_err(|e| Error::LinearAlgebra(format!("cholesky failed: {e:?}")))?;
        Ok(Self { perm, chol })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let pb = DMatrix::from_iterator(b.len(), 1, self.perm.iter().map(|&i| b[i]));
        let px = self.chol.solve(&pb);
        let mut x = vec![0.0; b.len()];
        for (k, &i) in self.perm.iter().enumerate() {
            x[i] = px[(k, 0)];
        }
        x
    }
}

/// Reverse Cuthill-McKee ordering of the sparsity graph of `a`.
fn reverse_cuthill_mckee(a: &CscMatrix<f64>) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j, _) in a.triplet_iter() {
        if i != j {
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    for &start in &by_degree {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| (adj[u].len(), u));
            for u in next {
                seen[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_path_laplacian_with_shift() {
        let n = 50;
        let mut asm = SymAssembler::new(n);
        for i in 0..n - 1 {
            asm.add_edge(i, i + 1, 1.0);
        }
        for i in 0..n {
            asm.add(i, i, 0.5);
        }
        let a = asm.to_csc();
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = matvec(&a, &x_true);
        let x = SpdSolver::new(&a).unwrap().solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let mut asm = SymAssembler::new(3);
        asm.add_edge(0, 1, 1.0);
        asm.add_edge(1, 2, 1.0);
        assert!(SpdSolver::new(&asm.to_csc()).is_err());
    }
}
