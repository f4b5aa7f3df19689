use nalgebra::{DMatrix, SymmetricEigen};
use nalgebra_sparse::CscMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::form::{DiscreteFunction, EnergyForm};
use super::measure::CellMeasure;
use crate::config::Tolerances;
use crate::error::{Error, Result};
use crate::fields::{lp_function_norm_pow, p_energy};
use crate::linalg::{self, SpdSolver, SymAssembler};

/// Generalized eigenproblem `K u = λ W u` of an energy form against the
/// lumped vertex weights of a measure.
#[derive(Clone, Debug)]
pub struct WeightedLaplacian {
    pub stiffness: CscMatrix<f64>,
    pub weights: Vec<f64>,
    pub measure_id: String,
}

/// Eigenpairs in ascending order, `W`-orthonormal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<Vec<f64>>,
    pub measure_id: String,
    pub level: usize,
    /// Largest `‖W^{-1/2}(K v - λ W v)‖ / max(1, λ)` over the returned pairs.
    pub max_residual: f64,
    /// Largest entry of `V^T W V - I`.
    pub gram_error: f64,
    pub method: String,
}

impl SpectrumResult {
    pub fn eigenfunction(&self, i: usize) -> DiscreteFunction {
        DiscreteFunction::new(self.level, self.eigenvectors[i].clone())
    }
}

/// Builds the measure-weighted Laplacian; every vertex weight must be positive.
pub fn laplacian(
    form: &EnergyForm,
    measure: &CellMeasure,
    measure_id: &str,
) -> Result<WeightedLaplacian> {
    let weights = measure.vertex_weights(form.graph())?;
    if let Some(v) = weights.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::InvalidMeasure(format!(
            "vertex {v} has nonpositive weight {}",
            weights[v]
        )));
    }
    Ok(WeightedLaplacian {
        stiffness: form.stiffness().clone(),
        weights,
        measure_id: measure_id.to_string(),
    })
}

impl WeightedLaplacian {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Lowest `k` eigenpairs: dense up to `tol.dense_eigen_limit` vertices,
    /// shift-invert subspace iteration above.
    pub fn spectrum(&self, level: usize, k: usize, tol: &Tolerances) -> Result<SpectrumResult> {
        let n = self.dim();
        if k == 0 || k > n {
            return Err(Error::TooManyEigenpairs {
                requested: k,
                dimension: n,
            });
        }
        let (mut values, mut vectors, method) = if n <= tol.dense_eigen_limit {
            let (v, x) = self.dense(k);
            (v, x, "dense")
        } else {
            let (v, x) = self.subspace_iteration(k, tol)?;
            (v, x, "shift-invert subspace iteration")
        };

        // the kernel is exactly the constants
        let total: f64 = self.weights.iter().sum();
        values[0] = 0.0;
        vectors[0] = vec![1.0 / total.sqrt(); n];
        for i in 1..k {
            let (head, tail) = vectors.split_at_mut(i);
            let v = &mut tail[0];
            for u in head.iter() {
                let proj = linalg::weighted_dot(v, u, &self.weights);
                linalg::axpy(-proj, u, v);
            }
            let nrm = linalg::weighted_dot(v, v, &self.weights).sqrt();
            v.iter_mut().for_each(|x| *x /= nrm);
            fix_sign(v);
        }

        let mut max_residual: f64 = 0.0;
        for (lam, v) in values.iter().zip(&vectors) {
            let kv = linalg::matvec(&self.stiffness, v);
            let r: f64 = kv
                .iter()
                .zip(v)
                .zip(&self.weights)
                .map(|((a, x), w)| (a - lam * w * x).powi(2) / w)
                .sum::<f64>()
                .sqrt();
            max_residual = max_residual.max(r / lam.abs().max(1.0));
        }
        let mut gram_error: f64 = 0.0;
        for i in 0..k {
            for j in 0..=i {
                let g = linalg::weighted_dot(&vectors[i], &vectors[j], &self.weights);
                let want = if i == j { 1.0 } else { 0.0 };
                gram_error = gram_error.max((g - want).abs());
            }
        }
        Ok(SpectrumResult {
            eigenvalues: values,
            eigenvectors: vectors,
            measure_id: self.measure_id.clone(),
            level,
            max_residual,
            gram_error,
            method: method.to_string(),
        })
    }

    fn dense(&self, k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = self.dim();
        let s: Vec<f64> = self.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for (i, j, &v) in self.stiffness.triplet_iter() {
            a[(i, j)] += v * s[i] * s[j];
        }
        let eig = SymmetricEigen::new(a);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
        let mut values = Vec::with_capacity(k);
        let mut vectors = Vec::with_capacity(k);
        for &idx in order.iter().take(k) {
            values.push(eig.eigenvalues[idx]);
            let mut v: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, idx)] * s[i]).collect();
            fix_sign(&mut v);
            vectors.push(v);
        }
        (values, vectors)
    }

    fn subspace_iteration(&self, k: usize, tol: &Tolerances) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = self.dim();
        let b = (2 * k + 10).min(n);
        let diag_ratio: f64 = self
            .stiffness
            .triplet_iter()
            .filter(|(i, j, _)| i == j)
            .map(|(i, _, &v)| v / self.weights[i])
            .sum::<f64>()
            / n as f64;
        let sigma = 1e-6 * diag_ratio;

        let mut shifted = SymAssembler::new(n);
        for (i, j, &v) in self.stiffness.triplet_iter() {
            shifted.add(i, j, v);
        }
        for (i, &w) in self.weights.iter().enumerate() {
            shifted.add(i, i, sigma * w);
        }
        let solver = SpdSolver::new(&shifted.to_csc())?;

        let mut rng = ChaCha8Rng::seed_from_u64(tol.eigen_seed);
        let mut block: Vec<Vec<f64>> = (0..b)
            .map(|j| {
                if j == 0 {
                    vec![1.0; n]
                } else {
                    (0..n).map(|_| rng.random::<f64>() - 0.5).collect()
                }
            })
            .collect();

        let mut values = vec![0.0; b];
        for _ in 0..tol.eigen_max_iter {
            let mut z: Vec<Vec<f64>> = block
                .iter()
                .map(|y| {
                    let wy: Vec<f64> = y.iter().zip(&self.weights).map(|(a, w)| a * w).collect();
                    solver.solve(&wy)
                })
                .collect();
            self.orthonormalize(&mut z);
            self.orthonormalize(&mut z);
            let kz: Vec<Vec<f64>> = z.iter().map(|v| linalg::matvec(&self.stiffness, v)).collect();
            let mut proj = DMatrix::<f64>::zeros(b, b);
            for i in 0..b {
                for j in 0..=i {
                    let v = linalg::dot(&z[i], &kz[j]);
                    proj[(i, j)] = v;
                    proj[(j, i)] = v;
                }
            }
            let eig = SymmetricEigen::new(proj);
            let mut order: Vec<usize> = (0..b).collect();
            order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
            let mut next = vec![vec![0.0; n]; b];
            for (col, &idx) in order.iter().enumerate() {
                values[col] = eig.eigenvalues[idx];
                for (r, zr) in z.iter().enumerate() {
                    linalg::axpy(eig.eigenvectors[(r, idx)], zr, &mut next[col]);
                }
            }
            block = next;

            let converged = (0..k).all(|i| {
                let v = &block[i];
                let lam = values[i];
                let kv = linalg::matvec(&self.stiffness, v);
                let r: f64 = kv
                    .iter()
                    .zip(v)
                    .zip(&self.weights)
                    .map(|((a, x), w)| (a - lam * w * x).powi(2) / w)
                    .sum::<f64>()
                    .sqrt();
                r / lam.abs().max(1.0) < tol.eigen_residual
            });
            if converged {
                block.truncate(k);
                values.truncate(k);
                for v in &mut block {
                    fix_sign(v);
                }
                return Ok((values, block));
            }
        }
        Err(Error::NotConverged {
            iterations: tol.eigen_max_iter,
            residual: f64::NAN,
        })
    }

    fn orthonormalize(&self, vs: &mut [Vec<f64>]) {
        for i in 0..vs.len() {
            let (head, tail) = vs.split_at_mut(i);
            let v = &mut tail[0];
            for u in head.iter() {
                let p = linalg::weighted_dot(v, u, &self.weights);
                linalg::axpy(-p, u, v);
            }
            let nrm = linalg::weighted_dot(v, v, &self.weights).sqrt();
            if nrm > 0.0 {
                v.iter_mut().for_each(|x| *x /= nrm);
            }
        }
    }
}

/// Makes the largest-magnitude entry positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Rayleigh quotient `E(f) / ‖f‖²_W`.
pub fn rayleigh_quotient(op: &WeightedLaplacian, f: &[f64]) -> f64 {
    let kf = linalg::matvec(&op.stiffness, f);
    linalg::dot(f, &kf) / linalg::weighted_dot(f, f, &op.weights)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareOptions {
    pub seed: u64,
    pub restarts: usize,
    pub ascent_iters: usize,
}

impl Default for PoincareOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            restarts: 8,
            ascent_iters: 200,
        }
    }
}

/// Poincaré constants `‖f‖_p^p <= c E_p(f)` over measure-mean-zero `f`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareReport {
    pub p: f64,
    /// Best constant for `p = 2`, the certified upper bound otherwise.
    pub constant: f64,
    pub certified_upper: f64,
    pub sampled_lower: f64,
    pub lambda1: Option<f64>,
}

pub fn poincare_constant(
    form: &EnergyForm,
    measure: &CellMeasure,
    p: f64,
    tol: &Tolerances,
    opts: &PoincareOptions,
) -> Result<PoincareReport> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    let op = laplacian(form, measure, "poincare")?;
    if p == 2.0 {
        let spec = op.spectrum(form.level(), 2.min(op.dim()), tol)?;
        let lambda1 = spec.eigenvalues[1];
        let c = 1.0 / lambda1;
        return Ok(PoincareReport {
            p,
            constant: c,
            certified_upper: c,
            sampled_lower: c,
            lambda1: Some(lambda1),
        });
    }
    let certified_upper = resistance_poincare_bound(form, measure, p)?;
    let sampled_lower = sampled_poincare_ratio(form, measure, &op, p, opts)?;
    Ok(PoincareReport {
        p,
        constant: certified_upper,
        certified_upper,
        sampled_lower,
        lambda1: None,
    })
}

/// `(2 R_0 m(X))^{p/2}` with `R_0` the largest effective resistance from
/// vertex 0.
///
/// For mean-zero `f`, `sup|f| <= osc f` and `osc² f <= 2 R_0 E(f)`; Hölder
/// gives `E(f)^{p/2} <= m(X)^{p/2-1} E_p(f)`.
pub fn resistance_poincare_bound(form: &EnergyForm, measure: &CellMeasure, p: f64) -> Result<f64> {
    let r0 = max_resistance_from(form, 0)?;
    let mass = measure.total();
    Ok((2.0 * r0 * mass).powf(p / 2.0))
}

/// `max_v R(x0, v)` from the grounded Laplacian.
pub fn max_resistance_from(form: &EnergyForm, x0: usize) -> Result<f64> {
    let n = form.graph().n_vertices();
    if n == 1 {
        return Ok(0.0);
    }
    let keep: Vec<usize> = (0..n).filter(|&v| v != x0).collect();
    let grounded = linalg::restrict(form.stiffness(), &keep);
    let solver = SpdSolver::new(&grounded)?;
    let mut best: f64 = 0.0;
    let mut e = vec![0.0; keep.len()];
    for i in 0..keep.len() {
        e[i] = 1.0;
        let x = solver.solve(&e);
        best = best.max(x[i]);
        e[i] = 0.0;
    }
    Ok(best)
}

/// Best ratio `‖f‖_p^p / E_p(f)` found by projected gradient ascent.
fn sampled_poincare_ratio(
    form: &EnergyForm,
    measure: &CellMeasure,
    op: &WeightedLaplacian,
    p: f64,
    opts: &PoincareOptions,
) -> Result<f64> {
    let graph = form.graph();
    let w = &op.weights;
    let total_w: f64 = w.iter().sum();
    let center = |f: &mut Vec<f64>| {
        let mean = linalg::dot(f, w) / total_w;
        f.iter_mut().for_each(|x| *x -= mean);
    };
    let ratio = |f: &[f64]| -> Result<f64> {
        let df = DiscreteFunction::new(graph.level, f.to_vec());
        let ep = p_energy(form, &df, measure, p)?;
        Ok(lp_function_norm_pow(f, w, p) / ep)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if op.dim() >= 2 {
        let tol = Tolerances::default();
        if op.dim() <= tol.dense_eigen_limit {
            starts.push(op.spectrum(graph.level, 2, &tol)?.eigenvectors[1].clone());
        }
    }
    for _ in 0..opts.restarts {
        starts.push((0..op.dim()).map(|_| rng.random::<f64>() - 0.5).collect());
    }

    let mut best: f64 = 0.0;
    for mut f in starts {
        center(&mut f);
        let mut r = ratio(&f)?;
        let mut step = 1.0;
        for _ in 0..opts.ascent_iters {
            let grad = log_ratio_gradient(form, measure, w, &f, p)?;
            let gnorm = linalg::dot(&grad, &grad).sqrt();
            let fnorm = linalg::dot(&f, &f).sqrt();
            if gnorm == 0.0 || fnorm == 0.0 {
                break;
            }
            let mut improved = false;
            for _ in 0..30 {
                let mut trial = f.clone();
                linalg::axpy(step * fnorm / gnorm, &grad, &mut trial);
                center(&mut trial);
                let rt = ratio(&trial)?;
                if rt.is_finite() && rt > r {
                    f = trial;
                    r = rt;
                    step *= 1.5;
                    improved = true;
                    break;
                }
                step *= 0.5;
            }
            if !improved {
                break;
            }
        }
        if r.is_finite() {
            best = best.max(r);
        }
    }
    Ok(best)
}

fn log_ratio_gradient(
    form: &EnergyForm,
    measure: &CellMeasure,
    w: &[f64],
    f: &[f64],
    p: f64,
) -> Result<Vec<f64>> {
    let graph = form.graph();
    let num = lp_function_norm_pow(f, w, p);
    let df = DiscreteFunction::new(graph.level, f.to_vec());
    let den = p_energy(form, &df, measure, p)?;
    let mut g: Vec<f64> = f
        .iter()
        .zip(w)
        .map(|(x, wi)| p * wi * x.abs().powf(p - 2.0) * x / num)
        .collect();
    let c = graph.conductance;
    let edges_per = graph.edges_per_cell();
    for (cell, &m) in measure.masses.iter().enumerate() {
        let range = cell * edges_per..(cell + 1) * edges_per;
        let gamma: f64 = graph.edges[range.clone()]
            .iter()
            .map(|e| c * (f[e.u] - f[e.v]).powi(2))
            .sum();
        if gamma == 0.0 {
            continue;
        }
        let factor = p * (gamma / m).powf(p / 2.0 - 1.0) / den;
        for e in &graph.edges[range] {
            let d = c * (f[e.u] - f[e.v]) * factor;
            g[e.u] -= d;
            g[e.v] += d;
        }
    }
    Ok(g)
}
