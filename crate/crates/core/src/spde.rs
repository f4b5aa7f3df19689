//! Implicit Euler for `du = ∂*a(∂u) dt + √Q dW` with diagonal `Q` in the
//! eigenbasis of the measure-weighted Laplacian.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{CellMeasure, DiscreteFunction, EnergyForm, SpectrumResult};
use crate::error::{Error, Result};
use crate::fields::p_energy;
use crate::linalg;
use crate::quasilinear::{Constraint, MonotoneCoefficient, MonotoneProblem, SolverOptions};

/// Upper bound on the number of noise modes; sets the counter layout.
pub const MAX_MODES: u128 = 1 << 20;

/// Covariance weights `q_k` as a function of the eigenvalue `λ_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QProfile {
    /// `q_k = scale · λ_k^{-2}`.
    InverseSquare { scale: f64 },
    /// `q_k = scale · λ_k^{-power}`.
    InversePower { scale: f64, power: f64 },
    /// `q_k = q` for every retained mode.
    Constant { q: f64 },
    Zero,
}

impl Default for QProfile {
    fn default() -> Self {
        QProfile::InverseSquare { scale: 1.0 }
    }
}

impl QProfile {
    pub fn weight(&self, lambda: f64) -> f64 {
        match *self {
            QProfile::InverseSquare { scale } => scale / (lambda * lambda),
            QProfile::InversePower { scale, power } => scale * lambda.powf(-power),
            QProfile::Constant { q } => q,
            QProfile::Zero => 0.0,
        }
    }
}

/// Truncated noise `√Q W = Σ_{k=1}^J √q_k β_k e_k`; the constant mode `e_0`
/// is never driven.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub truncation: usize,
    pub weights: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// `Σ_{k>J} q_k` over the remaining computed spectrum.
    pub tail_bound: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn new(spectrum: &SpectrumResult, truncation: usize, profile: &QProfile, seed: u64) -> Result<Self> {
        if truncation as u128 >= MAX_MODES {
            return Err(Error::Incompatible(format!("truncation {truncation} is too large")));
        }
        let available = spectrum.eigenvalues.len();
        if truncation + 1 > available {
            return Err(Error::TooManyEigenpairs {
                requested: truncation + 1,
                dimension: available,
            });
        }
        let weights: Vec<f64> = spectrum.eigenvalues[1..=truncation]
            .iter()
            .map(|&l| profile.weight(l))
            .collect();
        if weights.iter().any(|&q| !(q >= 0.0) || !q.is_finite()) {
            return Err(Error::InvalidWeights("covariance weights must be finite and nonnegative".into()));
        }
        let tail_bound = spectrum.eigenvalues[truncation + 1..]
            .iter()
            .map(|&l| profile.weight(l))
            .sum();
        Ok(Self {
            truncation,
            weights,
            basis: spectrum.eigenvectors[1..=truncation].to_vec(),
            eigenvalues: spectrum.eigenvalues[1..=truncation].to_vec(),
            tail_bound,
            seed,
        })
    }

    /// No noise at all; paths are deterministic.
    pub fn none(seed: u64) -> Self {
        Self {
            truncation: 0,
            weights: Vec::new(),
            basis: Vec::new(),
            eigenvalues: Vec::new(),
            tail_bound: 0.0,
            seed,
        }
    }

    pub fn trace(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `ξ_{k,j}` for step `k` and mode `j` (one-based) of `path`.
    pub fn normal(&self, path: u64, step: u64, mode: usize) -> f64 {
        standard_normal(self.seed, path, step, mode)
    }

    /// `ΔW_k = Σ_j √(q_j dt) ξ_{k,j} e_j`.
    pub fn increment(&self, path: u64, step: u64, dt: f64, n: usize) -> Vec<f64> {
        let mut dw = vec![0.0; n];
        for (j, (q, e)) in self.weights.iter().zip(&self.basis).enumerate() {
            if *q == 0.0 {
                continue;
            }
            let s = (q * dt).sqrt() * self.normal(path, step, j + 1);
            linalg::axpy(s, e, &mut dw);
        }
        dw
    }
}

/// Box-Muller on a counter-addressed ChaCha block.
pub fn standard_normal(seed: u64, path: u64, step: u64, mode: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng.set_word_pos((step as u128 * MAX_MODES + mode as u128) * 4);
    let to_unit = |x: u64| (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let u1 = 1.0 - to_unit(rng.next_u64());
    let u2 = to_unit(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Keep every `stride`-th state (and the last).
    pub stride: usize,
    pub solver: SolverOptions,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            t_end: 0.1,
            dt: 1e-3,
            stride: 10,
            solver: SolverOptions {
                tol: 1e-12,
                ..SolverOptions::default()
            },
        }
    }
}

impl SimulationOptions {
    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::Incompatible("dt must be positive and T nonnegative".into()));
        }
        Ok((self.t_end / self.dt).round() as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub path: u64,
    pub level: usize,
    pub times: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepSummary>,
    /// `‖u_k‖_{L_2(m)}` for `k = 0..=n`.
    pub l2_norm: Vec<f64>,
    /// `E_p(u_k)` with `p` the growth exponent of the coefficient.
    pub p_energy: Vec<f64>,
    pub final_state: Vec<f64>,
}

/// One implicit Euler step `u - dt ∂*a(∂u) = rhs`.
pub struct Stepper<'a> {
    form: &'a EnergyForm,
    coeff: &'a dyn MonotoneCoefficient,
    measure: &'a CellMeasure,
    weights: Vec<f64>,
    dt: f64,
    opts: SolverOptions,
}

impl<'a> Stepper<'a> {
    pub fn new(
        form: &'a EnergyForm,
        coeff: &'a dyn MonotoneCoefficient,
        measure: &'a CellMeasure,
        dt: f64,
        opts: SolverOptions,
    ) -> Result<Self> {
        let weights = measure.vertex_weights(form.graph())?;
        Ok(Self {
            form,
            coeff,
            measure,
            weights,
            dt,
            opts,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn step(&self, rhs: &[f64], guess: &[f64]) -> Result<(Vec<f64>, StepSummary)> {
        let load: Vec<f64> = rhs.iter().zip(&self.weights).map(|(x, w)| x * w).collect();
        let problem = MonotoneProblem::new(
            self.form,
            self.coeff,
            self.measure,
            self.dt,
            1.0,
            load,
            &Constraint::None,
        )?;
        let (u, rep) = problem.solve(Some(guess), &self.opts)?;
        Ok((
            u,
            StepSummary {
                iterations: rep.iterations,
                residual: rep.residual,
            },
        ))
    }
}

fn monitor(form: &EnergyForm, measure: &CellMeasure, w: &[f64], p: f64, u: &[f64]) -> Result<(f64, f64)> {
    let l2 = linalg::weighted_dot(u, u, w).sqrt();
    let ep = p_energy(form, &DiscreteFunction::new(form.level(), u.to_vec()), measure, p)?;
    Ok((l2, ep))
}

pub fn simulate(
    form: &EnergyForm,
    coeff: &dyn MonotoneCoefficient,
    measure: &CellMeasure,
    u0: &DiscreteFunction,
    noise: &NoiseModel,
    opts: &SimulationOptions,
    path: u64,
) -> Result<PathResult> {
    let graph = form.graph();
    u0.check(graph)?;
    let n_steps = opts.n_steps()?;
    let stepper = Stepper::new(form, coeff, measure, opts.dt, opts.solver.clone())?;
    let p = coeff.exponent();
    let n = graph.n_vertices();
    let stride = opts.stride.max(1);

    let mut u = u0.values.clone();
    let (l2, ep) = monitor(form, measure, stepper.weights(), p, &u)?;
    let mut result = PathResult {
        path,
        level: graph.level,
        times: vec![0.0],
        snapshots: vec![Snapshot {
            step: 0,
            time: 0.0,
            values: u.clone(),
        }],
        steps: Vec::with_capacity(n_steps),
        l2_norm: vec![l2],
        p_energy: vec![ep],
        final_state: Vec::new(),
    };
    for k in 0..n_steps {
        let dw = noise.increment(path, k as u64, opts.dt, n);
        let rhs: Vec<f64> = u.iter().zip(&dw).map(|(a, b)| a + b).collect();
        let (next, summary) = stepper.step(&rhs, &u).map_err(|e| Error::StepFailed {
            step: k + 1,
            source: Box::new(e),
        })?;
        u = next;
        let time = (k + 1) as f64 * opts.dt;
        let (l2, ep) = monitor(form, measure, stepper.weights(), p, &u)?;
        result.times.push(time);
        result.l2_norm.push(l2);
        result.p_energy.push(ep);
        result.steps.push(summary);
        if (k + 1) % stride == 0 || k + 1 == n_steps {
            result.snapshots.push(Snapshot {
                step: k + 1,
                time,
                values: u.clone(),
            });
        }
    }
    result.final_state = u;
    Ok(result)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// Per trial, `max_k ‖u¹_{k+1} - u²_{k+1}‖ / ‖u¹_k - u²_k‖`.
    pub growth_factors: Vec<f64>,
    pub max_factor: f64,
    pub flagged: bool,
}

/// Runs pairs of paths from different initial states under shared noise.
pub fn uniqueness_probe(
    form: &EnergyForm,
    coeff: &dyn MonotoneCoefficient,
    measure: &CellMeasure,
    noise: &NoiseModel,
    opts: &SimulationOptions,
    trials: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    let graph = form.graph();
    let n = graph.n_vertices();
    let n_steps = opts.n_steps()?;
    let factors = (0..trials)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let stepper = Stepper::new(form, coeff, measure, opts.dt, opts.solver.clone())?;
            let w = stepper.weights();
            let init = |which: u64| -> Vec<f64> {
                (0..n)
                    .map(|v| standard_normal(seed, trial as u64, which, v))
                    .collect()
            };
            let (mut a, mut b) = (init(0), init(1));
            let dist = |a: &[f64], b: &[f64]| {
                let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                linalg::weighted_dot(&d, &d, w).sqrt()
            };
            let mut prev = dist(&a, &b);
            let mut worst: f64 = 0.0;
            for k in 0..n_steps {
                let dw = noise.increment(trial as u64, k as u64, opts.dt, n);
                let ra: Vec<f64> = a.iter().zip(&dw).map(|(x, y)| x + y).collect();
                let rb: Vec<f64> = b.iter().zip(&dw).map(|(x, y)| x + y).collect();
                let wrap = |e| Error::StepFailed {
                    step: k + 1,
                    source: Box::new(e),
                };
                a = stepper.step(&ra, &a).map_err(wrap)?.0;
                b = stepper.step(&rb, &b).map_err(wrap)?.0;
                let d = dist(&a, &b);
                if prev > 0.0 {
                    worst = worst.max(d / prev);
                }
                prev = d;
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_factor = factors.iter().copied().fold(0.0, f64::max);
    Ok(UniquenessReport {
        flagged: max_factor > 1.0 + 1e-10,
        growth_factors: factors,
        max_factor,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub step: usize,
    pub time: f64,
    pub mean_l2_sq: f64,
    pub stderr_l2_sq: f64,
    pub mean_p_energy: f64,
    pub stderr_p_energy: f64,
}

/// Monte Carlo estimates of `E‖u(t)‖²` and `E[E_p(u(t))]` over `paths`
/// independent paths, every `stride` steps.
pub fn moment_stats(
    form: &EnergyForm,
    coeff: &dyn MonotoneCoefficient,
    measure: &CellMeasure,
    u0: &DiscreteFunction,
    noise: &NoiseModel,
    opts: &SimulationOptions,
    paths: usize,
) -> Result<Vec<MomentRow>> {
    if paths < 2 {
        return Err(Error::Incompatible("moment statistics need at least two paths".into()));
    }
    let thin = SimulationOptions {
        stride: usize::MAX,
        ..opts.clone()
    };
    let results = (0..paths)
        .into_par_iter()
        .map(|k| simulate(form, coeff, measure, u0, noise, &thin, k as u64))
        .collect::<Result<Vec<PathResult>>>()?;
    let n_steps = opts.n_steps()?;
    let stride = opts.stride.max(1);
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    };
    let mut rows = Vec::new();
    for k in (0..=n_steps).filter(|k| k % stride == 0 || *k == n_steps) {
        let l2: Vec<f64> = results.iter().map(|r| r.l2_norm[k].powi(2)).collect();
        let ep: Vec<f64> = results.iter().map(|r| r.p_energy[k]).collect();
        let (m1, s1) = stats(&l2);
        let (m2, s2) = stats(&ep);
        rows.push(MomentRow {
            step: k,
            time: results[0].times[k],
            mean_l2_sq: m1,
            stderr_l2_sq: s1,
            mean_p_energy: m2,
            stderr_p_energy: s2,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{harmonic_coordinates, kusuoka_measure, laplacian};
    use crate::quasilinear::{Identity, PLaplace};
    use crate::topology::FractalSpec;
    use crate::Tolerances;

    fn setup(m: usize) -> (EnergyForm, CellMeasure, SpectrumResult) {
        let form = EnergyForm::build(&FractalSpec::sierpinski_gasket(), m).unwrap();
        let mu = kusuoka_measure(&form, &harmonic_coordinates(&form).unwrap()).unwrap();
        let n = form.graph().n_vertices();
        let spec = laplacian(&form, &mu, "kusuoka")
            .unwrap()
            .spectrum(m, n, &Tolerances::default())
            .unwrap();
        (form, mu, spec)
    }

    #[test]
    fn normals_are_counter_addressed() {
        let a = standard_normal(7, 0, 3, 5);
        assert_eq!(a, standard_normal(7, 0, 3, 5));
        assert_ne!(a, standard_normal(7, 1, 3, 5));
        assert_ne!(a, standard_normal(7, 0, 4, 5));
        let xs: Vec<f64> = (0..20000).map(|k| standard_normal(1, 0, k, 1)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn noise_skips_constant_mode() {
        let (form, mu, spec) = setup(2);
        let noise = NoiseModel::new(&spec, 5, &QProfile::default(), 3).unwrap();
        let w = mu.vertex_weights(form.graph()).unwrap();
        let dw = noise.increment(0, 0, 0.01, form.graph().n_vertices());
        assert!(linalg::dot(&dw, &w).abs() < 1e-12);
        assert!(noise.tail_bound > 0.0);
        assert!(NoiseModel::new(&spec, spec.eigenvalues.len(), &QProfile::default(), 3).is_err());
    }

    #[test]
    fn zero_noise_is_dissipative() {
        let (form, mu, spec) = setup(3);
        let noise = NoiseModel::new(&spec, 4, &QProfile::Zero, 0).unwrap();
        let u0 = DiscreteFunction::new(
            3,
            (0..form.graph().n_vertices()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect(),
        );
        let opts = SimulationOptions {
            t_end: 0.05,
            dt: 0.005,
            ..SimulationOptions::default()
        };
        for coeff in [&PLaplace::new(4.0).unwrap() as &dyn MonotoneCoefficient, &Identity] {
            let r = simulate(&form, coeff, &mu, &u0, &noise, &opts, 0).unwrap();
            for k in 1..r.l2_norm.len() {
                assert!(r.l2_norm[k] <= r.l2_norm[k - 1] * (1.0 + 1e-12));
            }
            assert_eq!(r.steps.len(), 10);
        }
    }

    #[test]
    fn reproducible_paths() {
        let (form, mu, spec) = setup(2);
        let noise = NoiseModel::new(&spec, 6, &QProfile::default(), 9).unwrap();
        let u0 = DiscreteFunction::zeros(form.graph());
        let opts = SimulationOptions {
            t_end: 0.02,
            dt: 0.002,
            ..SimulationOptions::default()
        };
        let a = simulate(&form, &PLaplace::new(3.0).unwrap(), &mu, &u0, &noise, &opts, 4).unwrap();
        let b = simulate(&form, &PLaplace::new(3.0).unwrap(), &mu, &u0, &noise, &opts, 4).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert_eq!(a.l2_norm, b.l2_norm);
    }
}
