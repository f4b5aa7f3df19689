//! Invariant suite run by `fracforms verify`.

use serde::{Deserialize, Serialize};

use fractal_forms::energy::{
    energy_measure, laplacian, poincare_constant, rayleigh_quotient, HarmonicExtender, PoincareOptions,
};
use fractal_forms::fields::{
    direct_integral_check, energy_measure_functional, field_norm_sq, generator_times, gradient,
    kusuoka_matrices, lp_field_norm, martingale_defect, weighted_energy_measure_pair, FiberFrame,
    VectorField,
};
use fractal_forms::linalg::{self, SpdSolver};
use fractal_forms::quasilinear::{solve_p_laplace, verify_conditions, Constraint, FieldContext, PLaplace};
use fractal_forms::spde::{simulate, standard_normal, NoiseModel, SimulationOptions};
use fractal_forms::{DiscreteFunction, EnergyForm, LevelGraph, MonotoneCoefficient};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::measure::build_measure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Worst observed defect.
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub level: usize,
    pub trials: usize,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect()
    }
}

struct Sampler {
    seed: u64,
    stream: u64,
}

impl Sampler {
    fn function(&mut self, g: &LevelGraph) -> DiscreteFunction {
        self.stream += 1;
        let s = self.stream;
        DiscreteFunction::new(
            g.level,
            (0..g.n_vertices()).map(|v| standard_normal(self.seed, s, 0, v)).collect(),
        )
    }

    fn cell_values(&mut self, g: &LevelGraph) -> Vec<f64> {
        self.stream += 1;
        let s = self.stream;
        (0..g.n_cells()).map(|w| standard_normal(self.seed, s, 1, w)).collect()
    }

    fn field(&mut self, g: &LevelGraph, terms: usize) -> CliResult<VectorField> {
        let mut v = VectorField::zero(g.level);
        for _ in 0..terms {
            let c = self.cell_values(g);
            let f = self.function(g);
            v = v.add(&VectorField::cellwise(g, &c, &f)?);
        }
        Ok(v)
    }
}

fn check(name: &str, value: f64, tolerance: f64) -> Check {
    Check {
        name: name.into(),
        passed: value <= tolerance,
        value,
        tolerance,
    }
}

pub fn run(cfg: &RunConfig) -> CliResult<VerifyReport> {
    let spec = cfg.spec()?;
    let m = cfg.level;
    let trials = cfg.diagnostics.trials.max(1);
    let mut rng = Sampler {
        seed: cfg.seed,
        stream: 0,
    };
    let forms: Vec<EnergyForm> = (0..=m)
        .map(|n| {
            cfg.check_budget(n)?;
            Ok(EnergyForm::build(&spec, n)?)
        })
        .collect::<CliResult<_>>()?;
    let form = &forms[m];
    let g = form.graph();
    let mu = build_measure(form, &cfg.measure, &cfg.tolerances)?;
    let w = mu.vertex_weights(g)?;
    let mut checks = Vec::new();

    let ext = HarmonicExtender::new(&spec)?;
    let mut drift: f64 = 0.0;
    for _ in 0..trials {
        let mut f = rng.function(forms[0].graph());
        let e0 = forms[0].energy_of(&f)?;
        for n in 1..=m {
            f = ext.extend(forms[n - 1].graph(), &f, forms[n].graph())?;
            drift = drift.max((forms[n].energy_of(&f)? - e0).abs() / e0.max(f64::MIN_POSITIVE));
        }
    }
    checks.push(check("renormalization", drift, 1e-12));

    let (mut cdc, mut mass, mut iso, mut gpart) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let f = rng.function(g);
        let u = rng.function(g);
        let h = rng.function(g);
        let (edges, cells) = energy_measure(form, &u, &h)?;
        let lhs = 2.0 * edges.integrate(g, &f)?;
        let rhs = form.energy(&f.product(&u), &h)? + form.energy(&f.product(&h), &u)?
            - form.energy(&u.product(&h), &f)?;
        cdc = cdc.max((lhs - rhs).abs());
        let e = form.energy(&u, &h)?;
        mass = mass.max((cells.total() - e).abs() / e.abs().max(1.0));
        let ef = form.energy_of(&f)?;
        iso = iso.max((field_norm_sq(g, &gradient(g, &f)?)? - ef).abs() / ef.max(1.0));
        let l = -generator_times(form, &h, &f)?.apply(&u);
        let (uf, _) = energy_measure(form, &u, &f)?;
        let r = uf.integrate(g, &h)? + energy_measure_functional(form, &f, &h)?.apply(&u);
        gpart = gpart.max((l - r).abs());
    }
    checks.push(check("carre_du_champ", cdc, 1e-10));
    checks.push(check("total_mass", mass, 1e-12));
    checks.push(check("gradient_isometry", iso, 1e-12));
    checks.push(check("generator_product", gpart, 1e-10));

    let frame = FiberFrame::new(form)?;
    let mut disc: f64 = 0.0;
    for _ in 0..trials {
        let v = rng.field(g, 2)?;
        let u = rng.field(g, 2)?;
        let r = direct_integral_check(&frame, g, &v, &u)?;
        disc = disc.max(r.discrepancy / r.global.abs().max(1.0));
    }
    checks.push(check("direct_integral", disc, 1e-10));

    let metrics = forms
        .iter()
        .map(|f| Ok(kusuoka_matrices(f)?.1))
        .collect::<CliResult<Vec<_>>>()?;
    let mut trace: f64 = 0.0;
    for z in &metrics {
        for c in 0..z.n_cells() {
            trace = trace.max((z.trace(c) - 1.0).abs());
        }
    }
    let mut mart: f64 = 0.0;
    for n in 0..m {
        mart = mart.max(martingale_defect(&metrics[n], &metrics[n + 1], spec.n_maps)?);
    }
    checks.push(check("kusuoka_trace", trace, 1e-13));
    checks.push(check("kusuoka_martingale", mart, 1e-12));

    let f = rng.function(g);
    let solver_opts = fractal_forms::quasilinear::SolverOptions {
        tol: 1e-11,
        ..cfg.pde.solver.clone()
    };
    let (u, _) = solve_p_laplace(form, &f, 2.0, &mu, &Constraint::boundary_zero(g), &solver_opts)?;
    let free: Vec<usize> = (0..g.n_vertices()).filter(|&v| !g.is_boundary(v)).collect();
    let direct = SpdSolver::new(&linalg::restrict(form.stiffness(), &free))?
        .solve(&free.iter().map(|&v| -w[v] * f.values[v]).collect::<Vec<_>>());
    let lin = free
        .iter()
        .zip(&direct)
        .map(|(&v, x)| (u.values[v] - x).abs())
        .fold(0.0, f64::max);
    checks.push(check("p2_matches_linear", lin, 1e-10));

    let op = laplacian(form, &mu, cfg.measure.id())?;
    let poincare = poincare_constant(form, &mu, 2.0, &cfg.tolerances, &PoincareOptions::default())?;
    let s = op.spectrum(m, 2.min(op.dim()), &cfg.tolerances)?;
    let rq = rayleigh_quotient(&op, &s.eigenvectors[1]);
    checks.push(check("poincare_lambda1", (poincare.constant * rq - 1.0).abs(), 1e-10));

    let coeff = PLaplace::new(cfg.pde.p)?;
    let ctx = FieldContext {
        form,
        measure: &mu,
        poincare: poincare.constant,
    };
    let field = (cfg.pde.p == 2.0).then_some(&ctx);
    let cond = verify_conditions(&coeff, cfg.diagnostics.probes, cfg.seed, 2, field)?;
    let failed = cond.checks.iter().filter(|c| !c.passed).count();
    checks.push(check("condition_probes", failed as f64, 0.0));

    let mut holder: f64 = f64::NEG_INFINITY;
    for k in 0..trials {
        let v = rng.field(g, 2)?;
        let u = rng.field(g, 2)?;
        let p = 1.1 + 6.9 * (k as f64 * 0.618_033_988_749_895).fract();
        let q = p / (p - 1.0);
        let lhs: f64 = weighted_energy_measure_pair(g, &v, &u)?
            .masses
            .iter()
            .map(|x| x.abs())
            .sum();
        let rhs = lp_field_norm(g, &v, &mu, p)? * lp_field_norm(g, &u, &mu, q)?;
        holder = holder.max((lhs - rhs) / rhs);
    }
    checks.push(check("holder", holder.max(0.0), 1e-12));

    let spectrum = op.spectrum(m, (cfg.spde.truncation + 1).min(op.dim()), &cfg.tolerances)?;
    let noise = NoiseModel::new(
        &spectrum,
        cfg.spde.truncation.min(spectrum.eigenvalues.len() - 1),
        &cfg.spde.covariance,
        cfg.seed,
    )?;
    let sim = SimulationOptions {
        t_end: 5.0 * cfg.spde.simulation.dt,
        ..cfg.spde.simulation.clone()
    };
    let c: &dyn MonotoneCoefficient = &PLaplace::new(cfg.spde.p)?;
    let u0 = DiscreteFunction::zeros(g);
    let a = simulate(form, c, &mu, &u0, &noise, &sim, 0)?;
    let b = simulate(form, c, &mu, &u0, &noise, &sim, 0)?;
    let same = a
        .final_state
        .iter()
        .zip(&b.final_state)
        .all(|(x, y)| x.to_bits() == y.to_bits());
    checks.push(check("spde_reproducible", if same { 0.0 } else { 1.0 }, 0.0));

    Ok(VerifyReport {
        level: m,
        trials,
        seed: cfg.seed,
        checks,
    })
}
