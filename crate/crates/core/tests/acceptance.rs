//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any of them fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fractal_forms::energy::{
    energy_measure, harmonic_coordinates, kusuoka_measure, laplacian, poincare_constant,
    self_similar_measure, HarmonicExtender, PoincareOptions,
};
use fractal_forms::fields::{
    direct_integral_check, energy_measure_functional, field_norm_sq, generator_times, gradient,
    kusuoka_matrices, lp_field_norm, lp_function_norm_pow, martingale_defect, p_energy,
    weighted_energy_measure, weighted_energy_measure_pair, FiberFrame, VectorField,
};
use fractal_forms::linalg;
use fractal_forms::quasilinear::{
    solve_divergence_form, solve_p_laplace, verify_conditions, Constraint, FieldContext, Identity,
    MonotoneCoefficient, PLaplace, SolverOptions,
};
use fractal_forms::spde::{simulate, uniqueness_probe, NoiseModel, QProfile, SimulationOptions};
use fractal_forms::{
    CellMeasure, DiscreteFunction, EnergyForm, FractalSpec, LevelGraph, Tolerances,
};

type Outcome = Result<String, String>;

fn sg() -> FractalSpec {
    FractalSpec::sierpinski_gasket()
}

fn kusuoka(form: &EnergyForm) -> CellMeasure {
    kusuoka_measure(form, &harmonic_coordinates(form).unwrap()).unwrap()
}

fn random_function(graph: &LevelGraph, rng: &mut ChaCha8Rng) -> DiscreteFunction {
    DiscreteFunction::new(
        graph.level,
        (0..graph.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

fn random_cellwise_field(graph: &LevelGraph, rng: &mut ChaCha8Rng, terms: usize) -> VectorField {
    let mut v = VectorField::zero(graph.level);
    for _ in 0..terms {
        let g: Vec<f64> = (0..graph.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = random_function(graph, rng);
        v = v.add(&VectorField::cellwise(graph, &g, &f).unwrap());
    }
    v
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn renormalization() -> Outcome {
    let spec = sg();
    let forms: Vec<EnergyForm> = (0..=6).map(|m| EnergyForm::build(&spec, m).unwrap()).collect();
    let ext = HarmonicExtender::new(&spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let g0 = forms[0].graph();
        let f0 = random_function(g0, &mut rng);
        let e0 = forms[0].energy_of(&f0).unwrap();
        let mut f = f0;
        for m in 1..=6 {
            f = ext.extend(forms[m - 1].graph(), &f, forms[m].graph()).unwrap();
            let e = forms[m].energy_of(&f).unwrap();
            worst = worst.max((e - e0).abs() / e0.abs().max(f64::MIN_POSITIVE));
        }
    }
    ensure(worst <= 1e-12, format!("max relative drift {worst:.3e} over m=0..6 (r=3/5)"))
}

fn carre_du_champ() -> Outcome {
    let form = EnergyForm::build(&sg(), 4).unwrap();
    let g = form.graph();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = random_function(g, &mut rng);
        let u = random_function(g, &mut rng);
        let h = random_function(g, &mut rng);
        let (edges, _) = energy_measure(&form, &u, &h).unwrap();
        let lhs = 2.0 * edges.integrate(g, &f).unwrap();
        let rhs = form.energy(&f.product(&u), &h).unwrap() + form.energy(&f.product(&h), &u).unwrap()
            - form.energy(&u.product(&h), &f).unwrap();
        worst = worst.max((lhs - rhs).abs());
    }
    ensure(worst < 1e-10, format!("max abs error {worst:.3e} over 100 triples, m=4"))
}

fn total_mass() -> Outcome {
    let form = EnergyForm::build(&sg(), 4).unwrap();
    let g = form.graph();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let u = random_function(g, &mut rng);
        let h = random_function(g, &mut rng);
        let (edges, cells) = energy_measure(&form, &u, &h).unwrap();
        let e = form.energy(&u, &h).unwrap();
        let scale = e.abs().max(1.0);
        worst = worst
            .max((cells.total() - e).abs() / scale)
            .max((edges.total() - e).abs() / scale);
    }
    ensure(worst <= 1e-12, format!("max error {worst:.3e} over 100 pairs"))
}

fn gradient_isometry() -> Outcome {
    let form = EnergyForm::build(&sg(), 4).unwrap();
    let g = form.graph();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = random_function(g, &mut rng);
        let e = form.energy_of(&f).unwrap();
        let n = field_norm_sq(g, &gradient(g, &f).unwrap()).unwrap();
        worst = worst.max((n - e).abs() / e.max(1.0));
    }
    ensure(worst <= 1e-12, format!("max error {worst:.3e} over 100 functions"))
}

fn direct_integral() -> Outcome {
    let form = EnergyForm::build(&sg(), 4).unwrap();
    let g = form.graph();
    let frame = FiberFrame::new(&form).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let k1 = rng.random_range(1..4);
        let k2 = rng.random_range(1..4);
        let v = random_cellwise_field(g, &mut rng, k1);
        let w = random_cellwise_field(g, &mut rng, k2);
        let rep = direct_integral_check(&frame, g, &v, &w).unwrap();
        worst = worst.max(rep.discrepancy);
    }
    ensure(worst < 1e-10, format!("max discrepancy {worst:.3e} over 100 field pairs, m=4"))
}

fn kusuoka_structure() -> Outcome {
    let spec = sg();
    let metrics: Vec<_> = (0..=7)
        .map(|n| kusuoka_matrices(&EnergyForm::build(&spec, n).unwrap()).unwrap().1)
        .collect();
    let mut trace_err: f64 = 0.0;
    for z in &metrics {
        for w in 0..z.n_cells() {
            trace_err = trace_err.max((z.trace(w) - 1.0).abs());
        }
    }
    let mut mart: f64 = 0.0;
    for n in 0..=6 {
        mart = mart.max(martingale_defect(&metrics[n], &metrics[n + 1], spec.n_maps).unwrap());
    }
    let medians: Vec<f64> = (2..=7).map(|n| metrics[n].eigen_stats().median).collect();
    let decreasing = medians.windows(2).all(|p| p[1] < p[0]);
    let detail = format!(
        "trace err {trace_err:.3e}, martingale defect {mart:.3e}, medians {}",
        medians.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" > ")
    );
    ensure(trace_err <= 1e-13 && mart <= 1e-12 && decreasing, detail)
}

fn generator_product() -> Outcome {
    let form = EnergyForm::build(&sg(), 4).unwrap();
    let g = form.graph();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let f = random_function(g, &mut rng);
        let w = random_function(g, &mut rng);
        let u = random_function(g, &mut rng);
        let lhs = -generator_times(&form, &w, &f).unwrap().apply(&u);
        let (uf, _) = energy_measure(&form, &u, &f).unwrap();
        let rhs = uf.integrate(g, &w).unwrap()
            + energy_measure_functional(&form, &f, &w).unwrap().apply(&u);
        worst = worst.max((lhs - rhs).abs());
    }
    ensure(worst < 1e-10, format!("max abs error {worst:.3e} over 100 triples"))
}

/// Discrete 1-D p-Laplace oracle: the flux on successive edges jumps by the
/// lumped load, and the first flux is found by bisection on `u(1) = 0`.
fn interval_oracle(xs: &[f64], weights: &[f64], f: &[f64], p: f64) -> Vec<f64> {
    let n = xs.len();
    let slopes = |q0: f64| -> Vec<f64> {
        let mut q = q0;
        let mut s = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            if i > 0 {
                q += weights[i] * f[i];
            }
            s.push(q.signum() * q.abs().powf(1.0 / (p - 1.0)));
        }
        s
    };
    let end = |q0: f64| -> f64 {
        slopes(q0)
            .iter()
            .enumerate()
            .map(|(i, s)| s * (xs[i + 1] - xs[i]))
            .sum()
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while end(lo) > 0.0 {
        lo *= 2.0;
    }
    while end(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if end(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = slopes(0.5 * (lo + hi));
    let mut u = vec![0.0; n];
    for i in 1..n {
        u[i] = u[i - 1] + s[i - 1] * (xs[i] - xs[i - 1]);
    }
    u
}

fn dense_dirichlet(form: &EnergyForm, weights: &[f64], f: &DiscreteFunction) -> Vec<f64> {
    let g = form.graph();
    let free: Vec<usize> = (0..g.n_vertices()).filter(|&v| !g.is_boundary(v)).collect();
    let k = linalg::restrict(form.stiffness(), &free);
    let mut a = DMatrix::<f64>::zeros(free.len(), free.len());
    for (i, j, &v) in k.triplet_iter() {
        a[(i, j)] += v;
    }
    let b = nalgebra::DVector::from_iterator(free.len(), free.iter().map(|&v| -weights[v] * f.values[v]));
    let x = a.lu().solve(&b).unwrap();
    let mut u = vec![0.0; g.n_vertices()];
    for (k, &v) in free.iter().enumerate() {
        u[v] = x[k];
    }
    u
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn p_laplace_solver() -> Outcome {
    let opts = SolverOptions {
        tol: 1e-11,
        max_iter: 400,
        ..SolverOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let form = EnergyForm::build(&sg(), 4).unwrap();
    let g = form.graph();
    let mu = kusuoka(&form);
    let w = mu.vertex_weights(g).unwrap();
    let dirichlet = Constraint::boundary_zero(g);

    let f = random_function(g, &mut rng);
    let (u2, _) = solve_p_laplace(&form, &f, 2.0, &mu, &dirichlet, &opts).unwrap();
    let lin = dense_dirichlet(&form, &w, &f);
    let linear_err = sup_diff(&u2.values, &lin);

    let interval = EnergyForm::build(&FractalSpec::unit_interval(), 8).unwrap();
    let ig = interval.graph();
    let leb = self_similar_measure(ig, &[0.5, 0.5]).unwrap();
    let iw = leb.vertex_weights(ig).unwrap();
    let mut order: Vec<usize> = (0..ig.n_vertices()).collect();
    order.sort_by(|&a, &b| ig.vertices[a].coords[0].total_cmp(&ig.vertices[b].coords[0]));
    let fi = DiscreteFunction::new(
        ig.level,
        ig.vertices
            .iter()
            .map(|v| (6.0 * v.coords[0]).sin() + 0.5)
            .collect(),
    );
    let (ui, _) =
        solve_p_laplace(&interval, &fi, 3.0, &leb, &Constraint::boundary_zero(ig), &opts).unwrap();
    let xs: Vec<f64> = order.iter().map(|&v| ig.vertices[v].coords[0]).collect();
    let ws: Vec<f64> = order.iter().map(|&v| iw[v]).collect();
    let fs: Vec<f64> = order.iter().map(|&v| fi.values[v]).collect();
    let oracle = interval_oracle(&xs, &ws, &fs, 3.0);
    let solved: Vec<f64> = order.iter().map(|&v| ui.values[v]).collect();
    let oracle_err = sup_diff(&solved, &oracle);

    let p = 3.0;
    let lambda = 7.5;
    let (a, _) = solve_p_laplace(&form, &f, p, &mu, &dirichlet, &opts).unwrap();
    let (b, _) = solve_p_laplace(&form, &f.scaled(lambda), p, &mu, &dirichlet, &opts).unwrap();
    let s = lambda.powf(1.0 / (p - 1.0));
    let homog_err = sup_diff(&b.values, &a.scaled(s).values) / b.max_abs();

    let coeff = PLaplace::new(4.0).unwrap();
    let mut sols: Vec<DiscreteFunction> = Vec::new();
    for k in 0..5 {
        let guess = random_function(g, &mut rng).scaled(k as f64 * 3.0);
        let (u, _) =
            solve_divergence_form(&form, &coeff, &f, &mu, &dirichlet, &opts, Some(&guess)).unwrap();
        sols.push(u);
    }
    let uniq_err = sols
        .iter()
        .map(|u| sup_diff(&u.values, &sols[0].values))
        .fold(0.0, f64::max);

    ensure(
        linear_err <= 1e-10 && oracle_err < 1e-5 && homog_err <= 1e-7 && uniq_err <= 1e-7,
        format!(
            "p=2 vs linear {linear_err:.3e}, interval vs oracle {oracle_err:.3e}, \
             homogeneity {homog_err:.3e}, 5 starts {uniq_err:.3e}"
        ),
    )
}

struct Flipped;

impl MonotoneCoefficient for Flipped {
    fn name(&self) -> String {
        "flipped".into()
    }
    fn alpha(&self, d: f64) -> f64 {
        1.0 - d
    }
    fn alpha_prime(&self, _d: f64) -> f64 {
        -1.0
    }
    fn potential(&self, d: f64) -> f64 {
        0.5 * d - 0.25 * d * d
    }
    fn exponent(&self) -> f64 {
        4.0
    }
}

fn condition_probes() -> Outcome {
    let form = EnergyForm::build(&sg(), 3).unwrap();
    let mu = kusuoka(&form);
    let lambda1 = oracle_lambda1(&form, &mu);
    let ctx = FieldContext {
        form: &form,
        measure: &mu,
        poincare: 1.0 / lambda1,
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for p in [2.0, 3.0, 4.0] {
        let coeff = PLaplace::new(p).unwrap();
        let field = (p == 2.0).then_some(&ctx);
        let rep = verify_conditions(&coeff, 200, 9, 2, field).unwrap();
        ok &= rep.passed();
        for name in ["monotonicity", "growth", "coercivity", "hemicontinuity"] {
            ok &= rep.check(name).is_some_and(|c| c.passed);
        }
        if p == 2.0 {
            ok &= rep.check("field_coercivity").is_some_and(|c| c.passed);
        }
        lines.push(format!("p={p}:{}", if rep.passed() { "ok" } else { "fail" }));
    }
    let bad = verify_conditions(&Flipped, 200, 9, 2, None).unwrap();
    let rejected = bad.check("monotonicity").is_some_and(|c| !c.passed);
    ok &= rejected;
    lines.push(format!("non-monotone rejected: {rejected}"));
    ensure(ok, lines.join(", "))
}

fn oracle_lambda1(form: &EnergyForm, mu: &CellMeasure) -> f64 {
    let w = mu.vertex_weights(form.graph()).unwrap();
    let n = w.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (i, j, &v) in form.stiffness().triplet_iter() {
        a[(i, j)] += v / (w[i] * w[j]).sqrt();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev[1]
}

fn spde() -> Outcome {
    let form = EnergyForm::build(&sg(), 3).unwrap();
    let mu = kusuoka(&form);
    let g = form.graph();
    let tol = Tolerances::default();
    let spec = laplacian(&form, &mu, "kusuoka")
        .unwrap()
        .spectrum(3, g.n_vertices(), &tol)
        .unwrap();
    let lambda1 = spec.eigenvalues[1];
    let e1 = spec.eigenfunction(1);
    let w = mu.vertex_weights(g).unwrap();
    let t_end = 1.0 / lambda1;
    let exact = (-lambda1 * t_end).exp();
    let quiet = NoiseModel::none(0);
    let mut errs = Vec::new();
    let mut dts = Vec::new();
    for k in 0..4 {
        let n = 10usize << k;
        let opts = SimulationOptions {
            t_end,
            dt: t_end / n as f64,
            stride: n,
            ..SimulationOptions::default()
        };
        let r = simulate(&form, &Identity, &mu, &e1, &quiet, &opts, 0).unwrap();
        let diff: Vec<f64> = r.final_state.iter().zip(&e1.values).map(|(u, e)| u - exact * e).collect();
        errs.push(linalg::weighted_dot(&diff, &diff, &w).sqrt());
        dts.push(opts.dt);
    }
    let lx: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let slope = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / lx.iter().map(|x| (x - mx).powi(2)).sum::<f64>();

    let noise = NoiseModel::new(&spec, 16, &QProfile::default(), 11).unwrap();
    let opts = SimulationOptions {
        t_end: 0.02,
        dt: 0.002,
        ..SimulationOptions::default()
    };
    let mut max_factor: f64 = 0.0;
    for p in [2.0, 4.0] {
        let coeff = PLaplace::new(p).unwrap();
        let rep = uniqueness_probe(&form, &coeff, &mu, &noise, &opts, 4, 12).unwrap();
        max_factor = max_factor.max(rep.max_factor);
    }

    let coeff = PLaplace::new(3.0).unwrap();
    let u0 = DiscreteFunction::zeros(g);
    let a = simulate(&form, &coeff, &mu, &u0, &noise, &opts, 3).unwrap();
    let b = simulate(&form, &coeff, &mu, &u0, &noise, &opts, 3).unwrap();
    let same = a
        .final_state
        .iter()
        .zip(&b.final_state)
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && a.l2_norm.iter().zip(&b.l2_norm).all(|(x, y)| x.to_bits() == y.to_bits());

    ensure(
        (slope - 1.0).abs() <= 0.15 && max_factor <= 1.0 + 1e-10 && same,
        format!(
            "decay order {slope:.4}, max contraction factor {max_factor:.12}, bitwise reproducible {same}"
        ),
    )
}

fn poincare() -> Outcome {
    let form = EnergyForm::build(&sg(), 3).unwrap();
    let g = form.graph();
    let mu = kusuoka(&form);
    let w = mu.vertex_weights(g).unwrap();
    let tol = Tolerances::default();
    let rep2 = poincare_constant(&form, &mu, 2.0, &tol, &PoincareOptions::default()).unwrap();
    let product_err = (rep2.constant * oracle_lambda1(&form, &mu) - 1.0).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_ratio: f64 = 0.0;
    let mut violated = false;
    for p in [3.0, 4.0] {
        let bound = poincare_constant(&form, &mu, p, &tol, &PoincareOptions::default())
            .unwrap()
            .certified_upper;
        for _ in 0..50 {
            let f = random_function(g, &mut rng);
            let mean = linalg::dot(&f.values, &w) / w.iter().sum::<f64>();
            let f = f.map(|x| x - mean);
            let ratio = lp_function_norm_pow(&f.values, &w, p) / p_energy(&form, &f, &mu, p).unwrap();
            worst_ratio = worst_ratio.max(ratio / bound);
            violated |= ratio > bound;
        }
    }
    ensure(
        product_err <= 1e-12 && !violated,
        format!("|c_P λ1 - 1| = {product_err:.3e}, largest ratio/bound {worst_ratio:.3e} over 100 trials"),
    )
}

fn holder() -> Outcome {
    let form = EnergyForm::build(&sg(), 3).unwrap();
    let g = form.graph();
    let mu = kusuoka(&form);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = f64::NEG_INFINITY;
    for trial in 0..100 {
        let v = random_cellwise_field(g, &mut rng, 2);
        let p: f64 = rng.random_range(1.05..10.0);
        let q = p / (p - 1.0);
        let w = if trial % 2 == 0 {
            random_cellwise_field(g, &mut rng, 2)
        } else {
            // extremal pair: |w|_x = |v|_x^{p-1}
            let gv = weighted_energy_measure(g, &v).unwrap();
            let scale: Vec<f64> = gv
                .masses
                .iter()
                .zip(&mu.masses)
                .map(|(e, m)| (e / m).max(0.0).powf(0.5 * (p - 2.0)))
                .collect();
            v.times_cellwise(g, &scale).unwrap()
        };
        let pair = weighted_energy_measure_pair(g, &v, &w).unwrap();
        let lhs: f64 = pair.masses.iter().map(|x| x.abs()).sum();
        let rhs = lp_field_norm(g, &v, &mu, p).unwrap() * lp_field_norm(g, &w, &mu, q).unwrap();
        // independent evaluation of the same norms from the cell densities
        let gv = weighted_energy_measure(g, &v).unwrap();
        let gw = weighted_energy_measure(g, &w).unwrap();
        let norm = |gm: &CellMeasure, s: f64| -> f64 {
            gm.masses
                .iter()
                .zip(&mu.masses)
                .map(|(e, m)| m * (e / m).max(0.0).powf(s / 2.0))
                .sum::<f64>()
                .powf(1.0 / s)
        };
        let rhs2 = norm(&gv, p) * norm(&gw, q);
        if ((rhs - rhs2) / rhs2).abs() > 1e-10 {
            return Err(format!("field norm mismatch {rhs:e} vs {rhs2:e}"));
        }
        worst = worst.max((lhs - rhs) / rhs);
    }
    ensure(worst <= 1e-12, format!("max (lhs - rhs)/rhs {worst:.3e} over 100 trials"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("renormalization exactness", renormalization),
        ("carre du champ identity", carre_du_champ),
        ("total mass identity", total_mass),
        ("gradient isometry", gradient_isometry),
        ("direct integral isometry", direct_integral),
        ("kusuoka structure", kusuoka_structure),
        ("generator product rule", generator_product),
        ("p-laplace solver", p_laplace_solver),
        ("condition probes", condition_probes),
        ("spde", spde),
        ("poincare", poincare),
        ("holder for field norms", holder),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} ({secs:.2}s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} ({secs:.2}s)", i + 1)
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
