use std::sync::OnceLock;

use proptest::prelude::*;

use fractal_forms::energy::{energy_measure, harmonic_coordinates, kusuoka_measure, laplacian, HarmonicExtender};
use fractal_forms::fields::{lp_field_norm, p_energy, weighted_energy_measure_pair, VectorField};
use fractal_forms::quasilinear::{solve_p_laplace, Constraint, PLaplace, SolverOptions};
use fractal_forms::spde::{simulate, NoiseModel, QProfile, SimulationOptions, Stepper};
use fractal_forms::{CellMeasure, DiscreteFunction, EnergyForm, FractalSpec, Tolerances};

const LEVEL: usize = 3;

struct Fixture {
    forms: Vec<EnergyForm>,
    mu: CellMeasure,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let spec = FractalSpec::sierpinski_gasket();
        let forms: Vec<EnergyForm> = (0..=LEVEL).map(|m| EnergyForm::build(&spec, m).unwrap()).collect();
        let mu = kusuoka_measure(&forms[LEVEL], &harmonic_coordinates(&forms[LEVEL]).unwrap()).unwrap();
        Fixture { forms, mu }
    })
}

fn n_vertices(m: usize) -> usize {
    fixture().forms[m].graph().n_vertices()
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, n)
}

fn field(cells: &[f64], f: &[f64]) -> VectorField {
    let g = fixture().forms[LEVEL].graph();
    VectorField::cellwise(g, cells, &DiscreteFunction::new(LEVEL, f.to_vec())).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn energy_measure_is_symmetric_with_total_energy(
        u in values(n_vertices(LEVEL)),
        h in values(n_vertices(LEVEL)),
    ) {
        let form = &fixture().forms[LEVEL];
        let u = DiscreteFunction::new(LEVEL, u);
        let h = DiscreteFunction::new(LEVEL, h);
        let (_, uh) = energy_measure(form, &u, &h).unwrap();
        let (_, hu) = energy_measure(form, &h, &u).unwrap();
        for (a, b) in uh.masses.iter().zip(&hu.masses) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let e = form.energy(&u, &h).unwrap();
        prop_assert!((uh.total() - e).abs() <= 1e-11 * (1.0 + e.abs()));
        let (_, uu) = energy_measure(form, &u, &u).unwrap();
        prop_assert!(uu.masses.iter().all(|&x| x >= -1e-14));
    }

    #[test]
    fn harmonic_extension_keeps_energy(f0 in values(3)) {
        let fx = fixture();
        let ext = HarmonicExtender::new(&FractalSpec::sierpinski_gasket()).unwrap();
        let mut f = DiscreteFunction::new(0, f0);
        let e0 = fx.forms[0].energy_of(&f).unwrap();
        for m in 1..=LEVEL {
            f = ext.extend(fx.forms[m - 1].graph(), &f, fx.forms[m].graph()).unwrap();
            let e = fx.forms[m].energy_of(&f).unwrap();
            prop_assert!((e - e0).abs() <= 1e-12 * (1.0 + e0));
        }
    }

    #[test]
    fn holder_inequality_for_fields(
        c1 in values(27), f1 in values(n_vertices(LEVEL)),
        c2 in values(27), f2 in values(n_vertices(LEVEL)),
        p in 1.05f64..10.0,
    ) {
        let g = fixture().forms[LEVEL].graph();
        let mu = &fixture().mu;
        let v = field(&c1, &f1);
        let w = field(&c2, &f2);
        let q = p / (p - 1.0);
        let lhs: f64 = weighted_energy_measure_pair(g, &v, &w).unwrap().masses.iter().map(|x| x.abs()).sum();
        let rhs = lp_field_norm(g, &v, mu, p).unwrap() * lp_field_norm(g, &w, mu, q).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn p_energy_is_homogeneous(f in values(n_vertices(LEVEL)), t in -3.0f64..3.0, p in 2.0f64..8.0) {
        let fx = fixture();
        let form = &fx.forms[LEVEL];
        let f = DiscreteFunction::new(LEVEL, f);
        let a = p_energy(form, &f.scaled(t), &fx.mu, p).unwrap();
        let b = t.abs().powf(p) * p_energy(form, &f, &fx.mu, p).unwrap();
        prop_assert!((a - b).abs() <= 1e-11 * (1.0 + b));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn p_laplace_solution_scales_with_the_load(f in values(n_vertices(LEVEL)), t in 0.2f64..4.0, p in 2.0f64..5.0) {
        let fx = fixture();
        let form = &fx.forms[LEVEL];
        let bc = Constraint::boundary_zero(form.graph());
        let opts = SolverOptions { tol: 1e-11, ..SolverOptions::default() };
        let f = DiscreteFunction::new(LEVEL, f);
        let (u, r1) = solve_p_laplace(form, &f, p, &fx.mu, &bc, &opts).unwrap();
        let (ut, r2) = solve_p_laplace(form, &f.scaled(t), p, &fx.mu, &bc, &opts).unwrap();
        prop_assert!(r1.converged && r2.converged);
        let s = t.powf(1.0 / (p - 1.0));
        let scale = u.max_abs().max(1e-3);
        for (a, b) in ut.values.iter().zip(&u.values) {
            prop_assert!((a - s * b).abs() <= 1e-6 * s * scale);
        }
    }
}

#[test]
fn energy_is_stable_across_levels_for_refined_coordinates() {
    let fx = fixture();
    let coords: Vec<_> = fx.forms.iter().map(|f| harmonic_coordinates(f).unwrap()).collect();
    for m in 1..=LEVEL {
        for (a, b) in coords[m].iter().zip(&coords[m - 1]) {
            let ea = fx.forms[m].energy_of(a).unwrap();
            let eb = fx.forms[m - 1].energy_of(b).unwrap();
            assert!((ea - eb).abs() < 1e-12, "level {m}: {ea} vs {eb}");
        }
    }
}

#[test]
fn kusuoka_measure_masses_coarsen_consistently() {
    let fx = fixture();
    let spec = FractalSpec::sierpinski_gasket();
    for m in 1..=LEVEL {
        let fine = kusuoka_measure(&fx.forms[m], &harmonic_coordinates(&fx.forms[m]).unwrap()).unwrap();
        let coarse = kusuoka_measure(&fx.forms[m - 1], &harmonic_coordinates(&fx.forms[m - 1]).unwrap()).unwrap();
        let agg = fine.coarsen(spec.n_maps).unwrap();
        for (a, b) in agg.masses.iter().zip(&coarse.masses) {
            assert!((a - b).abs() < 1e-13, "level {m}: {a} vs {b}");
        }
    }
}

#[test]
fn spde_steps_agree_with_independent_re_solves() {
    let fx = fixture();
    let form = &fx.forms[LEVEL];
    let mu = &fx.mu;
    let spectrum = laplacian(form, mu, "kusuoka")
        .unwrap()
        .spectrum(LEVEL, 9, &Tolerances::default())
        .unwrap();
    let noise = NoiseModel::new(&spectrum, 8, &QProfile::default(), 11).unwrap();
    let opts = SimulationOptions {
        t_end: 0.02,
        dt: 2e-3,
        stride: 1,
        ..SimulationOptions::default()
    };
    let n = form.graph().n_vertices();
    for p in [2.0, 3.5] {
        let coeff = PLaplace::new(p).unwrap();
        let u0 = DiscreteFunction::new(LEVEL, spectrum.eigenvectors[1].clone());
        let path = simulate(form, &coeff, mu, &u0, &noise, &opts, 3).unwrap();
        assert_eq!(path.snapshots.len(), 11);
        let stepper = Stepper::new(form, &coeff, mu, opts.dt, opts.solver.clone()).unwrap();
        for k in 0..10 {
            let prev = &path.snapshots[k].values;
            let dw = noise.increment(3, k as u64, opts.dt, n);
            let rhs: Vec<f64> = prev.iter().zip(&dw).map(|(a, b)| a + b).collect();
            let (again, _) = stepper.step(&rhs, &vec![0.0; n]).unwrap();
            let err = again
                .iter()
                .zip(&path.snapshots[k + 1].values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "p = {p}, step {k}: {err}");
        }
    }
}
