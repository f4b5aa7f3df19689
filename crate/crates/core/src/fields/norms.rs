use super::field::{weighted_energy_measure, VectorField};
use crate::energy::{energy_measure, CellMeasure, DiscreteFunction, EnergyForm};
use crate::error::{Error, Result};
use crate::topology::LevelGraph;

/// `(Γ/m)^{p/2} m`, with the limits `0` (`p < 2`) and `∞` (`p > 2`) for
/// massless cells carrying energy.
fn density_power_mass(gamma: f64, mass: f64, p: f64) -> f64 {
    if gamma == 0.0 {
        return 0.0;
    }
    if mass == 0.0 {
        return if p > 2.0 {
            f64::INFINITY
        } else if p == 2.0 {
            gamma
        } else {
            0.0
        };
    }
    (gamma / mass).powf(p / 2.0) * mass
}

/// `‖v‖_{L_p(X, m, (H_x))}` with fibers identified over each cell.
pub fn lp_field_norm(
    graph: &LevelGraph,
    v: &VectorField,
    measure: &CellMeasure,
    p: f64,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidExponent(p));
    }
    measure.check(graph)?;
    let gamma = weighted_energy_measure(graph, v)?;
    if p.is_infinite() {
        return Ok(gamma
            .masses
            .iter()
            .zip(&measure.masses)
            .map(|(&g, &m)| {
                if g == 0.0 {
                    0.0
                } else if m == 0.0 {
                    f64::INFINITY
                } else {
                    (g / m).sqrt()
                }
            })
            .fold(0.0, f64::max));
    }
    let sum: f64 = gamma
        .masses
        .iter()
        .zip(&measure.masses)
        .map(|(&g, &m)| density_power_mass(g, m, p))
        .sum();
    Ok(sum.powf(1.0 / p))
}

/// Cells of zero mass on which `v` has energy; `lp_field_norm` reports `∞`
/// there for `p > 2`.
pub fn singular_cells(graph: &LevelGraph, v: &VectorField, measure: &CellMeasure) -> Result<Vec<usize>> {
    let gamma = weighted_energy_measure(graph, v)?;
    Ok(gamma
        .masses
        .iter()
        .zip(&measure.masses)
        .enumerate()
        .filter(|(_, (&g, &m))| m == 0.0 && g > 0.0)
        .map(|(i, _)| i)
        .collect())
}

/// Hölder conjugate exponent.
pub fn conjugate_exponent(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// p-energy `E_p(f) = Σ_w (Γ(f)(w)/m(w))^{p/2} m(w)`.
pub fn p_energy(form: &EnergyForm, f: &DiscreteFunction, measure: &CellMeasure, p: f64) -> Result<f64> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    measure.check(form.graph())?;
    let (_, gamma) = energy_measure(form, f, f)?;
    Ok(gamma
        .masses
        .iter()
        .zip(&measure.masses)
        .map(|(&g, &m)| density_power_mass(g, m, p))
        .sum())
}

/// `E_p(f, g) = Σ_w (Γ(f)(w)/m(w))^{p/2-1} Γ(f, g)(w)`.
pub fn p_energy_pair(
    form: &EnergyForm,
    f: &DiscreteFunction,
    g: &DiscreteFunction,
    measure: &CellMeasure,
    p: f64,
) -> Result<f64> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidExponent(p));
    }
    measure.check(form.graph())?;
    let (_, gff) = energy_measure(form, f, f)?;
    let (_, gfg) = energy_measure(form, f, g)?;
    let mut total = 0.0;
    for ((&a, &b), &m) in gff.masses.iter().zip(&gfg.masses).zip(&measure.masses) {
        if b == 0.0 {
            continue;
        }
        let factor = if p == 2.0 {
            1.0
        } else if a == 0.0 {
            0.0
        } else if m == 0.0 {
            f64::INFINITY
        } else {
            (a / m).powf(p / 2.0 - 1.0)
        };
        total += factor * b;
    }
    Ok(total)
}

/// `Σ_v W_v |f_v|^p`.
pub fn lp_function_norm_pow(f: &[f64], weights: &[f64], p: f64) -> f64 {
    f.iter()
        .zip(weights)
        .map(|(x, w)| w * x.abs().powf(p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{harmonic_coordinates, kusuoka_measure};
    use crate::fields::field::{field_inner, field_norm_sq, gradient};
    use crate::topology::{build_level, FractalSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn setup(m: usize) -> (EnergyForm, CellMeasure) {
        let form = EnergyForm::new(Arc::new(
            build_level(&FractalSpec::sierpinski_gasket(), m).unwrap(),
        ));
        let phi = harmonic_coordinates(&form).unwrap();
        let mu = kusuoka_measure(&form, &phi).unwrap();
        (form, mu)
    }

    fn rand_fn(form: &EnergyForm, rng: &mut ChaCha8Rng) -> DiscreteFunction {
        let g = form.graph();
        DiscreteFunction::new(g.level, (0..g.n_vertices()).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn rand_field(form: &EnergyForm, rng: &mut ChaCha8Rng) -> VectorField {
        let g = form.graph();
        let mut v = VectorField::zero(g.level);
        for _ in 0..2 {
            let w: Vec<f64> = (0..g.n_cells()).map(|_| rng.random_range(-1.0..1.0)).collect();
            v = v.add(&VectorField::cellwise(g, &w, &rand_fn(form, rng)).unwrap());
        }
        v
    }

    #[test]
    fn two_norm_is_hilbert_norm() {
        let (form, mu) = setup(3);
        let g = form.graph();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = rand_field(&form, &mut rng);
        let a = lp_field_norm(g, &v, &mu, 2.0).unwrap();
        let b = field_norm_sq(g, &v).unwrap().sqrt();
        assert!((a - b).abs() < 1e-12 * b);
    }

    #[test]
    fn holder_and_multiplier_bounds() {
        let (form, mu) = setup(3);
        let g = form.graph();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let v = rand_field(&form, &mut rng);
            let w = rand_field(&form, &mut rng);
            let p = rng.random_range(1.0..6.0);
            let q = conjugate_exponent(p);
            let lhs = field_inner(g, &v, &w).unwrap().abs();
            let rhs = lp_field_norm(g, &v, &mu, p).unwrap() * lp_field_norm(g, &w, &mu, q).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12));

            let f = rand_fn(&form, &mut rng);
            let fv = v.times_function(g, &f).unwrap();
            let lhs = lp_field_norm(g, &fv, &mu, p).unwrap();
            let rhs = f.max_abs() * lp_field_norm(g, &v, &mu, p).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
        let v = rand_field(&form, &mut rng);
        let w = rand_field(&form, &mut rng);
        let lhs = field_inner(g, &v, &w).unwrap().abs();
        let rhs = lp_field_norm(g, &v, &mu, 1.0).unwrap() * lp_field_norm(g, &w, &mu, f64::INFINITY).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-12));
    }

    #[test]
    fn norm_is_homogeneous_and_convex() {
        let (form, mu) = setup(3);
        let g = form.graph();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let v = rand_field(&form, &mut rng);
            let w = rand_field(&form, &mut rng);
            let p = rng.random_range(1.0..5.0);
            let s = rng.random_range(-3.0..3.0);
            let nv = lp_field_norm(g, &v, &mu, p).unwrap();
            let ns = lp_field_norm(g, &v.scaled(s), &mu, p).unwrap();
            assert!((ns - s.abs() * nv).abs() < 1e-12 * nv.max(1.0));
            let mid = lp_field_norm(g, &v.add(&w).scaled(0.5), &mu, p).unwrap();
            let nw = lp_field_norm(g, &w, &mu, p).unwrap();
            assert!(mid <= 0.5 * (nv + nw) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_mass_cells_are_flagged() {
        let (form, _) = setup(1);
        let g = form.graph();
        let mu = CellMeasure::new(1, vec![0.0, 0.5, 0.5], true).unwrap();
        let f = rand_fn(&form, &mut ChaCha8Rng::seed_from_u64(4));
        let v = gradient(g, &f).unwrap();
        assert_eq!(singular_cells(g, &v, &mu).unwrap(), vec![0]);
        assert_eq!(lp_field_norm(g, &v, &mu, 4.0).unwrap(), f64::INFINITY);
        assert!(lp_field_norm(g, &v, &mu, 2.0).unwrap().is_finite());
    }

    #[test]
    fn p_energy_properties() {
        let (form, mu) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let f = rand_fn(&form, &mut rng);
            let h = rand_fn(&form, &mut rng);
            let e = form.energy_of(&f).unwrap();
            assert!((p_energy(&form, &f, &mu, 2.0).unwrap() - e).abs() < 1e-12 * e);
            let p = rng.random_range(2.0..6.0);
            let ep = p_energy(&form, &f, &mu, p).unwrap();
            assert!((p_energy_pair(&form, &f, &f, &mu, p).unwrap() - ep).abs() < 1e-12 * ep);
            let lhs = p_energy_pair(&form, &f, &h, &mu, p).unwrap().abs();
            let rhs = ep.powf((p - 1.0) / p) * p_energy(&form, &h, &mu, p).unwrap().powf(1.0 / p);
            assert!(lhs <= rhs * (1.0 + 1e-12));
        }
        let f = rand_fn(&form, &mut rng);
        assert!(p_energy(&form, &f, &mu, 1.5).is_err());
    }

    #[test]
    fn pair_is_directional_derivative() {
        let (form, mu) = setup(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for p in [2.5, 3.0, 4.0] {
            let f = rand_fn(&form, &mut rng);
            let h = rand_fn(&form, &mut rng);
            let t = 1e-5;
            let plus = p_energy(&form, &f.add(&h.scaled(t)), &mu, p).unwrap();
            let minus = p_energy(&form, &f.sub(&h.scaled(t)), &mu, p).unwrap();
            let fd = (plus - minus) / (2.0 * t) / p;
            let exact = p_energy_pair(&form, &f, &h, &mu, p).unwrap();
            assert!((fd - exact).abs() < 1e-6 * exact.abs(), "p={p}: {fd} vs {exact}");
        }
    }
}
