//! Randomized checks of the structural conditions on a coefficient.
//!
//! Fiber probes test `a_x` on vectors of `R^dim` directly; the optional
//! field probes use a level graph, a reference measure and a Poincaré
//! constant to test coercivity and monotonicity on gradients of functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coefficient::MonotoneCoefficient;
use crate::energy::{CellMeasure, DiscreteFunction, EnergyForm};
use crate::error::Result;
use crate::fields::lp_function_norm_pow;
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub name: String,
    pub passed: bool,
    /// Fitted constants, in the order the condition names them.
    pub constants: Vec<f64>,
    pub worst: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub coefficient: String,
    pub probes: usize,
    pub seed: u64,
    pub checks: Vec<ConditionCheck>,
}

impl ConditionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ConditionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Function-level data for the field probes.
pub struct FieldContext<'a> {
    pub form: &'a EnergyForm,
    pub measure: &'a CellMeasure,
    /// Constant of `‖f‖_p^p <= c_P E_p(f)` for mean-zero `f`.
    pub poincare: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Random vector with log-uniform length in `[1e-3, 1e3]`.
fn probe(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = norm(&v).max(1e-300);
    let len = 10f64.powf(rng.random_range(-3.0..3.0));
    v.iter().map(|x| x * len / n).collect()
}

pub fn verify_conditions(
    coeff: &dyn MonotoneCoefficient,
    probes: usize,
    seed: u64,
    dim: usize,
    field: Option<&FieldContext>,
) -> Result<ConditionReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = coeff.exponent();
    let mut checks = vec![
        monotonicity(coeff, probes, dim, &mut rng),
        growth(coeff, probes, dim, &mut rng),
        coercivity(coeff, probes, dim, &mut rng),
        hemicontinuity(coeff, probes, dim, &mut rng),
    ];
    if let Some(ctx) = field {
        checks.push(field_coercivity(coeff, ctx, probes, p, &mut rng)?);
        checks.push(field_monotonicity(coeff, ctx, probes, &mut rng)?);
    }
    Ok(ConditionReport {
        coefficient: coeff.name(),
        probes,
        seed,
        checks,
    })
}

fn monotonicity(
    coeff: &dyn MonotoneCoefficient,
    probes: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> ConditionCheck {
    let mut worst = f64::INFINITY;
    let mut c3 = f64::INFINITY;
    for _ in 0..probes {
        let v = probe(rng, dim);
        let w = if rng.random_bool(0.5) {
            probe(rng, dim)
        } else {
            // Nearby pairs catch local decrease.
            let h = probe(rng, dim);
            let s = 1e-3 * norm(&v) / norm(&h);
            v.iter().zip(&h).map(|(a, b)| a + s * b).collect()
        };
        let da = sub(&coeff.apply(&v), &coeff.apply(&w));
        let dv = sub(&v, &w);
        let lhs = linalg::dot(&da, &dv);
        let scale = (norm(&v) + norm(&w)).powi(2);
        worst = worst.min(lhs / scale);
        let nd = linalg::dot(&dv, &dv);
        if nd > 0.0 {
            c3 = c3.min(lhs / nd);
        }
    }
    ConditionCheck {
        name: "monotonicity".into(),
        passed: worst >= -1e-12,
        constants: vec![c3.max(0.0)],
        worst,
        detail: "min <a(v)-a(w),v-w>/(|v|+|w|)^2; constant is the fitted c3".into(),
    }
}

fn growth(
    coeff: &dyn MonotoneCoefficient,
    probes: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> ConditionCheck {
    let p = coeff.exponent();
    let ratio = |v: &[f64]| norm(&coeff.apply(v)) / (1.0 + norm(v).powf(p - 1.0));
    let mut c0: f64 = 0.0;
    for _ in 0..probes {
        let v = probe(rng, dim);
        c0 = c0.max(ratio(&v));
    }
    // The ratio must level off: compare successive decades far out.
    let dir = probe(rng, dim);
    let unit: Vec<f64> = dir.iter().map(|x| x / norm(&dir)).collect();
    let mut decade_ratio: f64 = 0.0;
    let mut prev = None;
    for k in 2..=8 {
        let v: Vec<f64> = unit.iter().map(|x| x * 10f64.powi(k)).collect();
        let r = ratio(&v);
        c0 = c0.max(r);
        if let Some(q) = prev {
            if q > 0.0 {
                decade_ratio = decade_ratio.max(r / q);
            }
        }
        prev = Some(r);
    }
    ConditionCheck {
        name: "growth".into(),
        passed: c0.is_finite() && decade_ratio <= 1.1,
        constants: vec![c0],
        worst: decade_ratio,
        detail: format!("|a(v)| <= c0 (1 + |v|^{}); worst is the largest decade ratio", p - 1.0),
    }
}

fn coercivity(
    coeff: &dyn MonotoneCoefficient,
    probes: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> ConditionCheck {
    let p = coeff.exponent();
    let samples: Vec<(f64, f64)> = (0..probes)
        .map(|_| {
            let v = probe(rng, dim);
            (linalg::dot(&coeff.apply(&v), &v), norm(&v).powf(p))
        })
        .collect();
    let c1 = samples
        .iter()
        .filter(|(_, np)| *np >= 1.0)
        .map(|(a, np)| a / np)
        .fold(f64::INFINITY, f64::min);
    let c2 = samples
        .iter()
        .map(|(a, np)| c1 * np - a)
        .fold(0.0f64, f64::max);
    ConditionCheck {
        name: "coercivity".into(),
        passed: c1 > 0.0 && c1.is_finite() && c2.is_finite(),
        constants: vec![c1, c2],
        worst: c1,
        detail: format!("<a(v),v> >= c1 |v|^{p} - c2"),
    }
}

fn hemicontinuity(
    coeff: &dyn MonotoneCoefficient,
    probes: usize,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> ConditionCheck {
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let (u, v, w) = (probe(rng, dim), probe(rng, dim), probe(rng, dim));
        let h = |l: f64| {
            let x: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + l * b).collect();
            linalg::dot(&coeff.apply(&x), &w)
        };
        let h0 = h(0.0);
        let scale = (1.0 + norm(&u) + norm(&v)).powf(coeff.exponent() - 1.0) * norm(&w);
        let gap = (1..=12)
            .map(|k| (h(10f64.powi(-k)) - h0).abs() / scale)
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(gap);
    }
    ConditionCheck {
        name: "hemicontinuity".into(),
        passed: worst < 1e-6,
        constants: vec![],
        worst,
        detail: "relative gap |<a(u+λv),w> - <a(u),w>| at the smallest swept λ".into(),
    }
}

fn random_mean_zero(ctx: &FieldContext, w: &[f64], rng: &mut ChaCha8Rng) -> DiscreteFunction {
    let g = ctx.form.graph();
    let len = 10f64.powf(rng.random_range(-2.0..2.0));
    let mut f: Vec<f64> = (0..g.n_vertices()).map(|_| len * rng.random_range(-1.0..1.0)).collect();
    let mean = linalg::dot(&f, w) / w.iter().sum::<f64>();
    f.iter_mut().for_each(|x| *x -= mean);
    DiscreteFunction::new(g.level, f)
}

/// `⟨a(∂f), ∂g⟩_H` with `a` acting on cell densities relative to the measure.
fn field_pairing(coeff: &dyn MonotoneCoefficient, ctx: &FieldContext, f: &DiscreteFunction, g: &DiscreteFunction) -> Result<f64> {
    let (_, gff) = crate::energy::energy_measure(ctx.form, f, f)?;
    let (_, gfg) = crate::energy::energy_measure(ctx.form, f, g)?;
    Ok(gff
        .masses
        .iter()
        .zip(&gfg.masses)
        .zip(&ctx.measure.masses)
        .map(|((a, b), m)| coeff.alpha(a / m) * b)
        .sum())
}

fn field_coercivity(
    coeff: &dyn MonotoneCoefficient,
    ctx: &FieldContext,
    probes: usize,
    p: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ConditionCheck> {
    let w = ctx.measure.vertex_weights(ctx.form.graph())?;
    let c1 = 1.0 / (1.0 + ctx.poincare);
    let mut worst = f64::INFINITY;
    for _ in 0..probes {
        let f = random_mean_zero(ctx, &w, rng);
        let lhs = field_pairing(coeff, ctx, &f, &f)?;
        let ep = crate::fields::p_energy(ctx.form, &f, ctx.measure, p)?;
        let sob = lp_function_norm_pow(&f.values, &w, p) + ep;
        worst = worst.min((lhs - c1 * sob) / sob.max(1e-300));
    }
    Ok(ConditionCheck {
        name: "field_coercivity".into(),
        passed: worst >= -1e-10,
        constants: vec![c1, 0.0],
        worst,
        detail: "<a(df),df> >= c1 |f|_{1,p}^p on mean-zero f, c1 = 1/(1+c_P)".into(),
    })
}

fn field_monotonicity(
    coeff: &dyn MonotoneCoefficient,
    ctx: &FieldContext,
    probes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ConditionCheck> {
    let w = ctx.measure.vertex_weights(ctx.form.graph())?;
    let mut worst = f64::INFINITY;
    for _ in 0..probes {
        let f = random_mean_zero(ctx, &w, rng);
        let g = random_mean_zero(ctx, &w, rng);
        let d = f.sub(&g);
        let lhs = field_pairing(coeff, ctx, &f, &d)? - field_pairing(coeff, ctx, &g, &d)?;
        let scale = (ctx.form.energy_of(&f)?.sqrt() + ctx.form.energy_of(&g)?.sqrt()).powi(2);
        let a_scale = field_pairing(coeff, ctx, &f, &f)?.abs() + field_pairing(coeff, ctx, &g, &g)?.abs();
        worst = worst.min(lhs / (scale + a_scale).max(1e-300));
    }
    Ok(ConditionCheck {
        name: "field_monotonicity".into(),
        passed: worst >= -1e-12,
        constants: vec![],
        worst,
        detail: "<a(df)-a(dg), df-dg> >= 0 on random functions".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quasilinear::coefficient::{Identity, PLaplace};

    struct Flipped;
    impl MonotoneCoefficient for Flipped {
        fn name(&self) -> String {
            "flipped".into()
        }
        fn alpha(&self, d: f64) -> f64 {
            -d
        }
        fn alpha_prime(&self, _d: f64) -> f64 {
            -1.0
        }
        fn potential(&self, d: f64) -> f64 {
            -0.25 * d * d
        }
        fn exponent(&self) -> f64 {
            4.0
        }
    }

    #[test]
    fn identity_constants() {
        let r = verify_conditions(&Identity, 200, 0, 2, None).unwrap();
        assert!(r.passed(), "{r:?}");
        let c = r.check("coercivity").unwrap();
        assert!((c.constants[0] - 1.0).abs() < 1e-9);
        assert!(c.constants[1].abs() < 1e-9);
        assert!((r.check("monotonicity").unwrap().constants[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn p_laplace_passes() {
        for p in [2.0, 3.0, 4.0] {
            let r = verify_conditions(&PLaplace::new(p).unwrap(), 200, 1, 2, None).unwrap();
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn flipped_fails_monotonicity() {
        let r = verify_conditions(&Flipped, 200, 2, 2, None).unwrap();
        assert!(!r.check("monotonicity").unwrap().passed);
    }
}
