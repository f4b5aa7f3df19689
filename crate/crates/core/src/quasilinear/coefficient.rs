/// A decomposable radial fiber map `a_x(v) = α(‖v‖²) v`.
///
/// `potential` is the convex integrand `G` with `G' = α / 2` and `G(0) = 0`,
/// so that `Σ_w m(w) G(Γ(u)(w) / m(w))` is the energy whose derivative is
/// `v ↦ ⟨a(∂u), ∂v⟩_H`.
pub trait MonotoneCoefficient: Send + Sync {
    fn name(&self) -> String;
    fn alpha(&self, d: f64) -> f64;
    fn alpha_prime(&self, d: f64) -> f64;
    fn potential(&self, d: f64) -> f64;
    /// Growth exponent `p` in `‖a(v)‖_q <= c_0 (1 + ‖v‖_p^{p-1})`.
    fn exponent(&self) -> f64;

    /// `a_x(v)` on a fiber vector in an orthonormal frame.
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let d: f64 = v.iter().map(|x| x * x).sum();
        let s = self.alpha(d);
        v.iter().map(|x| s * x).collect()
    }
}

/// `a(v) = v`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Identity;

impl MonotoneCoefficient for Identity {
    fn name(&self) -> String {
        "identity".into()
    }
    fn alpha(&self, _d: f64) -> f64 {
        1.0
    }
    fn alpha_prime(&self, _d: f64) -> f64 {
        0.0
    }
    fn potential(&self, d: f64) -> f64 {
        0.5 * d
    }
    fn exponent(&self) -> f64 {
        2.0
    }
}

/// `a(v) = ‖v‖^{p-2} v`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PLaplace {
    pub p: f64,
}

impl PLaplace {
    pub fn new(p: f64) -> crate::Result<Self> {
        if !(p >= 2.0) || !p.is_finite() {
            return Err(crate::Error::InvalidExponent(p));
        }
        Ok(Self { p })
    }
}

impl MonotoneCoefficient for PLaplace {
    fn name(&self) -> String {
        format!("p-laplace(p={})", self.p)
    }
    fn alpha(&self, d: f64) -> f64 {
        if self.p == 2.0 {
            1.0
        } else {
            d.powf(0.5 * (self.p - 2.0))
        }
    }
    fn alpha_prime(&self, d: f64) -> f64 {
        if self.p == 2.0 {
            0.0
        } else if self.p == 4.0 {
            1.0
        } else {
            0.5 * (self.p - 2.0) * d.powf(0.5 * (self.p - 4.0))
        }
    }
    fn potential(&self, d: f64) -> f64 {
        d.powf(0.5 * self.p) / self.p
    }
    fn exponent(&self) -> f64 {
        self.p
    }
}

/// `a(v) = (κ + ‖v‖^{p-2}) v`, strictly monotone for `κ > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftedPLaplace {
    pub p: f64,
    pub kappa: f64,
}

impl MonotoneCoefficient for ShiftedPLaplace {
    fn name(&self) -> String {
        format!("shifted-p-laplace(p={},kappa={})", self.p, self.kappa)
    }
    fn alpha(&self, d: f64) -> f64 {
        self.kappa + PLaplace { p: self.p }.alpha(d)
    }
    fn alpha_prime(&self, d: f64) -> f64 {
        PLaplace { p: self.p }.alpha_prime(d)
    }
    fn potential(&self, d: f64) -> f64 {
        0.5 * self.kappa * d + PLaplace { p: self.p }.potential(d)
    }
    fn exponent(&self) -> f64 {
        self.p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_potential(c: &dyn MonotoneCoefficient) {
        for d in [0.3, 1.0, 2.7] {
            let h = 1e-6;
            let dg = (c.potential(d + h) - c.potential(d - h)) / (2.0 * h);
            assert!((dg - 0.5 * c.alpha(d)).abs() < 1e-7, "{}", c.name());
            let da = (c.alpha(d + h) - c.alpha(d - h)) / (2.0 * h);
            assert!((da - c.alpha_prime(d)).abs() < 1e-6, "{}", c.name());
        }
        assert_eq!(c.potential(0.0), 0.0);
    }

    #[test]
    fn potentials_match_coefficients() {
        check_potential(&Identity);
        for p in [2.0, 2.5, 3.0, 4.0, 6.0] {
            check_potential(&PLaplace::new(p).unwrap());
        }
        check_potential(&ShiftedPLaplace { p: 3.0, kappa: 0.5 });
    }

    #[test]
    fn p_laplace_apply() {
        let a = PLaplace::new(4.0).unwrap().apply(&[3.0, 4.0]);
        assert!((a[0] - 75.0).abs() < 1e-12);
        assert!((a[1] - 100.0).abs() < 1e-12);
        assert!(PLaplace::new(1.5).is_err());
    }
}
