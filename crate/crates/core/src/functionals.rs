//! Scalar functionals of a grid function: the energy `J`, mass `M`, Nehari
//! functional `I`, and their `λ`- and `δ`-shifted variants.
//!
//! The nonlinearity is always evaluated through `|u|`, so `J` is even and
//! non-integer exponents are allowed.

use std::io::Write;

use crate::error::{PwError, Result};
use crate::io::fmt_num;
use crate::mesh::GridFunction;

/// Exponent `p` and the shifts `λ`, `δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub p: f64,
    pub lambda: f64,
    pub delta: f64,
}

impl Params {
    pub fn new(p: f64, lambda: f64, delta: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(PwError::InvalidArgument(format!("exponent p = {p} must be > 1")));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(PwError::InvalidArgument(format!("lambda = {lambda} must be ≥ 0")));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(PwError::InvalidArgument(format!("delta = {delta} must be ≥ 0")));
        }
        Ok(Self { p, lambda, delta })
    }

    /// Critical Sobolev exponent `(n+2)/(n−2)`; infinite for `n ≤ 2`.
    pub fn sobolev_exponent(dim: usize) -> f64 {
        if dim <= 2 {
            f64::INFINITY
        } else {
            (dim as f64 + 2.0) / (dim as f64 - 2.0)
        }
    }

    /// Rejects `p` above the critical exponent for the given dimension.
    pub fn check_dimension(&self, dim: usize) -> Result<()> {
        let ps = Self::sobolev_exponent(dim);
        if self.p > ps {
            return Err(PwError::InvalidArgument(format!(
                "p = {} exceeds the critical exponent {ps} in dimension {dim}",
                self.p
            )));
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Result<Self> {
        Self::new(self.p, lambda, self.delta)
    }

    pub fn with_delta(self, delta: f64) -> Result<Self> {
        Self::new(self.p, self.lambda, delta)
    }

    /// `(p−1)/(2(p+1))`, the ratio between `J` and `∫|u|^{p+1}` on the
    /// Nehari manifold.
    pub fn nehari_ratio(&self) -> f64 {
        (self.p - 1.0) / (2.0 * (self.p + 1.0))
    }
}

/// All functionals of one grid function at fixed parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionalReport {
    pub j: f64,
    pub m: f64,
    pub i: f64,
    pub e_lambda: f64,
    pub j_delta: f64,
    pub i_delta: f64,
    pub sup_norm: f64,
    pub h1_seminorm_sq: f64,
    pub lp1_norm_pow: f64,
}

impl FunctionalReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "J",
        "M",
        "I",
        "E_lambda",
        "J_delta",
        "I_delta",
        "sup_norm",
        "h1_seminorm_sq",
        "lp1_norm_pow",
    ];

    pub fn zero() -> Self {
        Self {
            j: 0.0,
            m: 0.0,
            i: 0.0,
            e_lambda: 0.0,
            j_delta: 0.0,
            i_delta: 0.0,
            sup_norm: 0.0,
            h1_seminorm_sq: 0.0,
            lp1_norm_pow: 0.0,
        }
    }

    pub fn to_row(&self) -> [f64; 9] {
        [
            self.j,
            self.m,
            self.i,
            self.e_lambda,
            self.j_delta,
            self.i_delta,
            self.sup_norm,
            self.h1_seminorm_sq,
            self.lp1_norm_pow,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.to_row().iter().all(|v| v.is_finite())
    }

    /// `√∫|∇u|²`.
    pub fn h1_seminorm(&self) -> f64 {
        self.h1_seminorm_sq.sqrt()
    }

    /// `E_λ` at a different `λ` from the stored `J` and `M`.
    pub fn e_at(&self, lambda: f64) -> f64 {
        self.j + lambda * self.m
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        w.write_record(self.to_row().iter().map(|&v| fmt_num(v)))?;
        w.flush()?;
        Ok(())
    }
}

pub fn energy_j(u: &GridFunction, params: &Params) -> f64 {
    let m = u.mesh();
    0.5 * m.dirichlet_form(u.values()) - m.power_sum(u.values(), params.p + 1.0) / (params.p + 1.0)
}

pub fn mass_m(u: &GridFunction) -> f64 {
    0.5 * u.mesh().dot(u.values(), u.values())
}

pub fn nehari_i(u: &GridFunction, params: &Params) -> f64 {
    let m = u.mesh();
    m.dirichlet_form(u.values()) - m.power_sum(u.values(), params.p + 1.0)
}

pub fn energy_e_lambda(u: &GridFunction, params: &Params) -> f64 {
    energy_j(u, params) + params.lambda * mass_m(u)
}

/// `(J_δ, I_δ) = (J + δM, I + 2δM)`.
pub fn delta_functionals(u: &GridFunction, params: &Params) -> (f64, f64) {
    let mass = mass_m(u);
    (
        energy_j(u, params) + params.delta * mass,
        nehari_i(u, params) + 2.0 * params.delta * mass,
    )
}

/// `(∫|∇u|² + δ∫u²) / (∫|u|^{p+1})^{2/(p+1)}`.
pub fn quotient_a(u: &GridFunction, params: &Params) -> Result<f64> {
    if u.is_zero() {
        return Err(PwError::ZeroFunction);
    }
    let m = u.mesh();
    let num = m.dirichlet_form(u.values()) + params.delta * m.dot(u.values(), u.values());
    let den = m.power_sum(u.values(), params.p + 1.0);
    Ok(num / den.powf(2.0 / (params.p + 1.0)))
}

/// Every functional of `u` from a single pass over the nodes.
pub fn report(u: &GridFunction, params: &Params) -> FunctionalReport {
    let mesh = u.mesh();
    let w = mesh.quad_weight();
    let q = params.p + 1.0;
    let (mut l2, mut lp, mut sup) = (0.0, 0.0, 0.0f64);
    for &v in u.values() {
        let a = v.abs();
        l2 += v * v;
        lp += a.powf(q);
        sup = sup.max(a);
    }
    let grad = mesh.dirichlet_form(u.values());
    let (m, lp) = (0.5 * w * l2, w * lp);
    let j = 0.5 * grad - lp / q;
    let i = grad - lp;
    FunctionalReport {
        j,
        m,
        i,
        e_lambda: j + params.lambda * m,
        j_delta: j + params.delta * m,
        i_delta: i + 2.0 * params.delta * m,
        sup_norm: sup,
        h1_seminorm_sq: grad,
        lp1_norm_pow: lp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sine(c: f64) -> GridFunction {
        let m = Mesh::interval(0.0, PI, 1023).unwrap();
        GridFunction::from_fn(&m, |x| c * x[0].sin()).unwrap()
    }

    fn p3() -> Params {
        Params::new(3.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(Params::new(1.0, 0.0, 0.0).is_err());
        assert!(Params::new(3.0, -1.0, 0.0).is_err());
        assert!(Params::new(3.0, 0.0, -0.1).is_err());
        assert!(Params::new(f64::NAN, 0.0, 0.0).is_err());
        let p = Params::new(7.0, 0.0, 0.0).unwrap();
        assert!(p.check_dimension(2).is_ok());
        assert!(p.check_dimension(3).is_err());
        assert!(Params::new(5.0, 0.0, 0.0).unwrap().check_dimension(3).is_ok());
    }

    #[test]
    fn energy_of_sine() {
        assert!((energy_j(&sine(1.0), &p3()) - 5.0 * PI / 32.0).abs() < 1e-3);
        assert!((energy_j(&sine(2.0), &p3()) + PI / 2.0).abs() < 1e-2);
        assert_eq!(energy_j(&sine(0.0), &p3()), 0.0);
    }

    #[test]
    fn mass_of_sine() {
        assert!((mass_m(&sine(1.0)) - PI / 4.0).abs() < 1e-4);
        assert_eq!(mass_m(&sine(0.0)), 0.0);
        let c = 3.7;
        assert!((mass_m(&sine(c)) - c * c * PI / 4.0).abs() < 1e-3);
    }

    #[test]
    fn nehari_of_sine() {
        assert!((nehari_i(&sine(1.0), &p3()) - PI / 8.0).abs() < 1e-3);
        let big = nehari_i(&sine(10.0), &p3());
        assert!(big < 0.0);
        assert!((big - (50.0 * PI - 3750.0 * PI)).abs() < 1.0);
        assert_eq!(nehari_i(&sine(0.0), &p3()), 0.0);
    }

    #[test]
    fn shifted_energy() {
        let u = sine(1.0);
        assert_eq!(energy_e_lambda(&u, &p3()), energy_j(&u, &p3()));
        let p = Params::new(3.0, 1.0, 0.0).unwrap();
        assert!((energy_e_lambda(&u, &p) - 13.0 * PI / 32.0).abs() < 1e-3);
        assert_eq!(energy_e_lambda(&sine(0.0), &p), 0.0);
    }

    #[test]
    fn delta_pair() {
        let u = sine(1.0);
        let (jd, id) = delta_functionals(&u, &p3());
        assert_eq!(jd, energy_j(&u, &p3()));
        assert_eq!(id, nehari_i(&u, &p3()));

        let p = Params::new(3.0, 0.0, 2.0).unwrap();
        let (jd, id) = delta_functionals(&u, &p);
        assert!((jd - (5.0 * PI / 32.0 + PI / 2.0)).abs() < 1e-3);
        assert!((id - (PI / 8.0 + PI)).abs() < 1e-3);

        let lp = u.mesh().power_sum(u.values(), 4.0);
        let rhs = 2.0 * jd - (1.0 - 2.0 / 4.0) * lp;
        assert!(((id - rhs) / id).abs() < 1e-12);
    }

    #[test]
    fn quotient_of_sine() {
        let u = sine(1.0);
        let a = quotient_a(&u, &p3()).unwrap();
        assert!((a - (PI / 2.0) / (3.0 * PI / 8.0).sqrt()).abs() < 1e-3);
        let a5 = quotient_a(&u.scaled(-5.0).unwrap(), &p3()).unwrap();
        assert!(((a5 - a) / a).abs() < 1e-10);
        let a_delta = quotient_a(&u, &Params::new(3.0, 0.0, 1.0).unwrap()).unwrap();
        assert!(a_delta > a);
        assert!(matches!(
            quotient_a(&sine(0.0), &p3()),
            Err(PwError::ZeroFunction)
        ));
    }

    #[test]
    fn report_matches_individual_functionals() {
        let u = sine(1.0);
        let p = Params::new(3.0, 1.0, 0.0).unwrap();
        let r = report(&u, &p);
        assert!((r.j - energy_j(&u, &p)).abs() < 1e-14);
        assert!((r.m - mass_m(&u)).abs() < 1e-14);
        assert!((r.i - nehari_i(&u, &p)).abs() < 1e-14);
        assert!((r.j - 5.0 * PI / 32.0).abs() < 1e-3);
        assert!((r.m - PI / 4.0).abs() < 1e-4);
        assert!((r.i - PI / 8.0).abs() < 1e-3);
        assert_eq!(r.e_lambda, r.j + p.lambda * r.m);
        assert!((r.sup_norm - 1.0).abs() < 1e-5);
        assert_eq!(report(&sine(0.0), &p), FunctionalReport::zero());
    }

    #[test]
    fn report_csv_columns() {
        let mut buf = Vec::new();
        report(&sine(1.0), &p3()).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "J,M,I,E_lambda,J_delta,I_delta,sup_norm,h1_seminorm_sq,lp1_norm_pow\n"
        ));
        assert_eq!(text.lines().count(), 2);
    }

    fn random_fn() -> impl Strategy<Value = GridFunction> {
        prop::collection::vec(-3.0f64..3.0, 31).prop_map(|v| {
            let m = Mesh::interval(0.0, 2.0, 31).unwrap();
            GridFunction::new(&m, v).unwrap()
        })
    }

    proptest! {
        #[test]
        fn homogeneity_ladder(u in random_fn(), c in -4.0f64..4.0, p in 1.2f64..6.0) {
            let params = Params::new(p, 0.7, 0.3).unwrap();
            let m = u.mesh();
            let cu = u.scaled(c).unwrap();
            let g = m.dirichlet_form(u.values());
            let lp = m.power_sum(u.values(), p + 1.0);
            let expect = c * c * g - c.abs().powf(p + 1.0) * lp;
            let got = nehari_i(&cu, &params);
            prop_assert!((got - expect).abs() <= 1e-10 * (c * c * g + c.abs().powf(p + 1.0) * lp + 1e-300));
            prop_assert!((mass_m(&cu) - c * c * mass_m(&u)).abs() <= 1e-12 * (c * c * mass_m(&u) + 1e-300));
        }

        #[test]
        fn report_cross_identities(u in random_fn(), p in 1.2f64..6.0, lambda in 0.0f64..5.0, delta in 0.0f64..5.0) {
            let params = Params::new(p, lambda, delta).unwrap();
            let r = report(&u, &params);
            prop_assert_eq!(r.e_lambda, r.j + lambda * r.m);
            let rhs = 2.0 * r.j_delta - (1.0 - 2.0 / (p + 1.0)) * r.lp1_norm_pow;
            let scale = r.j_delta.abs() + r.lp1_norm_pow + r.i_delta.abs() + 1e-300;
            prop_assert!((r.i_delta - rhs).abs() <= 1e-10 * scale);
        }

        #[test]
        fn nehari_sign_pattern(u in random_fn(), p in 1.5f64..5.0) {
            prop_assume!(!u.is_zero());
            let params = Params::new(p, 0.0, 0.0).unwrap();
            let m = u.mesh();
            let g = m.dirichlet_form(u.values());
            let lp = m.power_sum(u.values(), p + 1.0);
            let t_star = (g / lp).powf(1.0 / (p - 1.0));
            for f in [0.25, 0.5, 0.9] {
                prop_assert!(nehari_i(&u.scaled(f * t_star).unwrap(), &params) > 0.0);
            }
            for f in [1.1, 2.0, 4.0] {
                prop_assert!(nehari_i(&u.scaled(f * t_star).unwrap(), &params) < 0.0);
            }
        }
    }
}
