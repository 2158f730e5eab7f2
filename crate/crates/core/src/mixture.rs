//! Mixed p-spin models: `xi(s) = sum_p c_p^2 s^p` plus an external field.

use crate::error::{config, domain, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Highest interaction degree accepted.
pub const MAX_DEGREE: u32 = 32;

/// A mixed p-spin model.
///
/// `coeffs` maps a degree `p >= 2` to the squared coefficient `c_p^2 >= 0`,
/// so `xi(s) = sum_p coeffs[p] s^p`. The JSON form is
/// `{"coeffs": {"2": 0.5, "4": 0.25}, "h": 0.0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub coeffs: BTreeMap<u32, f64>,
    #[serde(default)]
    pub h: f64,
}

impl MixtureSpec {
    pub fn new(coeffs: impl IntoIterator<Item = (u32, f64)>, h: f64) -> Result<Self> {
        let spec = Self { coeffs: coeffs.into_iter().collect(), h };
        spec.validate()?;
        Ok(spec)
    }

    /// Sherrington-Kirkpatrick: `xi(s) = s^2 / 2`.
    pub fn sk(h: f64) -> Self {
        Self { coeffs: BTreeMap::from([(2, 0.5)]), h }
    }

    /// Pure p-spin with `xi(s) = s^p`.
    pub fn pure(p: u32, h: f64) -> Result<Self> {
        Self::new([(p, 1.0)], h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(config("mixture needs at least one degree"));
        }
        for (&p, &c) in &self.coeffs {
            if p < 2 {
                return Err(config(format!("degree {p} < 2 is not allowed")));
            }
            if p > MAX_DEGREE {
                return Err(config(format!("degree {p} exceeds the cap {MAX_DEGREE}")));
            }
            if !(c >= 0.0) || !c.is_finite() {
                return Err(config(format!("coefficient for degree {p} must be finite and >= 0, got {c}")));
            }
        }
        if self.coeffs.values().all(|&c| c == 0.0) {
            return Err(config("all coefficients are zero"));
        }
        if !self.h.is_finite() {
            return Err(config(format!("field h must be finite, got {}", self.h)));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| config(format!("mixture JSON: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mixture serializes")
    }

    pub fn max_degree(&self) -> u32 {
        *self.coeffs.keys().next_back().expect("validated mixture is non-empty")
    }

    /// True when only even degrees carry weight (the energy is then even in the spins).
    pub fn is_even(&self) -> bool {
        self.coeffs.iter().all(|(&p, &c)| c == 0.0 || p % 2 == 0)
    }

    fn check_unit(s: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&s) {
            return Err(domain(format!("overlap {s} outside [0, 1]")));
        }
        Ok(())
    }

    /// `xi(s)`, `xi'(s)`, `xi''(s)` for `s` in `[0, 1]`.
    pub fn eval_xi(&self, s: f64) -> Result<(f64, f64, f64)> {
        Self::check_unit(s)?;
        Ok(self.xi_unchecked(s))
    }

    pub(crate) fn xi_unchecked(&self, s: f64) -> (f64, f64, f64) {
        let mut v = 0.0;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        for (&p, &c) in &self.coeffs {
            let p_f = p as f64;
            let sp2 = s.powi(p as i32 - 2);
            v += c * sp2 * s * s;
            d1 += c * p_f * sp2 * s;
            d2 += c * p_f * (p_f - 1.0) * sp2;
        }
        (v, d1, d2)
    }

    pub fn xi(&self, s: f64) -> Result<f64> {
        Ok(self.eval_xi(s)?.0)
    }

    pub fn xi_prime(&self, s: f64) -> Result<f64> {
        Ok(self.eval_xi(s)?.1)
    }

    pub fn xi_second(&self, s: f64) -> Result<f64> {
        Ok(self.eval_xi(s)?.2)
    }

    /// `integral_u^v t xi''(t) dt = sum_p c_p^2 (p - 1) (v^p - u^p)`.
    pub fn correction_integral(&self, u: f64, v: f64) -> Result<f64> {
        Self::check_unit(u)?;
        Self::check_unit(v)?;
        if u > v {
            return Err(domain(format!("correction integral needs u <= v, got {u} > {v}")));
        }
        Ok(self
            .coeffs
            .iter()
            .map(|(&p, &c)| c * (p as f64 - 1.0) * (v.powi(p as i32) - u.powi(p as i32)))
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sk_values() {
        let sk = MixtureSpec::sk(0.0);
        assert_eq!(sk.eval_xi(1.0).unwrap(), (0.5, 1.0, 1.0));
        assert_eq!(sk.correction_integral(0.0, 1.0).unwrap(), 0.5);
        assert!(sk.eval_xi(1.5).is_err());
    }

    #[test]
    fn validation() {
        assert!(MixtureSpec::new([(1, 0.5)], 0.0).is_err());
        assert!(MixtureSpec::new([(33, 0.5)], 0.0).is_err());
        assert!(MixtureSpec::new([(2, -0.5)], 0.0).is_err());
        assert!(MixtureSpec::new([(2, 0.5)], f64::NAN).is_err());
        assert!(MixtureSpec::new([(32, 0.5)], 0.0).is_ok());
        assert!(MixtureSpec::from_json(r#"{"coeffs":{"2":0.5,"4":0.25},"h":0.1}"#).is_ok());
        assert!(MixtureSpec::from_json(r#"{"coeffs":{"2":0.5},"h":0.1,"x":1}"#).is_ok());
        assert!(MixtureSpec::from_json(r#"{"coeffs":{}}"#).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let m = MixtureSpec::new([(2, 0.5), (4, 0.25)], 0.3).unwrap();
        assert_eq!(MixtureSpec::from_json(&m.to_json()).unwrap(), m);
    }

    proptest! {
        #[test]
        fn correction_integral_matches_quadrature(c2 in 0.0..1.0f64, c3 in 0.0..1.0f64, c5 in 0.0..1.0f64,
                                                   u in 0.0..1.0f64, v in 0.0..1.0f64) {
            prop_assume!(c2 + c3 + c5 > 0.0);
            let m = MixtureSpec::new([(2, c2), (3, c3), (5, c5)], 0.0).unwrap();
            let (u, v) = if u <= v { (u, v) } else { (v, u) };
            let rule = crate::quadrature::GaussLegendre::new(10);
            let q = rule.integrate(u, v, |t| t * m.xi_unchecked(t).2);
            prop_assert!((m.correction_integral(u, v).unwrap() - q).abs() < 1e-12);
        }

        #[test]
        fn correction_integral_is_additive(u in 0.0..1.0f64, w in 0.0..1.0f64, v in 0.0..1.0f64) {
            let m = MixtureSpec::new([(2, 0.5), (4, 0.3)], 0.0).unwrap();
            let mut t = [u, w, v];
            t.sort_by(f64::total_cmp);
            let lhs = m.correction_integral(t[0], t[2]).unwrap();
            let rhs = m.correction_integral(t[0], t[1]).unwrap() + m.correction_integral(t[1], t[2]).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-14);
        }
    }
}
