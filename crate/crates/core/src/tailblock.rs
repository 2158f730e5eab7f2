//! Closed forms on the last interval `[a, b]` of a step order parameter.
//!
//! With `s = b - t`, `r = sqrt(s)` and `g(t, x) = exp(s m'^2/2 + m' x) Phi(m' r + x / r)`,
//!
//! ```text
//! A(t, x) = (1/m') ln(g(t, x) + g(t, -x))          A(b, x) = |x|
//! B(t, x) = (1/m) ln E exp(m A(t, x + sqrt(t - a) Z))
//! V(t, x, y) = exp(m (A(t, y) - B(t, x)))
//! C(t, x) = E A_x(t, Y)^2 V(t, x, Y),  Y = x + sqrt(t - a) Z
//! ```
//!
//! `A` solves `A_t + (A_xx + m' A_x^2) / 2 = 0`. Expectations against `V`
//! run through the chain engine: `B` is a one-stage chain whose terminal
//! is `A`, and every integrand used below is localized, so
//! `E V = 1` supplies the far field exactly.

use crate::chain::{self, ChainEvaluation, ChainOptions, Stage, Terminal};
use crate::error::{domain, Result};
use crate::quadrature::GaussLegendre;
use crate::special::{kappa_mgf, ln_norm_cdf, log_add_exp, log_mgf_abs, LN_SQRT_2PI};
use serde::{Deserialize, Serialize};

/// Parameters of the last block: `a = xi'(q_n)`, `b = xi'(1)`, `m = m_n`, `m' = m_{n+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBlockParams {
    pub a: f64,
    pub b: f64,
    pub m: f64,
    pub m_prime: f64,
}

impl TailBlockParams {
    pub fn new(a: f64, b: f64, m: f64, m_prime: f64) -> Result<Self> {
        let p = Self { a, b, m, m_prime };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.a && self.a < self.b && self.b.is_finite()) {
            return Err(domain(format!("tail block needs 0 <= a < b, got a={} b={}", self.a, self.b)));
        }
        if !(0.0 < self.m && self.m < self.m_prime && self.m_prime.is_finite()) {
            return Err(domain(format!("tail block needs 0 < m < m', got m={} m'={}", self.m, self.m_prime)));
        }
        Ok(())
    }
}

/// The tail-block functions for fixed parameters.
#[derive(Debug, Clone)]
pub struct TailBlock {
    p: TailBlockParams,
    opts: ChainOptions,
}

/// Log-space pieces of `A` at one point.
struct Pieces {
    lp: f64,
    lm: f64,
}

/// `A_x`, `1 - A_x^2` and `Gamma`, evaluated stably.
#[derive(Debug, Clone, Copy)]
pub struct Derivs {
    pub a_x: f64,
    pub one_minus_ax2: f64,
    pub gamma: f64,
    pub m_prime: f64,
}

impl Derivs {
    pub fn a_xx(&self) -> f64 {
        self.m_prime * self.one_minus_ax2 + 2.0 * self.gamma
    }

    pub fn a_t(&self) -> f64 {
        -0.5 * self.m_prime - self.gamma
    }
}

impl TailBlock {
    pub fn new(p: TailBlockParams, opts: ChainOptions) -> Result<Self> {
        p.validate()?;
        Ok(Self { p, opts: ChainOptions { keep_weights: true, ..opts } })
    }

    pub fn params(&self) -> &TailBlockParams {
        &self.p
    }

    fn check_open(&self, t: f64) -> Result<f64> {
        if !(t >= self.p.a && t < self.p.b) {
            return Err(domain(format!("t={t} outside [a, b) = [{}, {})", self.p.a, self.p.b)));
        }
        Ok(self.p.b - t)
    }

    fn check_inner(&self, t: f64) -> Result<()> {
        if !(t > self.p.a && t < self.p.b) {
            return Err(domain(format!("t={t} outside (a, b) = ({}, {})", self.p.a, self.p.b)));
        }
        Ok(())
    }

    fn pieces(&self, s: f64, x: f64) -> Pieces {
        let mp = self.p.m_prime;
        let r = s.sqrt();
        Pieces { lp: mp * x + ln_norm_cdf(mp * r + x / r), lm: -mp * x + ln_norm_cdf(mp * r - x / r) }
    }

    /// `ln g(t, x)`.
    pub fn log_g(&self, t: f64, x: f64) -> Result<f64> {
        let s = self.check_open(t)?;
        let mp = self.p.m_prime;
        Ok(0.5 * s * mp * mp + self.pieces(s, x).lp)
    }

    /// `A(t, x)`; equals `|x|` at `t = b`.
    pub fn a_value(&self, t: f64, x: f64) -> Result<f64> {
        if t == self.p.b {
            return Ok(x.abs());
        }
        let s = self.check_open(t)?;
        Ok(a_closed(s, self.p.m_prime, x))
    }

    /// `A_x`, `1 - A_x^2` and `Gamma` at `(t, x)`.
    pub fn derivs(&self, t: f64, x: f64) -> Result<Derivs> {
        let s = self.check_open(t)?;
        Ok(derivs_closed(s, self.p.m_prime, x))
    }

    /// `A_x(t, x)`; at `t = b` the sign of `x`, undefined at `x = 0`.
    pub fn a_x(&self, t: f64, x: f64) -> Result<f64> {
        if t == self.p.b {
            if x == 0.0 {
                return Err(domain("A_x(b, 0) is undefined"));
            }
            return Ok(x.signum());
        }
        Ok(self.derivs(t, x)?.a_x)
    }

    /// `A_xx = m' (1 - A_x^2) + 2 Gamma`.
    pub fn a_xx(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.derivs(t, x)?.a_xx())
    }

    /// `A_t = -m'/2 - Gamma`.
    pub fn a_t(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.derivs(t, x)?.a_t())
    }

    /// `Gamma = exp(-x^2 / (2 (b - t)) - ln sqrt(2 pi (b - t)) - m' A)`.
    pub fn gamma(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.derivs(t, x)?.gamma)
    }

    /// Derivatives of `A` by direct differentiation of `ln(g(x) + g(-x))`, without the
    /// simplifications that lead to `Gamma`.
    ///
    /// Returns `(A_t, A_x, A_xx)`.
    pub fn chain_rule_derivs(&self, t: f64, x: f64) -> Result<(f64, f64, f64)> {
        let s = self.check_open(t)?;
        let mp = self.p.m_prime;
        let r = s.sqrt();
        let pc = self.pieces(s, x);
        let lse = log_add_exp(pc.lp, pc.lm);
        let terms = [(1.0, pc.lp, mp * r + x / r), (-1.0, pc.lm, mp * r - x / r)];
        let (mut d1, mut d1sq, mut d2, mut ds) = (0.0, 0.0, 0.0, 0.0);
        for (sgn, l, u) in terms {
            let w = (l - lse).exp();
            // Mills-type ratio phi(u) / Phi(u) and its derivative
            let lam = (-0.5 * u * u - LN_SQRT_2PI - ln_norm_cdf(u)).exp();
            let dlam = -lam * (u + lam);
            let lx = sgn * (mp + lam / r);
            let lxx = dlam / s;
            let ls = lam * (0.5 * mp / r - sgn * 0.5 * x / (r * s));
            d1 += w * lx;
            d1sq += w * lx * lx;
            d2 += w * lxx;
            ds += w * ls;
        }
        let a_x = d1 / mp;
        let a_xx = (d2 + d1sq - d1 * d1) / mp;
        let a_t = -(0.5 * mp + ds / mp);
        Ok((a_t, a_x, a_xx))
    }

    /// `A_t + (A_xx + m' A_x^2) / 2` from the chain-rule derivatives; zero in exact arithmetic.
    pub fn pde_residual(&self, t: f64, x: f64) -> Result<f64> {
        let (a_t, a_x, a_xx) = self.chain_rule_derivs(t, x)?;
        Ok(a_t + 0.5 * (a_xx + self.p.m_prime * a_x * a_x))
    }

    /// The terminal `A(t, .)` as a chain profile.
    pub fn terminal(&self, t: f64) -> Result<Terminal> {
        let s = self.check_open(t)?;
        Ok(Terminal::tilted_abs(s.sqrt(), self.p.m_prime))
    }

    /// One-stage chain `x -> B(t, x)` with weights `V` retained.
    pub fn slice(&self, t: f64, x: f64) -> Result<TailSlice<'_>> {
        self.check_inner(t)?;
        let stage = Stage { sigma: (t - self.p.a).sqrt(), mu: self.p.m };
        let ev = chain::evaluate(&[stage], &self.terminal(t)?, x, &self.opts)?;
        let s = self.p.b - t;
        let derivs = ev.nodes(1).iter().map(|&y| derivs_closed(s, self.p.m_prime, y)).collect();
        Ok(TailSlice { block: self, t, x, ev, derivs })
    }

    pub fn b_value(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.slice(t, x)?.b())
    }

    /// `V(t, x, y) = exp(m (A(t, y) - B(t, x)))`.
    pub fn v_value(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        let b = self.b_value(t, x)?;
        Ok((self.p.m * (self.a_value(t, y)? - b)).exp())
    }

    pub fn c_value(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.slice(t, x)?.c())
    }

    /// `B_t = ((m - m') / 2) C`.
    pub fn b_t_formula(&self, t: f64, x: f64) -> Result<f64> {
        Ok(0.5 * (self.p.m - self.p.m_prime) * self.c_value(t, x)?)
    }

    pub fn c_t_formula(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.slice(t, x)?.c_t())
    }

    /// `E A_x^{k-1} A_xx V` for odd `k`.
    pub fn mixed_limit(&self, k: u32, t: f64, x: f64) -> Result<f64> {
        if k.is_multiple_of(2) {
            return Err(domain(format!("mixed moment needs odd k, got {k}")));
        }
        Ok(self.slice(t, x)?.mixed(k))
    }

    /// `E A_xx^2 V`.
    pub fn axx_sq_limit(&self, t: f64, x: f64) -> Result<f64> {
        Ok(self.slice(t, x)?.axx_sq())
    }

    /// `E A_x^{2k} V`.
    pub fn even_moment(&self, k: u32, t: f64, x: f64) -> Result<f64> {
        Ok(self.slice(t, x)?.even_moment(k))
    }

    /// `Delta(x) = 2 phi_{b-a}(x) / E exp(m |x + sqrt(b - a) Z|)`.
    pub fn delta(&self, x: f64) -> f64 {
        let v = self.p.b - self.p.a;
        2.0 * (-x * x / (2.0 * v) - 0.5 * (2.0 * std::f64::consts::PI * v).ln() - log_mgf_abs(x, v.sqrt(), self.p.m)).exp()
    }
}

/// `B`, `C`, `C_t` and the moments against `V` at one `(t, x)`.
pub struct TailSlice<'a> {
    block: &'a TailBlock,
    t: f64,
    x: f64,
    ev: ChainEvaluation,
    derivs: Vec<Derivs>,
}

impl TailSlice<'_> {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn b(&self) -> f64 {
        self.ev.psi()
    }

    /// `E f(Y) V` for `f` vanishing away from the origin, given through the derivatives at `Y`.
    fn expect_local(&self, f: impl Fn(&Derivs) -> f64) -> f64 {
        let g: Vec<f64> = self.derivs.iter().map(f).collect();
        self.ev.tilted_expectation(1, &g)
    }

    pub fn c(&self) -> f64 {
        1.0 - self.expect_local(|d| d.one_minus_ax2)
    }

    pub fn even_moment(&self, k: u32) -> f64 {
        1.0 - self.expect_local(|d| 1.0 - (1.0 - d.one_minus_ax2).powi(k as i32))
    }

    pub fn mixed(&self, k: u32) -> f64 {
        self.expect_local(|d| d.a_x.powi(k as i32 - 1) * d.a_xx())
    }

    pub fn axx_sq(&self) -> f64 {
        self.expect_local(|d| d.a_xx().powi(2))
    }

    pub fn c_t(&self) -> f64 {
        let TailBlockParams { m, m_prime, .. } = self.block.p;
        let dm = m - m_prime;
        let first = self.expect_local(|d| {
            let axx = d.a_xx();
            axx * axx + 2.0 * dm * axx * (1.0 - d.one_minus_ax2)
        });
        let e2 = self.expect_local(|d| d.one_minus_ax2);
        let e4 = self.expect_local(|d| 1.0 - (1.0 - d.one_minus_ax2).powi(2));
        // E A_x^4 V - (E A_x^2 V)^2 = (1 - e4) - (1 - e2)^2
        first + 0.5 * dm * m * (2.0 * e2 - e2 * e2 - e4)
    }
}

/// `A` with `s = b - t`.
pub(crate) fn a_closed(s: f64, m_prime: f64, x: f64) -> f64 {
    0.5 * s * m_prime + x.abs() + kappa_mgf(x, s.sqrt(), m_prime)
}

pub(crate) fn derivs_closed(s: f64, mp: f64, x: f64) -> Derivs {
    let r = s.sqrt();
    let lp = mp * x + ln_norm_cdf(mp * r + x / r);
    let lm = -mp * x + ln_norm_cdf(mp * r - x / r);
    let half = 0.5 * (lp - lm);
    let e = (-2.0 * half.abs()).exp();
    let one_minus_ax2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
    let a_x = half.tanh();
    let log_ma = 0.5 * s * mp * mp + log_add_exp(lp, lm);
    let gamma = (-x * x / (2.0 * s) - 0.5 * (2.0 * std::f64::consts::PI * s).ln() - log_ma).exp();
    Derivs { a_x, one_minus_ax2, gamma, m_prime: mp }
}

/// `E z e^{m|x+az|} sign(x+az) - (sqrt(2/pi) e^{-x^2/(2a^2)} + m a E e^{m|x+az|})`, divided by
/// `E e^{m|x+az|}`; the left side by composite Gauss-Legendre split at the sign change.
pub fn gaussian_identity_residual(m: f64, a: f64, x: f64, order: usize) -> Result<f64> {
    if !(a > 0.0) {
        return Err(domain(format!("gaussian identity needs a > 0, got {a}")));
    }
    if !(m >= 0.0) {
        return Err(domain(format!("gaussian identity needs m >= 0, got {m}")));
    }
    let log_norm = log_mgf_abs(x, a, m);
    let zk = -x / a;
    let lo = zk.min(-m * a) - 12.0;
    let hi = zk.max(m * a) + 12.0;
    let mut edges = vec![lo, zk, hi];
    let pieces = ((hi - lo) / 0.5).ceil() as usize;
    edges.extend((1..pieces).map(|i| lo + (hi - lo) * i as f64 / pieces as f64));
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let rule = GaussLegendre::new(order.max(2));
    let lhs = rule.composite(&edges, |z| {
        let y = x + a * z;
        z * y.signum() * (m * y.abs() - log_norm - 0.5 * z * z - LN_SQRT_2PI).exp()
    });
    let rhs = (2.0 / std::f64::consts::PI).sqrt() * (-x * x / (2.0 * a * a) - log_norm).exp() + m * a;
    Ok(lhs - rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(a: f64, b: f64, m: f64, mp: f64) -> TailBlock {
        TailBlock::new(TailBlockParams::new(a, b, m, mp).unwrap(), ChainOptions::default()).unwrap()
    }

    #[test]
    fn params_are_validated() {
        assert!(TailBlockParams::new(0.5, 0.4, 1.0, 2.0).is_err());
        assert!(TailBlockParams::new(0.0, 1.0, 2.0, 2.0).is_err());
        assert!(TailBlockParams::new(0.0, 1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn boundary_and_symmetry() {
        let tb = block(0.0, 1.0, 0.5, 2.0);
        assert_eq!(tb.a_value(1.0, -0.7).unwrap(), 0.7);
        assert_eq!(tb.a_x(0.4, 0.0).unwrap(), 0.0);
        assert!(tb.a_x(1.0, 0.0).is_err());
        assert!(tb.a_value(1.2, 0.0).is_err());
        assert!(tb.log_g(0.0, -10.0).unwrap().is_finite());
        for &x in &[0.5, -0.5] {
            assert!((tb.a_x(1.0 - 1e-4, x).unwrap() - x.signum()).abs() < 1e-3);
        }
    }

    #[test]
    fn closed_forms_match_chain_rule() {
        let tb = block(0.1, 1.3, 0.7, 3.0);
        for &t in &[0.2, 0.8, 1.29] {
            for &x in &[-2.0, -0.3, 0.0, 0.05, 1.1] {
                let d = tb.derivs(t, x).unwrap();
                let (a_t, a_x, a_xx) = tb.chain_rule_derivs(t, x).unwrap();
                assert!((d.a_x - a_x).abs() < 1e-12);
                assert!((d.a_xx() - a_xx).abs() < 1e-9 * (1.0 + a_xx.abs()), "{} {}", d.a_xx(), a_xx);
                assert!((d.a_t() - a_t).abs() < 1e-9 * (1.0 + a_t.abs()));
                assert!(tb.pde_residual(t, x).unwrap().abs() < 1e-9);
            }
        }
    }

    #[test]
    fn finite_differences_of_a() {
        let tb = block(0.0, 1.0, 0.5, 2.0);
        let (t, x, h) = (0.5, 0.4, 1e-4);
        let a = |t: f64, x: f64| tb.a_value(t, x).unwrap();
        let ax = (a(t, x + h) - a(t, x - h)) / (2.0 * h);
        let axx = (a(t, x + h) - 2.0 * a(t, x) + a(t, x - h)) / (h * h);
        let at = (a(t + h, x) - a(t - h, x)) / (2.0 * h);
        assert!((ax - tb.a_x(t, x).unwrap()).abs() < 1e-6);
        assert!((axx - tb.a_xx(t, x).unwrap()).abs() < 1e-4);
        assert!((at + 0.5 * (axx + 2.0 * ax * ax)).abs() < 1e-5);
    }

    #[test]
    fn c_is_a_probability_weighted_square() {
        let tb = block(0.0, 1.0, 0.5, 2.0);
        for &t in &[0.1, 0.5, 0.9] {
            for &x in &[-1.0, 0.0, 0.3] {
                let c = tb.c_value(t, x).unwrap();
                assert!((0.0..=1.0).contains(&c), "C={c}");
                assert!(tb.b_t_formula(t, x).unwrap() < 0.0);
            }
        }
        assert!(tb.c_value(0.0, 0.1).is_err());
    }

    #[test]
    fn b_is_a_two_stage_chain() {
        // B(t, x) with a = 0 is the chain value of the perturbed one-plateau order parameter.
        let tb = block(0.0, 1.0, 0.8, 2.5);
        let (t, x) = (0.6, 0.2);
        let stages = [Stage { sigma: 0.6f64.sqrt(), mu: 0.8 }];
        let v = chain::tensor_psi(&stages, &Terminal::tilted_abs(0.4f64.sqrt(), 2.5), x, 200).unwrap();
        assert!((tb.b_value(t, x).unwrap() - v).abs() < 1e-8);
    }

    #[test]
    fn delta_limits() {
        let tb = block(0.0, 1.0, 1e-12, 2.0);
        let d0 = tb.delta(0.0);
        assert!((d0 - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
        let tb = block(0.0, 1.0, 1.0, 2.0);
        assert!(tb.delta(0.3) > 0.0 && tb.delta(30.0) < 1e-100);
    }

    #[test]
    fn gaussian_identity_examples() {
        for &x in &[-1.0, 0.0, 0.7] {
            assert!(gaussian_identity_residual(0.0, 0.9, x, 20).unwrap().abs() < 1e-10);
        }
        assert!(gaussian_identity_residual(1.5, 0.8, 0.4, 20).unwrap().abs() < 1e-8);
        assert!(gaussian_identity_residual(2.0, 1.0, 0.0, 20).unwrap().abs() < 1e-8);
    }
}
