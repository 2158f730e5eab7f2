//! Gaussian special functions evaluated in log space.
//!
//! The closed forms for `log E exp(mu |x + sigma Z|)` are the workhorse of
//! the whole crate: every level of the Cole-Hopf chain splits into this
//! term plus a localized remainder.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, LN_2, PI, SQRT_2};
use std::sync::OnceLock;

/// `ln(sqrt(2 pi))`.
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard normal density.
#[inline]
pub fn norm_pdf(u: f64) -> f64 {
    (-0.5 * u * u - LN_SQRT_2PI).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn norm_cdf(u: f64) -> f64 {
    0.5 * erfc(-u * FRAC_1_SQRT_2)
}

/// Scaled complementary error function `exp(t^2) erfc(t)` for `t >= 0`.
pub fn erfcx(t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if t < 5.0 {
        return (t * t).exp() * erfc(t);
    }
    // Continued fraction t + (1/2)/(t + 1/(t + (3/2)/(t + ...))), backwards.
    let mut tail = t;
    for k in (1..=60).rev() {
        tail = t + 0.5 * k as f64 / tail;
    }
    1.0 / (PI.sqrt() * tail)
}

/// Logarithm of the standard normal distribution function, accurate in both tails.
pub fn ln_norm_cdf(u: f64) -> f64 {
    if u.is_nan() {
        return f64::NAN;
    }
    if u > 0.0 {
        (-0.5 * erfc(u * FRAC_1_SQRT_2)).ln_1p()
    } else if u > -5.0 {
        (0.5 * erfc(-u * FRAC_1_SQRT_2)).ln()
    } else if u == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        let t = -u / SQRT_2;
        (0.5 * erfcx(t)).ln() - t * t
    }
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn gl8() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        let rule = crate::quadrature::GaussLegendre::new(8);
        rule.nodes().iter().copied().zip(rule.weights().iter().copied()).collect()
    })
}

/// Standard normal probability of the short interval `[lo, lo + width]`, accurate relative to `width`.
fn short_mass(lo: f64, width: f64) -> f64 {
    let half = 0.5 * width;
    let mid = lo + half;
    gl8().iter().map(|&(t, w)| w * norm_pdf(mid + half * t)).sum::<f64>() * half
}

/// `E |x + sigma Z|` for a standard normal `Z`.
pub fn mean_abs(x: f64, sigma: f64) -> f64 {
    x.abs() + mean_abs_excess(x, sigma)
}

/// `E |x + sigma Z| - |x|`, which decays like a Gaussian tail in `x / sigma`.
pub fn mean_abs_excess(x: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let a = x.abs() / sigma;
    2.0 * sigma * norm_pdf(a) - 2.0 * x.abs() * norm_cdf(-a)
}

/// Small-argument form of `E exp(mu |x + sigma Z|) - 1`.
fn mgf_abs_excess(x: f64, sigma: f64, mu: f64) -> f64 {
    let a = x / sigma;
    let d = mu * sigma;
    norm_cdf(a + d) * (mu * x).exp_m1()
        + norm_cdf(d - a) * (-mu * x).exp_m1()
        + short_mass(a, d)
        + short_mass(-a, d)
}

fn use_small_branch(x: f64, sigma: f64, mu: f64) -> bool {
    mu * sigma <= 0.25 && mu * x.abs() <= 1.0
}

/// `ln E exp(mu |x + sigma Z|)` for `mu >= 0`, `sigma >= 0`.
pub fn log_mgf_abs(x: f64, sigma: f64, mu: f64) -> f64 {
    if sigma == 0.0 {
        return mu * x.abs();
    }
    if mu == 0.0 {
        return 0.0;
    }
    let d = mu * sigma;
    if use_small_branch(x, sigma, mu) {
        return 0.5 * d * d + mgf_abs_excess(x, sigma, mu).ln_1p();
    }
    let a = x / sigma;
    0.5 * d * d + log_add_exp(mu * x + ln_norm_cdf(a + d), -mu * x + ln_norm_cdf(d - a))
}

/// `(ln E exp(mu |x + sigma Z|) - mu |x| - mu^2 sigma^2 / 2) / mu`, continued to
/// `E |x + sigma Z| - |x|` at `mu = 0`.
///
/// This is the localized part of the tilted absolute value: it vanishes
/// as `|x|` grows, at a Gaussian rate on scale `sigma` or exponentially at
/// rate `2 mu`, whichever is faster.
pub fn kappa_mgf(x: f64, sigma: f64, mu: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    if mu == 0.0 {
        return mean_abs_excess(x, sigma);
    }
    let d = mu * sigma;
    let ax = x.abs();
    if use_small_branch(x, sigma, mu) {
        return (mgf_abs_excess(x, sigma, mu).ln_1p() - mu * ax) / mu;
    }
    let a = ax / sigma;
    log_add_exp(ln_norm_cdf(a + d), -2.0 * mu * ax + ln_norm_cdf(d - a)) / mu
}

/// Distance beyond which `kappa_mgf(., sigma, mu)` is below `exp(-40)` relative to its scale.
pub fn kappa_mgf_radius(sigma: f64, mu: f64) -> f64 {
    let d = mu * sigma;
    let u = if d <= 20f64.sqrt() { 80f64.sqrt() - d } else { 20.0 / d };
    sigma * u.max(0.0)
}

/// `ln cosh(x)` without overflow.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_mgf(x: f64, sigma: f64, mu: f64) -> f64 {
        // Composite Simpson in z, split at the kink.
        let zk = -x / sigma;
        let lo = zk.min(0.0) - 14.0 - mu * sigma;
        let hi = zk.max(0.0) + 14.0 + mu * sigma;
        let f = |z: f64| (mu * (x + sigma * z).abs()).exp() * norm_pdf(z);
        let simpson = |a: f64, b: f64| {
            let n = 20_000;
            let h = (b - a) / n as f64;
            let mut s = f(a) + f(b);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * f(a + h * i as f64);
            }
            s * h / 3.0
        };
        let zk = zk.clamp(lo, hi);
        (simpson(lo, zk) + simpson(zk, hi)).ln()
    }

    #[test]
    fn ln_norm_cdf_matches_direct_in_the_bulk() {
        for &u in &[-4.9, -2.0, -0.3, 0.0, 0.7, 3.0, 6.0] {
            let direct = norm_cdf(u).ln();
            assert!((ln_norm_cdf(u) - direct).abs() < 1e-13 * direct.abs().max(1e-3), "u={u}");
        }
    }

    #[test]
    fn ln_norm_cdf_is_continuous_across_branches() {
        let l = ln_norm_cdf(-5.0 - 1e-12);
        let r = ln_norm_cdf(-5.0 + 1e-12);
        assert!((l - r).abs() < 1e-10);
        // Deep tail: Phi(u) ~ phi(u) / |u| (1 - 1/u^2 + 3/u^4 - 15/u^6)
        let u: f64 = -40.0;
        let series = -1.0 / (u * u) + 3.0 / u.powi(4) - 15.0 / u.powi(6);
        let asym = -0.5 * u * u - (-u).ln() - LN_SQRT_2PI + series.ln_1p();
        assert!((ln_norm_cdf(u) - asym).abs() < 1e-9);
    }

    #[test]
    fn erfcx_branches_agree() {
        for &t in &[5.0f64, 5.5, 7.0] {
            let direct = (t * t).exp() * erfc(t);
            let mut tail = t;
            for k in (1..=60).rev() {
                tail = t + 0.5 * k as f64 / tail;
            }
            let cf = 1.0 / (PI.sqrt() * tail);
            assert!((direct - cf).abs() < 1e-14 * direct, "t={t}");
        }
    }

    #[test]
    fn log_mgf_abs_matches_brute_force() {
        for &(x, s, m) in &[(0.3, 1.0, 0.8), (-1.2, 0.5, 3.0), (0.0, 0.1, 10.0), (2.0, 1.4, 0.01), (0.05, 0.7, 0.3)] {
            let v = log_mgf_abs(x, s, m);
            let b = brute_mgf(x, s, m);
            assert!((v - b).abs() < 1e-10, "{x} {s} {m}: {v} vs {b}");
        }
    }

    #[test]
    fn branches_meet() {
        // Small branch is used on one side of mu*sigma = 0.25, the log-add form on the other.
        for &x in &[0.0, 0.1, -0.2] {
            let s = 1.0;
            let a = kappa_mgf(x, s, 0.25);
            let b = kappa_mgf(x, s, 0.25 * (1.0 + 1e-12));
            assert!((a - b).abs() < 1e-12, "x={x}: {a} {b}");
        }
    }

    #[test]
    fn kappa_tends_to_mean_abs_excess_as_mu_vanishes() {
        for &x in &[0.0, 0.4, -1.3] {
            let k0 = mean_abs_excess(x, 0.8);
            let k = kappa_mgf(x, 0.8, 1e-9);
            assert!((k - k0).abs() < 1e-8, "{k} {k0}");
        }
    }

    #[test]
    fn kappa_is_negligible_beyond_radius() {
        for &(s, m) in &[(1.0, 0.5), (0.3, 4.0), (1.0, 20.0), (0.01, 100.0)] {
            let r = kappa_mgf_radius(s, m);
            assert!(kappa_mgf(r, s, m).abs() < 1e-16 * (s + 1.0 / m), "s={s} m={m}");
        }
    }

    #[test]
    fn mean_abs_closed_form() {
        // E|Z| = sqrt(2/pi)
        assert!((mean_abs(0.0, 1.0) - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert_eq!(mean_abs(1.5, 0.0), 1.5);
    }
}
