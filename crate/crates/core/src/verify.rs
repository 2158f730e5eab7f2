//! The tail-block identity suite run by `parisi verify`.

use crate::chain::ChainOptions;
use crate::error::{config, Result};
use crate::tailblock::{gaussian_identity_residual, TailBlock, TailBlockParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Named `(a, b, m, m')` used by the suite.
pub const PRESETS: [(&str, TailBlockParams); 3] = [
    ("sk", TailBlockParams { a: 0.5, b: 1.0, m: 0.8, m_prime: 2.5 }),
    ("pure3", TailBlockParams { a: 0.75, b: 3.0, m: 1.2, m_prime: 4.0 }),
    ("wide", TailBlockParams { a: 0.0, b: 2.0, m: 0.3, m_prime: 6.0 }),
];

/// Distances `b - t` at which limits are probed.
pub const LIMIT_GAPS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Point at which the limits are probed.
pub const PROBE_X: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value < threshold }
    }

    fn above(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, threshold, pass: value >= threshold }
    }
}

pub fn preset(name: &str) -> Result<TailBlockParams> {
    PRESETS
        .iter()
        .find(|p| p.0 == name)
        .map(|p| p.1)
        .ok_or_else(|| config(format!("unknown preset {name:?}; known: sk, pure3, wide")))
}

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

/// Largest `|residual|` of the Gaussian identity over `count` random `(m, a, x)`.
pub fn gaussian_identity_max_residual(count: usize, seed: u64, order: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let m = rng.random_range(0.0..=3.0);
        let a = rng.random_range(0.3..=2.0);
        let x = rng.random_range(-3.0..=3.0);
        worst = worst.max(gaussian_identity_residual(m, a, x, order)?.abs());
    }
    Ok(worst)
}

/// Largest PDE residual on a 20 x 20 grid of `[a + 0.01, b - 0.01] x [-3, 3]`.
pub fn pde_max_residual(tb: &TailBlock) -> Result<f64> {
    let p = tb.params();
    let mut worst: f64 = 0.0;
    for t in grid(p.a + 0.01, p.b - 0.01, 20) {
        for x in grid(-3.0, 3.0, 20) {
            worst = worst.max(tb.pde_residual(t, x)?.abs());
        }
    }
    Ok(worst)
}

/// Interior `(t, x)` points for the derivative checks.
fn interior(p: &TailBlockParams) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for f in [0.25, 0.5, 0.75] {
        for x in [-1.0, 0.0, 0.3, 1.5] {
            pts.push((p.a + f * (p.b - p.a), x));
        }
    }
    pts
}

/// Largest gap between `B_t = ((m - m')/2) C` and a centered difference of `B` with step `h`.
pub fn b_t_max_gap(tb: &TailBlock, h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (t, x) in interior(tb.params()) {
        let fd = (tb.b_value(t + h, x)? - tb.b_value(t - h, x)?) / (2.0 * h);
        worst = worst.max((fd - tb.b_t_formula(t, x)?).abs());
    }
    Ok(worst)
}

/// Largest gap between the `C_t` formula and a centered difference of `C` with step `h`.
pub fn c_t_max_gap(tb: &TailBlock, h: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (t, x) in interior(tb.params()) {
        let fd = (tb.c_value(t + h, x)? - tb.c_value(t - h, x)?) / (2.0 * h);
        worst = worst.max((fd - tb.c_t_formula(t, x)?).abs());
    }
    Ok(worst)
}

/// Checks for one preset: PDE, derivative formulas and the limits as `t -> b`.
pub fn block_checks(name: &str, p: TailBlockParams, opts: &ChainOptions) -> Result<Vec<Check>> {
    let tb = TailBlock::new(p, *opts)?;
    let mut out = vec![
        Check::below(format!("{name}: pde residual"), pde_max_residual(&tb)?, 1e-9),
        Check::below(format!("{name}: B_t vs difference"), b_t_max_gap(&tb, 1e-5)?, 1e-5),
        Check::below(format!("{name}: C_t vs difference"), c_t_max_gap(&tb, 1e-5)?, 1e-4),
    ];
    let x = PROBE_X;
    let c_gaps: Vec<f64> =
        LIMIT_GAPS.iter().map(|&g| tb.c_value(p.b - g, x).map(|c| (c - 1.0).abs())).collect::<Result<_>>()?;
    let decreasing = c_gaps.windows(2).all(|w| w[1] < w[0]);
    let last = *c_gaps.last().unwrap();
    out.push(Check { name: format!("{name}: |C - 1| decreasing to"), value: last, threshold: 5e-3, pass: decreasing && last < 5e-3 });
    let t = p.b - 1e-4;
    let sl = tb.slice(t, x)?;
    out.push(Check::below(format!("{name}: |E A_x^2 V - 1|"), (sl.even_moment(1) - 1.0).abs(), 5e-3));
    out.push(Check::below(format!("{name}: |E A_x^4 V - 1|"), (sl.even_moment(2) - 1.0).abs(), 5e-3));
    let delta = tb.delta(x);
    for k in [1u32, 3] {
        let target = delta / k as f64;
        out.push(Check::below(format!("{name}: mixed k={k} relative gap"), (sl.mixed(k) - target).abs() / target, 0.1));
    }
    out.push(Check::above(format!("{name}: E A_xx^2 V / (4m'/3 Delta)"), sl.axx_sq() / (4.0 * p.m_prime / 3.0 * delta), 0.95));
    out.push(Check::above(format!("{name}: C_t / (2(m+m')/3 Delta)"), sl.c_t() / (2.0 * (p.m + p.m_prime) / 3.0 * delta), 0.95));
    Ok(out)
}

/// `E A_xx^2 V` at `x = 0` grows as `t -> b`: compares `b - t = gap` against `b - t = 1e-3`.
pub fn singularity_probe(name: &str, p: TailBlockParams, gap: f64, opts: &ChainOptions) -> Result<Vec<Check>> {
    let tb = TailBlock::new(p, *opts)?;
    let near = tb.axx_sq_limit(p.b - gap, 0.0)?;
    let far = tb.axx_sq_limit(p.b - 1e-3, 0.0)?;
    let scaled: Vec<f64> = LIMIT_GAPS
        .iter()
        .map(|&g| {
            let t = p.b - g;
            tb.mixed_limit(1, t, PROBE_X).map(|v| v * (t - p.a).sqrt() * (-p.m * PROBE_X.abs()).exp())
        })
        .collect::<Result<_>>()?;
    let bound = scaled.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(vec![
        Check::above(format!("{name}: E A_xx^2 V at b-t={gap:e} over b-t=1e-3"), near / far, 1.0),
        Check { name: format!("{name}: sup sqrt(t-a) e^(-m|x|) E A_xx V"), value: bound, threshold: f64::INFINITY, pass: bound.is_finite() },
    ])
}

/// The full suite over the named presets.
pub fn identity_suite(names: &[&str], singular_gap: Option<f64>, opts: &ChainOptions) -> Result<Vec<Check>> {
    let mut out = vec![Check::below("gaussian identity, 50 random points", gaussian_identity_max_residual(50, 0, opts.order)?, 1e-8)];
    for &name in names {
        let p = preset(name)?;
        out.extend(block_checks(name, p, opts)?);
        if let Some(gap) = singular_gap {
            out.extend(singularity_probe(name, p, gap, opts)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for (name, p) in PRESETS {
            p.validate().unwrap();
            assert_eq!(preset(name).unwrap(), p);
        }
        assert!(preset("nope").is_err());
    }
}
