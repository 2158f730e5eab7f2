//! Gaussian quadrature: Gauss-Hermite rules for expectations under a
//! standard normal, Gauss-Legendre panels, and the log-moment reduction.

use crate::error::{domain, non_finite, Error, Result};
use nalgebra::DMatrix;

/// Largest Gauss-Hermite order accepted.
pub const MAX_HERMITE_ORDER: usize = 400;
/// Largest number of panels a graded layout may produce.
pub const MAX_PANELS: usize = 200_000;

/// Probabilists' Gauss-Hermite rule: `sum w_i f(x_i)` approximates `E f(Z)`.
///
/// Nodes come from the Golub-Welsch eigenproblem, are polished by Newton
/// steps on the orthonormal recurrence, and are exactly symmetric. The
/// weights are Christoffel numbers and sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermiteRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Orthonormal Hermite polynomials `p_0 .. p_{n}` at `x`; returns `(p_n, p_{n-1}, sum_{k<n} p_k^2)`.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sumsq = 0.0;
    for k in 0..n {
        sumsq += cur * cur;
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev, sumsq)
}

impl GaussHermiteRule {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(domain("Gauss-Hermite order must be at least 1"));
        }
        if order > MAX_HERMITE_ORDER {
            return Err(Error::Resource(format!(
                "Gauss-Hermite order {order} exceeds the cap {MAX_HERMITE_ORDER}"
            )));
        }
        let n = order;
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            jacobi[(k - 1, k)] = b;
            jacobi[(k, k - 1)] = b;
        }
        let mut x: Vec<f64> = jacobi.symmetric_eigenvalues().iter().copied().collect();
        x.sort_by(f64::total_cmp);
        for xi in x.iter_mut() {
            for _ in 0..3 {
                let (p, q, _) = hermite_orthonormal(n, *xi);
                let dp = (n as f64).sqrt() * q;
                if dp == 0.0 {
                    break;
                }
                *xi -= p / dp;
            }
        }
        let mut nodes = vec![0.0; n];
        for i in 0..n {
            nodes[i] = 0.5 * (x[i] - x[n - 1 - i]);
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let mut weights: Vec<f64> = nodes.iter().map(|&xi| 1.0 / hermite_orthonormal(n, xi).2).collect();
        for i in 0..n / 2 {
            let w = 0.5 * (weights[i] + weights[n - 1 - i]);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { nodes, weights })
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E f(Z)` under the rule.
    pub fn expect(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let v = f(x);
            if !v.is_finite() {
                return Err(non_finite(format!("quadrature node z={x}"), v));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// `(1/m) ln E exp(m f(Z))`, the plain mean when `m = 0`.
    pub fn log_moment(&self, m: f64, f: impl Fn(f64) -> f64) -> Result<f64> {
        let values: Vec<f64> = self.nodes.iter().map(|&x| f(x)).collect();
        log_moment(m, &values, &self.weights)
    }
}

/// `(1/m) ln sum_i w_i exp(m v_i)` with max subtraction; the weighted mean at `m = 0`.
///
/// Weights must be non-negative and are used as given (they need not sum to one).
pub fn log_moment(m: f64, values: &[f64], weights: &[f64]) -> Result<f64> {
    if !(m >= 0.0) || !m.is_finite() {
        return Err(domain(format!("log-moment exponent must be finite and >= 0, got {m}")));
    }
    if values.len() != weights.len() || values.is_empty() {
        return Err(domain("log-moment needs matching, non-empty values and weights"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(non_finite("log-moment input", *v));
    }
    let total: f64 = weights.iter().sum();
    if m == 0.0 {
        return Ok(values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total);
    }
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let excess: f64 = values
        .iter()
        .zip(weights)
        .map(|(v, w)| w * (m * (v - vmax)).exp_m1())
        .sum::<f64>()
        / total;
    Ok(vmax + (total.ln() + excess.ln_1p()) / m)
}

/// Gauss-Legendre rule on `[-1, 1]`, nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let p = if n == 1 { x } else { p1 };
                let pm1 = if n == 1 { 1.0 } else { p0 };
                dp = nf * (x * p - pm1) / (x * x - 1.0);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Lagrange basis of the nodes at `s`, by the barycentric formula.
    pub fn lagrange(&self, s: f64, out: &mut [f64]) {
        if let Some(i) = self.nodes.iter().position(|&t| t == s) {
            out.iter_mut().for_each(|v| *v = 0.0);
            out[i] = 1.0;
            return;
        }
        let mut total = 0.0;
        for (i, ((&t, &w), o)) in self.nodes.iter().zip(&self.weights).zip(out.iter_mut()).enumerate() {
            let lam = ((1.0 - t * t) * w).sqrt();
            let c = if i % 2 == 0 { lam } else { -lam } / (s - t);
            *o = c;
            total += c;
        }
        out.iter_mut().for_each(|v| *v /= total);
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integral of `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(|(&t, &w)| w * f(mid + half * t)).sum::<f64>() * half
    }

    /// Sum of the rule over consecutive panels `[edges[i], edges[i+1]]`.
    pub fn composite(&self, edges: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        edges.windows(2).map(|e| self.integrate(e[0], e[1], &f)).sum()
    }
}

/// Quadrature nodes on a symmetric interval `[-R, R]`, ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PanelNodes {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    /// Ascending panel edges; each panel holds `x.len() / (edges.len() - 1)` consecutive nodes.
    /// Empty for a single point.
    pub edges: Vec<f64>,
}

impl PanelNodes {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Nodes per panel, 0 for a single point.
    pub fn per_panel(&self) -> usize {
        if self.edges.len() < 2 {
            0
        } else {
            self.x.len() / (self.edges.len() - 1)
        }
    }

    /// Index range of nodes lying in `[lo, hi]`.
    pub fn range(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        let start = self.x.partition_point(|&y| y < lo);
        let end = self.x.partition_point(|&y| y <= hi);
        start..end.max(start)
    }
}

/// Panel edges on `[0, radius]`: widths start at `fine / 2`, double, and are capped at `coarse`.
pub fn graded_edges(fine: f64, coarse: f64, radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0) {
        return Ok(Vec::new());
    }
    if !(fine > 0.0 && coarse > 0.0) {
        return Err(domain(format!("panel widths must be positive (fine={fine}, coarse={coarse})")));
    }
    let mut edges = vec![0.0];
    let mut width = (0.5 * fine).min(coarse);
    let mut e = 0.0;
    while e < radius {
        if edges.len() > MAX_PANELS {
            return Err(Error::Resource(format!(
                "panel layout needs more than {MAX_PANELS} panels (fine={fine}, coarse={coarse}, radius={radius})"
            )));
        }
        e = (e + width).min(radius);
        if radius - e < 0.25 * width {
            e = radius;
        }
        edges.push(e);
        width = (2.0 * width).min(coarse);
    }
    Ok(edges)
}

/// Nodes of `rule` on the graded panels of [`graded_edges`], mirrored to `[-radius, radius]`.
pub fn graded_panels(fine: f64, coarse: f64, radius: f64, rule: &GaussLegendre) -> Result<PanelNodes> {
    let edges = graded_edges(fine, coarse, radius)?;
    if edges.is_empty() {
        return Ok(PanelNodes::default());
    }
    let mut right_x = Vec::with_capacity((edges.len() - 1) * rule.len());
    let mut right_w = Vec::with_capacity(right_x.capacity());
    for e in edges.windows(2) {
        let half = 0.5 * (e[1] - e[0]);
        let mid = 0.5 * (e[1] + e[0]);
        for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
            right_x.push(mid + half * t);
            right_w.push(w * half);
        }
    }
    let mut x: Vec<f64> = right_x.iter().rev().map(|v| -v).collect();
    let mut w: Vec<f64> = right_w.iter().rev().copied().collect();
    x.extend_from_slice(&right_x);
    w.extend_from_slice(&right_w);
    let mut all: Vec<f64> = edges[1..].iter().rev().map(|e| -e).collect();
    all.extend_from_slice(&edges);
    Ok(PanelNodes { x, w, edges: all })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let rule = GaussHermiteRule::new(20).unwrap();
        // E Z^(2k) = (2k-1)!!
        let mut dfact = 1.0;
        for k in 1..10 {
            dfact *= (2 * k - 1) as f64;
            let m = rule.expect(|z| z.powi(2 * k)).unwrap();
            assert!((m - dfact).abs() < 1e-11 * dfact, "k={k}");
        }
        let odd = rule.expect(|z| z.powi(7)).unwrap();
        assert!(odd.abs() < 1e-11);
    }

    #[test]
    fn hermite_rule_is_symmetric_and_normalized() {
        for n in [1, 2, 7, 40, 161] {
            let r = GaussHermiteRule::new(n).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - 1.0).abs() < 1e-14);
            for i in 0..n {
                assert_eq!(r.nodes()[i], -r.nodes()[n - 1 - i]);
                assert_eq!(r.weights()[i], r.weights()[n - 1 - i]);
            }
        }
        assert!(GaussHermiteRule::new(0).is_err());
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let r = GaussLegendre::new(12);
        for k in 0..24 {
            let exact = if k % 2 == 0 { 2.0 / (k + 1) as f64 } else { 0.0 };
            let v = r.integrate(-1.0, 1.0, |x| x.powi(k));
            assert!((v - exact).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn log_moment_limits() {
        let rule = GaussHermiteRule::new(40).unwrap();
        let f = |z: f64| 0.3 * z + 0.1 * z * z;
        let mean = rule.log_moment(0.0, f).unwrap();
        let small = rule.log_moment(1e-6, f).unwrap();
        assert!((mean - small).abs() < 1e-6 * 0.2 + 1e-8);
        assert!(rule.log_moment(-0.1, f).is_err());
        // Gaussian: (1/m) ln E exp(m a Z) = m a^2 / 2
        let v = rule.log_moment(0.7, |z| 1.3 * z).unwrap();
        assert!((v - 0.7 * 1.69 / 2.0).abs() < 1e-13);
    }

    #[test]
    fn graded_layout_covers_the_interval() {
        let rule = GaussLegendre::new(10);
        let p = graded_panels(0.01, 0.5, 3.0, &rule).unwrap();
        let total: f64 = p.w.iter().sum();
        assert!((total - 6.0).abs() < 1e-13);
        assert!(p.x.windows(2).all(|w| w[0] < w[1]));
        let edges = graded_edges(0.01, 0.5, 3.0).unwrap();
        assert!(edges.windows(2).all(|w| w[1] - w[0] <= 0.5 + 1e-15));
        assert!(graded_panels(0.1, 0.1, 0.0, &rule).unwrap().is_empty());
    }
}
