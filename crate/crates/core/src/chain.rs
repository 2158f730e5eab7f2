//! Cole-Hopf chain: nested log-moments of Gaussian increments.
//!
//! A chain is a list of stages `(sigma_j, mu_j)` and a closed-form terminal
//! function `X_L`. Each stage maps
//!
//! ```text
//! X_j(x) = (1/mu_j) ln E exp(mu_j X_{j+1}(x + sigma_j Z))      (mu_j > 0)
//! X_j(x) = E X_{j+1}(x + sigma_j Z)                           (mu_j = 0)
//! ```
//!
//! and the chain value is `X_0(h)`.
//!
//! Every level function is stored as `|x| + c_j + kappa_j(x)` with
//! `kappa_j` localized near the origin. The `|x|` part goes through the
//! closed-form Gaussian moment of the absolute value; only `kappa_j`
//! is integrated numerically, on graded Gauss-Legendre panels split at
//! the kink. Level values live on those panel nodes and the tilted weights
//! `W_j` reuse the same nodes. A stage whose kernel is narrower than the
//! finest input panel is integrated on sub-panels of the kernel width,
//! reading the input level through its panel-local interpolant.

use crate::error::{non_finite, Result};
use crate::quadrature::{graded_panels, GaussHermiteRule, GaussLegendre, PanelNodes};
use crate::special::{kappa_mgf, kappa_mgf_radius, log_mgf_abs, mean_abs_excess, LN_SQRT_2PI};
use rayon::prelude::*;
use std::sync::Arc;

/// Half-width of the Gaussian window, in standard deviations.
const WINDOW: f64 = 9.0;
/// Widest panel, in standard deviations of the kernel that integrates it.
const KERNEL_PANEL: f64 = 2.0;

/// One Gaussian stage: increment standard deviation and log-moment exponent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub sigma: f64,
    pub mu: f64,
}

type LocalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Closed-form last level `X_L(y) = |y| + offset + local(y)`.
///
/// `local` must be negligible beyond `radius`, resolved by panels of width
/// `fine` near the origin, and smooth enough for panels of width `coarse`
/// away from it.
#[derive(Clone)]
pub struct Terminal {
    offset: f64,
    radius: f64,
    fine: f64,
    coarse: f64,
    local: LocalFn,
}

impl std::fmt::Debug for Terminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Terminal")
            .field("offset", &self.offset)
            .field("radius", &self.radius)
            .field("fine", &self.fine)
            .field("coarse", &self.coarse)
            .finish()
    }
}

impl Terminal {
    /// `X_L(y) = |y|`.
    pub fn abs() -> Self {
        Self { offset: 0.0, radius: 0.0, fine: 1.0, coarse: 1.0, local: Arc::new(|_| 0.0) }
    }

    /// `(1/mu) ln E exp(mu |y + sigma Z|)`, or `E |y + sigma Z|` when `mu = 0`.
    pub fn tilted_abs(sigma: f64, mu: f64) -> Self {
        if sigma == 0.0 {
            return Self::abs();
        }
        if mu == 0.0 {
            return Self {
                offset: 0.0,
                radius: WINDOW * sigma,
                fine: sigma,
                coarse: 3.0 * sigma,
                local: Arc::new(move |y| mean_abs_excess(y, sigma)),
            };
        }
        Self {
            offset: 0.5 * mu * sigma * sigma,
            radius: 1.02 * kappa_mgf_radius(sigma, mu),
            fine: sigma.min(1.0 / mu),
            coarse: 3.0 * sigma,
            local: Arc::new(move |y| kappa_mgf(y, sigma, mu)),
        }
    }

    /// `(1/beta) ln E cosh(beta (y + sigma Z)) = beta sigma^2 / 2 + ln cosh(beta y) / beta`.
    pub fn log_cosh(beta: f64, sigma: f64) -> Self {
        Self {
            offset: 0.5 * beta * sigma * sigma - std::f64::consts::LN_2 / beta,
            radius: 20.0 / beta,
            fine: 1.0 / beta,
            coarse: f64::INFINITY,
            local: Arc::new(move |y: f64| (-2.0 * beta * y.abs()).exp().ln_1p() / beta),
        }
    }

    /// Arbitrary localized profile.
    pub fn custom(offset: f64, radius: f64, fine: f64, coarse: f64, local: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self { offset, radius, fine, coarse, local: Arc::new(local) }
    }

    pub fn value(&self, y: f64) -> f64 {
        y.abs() + self.offset + self.local(y)
    }

    pub fn local(&self, y: f64) -> f64 {
        if y.abs() > self.radius {
            0.0
        } else {
            (self.local)(y)
        }
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }
}

/// Resolution of the panel engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    /// Gauss-Legendre nodes per panel.
    pub order: usize,
    /// Divides every panel width; 2 doubles the number of panels.
    pub refine: f64,
    /// Keep the tilted weights `W_j` for later expectations.
    pub keep_weights: bool,
}

/// Default nodes per panel; overridable through `PARISI_DEFAULT_ORDER`.
pub const DEFAULT_ORDER: usize = 20;

impl Default for ChainOptions {
    fn default() -> Self {
        let order = std::env::var("PARISI_DEFAULT_ORDER")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&o| o >= 2)
            .unwrap_or(DEFAULT_ORDER);
        Self { order, refine: 1.0, keep_weights: false }
    }
}

impl ChainOptions {
    pub fn with_order(order: usize) -> Self {
        Self { order, ..Self::default() }
    }

    pub fn keeping_weights(mut self) -> Self {
        self.keep_weights = true;
        self
    }
}

/// Sparse rows of tilted weights: row `a` covers input nodes `start[a] .. start[a] + len`.
#[derive(Debug, Clone, Default)]
struct Kernel {
    start: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl Kernel {
    fn row(&self, a: usize) -> (usize, &[f64]) {
        (self.start[a], &self.values[self.offset[a]..self.offset[a + 1]])
    }
}

/// Result of running a chain: level values on their nodes and, optionally, the tilted weights.
#[derive(Debug, Clone)]
pub struct ChainEvaluation {
    stages: Vec<Stage>,
    terminal: Terminal,
    offsets: Vec<f64>,
    nodes: Vec<PanelNodes>,
    local: Vec<Vec<f64>>,
    kernels: Option<Vec<Kernel>>,
    narrow: Vec<bool>,
    rule: GaussLegendre,
    h: f64,
    psi: f64,
}

struct Prepared<'a> {
    stage: Stage,
    inputs: &'a PanelNodes,
    /// Set when the kernel is narrower than the input panels.
    narrow: Option<&'a GaussLegendre>,
    /// `ln w_b + mu |y_b|`
    log_base: Vec<f64>,
    /// `expm1(mu kappa_b)`, or `kappa_b` when `mu = 0`
    factor: Vec<f64>,
}

impl<'a> Prepared<'a> {
    fn new(stage: Stage, inputs: &'a PanelNodes, local: &[f64], narrow: Option<&'a GaussLegendre>) -> Self {
        let mu = stage.mu;
        let log_base = inputs.x.iter().zip(&inputs.w).map(|(&y, &w)| w.ln() + mu * y.abs()).collect();
        let factor = if mu > 0.0 {
            local.iter().map(|&k| (mu * k).exp_m1()).collect()
        } else {
            local.to_vec()
        };
        Self { stage, inputs, narrow, log_base, factor }
    }

    /// `kappa_j(x)` and, if requested, the normalized weight row.
    fn apply(&self, x: f64, keep: bool) -> (f64, usize, Vec<f64>) {
        if let Some(rule) = self.narrow {
            return self.apply_narrow(x, keep, rule);
        }
        let Stage { sigma, mu } = self.stage;
        let range = self.inputs.range(x - WINDOW * sigma, x + WINDOW * sigma);
        let start = range.start;
        let inv = 0.5 / (sigma * sigma);
        let mut row = if keep { Vec::with_capacity(range.len()) } else { Vec::new() };
        let shift = if mu > 0.0 { -log_mgf_abs(x, sigma, mu) } else { 0.0 } - sigma.ln() - LN_SQRT_2PI;
        let mut acc = 0.0;
        for b in range {
            let d = self.inputs.x[b] - x;
            let t = (self.log_base[b] + shift - d * d * inv).exp();
            acc += t * self.factor[b];
            if keep {
                row.push(if mu > 0.0 { t * (1.0 + self.factor[b]) } else { t });
            }
        }
        if mu > 0.0 {
            if keep {
                let norm = 1.0 / (1.0 + acc);
                row.iter_mut().for_each(|v| *v *= norm);
            }
            (kappa_mgf(x, sigma, mu) + acc.ln_1p() / mu, start, row)
        } else {
            (mean_abs_excess(x, sigma) + acc, start, row)
        }
    }

    fn apply_narrow(&self, x: f64, keep: bool, rule: &GaussLegendre) -> (f64, usize, Vec<f64>) {
        let Stage { sigma, mu } = self.stage;
        let edges = &self.inputs.edges;
        let n = self.inputs.per_panel();
        let lo = (x - WINDOW * sigma).max(edges[0]);
        let hi = (x + WINDOW * sigma).min(edges[edges.len() - 1]);
        let mut acc = 0.0;
        let mut start = 0;
        let mut row = Vec::new();
        if lo < hi {
            let p0 = edges.partition_point(|&e| e <= lo).saturating_sub(1);
            let p1 = (edges.partition_point(|&e| e < hi) - 1).min(edges.len() - 2);
            start = p0 * n;
            if keep {
                row = vec![0.0; (p1 - p0 + 1) * n];
            }
            let inv = 0.5 / (sigma * sigma);
            let shift = if mu > 0.0 { -log_mgf_abs(x, sigma, mu) } else { 0.0 } - sigma.ln() - LN_SQRT_2PI;
            let mut basis = vec![0.0; n];
            for p in p0..=p1 {
                let (e0, e1) = (edges[p], edges[p + 1]);
                // Offsets from x, so the Gaussian sees them without cancellation.
                let (a, b) = ((e0 - x).max(-WINDOW * sigma), (e1 - x).min(WINDOW * sigma));
                if a >= b {
                    continue;
                }
                let factor = &self.factor[p * n..(p + 1) * n];
                let pieces = ((b - a) / (KERNEL_PANEL * sigma)).ceil().max(1.0) as usize;
                let width = (b - a) / pieces as f64;
                for i in 0..pieces {
                    let mid = a + (i as f64 + 0.5) * width;
                    for (&t, &w) in rule.nodes().iter().zip(rule.weights()) {
                        let d = mid + 0.5 * width * t;
                        let y = x + d;
                        let g = ((0.5 * width * w).ln() + mu * y.abs() + shift - d * d * inv).exp();
                        rule.lagrange((2.0 * y - e0 - e1) / (e1 - e0), &mut basis);
                        let f: f64 = basis.iter().zip(factor).map(|(l, v)| l * v).sum();
                        acc += g * f;
                        if keep {
                            let gt = if mu > 0.0 { g * (1.0 + f) } else { g };
                            let slot = &mut row[(p - p0) * n..(p - p0 + 1) * n];
                            slot.iter_mut().zip(&basis).for_each(|(r, l)| *r += gt * l);
                        }
                    }
                }
            }
        }
        if mu > 0.0 {
            if keep {
                let norm = 1.0 / (1.0 + acc);
                row.iter_mut().for_each(|v| *v *= norm);
            }
            (kappa_mgf(x, sigma, mu) + acc.ln_1p() / mu, start, row)
        } else {
            (mean_abs_excess(x, sigma) + acc, start, row)
        }
    }
}

/// Runs the chain `stages` -> `terminal` at the point `h`.
pub fn evaluate(stages: &[Stage], terminal: &Terminal, h: f64, opts: &ChainOptions) -> Result<ChainEvaluation> {
    let depth = stages.len();
    let rule = GaussLegendre::new(opts.order.max(2));
    let refine = if opts.refine > 0.0 { opts.refine } else { 1.0 };

    let mut radius = vec![0.0; depth + 1];
    let mut fine = vec![0.0; depth + 1];
    let mut coarse = vec![0.0; depth + 1];
    radius[depth] = terminal.radius;
    fine[depth] = terminal.fine;
    coarse[depth] = terminal.coarse;
    for j in (1..depth).rev() {
        let Stage { sigma, mu } = stages[j];
        radius[j] = radius[j + 1] + WINDOW * sigma;
        let smooth = sigma.max(fine[j + 1]);
        fine[j] = if mu > 0.0 { smooth.min(1.0 / mu) } else { smooth };
        coarse[j] = 3.0 * smooth;
    }

    // A kernel narrower than the finest panel would force panels of its own width everywhere.
    let narrow: Vec<bool> = (0..depth).map(|j| KERNEL_PANEL * stages[j].sigma < 0.5 * fine[j + 1]).collect();
    let mut nodes = vec![PanelNodes { x: vec![h], w: vec![1.0], edges: Vec::new() }];
    for j in 1..=depth {
        // Interpolation needs panels at the smoothness scale, a third of `coarse`.
        let widest = if narrow[j - 1] {
            if coarse[j].is_finite() {
                coarse[j] / 3.0
            } else {
                fine[j]
            }
        } else {
            (KERNEL_PANEL * stages[j - 1].sigma).min(coarse[j])
        };
        nodes.push(graded_panels(fine[j] / refine, widest / refine, radius[j], &rule)?);
    }

    let mut offsets = vec![0.0; depth + 1];
    offsets[depth] = terminal.offset;
    for j in (0..depth).rev() {
        let Stage { sigma, mu } = stages[j];
        offsets[j] = offsets[j + 1] + 0.5 * mu * sigma * sigma;
    }

    let mut local = vec![Vec::new(); depth + 1];
    local[depth] = nodes[depth].x.iter().map(|&y| terminal.local(y)).collect();
    let mut kernels = opts.keep_weights.then(|| vec![Kernel::default(); depth]);

    for j in (0..depth).rev() {
        let prepared = Prepared::new(stages[j], &nodes[j + 1], &local[j + 1], narrow[j].then_some(&rule));
        let outputs = &nodes[j].x;
        let keep = opts.keep_weights;
        let results: Vec<(f64, usize, Vec<f64>)> = if outputs.len() > 64 {
            outputs.par_iter().map(|&x| prepared.apply(x, keep)).collect()
        } else {
            outputs.iter().map(|&x| prepared.apply(x, keep)).collect()
        };
        let mut values = Vec::with_capacity(results.len());
        let mut kernel = Kernel::default();
        if keep {
            kernel.offset.push(0);
        }
        for (i, (v, start, row)) in results.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(non_finite(format!("chain level {j}, x={}", outputs[i]), v));
            }
            values.push(v);
            if keep {
                kernel.start.push(start);
                kernel.values.extend_from_slice(&row);
                kernel.offset.push(kernel.values.len());
            }
        }
        local[j] = values;
        if let Some(k) = kernels.as_mut() {
            k[j] = kernel;
        }
    }

    let psi = h.abs() + offsets[0] + local[0][0];
    if !psi.is_finite() {
        return Err(non_finite("chain value", psi));
    }
    Ok(ChainEvaluation {
        stages: stages.to_vec(),
        terminal: terminal.clone(),
        offsets,
        nodes,
        local,
        kernels,
        narrow,
        rule,
        h,
        psi,
    })
}

impl ChainEvaluation {
    /// `X_0(h)`.
    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of stages `L`; level `L` is the closed-form terminal.
    pub fn depth(&self) -> usize {
        self.stages.len()
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Points where level `j` is tabulated: `{h}` for `j = 0`, panel nodes otherwise.
    pub fn nodes(&self, j: usize) -> &[f64] {
        &self.nodes[j].x
    }

    /// `X_j` on [`Self::nodes`]`(j)`.
    pub fn level_values(&self, j: usize) -> Vec<f64> {
        self.nodes[j].x.iter().zip(&self.local[j]).map(|(&x, &k)| x.abs() + self.offsets[j] + k).collect()
    }

    /// `X_j(x)` at an arbitrary point, computed with the same quadrature as the tabulated values.
    pub fn value(&self, j: usize, x: f64) -> f64 {
        let depth = self.depth();
        if j >= depth {
            return self.terminal.value(x);
        }
        let prepared =
            Prepared::new(self.stages[j], &self.nodes[j + 1], &self.local[j + 1], self.narrow[j].then_some(&self.rule));
        x.abs() + self.offsets[j] + prepared.apply(x, false).0
    }

    /// `W_j(x, y) = exp(mu_j (X_{j+1}(y) - X_j(x)))`.
    pub fn weight(&self, j: usize, x: f64, y: f64) -> f64 {
        let mu = self.stages[j].mu;
        (mu * (self.value(j + 1, y) - self.value(j, x))).exp()
    }

    /// `E[W_0 ... W_{d-1} g(Y_d)]` for a localized `g` given on [`Self::nodes`]`(d)`.
    ///
    /// `Y_d = h + sigma_0 Z_0 + ... + sigma_{d-1} Z_{d-1}`. Requires the chain to
    /// have been run with `keep_weights`. Because `g` is localized, the
    /// untabulated far field contributes nothing; add constants separately
    /// using `E[W_0 ... W_{d-1}] = 1`.
    pub fn tilted_expectation(&self, d: usize, g: &[f64]) -> f64 {
        let kernels = self.kernels.as_ref().expect("chain evaluated without keep_weights");
        assert_eq!(g.len(), self.nodes[d].len(), "g must be tabulated on the level nodes");
        let mut cur = g.to_vec();
        for j in (0..d).rev() {
            let k = &kernels[j];
            cur = (0..self.nodes[j].len())
                .map(|a| {
                    let (start, row) = k.row(a);
                    row.iter().zip(&cur[start..start + row.len()]).map(|(w, v)| w * v).sum()
                })
                .collect();
        }
        cur[0]
    }
}

/// Literal tensor-grid evaluation with a Gauss-Hermite rule per stage.
///
/// Cost grows like `order^depth`; intended as an independent check of [`evaluate`].
pub fn tensor_psi(stages: &[Stage], terminal: &Terminal, h: f64, order: usize) -> Result<f64> {
    let rule = GaussHermiteRule::new(order)?;
    fn rec(stages: &[Stage], terminal: &Terminal, rule: &GaussHermiteRule, x: f64) -> Result<f64> {
        match stages.split_first() {
            None => Ok(terminal.value(x)),
            Some((s, rest)) => {
                let vals = rule
                    .nodes()
                    .iter()
                    .map(|&z| rec(rest, terminal, rule, x + s.sigma * z))
                    .collect::<Result<Vec<f64>>>()?;
                crate::quadrature::log_moment(s.mu, &vals, rule.weights())
            }
        }
    }
    rec(stages, terminal, &rule, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{log_mgf_abs, mean_abs};

    #[test]
    fn one_stage_over_abs_is_closed_form() {
        // A chain with a single stage and terminal |y| is the tilted absolute value itself.
        let opts = ChainOptions::default();
        for &(s, m, h) in &[(0.8, 1.3, 0.2), (0.5, 0.0, -0.4), (1.0, 6.0, 0.0)] {
            let ev = evaluate(&[Stage { sigma: s, mu: m }], &Terminal::abs(), h, &opts).unwrap();
            let exact = if m > 0.0 { log_mgf_abs(h, s, m) / m } else { mean_abs(h, s) };
            assert!((ev.psi() - exact).abs() < 1e-14, "{s} {m} {h}");
        }
    }

    #[test]
    fn splitting_a_stage_at_equal_exponent_is_exact() {
        // Two stages with the same exponent compose to one stage with the summed variance.
        let opts = ChainOptions::default();
        for &(m, h) in &[(0.7, 0.1), (3.0, -0.5), (0.0, 0.3)] {
            let t = Terminal::tilted_abs(0.6, m);
            let ev = evaluate(&[Stage { sigma: 0.8, mu: m }], &t, h, &opts).unwrap();
            let exact = Terminal::tilted_abs(1.0, m).value(h);
            assert!((ev.psi() - exact).abs() < 1e-13, "m={m}: {} vs {exact}", ev.psi());
        }
    }

    #[test]
    fn three_stage_equal_exponents() {
        let opts = ChainOptions::default();
        let m = 2.0;
        let stages = [Stage { sigma: 0.5, mu: m }, Stage { sigma: 0.3, mu: m }];
        let t = Terminal::tilted_abs(0.2f64.sqrt(), m);
        let ev = evaluate(&stages, &t, 0.05, &opts).unwrap();
        let exact = Terminal::tilted_abs((0.25 + 0.09 + 0.2f64).sqrt(), m).value(0.05);
        assert!((ev.psi() - exact).abs() < 1e-13, "{} vs {exact}", ev.psi());
    }

    #[test]
    fn narrow_stages_compose_exactly() {
        // Equal exponents merge: a tiny stage before the terminal only adds its variance.
        let opts = ChainOptions::default();
        for &(m, tiny) in &[(0.7, 1e-5), (3.0, 1e-3), (0.0, 1e-7), (12.0, 1e-4)] {
            let stages = [Stage { sigma: 0.8, mu: m }, Stage { sigma: tiny, mu: m }];
            let ev = evaluate(&stages, &Terminal::tilted_abs(0.6, m), 0.2, &opts).unwrap();
            let exact = Terminal::tilted_abs((1.0 + tiny * tiny).sqrt(), m).value(0.2);
            assert!((ev.psi() - exact).abs() < 1e-13, "m={m} tiny={tiny}: {} vs {exact}", ev.psi());
            assert!(ev.nodes(2).len() < 20_000);
        }
    }

    #[test]
    fn narrow_stage_between_wide_ones() {
        // A tiny stage with its own exponent against the same chain with its variance moved into a neighbour.
        let opts = ChainOptions::default();
        let t = Terminal::tilted_abs(0.5, 4.0);
        for tiny in [1e-4, 1e-6] {
            let with = [Stage { sigma: 0.7, mu: 0.5 }, Stage { sigma: tiny, mu: 2.0 }, Stage { sigma: 0.4, mu: 4.0 }];
            let merged = [Stage { sigma: 0.7, mu: 0.5 }, Stage { sigma: (0.16 + tiny * tiny).sqrt(), mu: 4.0 }];
            let a = evaluate(&with, &t, 0.1, &opts).unwrap().psi();
            let b = evaluate(&merged, &t, 0.1, &opts).unwrap().psi();
            // Moving variance dv between exponents changes the value by O(dv).
            assert!((a - b).abs() < 10.0 * tiny * tiny, "{tiny}: {a} vs {b}");
        }
    }

    #[test]
    fn tensor_grid_agrees_with_panels() {
        let stages = [Stage { sigma: 0.74f64.sqrt(), mu: 0.5 }];
        let t = Terminal::tilted_abs(0.26f64.sqrt(), 2.0);
        let panel = evaluate(&stages, &t, 0.0, &ChainOptions::default()).unwrap().psi();
        let grid = tensor_psi(&stages, &t, 0.0, 160).unwrap();
        assert!((panel - grid).abs() < 1e-9, "{panel} vs {grid}");
    }

    #[test]
    fn refinement_is_converged() {
        let stages = [Stage { sigma: 0.6, mu: 0.4 }, Stage { sigma: 0.5, mu: 1.5 }];
        let t = Terminal::tilted_abs(0.4, 4.0);
        let base = evaluate(&stages, &t, 0.3, &ChainOptions::default()).unwrap().psi();
        let fine = evaluate(&stages, &t, 0.3, &ChainOptions { order: 32, refine: 2.0, keep_weights: false }).unwrap().psi();
        assert!((base - fine).abs() < 1e-13, "{base} vs {fine}");
    }

    fn window_edges(x: f64, s: f64) -> Vec<f64> {
        let mut e: Vec<f64> = (0..=60).map(|i| x - 10.0 * s + i as f64 * s / 3.0).collect();
        if e[0] < 0.0 && *e.last().unwrap() > 0.0 {
            e.push(0.0);
            e.sort_by(f64::total_cmp);
        }
        e
    }

    #[test]
    fn narrow_weights_reproduce_the_identity() {
        // A stage of negligible variance leaves tilted expectations unchanged.
        let t = Terminal::tilted_abs(0.4, 4.0);
        let opts = ChainOptions::default().keeping_weights();
        let with = evaluate(&[Stage { sigma: 0.6, mu: 0.4 }, Stage { sigma: 1e-6, mu: 1.5 }], &t, 0.3, &opts).unwrap();
        let without = evaluate(&[Stage { sigma: 0.6, mu: 0.4 }], &t, 0.3, &opts).unwrap();
        let g = |y: f64| (-4.0 * y * y).exp() * (1.0 + y);
        let a = with.tilted_expectation(2, &with.nodes(2).iter().map(|&y| g(y)).collect::<Vec<_>>());
        let b = without.tilted_expectation(1, &without.nodes(1).iter().map(|&y| g(y)).collect::<Vec<_>>());
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }

    #[test]
    fn weights_have_unit_mass() {
        let stages = [Stage { sigma: 0.6, mu: 0.4 }, Stage { sigma: 0.5, mu: 1.5 }];
        let t = Terminal::tilted_abs(0.4, 4.0);
        let ev = evaluate(&stages, &t, 0.3, &ChainOptions::default().keeping_weights()).unwrap();
        let rule = GaussLegendre::new(40);
        let pdf = |d: f64, s: f64| crate::special::norm_pdf(d / s) / s;
        for &(j, x) in &[(0usize, 0.3), (1, 0.0), (1, -0.7)] {
            let s = stages[j].sigma;
            let mass = rule.composite(&window_edges(x, s), |y| ev.weight(j, x, y) * pdf(y - x, s));
            assert!((mass - 1.0).abs() < 1e-10, "j={j} x={x}: {mass}");
        }
        // E[W_0 W_1 g] against a brute-force nested integral for a localized g
        let g: Vec<f64> = ev.nodes(2).iter().map(|&y| (-4.0 * y * y).exp()).collect();
        let te = ev.tilted_expectation(2, &g);
        let (m0, m1) = (stages[0].mu, stages[1].mu);
        let x0 = ev.value(0, 0.3);
        let inner = |x: f64| {
            let s = stages[1].sigma;
            let x1 = ev.value(1, x);
            rule.composite(&window_edges(x, s), |y| {
                (m1 * (ev.value(2, y) - x1)).exp() * (-4.0 * y * y).exp() * pdf(y - x, s)
            }) * (m0 * (x1 - x0)).exp()
        };
        let s0 = stages[0].sigma;
        let brute = rule.composite(&window_edges(0.3, s0), |x| inner(x) * pdf(x - 0.3, s0));
        assert!((te - brute).abs() < 1e-9, "{te} vs {brute}");
    }

    #[test]
    fn log_cosh_terminal_matches_definition() {
        let beta = 3.0;
        let t = Terminal::log_cosh(beta, 0.5);
        for &y in &[0.0, 0.2, -1.0, 8.0] {
            let direct = 0.5 * beta * 0.25 + crate::special::ln_cosh(beta * y) / beta;
            assert!((t.value(y) - direct).abs() < 1e-14);
        }
    }
}
