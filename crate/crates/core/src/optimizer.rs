//! Minimization of the Parisi functionals over step order parameters with a
//! fixed number of plateaus, the escalation `k -> k + 1` seeded by the
//! one-plateau perturbation, and the sweep `beta -> infinity`.

use crate::chain::ChainOptions;
use crate::error::{domain, Result};
use crate::functional::{self, PerturbationReport};
use crate::mixture::MixtureSpec;
use crate::order_param::{l1_distance_on, FiniteTempStepParam, StepOrderParam};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use std::cmp::Ordering;
use std::f64::consts::LN_2;

/// Right edge of the window on which rescaled finite-temperature parameters are compared.
pub const L1_CUT: f64 = 0.95;

/// Values closer than this are treated as ties between restarts.
pub const TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimOptions {
    /// Function evaluations allowed per restart.
    pub budget: usize,
    /// Simplex diameter, in the unconstrained coordinates, that counts as converged.
    pub tolerance: f64,
    /// Randomly displaced starts run in addition to the given one.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { budget: 20_000, tolerance: 1e-7, restarts: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimResult<P> {
    /// Number of free plateaus.
    pub k: usize,
    pub param: P,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
struct Simplex {
    x: Vec<f64>,
    value: f64,
    evaluations: usize,
    converged: bool,
}

/// Nelder-Mead with the standard coefficients, restarted from the best vertex
/// until a restart no longer moves it.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64, tol: f64, budget: usize) -> Simplex {
    let n = x0.len();
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best_x = x0.to_vec();
    let mut best = eval(x0);
    let mut converged = false;
    let mut step = step;
    while evals.get() < budget {
        let mut pts: Vec<(Vec<f64>, f64)> = vec![(best_x.clone(), best)];
        for i in 0..n {
            let mut p = best_x.clone();
            p[i] += step;
            let v = eval(&p);
            pts.push((p, v));
        }
        let mut run_converged = false;
        while evals.get() < budget {
            pts.sort_by(|a, b| a.1.total_cmp(&b.1));
            let diam = pts[1..]
                .iter()
                .map(|p| p.0.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if diam < tol {
                run_converged = true;
                break;
            }
            let mut centroid = vec![0.0; n];
            for p in &pts[..n] {
                for (c, x) in centroid.iter_mut().zip(&p.0) {
                    *c += x / n as f64;
                }
            }
            let along = |t: f64| -> Vec<f64> { centroid.iter().zip(&pts[n].0).map(|(c, w)| c + t * (c - w)).collect() };
            let xr = along(1.0);
            let fr = eval(&xr);
            if fr < pts[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe);
                pts[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < pts[n - 1].1 {
                pts[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < pts[n].1 {
                    let xc = along(0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                if fc < fr.min(pts[n].1) {
                    pts[n] = (xc, fc);
                } else {
                    let x0 = pts[0].0.clone();
                    for p in pts.iter_mut().skip(1) {
                        p.0 = p.0.iter().zip(&x0).map(|(a, b)| b + 0.5 * (a - b)).collect();
                        p.1 = eval(&p.0);
                    }
                }
            }
        }
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let moved = pts[0].0.iter().zip(&best_x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let improved = pts[0].1 < best;
        if improved {
            best_x = pts[0].0.clone();
            best = pts[0].1;
        }
        if run_converged && (!improved || moved < tol) {
            converged = true;
            break;
        }
        step = (10.0 * tol).max(step * 0.1);
    }
    Simplex { x: best_x, value: best, evaluations: evals.get(), converged }
}

fn softplus(u: f64) -> f64 {
    if u > 30.0 {
        u
    } else {
        u.exp().ln_1p()
    }
}

fn softplus_inv(y: f64) -> f64 {
    let y = y.max(1e-300);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    (p / (1.0 - p)).ln()
}

/// Increasing positive sequence from cumulated softplus increments.
fn increasing(u: &[f64]) -> Vec<f64> {
    u.iter()
        .scan(0.0, |acc, &v| {
            *acc += softplus(v);
            Some(*acc)
        })
        .collect()
}

fn increasing_inv(m: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    m.iter()
        .map(|&v| {
            let d = softplus_inv(v - prev);
            prev = v;
            d
        })
        .collect()
}

/// Increasing sequence in `(0, 1)`, each term a sigmoid fraction of what is left above the previous.
fn stick(v: &[f64]) -> Vec<f64> {
    v.iter()
        .scan(0.0, |acc, &u| {
            *acc += (1.0 - *acc) * sigmoid(u);
            Some(*acc)
        })
        .collect()
}

fn stick_inv(q: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    q.iter()
        .map(|&v| {
            let u = logit((v - prev) / (1.0 - prev));
            prev = v;
            u
        })
        .collect()
}

fn zero_param(x: &[f64], k: usize) -> Result<StepOrderParam> {
    let ms = increasing(&x[..k]);
    let mut qs = vec![0.0];
    qs.extend(stick(&x[k..]));
    StepOrderParam::new(qs, ms)
}

fn zero_coords(g: &StepOrderParam) -> Vec<f64> {
    let mut x = increasing_inv(g.ms());
    x.extend(stick_inv(&g.qs()[1..]));
    x
}

fn finite_param(x: &[f64], k: usize, beta: f64) -> Result<FiniteTempStepParam> {
    let mut zetas = stick(&x[..k]);
    zetas.push(1.0);
    let mut qs = vec![0.0];
    qs.extend(stick(&x[k..]));
    FiniteTempStepParam::new(qs, zetas, beta)
}

fn finite_coords(a: &FiniteTempStepParam) -> Vec<f64> {
    let k = a.n();
    let mut x = stick_inv(&a.zetas()[..k]);
    x.extend(stick_inv(&a.qs()[1..]));
    x
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Runs the simplex from `x0` and from `restarts` Gaussian displacements of it; keeps the best,
/// breaking ties within [`TIE`] by the lexicographically smallest parameter vector.
fn multistart<P: Clone + Send>(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    decode: &(dyn Fn(&[f64]) -> Result<P> + Sync),
    flat: &(dyn Fn(&P) -> Vec<f64> + Sync),
    x0: &[f64],
    opts: &OptimOptions,
) -> Result<(P, Simplex)> {
    let starts: Vec<Vec<f64>> = (0..=opts.restarts)
        .map(|r| {
            if r == 0 {
                return x0.to_vec();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
            x0.iter().map(|&v| v + rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let runs: Vec<Simplex> = starts.par_iter().map(|s| nelder_mead(f, s, 0.5, opts.tolerance, opts.budget)).collect();
    let evaluations = runs.iter().map(|r| r.evaluations).sum();
    let min = runs.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(domain("no start produced a finite value"));
    }
    let mut best: Option<(P, Vec<f64>, &Simplex)> = None;
    for r in runs.iter().filter(|r| r.value <= min + TIE) {
        let p = decode(&r.x)?;
        let key = flat(&p);
        if best.as_ref().is_none_or(|b| lexicographic(&key, &b.1).is_lt()) {
            best = Some((p, key, r));
        }
    }
    let (p, _, r) = best.unwrap();
    Ok((p, Simplex { evaluations, converged: runs.iter().all(|r| r.converged), ..r.clone() }))
}

/// Default start with `k` plateaus: breakpoints spread over `(0, 0.9)`, values doubling from 0.5.
pub fn default_zero_start(k: usize) -> StepOrderParam {
    let qs = (0..k).map(|i| 0.9 * i as f64 / k as f64).collect();
    let ms = (0..k).map(|i| 0.5 * 2f64.powi(i as i32)).collect();
    StepOrderParam::new(qs, ms).expect("valid by construction")
}

/// Minimizes `parisi_zero` over order parameters with `k >= 1` plateaus.
pub fn minimize_zero(
    k: usize,
    spec: &MixtureSpec,
    chain: &ChainOptions,
    opts: &OptimOptions,
    start: Option<&StepOrderParam>,
) -> Result<OptimResult<StepOrderParam>> {
    if k == 0 {
        return Err(domain("need at least one plateau"));
    }
    spec.validate()?;
    let start = start.cloned().unwrap_or_else(|| default_zero_start(k));
    if start.plateaus() != k {
        return Err(domain(format!("start has {} plateaus, expected {k}", start.plateaus())));
    }
    let f = |x: &[f64]| zero_param(x, k).and_then(|g| functional::parisi_zero(&g, spec, chain)).unwrap_or(f64::INFINITY);
    let decode = |x: &[f64]| zero_param(x, k);
    let flat = |g: &StepOrderParam| g.pairs().iter().flat_map(|p| [p.0, p.1]).collect();
    let (param, run) = multistart(&f, &decode, &flat, &zero_coords(&start), opts)?;
    let value = functional::parisi_zero(&param, spec, chain)?;
    Ok(OptimResult { k, param, value, evaluations: run.evaluations, converged: run.converged, tolerance: opts.tolerance })
}

/// Default start with `k` free plateaus below the top value 1.
pub fn default_finite_start(k: usize, beta: f64) -> FiniteTempStepParam {
    let qs = (0..=k).map(|i| 0.95 * i as f64 / (k as f64 + 1.0)).collect();
    let mut zetas: Vec<f64> = (0..k).map(|i| (0.5 * 2f64.powi(i as i32) / beta).min(0.5 + 0.1 * i as f64)).collect();
    zetas.push(1.0);
    FiniteTempStepParam::new(qs, zetas, beta).expect("valid by construction")
}

/// Minimizes `parisi_finite` over `alpha` with `k >= 1` plateaus below the final value 1.
pub fn minimize_finite(
    k: usize,
    beta: f64,
    spec: &MixtureSpec,
    chain: &ChainOptions,
    opts: &OptimOptions,
    start: Option<&FiniteTempStepParam>,
) -> Result<OptimResult<FiniteTempStepParam>> {
    if k == 0 {
        return Err(domain("need at least one plateau"));
    }
    spec.validate()?;
    let start = start.cloned().unwrap_or_else(|| default_finite_start(k, beta));
    if start.n() != k || start.beta() != beta {
        return Err(domain("start does not match k and beta"));
    }
    let f = |x: &[f64]| {
        finite_param(x, k, beta).and_then(|a| functional::parisi_finite(&a, spec, chain)).unwrap_or(f64::INFINITY)
    };
    let decode = |x: &[f64]| finite_param(x, k, beta);
    let flat = |a: &FiniteTempStepParam| a.qs().iter().chain(a.zetas()).copied().collect();
    let (param, run) = multistart(&f, &decode, &flat, &finite_coords(&start), opts)?;
    let value = functional::parisi_finite(&param, spec, chain)?;
    Ok(OptimResult { k, param, value, evaluations: run.evaluations, converged: run.converged, tolerance: opts.tolerance })
}

/// One rung of the escalation ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscalationStep {
    pub result: OptimResult<StepOrderParam>,
    /// Perturbation of the previous optimum used as the start, with its value before refinement.
    pub warm_start: Option<(StepOrderParam, f64)>,
    /// Perturbation search run on this optimum to seed the next rung.
    pub report: Option<PerturbationReport>,
}

/// Minimizes for `k = 1..=k_max`, starting each `k + 1` from the best certified perturbation of the `k` optimum.
pub fn escalate(spec: &MixtureSpec, chain: &ChainOptions, k_max: usize, opts: &OptimOptions) -> Result<Vec<EscalationStep>> {
    if k_max == 0 || k_max > functional::MAX_PLATEAUS {
        return Err(domain(format!("k_max must lie in 1..={}", functional::MAX_PLATEAUS)));
    }
    let mut steps: Vec<EscalationStep> = Vec::new();
    let mut warm: Option<(StepOrderParam, f64)> = None;
    for k in 1..=k_max {
        let result = minimize_zero(k, spec, chain, opts, warm.as_ref().map(|w| &w.0))?;
        if k == k_max {
            steps.push(EscalationStep { result, warm_start: warm.take(), report: None });
            break;
        }
        let base = &result.param;
        let q_grid = functional::default_q_grid(base, 16);
        let rep = functional::perturbation_search(base, spec, chain, &functional::default_m_grid(base), &q_grid)?;
        if !rep.success {
            return Err(domain(format!("no improving perturbation of the {k}-plateau optimum")));
        }
        let eta = rep.eta.expect("successful search has eta");
        let (i, &value) = rep
            .p_values
            .iter()
            .enumerate()
            .filter(|(i, _)| rep.q_grid[*i] >= eta)
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let next = base.perturb(rep.q_grid[i], rep.m_next)?;
        steps.push(EscalationStep { result, warm_start: warm.take(), report: Some(rep) });
        warm = Some((next, value));
    }
    Ok(steps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSweepRow {
    pub beta: f64,
    pub finite: OptimResult<FiniteTempStepParam>,
    /// `|inf P_beta - inf P|` over the family.
    pub gap: f64,
    /// `L1` distance on `[0, L1_CUT]` between `beta * alpha` and the zero-temperature optimum.
    pub l1: f64,
    /// Share of the gap carried by the entropy term `ln 2 / beta`.
    pub entropy_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaSweep {
    pub zero: OptimResult<StepOrderParam>,
    pub rows: Vec<BetaSweepRow>,
}

impl BetaSweep {
    /// CSV with columns `beta,P_beta,P_zero,gap,l1,entropy_share`.
    pub fn to_csv_rows(&self) -> Vec<String> {
        let mut rows = vec!["beta,P_beta,P_zero,gap,l1,entropy_share".to_string()];
        for r in &self.rows {
            rows.push(format!(
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.beta, r.finite.value, self.zero.value, r.gap, r.l1, r.entropy_share
            ));
        }
        rows
    }
}

/// Finite-temperature start matching a zero-temperature optimum: `zeta_i = m_i / beta`, top jump halfway to 1.
fn finite_start_from(g: &StepOrderParam, beta: f64) -> Result<FiniteTempStepParam> {
    let k = g.plateaus();
    let mut zetas: Vec<f64> = g.ms().iter().map(|&m| m / beta).collect();
    let mut qs = g.qs().to_vec();
    qs.push(0.5 * (1.0 + g.qs()[k - 1]));
    if zetas[k - 1] >= 1.0 {
        let top = zetas[k - 1];
        zetas.iter_mut().for_each(|z| *z *= 0.9 / top);
    }
    zetas.push(1.0);
    FiniteTempStepParam::new(qs, zetas, beta)
}

/// For each `beta`, minimizes `P_beta` with `k` plateaus below 1 and compares with the `k`-plateau zero-temperature optimum.
pub fn beta_sweep(
    spec: &MixtureSpec,
    chain: &ChainOptions,
    k: usize,
    betas: &[f64],
    opts: &OptimOptions,
) -> Result<BetaSweep> {
    if betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(domain("betas must be strictly increasing"));
    }
    let zero = minimize_zero(k, spec, chain, opts, None)?;
    let rows = betas
        .par_iter()
        .map(|&beta| {
            let start = finite_start_from(&zero.param, beta)?;
            let finite = minimize_finite(k, beta, spec, chain, opts, Some(&start))?;
            let gap = (finite.value - zero.value).abs();
            let l1 = l1_distance_on(&finite.param.rescaled_pairs(), &zero.param.pairs(), L1_CUT);
            Ok(BetaSweepRow { beta, gap, l1, entropy_share: LN_2 / beta / gap, finite })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaSweep { zero, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reparametrization_roundtrip() {
        let g = StepOrderParam::new(vec![0.0, 0.3, 0.9], vec![0.2, 0.7, 4.0]).unwrap();
        let back = zero_param(&zero_coords(&g), 3).unwrap();
        for (a, b) in g.pairs().iter().zip(back.pairs()) {
            assert!((a.0 - b.0).abs() < 1e-14 && (a.1 - b.1).abs() < 1e-13);
        }
        let a = FiniteTempStepParam::new(vec![0.0, 0.4, 0.8], vec![0.1, 0.3, 1.0], 4.0).unwrap();
        let back = finite_param(&finite_coords(&a), 2, 4.0).unwrap();
        for (x, y) in a.qs().iter().chain(a.zetas()).zip(back.qs().iter().chain(back.zetas())) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let s = nelder_mead(&f, &[-1.2, 1.0], 0.5, 1e-9, 20_000);
        assert!(s.converged);
        assert!((s.x[0] - 1.0).abs() < 1e-7 && (s.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn one_plateau_matches_grid_search() {
        let sk = MixtureSpec::sk(0.0);
        let chain = ChainOptions::default();
        let r = minimize_zero(1, &sk, &chain, &OptimOptions::default(), None).unwrap();
        // Grid over (0, 20] followed by golden-section refinement.
        let f = |m: f64| functional::parisi_zero(&StepOrderParam::constant(m).unwrap(), &sk, &chain).unwrap();
        let grid: Vec<f64> = (1..=2000).map(|i| i as f64 * 0.01).collect();
        let i = (0..grid.len()).min_by(|&a, &b| f(grid[a]).total_cmp(&f(grid[b]))).unwrap();
        let (mut lo, mut hi) = (grid[i] - 0.01, grid[i] + 0.01);
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        while hi - lo > 1e-9 {
            let (a, b) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
            if f(a) < f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let oracle = f(0.5 * (lo + hi));
        assert!(r.converged);
        assert!((r.value - oracle).abs() < 1e-12, "{} vs {oracle}", r.value);
        assert!(r.value < 0.7978846);
        assert!((r.value - functional::parisi_zero(&r.param, &sk, &chain).unwrap()).abs() < 1e-10);
    }
}
