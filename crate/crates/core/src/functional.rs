//! Parisi functionals at zero and positive temperature, the one-plateau
//! perturbation `gamma_q`, its q-derivative, and the search for a
//! perturbation that lowers the functional.

use crate::chain::{self, ChainEvaluation, ChainOptions, Stage, Terminal};
use crate::error::{domain, Error, Result};
use crate::mixture::MixtureSpec;
use crate::order_param::{FiniteTempStepParam, StepOrderParam};
use crate::tailblock::{TailBlock, TailBlockParams};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::LN_2;

/// Largest number of plateaus a chain may have.
pub const MAX_PLATEAUS: usize = 8;

/// `gamma_q`: the base order parameter with an extra plateau `m_next` on `[q, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedParam {
    pub base: StepOrderParam,
    pub q: f64,
    pub m_next: f64,
}

impl PerturbedParam {
    pub fn new(base: StepOrderParam, q: f64, m_next: f64) -> Result<Self> {
        base.perturb(q, m_next)?;
        Ok(Self { base, q, m_next })
    }

    /// `gamma_q` as a plain step function.
    pub fn materialize(&self) -> StepOrderParam {
        self.base.perturb(self.q, self.m_next).expect("validated on construction")
    }

    fn with_q(&self, q: f64) -> Result<Self> {
        Self::new(self.base.clone(), q, self.m_next)
    }
}

fn check_plateaus(n: usize) -> Result<()> {
    if n > MAX_PLATEAUS {
        return Err(Error::Resource(format!("{n} plateaus exceed the cap {MAX_PLATEAUS}")));
    }
    Ok(())
}

/// `xi'(q_{i+1}) - xi'(q_i)` with `q_{n+1} = 1`.
pub fn level_variances(qs: &[f64], spec: &MixtureSpec) -> Result<Vec<f64>> {
    let mut d1: Vec<f64> = qs.iter().map(|&q| spec.xi_prime(q)).collect::<Result<_>>()?;
    d1.push(spec.xi_prime(1.0)?);
    Ok(d1.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect())
}

fn zero_chain(gamma: &StepOrderParam, spec: &MixtureSpec) -> Result<(Vec<Stage>, Terminal)> {
    check_plateaus(gamma.plateaus())?;
    let v = level_variances(gamma.qs(), spec)?;
    let n = gamma.n();
    let stages = (0..n).map(|i| Stage { sigma: v[i].sqrt(), mu: gamma.ms()[i] }).collect();
    Ok((stages, Terminal::tilted_abs(v[n].sqrt(), gamma.ms()[n])))
}

/// `Psi_gamma(0, h)` with boundary `|x|`.
pub fn psi_zero(gamma: &StepOrderParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<ChainEvaluation> {
    spec.validate()?;
    let (stages, terminal) = zero_chain(gamma, spec)?;
    chain::evaluate(&stages, &terminal, spec.h, opts)
}

/// `Psi_{alpha,beta}(0, h)` with boundary `ln cosh(beta x) / beta`.
pub fn psi_finite(alpha: &FiniteTempStepParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<ChainEvaluation> {
    spec.validate()?;
    check_plateaus(alpha.qs().len())?;
    let beta = alpha.beta();
    let v = level_variances(alpha.qs(), spec)?;
    let n = alpha.n();
    let stages: Vec<Stage> = (0..n).map(|i| Stage { sigma: v[i].sqrt(), mu: beta * alpha.zetas()[i] }).collect();
    chain::evaluate(&stages, &Terminal::log_cosh(beta, v[n].sqrt()), spec.h, opts)
}

/// Tail block of `gamma_q`: `a = xi'(q_n)`, `b = xi'(1)`, `m = m_n`, `m' = m_next`.
pub fn tail_block(p: &PerturbedParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<TailBlock> {
    let qn = *p.base.qs().last().unwrap();
    let mn = *p.base.ms().last().unwrap();
    if mn == 0.0 {
        return Err(domain("the last plateau must be positive to form a tail block"));
    }
    let params = TailBlockParams::new(spec.xi_prime(qn)?, spec.xi_prime(1.0)?, mn, p.m_next)?;
    TailBlock::new(params, *opts)
}

/// `x -> B(xi'(q), x)` as a chain terminal.
fn b_terminal(block: &TailBlock, t: f64) -> Result<Terminal> {
    let p = *block.params();
    let s = p.b - t;
    let sigma = (t - p.a).sqrt();
    let a_term = block.terminal(t)?;
    let (a_fine, a_radius) = (s.sqrt().min(1.0 / p.m_prime), crate::special::kappa_mgf_radius(s.sqrt(), p.m_prime));
    let smooth = sigma.max(a_fine);
    let offset = a_term.offset() + 0.5 * p.m * sigma * sigma;
    let block = block.clone();
    Ok(Terminal::custom(offset, 1.02 * a_radius + 9.0 * sigma, smooth.min(1.0 / p.m), 3.0 * smooth, move |x| {
        block.slice(t, x).map(|sl| sl.b() - x.abs() - offset).unwrap_or(f64::NAN)
    }))
}

/// `Psi_{gamma_q}(0, h) = Y_0`, with the last two levels given by the closed-form `B`.
pub fn psi_zero_perturbed(p: &PerturbedParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<ChainEvaluation> {
    spec.validate()?;
    check_plateaus(p.base.plateaus() + 1)?;
    let block = tail_block(p, spec, opts)?;
    let t = spec.xi_prime(p.q)?;
    let v = level_variances(p.base.qs(), spec)?;
    let n = p.base.n();
    let stages: Vec<Stage> = (0..n).map(|i| Stage { sigma: v[i].sqrt(), mu: p.base.ms()[i] }).collect();
    chain::evaluate(&stages, &b_terminal(&block, t)?, spec.h, opts)
}

fn correction(qs: &[f64], values: &[f64], spec: &MixtureSpec) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..qs.len() {
        let hi = if i + 1 < qs.len() { qs[i + 1] } else { 1.0 };
        total += values[i] * spec.correction_integral(qs[i], hi)?;
    }
    Ok(total)
}

/// `P(gamma) = Psi_gamma(0, h) - (1/2) integral_0^1 t xi''(t) gamma(t) dt`.
pub fn parisi_zero(gamma: &StepOrderParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<f64> {
    let psi = psi_zero(gamma, spec, opts)?.psi();
    Ok(psi - 0.5 * correction(gamma.qs(), gamma.ms(), spec)?)
}

/// `P_beta(alpha) = ln 2 / beta + Psi_{alpha,beta}(0, h) - (beta/2) integral_0^1 alpha(t) t xi''(t) dt`.
pub fn parisi_finite(alpha: &FiniteTempStepParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<f64> {
    let beta = alpha.beta();
    let psi = psi_finite(alpha, spec, opts)?.psi();
    Ok(LN_2 / beta + psi - 0.5 * beta * correction(alpha.qs(), alpha.zetas(), spec)?)
}

/// `P(gamma_q)` through the closed-form last block.
pub fn parisi_perturbed(p: &PerturbedParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<f64> {
    let y0 = psi_zero_perturbed(p, spec, opts)?.psi();
    let g = p.materialize();
    Ok(y0 - 0.5 * correction(g.qs(), g.ms(), spec)?)
}

/// `phi(q) = E W_0 ... W_{n-1} C(xi'(q), Z)`.
pub fn phi(p: &PerturbedParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<f64> {
    let block = tail_block(p, spec, opts)?;
    let t = spec.xi_prime(p.q)?;
    let n = p.base.n();
    if n == 0 {
        return block.c_value(t, spec.h);
    }
    let ev = psi_zero_perturbed(p, spec, &opts.keeping_weights())?;
    let g = ev
        .nodes(n)
        .iter()
        .map(|&z| block.c_value(t, z).map(|c| c - 1.0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(1.0 + ev.tilted_expectation(n, &g))
}

/// `d/dq P(gamma_q) = (xi''(q)/2) (m_next - m_n) (q - phi(q))`.
pub fn dq_parisi(p: &PerturbedParam, spec: &MixtureSpec, opts: &ChainOptions) -> Result<f64> {
    let phi = phi(p, spec, opts)?;
    let mn = *p.base.ms().last().unwrap();
    Ok(0.5 * spec.xi_second(p.q)? * (p.m_next - mn) * (p.q - phi))
}

/// Outcome of the perturbation search for one base order parameter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub base: StepOrderParam,
    pub m_next: f64,
    pub q_grid: Vec<f64>,
    pub p_base: f64,
    pub p_values: Vec<f64>,
    pub dq_values: Vec<f64>,
    pub phi_values: Vec<f64>,
    pub eta: Option<f64>,
    pub success: bool,
    /// `m_next` values tried before this one, all without a certificate.
    pub rejected: Vec<f64>,
}

impl PerturbationReport {
    /// CSV with columns `q,P_gamma_q,dq_P,phi`.
    pub fn to_csv_rows(&self) -> Vec<String> {
        let mut rows = vec!["q,P_gamma_q,dq_P,phi".to_string()];
        for i in 0..self.q_grid.len() {
            rows.push(format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.q_grid[i], self.p_values[i], self.dq_values[i], self.phi_values[i]
            ));
        }
        rows
    }
}

/// Smallest number of trailing grid points that must all improve on the base value.
pub const MIN_TAIL: usize = 3;

/// `q = 1 - (1 - q_n) 2^{-j}` for `j = 1..=levels` (strictly inside `(q_n, 1)`).
pub fn default_q_grid(base: &StepOrderParam, levels: u32) -> Vec<f64> {
    let g = 1.0 - base.qs().last().unwrap();
    (1..=levels).map(|j| 1.0 - g * 0.5f64.powi(j as i32)).collect()
}

/// `m_n 2^j` for `j = 1..=10`, or `2^j` when `m_n = 0`.
pub fn default_m_grid(base: &StepOrderParam) -> Vec<f64> {
    let mn = *base.ms().last().unwrap();
    let scale = if mn > 0.0 { mn } else { 1.0 };
    (1..=10).map(|j| scale * 2f64.powi(j)).collect()
}

/// Walks `m_grid` until the perturbed functional falls below `P(base)` on a tail of `q_grid`.
pub fn perturbation_search(
    base: &StepOrderParam,
    spec: &MixtureSpec,
    opts: &ChainOptions,
    m_grid: &[f64],
    q_grid: &[f64],
) -> Result<PerturbationReport> {
    if m_grid.is_empty() || q_grid.is_empty() {
        return Err(domain("perturbation search needs non-empty grids"));
    }
    let mut q_grid = q_grid.to_vec();
    q_grid.sort_by(f64::total_cmp);
    let p_base = parisi_zero(base, spec, opts)?;
    let mut rejected = Vec::new();
    let mut last = None;
    for &m_next in m_grid {
        let rows = q_grid
            .par_iter()
            .map(|&q| {
                let p = PerturbedParam::new(base.clone(), q, m_next)?;
                let value = parisi_perturbed(&p, spec, opts)?;
                let phi = phi(&p, spec, opts)?;
                let mn = *base.ms().last().unwrap();
                let dq = 0.5 * spec.xi_second(q)? * (m_next - mn) * (q - phi);
                Ok((value, dq, phi))
            })
            .collect::<Result<Vec<(f64, f64, f64)>>>()?;
        let tail = rows.iter().rev().take_while(|r| r.0 < p_base).count();
        let success = tail >= MIN_TAIL.min(q_grid.len());
        let report = PerturbationReport {
            base: base.clone(),
            m_next,
            q_grid: q_grid.clone(),
            p_base,
            p_values: rows.iter().map(|r| r.0).collect(),
            dq_values: rows.iter().map(|r| r.1).collect(),
            phi_values: rows.iter().map(|r| r.2).collect(),
            eta: (tail > 0).then(|| q_grid[q_grid.len() - tail]),
            success,
            rejected: rejected.clone(),
        };
        if success {
            return Ok(report);
        }
        rejected.push(m_next);
        last = Some(report);
    }
    let mut report = last.expect("m_grid is non-empty");
    report.rejected.pop();
    Ok(report)
}

/// `P(gamma_q)` for a perturbation given by `(q, m_next)`; convenience for finite differences.
pub fn parisi_perturbed_at(p: &PerturbedParam, q: f64, spec: &MixtureSpec, opts: &ChainOptions) -> Result<f64> {
    parisi_perturbed(&p.with_q(q)?, spec, opts)
}
