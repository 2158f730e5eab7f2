//! Exact ground states of small mixed p-spin systems.
//!
//! Couplings come from a counter-based generator keyed by the index tuple, so
//! a sample is never stored as a tensor: the Hamiltonian is reduced once to a
//! multilinear polynomial `sum_S J_S prod_{i in S} sigma_i` over subsets `S`,
//! stored as bitmasks, and enumerated along a Gray code.

use crate::error::{domain, Error, Result};
use crate::mixture::MixtureSpec;
use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::time::Instant;

/// Largest `N` for pure two-body models.
pub const MAX_SPINS_QUADRATIC: usize = 24;
/// Largest `N` when some degree is at least 3.
pub const MAX_SPINS_HIGHER: usize = 18;
/// Largest number of index tuples generated for one degree.
pub const MAX_TUPLES: u64 = 50_000_000;
/// Indices are packed five bits each into the generator position.
const INDEX_BITS: u32 = 5;
/// The top bits of the configuration are split across workers.
const SPLIT_BITS: usize = 6;

/// Standard Gaussian attached to one index tuple of one degree.
fn tuple_gaussian(key: &[u8; 32], p: u32, idx: &[usize]) -> f64 {
    let code = idx.iter().rev().fold(0u128, |acc, &i| (acc << INDEX_BITS) | i as u128);
    let mut rng = ChaCha20Rng::from_seed(*key);
    rng.set_stream(p as u64);
    rng.set_word_pos(4 * code);
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sample_key(seed: u64, sample: u64, n: usize) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&sample.to_le_bytes());
    key[16..24].copy_from_slice(&(n as u64).to_le_bytes());
    key
}

/// Calls `f` on every tuple in `{0..n}^p`, first index fastest.
fn for_each_tuple(n: usize, p: u32, mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; p as usize];
    loop {
        f(&idx);
        let mut k = 0;
        loop {
            if k == idx.len() {
                return;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// One draw of `H_N(sigma) = sum_p c_p N^{-(p-1)/2} sum g_{i_1..i_p} sigma_{i_1}..sigma_{i_p} + h sum sigma_i`.
#[derive(Debug, Clone)]
pub struct CouplingSample {
    n: usize,
    spec: MixtureSpec,
    seed: u64,
    sample: u64,
    key: [u8; 32],
    /// `J_S` keyed by the bitmask of `S`, in increasing mask order; includes the field.
    terms: Vec<(u32, f64)>,
}

fn spin_cap(spec: &MixtureSpec) -> usize {
    if spec.max_degree() <= 2 {
        MAX_SPINS_QUADRATIC
    } else {
        MAX_SPINS_HIGHER
    }
}

impl CouplingSample {
    /// Draws sample number `sample` of the stream `seed` with `n` spins.
    pub fn new(spec: &MixtureSpec, n: usize, seed: u64, sample: u64) -> Result<Self> {
        spec.validate()?;
        if n == 0 || n > spin_cap(spec) {
            return Err(Error::Resource(format!("N={n} outside 1..={} for this mixture", spin_cap(spec))));
        }
        for &p in spec.coeffs.keys() {
            let count = (n as u64).checked_pow(p).unwrap_or(u64::MAX);
            if count > MAX_TUPLES {
                return Err(Error::Resource(format!("{count} tuples for degree {p} exceed {MAX_TUPLES}")));
            }
        }
        let key = sample_key(seed, sample, n);
        let mut acc: HashMap<u32, f64> = HashMap::new();
        for (&p, &c2) in &spec.coeffs {
            let scale = c2.sqrt() * (n as f64).powf(-0.5 * (p as f64 - 1.0));
            for_each_tuple(n, p, |idx| {
                let mask = idx.iter().fold(0u32, |m, &i| m ^ (1 << i));
                *acc.entry(mask).or_default() += scale * tuple_gaussian(&key, p, idx);
            });
        }
        if spec.h != 0.0 {
            for i in 0..n {
                *acc.entry(1 << i).or_default() += spec.h;
            }
        }
        let mut terms: Vec<(u32, f64)> = acc.into_iter().collect();
        terms.sort_by_key(|t| t.0);
        Ok(Self { n, spec: spec.clone(), seed, sample, key, terms })
    }

    /// A sample with all couplings zero, keeping only the field.
    pub fn field_only(n: usize, h: f64) -> Result<Self> {
        if n == 0 || n > MAX_SPINS_QUADRATIC {
            return Err(Error::Resource(format!("N={n} outside 1..={MAX_SPINS_QUADRATIC}")));
        }
        let spec = MixtureSpec { coeffs: [(2, 0.0)].into(), h };
        let terms = (0..n).map(|i| (1u32 << i, h)).collect();
        Ok(Self { n, spec, seed: 0, sample: 0, key: [0; 32], terms })
    }

    pub fn n_spins(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&self) -> u64 {
        self.sample
    }

    pub fn spec(&self) -> &MixtureSpec {
        &self.spec
    }

    /// Multilinear coefficients `(mask of S, J_S)`.
    pub fn terms(&self) -> &[(u32, f64)] {
        &self.terms
    }

    /// The Gaussian `g_{i_1..i_p}`.
    pub fn coupling(&self, p: u32, idx: &[usize]) -> f64 {
        tuple_gaussian(&self.key, p, idx)
    }

    fn check(&self, sigma: &[i8]) -> Result<u32> {
        if sigma.len() != self.n {
            return Err(domain(format!("configuration has {} spins, sample has {}", sigma.len(), self.n)));
        }
        let mut neg = 0u32;
        for (i, &s) in sigma.iter().enumerate() {
            match s {
                1 => {}
                -1 => neg |= 1 << i,
                _ => return Err(domain(format!("spin {i} is {s}, expected +1 or -1"))),
            }
        }
        Ok(neg)
    }

    fn energy_mask(&self, neg: u32) -> f64 {
        self.terms.iter().map(|&(s, j)| if (s & neg).count_ones() % 2 == 1 { -j } else { j }).sum()
    }

    /// `H_N(sigma)` through the multilinear form.
    pub fn energy(&self, sigma: &[i8]) -> Result<f64> {
        let neg = self.check(sigma)?;
        Ok(self.energy_mask(neg))
    }

    /// `H_N(sigma)` summed directly over all index tuples, regenerating every coupling.
    pub fn energy_direct(&self, sigma: &[i8]) -> Result<f64> {
        self.check(sigma)?;
        let n = self.n;
        let mut total = 0.0;
        for (&p, &c2) in &self.spec.coeffs {
            let scale = c2.sqrt() * (n as f64).powf(-0.5 * (p as f64 - 1.0));
            let mut sum = 0.0;
            for_each_tuple(n, p, |idx| {
                let sign: i32 = idx.iter().map(|&i| sigma[i] as i32).product();
                sum += sign as f64 * tuple_gaussian(&self.key, p, idx);
            });
            total += scale * sum;
        }
        Ok(total + self.spec.h * sigma.iter().map(|&s| s as f64).sum::<f64>())
    }
}

fn mask_to_sigma(neg: u32, n: usize) -> Vec<i8> {
    (0..n).map(|i| if neg >> i & 1 == 1 { -1 } else { 1 }).collect()
}

/// Better of two `(value, negative-spin mask)` candidates; exact ties go to the smaller mask.
fn better(a: (f64, u32), b: (f64, u32)) -> (f64, u32) {
    match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Greater => a,
        std::cmp::Ordering::Less => b,
        std::cmp::Ordering::Equal => {
            if a.1 <= b.1 {
                a
            } else {
                b
            }
        }
    }
}

/// Ground state found by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundState {
    pub sigma: Vec<i8>,
    /// `max_sigma H_N(sigma) / N`.
    pub max_over_n: f64,
}

/// `argmax_sigma H_N(sigma)` over all `2^N` configurations, walking a Gray code inside each block of the top bits.
pub fn exhaustive_max(sample: &CouplingSample) -> Result<GroundState> {
    let n = sample.n;
    let split = SPLIT_BITS.min(n);
    let low = n - split;
    let mut incident: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for &(s, j) in &sample.terms {
        for (i, list) in incident.iter_mut().enumerate() {
            if s >> i & 1 == 1 {
                list.push((s, j));
            }
        }
    }
    let best = (0u32..1 << split)
        .into_par_iter()
        .map(|top| {
            let mut neg = top << low;
            let mut h = sample.energy_mask(neg);
            let mut best = (h, neg);
            for step in 1u32..1 << low {
                let k = step.trailing_zeros() as usize;
                let field: f64 = incident[k]
                    .iter()
                    .map(|&(s, j)| if (s & neg).count_ones() % 2 == 1 { -j } else { j })
                    .sum();
                h -= 2.0 * field;
                neg ^= 1 << k;
                best = better(best, (h, neg));
            }
            best
        })
        .reduce(|| (f64::NEG_INFINITY, u32::MAX), better);
    Ok(GroundState { sigma: mask_to_sigma(best.1, n), max_over_n: sample.energy_mask(best.1) / n as f64 })
}

/// The same maximum by evaluating every configuration from scratch.
pub fn exhaustive_max_naive(sample: &CouplingSample) -> Result<GroundState> {
    let n = sample.n;
    let best = (0u32..1 << n).map(|neg| (sample.energy_mask(neg), neg)).fold((f64::NEG_INFINITY, u32::MAX), better);
    Ok(GroundState { sigma: mask_to_sigma(best.1, n), max_over_n: best.0 / n as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendRow {
    pub n: usize,
    pub samples: usize,
    pub mean_max_over_n: f64,
    pub stderr: f64,
    pub seconds: f64,
}

/// Monte Carlo mean and standard error of `max H_N / N` for each `N`.
pub fn gse_trend(spec: &MixtureSpec, n_list: &[usize], samples: usize, seed: u64) -> Result<Vec<TrendRow>> {
    if samples == 0 {
        return Err(domain("need at least one sample"));
    }
    n_list
        .iter()
        .map(|&n| {
            let start = Instant::now();
            let values = (0..samples as u64)
                .map(|s| Ok(exhaustive_max(&CouplingSample::new(spec, n, seed, s)?)?.max_over_n))
                .collect::<Result<Vec<f64>>>()?;
            let k = samples as f64;
            let mean = values.iter().sum::<f64>() / k;
            let var = if samples > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
            Ok(TrendRow { n, samples, mean_max_over_n: mean, stderr: (var / k).sqrt(), seconds: start.elapsed().as_secs_f64() })
        })
        .collect()
}

/// CSV with columns `N,samples,mean_max_over_N,stderr,seconds`.
pub fn trend_csv_rows(rows: &[TrendRow]) -> Vec<String> {
    let mut out = vec!["N,samples,mean_max_over_N,stderr,seconds".to_string()];
    out.extend(
        rows.iter()
            .map(|r| format!("{},{},{:.16e},{:.16e},{:.3}", r.n, r.samples, r.mean_max_over_n, r.stderr, r.seconds)),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_only_sample() {
        let s = CouplingSample::field_only(1, 2.0).unwrap();
        let g = exhaustive_max(&s).unwrap();
        assert_eq!(g.sigma, vec![1]);
        assert_eq!(g.max_over_n, 2.0);
        let s = CouplingSample::field_only(5, 1.0).unwrap();
        assert_eq!(s.energy(&[1; 5]).unwrap(), 5.0);
    }

    #[test]
    fn multilinear_form_matches_tensor_sum() {
        let spec = MixtureSpec::new([(2, 0.5), (3, 0.3), (4, 0.2)], 0.4).unwrap();
        let s = CouplingSample::new(&spec, 7, 11, 2).unwrap();
        for neg in [0u32, 1, 0b1010101, 0b1111111, 0b0110010] {
            let sigma = mask_to_sigma(neg, 7);
            let a = s.energy(&sigma).unwrap();
            let b = s.energy_direct(&sigma).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn two_spins_by_hand() {
        // With N = 2 the diagonal tuples are constants and the off-diagonal pair enters as g01 + g10.
        let spec = MixtureSpec::sk(0.0);
        let s = CouplingSample::new(&spec, 2, 5, 0).unwrap();
        let c = 0.5f64.sqrt() / 2f64.sqrt();
        let diag = c * (s.coupling(2, &[0, 0]) + s.coupling(2, &[1, 1]));
        let off = c * (s.coupling(2, &[0, 1]) + s.coupling(2, &[1, 0]));
        let best = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
            .iter()
            .map(|&(a, b)| diag + off * (a * b) as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((exhaustive_max(&s).unwrap().max_over_n - best / 2.0).abs() < 1e-15);
    }

    #[test]
    fn gray_walk_matches_naive_enumeration() {
        let spec = MixtureSpec::sk(0.3);
        for n in [3, 8, 12] {
            for sample in 0..3 {
                let s = CouplingSample::new(&spec, n, 99, sample).unwrap();
                let a = exhaustive_max(&s).unwrap();
                let b = exhaustive_max_naive(&s).unwrap();
                assert_eq!(a.sigma, b.sigma);
                assert!((a.max_over_n - b.max_over_n).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn regeneration_is_bit_exact() {
        let spec = MixtureSpec::new([(2, 0.5), (3, 0.5)], 0.0).unwrap();
        let a = CouplingSample::new(&spec, 6, 1, 4).unwrap();
        let b = CouplingSample::new(&spec, 6, 1, 4).unwrap();
        assert_eq!(a.terms(), b.terms());
        let c = CouplingSample::new(&spec, 6, 1, 5).unwrap();
        assert_ne!(a.terms(), c.terms());
    }

    #[test]
    fn caps_are_enforced() {
        assert!(matches!(CouplingSample::new(&MixtureSpec::sk(0.0), 25, 0, 0), Err(Error::Resource(_))));
        let mixed = MixtureSpec::new([(2, 0.5), (3, 0.5)], 0.0).unwrap();
        assert!(matches!(CouplingSample::new(&mixed, 19, 0, 0), Err(Error::Resource(_))));
        let s = CouplingSample::new(&MixtureSpec::sk(0.0), 3, 0, 0).unwrap();
        assert!(s.energy(&[1, 0, 1]).is_err());
        assert!(s.energy(&[1, 1]).is_err());
    }

    #[test]
    fn generator_is_standard_normal() {
        let key = sample_key(1, 2, 3);
        let xs: Vec<f64> = (0..18_000).map(|i| tuple_gaussian(&key, 3, &[i % 24, i / 24 % 24, i / 576])).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(m.abs() < 0.03 && (v - 1.0).abs() < 0.04, "{m} {v}");
    }
}
