//! Step order parameters for the zero- and finite-temperature functionals.

use crate::error::{config, domain, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Right-continuous step function `gamma` on `[0, 1)` taking value `ms[i]` on `[qs[i], qs[i+1])`,
/// with `qs[n+1] = 1` implied.
///
/// Invariants: `qs[0] = 0 < qs[1] < ... < qs[n] < 1` and `0 <= ms[0] < ms[1] < ... < ms[n]`.
/// Text form: `"q0:m0,q1:m1,..."`; JSON form: `[[q0, m0], [q1, m1], ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOrderParam {
    qs: Vec<f64>,
    ms: Vec<f64>,
}

/// Step function `alpha` with values `zetas[i]` on `[qs[i], qs[i+1])`, last value exactly one,
/// and inverse temperature `beta`.
///
/// Invariants: `qs[0] = 0 < ... < qs[n] <= 1`, `0 <= zetas[0] <= ... <= zetas[n] = 1`, `beta > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTempStepParam {
    qs: Vec<f64>,
    zetas: Vec<f64>,
    beta: f64,
}

/// Breakpoints closer than this count as equal.
pub const MIN_GAP: f64 = 1e-12;

fn check_breakpoints(qs: &[f64], allow_one: bool) -> Result<()> {
    if qs.is_empty() {
        return Err(config("order parameter needs at least one plateau"));
    }
    if qs[0] != 0.0 {
        return Err(config(format!("first breakpoint must be 0, got {}", qs[0])));
    }
    for w in qs.windows(2) {
        if !(w[1] - w[0] > MIN_GAP) {
            return Err(config(format!("breakpoints must increase strictly: {} then {}", w[0], w[1])));
        }
    }
    let last = *qs.last().unwrap();
    if !last.is_finite() || last > 1.0 || (!allow_one && last >= 1.0) {
        return Err(config(format!("last breakpoint {last} out of range")));
    }
    Ok(())
}

impl StepOrderParam {
    pub fn new(qs: Vec<f64>, ms: Vec<f64>) -> Result<Self> {
        if qs.len() != ms.len() {
            return Err(config(format!("{} breakpoints but {} values", qs.len(), ms.len())));
        }
        check_breakpoints(&qs, false)?;
        if !(ms[0] >= 0.0) {
            return Err(config(format!("first value must be >= 0, got {}", ms[0])));
        }
        for w in ms.windows(2) {
            if !(w[1] > w[0]) {
                return Err(config(format!("values must increase strictly: {} then {}", w[0], w[1])));
            }
        }
        if ms.iter().any(|m| !m.is_finite()) {
            return Err(config("values must be finite"));
        }
        Ok(Self { qs, ms })
    }

    /// The constant function `gamma = m` on `[0, 1)`.
    pub fn constant(m: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![m])
    }

    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    pub fn ms(&self) -> &[f64] {
        &self.ms
    }

    /// Index of the last plateau.
    pub fn n(&self) -> usize {
        self.qs.len() - 1
    }

    /// Number of plateaus (`n + 1`).
    pub fn plateaus(&self) -> usize {
        self.qs.len()
    }

    /// `gamma(t)` for `t` in `[0, 1)`.
    pub fn value_at(&self, t: f64) -> f64 {
        let i = self.qs.partition_point(|&q| q <= t).saturating_sub(1);
        self.ms[i]
    }

    /// Appends a plateau of height `m_next` on `[q, 1)`.
    pub fn perturb(&self, q: f64, m_next: f64) -> Result<Self> {
        let qn = *self.qs.last().unwrap();
        let mn = *self.ms.last().unwrap();
        if !(q > qn && q < 1.0) {
            return Err(domain(format!("perturbation point {q} must lie in ({qn}, 1)")));
        }
        if !(m_next > mn) || !m_next.is_finite() {
            return Err(domain(format!("new plateau {m_next} must exceed {mn}")));
        }
        let mut qs = self.qs.clone();
        let mut ms = self.ms.clone();
        qs.push(q);
        ms.push(m_next);
        Self::new(qs, ms)
    }

    /// `(q_i, m_i)` pairs.
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.qs.iter().copied().zip(self.ms.iter().copied()).collect()
    }

    /// `integral_0^1 |gamma - other|`.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        l1_distance_on(&self.pairs(), &other.pairs(), 1.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.pairs()).expect("pairs serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pairs: Vec<(f64, f64)> =
            serde_json::from_str(text).map_err(|e| config(format!("order parameter JSON: {e}")))?;
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
    }

    /// Accepts either the text form or the JSON form.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('[') {
            return Self::from_json(text);
        }
        let (qs, ms) = parse_pairs(text)?;
        Self::new(qs, ms)
    }
}

impl fmt::Display for StepOrderParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_pairs(f, &self.qs, &self.ms)
    }
}

impl std::str::FromStr for StepOrderParam {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for StepOrderParam {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.pairs().serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepOrderParam {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let pairs = Vec::<(f64, f64)>::deserialize(d)?;
        Self::new(pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
            .map_err(serde::de::Error::custom)
    }
}

fn write_pairs(f: &mut fmt::Formatter<'_>, qs: &[f64], vs: &[f64]) -> fmt::Result {
    for (i, (q, v)) in qs.iter().zip(vs).enumerate() {
        if i > 0 {
            f.write_str(",")?;
        }
        write!(f, "{q}:{v}")?;
    }
    Ok(())
}

fn parse_pairs(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut qs = Vec::new();
    let mut vs = Vec::new();
    for item in text.trim().split(',') {
        let (q, v) = item
            .split_once(':')
            .ok_or_else(|| config(format!("expected q:value, got {item:?}")))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| config(format!("bad number {s:?}: {e}")));
        qs.push(parse(q)?);
        vs.push(parse(v)?);
    }
    Ok((qs, vs))
}

/// `integral_0^cut |a - b|` for two right-continuous step functions given as `(left edge, value)` pairs.
pub fn l1_distance_on(a: &[(f64, f64)], b: &[(f64, f64)], cut: f64) -> f64 {
    let mut edges: Vec<f64> = a.iter().chain(b).map(|p| p.0).filter(|&q| q < cut).collect();
    edges.push(cut);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let value = |f: &[(f64, f64)], t: f64| {
        let i = f.partition_point(|p| p.0 <= t).saturating_sub(1);
        f[i].1
    };
    edges
        .windows(2)
        .map(|w| (w[1] - w[0]) * (value(a, w[0]) - value(b, w[0])).abs())
        .sum()
}

impl FiniteTempStepParam {
    pub fn new(qs: Vec<f64>, zetas: Vec<f64>, beta: f64) -> Result<Self> {
        if qs.len() != zetas.len() {
            return Err(config(format!("{} breakpoints but {} values", qs.len(), zetas.len())));
        }
        check_breakpoints(&qs, true)?;
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(config(format!("beta must be finite and > 0, got {beta}")));
        }
        if !(zetas[0] >= 0.0) {
            return Err(config(format!("first value must be >= 0, got {}", zetas[0])));
        }
        for w in zetas.windows(2) {
            if !(w[1] >= w[0]) {
                return Err(config(format!("values must be non-decreasing: {} then {}", w[0], w[1])));
            }
        }
        if *zetas.last().unwrap() != 1.0 {
            return Err(config(format!("last value must be exactly 1, got {}", zetas.last().unwrap())));
        }
        Ok(Self { qs, zetas, beta })
    }

    /// Replica-symmetric `alpha = 1` on `[0, 1]`.
    pub fn replica_symmetric(beta: f64) -> Result<Self> {
        Self::new(vec![0.0], vec![1.0], beta)
    }

    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    pub fn zetas(&self) -> &[f64] {
        &self.zetas
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn n(&self) -> usize {
        self.qs.len() - 1
    }

    /// `beta * alpha` as `(left edge, value)` pairs, for comparison with a zero-temperature `gamma`.
    pub fn rescaled_pairs(&self) -> Vec<(f64, f64)> {
        self.qs.iter().zip(&self.zetas).map(|(&q, &z)| (q, self.beta * z)).collect()
    }

    /// Parses `"q0:z0,q1:z1,..."` or a JSON array of pairs.
    pub fn parse(text: &str, beta: f64) -> Result<Self> {
        let (qs, zs) = if text.trim_start().starts_with('[') {
            let pairs: Vec<(f64, f64)> =
                serde_json::from_str(text).map_err(|e| config(format!("order parameter JSON: {e}")))?;
            (pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect())
        } else {
            parse_pairs(text)?
        };
        Self::new(qs, zs, beta)
    }
}

impl fmt::Display for FiniteTempStepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_pairs(f, &self.qs, &self.zetas)
    }
}

impl Serialize for FiniteTempStepParam {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let pairs: Vec<(f64, f64)> = self.qs.iter().copied().zip(self.zetas.iter().copied()).collect();
        let mut st = s.serialize_struct("FiniteTempStepParam", 2)?;
        st.serialize_field("alpha", &pairs)?;
        st.serialize_field("beta", &self.beta)?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn nearly_equal_breakpoints_are_rejected() {
        assert!(StepOrderParam::new(vec![0.0, 0.5, 0.5 + 1e-13], vec![0.1, 0.2, 0.3]).is_err());
        assert!(StepOrderParam::new(vec![0.0, 0.5, 0.5 + 1e-11], vec![0.1, 0.2, 0.3]).is_ok());
    }

    #[test]
    fn validation() {
        assert!(StepOrderParam::new(vec![0.0, 0.5], vec![0.5, 2.0]).is_ok());
        assert!(StepOrderParam::new(vec![0.1], vec![0.5]).is_err());
        assert!(StepOrderParam::new(vec![0.0, 0.5], vec![2.0, 2.0]).is_err());
        assert!(StepOrderParam::new(vec![0.0, 1.0], vec![0.5, 2.0]).is_err());
        assert!(StepOrderParam::new(vec![0.0], vec![-1.0]).is_err());
        assert!(FiniteTempStepParam::new(vec![0.0, 1.0], vec![0.3, 1.0], 2.0).is_ok());
        assert!(FiniteTempStepParam::new(vec![0.0], vec![0.9], 2.0).is_err());
        assert!(FiniteTempStepParam::new(vec![0.0], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn perturb_appends_a_plateau() {
        let g = StepOrderParam::new(vec![0.0, 0.5], vec![0.5, 2.0]).unwrap();
        let p = g.perturb(0.9, 5.0).unwrap();
        assert_eq!(p.qs(), &[0.0, 0.5, 0.9]);
        assert_eq!(p.ms(), &[0.5, 2.0, 5.0]);
        assert!(g.perturb(0.4, 5.0).is_err());
        assert!(g.perturb(0.9, 2.0).is_err());
        assert!((g.l1_distance(&p) - 0.1 * 3.0).abs() < 1e-15);
    }

    #[test]
    fn text_and_json_forms() {
        let g: StepOrderParam = "0:0.5,0.7:2".parse().unwrap();
        assert_eq!(g.ms(), &[0.5, 2.0]);
        let j = StepOrderParam::parse("[[0,0.5],[0.7,2]]").unwrap();
        assert_eq!(g, j);
        assert!(StepOrderParam::parse("0:0.5,0.7").is_err());
        let back: StepOrderParam = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn text_roundtrip_is_bit_exact(raw_q in proptest::collection::vec(1e-9..1.0f64, 0..5),
                                       raw_m in proptest::collection::vec(1e-9..5.0f64, 1..6)) {
            let mut qs = raw_q.clone();
            qs.sort_by(f64::total_cmp);
            qs.dedup();
            qs.retain(|&q| q < 1.0);
            qs.insert(0, 0.0);
            let mut ms = Vec::new();
            let mut acc = 0.0;
            for i in 0..qs.len() {
                acc += raw_m[i % raw_m.len()];
                ms.push(acc);
            }
            let g = StepOrderParam::new(qs, ms).unwrap();
            let back: StepOrderParam = g.to_string().parse().unwrap();
            for (a, b) in g.qs().iter().chain(g.ms()).zip(back.qs().iter().chain(back.ms())) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn l1_is_a_metric(a in 0.01..0.99f64, b in 0.01..0.99f64, m1 in 0.1..3.0f64, m2 in 0.1..3.0f64) {
            let g1 = StepOrderParam::new(vec![0.0, a], vec![m1, m1 + 1.0]).unwrap();
            let g2 = StepOrderParam::new(vec![0.0, b], vec![m2, m2 + 0.5]).unwrap();
            let g3 = StepOrderParam::constant(1.0).unwrap();
            prop_assert!(g1.l1_distance(&g1) == 0.0);
            prop_assert!((g1.l1_distance(&g2) - g2.l1_distance(&g1)).abs() < 1e-15);
            prop_assert!(g1.l1_distance(&g3) <= g1.l1_distance(&g2) + g2.l1_distance(&g3) + 1e-14);
        }
    }
}
