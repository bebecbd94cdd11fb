//! Offspring and displacement laws, their moments, and exact laws derived
//! from them by convolution.
//!
//! Probabilities are held both as `f64` (for sampling) and, when the model
//! was given with rational probabilities, as exact rationals. Oracle
//! computations require the exact form.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::lineage::{type_count, types, LineageVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("offspring distribution is empty")]
    Empty,
    #[error("negative probability {value} at index {index}")]
    Negative { index: usize, value: String },
    #[error("probabilities sum to {sum}, not 1")]
    NotNormalized { sum: String },
    #[error("degenerate offspring distribution (mu_0 + mu_1 = 1)")]
    Degenerate,
    #[error("offspring distribution is not critical: mean {mean}")]
    NotCritical { mean: String },
    #[error("no displacement law for arity {0}, which has positive probability")]
    MissingArity(usize),
    #[error("displacement law for arity {arity}: {reason}")]
    BadAtom { arity: usize, reason: String },
    #[error("exact (rational) probabilities required")]
    NotExact,
    #[error("lineage vector sums to {total}, expected {expected}")]
    LineageTotal { total: u64, expected: u64 },
}

/// Whether a constructor insists on `sum k mu_k = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criticality {
    Enforce,
    Unchecked,
}

const FLOAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    probs: Vec<f64>,
    exact: Option<Vec<BigRational>>,
    span: usize,
    critical: bool,
}

fn rat(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn span_of(support: impl Iterator<Item = usize>) -> usize {
    support.filter(|&k| k >= 1).fold(0, |g, k| g.gcd(&k))
}

impl OffspringDistribution {
    /// Exact distribution; trailing zeros are trimmed.
    pub fn from_rationals(
        mut probs: Vec<BigRational>,
        check: Criticality,
    ) -> Result<Self, DistributionError> {
        while probs.len() > 1 && probs.last().is_some_and(Zero::is_zero) {
            probs.pop();
        }
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| p.is_negative()) {
            return Err(DistributionError::Negative {
                index: i,
                value: p.to_string(),
            });
        }
        let sum: BigRational = probs.iter().sum();
        if !sum.is_one() {
            return Err(DistributionError::NotNormalized {
                sum: sum.to_string(),
            });
        }
        let head: BigRational = probs.iter().take(2).sum();
        if head.is_one() {
            return Err(DistributionError::Degenerate);
        }
        let mean: BigRational = probs
            .iter()
            .enumerate()
            .map(|(k, p)| p * BigRational::from_integer(BigInt::from(k)))
            .sum();
        let critical = mean.is_one();
        if check == Criticality::Enforce && !critical {
            return Err(DistributionError::NotCritical {
                mean: mean.to_string(),
            });
        }
        let floats = probs.iter().map(|p| p.to_f64().unwrap_or(0.0)).collect();
        let span = span_of(probs.iter().enumerate().filter(|(_, p)| !p.is_zero()).map(|(k, _)| k));
        Ok(Self {
            probs: floats,
            exact: Some(probs),
            span,
            critical,
        })
    }

    /// Floating-point distribution; criticality and normalisation are
    /// checked to within `1e-12`.
    pub fn from_floats(mut probs: Vec<f64>, check: Criticality) -> Result<Self, DistributionError> {
        while probs.len() > 1 && probs.last() == Some(&0.0) {
            probs.pop();
        }
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        if let Some((i, p)) = probs.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
            return Err(DistributionError::Negative {
                index: i,
                value: p.to_string(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > FLOAT_TOL {
            return Err(DistributionError::NotNormalized {
                sum: sum.to_string(),
            });
        }
        if (probs.iter().take(2).sum::<f64>() - 1.0).abs() <= FLOAT_TOL {
            return Err(DistributionError::Degenerate);
        }
        let mean: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let critical = (mean - 1.0).abs() <= FLOAT_TOL;
        if check == Criticality::Enforce && !critical {
            return Err(DistributionError::NotCritical {
                mean: mean.to_string(),
            });
        }
        let span = span_of(probs.iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(k, _)| k));
        Ok(Self {
            probs,
            exact: None,
            span,
            critical,
        })
    }

    /// `(delta_0 + delta_2) / 2`.
    pub fn binary() -> Self {
        Self::from_rationals(vec![rat(1, 2), rat(0, 1), rat(1, 2)], Criticality::Enforce)
            .expect("valid")
    }

    /// `(1/4, 1/2, 1/4)` on `{0, 1, 2}`.
    pub fn three_point() -> Self {
        Self::from_rationals(vec![rat(1, 4), rat(1, 2), rat(1, 4)], Criticality::Enforce)
            .expect("valid")
    }

    /// Support bound `K`.
    pub fn max_arity(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn exact(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    pub fn require_exact(&self) -> Result<&[BigRational], DistributionError> {
        self.exact().ok_or(DistributionError::NotExact)
    }

    /// `gcd{k >= 1 : mu_k > 0}`.
    pub fn span(&self) -> usize {
        self.span
    }

    pub fn is_critical(&self) -> bool {
        self.critical
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.probs
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - m).powi(2) * p)
            .sum()
    }

    pub fn exact_variance(&self) -> Option<BigRational> {
        let e = self.exact()?;
        let mut m = BigRational::zero();
        let mut m2 = BigRational::zero();
        for (k, p) in e.iter().enumerate() {
            let kk = BigRational::from_integer(BigInt::from(k));
            m += p * &kk;
            m2 += p * &kk * &kk;
        }
        Some(m2 - &m * &m)
    }

    /// Arities `k >= 1` with positive probability.
    pub fn support_arities(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.probs.len()).filter(|&k| self.probs[k] > 0.0)
    }

    /// Whether a tree with `n_edges` edges has positive probability.
    pub fn size_attainable(&self, n_edges: usize) -> bool {
        if n_edges == 0 {
            return true;
        }
        let d = self.span;
        if d == 0 || !n_edges.is_multiple_of(d) {
            return false;
        }
        let parts: Vec<usize> = self.support_arities().map(|k| k / d).collect();
        let target = n_edges / d;
        let largest = *parts.iter().max().unwrap();
        let smallest = *parts.iter().min().unwrap();
        // above the Frobenius bound every multiple of d is representable
        if target >= smallest * largest {
            return true;
        }
        let mut reach = vec![false; target + 1];
        reach[0] = true;
        for t in 1..=target {
            reach[t] = parts.iter().any(|&p| p <= t && reach[t - p]);
        }
        reach[target]
    }
}

/// One support point of a displacement law.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub vector: Vec<f64>,
    pub prob: f64,
    pub exact_prob: Option<BigRational>,
}

impl Atom {
    pub fn exact(vector: Vec<f64>, p: BigRational) -> Self {
        Self {
            vector,
            prob: p.to_f64().unwrap_or(0.0),
            exact_prob: Some(p),
        }
    }

    pub fn float(vector: Vec<f64>, prob: f64) -> Self {
        Self {
            vector,
            prob,
            exact_prob: None,
        }
    }
}

/// Finite-support laws `nu_k` on `R^k` of the children's displacement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementFamily {
    laws: BTreeMap<usize, Vec<Atom>>,
}

impl DisplacementFamily {
    pub fn new(laws: BTreeMap<usize, Vec<Atom>>) -> Result<Self, DistributionError> {
        for (&k, atoms) in &laws {
            let bad = |reason: String| DistributionError::BadAtom { arity: k, reason };
            if k == 0 {
                return Err(bad("arity 0 has no displacements".into()));
            }
            if atoms.is_empty() {
                return Err(bad("no atoms".into()));
            }
            for a in atoms {
                if a.vector.len() != k {
                    return Err(bad(format!(
                        "vector of length {} (expected {k})",
                        a.vector.len()
                    )));
                }
                if !(a.prob >= 0.0) || a.vector.iter().any(|x| !x.is_finite()) {
                    return Err(bad("negative probability or non-finite value".into()));
                }
            }
            if atoms.iter().all(|a| a.exact_prob.is_some()) {
                let s: BigRational = atoms.iter().filter_map(|a| a.exact_prob.as_ref()).sum();
                if !s.is_one() {
                    return Err(bad(format!("probabilities sum to {s}")));
                }
            } else {
                let s: f64 = atoms.iter().map(|a| a.prob).sum();
                if (s - 1.0).abs() > FLOAT_TOL {
                    return Err(bad(format!("probabilities sum to {s}")));
                }
            }
        }
        Ok(Self { laws })
    }

    /// `nu_k = delta_{vector}` for each listed arity.
    pub fn point_masses(entries: &[(usize, Vec<f64>)]) -> Self {
        let laws = entries
            .iter()
            .map(|(k, v)| (*k, vec![Atom::exact(v.clone(), BigRational::one())]))
            .collect();
        Self::new(laws).expect("valid point masses")
    }

    /// Uniform law over the listed vectors for arity `k`.
    pub fn uniform(k: usize, vectors: &[Vec<f64>]) -> Self {
        let p = rat(1, vectors.len() as i64);
        let atoms = vectors
            .iter()
            .map(|v| Atom::exact(v.clone(), p.clone()))
            .collect();
        Self::new(BTreeMap::from([(k, atoms)])).expect("valid uniform law")
    }

    pub fn law(&self, k: usize) -> Option<&[Atom]> {
        self.laws.get(&k).map(Vec::as_slice)
    }

    pub fn arities(&self) -> impl Iterator<Item = usize> + '_ {
        self.laws.keys().copied()
    }

    pub fn covers(&self, mu: &OffspringDistribution) -> Result<(), DistributionError> {
        match mu.support_arities().find(|k| !self.laws.contains_key(k)) {
            Some(k) => Err(DistributionError::MissingArity(k)),
            None => Ok(()),
        }
    }
}

/// Exact counterparts of the moment fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMoments {
    pub mean_kj: Vec<BigRational>,
    pub variance_kj: Vec<BigRational>,
    pub second_kj: Vec<BigRational>,
    pub global_mean: BigRational,
    pub global_second: BigRational,
    pub sigma2_mu: BigRational,
}

/// Per-type displacement moments and the global mean and variance of the
/// branching walk.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentSummary {
    pub max_arity: usize,
    pub mean_kj: Vec<f64>,
    pub variance_kj: Vec<f64>,
    pub second_kj: Vec<f64>,
    pub global_mean: f64,
    pub global_second: f64,
    pub sigma2_mu: f64,
    pub span: usize,
    /// Global mean is zero (exactly, or within `1e-12` for float models).
    pub centered: bool,
    #[serde(skip)]
    pub exact: Option<ExactMoments>,
}

impl MomentSummary {
    /// Centered with a global variance in `(0, inf)`.
    pub fn admits_label_limit(&self) -> bool {
        self.centered && self.global_second > 0.0
    }

    pub fn beta2(&self) -> f64 {
        self.global_second
    }

    /// `sum mu_k E[Y_kj^2] = sum mu_k (var_kj + m_kj^2)`; exact when the
    /// moments are exact.
    pub fn second_moment_identity_holds(&self, mu: &OffspringDistribution) -> bool {
        if let (Some(e), Some(p)) = (&self.exact, mu.exact()) {
            let rhs: BigRational = types(self.max_arity)
                .enumerate()
                .map(|(s, (k, _))| {
                    &p[k] * (&e.variance_kj[s] + &e.mean_kj[s] * &e.mean_kj[s])
                })
                .sum();
            return rhs == e.global_second;
        }
        let rhs: f64 = types(self.max_arity)
            .enumerate()
            .map(|(s, (k, _))| mu.prob(k) * (self.variance_kj[s] + self.mean_kj[s].powi(2)))
            .sum();
        (rhs - self.global_second).abs() <= 1e-12 * (1.0 + rhs.abs())
    }
}

/// Moment summary of the pair `(mu, nu)`.
pub fn moments(
    mu: &OffspringDistribution,
    nu: &DisplacementFamily,
) -> Result<MomentSummary, DistributionError> {
    nu.covers(mu)?;
    let kmax = mu.max_arity();
    let slots = type_count(kmax);
    let mut mean_kj = vec![0.0; slots];
    let mut second_kj = vec![0.0; slots];
    let exact_inputs = mu.exact().is_some()
        && mu
            .support_arities()
            .all(|k| nu.law(k).unwrap().iter().all(|a| a.exact_prob.is_some()));
    let mut emean = vec![BigRational::zero(); slots];
    let mut esecond = vec![BigRational::zero(); slots];
    for (s, (k, j)) in types(kmax).enumerate() {
        let Some(atoms) = nu.law(k) else { continue };
        for a in atoms {
            let y = a.vector[j - 1];
            mean_kj[s] += a.prob * y;
            second_kj[s] += a.prob * y * y;
            if exact_inputs {
                let p = a.exact_prob.as_ref().unwrap();
                let ye = BigRational::from_float(y).expect("finite");
                emean[s] += p * &ye;
                esecond[s] += p * &ye * &ye;
            }
        }
    }
    let variance_kj: Vec<f64> = mean_kj
        .iter()
        .zip(&second_kj)
        .map(|(m, q)| (q - m * m).max(0.0))
        .collect();
    let mut global_mean = 0.0;
    let mut global_second = 0.0;
    for (s, (k, _)) in types(kmax).enumerate() {
        global_mean += mu.prob(k) * mean_kj[s];
        global_second += mu.prob(k) * second_kj[s];
    }
    let exact = if exact_inputs {
        let p = mu.exact().unwrap();
        let mut gm = BigRational::zero();
        let mut gs = BigRational::zero();
        for (s, (k, _)) in types(kmax).enumerate() {
            gm += &p[k] * &emean[s];
            gs += &p[k] * &esecond[s];
        }
        let evar = emean
            .iter()
            .zip(&esecond)
            .map(|(m, q)| q - m * m)
            .collect();
        Some(ExactMoments {
            mean_kj: emean,
            variance_kj: evar,
            second_kj: esecond,
            global_mean: gm,
            global_second: gs,
            sigma2_mu: mu.exact_variance().unwrap(),
        })
    } else {
        None
    };
    let centered = match &exact {
        Some(e) => e.global_mean.is_zero(),
        None => global_mean.abs() <= FLOAT_TOL,
    };
    Ok(MomentSummary {
        max_arity: kmax,
        mean_kj,
        variance_kj,
        second_kj,
        global_mean,
        global_second,
        sigma2_mu: mu.variance(),
        span: mu.span(),
        centered,
        exact,
    })
}

fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, i| acc * i)
}

fn rational_pow(base: &BigRational, e: u64) -> BigRational {
    num_traits::pow(base.clone(), e as usize)
}

/// `Q_h(a)`: multinomial probability with `h` trials and cell probabilities
/// `p_kj = mu_k`, exact. Zero unless `a` sums to `h`.
pub fn multinomial_pmf_exact(
    h: u64,
    mu: &OffspringDistribution,
    a: &LineageVector,
) -> Result<BigRational, DistributionError> {
    let p = mu.require_exact()?;
    if a.total() != h {
        return Ok(BigRational::zero());
    }
    let mut denom = BigUint::one();
    let mut weight = BigRational::one();
    for ((k, _), &c) in types(a.max_arity()).zip(a.counts()) {
        if c == 0 {
            continue;
        }
        let pk = p.get(k).cloned().unwrap_or_else(BigRational::zero);
        if pk.is_zero() {
            return Ok(BigRational::zero());
        }
        denom *= factorial(c);
        weight *= rational_pow(&pk, c);
    }
    let coef = BigRational::new(factorial(h).into(), denom.into());
    Ok(coef * weight)
}

/// Floating-point `Q_h(a)` through log-factorials.
pub fn multinomial_pmf(h: u64, mu: &OffspringDistribution, a: &LineageVector) -> f64 {
    if a.total() != h {
        return 0.0;
    }
    let mut log = libm::lgamma(h as f64 + 1.0);
    for ((k, _), &c) in types(a.max_arity()).zip(a.counts()) {
        if c == 0 {
            continue;
        }
        let pk = mu.prob(k);
        if pk == 0.0 {
            return 0.0;
        }
        log += c as f64 * pk.ln() - libm::lgamma(c as f64 + 1.0);
    }
    log.exp()
}

/// Exact law of `W_n`, the walk with increments `xi - 1`, `xi ~ mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkLaw {
    pub steps: usize,
    /// `pmf[i] = P(W_n = i - n)`.
    pub pmf: Vec<BigRational>,
}

impl WalkLaw {
    pub fn prob(&self, l: i64) -> BigRational {
        let i = l + self.steps as i64;
        if i < 0 {
            return BigRational::zero();
        }
        self.pmf
            .get(i as usize)
            .cloned()
            .unwrap_or_else(BigRational::zero)
    }

    fn step(&self, p: &[BigRational]) -> WalkLaw {
        let kmax = p.len() - 1;
        let mut next = vec![BigRational::zero(); self.pmf.len() + kmax];
        for (i, w) in self.pmf.iter().enumerate() {
            if w.is_zero() {
                continue;
            }
            for (k, pk) in p.iter().enumerate() {
                if !pk.is_zero() {
                    next[i + k] += w * pk;
                }
            }
        }
        WalkLaw {
            steps: self.steps + 1,
            pmf: next,
        }
    }
}

/// Walk laws for `0..=max_steps`, computed once by repeated exact
/// convolution; forest and tree size laws are read off them.
#[derive(Debug, Clone)]
pub struct ExactLaws {
    mu: Vec<BigRational>,
    walks: Vec<WalkLaw>,
}

impl ExactLaws {
    pub fn new(mu: &OffspringDistribution, max_steps: usize) -> Result<Self, DistributionError> {
        let p = mu.require_exact()?.to_vec();
        let mut walks = vec![WalkLaw {
            steps: 0,
            pmf: vec![BigRational::one()],
        }];
        for _ in 0..max_steps {
            let next = walks.last().unwrap().step(&p);
            walks.push(next);
        }
        Ok(Self { mu: p, walks })
    }

    pub fn max_steps(&self) -> usize {
        self.walks.len() - 1
    }

    pub fn mu(&self) -> &[BigRational] {
        &self.mu
    }

    pub fn walk(&self, n: usize) -> &WalkLaw {
        &self.walks[n]
    }

    /// `P(|f_k| = n)` for a forest of `k` independent trees: `(k/n) P(W_n = -k)`
    /// for `k >= 1`, with the empty forest having size 0 surely.
    pub fn forest_size_pmf(&self, k: usize, n: usize) -> BigRational {
        if k == 0 {
            return if n == 0 {
                BigRational::one()
            } else {
                BigRational::zero()
            };
        }
        if n < k {
            return BigRational::zero();
        }
        assert!(n <= self.max_steps(), "walk table too short for n = {n}");
        rat(k as i64, n as i64) * self.walks[n].prob(-(k as i64))
    }

    /// `P(|T| = n)` in nodes.
    pub fn tree_size_pmf(&self, n: usize) -> BigRational {
        self.forest_size_pmf(1, n)
    }
}

pub fn walk_pmf(mu: &OffspringDistribution, n: usize) -> Result<WalkLaw, DistributionError> {
    Ok(ExactLaws::new(mu, n)?.walks.pop().unwrap())
}

pub fn forest_size_pmf(
    mu: &OffspringDistribution,
    k: usize,
    n: usize,
) -> Result<BigRational, DistributionError> {
    Ok(ExactLaws::new(mu, n)?.forest_size_pmf(k, n))
}

pub fn tree_size_pmf(mu: &OffspringDistribution, n: usize) -> Result<BigRational, DistributionError> {
    forest_size_pmf(mu, 1, n)
}

/// Floating-point law of `W_n`; entry `i` is `P(W_n = i - n)`.
pub fn walk_pmf_f64(mu: &OffspringDistribution, n: usize) -> Vec<f64> {
    let p = mu.probs();
    let mut cur = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; cur.len() + p.len() - 1];
        for (i, &w) in cur.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (k, &pk) in p.iter().enumerate() {
                next[i + k] += w * pk;
            }
        }
        cur = next;
    }
    cur
}

/// Sup distance on the lattice `-n + d N` between the rescaled law of `W_n`
/// and the Gaussian density of variance `sigma^2 n`.
pub fn clt_gap(mu: &OffspringDistribution, n: usize) -> f64 {
    assert!(n >= 1);
    let d = mu.span() as f64;
    let sigma = mu.variance().sqrt();
    let pmf = walk_pmf_f64(mu, n);
    let nf = n as f64;
    let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma);
    pmf.iter()
        .enumerate()
        .step_by(mu.span())
        .map(|(i, &p)| {
            let l = i as f64 - nf;
            let gauss = norm * (-l * l / (2.0 * sigma * sigma * nf)).exp();
            (nf.sqrt() / d * p - gauss).abs()
        })
        .fold(0.0, f64::max)
}

/// Whether both `N1(a)` and `N2(a)` fall within `h^(2/3)` of `sigma^2 h / 2`.
pub fn jh_membership(
    a: &LineageVector,
    h: u64,
    mu: &OffspringDistribution,
) -> Result<bool, DistributionError> {
    if a.total() != h {
        return Err(DistributionError::LineageTotal {
            total: a.total(),
            expected: h,
        });
    }
    let hf = h as f64;
    let center = mu.variance() * hf / 2.0;
    let radius = hf.powf(2.0 / 3.0);
    let (n1, n2) = a.n1_n2();
    let inside = |x: u64| (x as f64 - center).abs() <= radius + 1e-9;
    Ok(inside(n1) && inside(n2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        rat(n, d)
    }

    #[test]
    fn constructors_validate() {
        assert!(matches!(
            OffspringDistribution::from_rationals(vec![q(1, 2), q(1, 2)], Criticality::Enforce),
            Err(DistributionError::Degenerate)
        ));
        assert!(matches!(
            OffspringDistribution::from_rationals(
                vec![q(1, 2), q(1, 4), q(1, 4)],
                Criticality::Enforce
            ),
            Err(DistributionError::NotCritical { .. })
        ));
        assert!(OffspringDistribution::from_rationals(
            vec![q(1, 2), q(1, 4), q(1, 4)],
            Criticality::Unchecked
        )
        .is_ok());
        assert!(matches!(
            OffspringDistribution::from_rationals(vec![q(1, 2), q(1, 4)], Criticality::Enforce),
            Err(DistributionError::NotNormalized { .. })
        ));
        assert!(OffspringDistribution::from_floats(vec![0.5, 0.0, 0.5], Criticality::Enforce)
            .is_ok());
        assert!(matches!(
            OffspringDistribution::from_floats(vec![0.5, 0.0, 0.5 + 1e-9], Criticality::Enforce),
            Err(DistributionError::NotNormalized { .. })
        ));
        let b = OffspringDistribution::binary();
        assert_eq!((b.max_arity(), b.span()), (2, 2));
        assert_eq!(b.variance(), 1.0);
        let t = OffspringDistribution::three_point();
        assert_eq!((t.span(), t.variance()), (1, 0.5));
    }

    #[test]
    fn attainable_sizes() {
        let b = OffspringDistribution::binary();
        assert!(b.size_attainable(2));
        assert!(!b.size_attainable(3));
        assert!(b.size_attainable(0));
        let gap = OffspringDistribution::from_rationals(
            vec![q(2, 3), q(0, 1), q(0, 1), q(1, 3)],
            Criticality::Enforce,
        )
        .unwrap();
        // support {0, 3}: only multiples of 3
        assert!(gap.size_attainable(3) && !gap.size_attainable(4));
        let mixed = OffspringDistribution::from_rationals(
            vec![q(3, 5), q(0, 1), q(0, 1), q(1, 5), q(0, 1), q(1, 5)],
            Criticality::Unchecked,
        )
        .unwrap();
        // support {0, 3, 5}: 1, 2, 4, 7 are not sums of 3s and 5s
        let ok: Vec<usize> = (0..12).filter(|&n| mixed.size_attainable(n)).collect();
        assert_eq!(ok, vec![0, 3, 5, 6, 8, 9, 10, 11]);
    }

    #[test]
    fn deterministic_binary_moments() {
        let mu = OffspringDistribution::binary();
        let nu = DisplacementFamily::point_masses(&[(2, vec![1.0, -1.0])]);
        let m = moments(&mu, &nu).unwrap();
        assert!(m.centered);
        assert_eq!(m.global_second, 1.0);
        assert_eq!(m.exact.as_ref().unwrap().global_second, BigRational::one());
        assert!(m.admits_label_limit());
        assert!(m.second_moment_identity_holds(&mu));
        assert_eq!(m.mean_kj, vec![0.0, 1.0, -1.0]);
    }

    #[test]
    fn zero_displacements_are_degenerate() {
        let mu = OffspringDistribution::binary();
        let nu = DisplacementFamily::point_masses(&[(2, vec![0.0, 0.0])]);
        let m = moments(&mu, &nu).unwrap();
        assert!(m.centered);
        assert_eq!(m.global_second, 0.0);
        assert!(!m.admits_label_limit());
    }

    #[test]
    fn symmetric_binary_moments() {
        let mu = OffspringDistribution::binary();
        let nu = DisplacementFamily::uniform(2, &[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let m = moments(&mu, &nu).unwrap();
        assert_eq!(m.global_mean, 0.0);
        assert_eq!(m.global_second, 1.0);
        assert_eq!(&m.mean_kj[1..], &[0.0, 0.0]);
        assert!(m.second_moment_identity_holds(&mu));
    }

    #[test]
    fn missing_arity() {
        let mu = OffspringDistribution::three_point();
        let nu = DisplacementFamily::point_masses(&[(2, vec![1.0, -1.0])]);
        assert_eq!(moments(&mu, &nu), Err(DistributionError::MissingArity(1)));
    }

    #[test]
    fn multinomial_values() {
        let mu = OffspringDistribution::binary();
        let a = LineageVector::from_entries(2, &[((2, 1), 2)]);
        assert_eq!(multinomial_pmf_exact(2, &mu, &a).unwrap(), q(1, 4));
        assert_eq!(
            multinomial_pmf_exact(0, &mu, &LineageVector::zeros(2)).unwrap(),
            BigRational::one()
        );
        let b = LineageVector::from_entries(2, &[((2, 1), 2), ((2, 2), 1)]);
        assert_eq!(multinomial_pmf_exact(3, &mu, &b).unwrap(), q(3, 8));
        assert!((multinomial_pmf(3, &mu, &b) - 0.375).abs() < 1e-14);
        assert_eq!(multinomial_pmf_exact(2, &mu, &b).unwrap(), BigRational::zero());
    }

    #[test]
    fn multinomial_sums_to_one() {
        for mu in [OffspringDistribution::binary(), OffspringDistribution::three_point()] {
            let slots = type_count(mu.max_arity());
            for h in 0..=6u64 {
                let mut total = BigRational::zero();
                let mut counts = vec![0u64; slots];
                compositions(h, 0, &mut counts, &mut |c| {
                    let a = LineageVector::from_counts(mu.max_arity(), c.to_vec());
                    total += multinomial_pmf_exact(h, &mu, &a).unwrap();
                });
                assert_eq!(total, BigRational::one(), "h = {h}");
            }
        }
    }

    fn compositions(rest: u64, i: usize, c: &mut Vec<u64>, f: &mut impl FnMut(&[u64])) {
        if i == c.len() - 1 {
            c[i] = rest;
            f(c);
            return;
        }
        for x in 0..=rest {
            c[i] = x;
            compositions(rest - x, i + 1, c, f);
        }
    }

    #[test]
    fn tree_size_law() {
        let mu = OffspringDistribution::binary();
        assert_eq!(tree_size_pmf(&mu, 5).unwrap(), q(1, 16));
        assert_eq!(tree_size_pmf(&mu, 4).unwrap(), BigRational::zero());
        assert_eq!(tree_size_pmf(&mu, 1).unwrap(), q(1, 2));
        let t = OffspringDistribution::three_point();
        assert_eq!(tree_size_pmf(&t, 1).unwrap(), q(1, 4));
        let laws = ExactLaws::new(&mu, 6).unwrap();
        assert_eq!(laws.forest_size_pmf(0, 0), BigRational::one());
        assert_eq!(laws.forest_size_pmf(0, 3), BigRational::zero());
        assert_eq!(laws.forest_size_pmf(3, 2), BigRational::zero());
    }

    #[test]
    fn walk_law_support_and_mass() {
        for mu in [OffspringDistribution::binary(), OffspringDistribution::three_point()] {
            let laws = ExactLaws::new(&mu, 9).unwrap();
            for n in 0..=9 {
                let w = laws.walk(n);
                let s: BigRational = w.pmf.iter().sum();
                assert!(s.is_one());
                for (i, p) in w.pmf.iter().enumerate() {
                    if !p.is_zero() {
                        assert_eq!(i % mu.span(), 0, "off-lattice mass at {}", i as i64 - n as i64);
                    }
                }
            }
        }
    }

    #[test]
    fn clt_gap_shrinks() {
        let mu = OffspringDistribution::binary();
        let g: Vec<f64> = [16, 64, 256].iter().map(|&n| clt_gap(&mu, n)).collect();
        assert!(g[0] > g[1] && g[1] > g[2], "{g:?}");
        assert!(clt_gap(&mu, 1).is_finite());
        assert!(clt_gap(&mu, 1024) < 0.05);
    }

    #[test]
    fn jh_window() {
        let mu = OffspringDistribution::binary();
        assert!(jh_membership(&LineageVector::zeros(2), 0, &mu).unwrap());
        let a = LineageVector::from_entries(2, &[((2, 1), 32), ((2, 2), 32)]);
        assert!(jh_membership(&a, 64, &mu).unwrap());
        let b = LineageVector::from_entries(2, &[((2, 1), 64)]);
        assert!(!jh_membership(&b, 64, &mu).unwrap());
        assert!(jh_membership(&b, 63, &mu).is_err());
    }
}
