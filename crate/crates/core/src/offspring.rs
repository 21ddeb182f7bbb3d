//! Offspring laws and the branching parameters derived from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::error::{invalid, Error, Result};

/// Normalisation tolerance for probability vectors.
pub const SUM_TOLERANCE: f64 = 1e-12;
/// Tail mass below which a geometric law is truncated for grid work.
pub const GEOMETRIC_TAIL_MASS: f64 = 1e-14;
/// Pruned coefficients below this are dropped before renormalising.
pub const PRUNE_CUTOFF: f64 = 1e-15;

const EXTINCTION_TOLERANCE: f64 = 1e-13;
const EXTINCTION_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `probs[k] = P{N = k}`, last entry nonzero.
    FinitePmf(Vec<f64>),
    /// `P{N = k} = (1 − a)·a^{k−1}` for `k ≥ 1`.
    Geometric { a: f64 },
}

/// Law of the offspring count `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    kind: Kind,
}

impl OffspringDistribution {
    /// Finite law from `p_0, p_1, ..., p_K`.
    pub fn finite_pmf(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return invalid("empty probability vector");
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return invalid(format!("probability {p} is not a nonnegative number"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return invalid(format!("probabilities sum to {total}, not 1"));
        }
        let mut probs = probs;
        while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        Ok(Self {
            kind: Kind::FinitePmf(probs),
        })
    }

    /// Geometric law on `{1, 2, ...}` with `P{N = k} = (1 − a)·a^{k−1}`.
    pub fn geometric(a: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0) {
            return invalid(format!("geometric parameter {a} not in (0, 1)"));
        }
        Ok(Self {
            kind: Kind::Geometric { a },
        })
    }

    pub fn is_geometric(&self) -> bool {
        matches!(self.kind, Kind::Geometric { .. })
    }

    /// `P{N = k}`.
    pub fn prob(&self, k: usize) -> f64 {
        match &self.kind {
            Kind::FinitePmf(p) => p.get(k).copied().unwrap_or(0.0),
            Kind::Geometric { a } if k >= 1 => (1.0 - a) * a.powi(k as i32 - 1),
            Kind::Geometric { .. } => 0.0,
        }
    }

    /// Largest support point, `None` for unbounded laws.
    pub fn max_support(&self) -> Option<usize> {
        match &self.kind {
            Kind::FinitePmf(p) => Some(p.len() - 1),
            Kind::Geometric { .. } => None,
        }
    }

    /// `ν = min{k : p_k > 0}`.
    pub fn min_support(&self) -> usize {
        match &self.kind {
            Kind::FinitePmf(p) => p.iter().position(|&x| x > 0.0).unwrap_or(0),
            Kind::Geometric { .. } => 1,
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.kind {
            Kind::FinitePmf(p) => p.iter().enumerate().map(|(k, x)| k as f64 * x).sum(),
            Kind::Geometric { a } => 1.0 / (1.0 - a),
        }
    }

    pub fn variance(&self) -> f64 {
        match &self.kind {
            Kind::FinitePmf(p) => {
                let m = self.mean();
                p.iter()
                    .enumerate()
                    .map(|(k, x)| (k as f64 - m).powi(2) * x)
                    .sum()
            }
            Kind::Geometric { a } => a / (1.0 - a).powi(2),
        }
    }

    pub fn is_point_mass(&self) -> bool {
        match &self.kind {
            Kind::FinitePmf(p) => p.iter().filter(|&&x| x > 0.0).count() == 1,
            Kind::Geometric { .. } => false,
        }
    }

    /// Probabilities `p_0..p_K`, truncating a geometric law where its tail
    /// mass drops below `tail_mass` and renormalising.
    pub fn effective_pmf(&self, tail_mass: f64) -> Vec<f64> {
        match &self.kind {
            Kind::FinitePmf(p) => p.clone(),
            Kind::Geometric { a } => {
                // P{N > K} = a^K.
                let k_max = (tail_mass.ln() / a.ln()).ceil().max(1.0) as usize;
                let mut probs: Vec<f64> = (0..=k_max).map(|k| self.prob(k)).collect();
                let total: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= total);
                probs
            }
        }
    }

    /// One draw of `N`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.kind {
            Kind::FinitePmf(p) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, &x) in p.iter().enumerate() {
                    acc += x;
                    if u < acc {
                        return k as u64;
                    }
                }
                (p.len() - 1) as u64
            }
            Kind::Geometric { a } => {
                // 1 − U is in (0, 1], so the log is finite.
                let u: f64 = 1.0 - rng.random::<f64>();
                1 + (u.ln() / a.ln()).floor() as u64
            }
        }
    }

    /// Total offspring of `count` independent individuals.
    ///
    /// Exact in law: multinomial cell counts for finite laws, and
    /// `count + NegBin(count, 1 − a)` (drawn as a gamma-Poisson mixture) for
    /// geometric laws. Cost does not grow with `count`.
    pub fn sample_sum<R: Rng + ?Sized>(&self, count: u64, rng: &mut R) -> Result<u64> {
        if count <= 32 {
            return Ok((0..count).map(|_| self.sample(rng)).sum());
        }
        match &self.kind {
            Kind::FinitePmf(p) => {
                let mut remaining = count;
                let mut mass_left = 1.0f64;
                let mut total: u64 = 0;
                let last = p.len() - 1;
                for (k, &pk) in p.iter().enumerate() {
                    if remaining == 0 {
                        break;
                    }
                    let cell = if k == last || mass_left <= 0.0 {
                        remaining
                    } else {
                        let q = (pk / mass_left).clamp(0.0, 1.0);
                        Binomial::new(remaining, q)
                            .map_err(|e| Error::InvalidArgument(e.to_string()))?
                            .sample(rng)
                    };
                    total = (k as u64)
                        .checked_mul(cell)
                        .and_then(|x| total.checked_add(x))
                        .ok_or_else(|| {
                            Error::ResourceLimit("generation size overflows u64".into())
                        })?;
                    remaining -= cell;
                    mass_left -= pk;
                }
                Ok(total)
            }
            Kind::Geometric { a } => {
                let lambda = Gamma::new(count as f64, a / (1.0 - a))
                    .map_err(|e| Error::InvalidArgument(e.to_string()))?
                    .sample(rng);
                let failures = if lambda > 0.0 {
                    Poisson::new(lambda)
                        .map_err(|e| Error::ResourceLimit(format!("poisson rate {lambda}: {e}")))?
                        .sample(rng)
                } else {
                    0.0
                };
                if failures >= u64::MAX as f64 / 2.0 {
                    return Err(Error::ResourceLimit("generation size overflows u64".into()));
                }
                Ok(count + failures as u64)
            }
        }
    }
}

impl fmt::Display for OffspringDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Geometric { a } => write!(f, "geometric: {a}"),
            Kind::FinitePmf(p) => {
                write!(f, "pmf: ")?;
                let mut first = true;
                for (k, &x) in p.iter().enumerate().filter(|(_, &x)| x > 0.0) {
                    if !first {
                        write!(f, ", ")?;
                    }
                    first = false;
                    write!(f, "{k}:{x}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for OffspringDistribution {
    type Err = Error;

    /// Parses `pmf: 0:0.25, 2:0.75` or `geometric: 0.5`; whitespace is ignored.
    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let (kind, body) = compact
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("missing ':' in distribution '{s}'")))?;
        match kind.to_ascii_lowercase().as_str() {
            "geometric" => {
                let a: f64 = body.parse().map_err(|_| {
                    Error::InvalidArgument(format!("bad geometric parameter '{body}'"))
                })?;
                Self::geometric(a)
            }
            "pmf" => {
                let mut probs: Vec<f64> = Vec::new();
                let mut seen = std::collections::BTreeSet::new();
                for entry in body.split(',').filter(|e| !e.is_empty()) {
                    let (k, p) = entry.split_once(':').ok_or_else(|| {
                        Error::InvalidArgument(format!("bad pmf entry '{entry}'"))
                    })?;
                    let k: usize = k
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad support point '{k}'")))?;
                    let p: f64 = p
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad probability '{p}'")))?;
                    if !seen.insert(k) {
                        return invalid(format!("support point {k} given twice"));
                    }
                    if probs.len() <= k {
                        probs.resize(k + 1, 0.0);
                    }
                    probs[k] = p;
                }
                Self::finite_pmf(probs)
            }
            other => invalid(format!("unknown distribution kind '{other}'")),
        }
    }
}

/// Schröder (`p₁ > 0`) or Böttcher (`p₁ = 0`, `ν ≥ 2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Schroeder,
    Boettcher,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Schroeder => "Schroeder",
            Regime::Boettcher => "Boettcher",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters governing the lower tail of the martingale limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchingParams {
    pub mu: f64,
    pub p1: f64,
    pub nu: u64,
    /// `P{N = ν}`.
    pub p_nu: f64,
    pub regime: Regime,
    /// `−log p₁ / log μ` (Schröder only).
    pub tau: Option<f64>,
    /// `log ν / log μ` (Böttcher only).
    pub beta: Option<f64>,
    /// `β / (1 − β)` (Böttcher only).
    pub beta_ratio: Option<f64>,
}

impl BranchingParams {
    /// Exponent targeted by tail fits: `τ` for the power law, `−β/(1−β)` for
    /// the stretched exponential.
    pub fn target_slope(&self) -> f64 {
        match self.regime {
            Regime::Schroeder => self.tau.unwrap(),
            Regime::Boettcher => -self.beta_ratio.unwrap(),
        }
    }

    pub(crate) fn require(&self, regime: Regime) -> Result<()> {
        if self.regime != regime {
            return Err(Error::InvalidRegime {
                expected: regime.name(),
            });
        }
        Ok(())
    }
}

/// Branching parameters of a pruned, supercritical, nondegenerate law.
pub fn derive_params(dist: &OffspringDistribution) -> Result<BranchingParams> {
    let p0 = dist.prob(0);
    if p0 > 0.0 {
        return Err(Error::DegenerateDistribution(format!(
            "p0 = {p0} > 0; prune finite subtrees first"
        )));
    }
    let mu = dist.mean();
    if mu <= 1.0 {
        return Err(Error::DegenerateDistribution(format!(
            "mean {mu} is not supercritical"
        )));
    }
    let nu = dist.min_support() as u64;
    let p1 = dist.prob(1);
    if p1 == 0.0 && dist.is_point_mass() {
        return Err(Error::BoettcherDegenerate { nu });
    }
    if dist.is_point_mass() {
        return Err(Error::DegenerateDistribution("point mass".into()));
    }
    let p_nu = dist.prob(nu as usize);
    if p1 > 0.0 {
        Ok(BranchingParams {
            mu,
            p1,
            nu,
            p_nu,
            regime: Regime::Schroeder,
            tau: Some(-p1.ln() / mu.ln()),
            beta: None,
            beta_ratio: None,
        })
    } else {
        let beta = (nu as f64).ln() / mu.ln();
        Ok(BranchingParams {
            mu,
            p1,
            nu,
            p_nu,
            regime: Regime::Boettcher,
            tau: None,
            beta: Some(beta),
            beta_ratio: Some(beta / (1.0 - beta)),
        })
    }
}

/// Probability generating function `f(s) = Σ p_k s^k` on `[0, 1]`.
pub fn pgf_eval(dist: &OffspringDistribution, s: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s) {
        return invalid(format!("pgf argument {s} not in [0, 1]"));
    }
    Ok(match &dist.kind {
        Kind::FinitePmf(p) => p.iter().rev().fold(0.0, |acc, &x| acc * s + x),
        Kind::Geometric { a } => (1.0 - a) * s / (1.0 - a * s),
    })
}

/// Smallest root of `f(s) = s`, by fixed-point iteration from `s = 0`.
pub fn extinction_probability(dist: &OffspringDistribution) -> Result<f64> {
    let mu = dist.mean();
    if mu <= 1.0 {
        return Err(Error::DegenerateDistribution(format!(
            "mean {mu} ≤ 1: extinction is certain"
        )));
    }
    let mut s = 0.0;
    for _ in 0..EXTINCTION_MAX_ITER {
        let next = pgf_eval(dist, s)?;
        if (next - s).abs() < EXTINCTION_TOLERANCE {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::NoConvergence {
        iterations: EXTINCTION_MAX_ITER,
    })
}

/// Offspring law of the reduced tree of lines with infinite descent,
/// `f̂(s) = [f(q + (1 − q)s) − q] / (1 − q)` with `q` the extinction probability.
pub fn prune(dist: &OffspringDistribution) -> Result<OffspringDistribution> {
    let q = extinction_probability(dist)?;
    if q == 0.0 {
        return Ok(dist.clone());
    }
    let p = match &dist.kind {
        Kind::FinitePmf(p) => p,
        // Geometric laws have p₀ = 0, so q = 0 above.
        Kind::Geometric { .. } => unreachable!("geometric law has no finite subtrees"),
    };
    let k_max = p.len() - 1;
    // Coefficient of s^j in f(q + (1−q)s) is (1−q)^j Σ_{k≥j} p_k C(k,j) q^{k−j}.
    let mut coeffs = vec![0.0; k_max + 1];
    for (j, c) in coeffs.iter_mut().enumerate().skip(1) {
        let mut sum = 0.0;
        let mut binom = 1.0; // C(k, j) starting at k = j
        let mut qpow = 1.0;
        for k in j..=k_max {
            if k > j {
                binom *= k as f64 / (k - j) as f64;
                qpow *= q;
            }
            sum += p[k] * binom * qpow;
        }
        *c = (1.0 - q).powi(j as i32 - 1) * sum;
    }
    for c in coeffs.iter_mut() {
        if *c < PRUNE_CUTOFF {
            *c = 0.0;
        }
    }
    let total: f64 = coeffs.iter().sum();
    coeffs.iter_mut().for_each(|c| *c /= total);
    OffspringDistribution::finite_pmf(coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pmf(s: &str) -> OffspringDistribution {
        s.parse().unwrap()
    }

    #[test]
    fn schroeder_params() {
        let p = derive_params(&pmf("pmf: 1:0.5, 2:0.5")).unwrap();
        assert_eq!(p.regime, Regime::Schroeder);
        assert!((p.mu - 1.5).abs() < 1e-15);
        assert!((p.tau.unwrap() - 1.709_511_291_351_454_8).abs() < 1e-12);
    }

    #[test]
    fn geometric_tau_is_one() {
        let p = derive_params(&OffspringDistribution::geometric(0.5).unwrap()).unwrap();
        assert_eq!(p.mu, 2.0);
        assert_eq!(p.p1, 0.5);
        assert!((p.tau.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boettcher_params() {
        let p = derive_params(&pmf("pmf: 2:0.5, 3:0.5")).unwrap();
        assert_eq!(p.regime, Regime::Boettcher);
        assert_eq!(p.nu, 2);
        assert!((p.mu - 2.5).abs() < 1e-15);
        assert!((p.beta.unwrap() - 0.756_470_797_366_030_03).abs() < 1e-12);
        assert!((p.beta_ratio.unwrap() - 3.106_283_719_505_389_9).abs() < 1e-10);
        assert!((p.target_slope() + 3.106_283_719_505_389_9).abs() < 1e-10);
    }

    #[test]
    fn rejections() {
        assert!(matches!(
            derive_params(&pmf("pmf: 2:1.0")),
            Err(Error::BoettcherDegenerate { nu: 2 })
        ));
        assert!(matches!(
            derive_params(&pmf("pmf: 0:0.25, 2:0.75")),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(matches!(
            derive_params(&pmf("pmf: 1:1.0")),
            Err(Error::DegenerateDistribution(_))
        ));
        assert!(matches!(
            derive_params(&pmf("pmf: 0:0.5, 2:0.5")),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn pgf_values() {
        let d = pmf("pmf: 0:0.25, 2:0.75");
        assert_eq!(pgf_eval(&d, 1.0).unwrap(), 1.0);
        assert!((pgf_eval(&d, 1.0 / 3.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(pgf_eval(&pmf("pmf: 2:1"), 0.5).unwrap(), 0.25);
        let g = OffspringDistribution::geometric(0.3).unwrap();
        assert!((pgf_eval(&g, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(pgf_eval(&d, 1.5).is_err());
    }

    #[test]
    fn extinction_values() {
        assert_eq!(
            extinction_probability(&pmf("pmf: 1:0.5, 2:0.5")).unwrap(),
            0.0
        );
        let q = extinction_probability(&pmf("pmf: 0:0.25, 2:0.75")).unwrap();
        assert!((q - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            extinction_probability(&pmf("pmf: 0:0.5, 2:0.5")),
            Err(Error::DegenerateDistribution(_))
        ));
    }

    #[test]
    fn prune_binary_with_death() {
        let d = pmf("pmf: 0:0.25, 2:0.75");
        let pr = prune(&d).unwrap();
        assert_eq!(pr.prob(0), 0.0);
        assert!((pr.prob(1) - 0.5).abs() < 1e-12);
        assert!((pr.prob(2) - 0.5).abs() < 1e-12);
        assert!((pr.mean() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn prune_is_identity_without_deaths() {
        let d = pmf("pmf: 1:0.2, 2:0.3, 5:0.5");
        assert_eq!(prune(&d).unwrap(), d);
        let g = OffspringDistribution::geometric(0.7).unwrap();
        assert_eq!(prune(&g).unwrap(), g);
    }

    #[test]
    fn parse_and_display() {
        let d = pmf("  pmf : 0 : 0.25 ,2:0.75 ");
        assert_eq!(d.prob(2), 0.75);
        assert_eq!(d.to_string().parse::<OffspringDistribution>().unwrap(), d);
        let g = pmf("geometric: 0.5");
        assert!(g.is_geometric());
        assert!("pmf: 1:0.5, 1:0.5"
            .parse::<OffspringDistribution>()
            .is_err());
        assert!("pmf: 1:0.5, 2:0.4"
            .parse::<OffspringDistribution>()
            .is_err());
        assert!("poisson: 2".parse::<OffspringDistribution>().is_err());
        assert!("geometric: 1.5".parse::<OffspringDistribution>().is_err());
    }

    #[test]
    fn geometric_truncation() {
        let g = OffspringDistribution::geometric(0.5).unwrap();
        let p = g.effective_pmf(GEOMETRIC_TAIL_MASS);
        assert_eq!(p.len(), 48);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_sum_matches_moments() {
        use crate::stats::RngStream;
        let mut rng = RngStream::new(5, 5).rng();
        for d in [
            pmf("pmf: 1:0.2, 2:0.5, 4:0.3"),
            OffspringDistribution::geometric(0.6).unwrap(),
        ] {
            let count = 1000u64;
            let reps = 4000;
            let sums: Vec<f64> = (0..reps)
                .map(|_| d.sample_sum(count, &mut rng).unwrap() as f64)
                .collect();
            let mean = sums.iter().sum::<f64>() / reps as f64;
            let var = sums.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
            let se = (d.variance() * count as f64 / reps as f64).sqrt();
            assert!(
                (mean - d.mean() * count as f64).abs() < 4.0 * se,
                "{d}: mean {mean}"
            );
            let rel = var / (d.variance() * count as f64);
            assert!((rel - 1.0).abs() < 0.1, "{d}: variance ratio {rel}");
        }
    }

    fn arb_pmf_with_death() -> impl Strategy<Value = OffspringDistribution> {
        proptest::collection::vec(0.0f64..1.0, 3..7).prop_filter_map("supercritical", |raw| {
            let total: f64 = raw.iter().sum();
            if total <= 0.0 {
                return None;
            }
            let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let d = OffspringDistribution::finite_pmf(p).ok()?;
            (d.mean() > 1.05 && !d.is_point_mass()).then_some(d)
        })
    }

    proptest! {
        #[test]
        fn prune_invariants(d in arb_pmf_with_death()) {
            let pr = prune(&d).unwrap();
            prop_assert_eq!(pr.prob(0), 0.0);
            prop_assert!((pr.mean() - d.mean()).abs() < 1e-10);
            let again = prune(&pr).unwrap();
            for k in 0..=pr.max_support().unwrap() {
                prop_assert!((again.prob(k) - pr.prob(k)).abs() < 1e-10);
            }
            prop_assert!(derive_params(&pr).is_ok());
        }

        #[test]
        fn geometric_always_tau_one(a in 0.01f64..0.99) {
            let p = derive_params(&OffspringDistribution::geometric(a).unwrap()).unwrap();
            prop_assert!((p.tau.unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
