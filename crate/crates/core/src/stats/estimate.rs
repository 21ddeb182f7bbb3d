use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Error, Result};

/// Two-sided 95% standard normal quantile, Φ⁻¹(0.975).
pub const Z_95: f64 = 1.959963985;

pub const DEFAULT_CONFIDENCE: f64 = 0.95;

/// Success count with its Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliEstimate {
    pub successes: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
}

impl BernoulliEstimate {
    /// Pools two estimates taken at the same confidence level.
    pub fn merge(&self, other: &BernoulliEstimate) -> Result<BernoulliEstimate> {
        if self.confidence != other.confidence {
            return invalid(format!(
                "cannot merge estimates at confidence {} and {}",
                self.confidence, other.confidence
            ));
        }
        wilson_interval(
            self.successes + other.successes,
            self.trials + other.trials,
            self.confidence,
        )
    }

    pub fn ci_width(&self) -> f64 {
        self.ci_high - self.ci_low
    }

    /// Whether `p` lies inside the closed interval.
    pub fn covers(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }
}

fn z_value(confidence: f64) -> f64 {
    if confidence == DEFAULT_CONFIDENCE {
        return Z_95;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + confidence / 2.0)
}

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, confidence: f64) -> Result<BernoulliEstimate> {
    if trials == 0 {
        return invalid("wilson_interval needs at least one trial");
    }
    if successes > trials {
        return Err(Error::InvalidArgument(format!(
            "{successes} successes exceed {trials} trials"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return invalid(format!("confidence {confidence} not in (0, 1)"));
    }
    let z = z_value(confidence);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2n = z * z / n;
    let denom = 1.0 + z2n;
    let center = (p + z2n / 2.0) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2n / (4.0 * n)).sqrt();
    let (mut lo, mut hi) = ((center - half).max(0.0), (center + half).min(1.0));
    if successes == 0 {
        lo = 0.0;
    }
    if successes == trials {
        hi = 1.0;
    }
    Ok(BernoulliEstimate {
        successes,
        trials,
        p_hat: p,
        ci_low: lo.min(p),
        ci_high: hi.max(p),
        confidence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::stats::RngStream;

    #[test]
    fn half_is_symmetric() {
        let e = wilson_interval(50, 100, 0.95).unwrap();
        assert_eq!(e.p_hat, 0.5);
        assert!(((e.ci_low + e.ci_high) / 2.0 - 0.5).abs() < 1e-12);
        // 40-digit evaluation of the same formula.
        assert!((e.ci_low - 0.403_831_530_344_262_588).abs() < 1e-12);
    }

    #[test]
    fn degenerate_counts_have_width() {
        let zero = wilson_interval(0, 100, 0.95).unwrap();
        assert_eq!(zero.ci_low, 0.0);
        assert!((zero.ci_high - 0.036_993_498_223_705_949).abs() < 1e-12);
        let all = wilson_interval(100, 100, 0.95).unwrap();
        assert_eq!(all.ci_high, 1.0);
        assert!((all.ci_low - 0.963_006_501_776_294_051).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(wilson_interval(1, 0, 0.95).is_err());
        assert!(wilson_interval(5, 4, 0.95).is_err());
        assert!(wilson_interval(1, 4, 1.0).is_err());
        assert!(wilson_interval(1, 4, 0.0).is_err());
    }

    #[test]
    fn other_confidence_levels_use_normal_quantile() {
        let e90 = wilson_interval(30, 100, 0.90).unwrap();
        let e95 = wilson_interval(30, 100, 0.95).unwrap();
        let e99 = wilson_interval(30, 100, 0.99).unwrap();
        assert!(e90.ci_width() < e95.ci_width() && e95.ci_width() < e99.ci_width());
    }

    #[test]
    fn coverage_at_least_93_percent() {
        let mut rng = RngStream::new(11, 0).rng();
        for &p in &[0.01, 0.5] {
            let mut covered = 0;
            for _ in 0..10_000 {
                let n = 200;
                let s = (0..n).filter(|_| rng.random::<f64>() < p).count() as u64;
                if wilson_interval(s, n, 0.95).unwrap().covers(p) {
                    covered += 1;
                }
            }
            assert!(covered >= 9_300, "p = {p}: coverage {covered}/10000");
        }
    }

    #[test]
    fn merge_rejects_mixed_confidence() {
        let a = wilson_interval(1, 10, 0.95).unwrap();
        let b = wilson_interval(1, 10, 0.90).unwrap();
        assert!(a.merge(&b).is_err());
    }

    proptest! {
        #[test]
        fn interval_brackets_estimate(trials in 1u64..5000, frac in 0.0f64..=1.0) {
            let s = ((trials as f64) * frac).floor() as u64;
            let e = wilson_interval(s, trials, 0.95).unwrap();
            prop_assert!(0.0 <= e.ci_low && e.ci_low <= e.p_hat);
            prop_assert!(e.p_hat <= e.ci_high && e.ci_high <= 1.0);
            prop_assert!(e.ci_high > e.ci_low);
        }

        #[test]
        fn merge_is_associative_and_commutative(
            a in (0u64..100, 100u64..200),
            b in (0u64..100, 100u64..200),
            c in (0u64..100, 100u64..200),
        ) {
            let ea = wilson_interval(a.0, a.1, 0.95).unwrap();
            let eb = wilson_interval(b.0, b.1, 0.95).unwrap();
            let ec = wilson_interval(c.0, c.1, 0.95).unwrap();
            let left = ea.merge(&eb).unwrap().merge(&ec).unwrap();
            let right = ea.merge(&eb.merge(&ec).unwrap()).unwrap();
            prop_assert_eq!(left, right);
            prop_assert_eq!(ea.merge(&eb).unwrap(), eb.merge(&ea).unwrap());
        }
    }
}
