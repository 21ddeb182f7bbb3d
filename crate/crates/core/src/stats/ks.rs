use crate::error::{invalid, Result};

fn check_sorted(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return invalid(format!("{name} is empty"));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return invalid(format!("{name} contains NaN"));
    }
    if !xs.windows(2).all(|w| w[0] <= w[1]) {
        return invalid(format!("{name} is not sorted"));
    }
    Ok(())
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_x |F_a(x) − F_b(x)|` of two
/// sorted samples.
pub fn ks_statistic(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    check_sorted("sample_a", sample_a)?;
    check_sorted("sample_b", sample_b)?;
    let (na, nb) = (sample_a.len() as f64, sample_b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < sample_a.len() && j < sample_b.len() {
        let x = sample_a[i].min(sample_b[j]);
        while i < sample_a.len() && sample_a[i] <= x {
            i += 1;
        }
        while j < sample_b.len() && sample_b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(d)
}

/// One-sample distance `sup_x |F_n(x) − F(x)|` between a sorted sample and a
/// continuous CDF.
pub fn ks_distance_to_cdf(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    check_sorted("sample", sample)?;
    let n = sample.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < sample.len() {
        let x = sample[i];
        let mut k = i;
        while k < sample.len() && sample[k] == x {
            k += 1;
        }
        let f = cdf(x);
        d = d
            .max((f - i as f64 / n).abs())
            .max((k as f64 / n - f).abs());
        i = k;
    }
    Ok(d)
}

/// Asymptotic two-sample critical value `c(α)·√((n_a + n_b)/(n_a·n_b))`;
/// `c = 1.63` gives the 99% level.
pub fn ks_two_sample_threshold(c_alpha: f64, n_a: usize, n_b: usize) -> f64 {
    let (a, b) = (n_a as f64, n_b as f64);
    c_alpha * ((a + b) / (a * b)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples() {
        let a = [0.1, 0.5, 0.5, 2.0];
        assert_eq!(ks_statistic(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_supports() {
        assert_eq!(
            ks_statistic(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap(),
            1.0
        );
    }

    #[test]
    fn shifted_grid() {
        // CDF steps: after 1 → 1/4 vs 0, after 1.5 → 1/4 vs 1/4, ... max gap 1/4.
        let d = ks_statistic(&[1.0, 2.0, 3.0, 4.0], &[1.5, 2.5, 3.5, 4.5]).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ks_statistic(&[], &[1.0]).is_err());
        assert!(ks_statistic(&[2.0, 1.0], &[1.0]).is_err());
        assert!(ks_distance_to_cdf(&[], |x| x).is_err());
    }

    #[test]
    fn one_sample_uniform() {
        let s: Vec<f64> = (0..10).map(|i| (i as f64 + 0.5) / 10.0).collect();
        let d = ks_distance_to_cdf(&s, |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((d - 0.05).abs() < 1e-12);
    }

    #[test]
    fn threshold_value() {
        let t = ks_two_sample_threshold(1.63, 20_000, 20_000);
        assert!((t - 1.63 * (2.0f64 / 20_000.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone_invariant(
            mut a in proptest::collection::vec(-5.0f64..5.0, 1..40),
            mut b in proptest::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let d = ks_statistic(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, ks_statistic(&b, &a).unwrap());
            let ta: Vec<f64> = a.iter().map(|x| x.exp()).collect();
            let tb: Vec<f64> = b.iter().map(|x| x.exp()).collect();
            prop_assert_eq!(d, ks_statistic(&ta, &tb).unwrap());
        }
    }
}
