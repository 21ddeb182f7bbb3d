use crate::error::{invalid, Error, Result};

/// Least-squares line `y = intercept + slope · x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fits `log P = intercept + slope · log ε`; the slope estimates a power-law exponent.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<RegressionFit> {
    let (xs, ys) = power_law_coords(points)?;
    least_squares(&xs, &ys, None)
}

/// Weighted variant of [`fit_power_law`] (weights usually `1 / CI-width²`).
pub fn fit_power_law_weighted(points: &[(f64, f64)], weights: &[f64]) -> Result<RegressionFit> {
    let (xs, ys) = power_law_coords(points)?;
    least_squares(&xs, &ys, Some(weights))
}

/// Fits `log(−log P) = intercept + slope · log ε`, the stretched-exponential
/// analogue of [`fit_power_law`].
pub fn fit_stretched_exponent(points: &[(f64, f64)]) -> Result<RegressionFit> {
    let (xs, ys) = stretched_coords(points)?;
    least_squares(&xs, &ys, None)
}

pub fn fit_stretched_exponent_weighted(
    points: &[(f64, f64)],
    weights: &[f64],
) -> Result<RegressionFit> {
    let (xs, ys) = stretched_coords(points)?;
    least_squares(&xs, &ys, Some(weights))
}

fn check_epsilons(points: &[(f64, f64)]) -> Result<()> {
    if points.len() < 3 {
        return invalid(format!("need at least 3 points, got {}", points.len()));
    }
    if let Some(&(e, _)) = points.iter().find(|(e, _)| !(*e > 0.0 && e.is_finite())) {
        return invalid(format!("epsilon {e} is not positive"));
    }
    Ok(())
}

fn power_law_coords(points: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_epsilons(points)?;
    if let Some(&(_, p)) = points.iter().find(|(_, p)| !(*p > 0.0 && *p < 1.0)) {
        return invalid(format!("probability {p} outside (0, 1): log undefined"));
    }
    Ok(points.iter().map(|&(e, p)| (e.ln(), p.ln())).unzip())
}

fn stretched_coords(points: &[(f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_epsilons(points)?;
    let cutoff = (-1.0f64).exp();
    if let Some(&(_, p)) = points.iter().find(|(_, p)| !(*p > 0.0 && *p < cutoff)) {
        return invalid(format!(
            "probability {p} outside (0, 1/e): log(-log p) is unstable there"
        ));
    }
    Ok(points
        .iter()
        .map(|&(e, p)| (e.ln(), (-p.ln()).ln()))
        .unzip())
}

fn least_squares(xs: &[f64], ys: &[f64], weights: Option<&[f64]>) -> Result<RegressionFit> {
    let n = xs.len();
    let w: Vec<f64> = match weights {
        Some(w) if w.len() != n => {
            return invalid(format!("{} weights for {} points", w.len(), n));
        }
        Some(w) if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) => {
            return invalid("weights must be positive and finite");
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; n],
    };
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let my = w.iter().zip(ys).map(|(w, y)| w * y).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += w[i] * dx * dx;
        sxy += w[i] * dx * dy;
        syy += w[i] * dy * dy;
    }
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs())).max(1.0);
    if sxx <= 1e-24 * scale * scale * sw {
        return Err(Error::DegenerateInput(
            "all epsilon values are equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = (0..n)
        .map(|i| {
            let r = ys[i] - intercept - slope * xs[i];
            w[i] * r * r
        })
        .sum();
    // Residuals below rounding level count as an exact fit.
    let y_scale = ys.iter().fold(0.0f64, |a, y| a.max(y.abs())).max(1.0);
    let ssr = if ssr <= (1e-13 * y_scale).powi(2) * sw {
        0.0
    } else {
        ssr
    };
    let r_squared = if syy > 0.0 {
        (1.0 - ssr / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let slope_stderr = if n > 2 {
        (ssr / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(RegressionFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        n_points: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    use crate::stats::RngStream;

    #[test]
    fn exact_square_law() {
        let pts: Vec<_> = [0.1f64, 0.2, 0.4].iter().map(|&e| (e, e * e)).collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-10);
        assert!(fit.slope_stderr < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-10);
    }

    #[test]
    fn prefactor_goes_to_intercept() {
        let pts: Vec<_> = [0.1f64, 0.3, 0.5, 0.9]
            .iter()
            .map(|&e| (e, 0.5 * e))
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-10);
        assert!((fit.intercept - 0.5f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn noisy_schroeder_exponent_recovered() {
        let mut rng = RngStream::new(2024, 3).rng();
        let pts: Vec<_> = (0..10)
            .map(|i| {
                let e = 0.01 * 1.5f64.powi(i);
                let noise = 1.0 + 0.02 * (2.0 * rng.random::<f64>() - 1.0);
                (e, e.powf(1.7095) * noise)
            })
            .collect();
        let fit = fit_power_law(&pts).unwrap();
        assert!(fit.slope > 1.6 && fit.slope < 1.8, "slope {}", fit.slope);
    }

    #[test]
    fn power_law_errors() {
        assert!(fit_power_law(&[(0.1, 0.5), (0.2, 0.0), (0.3, 0.4)]).is_err());
        assert!(fit_power_law(&[(0.1, 0.5), (0.2, 1.0), (0.3, 0.4)]).is_err());
        assert!(fit_power_law(&[(0.1, 0.5), (0.2, 0.4)]).is_err());
        assert!(matches!(
            fit_power_law(&[(0.1, 0.5), (0.1, 0.4), (0.1, 0.3)]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn stretched_exact() {
        let pts: Vec<_> = [0.3f64, 0.4, 0.5]
            .iter()
            .map(|&e| (e, (-e.powi(-3)).exp()))
            .collect();
        let fit = fit_stretched_exponent(&pts).unwrap();
        assert!((fit.slope + 3.0).abs() < 1e-10);

        let pts: Vec<_> = [0.1f64, 0.2, 0.5]
            .iter()
            .map(|&e| (e, (-2.0 / e).exp()))
            .collect();
        let fit = fit_stretched_exponent(&pts).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-10);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-10);

        let pts: Vec<_> = [0.3f64, 0.4, 0.5]
            .iter()
            .map(|&e| (e, (-e.powf(-3.106)).exp()))
            .collect();
        let fit = fit_stretched_exponent(&pts).unwrap();
        assert!((fit.slope + 3.106).abs() < 1e-9);
    }

    #[test]
    fn stretched_rejects_unstable_regime() {
        assert!(fit_stretched_exponent(&[(0.1, 0.01), (0.2, 0.5), (0.3, 0.1)]).is_err());
        assert!(fit_stretched_exponent(&[(0.1, 0.0), (0.2, 0.05), (0.3, 0.1)]).is_err());
    }

    #[test]
    fn weighted_fit_matches_unweighted_on_exact_data() {
        let pts: Vec<_> = [0.1f64, 0.2, 0.4, 0.8]
            .iter()
            .map(|&e| (e, 0.3 * e.powf(1.3)))
            .collect();
        let w = [1.0, 4.0, 9.0, 0.5];
        let a = fit_power_law(&pts).unwrap();
        let b = fit_power_law_weighted(&pts, &w).unwrap();
        assert!((a.slope - b.slope).abs() < 1e-10);
        assert!(fit_power_law_weighted(&pts, &w[..2]).is_err());
    }

    proptest! {
        #[test]
        fn exact_on_any_power_law(slope in -10.0f64..10.0, c in 0.01f64..1.0) {
            // Keep every probability inside (0, 1).
            let eps: Vec<f64> = [0.2f64, 0.35, 0.5, 0.7, 0.9].to_vec();
            let scale = eps.iter().map(|e| c * e.powf(slope)).fold(0.0f64, f64::max);
            let c = if scale >= 1.0 { c / (2.0 * scale) } else { c };
            let pts: Vec<_> = eps.iter().map(|&e| (e, c * e.powf(slope))).collect();
            let fit = fit_power_law(&pts).unwrap();
            prop_assert!((fit.slope - slope).abs() < 1e-9);
            prop_assert!(fit.slope_stderr < 1e-10);
        }
    }
}
