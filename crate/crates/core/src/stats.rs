//! Small statistical helpers shared by the experiment harness and the tests.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; `NaN` for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Ordinary least squares line through `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::Degenerate(format!("need at least two paired points, got {n}")));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all abscissae coincide".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_stderr = if n > 2 {
        let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (rss / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LinearFit { slope, intercept, slope_stderr })
}

/// Slope of `log y` against `log x`; every value must be positive.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::Degenerate("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

/// `(x - mean) / sd` using the sample moments. Fails on a constant sample.
pub fn standardize(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.len() < 2 {
        return Err(Error::Degenerate("need at least two replicates to standardize".into()));
    }
    let m = mean(xs);
    let sd = sample_variance(xs).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    Ok(xs.iter().map(|x| (x - m) / sd).collect())
}

/// One-sample Kolmogorov–Smirnov distance between the empirical law of `xs` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / m - f).max(f - i as f64 / m);
    }
    d
}

pub fn ks_statistic_normal(xs: &[f64]) -> f64 {
    ks_statistic(xs, standard_normal_cdf)
}

/// Asymptotic p-value of a KS distance `d` from `m` samples (Stephens' small-sample correction).
pub fn ks_p_value(d: f64, m: usize) -> f64 {
    let sm = (m as f64).sqrt();
    let lambda = (sm + 0.12 + 0.11 / sm) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((sample_variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!(sample_variance(&[1.0]).is_nan());
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = linear_fit(&x, &y).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14 && (f.intercept + 1.0).abs() < 1e-14);
        assert!(f.slope_stderr < 1e-12);
        let g = log_log_fit(&[10.0, 100.0, 1000.0], &[3.0, 30.0, 300.0]).unwrap();
        assert!((g.slope - 1.0).abs() < 1e-12);
        assert!(log_log_fit(&[1.0, 2.0], &[0.0, 1.0]).is_err());
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn normal_cdf_values() {
        assert!((standard_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((standard_normal_cdf(1.959963984540054) - 0.975).abs() < 1e-9);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let m = 1000;
        let xs: Vec<f64> = (0..m).map(|i| (i as f64 + 0.5) / m as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / m as f64).abs() < 1e-12);
        assert!(ks_p_value(d, m) > 0.99);
        assert!(ks_p_value(0.1, 1000) < 1e-6);
        // 1.36 / sqrt(m) is the 5% critical value
        let p = ks_p_value(1.358 / (1000f64).sqrt(), 1000);
        assert!((p - 0.05).abs() < 0.01, "p={p}");
    }

    #[test]
    fn standardize_rejects_constant() {
        assert!(standardize(&[3.0, 3.0, 3.0]).is_err());
        let z = standardize(&[1.0, 2.0, 3.0]).unwrap();
        assert!((mean(&z)).abs() < 1e-15);
        assert!((sample_variance(&z) - 1.0).abs() < 1e-14);
    }
}
