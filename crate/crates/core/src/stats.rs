//! Least-squares rate fits and small Monte Carlo summaries.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scale {
    /// `ln y` against `ln x`.
    LogLog,
    /// `ln y` against `x`.
    LogLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "{} abscissae, {} ordinates",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::DegenerateFit(format!("{n} points")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        slope_se,
    })
}

/// Fits a power law or an exponential; needs three points, non-positive
/// values are rejected.
pub fn fit_rate(x: &[f64], values: &[f64], scale: Scale) -> Result<RateFit> {
    if values.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} points, need 3", values.len())));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateFit(
            "non-positive or non-finite value in rate fit".into(),
        ));
    }
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    match scale {
        Scale::LogLinear => fit_linear(x, &y),
        Scale::LogLog => {
            if x.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::DegenerateFit("non-positive abscissa in log-log fit".into()));
            }
            let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
            fit_linear(&lx, &y)
        }
    }
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

pub fn mean_estimate(samples: &[f64]) -> MeanEstimate {
    let n = samples.len() as f64;
    if samples.is_empty() {
        return MeanEstimate {
            mean: f64::NAN,
            std_error: f64::NAN,
        };
    }
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    MeanEstimate {
        mean,
        std_error: (var / n).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Role, StreamKey};

    #[test]
    fn quarter_root_power_law() {
        let x = [1.0, 4.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 4.0 / v.sqrt()).collect();
        assert!((fit_rate(&x, &y, Scale::LogLog).unwrap().slope + 0.5).abs() < 1e-14);
    }

    #[test]
    fn slope_band_coverage() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let mut covered = 0;
        for trial in 0..1000 {
            let mut s = StreamKey::new(7, trial, Role::Auxiliary).rng();
            let y: Vec<f64> = x.iter().map(|t| (-1.3 * t + 0.2 * s.normal()).exp()).collect();
            let fit = fit_rate(&x, &y, Scale::LogLinear).unwrap();
            if (fit.slope + 1.3).abs() <= 3.0 * fit.slope_se {
                covered += 1;
            }
        }
        assert!(covered >= 950, "{covered}");
    }

    #[test]
    fn exact_power_law() {
        let x = [8.0, 16.0, 32.0, 64.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        let fit = fit_rate(&x, &y, Scale::LogLog).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(fit.slope_se < 1e-12);
    }

    #[test]
    fn exponential_decay() {
        let t = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = t.iter().map(|v: &f64| (-2.0 * v).exp()).collect();
        let fit = fit_rate(&t, &y, Scale::LogLinear).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(fit_linear(&[1.0], &[1.0]).is_err());
        assert!(fit_linear(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(fit_rate(&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0], Scale::LogLinear).is_err());
        assert!(fit_rate(&[1.0, 2.0], &[1.0, 2.0], Scale::LogLinear).is_err());
        assert!(fit_rate(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0], Scale::LogLog).is_err());
    }

    #[test]
    fn standard_error_of_mean() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let e = mean_estimate(&s);
        assert_eq!(e.mean, 2.5);
        assert!((e.std_error - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
    }
}
