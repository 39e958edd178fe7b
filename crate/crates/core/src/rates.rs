//! Least-squares rate fits on level sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Line `log_base(value) = intercept + slope · x` fitted by least squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residuals: Vec<f64>,
    pub points: usize,
}

impl RateFit {
    /// Decay rate, `-slope`.
    pub fn rate(&self) -> f64 {
        -self.slope
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

fn least_squares(x: &[f64], y: &[f64]) -> Result<RateFit> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("a rate fit needs at least two points"));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("a rate fit needs distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !slope.is_finite() {
        return Err(Error::invalid("rate fit produced a non-finite slope"));
    }
    let residuals = x
        .iter()
        .zip(y)
        .map(|(a, b)| b - intercept - slope * a)
        .collect();
    Ok(RateFit {
        slope,
        intercept,
        residuals,
        points: n,
    })
}

/// Fit `log_τ |value|` against the level over points with `ℓ ≥ 1`.
pub fn fit_rate(levels: &[usize], values: &[f64], tau: usize) -> Result<RateFit> {
    if levels.len() != values.len() {
        return Err(Error::invalid("levels and values differ in length"));
    }
    let base = (tau as f64).ln();
    let (x, y): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .zip(values)
        .filter(|(l, _)| **l >= 1)
        .map(|(l, v)| {
            if *v == 0.0 || !v.is_finite() {
                Err(Error::invalid(format!(
                    "level {l} has no usable value ({v})"
                )))
            } else {
                Ok((*l as f64, v.abs().ln() / base))
            }
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    least_squares(&x, &y)
}

/// Fit `log y = intercept + slope · log x` (natural logs).
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() {
        return Err(Error::invalid("x and y differ in length"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("log-log fit needs positive finite data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    least_squares(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn skips_level_zero() {
        let f = fit_rate(&[0, 1, 2, 3], &[99.0, 0.5, 0.125, 0.03125], 2).unwrap();
        assert!((f.rate() - 2.0).abs() < 1e-12);
        assert_eq!(f.points, 3);
    }

    #[test]
    fn rejects_zero_values() {
        assert!(fit_rate(&[1, 2], &[0.1, 0.0], 2).is_err());
        assert!(fit_rate(&[1], &[0.1], 2).is_err());
    }

    proptest! {
        #[test]
        fn geometric_data_recovers_slope(
            c in 1e-6f64..1e3,
            slope in -4.0f64..4.0,
            tau in 2usize..5,
            n in 2usize..8,
        ) {
            let levels: Vec<usize> = (1..=n).collect();
            let values: Vec<f64> = levels.iter().map(|&l| c * (tau as f64).powf(slope * l as f64)).collect();
            let f = fit_rate(&levels, &values, tau).unwrap();
            prop_assert!((f.slope - slope).abs() < 1e-12);
        }

        #[test]
        fn power_law_recovers_exponent(c in 1e-3f64..1e3, k in -5.0f64..0.0) {
            let x = [1e-3f64, 3e-3, 1e-2, 3e-2, 1e-1];
            let y: Vec<f64> = x.iter().map(|v| c * v.powf(k)).collect();
            let f = fit_loglog(&x, &y).unwrap();
            prop_assert!((f.slope - k).abs() < 1e-12);
        }
    }
}
