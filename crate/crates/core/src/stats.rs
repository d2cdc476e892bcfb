//! Log-log slope fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Values at or below this are treated as numerical noise and left out of fits.
pub const NOISE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub half_width: f64,
    pub points_used: usize,
}

/// Ordinary least squares of `ln y` against `ln x`, skipping `y <= NOISE_FLOOR`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Result<SlopeFit> {
    if x.len() != y.len() {
        return Err(Error::invalid("slope fit needs equally many x and y values"));
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > NOISE_FLOOR && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::invalid(format!("slope fit needs 3 points above the noise floor, have {n}")));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map_err(|e| Error::invalid(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(SlopeFit { slope, intercept, half_width: t * se, points_used: n })
}
