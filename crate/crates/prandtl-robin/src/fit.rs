//! Small least-squares helpers shared by the rate and exponent studies.

use crate::error::{Error, Result};

/// Result of a straight-line fit `y = slope*x + intercept`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Max absolute residual of the fit, in the fitted coordinates.
    pub max_residual: f64,
}

/// Ordinary least squares on (x, y) pairs. Needs at least two distinct x.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::structural(format!(
            "fit_line needs >=2 paired samples, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let sx: f64 = xs.iter().sum();
    let sy: f64 = ys.iter().sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 || !denom.is_finite() {
        return Err(Error::numerical("fit_line: degenerate abscissae"));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let max_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).abs())
        .fold(0.0, f64::max);
    Ok(LineFit {
        slope,
        intercept,
        max_residual,
    })
}

/// Log-log fit: slope of log(y) against log(x). Rejects non-positive samples.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    if lx.iter().chain(ly.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "fit_loglog: non-positive or non-finite sample",
        ));
    }
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        let fit = fit_line(&xs, &ys).unwrap();
        assert_relative_eq!(fit.slope, 2.5, max_relative = 1e-12);
        assert_relative_eq!(fit.intercept, -1.0, max_relative = 1e-12);
        assert!(fit.max_residual < 1e-12);
    }

    #[test]
    fn loglog_recovers_power() {
        let xs = [2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-1.5)).collect();
        let fit = fit_loglog(&xs, &ys).unwrap();
        assert_relative_eq!(fit.slope, -1.5, max_relative = 1e-10);
    }

    #[test]
    fn rejects_short_input() {
        assert!(fit_line(&[1.0], &[2.0]).is_err());
    }

    #[test]
    fn rejects_negative_in_loglog() {
        assert!(fit_loglog(&[1.0, 2.0], &[-1.0, 2.0]).is_err());
    }
}
