//! Modelling error and echo-return-loss enhancement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of the signal skipped as convergence transient by default.
pub const DEFAULT_SKIP_FRACTION: f64 = 0.25;

/// `10 log10(sum e^2 / sum y^2)`. An all-zero `e` yields negative infinity.
pub fn modeling_error_db(e: &[f64], y: &[f64]) -> Result<f64> {
    if e.len() != y.len() {
        return Err(Error::shape(format!(
            "error has {} samples, reference has {}",
            e.len(),
            y.len()
        )));
    }
    let ey: f64 = y.iter().map(|v| v * v).sum();
    if !(ey > 0.0) || !ey.is_finite() {
        return Err(Error::UndefinedMetric("reference signal has no energy".into()));
    }
    let ee: f64 = e.iter().map(|v| v * v).sum();
    if !ee.is_finite() {
        return Err(Error::NonFinite("modelling error signal"));
    }
    Ok(10.0 * (ee / ey).log10())
}

pub fn erle(e: &[f64], y: &[f64]) -> Result<f64> {
    Ok(-modeling_error_db(e, y)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub delta_db: f64,
    pub erle_db: f64,
    /// Residual energy of every processed frame.
    pub frame_energies: Vec<f64>,
    /// First sample included in `delta_db`.
    pub evaluated_from: usize,
}

impl ErrorReport {
    /// Evaluates `e` against `y` after skipping the leading `skip_fraction` of samples.
    pub fn new(e: &[f64], y: &[f64], skip_fraction: f64, frame_energies: Vec<f64>) -> Result<Self> {
        if !(0.0..1.0).contains(&skip_fraction) {
            return Err(Error::config("skip fraction must be in [0, 1)"));
        }
        let n = e.len().min(y.len());
        let start = (n as f64 * skip_fraction).floor() as usize;
        let delta_db = modeling_error_db(&e[start..n], &y[start..n])?;
        Ok(Self {
            delta_db,
            erle_db: -delta_db,
            frame_energies,
            evaluated_from: start,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_one_is_zero_db() {
        let y = [1.0, -2.0, 0.5];
        assert_eq!(modeling_error_db(&y, &y).unwrap(), 0.0);
        assert_eq!(erle(&y, &y).unwrap(), 0.0);
    }

    #[test]
    fn tenth_amplitude_is_minus_twenty() {
        let y = [1.0, -2.0, 0.5, 3.0];
        let e: Vec<f64> = y.iter().map(|v| 0.1 * v).collect();
        assert!((modeling_error_db(&e, &y).unwrap() + 20.0).abs() < 1e-12);
        assert!((erle(&e, &y).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn zero_error_is_negative_infinity() {
        assert_eq!(modeling_error_db(&[0.0; 3], &[1.0; 3]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn silent_reference_is_undefined() {
        assert!(matches!(
            modeling_error_db(&[1.0], &[0.0]),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(matches!(modeling_error_db(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn report_skips_transient() {
        let y = vec![1.0; 8];
        let mut e = vec![0.1; 8];
        e[0] = 100.0;
        e[1] = 100.0;
        let r = ErrorReport::new(&e, &y, 0.25, vec![]).unwrap();
        assert_eq!(r.evaluated_from, 2);
        assert!((r.delta_db + 20.0).abs() < 1e-12);
        assert_eq!(r.erle_db, -r.delta_db);
    }
}
