//! Small summary statistics used by the reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation (divides by `count`).
    pub std: f64,
    pub count: usize,
}

/// Mean and population standard deviation, summed in input order.
pub fn aggregate(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MeanStd {
        mean,
        std: var.sqrt(),
        count: values.len(),
    })
}

/// Pearson correlation; `None` when either side has zero variance or the
/// lengths differ.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_values() {
        let s = aggregate(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.std, s.count), (1.0, 0.0, 3));
    }

    #[test]
    fn two_points() {
        let s = aggregate(&[0.0, 1.0]).unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.5));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(matches!(aggregate(&[]), Err(Error::EmptyInput(_))));
    }

    /// Exact rational oracle: values k/7 for k in 0..14 have mean 13/14 and
    /// variance (n^2 - 1) / 12 / 49 with n = 14.
    #[test]
    fn matches_closed_form() {
        let values: Vec<f64> = (0..14).map(|k| k as f64 / 7.0).collect();
        let s = aggregate(&values).unwrap();
        assert!((s.mean - 13.0 / 14.0).abs() < 1e-12);
        let var = (14.0f64 * 14.0 - 1.0) / 12.0 / 49.0;
        assert!((s.std - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn pearson_basics() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[1.0], &[1.0]), None);
    }
}
