//! Scalar loss functions on decoded values.

use crate::error::{Error, Result};

use super::tape::softplus;

/// Mean squared logarithmic error, `mean((ln(1+y) - ln(1+y_hat))^2)`.
pub fn msle_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch(format!("{} labels vs {} predictions", y.len(), y_hat.len())));
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sum = 0.0;
    for (&a, &b) in y.iter().zip(y_hat) {
        for v in [a, b] {
            if v < 0.0 {
                return Err(Error::NegativeInput(v));
            }
        }
        sum += (a.ln_1p() - b.ln_1p()).powi(2);
    }
    Ok(sum / y.len() as f64)
}

/// Gradient of [`msle_loss`] with respect to each prediction.
pub fn msle_grad(y: &[f64], y_hat: &[f64]) -> Vec<f64> {
    let n = y.len() as f64;
    y.iter()
        .zip(y_hat)
        .map(|(&a, &b)| -2.0 * (a.ln_1p() - b.ln_1p()) / ((1.0 + b) * n))
        .collect()
}

/// Binary cross-entropy of one logit, computed without overflow.
pub fn bce_loss(label: f64, logit: f64) -> f64 {
    softplus(logit) - label * logit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msle_examples() {
        assert_eq!(msle_loss(&[3.0, 7.0], &[3.0, 7.0]).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((msle_loss(&[e - 1.0], &[0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(msle_loss(&[-1.0], &[0.0]), Err(Error::NegativeInput(_))));
        assert!(msle_grad(&[2.0], &[2.0]).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn bce_examples() {
        assert!(bce_loss(1.0, 40.0) < 1e-15);
        assert!((bce_loss(1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.0, -800.0)).abs() < 1e-15);
        assert!(bce_loss(0.0, 800.0).is_finite());
    }

    #[test]
    fn msle_gradient_matches_central_differences() {
        let y = [0.5, 3.0, 10.0];
        let y_hat = [1.5, 2.0, 30.0];
        let g = msle_grad(&y, &y_hat);
        for i in 0..3 {
            let step = 1e-6;
            let mut hi = y_hat;
            let mut lo = y_hat;
            hi[i] += step;
            lo[i] -= step;
            let fd = (msle_loss(&y, &hi).unwrap() - msle_loss(&y, &lo).unwrap()) / (2.0 * step);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()));
        }
    }
}
