//! Activations and probability primitives.

use std::f64::consts::PI;

use super::Matrix;
use crate::error::{Error, Result};

const GELU_CUBIC: f64 = 0.044715;
const PROB_FLOOR: f64 = 1e-15;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_CUBIC * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    let inner = k * (x + GELU_CUBIC * x * x * x);
    let th = inner.tanh();
    let sech2 = 1.0 - th * th;
    0.5 * (1.0 + th) + 0.5 * x * sech2 * k * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

pub fn gelu_matrix(m: &Matrix) -> Matrix {
    m.map(gelu)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::EmptyInput);
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax without validation; `v` must be nonempty and finite.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in v.iter_mut() {
        *x /= total;
    }
}

/// `-ln p[label]` with the probability clamped at 1e-15.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    let p = probs.get(label).ok_or_else(|| {
        Error::invalid(format!("label {label} out of range for {} classes", probs.len()))
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Lowest-index argmax.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(100.0) - 100.0).abs() < 1e-9);
        // 40-digit evaluation of the tanh formula at x = 1.
        assert!((gelu(1.0) - 0.841_191_990_608_276_7).abs() < 1e-15);
    }

    #[test]
    fn gelu_shape_on_grid() {
        // GELU dips to about -0.17 near x = -0.752: decreasing before, increasing after.
        let mut prev = gelu(-10.0);
        let mut min = (prev, -10.0);
        for i in 1..=20_000 {
            let x = -10.0 + i as f64 * 1e-3;
            let y = gelu(x);
            if x <= -0.753 {
                assert!(y <= prev + 1e-15, "gelu increased at {x}");
            } else if x >= -0.751 {
                assert!(y >= prev - 1e-15, "gelu decreased at {x}");
            }
            if y < min.0 {
                min = (y, x);
            }
            prev = y;
        }
        assert!((min.1 + 0.752).abs() < 2e-3 && (min.0 + 0.17).abs() < 1e-2, "{min:?}");
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_cases() {
        let p = softmax(&[3.5, 3.5, 3.5]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let p = softmax(&[0.0, 2f64.ln()]).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(softmax(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn cross_entropy_cases() {
        assert!(cross_entropy(&[1.0, 0.0, 0.0], 0).unwrap() <= 1e-12);
        assert!((cross_entropy(&[0.5, 0.5], 1).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
        assert!(cross_entropy(&[1.0, 0.0], 1).unwrap().is_finite());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
