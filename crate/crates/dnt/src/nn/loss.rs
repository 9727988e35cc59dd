//! Softmax cross-entropy over class logits.

use crate::error::{Error, Result};

/// Max-shifted softmax: nonnegative, sums to 1 within 1e-6, invariant under
/// a constant shift of the logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Softmax followed by negative log likelihood.
///
/// Returns the loss and the full probability vector.
pub fn softmax_cross_entropy(logits: &[f64], true_label: usize) -> Result<(f64, Vec<f64>)> {
    if logits.len() < 2 {
        return Err(Error::Usage(format!(
            "need at least 2 classes, got {}",
            logits.len()
        )));
    }
    if true_label >= logits.len() {
        return Err(Error::Usage(format!(
            "label {} out of range for {} classes",
            true_label,
            logits.len()
        )));
    }
    let probs = softmax(logits);
    let loss = -probs[true_label].ln();
    Ok((loss, probs))
}

/// Gradient of the loss with respect to the logits: probs - onehot(label).
pub fn softmax_cross_entropy_backward(probs: &[f64], true_label: usize) -> Vec<f64> {
    let mut g = probs.to_vec();
    g[true_label] -= 1.0;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, DEFAULT_STEP};
    use crate::rng::SplitMix64;

    #[test]
    fn symmetric_logits_split_evenly() {
        let (loss, probs) = softmax_cross_entropy(&[0.0, 0.0], 0).unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn three_class_probabilities() {
        let (_, probs) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 0).unwrap();
        let expected = [0.0900, 0.2447, 0.6652];
        for (p, e) in probs.iter().zip(&expected) {
            assert!((p - e).abs() < 5e-5, "{p} vs {e}");
        }
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shift_invariance() {
        let (_, a) = softmax_cross_entropy(&[1.0, 2.0, 3.0], 1).unwrap();
        let (_, b) = softmax_cross_entropy(&[1001.0, 1002.0, 1003.0], 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_label_is_usage_error() {
        assert!(matches!(
            softmax_cross_entropy(&[0.0, 0.0], 2),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn gradient_is_probs_minus_onehot() {
        let mut rng = SplitMix64::new(31);
        let mut logits: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let (_, probs) = softmax_cross_entropy(&logits, 3).unwrap();
        let analytic = softmax_cross_entropy_backward(&probs, 3);
        let r = check_gradient(
            |v: &[f64]| softmax_cross_entropy(v, 3).unwrap().0,
            &mut logits,
            &analytic,
            DEFAULT_STEP,
        );
        assert!(r.max_rel_error < 1e-7, "loss grad error {}", r.max_rel_error);
    }
}
