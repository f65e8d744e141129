/// Probabilities are clamped into `[BCE_EPSILON, 1 - BCE_EPSILON]` before the log.
pub const BCE_EPSILON: f64 = 1e-7;

/// Binary cross-entropy of a single prediction against a 0/1 target.
pub fn bce_loss(prediction: f64, target: f64) -> f64 {
    let p = prediction.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over a batch.
pub fn bce_loss_mean(predictions: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(predictions.len(), targets.len(), "bce batch length mismatch");
    if predictions.is_empty() {
        return 0.0;
    }
    let sum: f64 = predictions.iter().zip(targets).map(|(&p, &t)| bce_loss(p, t)).sum();
    sum / predictions.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        assert!(bce_loss(1.0 - BCE_EPSILON, 1.0) < 1e-6);
        assert!(bce_loss(1.0, 1.0) < 1e-6);
        assert!(bce_loss(0.0, 0.0) < 1e-6);
    }

    #[test]
    fn half_probability_costs_ln2_either_way() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(0.5, 1.0) - ln2).abs() < 1e-12);
        assert!((bce_loss(0.5, 0.0) - ln2).abs() < 1e-12);
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn clamping_keeps_loss_finite() {
        assert!(bce_loss(0.0, 1.0).is_finite());
        assert!(bce_loss(1.0, 0.0).is_finite());
        assert!((bce_loss(0.0, 1.0) + BCE_EPSILON.ln()).abs() < 1e-9);
    }

    #[test]
    fn mean_of_batch() {
        let l = bce_loss_mean(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(bce_loss_mean(&[], &[]), 0.0);
    }
}
