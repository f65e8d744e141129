//! Least-confidence uncertainty for a binary real/fake classifier.

/// `1 - max(s, 1 - s)`: 0.5 at `s = 0.5`, 0 at a fully confident score.
#[inline]
pub fn uncertainty(score: f64) -> f64 {
    1.0 - score.max(1.0 - score)
}

/// Indices of `scores` ordered from most to least uncertain. Ties keep their
/// original order.
pub fn least_confidence_rank(scores: &[f64]) -> Vec<usize> {
    let u: Vec<f64> = scores.iter().map(|&s| uncertainty(s)).collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| u[b].total_cmp(&u[a]));
    order
}
