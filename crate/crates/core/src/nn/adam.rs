use super::{shape_err, Gradients, NnError};

/// Adam optimizer with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

    /// Fresh state for parameter tensors of the given lengths.
    pub fn new(shapes: &[usize], learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step_count: 0,
        }
    }

    /// Restores a state from saved moments.
    pub fn from_parts(
        hyper: [f64; 4],
        first_moment: Vec<Vec<f64>>,
        second_moment: Vec<Vec<f64>>,
        step_count: u64,
    ) -> Result<Self, NnError> {
        let a: Vec<usize> = first_moment.iter().map(Vec::len).collect();
        let b: Vec<usize> = second_moment.iter().map(Vec::len).collect();
        if a != b {
            return Err(shape_err("AdamState::from_parts", format!("{a:?}"), format!("{b:?}")));
        }
        let [learning_rate, beta1, beta2, epsilon] = hyper;
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first_moment,
            second_moment,
            step_count,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }

    /// Applies one update in place. Shapes are checked before anything is written.
    pub fn step(&mut self, mut params: Vec<&mut [f64]>, grads: &Gradients) -> Result<(), NnError> {
        let expected = self.shapes();
        let got_p: Vec<usize> = params.iter().map(|p| p.len()).collect();
        let got_g: Vec<usize> = grads.tensors.iter().map(Vec::len).collect();
        if got_p != expected {
            return Err(shape_err(
                "AdamState::step params",
                format!("{expected:?}"),
                format!("{got_p:?}"),
            ));
        }
        if got_g != expected {
            return Err(shape_err(
                "AdamState::step gradients",
                format!("{expected:?}"),
                format!("{got_g:?}"),
            ));
        }
        self.step_count += 1;
        let t = self.step_count as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (k, p) in params.iter_mut().enumerate() {
            let g = &grads.tensors[k];
            let m = &mut self.first_moment[k];
            let v = &mut self.second_moment[k];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads(v: Vec<f64>) -> Gradients {
        Gradients { tensors: vec![v] }
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut adam = AdamState::new(&[3], 1e-4);
        let mut p = vec![0.3, -1.0, 2.0];
        adam.step(vec![&mut p], &grads(vec![0.0; 3])).unwrap();
        assert_eq!(p, vec![0.3, -1.0, 2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = AdamState::new(&[1], 1e-4);
        let mut p = vec![1.0];
        adam.step(vec![&mut p], &grads(vec![0.5])).unwrap();
        // m̂ = g, v̂ = g², Δ = -lr·g/(|g| + ε)
        let expected = 1.0 - 1e-4 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - (1.0 - 1e-4)).abs() < 1e-11);
    }

    #[test]
    fn quadratic_matches_reference_run() {
        // Reference trajectory from an independent scalar Adam script. Momentum
        // overshoots zero around step 11, so |x| shrinks in envelope, not per step.
        let reference = [
            (10, 0.07624915560691221),
            (50, -0.004818223222661105),
            (100, 0.002936675681102549),
        ];
        let mut adam = AdamState::new(&[1], 0.1);
        let mut x = vec![1.0];
        let mut f_first_ten = Vec::new();
        for step in 1..=100 {
            let g = 2.0 * x[0];
            adam.step(vec![&mut x], &grads(vec![g])).unwrap();
            if step <= 10 {
                f_first_ten.push(x[0] * x[0]);
            }
            if let Some(&(_, want)) = reference.iter().find(|(s, _)| *s == step) {
                assert!((x[0] - want).abs() < 1e-12, "step {step}: {} vs {want}", x[0]);
            }
        }
        assert!(f_first_ten.windows(2).all(|w| w[1] < w[0]));
        assert!(x[0].abs() < 0.01);
    }

    #[test]
    fn shape_mismatch_is_rejected_without_update() {
        let mut adam = AdamState::new(&[2], 1e-3);
        let mut p = vec![1.0];
        assert!(adam.step(vec![&mut p], &grads(vec![1.0])).is_err());
        let mut q = vec![1.0, 1.0];
        assert!(adam.step(vec![&mut q], &grads(vec![1.0])).is_err());
        assert_eq!(adam.step_count(), 0);
        assert_eq!(q, vec![1.0, 1.0]);
    }
}
