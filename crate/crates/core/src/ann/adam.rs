//! Adam optimizer with bias correction.

use super::{Mlp, MlpGrads};
use crate::num::Real;

/// First/second-moment accumulators shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m_weights: Vec<Vec<T>>,
    v_weights: Vec<Vec<T>>,
    m_biases: Vec<Vec<T>>,
    v_biases: Vec<Vec<T>>,
    step_count: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> AdamState<T> {
    /// Zeroed state with the standard constants `beta1 = 0.9`,
    /// `beta2 = 0.999`, `epsilon = 1e-8`.
    pub fn new(mlp: &Mlp<T>) -> Self {
        let zeros = |src: &[Vec<T>]| -> Vec<Vec<T>> {
            src.iter().map(|v| vec![T::zero(); v.len()]).collect()
        };
        AdamState {
            m_weights: zeros(mlp.weights()),
            v_weights: zeros(mlp.weights()),
            m_biases: zeros(mlp.biases()),
            v_biases: zeros(mlp.biases()),
            step_count: 0,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update of the network parameters in place.
    pub fn step(&mut self, mlp: &mut Mlp<T>, grads: &MlpGrads<T>, learning_rate: T) {
        self.step_count += 1;
        let t = self.step_count as i32;
        let one = T::one();
        let bias1 = one - self.beta1.powi(t);
        let bias2 = one - self.beta2.powi(t);

        let update = |params: &mut [T], grad: &[T], m: &mut [T], v: &mut [T]| {
            for i in 0..params.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                params[i] = params[i] - learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        };

        for l in 0..grads.weights.len() {
            update(
                &mut mlp.weights_mut()[l],
                &grads.weights[l],
                &mut self.m_weights[l],
                &mut self.v_weights[l],
            );
        }
        for l in 0..grads.biases.len() {
            update(
                &mut mlp.biases_mut()[l],
                &grads.biases[l],
                &mut self.m_biases[l],
                &mut self.v_biases[l],
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::RngStream;

    fn toy() -> Mlp<f64> {
        let mut s = RngStream::new(4, 0);
        Mlp::new(&[1, 2, 1], &mut s).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient() {
        let mut mlp = toy();
        let before = mlp.weights()[0].clone();
        let mut grads = mlp.zero_grads();
        grads.weights[0][0] = 3.5;
        grads.weights[0][1] = -0.02;
        let mut adam = AdamState::new(&mlp);
        let lr = 1e-3;
        adam.step(&mut mlp, &grads, lr);
        let d0 = mlp.weights()[0][0] - before[0];
        let d1 = mlp.weights()[0][1] - before[1];
        assert!((d0 + lr).abs() < 1e-6 * lr, "step is -lr * sign(g): {d0}");
        assert!((d1 - lr).abs() < 1e-6 * lr, "step is -lr * sign(g): {d1}");
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut mlp = toy();
        let before = mlp.clone();
        let grads = mlp.zero_grads();
        let mut adam = AdamState::new(&mlp);
        adam.step(&mut mlp, &grads, 1e-3);
        assert_eq!(mlp, before);
    }

    #[test]
    fn second_identical_step_keeps_unit_scale() {
        let mut mlp = toy();
        let mut grads = mlp.zero_grads();
        grads.biases[0][0] = -1.25;
        let mut adam = AdamState::new(&mlp);
        let lr = 1e-3;
        adam.step(&mut mlp, &grads, lr);
        let after_first = mlp.biases()[0][0];
        adam.step(&mut mlp, &grads, lr);
        let second_step = (mlp.biases()[0][0] - after_first).abs();
        assert!(
            (second_step - lr).abs() < 0.02 * lr,
            "second step magnitude {second_step} vs lr {lr}"
        );
        assert_eq!(adam.step_count(), 2);
    }
}
