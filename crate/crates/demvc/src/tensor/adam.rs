//! Adam optimizer over an ordered set of parameter tensors.

use super::Tensor;
use crate::error::{DemvcError, Result};
use serde::{Deserialize, Serialize};

/// Adam state for a fixed, ordered parameter set. Moment tensors are created
/// lazily on the first step and must keep their shapes afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Paper defaults: lr 1e-3, beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new() -> Self {
        Self::with_hyperparams(1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        assert!((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && epsilon > 0.0);
        AdamState {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub(crate) fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.first_moment, &self.second_moment)
    }

    pub(crate) fn restore_moments(&mut self, step_count: u64, m: Vec<Tensor>, v: Vec<Tensor>) {
        self.step_count = step_count;
        self.first_moment = m;
        self.second_moment = v;
    }

    /// One bias-corrected Adam update over all parameters. `params` and
    /// `grads` must be in the same order on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(DemvcError::dimension(
                "adam step",
                &[params.len()],
                &[grads.len()],
            ));
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
            self.second_moment = self.first_moment.clone();
        }
        if self.first_moment.len() != params.len() {
            return Err(DemvcError::Usage(format!(
                "adam state tracks {} parameters, got {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        for ((p, g), (m, v)) in params
            .iter()
            .zip(grads)
            .zip(self.first_moment.iter().zip(&self.second_moment))
        {
            if p.shape() != g.shape() || p.shape() != m.shape() || p.shape() != v.shape() {
                return Err(DemvcError::dimension("adam step", p.shape(), g.shape()));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(
            self.first_moment
                .iter_mut()
                .zip(self.second_moment.iter_mut()),
        ) {
            for ((pv, gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

impl Default for AdamState {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut adam = AdamState::new();
        let mut p = Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap();
        let g = Tensor::zeros(&[2]);
        adam.step(&mut [&mut p], &[g]).unwrap();
        assert_eq!(p.data(), &[1.5, -0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // scalar, gradient 1, defaults: m_hat = 1, v_hat = 1,
        // delta = lr / (1 + eps)
        let mut adam = AdamState::new();
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        adam.step(&mut [&mut p], &[g]).unwrap();
        let delta = -p.data()[0];
        assert!((delta - 9.9999999e-4).abs() < 1e-11, "delta = {delta}");
        assert!(delta <= 1e-3 * (1.0 + 1e-6));
    }

    #[test]
    fn identical_histories_get_identical_updates() {
        let mut adam = AdamState::new();
        let mut p = Tensor::from_vec(&[2], vec![0.7, 0.7]).unwrap();
        for step in 0..5 {
            let g = Tensor::from_vec(&[2], vec![0.3 * (step as f64 + 1.0); 2]).unwrap();
            adam.step(&mut [&mut p], &[g]).unwrap();
            assert_eq!(p.data()[0], p.data()[1]);
        }
    }

    #[test]
    fn update_magnitude_bounded_by_learning_rate_on_step_one() {
        for &g0 in &[1e-6, 0.1, 1.0, 100.0] {
            let mut adam = AdamState::new();
            let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
            let g = Tensor::from_vec(&[1], vec![g0]).unwrap();
            adam.step(&mut [&mut p], &[g]).unwrap();
            assert!(p.data()[0].abs() <= 1e-3 * (1.0 + 1e-6), "g0 = {g0}");
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut adam = AdamState::new();
        let mut p = Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap();
        let g = Tensor::from_vec(&[3], vec![0.0; 3]).unwrap();
        assert!(adam.step(&mut [&mut p], &[g]).is_err());
    }
}
