use serde::{Deserialize, Serialize};

use super::tensor::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

/// Adam moments over the flattened parameter layout.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Self {
        AdamState {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Clips `grads` to the global norm, then applies one bias-corrected
    /// Adam step. Fails without touching `params` if any gradient is not
    /// finite.
    pub fn update<P: Parameters>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let flat: Vec<f64> = grads.flatten();
        if flat.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} parameters, gradient has {}",
                self.m.len(),
                flat.len()
            )));
        }
        let norm = flat.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };

        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        let mut i = 0;
        for t in params.tensors_mut() {
            for p in t.data_mut() {
                let g = flat[i] * scale;
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                let m_hat = self.m[i] / bc1;
                let v_hat = self.v[i] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
                i += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tensor::Tensor;

    fn scalar(x: f64) -> Vec<Tensor> {
        vec![Tensor::from_vec(&[1], vec![x]).unwrap()]
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::from_vec(&[3], vec![1.0, -2.0, 3.0]).unwrap()];
        let g = p.zeros_like();
        let mut adam = AdamState::new(AdamConfig::default(), 3);
        adam.update(&mut p, &g).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0, 3.0]);
        assert_eq!(adam.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let mut p = scalar(0.5);
        let mut adam = AdamState::new(AdamConfig::default(), 1);
        adam.update(&mut p, &scalar(1.0)).unwrap();
        let want = 0.5 - 1e-3 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - want).abs() < 1e-15);
        assert!((0.5 - p[0].data()[0] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn clipping_halves_large_gradients() {
        // norm 20 with clip 10: the first moment sees g/2
        let config = AdamConfig {
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
            lr: 1.0,
            clip_norm: Some(10.0),
        };
        let mut adam = AdamState::new(config, 2);
        let mut p = vec![Tensor::zeros(&[2])];
        let g = vec![Tensor::from_vec(&[2], vec![12.0, 16.0]).unwrap()];
        adam.update(&mut p, &g).unwrap();
        assert_eq!(adam.m, [6.0, 8.0]);
        assert_eq!(adam.v, [36.0, 64.0]);
    }

    #[test]
    fn non_finite_gradient_fails_fast() {
        let mut p = scalar(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), 1);
        assert!(adam.update(&mut p, &scalar(f64::NAN)).is_err());
        assert_eq!(p[0].data()[0], 1.0);
        assert_eq!(adam.step(), 0);
    }
}
