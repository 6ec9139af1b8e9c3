use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with one moment pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update at the configured learning rate.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        let lr = self.config.lr;
        self.step_with_lr(params, grads, lr)
    }

    pub fn step_with_lr(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("adam: parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::vector(vec![1.5, -2.0])];
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p[0].data(), &[1.5, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [0.3, -7.0] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut adam = AdamState::new(cfg, &p);
            adam.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0].data()[0] - expected).abs() < 1e-15);
            assert!((p[0].data()[0] - (1.0 - cfg.lr * g.signum())).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_reference_trace_on_quadratic() {
        // f(θ) = 0.5·a·θ², gradient a·θ; reference recursion written out longhand.
        let a = 3.0;
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut p = vec![Tensor::scalar(2.0)];
        let mut adam = AdamState::new(cfg, &p);
        let (mut th, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=5 {
            let g = a * p[0].data()[0];
            adam.step(&mut p, &[Tensor::scalar(g)]).unwrap();
            let gr = a * th;
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            th -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0].data()[0] - th).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        assert!(matches!(adam.step(&mut p, &[Tensor::zeros(&[3])]), Err(Error::Shape(_))));
    }
}
