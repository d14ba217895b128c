//! Adaptive-moment (Adam) parameter updates.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig::new(1e-3, 0.9, 0.999)
    }
}

/// Adam state for an ordered list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &[Tensor]) -> Self {
        Adam {
            cfg,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.first.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bias1 = 1.0 - beta1.powi(self.steps as i32);
        let bias2 = 1.0 - beta2.powi(self.steps as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape mismatch for parameter {i}");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
