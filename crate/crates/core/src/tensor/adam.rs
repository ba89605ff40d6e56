use super::DiffTensor;
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Adam with bias correction. Moment buffers are keyed by the position of
/// each tensor in the sequence handed to [`Adam::step`], so callers must pass
/// the same tensors in the same order every step.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    steps: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.learning_rate > 0.0) || !config.learning_rate.is_finite() {
            return Err(invalid(format!(
                "learning rate must be positive, got {}",
                config.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(invalid(format!(
                "betas must lie in [0, 1), got ({}, {})",
                config.beta1, config.beta2
            )));
        }
        if !(config.epsilon > 0.0) {
            return Err(invalid("epsilon must be positive"));
        }
        Ok(Self {
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// Tensors with `requires_grad == false` are skipped entirely.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut DiffTensor>) {
        self.steps += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps);
        let c2 = 1.0 - beta2.powi(self.steps);
        for (slot, p) in params.into_iter().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            if self.first.len() <= slot {
                self.first.resize(slot + 1, Vec::new());
                self.second.resize(slot + 1, Vec::new());
            }
            let n = p.numel();
            let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
            if m.len() != n {
                *m = vec![0.0; n];
                *v = vec![0.0; n];
            }
            let grad = p.grad().to_vec();
            for (i, (w, g)) in p.values_mut().iter_mut().zip(&grad).enumerate() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_grad(w: &mut DiffTensor, center: f64) {
        let x = w.values()[0];
        w.grad_mut()[0] = 2.0 * (x - center);
    }

    #[test]
    fn single_step_descends() {
        let mut w = DiffTensor::scalar(1.0);
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.1)).unwrap();
        quadratic_grad(&mut w, 0.0);
        opt.step([&mut w]);
        assert!(w.values()[0] < 1.0);
        assert_eq!(w.grad(), &[0.0]);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut w = DiffTensor::new(&[3], vec![0.3, -1.0, 2.0]).unwrap();
        let before = w.clone();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        for _ in 0..5 {
            opt.step([&mut w]);
        }
        assert_eq!(w.values(), before.values());
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut w = DiffTensor::scalar(0.0);
        let mut opt = Adam::new(AdamConfig::with_learning_rate(0.05)).unwrap();
        for _ in 0..500 {
            quadratic_grad(&mut w, 3.0);
            opt.step([&mut w]);
        }
        assert!((w.values()[0] - 3.0).abs() < 0.01, "w = {}", w.values()[0]);
    }

    #[test]
    fn rejects_non_positive_learning_rate() {
        assert!(Adam::new(AdamConfig::with_learning_rate(0.0)).is_err());
        assert!(Adam::new(AdamConfig::with_learning_rate(-1e-3)).is_err());
    }

    #[test]
    fn frozen_tensors_are_untouched() {
        let mut a = DiffTensor::scalar(1.0);
        let mut b = DiffTensor::scalar(1.0);
        b.set_requires_grad(false);
        a.grad_mut()[0] = 1.0;
        b.grad_mut()[0] = 1.0;
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step([&mut a, &mut b]);
        assert!(a.values()[0] < 1.0);
        assert_eq!(b.values()[0].to_bits(), 1.0f64.to_bits());
    }
}
