use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers live on the parameter
/// blocks themselves.
#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config }
    }

    /// One update at step `t` (1-based). Gradients are zeroed afterwards.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&self, params: &mut ParamStore, lr: f64, t: u64) -> Result<()> {
        if t == 0 {
            return Err(Error::arg("adam step counter starts at 1"));
        }
        if let Some(b) = params
            .blocks()
            .iter()
            .find(|b| b.grad.iter().any(|g| !g.is_finite()))
        {
            return Err(Error::NonFiniteGradient(b.name.clone()));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        for block in params.blocks_mut() {
            for i in 0..block.values.len() {
                let g = block.grad[i];
                block.m[i] = beta1 * block.m[i] + (1.0 - beta1) * g;
                block.v[i] = beta2 * block.v[i] + (1.0 - beta2) * g * g;
                let m_hat = block.m[i] / bc1;
                let v_hat = block.v[i] / bc2;
                block.values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            block.zero_grad();
        }
        Ok(())
    }
}

/// `max(floor, base · factor^⌊epoch / every⌋)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecay {
    pub base: f64,
    pub factor: f64,
    pub every: usize,
    pub floor: f64,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay {
            base: 1e-3,
            factor: 0.7,
            every: 90,
            floor: 5e-5,
        }
    }
}

impl StepDecay {
    pub fn lr(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.every.max(1)) as i32;
        (self.base * self.factor.powi(steps)).max(self.floor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParameterBlock;

    fn store_with(values: Vec<f64>, grads: Vec<f64>) -> ParamStore {
        let mut p = ParameterBlock::zeros("p", 1, values.len());
        p.values = values;
        p.grad = grads;
        let mut s = ParamStore::new();
        s.push(p);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = store_with(vec![1.0, -2.0], vec![0.0, 0.0]);
        Adam::default().step(&mut s, 1e-3, 1).unwrap();
        assert_eq!(s.blocks()[0].values, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store_with(vec![0.5], vec![1.0]);
        Adam::default().step(&mut s, 1e-3, 1).unwrap();
        // m_hat = 1, v_hat = 1 => delta = lr / (1 + eps)
        let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
        assert!((s.blocks()[0].values[0] - expected).abs() < 1e-15);
        assert_eq!(s.blocks()[0].grad, vec![0.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = store_with(vec![0.5], vec![f64::NAN]);
        let err = Adam::default().step(&mut s, 1e-3, 1).unwrap_err();
        assert!(err.to_string().contains("`p`"));
        assert_eq!(s.blocks()[0].values, vec![0.5]);
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let mut s = store_with(vec![0.1, 0.2, 0.3], vec![0.0; 3]);
            for t in 1..=20u64 {
                let g: Vec<f64> = s.blocks()[0].values.iter().map(|v| 2.0 * v - 0.05 * t as f64).collect();
                s.blocks_mut()[0].grad = g;
                Adam::default().step(&mut s, 1e-2, t).unwrap();
            }
            s.blocks()[0].values.clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn schedule_examples() {
        let s = StepDecay::default();
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(89), 1e-3);
        assert!((s.lr(90) - 7e-4).abs() < 1e-18);
        assert!((s.lr(180) - 4.9e-4).abs() < 1e-18);
        assert_eq!(s.lr(10_000), 5e-5);
    }
}
