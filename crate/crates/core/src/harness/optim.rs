use crate::config::OptimizerConfig;
use crate::numerics::Tensor;
use crate::params::{ParamId, ParamStore};

/// Adam with bias-corrected first and second moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig, num_params: usize) -> Self {
        Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            first: vec![None; num_params],
            second: vec![None; num_params],
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// Applies one update. `grads` pairs parameter handles with their gradients;
    /// parameters not listed are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (id, grad) in grads {
            let slot = id.index();
            let m = self.first[slot].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let v = self.second[slot].get_or_insert_with(|| Tensor::zeros(grad.shape()));
            let p = store.get_mut(*id);
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let mut store = ParamStore::new();
        let id = store.add("w", "t", Tensor::row(&[0.1, -2.0, 3.5]));
        let before = store.clone();
        let cfg = OptimizerConfig {
            learning_rate: 0.0,
            ..OptimizerConfig::default()
        };
        let mut adam = Adam::new(&cfg, store.len());
        for _ in 0..50 {
            adam.step(&mut store, &[(id, Tensor::row(&[1.0, -3.0, 0.25]))]);
        }
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g and v̂ = g² on step one, so |Δ| = lr·|g|/(|g|+ε) ≈ lr
        let mut store = ParamStore::new();
        let id = store.add("w", "t", Tensor::row(&[1.0]));
        let mut adam = Adam::new(&OptimizerConfig::default(), 1);
        adam.step(&mut store, &[(id, Tensor::row(&[0.5]))]);
        let moved = 1.0 - store.get(id).data()[0];
        assert!((moved - 1e-3 * 0.5 / (0.5 + 1e-8)).abs() < 1e-15);
    }
}
