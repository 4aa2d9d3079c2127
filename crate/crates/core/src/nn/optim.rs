use serde::{Deserialize, Serialize};

use super::{Gradients, NnError, Parameterized};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Adam only.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    /// Adam at 1e-3: suited to small randomly initialised networks.
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    /// Adam with lr 5e-5, betas (0.9, 0.999): the fine-tuning setting for
    /// pretrained transformers.
    pub fn pretrained_finetune() -> Self {
        Self {
            learning_rate: 5e-5,
            ..Self::default()
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }
}

/// SGD or Adam over a flat parameter vector in `Parameterized::layers` order.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self, NnError> {
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(NnError::Config("learning rate must be positive"));
        }
        if config.kind == OptimizerKind::Adam {
            let OptimizerConfig {
                beta1,
                beta2,
                epsilon,
                ..
            } = config;
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
                return Err(NnError::Config("adam betas must lie in [0, 1) and epsilon > 0"));
            }
        }
        Ok(Self {
            config,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: 0,
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self, NnError> {
        Self::new(OptimizerConfig::sgd(learning_rate))
    }

    pub fn adam(learning_rate: f64) -> Result<Self, NnError> {
        Self::new(OptimizerConfig::adam(learning_rate))
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies `grads` to `model`, then clears `grads`. On non-finite or
    /// incongruent gradients nothing is modified.
    pub fn step<M: Parameterized + ?Sized>(
        &mut self,
        model: &mut M,
        grads: &mut Gradients,
    ) -> Result<(), NnError> {
        if !grads.is_congruent_with(&model.layers()) {
            return Err(NnError::Incongruent);
        }
        if !grads.is_finite() {
            return Err(NnError::NonFinite("gradients"));
        }
        let n = model.parameter_count();
        if self.first_moment.is_empty() {
            self.first_moment = vec![0.0; n];
            self.second_moment = vec![0.0; n];
        } else if self.first_moment.len() != n {
            return Err(NnError::Incongruent);
        }
        self.steps += 1;
        let lr = self.config.learning_rate;
        let params = model
            .layers_mut()
            .into_iter()
            .flat_map(|l| l.weight.data_mut().iter_mut().chain(l.bias.iter_mut()));
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.zip(grads.values()) {
                    *w -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let OptimizerConfig {
                    beta1,
                    beta2,
                    epsilon,
                    ..
                } = self.config;
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((w, g), m), v) in params
                    .zip(grads.values())
                    .zip(self.first_moment.iter_mut())
                    .zip(self.second_moment.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
            }
        }
        grads.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, DenseLayer, Matrix};

    fn scalar_layer(w: f64) -> DenseLayer {
        DenseLayer::new(Matrix::from_vec(1, 1, vec![w]).unwrap(), vec![0.0], Activation::Identity)
            .unwrap()
    }

    fn grad_for(layer: &DenseLayer, g: f64) -> Gradients {
        let mut grads = layer.zero_grads();
        grads.layers_mut()[0].weight.set(0, 0, g);
        grads
    }

    #[test]
    fn sgd_single_step() {
        let mut layer = scalar_layer(1.0);
        let mut opt = Optimizer::sgd(0.1).unwrap();
        let mut g = grad_for(&layer, 2.0);
        opt.step(&mut layer, &mut g).unwrap();
        assert!((layer.weight.get(0, 0) - 0.8).abs() < 1e-15);
        assert!(g.is_zero(), "step clears the gradients");
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut layer = scalar_layer(1.0);
        let mut opt = Optimizer::adam(1e-3).unwrap();
        let mut g = grad_for(&layer, 1.0);
        opt.step(&mut layer, &mut g).unwrap();
        let moved = 1.0 - layer.weight.get(0, 0);
        assert!((moved - 1e-3).abs() < 1e-10, "moved {moved}");
    }

    #[test]
    fn sgd_on_half_square_follows_geometric_recurrence() {
        // w_{t+1} = w_t − 0.1·w_t = 0.9·w_t
        let mut layer = scalar_layer(1.0);
        let mut opt = Optimizer::sgd(0.1).unwrap();
        for _ in 0..100 {
            let w = layer.weight.get(0, 0);
            let mut g = grad_for(&layer, w);
            opt.step(&mut layer, &mut g).unwrap();
        }
        let expected = 0.9f64.powi(100);
        assert!((layer.weight.get(0, 0) - expected).abs() < 1e-15 * 100.0);
    }

    #[test]
    fn nan_gradient_leaves_parameters_untouched() {
        let mut layer = scalar_layer(1.0);
        let mut opt = Optimizer::adam(1e-3).unwrap();
        let mut g = grad_for(&layer, f64::NAN);
        assert!(matches!(opt.step(&mut layer, &mut g), Err(NnError::NonFinite(_))));
        assert_eq!(layer.weight.get(0, 0), 1.0);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(Optimizer::sgd(0.0).is_err());
        assert!(Optimizer::new(OptimizerConfig {
            beta1: 1.0,
            ..OptimizerConfig::default()
        })
        .is_err());
    }

    #[test]
    fn finetune_defaults_remain_selectable() {
        let c = OptimizerConfig::pretrained_finetune();
        assert_eq!(c.learning_rate, 5e-5);
        assert_eq!(c.kind, OptimizerKind::Adam);
        assert_eq!((c.beta1, c.beta2), (0.9, 0.999));
    }
}
