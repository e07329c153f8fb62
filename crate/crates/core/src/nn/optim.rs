//! SGD (with momentum and weight decay) and Adam, both mask-aware.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{FeedforwardClassifier, Gradients, TrainableMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_epsilon")]
    pub adam_epsilon: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_epsilon(),
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..OptimizerConfig::sgd(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Argument("learning_rate must be > 0".into()));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Argument(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_epsilon.is_finite() && self.adam_epsilon > 0.0) {
            return Err(Error::Argument("adam_epsilon must be > 0".into()));
        }
        if !(self.momentum.is_finite() && self.momentum >= 0.0) || self.momentum >= 1.0 {
            return Err(Error::Argument("momentum must lie in [0, 1)".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Argument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct TensorState {
    /// Momentum buffer for SGD, first moment for Adam.
    m: Vec<f64>,
    /// Second moment (Adam only).
    v: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerState {
    weights: TensorState,
    biases: TensorState,
}

/// Stateful optimizer bound to one model shape. Parameters whose mask flag is
/// off are skipped entirely: no gradient, no weight decay, no state update,
/// so frozen tensors stay bit-identical across arbitrarily many steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: Option<Vec<LayerState>>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: None,
            t: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    fn ensure_state(&mut self, model: &FeedforwardClassifier) {
        if self.state.is_none() {
            self.state = Some(
                model
                    .layers()
                    .iter()
                    .map(|l| LayerState {
                        weights: TensorState {
                            m: vec![0.0; l.out_dim() * l.in_dim()],
                            v: vec![0.0; l.out_dim() * l.in_dim()],
                        },
                        biases: TensorState {
                            m: vec![0.0; l.out_dim()],
                            v: vec![0.0; l.out_dim()],
                        },
                    })
                    .collect(),
            );
        }
    }

    pub fn step(
        &mut self,
        model: &mut FeedforwardClassifier,
        grads: &Gradients,
        mask: &TrainableMask,
    ) -> Result<()> {
        if grads.layers.len() != model.num_layers() || mask.layers.len() != model.num_layers() {
            return Err(Error::Shape(
                "gradient/mask layer count does not match the model".into(),
            ));
        }
        for (l, layer) in model.layers().iter().enumerate() {
            let g = &grads.layers[l];
            if g.weights.rows() != layer.out_dim()
                || g.weights.cols() != layer.in_dim()
                || g.biases.len() != layer.out_dim()
            {
                return Err(Error::Shape(format!(
                    "gradient shape mismatch at layer {l}"
                )));
            }
        }
        self.ensure_state(model);
        self.t += 1;
        let (t, cfg) = (self.t, self.config);
        let state = self.state.as_mut().expect("initialized above");

        for (l, layer) in model.layers_mut().iter_mut().enumerate() {
            let flags = mask.layers[l];
            if flags.weights {
                update_tensor(
                    layer.weights_mut().data_mut(),
                    grads.layers[l].weights.data(),
                    &mut state[l].weights,
                    &cfg,
                    t,
                );
            }
            if flags.biases {
                update_tensor(
                    layer.biases_mut(),
                    &grads.layers[l].biases,
                    &mut state[l].biases,
                    &cfg,
                    t,
                );
            }
        }
        model.bump_version();
        Ok(())
    }
}

fn update_tensor(params: &mut [f64], grads: &[f64], state: &mut TensorState, cfg: &OptimizerConfig, t: u64) {
    match cfg.kind {
        OptimizerKind::Sgd => {
            for i in 0..params.len() {
                let g = grads[i] + cfg.weight_decay * params[i];
                let buf = if cfg.momentum > 0.0 {
                    state.m[i] = cfg.momentum * state.m[i] + g;
                    state.m[i]
                } else {
                    g
                };
                params[i] -= cfg.learning_rate * buf;
            }
        }
        OptimizerKind::Adam => {
            let bc1 = 1.0 - cfg.adam_beta1.powi(t as i32);
            let bc2 = 1.0 - cfg.adam_beta2.powi(t as i32);
            for i in 0..params.len() {
                let g = grads[i] + cfg.weight_decay * params[i];
                state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * g;
                state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
            }
        }
    }
}
