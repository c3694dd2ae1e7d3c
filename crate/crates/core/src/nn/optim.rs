use serde::{Deserialize, Serialize};

use super::{ModelParams, TrainConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for one network. Adam moments are allocated lazily on the
/// first step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Option<ModelParams>,
    pub second_moment: Option<ModelParams>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn adam_update(
    theta: &mut f64,
    g: f64,
    m: &mut f64,
    v: &mut f64,
    lr: f64,
    adam: &AdamParams,
    c1: f64,
    c2: f64,
) {
    *m = adam.beta1 * *m + (1.0 - adam.beta1) * g;
    *v = adam.beta2 * *v + (1.0 - adam.beta2) * g * g;
    let m_hat = *m / c1;
    let v_hat = *v / c2;
    *theta -= lr * m_hat / (v_hat.sqrt() + adam.eps);
}

/// Applies one update to `params` in place.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::Shape(
            "gradient shape differs from parameters".into(),
        ));
    }
    state.step += 1;
    let lr = cfg.learning_rate;
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (p, g) in params.values_mut().zip(grads.values()) {
                *p -= lr * g;
            }
        }
        OptimizerKind::Adam => {
            let m = state
                .first_moment
                .get_or_insert_with(|| params.zeros_like());
            let v = state
                .second_moment
                .get_or_insert_with(|| params.zeros_like());
            if !m.same_shape(params) || !v.same_shape(params) {
                return Err(Error::Shape(
                    "optimizer state shape differs from parameters".into(),
                ));
            }
            let t = state.step as i32;
            let c1 = 1.0 - cfg.adam.beta1.powi(t);
            let c2 = 1.0 - cfg.adam.beta2.powi(t);
            for (((p, g), mi), vi) in params
                .values_mut()
                .zip(grads.values())
                .zip(m.values_mut())
                .zip(v.values_mut())
            {
                adam_update(p, g, mi, vi, lr, &cfg.adam, c1, c2);
            }
        }
    }
    Ok(())
}

/// Optimizer for a single learnable scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarOptimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub adam: AdamParams,
    #[serde(skip)]
    step: u64,
    #[serde(skip)]
    m: f64,
    #[serde(skip)]
    v: f64,
}

impl ScalarOptimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            adam: AdamParams::default(),
            step: 0,
            m: 0.0,
            v: 0.0,
        }
    }

    pub fn step(&mut self, theta: &mut f64, g: f64) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => *theta -= self.learning_rate * g,
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.adam.beta1.powi(t);
                let c2 = 1.0 - self.adam.beta2.powi(t);
                let adam = self.adam;
                adam_update(
                    theta,
                    g,
                    &mut self.m,
                    &mut self.v,
                    self.learning_rate,
                    &adam,
                    c1,
                    c2,
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn scalar_net(w: f64) -> ModelParams {
        ModelParams::new(vec![Layer {
            n_in: 1,
            n_out: 1,
            weights: vec![w],
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn cfg(kind: OptimizerKind, lr: f64) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            optimizer: kind,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn sgd_step() {
        let mut p = scalar_net(1.0);
        let mut g = scalar_net(2.0);
        g.layers[0].bias[0] = 0.0;
        let mut st = OptimizerState::new();
        optimizer_step(&mut p, &g, &mut st, &cfg(OptimizerKind::Sgd, 0.1)).unwrap();
        assert!((p.layers[0].weights[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = scalar_net(1.5);
        let c = cfg(OptimizerKind::Adam, 0.01);
        let mut st = OptimizerState::new();
        optimizer_step(&mut p, &scalar_net(1.0), &mut st, &c).unwrap();
        let before = p.clone();
        let m_before = st.first_moment.clone().unwrap().layers[0].weights[0];
        let v_before = st.second_moment.clone().unwrap().layers[0].weights[0];
        let zero = p.zeros_like();
        optimizer_step(&mut p, &zero, &mut st, &c).unwrap();
        let m_after = st.first_moment.as_ref().unwrap().layers[0].weights[0];
        let v_after = st.second_moment.as_ref().unwrap().layers[0].weights[0];
        assert_eq!(m_after, 0.9 * m_before);
        assert_eq!(v_after, 0.999 * v_before);
        // a decayed nonzero first moment still moves the weight; a fresh state does not
        assert_ne!(p, before);
        let mut fresh = before.clone();
        optimizer_step(&mut fresh, &zero, &mut OptimizerState::new(), &c).unwrap();
        assert_eq!(fresh, before);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        let mut p = scalar_net(0.0);
        let mut g = scalar_net(1.0);
        g.layers[0].bias[0] = 1.0;
        let mut st = OptimizerState::new();
        optimizer_step(&mut p, &g, &mut st, &cfg(OptimizerKind::Adam, 1e-3)).unwrap();
        // m_hat = 1, v_hat = 1 => update = lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.layers[0].weights[0] - expected).abs() < 1e-15);
        assert!((p.layers[0].bias[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = scalar_net(0.0);
        let g = ModelParams::new(vec![Layer::zeros(2, 1, Activation::Identity)]).unwrap();
        assert!(optimizer_step(
            &mut p,
            &g,
            &mut OptimizerState::new(),
            &TrainConfig::default()
        )
        .is_err());
    }

    #[test]
    fn scalar_sgd_matches_rule() {
        let mut opt = ScalarOptimizer::new(OptimizerKind::Sgd, 0.1);
        let mut beta = 1.0;
        opt.step(&mut beta, 0.4);
        assert!((beta - 0.96).abs() < 1e-15);
    }
}
