//! Parameter-space optimizers over the model's flat parameter view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{GradBundle, MlpModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimKind {
    Sgd,
    Adam,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Per-model optimizer state; moment buffers mirror the flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimKind, param_count: usize) -> Self {
        let buf = match kind {
            OptimKind::Sgd => 0,
            OptimKind::Adam => param_count,
        };
        OptimizerState {
            kind,
            m: vec![0.0; buf],
            v: vec![0.0; buf],
            t: 0,
        }
    }

    pub fn kind(&self) -> OptimKind {
        self.kind
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update on a flat parameter vector.
    ///
    /// Adam: `m = b1 m + (1-b1) g`, `v = b2 v + (1-b2) g^2`, bias-corrected
    /// `mhat`, `vhat`, and `p -= lr * mhat / sqrt(vhat + eps)`.
    pub fn step_flat(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if lr <= 0.0 {
            return Err(Error::domain("learning rate must be positive"));
        }
        self.t += 1;
        match self.kind {
            OptimKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::shape(format!(
                        "optimizer state sized {} for {} parameters",
                        self.m.len(),
                        params.len()
                    )));
                }
                let bc1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] -= lr * mhat / (vhat + ADAM_EPS).sqrt();
                }
            }
        }
        Ok(())
    }

    /// One update of the model's parameters from a gradient bundle.
    pub fn step(&mut self, model: &mut MlpModel, grads: &GradBundle, lr: f64) -> Result<()> {
        let mut params = model.flatten();
        let g = grads.flat();
        self.step_flat(&mut params, &g, lr)?;
        model.unflatten(&params)
    }

    /// Same as `step` but ascends instead of descending.
    pub fn step_ascend(&mut self, model: &mut MlpModel, grads: &GradBundle, lr: f64) -> Result<()> {
        let mut params = model.flatten();
        let g: Vec<f64> = grads.flat().iter().map(|x| -x).collect();
        self.step_flat(&mut params, &g, lr)?;
        model.unflatten(&params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grads_leave_parameters_bit_identical() {
        for kind in [OptimKind::Sgd, OptimKind::Adam] {
            let mut state = OptimizerState::new(kind, 3);
            let mut params = vec![1.0, -2.0, 0.5];
            let before = params.clone();
            state.step_flat(&mut params, &[0.0, 0.0, 0.0], 0.1).unwrap();
            assert!(params
                .iter()
                .zip(&before)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn sgd_hand_case() {
        let mut state = OptimizerState::new(OptimKind::Sgd, 1);
        let mut params = vec![1.0];
        state.step_flat(&mut params, &[0.5], 0.1).unwrap();
        assert!((params[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_hand_recurrence() {
        // m = 0.1, v = 0.001, mhat = 1, vhat = 1:
        // theta = -lr / sqrt(1 + eps) = -0.000999999995...
        let mut state = OptimizerState::new(OptimKind::Adam, 1);
        let mut params = vec![0.0];
        state.step_flat(&mut params, &[1.0], 0.001).unwrap();
        let expected = -0.001 / (1.0_f64 + ADAM_EPS).sqrt();
        assert_eq!(params[0], expected);
        assert!((params[0] - (-0.000999999995)).abs() < 1e-12);
    }

    #[test]
    fn step_counter_increments() {
        let mut state = OptimizerState::new(OptimKind::Adam, 1);
        let mut params = vec![0.0];
        assert_eq!(state.step_count(), 0);
        state.step_flat(&mut params, &[1.0], 0.001).unwrap();
        state.step_flat(&mut params, &[1.0], 0.001).unwrap();
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn rejects_mismatched_gradient_length() {
        let mut state = OptimizerState::new(OptimKind::Adam, 2);
        let mut params = vec![0.0, 0.0];
        assert!(state.step_flat(&mut params, &[1.0], 0.001).is_err());
    }
}
