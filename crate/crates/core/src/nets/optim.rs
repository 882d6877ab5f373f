use std::fmt;
use std::str::FromStr;

use super::Parameters;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerAlgorithm {
    Sgd,
    Adam,
}

impl FromStr for OptimizerAlgorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sgd" => Ok(OptimizerAlgorithm::Sgd),
            "adam" => Ok(OptimizerAlgorithm::Adam),
            other => Err(Error::InvalidKind(other.to_string())),
        }
    }
}

impl fmt::Display for OptimizerAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerAlgorithm::Sgd => "sgd",
            OptimizerAlgorithm::Adam => "adam",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: OptimizerAlgorithm,
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            algorithm: OptimizerAlgorithm::Adam,
            learning_rate,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            algorithm: OptimizerAlgorithm::Sgd,
            learning_rate,
        }
    }
}

/// First-order optimizer with per-parameter Adam moments.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, params: &Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().map(|(_, t)| vec![0.0; t.numel()]).collect();
        OptimizerState {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn config(&self) -> OptimizerConfig {
        self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored on `params`, then clears
    /// them.
    pub fn step(&mut self, params: &mut Parameters) -> Result<()> {
        // Validate before mutating anything.
        for (name, t) in params.tensors() {
            if t.grad().is_none() {
                return Err(Error::MissingGradient(name));
            }
        }
        if self.first.len() != params.tensors().count() {
            return Err(Error::Config("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let lr = self.config.learning_rate;
        let t = self.step as i32;
        let bias1 = 1.0 - ADAM_BETA1.powi(t);
        let bias2 = 1.0 - ADAM_BETA2.powi(t);
        for (k, (_, tensor)) in params.tensors_mut().enumerate() {
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            match self.config.algorithm {
                OptimizerAlgorithm::Sgd => {
                    for (p, g) in data.iter_mut().zip(&grad) {
                        *p -= lr * g;
                    }
                }
                OptimizerAlgorithm::Adam => {
                    let (m, v) = (&mut self.first[k], &mut self.second[k]);
                    for i in 0..data.len() {
                        let g = grad[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
            }
            tensor.clear_grad();
        }
        Ok(())
    }
}
