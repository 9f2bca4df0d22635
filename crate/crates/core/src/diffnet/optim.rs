use serde::{Deserialize, Serialize};

use super::DiffNet;
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Method {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Method {
    pub fn adam() -> Self {
        Method::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Linear decay of the learning rate to `final_fraction · lr` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anneal {
    pub total_steps: u64,
    pub final_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub lr: f64,
    #[serde(default)]
    pub anneal: Option<Anneal>,
    /// Gradients with a larger L2 norm are rescaled to this norm.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            method: Method::Sgd,
            lr,
            anneal: None,
            max_grad_norm: None,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            method: Method::adam(),
            lr,
            anneal: None,
            max_grad_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Self {
        let moments = match config.method {
            Method::Sgd => 0,
            Method::Adam { .. } => param_count,
        };
        Self {
            config,
            step_count: 0,
            first_moment: vec![0.0; moments],
            second_moment: vec![0.0; moments],
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self.config.anneal {
            Some(a) if a.total_steps > 0 => {
                let frac = (self.step_count as f64 / a.total_steps as f64).min(1.0);
                self.config.lr * (1.0 - frac * (1.0 - a.final_fraction))
            }
            _ => self.config.lr,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Applies one descent step. A non-finite gradient is rejected and leaves
    /// both the network and the optimiser state untouched.
    pub fn step(&mut self, net: &mut DiffNet, grad: &[f64]) -> Result<()> {
        let n = net.param_count();
        if grad.len() != n {
            return Err(Error::dim("optimizer gradient", n, grad.len()));
        }
        ensure_finite(grad, || format!("gradient at optimizer step {}", self.step_count))?;
        let mut g = grad.to_vec();
        if let Some(max_norm) = self.config.max_grad_norm {
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
        let lr = self.learning_rate();
        let mut params = net.params();
        match self.config.method {
            Method::Sgd => {
                for (p, gi) in params.iter_mut().zip(&g) {
                    *p -= lr * gi;
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                if self.first_moment.len() != n {
                    return Err(Error::dim("optimizer state", self.first_moment.len(), n));
                }
                let t = (self.step_count + 1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..n {
                    self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g[i];
                    self.second_moment[i] =
                        beta2 * self.second_moment[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = self.first_moment[i] / c1;
                    let v_hat = self.second_moment[i] / c2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        self.step_count += 1;
        net.set_params(&params)
    }
}
