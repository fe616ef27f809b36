use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{invalid, Error, Result};

/// Update rule applied by [`Optimizer::step`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    /// `p <- p - lr * g`
    GradientDescent,
    /// Adaptive moment estimation with bias correction.
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

/// Settings from which an [`Optimizer`] is built.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub method: Method,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            method: Method::adam(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    lr: f64,
    method: Method,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        if !(config.lr.is_finite() && config.lr > 0.0) {
            return invalid(format!("learning rate must be positive, got {}", config.lr));
        }
        Ok(Self {
            lr: config.lr,
            method: config.method,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn gradient_descent(lr: f64) -> Result<Self> {
        Self::new(OptimizerConfig {
            lr,
            method: Method::GradientDescent,
        })
    }

    pub fn adam(lr: f64) -> Result<Self> {
        Self::new(OptimizerConfig {
            lr,
            method: Method::adam(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. `names` labels parameters in diagnostics.
    ///
    /// Every gradient is validated before any parameter is touched, so a
    /// rejected step leaves parameters and moments unchanged.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], names: &[String]) -> Result<()> {
        if params.len() != grads.len() || names.len() != params.len() {
            return invalid(format!(
                "optimizer step: {} params, {} grads, {} names",
                params.len(),
                grads.len(),
                names.len()
            ));
        }
        for ((p, g), name) in params.iter().zip(grads).zip(names) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "optimizer step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter `{name}`")));
            }
        }
        if !self.first.is_empty() && self.first.len() != params.len() {
            return invalid("optimizer reused with a different parameter list");
        }
        self.steps += 1;
        match self.method {
            Method::GradientDescent => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *x -= self.lr * d;
                    }
                }
            }
            Method::Adam { beta1, beta2, eps } => {
                if self.first.is_empty() {
                    self.first = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
                    self.second = self.first.clone();
                }
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    let it = p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
                    for ((x, &d), (mi, vi)) in it {
                        *mi = beta1 * *mi + (1.0 - beta1) * d;
                        *vi = beta2 * *vi + (1.0 - beta2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *x -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        for (p, name) in params.iter().zip(names) {
            if !p.is_finite() {
                return Err(Error::NonFinite(format!("parameter `{name}` after update")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn plain_descent_step() {
        let mut opt = Optimizer::gradient_descent(0.1).unwrap();
        let mut p = Tensor::scalar(1.0).unwrap();
        let g = Tensor::scalar(0.5).unwrap();
        opt.step(&mut [&mut p], &[g], &names(1)).unwrap();
        assert!((p.item().unwrap() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut opt = Optimizer::adam(1e-3).unwrap();
        let mut p = Tensor::row(&[1.0, -2.0]).unwrap();
        let before = p.clone();
        opt.step(&mut [&mut p], &[Tensor::zeros(&[1, 2])], &names(1)).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::adam(1e-2).unwrap();
        let mut p = Tensor::row(&[1.0]).unwrap();
        opt.step(&mut [&mut p], &[Tensor::row(&[3.0]).unwrap()], &names(1)).unwrap();
        assert!((p.item().unwrap() - 0.99).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut opt = Optimizer::gradient_descent(0.1).unwrap();
        let mut p = Tensor::scalar(1.0).unwrap();
        let g = Tensor::from_parts(vec![1, 1], vec![f64::NAN]);
        let err = opt
            .step(&mut [&mut p], &[g], &["mixer.w1".to_string()])
            .unwrap_err();
        assert!(err.to_string().contains("mixer.w1"));
        assert_eq!(p.item().unwrap(), 1.0);
    }

    #[test]
    fn default_learning_rate() {
        assert_eq!(OptimizerConfig::default().lr, 3e-4);
    }
}
