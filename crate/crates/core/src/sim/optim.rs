//! SGD with heavy-ball momentum.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Learning-rate decay over epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrDecay {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last epoch.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    /// `None` picks the default for the model kind.
    pub lr: Option<f64>,
    pub momentum: f64,
    /// Rescales the gradient when its L2 norm exceeds this.
    pub grad_clip: Option<f64>,
    pub decay: LrDecay,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: None,
            momentum: 0.9,
            grad_clip: None,
            decay: LrDecay::Constant,
        }
    }
}

/// Learning rate for epoch `j` of `n`.
pub fn epoch_lr(base: f64, decay: LrDecay, j: usize, n: usize) -> f64 {
    match decay {
        LrDecay::Constant => base,
        LrDecay::Cosine => {
            let frac = if n <= 1 { 0.0 } else { j as f64 / n as f64 };
            0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * frac))
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(config_err("learning rate must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(config_err("momentum must lie in [0, 1)"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(config_err("grad_clip must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: Option<f64>,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, grad_clip: Option<f64>, n_params: usize) -> Self {
        Self {
            lr,
            momentum,
            grad_clip,
            velocity: vec![0.0; n_params],
        }
    }

    /// `v <- momentum * v + g; params <- params - lr * v`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::AnchorMismatch {
                expected: self.velocity.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let scale = match self.grad_clip {
            Some(c) => {
                let norm = libm::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for ((p, v), g) in params.iter_mut().zip(self.velocity.iter_mut()).zip(grads) {
            *v = self.momentum * *v + scale * g;
            *p -= self.lr * *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut s = Sgd::new(0.1, 0.0, None, 2);
        let mut p = [1.0, -1.0];
        s.step(&mut p, &[1.0, 2.0]).unwrap();
        assert_eq!(p, [0.9, -1.2]);
    }

    #[test]
    fn momentum_accumulates() {
        let mut s = Sgd::new(1.0, 0.5, None, 1);
        let mut p = [0.0];
        s.step(&mut p, &[1.0]).unwrap();
        s.step(&mut p, &[1.0]).unwrap();
        assert_eq!(p, [-2.5]);
    }

    #[test]
    fn clip() {
        let mut s = Sgd::new(1.0, 0.0, Some(1.0), 2);
        let mut p = [0.0, 0.0];
        s.step(&mut p, &[3.0, 4.0]).unwrap();
        assert!((p[0] + 0.6).abs() < 1e-12 && (p[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn cosine_decay() {
        assert_eq!(epoch_lr(0.2, LrDecay::Cosine, 0, 10), 0.2);
        assert!((epoch_lr(0.2, LrDecay::Cosine, 5, 10) - 0.1).abs() < 1e-15);
        assert!(epoch_lr(0.2, LrDecay::Cosine, 9, 10) > 0.0);
        assert_eq!(epoch_lr(0.2, LrDecay::Constant, 9, 10), 0.2);
    }

    #[test]
    fn rejects_non_finite() {
        let mut s = Sgd::new(0.1, 0.9, None, 1);
        assert_eq!(s.step(&mut [0.0], &[f64::NAN]), Err(Error::NonFinite("gradient")));
    }
}
