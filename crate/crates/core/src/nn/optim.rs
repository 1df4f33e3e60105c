use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self::with_betas(num_params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(num_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; num_params], v: vec![0.0; num_params], step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. Non-finite gradients abort the step and leave everything untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteDetected("gradient".into()));
        }
        self.step += 1;
        let t = self.step as f64;
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Exponential moving average of a parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmaShadow {
    pub beta: f64,
    shadow: Vec<f64>,
}

impl EmaShadow {
    pub fn new(live: &[f64], beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("EMA factor {beta} outside [0, 1]")));
        }
        Ok(Self { beta, shadow: live.to_vec() })
    }

    pub fn params(&self) -> &[f64] {
        &self.shadow
    }

    /// `shadow <- beta * shadow + (1 - beta) * live`.
    pub fn update(&mut self, live: &[f64]) -> Result<()> {
        if live.len() != self.shadow.len() {
            return Err(Error::InvalidArgument("EMA shape differs from live parameters".into()));
        }
        if live.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteDetected("live parameters".into()));
        }
        if self.beta == 0.0 {
            self.shadow.copy_from_slice(live);
        } else if self.beta < 1.0 {
            let b = self.beta;
            for (s, l) in self.shadow.iter_mut().zip(live) {
                *s = b * *s + (1.0 - b) * l;
            }
        }
        Ok(())
    }
}
