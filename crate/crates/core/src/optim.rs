//! SGD and rectified-Adam parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which update rule an [`Optimizer`] applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    RAdam,
}

/// Hyper-parameters for either optimizer.
///
/// `beta1`/`beta2` follow the rectified-Adam defaults used by the training
/// recipes here (0.94 / 0.98). These are unusual next to the common
/// 0.9 / 0.999; both are accepted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Momentum for SGD; first-moment decay for RAdam.
    pub momentum: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate: 1e-3,
            momentum: 0.0,
            beta2: 0.98,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::default()
        }
    }

    pub fn radam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::RAdam,
            learning_rate,
            momentum: 0.94,
            beta2: 0.98,
            weight_decay: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Contract("learning rate must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Contract("momentum/betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Contract("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mutable optimizer state: step counter plus per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    /// New state for parameters with the given shapes.
    pub fn new(config: OptimizerConfig, params: &[Tensor]) -> Result<Self> {
        config.validate()?;
        let first_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let second_moment = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Ok(Self {
            config,
            step_count: 0,
            first_moment,
            second_moment,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Apply one update in place. Increments the step counter by exactly 1.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::DimensionMismatch(format!(
                "optimizer saw {} params, {} grads, state holds {}",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (p, g) in params.iter().zip(grads.iter()) {
            if p.shape() != g.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "gradient shape {:?} does not match parameter shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step_count += 1;
        match self.config.kind {
            OptimizerKind::Sgd => self.sgd_step(params, grads),
            OptimizerKind::RAdam => self.radam_step(params, grads),
        }
        Ok(())
    }

    /// p <- p - lr * (g + wd * p), through the momentum buffer when
    /// momentum > 0.
    fn sgd_step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        let lr = self.config.learning_rate;
        let mu = self.config.momentum;
        let wd = self.config.weight_decay;
        for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            let mut data = p.data().to_vec();
            let buf = &mut self.first_moment[i];
            for (e, (pd, gd)) in data.iter_mut().zip(g.data().iter()).enumerate() {
                let eff = gd + wd * *pd;
                let dir = if mu > 0.0 {
                    buf[e] = mu * buf[e] + eff;
                    buf[e]
                } else {
                    eff
                };
                *pd -= lr * dir;
            }
            *p = Tensor::from_shape_vec(p.shape().to_vec(), data).expect("shape unchanged");
        }
    }

    /// Rectified Adam. Weight decay is folded into the gradient before the
    /// moment updates. While the variance-rectification term is undefined
    /// (rho <= 4, the first few steps) the update falls back to the
    /// bias-corrected first moment alone.
    fn radam_step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        let lr = self.config.learning_rate;
        let b1 = self.config.momentum;
        let b2 = self.config.beta2;
        let wd = self.config.weight_decay;
        let t = self.step_count as f64;
        let rho_inf = 2.0 / (1.0 - b2) - 1.0;
        let b1t = b1.powf(t);
        let b2t = b2.powf(t);
        let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
        let rect = if rho_t > 4.0 {
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };
        for (i, (p, g)) in params.iter_mut().zip(grads.iter()).enumerate() {
            let mut data = p.data().to_vec();
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (e, (pd, gd)) in data.iter_mut().zip(g.data().iter()).enumerate() {
                let eff = gd + wd * *pd;
                m[e] = b1 * m[e] + (1.0 - b1) * eff;
                v[e] = b2 * v[e] + (1.0 - b2) * eff * eff;
                let m_hat = m[e] / (1.0 - b1t);
                let delta = match rect {
                    Some(r) => {
                        let v_hat = (v[e] / (1.0 - b2t)).sqrt();
                        r * m_hat / (v_hat + ADAM_EPS)
                    }
                    None => m_hat,
                };
                *pd -= lr * delta;
            }
            *p = Tensor::from_shape_vec(p.shape().to_vec(), data).expect("shape unchanged");
        }
    }
}
