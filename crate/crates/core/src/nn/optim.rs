use crate::error::{Error, Result};
use crate::nn::model::{Gradients, ModelGraph};
use crate::tensor::{Real, Tensor};

pub const RMSPROP_DEFAULT_LR: f64 = 1e-3;
pub const RMSPROP_DEFAULT_RHO: f64 = 0.9;
pub const RMSPROP_DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    RmsProp { rho: f64, epsilon: f64 },
}

/// Optimizer with per-parameter state, created lazily on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Real = f32> {
    kind: OptimizerKind,
    learning_rate: f64,
    accumulators: Vec<Tensor<T>>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::invalid("optimizer", format!("learning rate must be positive, got {learning_rate}")));
        }
        if let OptimizerKind::RmsProp { rho, epsilon } = kind {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::invalid("optimizer", format!("rmsprop decay must lie in (0,1), got {rho}")));
            }
            if !(epsilon > 0.0) {
                return Err(Error::invalid("optimizer", "rmsprop epsilon must be positive"));
            }
        }
        Ok(Self {
            kind,
            learning_rate,
            accumulators: Vec::new(),
        })
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn rmsprop(learning_rate: f64) -> Result<Self> {
        Self::new(
            OptimizerKind::RmsProp {
                rho: RMSPROP_DEFAULT_RHO,
                epsilon: RMSPROP_DEFAULT_EPSILON,
            },
            learning_rate,
        )
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn accumulators(&self) -> &[Tensor<T>] {
        &self.accumulators
    }

    /// One update over aligned parameter/gradient lists.
    ///
    /// sgd: `p -= lr g`; rmsprop: `acc = rho acc + (1 - rho) g^2`, `p -= lr g / sqrt(acc + eps)`.
    pub fn step(&mut self, params: Vec<&mut Tensor<T>>, grads: &[&Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer_step", "parameter count", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("optimizer_step", "parameter size", p.len(), g.len()));
            }
        }
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (v, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *v = T::from_f64(v.to_f64() - lr * d.to_f64());
                    }
                }
            }
            OptimizerKind::RmsProp { rho, epsilon } => {
                if self.accumulators.is_empty() {
                    self.accumulators = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
                } else if self.accumulators.len() != grads.len() {
                    return Err(Error::shape("optimizer_step", "accumulator count", self.accumulators.len(), grads.len()));
                }
                for ((p, g), acc) in params.into_iter().zip(grads).zip(&mut self.accumulators) {
                    if acc.shape() != g.shape() {
                        return Err(Error::shape("optimizer_step", "accumulator size", acc.len(), g.len()));
                    }
                    for ((v, &d), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.data_mut()) {
                        let d = d.to_f64();
                        let na = rho * a.to_f64() + (1.0 - rho) * d * d;
                        *a = T::from_f64(na);
                        *v = T::from_f64(v.to_f64() - lr * d / (na + epsilon).sqrt());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut ModelGraph<T>, grads: &Gradients<T>) -> Result<()> {
        let g = grads.tensors();
        self.step(model.params_mut(), &g)
    }
}
