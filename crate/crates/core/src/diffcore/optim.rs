use super::Tensor;
use crate::error::{Error, Result};

/// Gradient descent with heavy-ball momentum: `v ← μv + g`, `θ ← θ - lr·v`.
#[derive(Clone, Debug)]
pub struct Momentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::config(format!("learning rate must be >= 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Momentum {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if p.shape() != g.shape() || v.len() != g.numel() {
                return Err(Error::contract("parameter and gradient shapes differ"));
            }
            for ((x, &d), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + d;
                *x -= self.lr * *vel;
            }
        }
        Ok(())
    }
}
