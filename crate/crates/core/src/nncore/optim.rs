use crate::error::{Error, Result};

/// Gradient descent with classical momentum:
/// `v <- m * v - lr * g; p <- p + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdMomentum {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {lr} must be > 0")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum {momentum} must lie in [0, 1)"
            )));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Updates `params` in place. Velocity buffers are created lazily on the
    /// first call and must keep the same shapes afterwards.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameter tensors, {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::shape("optimizer state does not match parameters"));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocity) {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(Error::shape(format!(
                    "parameter of length {} with gradient {} and velocity {}",
                    p.len(),
                    g.len(),
                    v.len()
                )));
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum * *vi - self.lr * gi;
                *pi += *vi;
            }
        }
        Ok(())
    }
}
