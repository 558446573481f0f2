use crate::error::{Error, Result};
use crate::par;

use super::Tensor4;

pub const BN_EPSILON: f64 = 1e-5;

/// Per-channel affine batch normalization, always in training mode: the
/// statistics come from the current image.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

/// Statistics captured by the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub normalized: Tensor4,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub input: Tensor4,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            eps: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, input: &Tensor4) -> Result<(Tensor4, BatchNormCache)> {
        if input.channels != self.channels() {
            return Err(Error::shape(format!(
                "batch norm has {} channels, input has {}",
                self.channels(),
                input.channels
            )));
        }
        let n = input.plane();
        let stats: Vec<(f64, f64)> = par::map_range(input.channels, |c| {
            let x = input.channel(c);
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            (mean, var)
        });
        let mut normalized = Tensor4::zeros(input.channels, input.height, input.width);
        let mut out = normalized.clone();
        par::for_each_chunk_mut(&mut normalized.data, n, |c, dst| {
            let (mean, var) = stats[c];
            let inv = 1.0 / (var + self.eps).sqrt();
            for (d, x) in dst.iter_mut().zip(input.channel(c)) {
                *d = (x - mean) * inv;
            }
        });
        par::for_each_chunk_mut(&mut out.data, n, |c, dst| {
            let (g, b) = (self.gamma[c], self.beta[c]);
            for (d, xh) in dst.iter_mut().zip(normalized.channel(c)) {
                *d = g * xh + b;
            }
        });
        let cache = BatchNormCache {
            mean: stats.iter().map(|s| s.0).collect(),
            var: stats.iter().map(|s| s.1).collect(),
            normalized,
        };
        Ok((out, cache))
    }

    /// Exact gradient, including the dependence of the batch mean and
    /// variance on the input.
    pub fn backward(&self, cache: &BatchNormCache, grad_out: &Tensor4) -> Result<BatchNormGrads> {
        cache.normalized.check_shape(grad_out, "batch norm backward")?;
        let n = grad_out.plane();
        let sums: Vec<(f64, f64)> = par::map_range(grad_out.channels, |c| {
            let g = grad_out.channel(c);
            let xh = cache.normalized.channel(c);
            let sum_g: f64 = g.iter().sum();
            let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
            (sum_g, sum_gx)
        });
        let mut input = Tensor4::zeros(grad_out.channels, grad_out.height, grad_out.width);
        par::for_each_chunk_mut(&mut input.data, n, |c, dst| {
            let (sum_g, sum_gx) = sums[c];
            let scale = self.gamma[c] / (cache.var[c] + self.eps).sqrt() / n as f64;
            let g = grad_out.channel(c);
            let xh = cache.normalized.channel(c);
            for ((d, gv), xv) in dst.iter_mut().zip(g).zip(xh) {
                *d = scale * (n as f64 * gv - sum_g - xv * sum_gx);
            }
        });
        Ok(BatchNormGrads {
            input,
            gamma: sums.iter().map(|s| s.1).collect(),
            beta: sums.iter().map(|s| s.0).collect(),
        })
    }
}
