use crate::error::{Error, Result};
use crate::par;

use super::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// Cross-correlation; weights stored `[out][in][k][k]`.
    Forward,
    /// Adjoint of [`ConvMode::Forward`]; weights stored `[in][out][k][k]`.
    Transposed,
}

/// Stride-1, same-padded convolution or transposed convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub mode: ConvMode,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor4,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, mode: ConvMode) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size {kernel} must be odd for same padding"
            )));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            mode,
            weight: vec![0.0; in_channels * out_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        })
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    pub fn fan_out(&self) -> usize {
        self.kernel * self.kernel * self.out_channels
    }

    fn check_input(&self, input: &Tensor4) -> Result<()> {
        if input.channels != self.in_channels {
            return Err(Error::shape(format!(
                "layer expects {} input channels, got {}",
                self.in_channels, input.channels
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        self.check_input(input)?;
        let mut out = match self.mode {
            ConvMode::Forward => correlate(input, &self.weight, self.out_channels, self.kernel),
            ConvMode::Transposed => {
                correlate_adjoint(input, &self.weight, self.out_channels, self.kernel)
            }
        };
        let plane = out.plane();
        for (o, b) in self.bias.iter().enumerate() {
            out.data[o * plane..(o + 1) * plane]
                .iter_mut()
                .for_each(|v| *v += b);
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4) -> Result<ConvGrads> {
        self.check_input(input)?;
        if grad_out.channels != self.out_channels
            || grad_out.height != input.height
            || grad_out.width != input.width
        {
            return Err(Error::shape(format!(
                "grad_out {:?} does not match layer output ({}, {}, {})",
                grad_out.shape(),
                self.out_channels,
                input.height,
                input.width
            )));
        }
        let (grad_input, weight) = match self.mode {
            ConvMode::Forward => (
                correlate_adjoint(grad_out, &self.weight, self.in_channels, self.kernel),
                weight_grad(input, grad_out, self.kernel),
            ),
            ConvMode::Transposed => (
                correlate(grad_out, &self.weight, self.in_channels, self.kernel),
                weight_grad(grad_out, input, self.kernel),
            ),
        };
        let bias = (0..self.out_channels)
            .map(|o| grad_out.channel(o).iter().sum())
            .collect();
        Ok(ConvGrads {
            input: grad_input,
            weight,
            bias,
        })
    }
}

/// Valid index ranges for a shift of `d` over an axis of length `n`:
/// destination `[lo, hi)` reads source `[lo + d, hi + d)`.
#[inline]
fn shifted_range(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).clamp(0, n as isize) as usize;
    (lo, hi.max(lo))
}

/// `out[o,y,x] = sum_{i,ky,kx} w[o,i,ky,kx] * in[i, y+ky-p, x+kx-p]`.
fn correlate(input: &Tensor4, weight: &[f64], out_channels: usize, k: usize) -> Tensor4 {
    let (cin, h, w) = input.shape();
    let p = (k / 2) as isize;
    let mut out = Tensor4::zeros(out_channels, h, w);
    par::for_each_chunk_mut(&mut out.data, h * w, |o, dst| {
        for i in 0..cin {
            let src = input.channel(i);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = shifted_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = shifted_range(w, dx);
                    let wt = weight[((o * cin + i) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s0 = (sy * w) as isize + x0 as isize + dx;
                        let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wt * sv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Adjoint of [`correlate`] for weights `[a][b][k][k]` mapping `b -> a`:
/// takes an `a`-channel tensor to a `b`-channel one.
fn correlate_adjoint(grad: &Tensor4, weight: &[f64], out_channels: usize, k: usize) -> Tensor4 {
    let (ca, h, w) = grad.shape();
    let cb = out_channels;
    let p = (k / 2) as isize;
    let mut out = Tensor4::zeros(cb, h, w);
    par::for_each_chunk_mut(&mut out.data, h * w, |b, dst| {
        for a in 0..ca {
            let src = grad.channel(a);
            for ky in 0..k {
                // dst[y'] += w * src[y' - dy]
                let dy = -(ky as isize - p);
                let (y0, y1) = shifted_range(h, dy);
                for kx in 0..k {
                    let dx = -(kx as isize - p);
                    let (x0, x1) = shifted_range(w, dx);
                    let wt = weight[((a * cb + b) * k + ky) * k + kx];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let d = &mut dst[y * w + x0..y * w + x1];
                        let s0 = (sy * w) as isize + x0 as isize + dx;
                        let s = &src[s0 as usize..s0 as usize + (x1 - x0)];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wt * sv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// `g[a,b,ky,kx] = sum_{y,x} grad[a,y,x] * input[b, y+ky-p, x+kx-p]`.
fn weight_grad(input: &Tensor4, grad: &Tensor4, k: usize) -> Vec<f64> {
    let (cb, h, w) = input.shape();
    let ca = grad.channels;
    let p = (k / 2) as isize;
    let mut out = vec![0.0; ca * cb * k * k];
    par::for_each_chunk_mut(&mut out, cb * k * k, |a, dst| {
        let g = grad.channel(a);
        for b in 0..cb {
            let src = input.channel(b);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = shifted_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = shifted_range(w, dx);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let gr = &g[y * w + x0..y * w + x1];
                        let s0 = ((sy * w) as isize + x0 as isize + dx) as usize;
                        let s = &src[s0..s0 + (x1 - x0)];
                        acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                    }
                    dst[(b * k + ky) * k + kx] = acc;
                }
            }
        }
    });
    out
}
