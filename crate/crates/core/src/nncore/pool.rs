use crate::error::{Error, Result};

use super::Tensor4;

/// 2x2 / stride-2 max pooling. Odd sizes behave as if the last row/column
/// were edge-replicated, so the output is `ceil(h/2) x ceil(w/2)`.
///
/// Returns the pooled tensor and, for every output element, the flat index
/// of the input element that produced it. Ties go to the first element in
/// row-major block order.
pub fn maxpool2_forward(input: &Tensor4) -> (Tensor4, Vec<usize>) {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor4::zeros(c, oh, ow);
    let mut argmax = vec![0usize; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for x in 2 * ox..(2 * ox + 2).min(w) {
                        let idx = (ch * h + y) * w + x;
                        if best_idx == usize::MAX || input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                let o = (ch * oh + oy) * ow + ox;
                out.data[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward(
    input_shape: (usize, usize, usize),
    argmax: &[usize],
    grad_out: &Tensor4,
) -> Result<Tensor4> {
    if argmax.len() != grad_out.data.len() {
        return Err(Error::shape(format!(
            "maxpool backward: {} argmax entries for {} gradients",
            argmax.len(),
            grad_out.data.len()
        )));
    }
    let (c, h, w) = input_shape;
    let mut grad = Tensor4::zeros(c, h, w);
    for (&idx, &g) in argmax.iter().zip(&grad_out.data) {
        grad.data[idx] += g;
    }
    Ok(grad)
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(input: &Tensor4) -> Tensor4 {
    let (c, h, w) = input.shape();
    let mut out = Tensor4::zeros(c, 2 * h, 2 * w);
    for ch in 0..c {
        for y in 0..2 * h {
            for x in 0..2 * w {
                *out.at_mut(ch, y, x) = input.at(ch, y / 2, x / 2);
            }
        }
    }
    out
}

/// Sums each 2x2 block of `grad_out` back onto its source pixel.
pub fn upsample2_backward(grad_out: &Tensor4) -> Result<Tensor4> {
    let (c, h, w) = grad_out.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "upsample backward needs even dims, got {h}x{w}"
        )));
    }
    let mut grad = Tensor4::zeros(c, h / 2, w / 2);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                *grad.at_mut(ch, y / 2, x / 2) += grad_out.at(ch, y, x);
            }
        }
    }
    Ok(grad)
}
