use crate::error::{Error, Result};

use super::Tensor4;

/// Mean per-pixel softmax cross-entropy over the channel axis.
///
/// Returns the loss and its gradient `(softmax - onehot) / pixels`.
pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[usize]) -> Result<(f64, Tensor4)> {
    let (p, h, w) = logits.shape();
    let n = h * w;
    if labels.len() != n {
        return Err(Error::shape(format!(
            "{} labels for {h}x{w} logits",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= p) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: p,
        });
    }
    let mut grad = Tensor4::zeros(p, h, w);
    let mut total = 0.0;
    let inv_n = 1.0 / n as f64;
    let mut probs = vec![0.0; p];
    for (px, &label) in labels.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for c in 0..p {
            max = max.max(logits.data[c * n + px]);
        }
        let mut z = 0.0;
        for (c, pr) in probs.iter_mut().enumerate() {
            *pr = (logits.data[c * n + px] - max).exp();
            z += *pr;
        }
        total += z.ln() - (logits.data[label * n + px] - max);
        for (c, pr) in probs.iter().enumerate() {
            let onehot = if c == label { 1.0 } else { 0.0 };
            grad.data[c * n + px] = (pr / z - onehot) * inv_n;
        }
    }
    Ok((total * inv_n, grad))
}
