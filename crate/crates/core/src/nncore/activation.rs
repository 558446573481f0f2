use crate::error::Result;

use super::Tensor4;

pub fn relu_forward(input: &Tensor4) -> Tensor4 {
    Tensor4 {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Passes gradient where the forward input was strictly positive; the
/// subgradient at zero is zero.
pub fn relu_backward(input: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    input.check_shape(grad_out, "relu backward")?;
    Ok(Tensor4 {
        channels: input.channels,
        height: input.height,
        width: input.width,
        data: input
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    })
}
